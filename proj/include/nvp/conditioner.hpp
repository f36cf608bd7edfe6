#pragma once

#include <memory>
#include <utility>

#include "nvp/nn.hpp"

namespace nvp {

/// Computes the scale and translation fields (s, t) of a coupling layer from
/// the masked input. Outputs have the full data shape; values at pass-through
/// positions are ignored by the coupling transform.
class ConditionerNet {
public:
    virtual ~ConditionerNet() = default;
    virtual std::pair<Var, Var> forward(FlowCtx& ctx, Var masked_x) = 0;
    virtual void collect_params(std::vector<Parameter*>& out) { (void)out; }
    virtual void collect_norms(std::vector<BatchNorm*>& out) { (void)out; }
    virtual void collect_weight_scales(std::vector<Parameter*>& out) { (void)out; }
    virtual int64_t hidden_channels() const { return 0; }
};

struct ConditionerConfig {
    int64_t data_channels = 1;  // channels of the coupled tensor
    int64_t attr_channels = 0;  // conditioning feature maps appended to the input
    int64_t hidden = 8;
    int res_blocks = 1;
    int kernel = 3;
    real_t bn_eps = real_t(1e-5);
    real_t bn_momentum = real_t(0.99);
};

/// Residual convolutional conditioner with a shared trunk and two heads.
/// Residual block: [norm -> ReLU -> conv -> norm -> ReLU -> conv] + skip.
/// The s head is tanh multiplied by a learned per-channel scale; the t head
/// is affine. Both heads are zero-initialized so the enclosing coupling layer
/// starts as the identity.
class ResidualConditioner : public ConditionerNet {
public:
    ResidualConditioner(const std::string& name, const ConditionerConfig& cfg, Rng& init_rng);

    std::pair<Var, Var> forward(FlowCtx& ctx, Var masked_x) override;
    void collect_params(std::vector<Parameter*>& out) override;
    void collect_norms(std::vector<BatchNorm*>& out) override;

    // Weight-norm magnitudes plus the learned s-head scale: the parameter set
    // the L2 penalty targets. Disjoint from biases by construction.
    void collect_weight_scales(std::vector<Parameter*>& out) override;

    int64_t hidden_channels() const override { return cfg_.hidden; }

private:
    struct Block {
        BatchNorm bn1;
        Conv2d conv1;
        BatchNorm bn2;
        Conv2d conv2;
    };

    ConditionerConfig cfg_;
    Conv2d in_conv_;
    std::vector<Block> blocks_;
    BatchNorm out_bn_;
    Conv2d head_s_;
    Conv2d head_t_;
    Parameter s_scale_;
};

std::unique_ptr<ResidualConditioner> make_residual_conditioner(const std::string& name,
                                                               const ConditionerConfig& cfg,
                                                               Rng& init_rng);

}  // namespace nvp
