#pragma once

#include <memory>

#include "nvp/conditioner.hpp"
#include "nvp/mask.hpp"

namespace nvp {

// Squeeze trades each 2x2 spatial block for 4x channels. Sub-pixel order is
// fixed as (top-left, top-right, bottom-left, bottom-right), each sub-pixel
// carrying its channels contiguously; unsqueeze is the exact inverse.
Tensor squeeze2x2(const Tensor& x);
Tensor unsqueeze2x2(const Tensor& x);
Var squeeze_op(Var x);
Var unsqueeze_op(Var x);

/// Invertible transform exposing forward-with-log-det and inverse. forward is
/// differentiable through the tape in ctx; inverse works on plain tensors and
/// always uses eval-mode (running) statistics, so inverse(forward(x)) is the
/// identity whenever forward also ran in eval mode.
class Bijection {
public:
    virtual ~Bijection() = default;

    // Returns (y, per-sample log|det J|).
    virtual std::pair<Var, Var> forward(FlowCtx& ctx, Var x) = 0;
    virtual Tensor inverse(const Tensor& y, const Tensor* attrs = nullptr) = 0;

    virtual void collect_params(std::vector<Parameter*>& out) { (void)out; }
    virtual void collect_norms(std::vector<BatchNorm*>& out) { (void)out; }
    virtual void collect_weight_scales(std::vector<Parameter*>& out) { (void)out; }
};

/// Affine coupling layer: pass-through positions (mask 1) are copied
/// bit-exactly, the rest are rescaled and shifted by the conditioner outputs
/// computed from the masked input.
class CouplingLayer : public Bijection {
public:
    CouplingLayer(std::string name, MaskKind kind, int parity, Shape data_shape,
                  std::unique_ptr<ConditionerNet> cond);

    std::pair<Var, Var> forward(FlowCtx& ctx, Var x) override;
    Tensor inverse(const Tensor& y, const Tensor* attrs = nullptr) override;

    void collect_params(std::vector<Parameter*>& out) override { cond_->collect_params(out); }
    void collect_norms(std::vector<BatchNorm*>& out) override { cond_->collect_norms(out); }
    void collect_weight_scales(std::vector<Parameter*>& out) override {
        cond_->collect_weight_scales(out);
    }

    const Mask& mask() const { return mask_; }
    const std::string& name() const { return name_; }
    ConditionerNet& conditioner() { return *cond_; }

private:
    // Mask for an arbitrary data shape; reuses the built pattern when the
    // shape matches, otherwise regenerates it (fully convolutional usage at
    // scaled spatial sizes).
    Mask mask_for(const Shape& shape) const;

    std::string name_;
    MaskKind kind_;
    int parity_;
    Shape data_shape_;  // [H,W,C] the layer was built for
    Mask mask_;
    std::unique_ptr<ConditionerNet> cond_;
};

/// Batch normalization as a bijection: a per-channel linear rescaling whose
/// Jacobian contributes -1/2 * sum over dims of log(var + eps) per sample.
class BatchNormBijection : public Bijection {
public:
    BatchNormBijection(std::string name, int64_t channels, real_t eps, real_t momentum)
        : bn_(std::move(name), channels, eps, momentum) {}

    std::pair<Var, Var> forward(FlowCtx& ctx, Var x) override {
        Var log_det;
        Var y = bn_.forward(ctx, x, &log_det);
        return {y, log_det};
    }

    Tensor inverse(const Tensor& y, const Tensor* = nullptr) override { return bn_.inverse(y); }

    void collect_norms(std::vector<BatchNorm*>& out) override { out.push_back(&bn_); }

    BatchNorm& norm() { return bn_; }

private:
    BatchNorm bn_;
};

/// Volume-preserving shape permutation (log-det identically zero).
class SqueezeBijection : public Bijection {
public:
    std::pair<Var, Var> forward(FlowCtx& ctx, Var x) override {
        Var y = squeeze_op(x);
        return {y, ctx.tape.constant(Tensor({ctx.tape.value(x).dim(0)}))};
    }
    Tensor inverse(const Tensor& y, const Tensor* = nullptr) override { return unsqueeze2x2(y); }
};

/// Sequential composition. Forward applies parts in order and sums their
/// log-dets in that same order; inverse applies part inverses in reverse.
class Composite : public Bijection {
public:
    Composite() = default;

    void push(std::unique_ptr<Bijection> b) { parts_.push_back(std::move(b)); }
    size_t size() const { return parts_.size(); }
    Bijection& part(size_t i) { return *parts_[i]; }

    std::pair<Var, Var> forward(FlowCtx& ctx, Var x) override;
    Tensor inverse(const Tensor& y, const Tensor* attrs = nullptr) override;

    void collect_params(std::vector<Parameter*>& out) override {
        for (auto& p : parts_) p->collect_params(out);
    }
    void collect_norms(std::vector<BatchNorm*>& out) override {
        for (auto& p : parts_) p->collect_norms(out);
    }
    void collect_weight_scales(std::vector<Parameter*>& out) override {
        for (auto& p : parts_) p->collect_weight_scales(out);
    }

private:
    std::vector<std::unique_ptr<Bijection>> parts_;
};

}  // namespace nvp
