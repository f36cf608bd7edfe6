#pragma once

#include <optional>
#include <string>
#include <vector>

#include "nvp/autograd.hpp"
#include "nvp/random.hpp"

namespace nvp {

enum class RunMode { train, eval };

/// Execution context for one pass through the flow. Owns nothing; the tape
/// outlives the pass. update_stats may only be set in train mode; leaving it
/// off gives a pure function of (parameters, input), which the finite
/// difference oracles rely on.
struct FlowCtx {
    GradTape& tape;
    RunMode mode = RunMode::eval;
    bool update_stats = false;
    bool track_grads = true;
    std::optional<Var> attrs;  // [N,K] conditioning bits for conditional models

    Var param(Parameter& p) {
        return track_grads ? tape.watch(p) : tape.constant(p.value);
    }
};

/// Same-padding stride-1 convolution layer, optionally with the
/// direction/magnitude weight reparametrization.
class Conv2d {
public:
    Conv2d(const std::string& name, int kernel, int64_t in_ch, int64_t out_ch, bool weight_norm,
           Rng& init_rng, bool zero_init = false);

    Var forward(FlowCtx& ctx, Var x);
    void collect_params(std::vector<Parameter*>& out);
    Parameter* scale_param() { return weight_norm_ ? &g_ : nullptr; }

private:
    bool weight_norm_;
    Parameter v_;  // direction (or the plain kernel)
    Parameter g_;  // per-output-channel magnitude, weight-norm only
    Parameter b_;
};

/// Per-channel batch normalization with lagged running statistics
/// (moving average with momentum rho; rho = 0 gives plain batch statistics).
/// In train mode the normalizing statistics blend the frozen running values
/// with the current batch, and gradient flows only through the current-batch
/// part. Eval mode uses the running statistics alone, which makes the map a
/// fixed per-channel rescaling.
class BatchNorm {
public:
    BatchNorm(std::string name, int64_t channels, real_t eps, real_t momentum);

    // x is [N,H,W,C]. When log_det is non-null it receives the per-sample
    // log|det J| of the rescaling, -1/2 * sum over dims of log(var + eps).
    Var forward(FlowCtx& ctx, Var x, Var* log_det = nullptr);

    // Inverse of the eval-mode rescaling.
    Tensor inverse(const Tensor& y) const;

    const std::string& name() const { return name_; }
    Tensor& running_mean() { return running_mean_; }
    Tensor& running_var() { return running_var_; }
    const Tensor& running_mean() const { return running_mean_; }
    const Tensor& running_var() const { return running_var_; }
    real_t eps() const { return eps_; }
    real_t momentum() const { return momentum_; }
    void set_momentum(real_t m) { momentum_ = m; }
    int64_t channels() const { return channels_; }

private:
    std::string name_;
    int64_t channels_;
    real_t eps_;
    real_t momentum_;
    Tensor running_mean_;
    Tensor running_var_;
};

}  // namespace nvp
