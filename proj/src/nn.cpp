#include "nvp/nn.hpp"

#include <cmath>

namespace nvp {

Conv2d::Conv2d(const std::string& name, int kernel, int64_t in_ch, int64_t out_ch,
               bool weight_norm, Rng& init_rng, bool zero_init)
    : weight_norm_(weight_norm) {
    if (kernel < 1 || kernel % 2 == 0) {
        throw ShapeError("conv kernel extent must be odd and positive, got " +
                         std::to_string(kernel));
    }
    const Shape kshape{kernel, kernel, in_ch, out_ch};
    if (zero_init) {
        v_ = Parameter(name + (weight_norm_ ? ".v" : ".w"), Tensor(kshape));
    } else {
        const double stddev = std::sqrt(2.0 / static_cast<double>(kernel * kernel * in_ch));
        v_ = Parameter(name + (weight_norm_ ? ".v" : ".w"),
                       init_rng.normal_tensor(kshape, stddev));
    }
    if (weight_norm_) {
        if (zero_init) {
            throw ShapeError("weight-normalized conv cannot be zero-initialized");
        }
        g_ = Parameter(name + ".g", Tensor::full({out_ch}, 1));
    }
    b_ = Parameter(name + ".b", Tensor({out_ch}));
}

Var Conv2d::forward(FlowCtx& ctx, Var x) {
    Var w = ctx.param(v_);
    if (weight_norm_) w = weight_norm(w, ctx.param(g_));
    return conv2d(x, w, ctx.param(b_));
}

void Conv2d::collect_params(std::vector<Parameter*>& out) {
    out.push_back(&v_);
    if (weight_norm_) out.push_back(&g_);
    out.push_back(&b_);
}

BatchNorm::BatchNorm(std::string name, int64_t channels, real_t eps, real_t momentum)
    : name_(std::move(name)),
      channels_(channels),
      eps_(eps),
      momentum_(momentum),
      running_mean_({channels}),
      running_var_(Tensor::full({channels}, 1)) {
    if (!(eps > 0)) throw DomainError("batch norm epsilon must be positive");
    if (momentum < 0 || momentum >= 1) {
        throw DomainError("batch norm momentum must lie in [0,1)");
    }
}

Var BatchNorm::forward(FlowCtx& ctx, Var x, Var* log_det) {
    GradTape& t = ctx.tape;
    const Tensor& xv = t.value(x);
    if (xv.rank() != 4 || xv.dim(3) != channels_) {
        throw ShapeError("batch norm '" + name_ + "' expects [N,H,W," +
                         std::to_string(channels_) + "], got " + shape_str(xv.shape()));
    }
    const int64_t n = xv.dim(0);
    const int64_t hw = xv.dim(1) * xv.dim(2);

    Var m_use, v_use;
    if (ctx.mode == RunMode::eval) {
        m_use = t.constant(running_mean_);
        v_use = t.constant(running_var_);
    } else {
        if (n < 2) {
            throw DomainError("batch norm '" + name_ +
                              "': train mode requires batch size >= 2, got " + std::to_string(n));
        }
        Var mu_hat = channel_mean(x);
        Var diff = sub(x, mu_hat);
        Var var_hat = channel_mean(mul(diff, diff));
        if (!t.value(mu_hat).all_finite() || !t.value(var_hat).all_finite()) {
            throw DivergenceError("batch norm '" + name_ + "': non-finite batch statistics");
        }
        if (momentum_ > 0) {
            // Lagged statistics; only the current-batch term carries gradient.
            Tensor lag_m(running_mean_.shape());
            Tensor lag_v(running_var_.shape());
            for (int64_t k = 0; k < channels_; ++k) {
                lag_m[k] = momentum_ * running_mean_[k];
                lag_v[k] = momentum_ * running_var_[k];
            }
            m_use = add(mul_scalar(mu_hat, 1 - momentum_), t.constant(std::move(lag_m)));
            v_use = add(mul_scalar(var_hat, 1 - momentum_), t.constant(std::move(lag_v)));
        } else {
            m_use = mu_hat;
            v_use = var_hat;
        }
        if (ctx.update_stats) {
            running_mean_ = t.value(m_use);
            running_var_ = t.value(v_use);
        }
    }

    Var inv_std = rsqrt(add_scalar(v_use, eps_));
    Var y = mul(sub(x, m_use), inv_std);
    if (log_det) {
        Var per_channel = log(add_scalar(v_use, eps_));
        Var ld = mul_scalar(sum(per_channel), real_t(-0.5) * static_cast<real_t>(hw));
        *log_det = broadcast_to_samples(ld, n);
    }
    return y;
}

Tensor BatchNorm::inverse(const Tensor& y) const {
    if (y.rank() != 4 && y.rank() != 3) {
        throw ShapeError("batch norm inverse expects [N,H,W,C] or [H,W,C]");
    }
    const int64_t c = y.dim(y.rank() - 1);
    if (c != channels_) {
        throw ShapeError("batch norm '" + name_ + "' inverse channel mismatch: got " +
                         shape_str(y.shape()));
    }
    Tensor out(y.shape());
    for (int64_t i = 0; i < y.numel(); ++i) {
        const int64_t k = i % c;
        out[i] = y[i] * std::sqrt(running_var_[k] + eps_) + running_mean_[k];
    }
    return out;
}

}  // namespace nvp
