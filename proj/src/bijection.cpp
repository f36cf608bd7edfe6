#include "nvp/bijection.hpp"

#include <cmath>

namespace nvp {

// ---------------------------------------------------------------------------
// squeeze
// ---------------------------------------------------------------------------

namespace {

struct SqueezeDims {
    int64_t n, h, w, c;
    bool squeeze_batch;
};

SqueezeDims squeeze_dims(const Tensor& x, bool forward) {
    SqueezeDims d{};
    if (x.rank() == 3) {
        d = {1, x.dim(0), x.dim(1), x.dim(2), true};
    } else if (x.rank() == 4) {
        d = {x.dim(0), x.dim(1), x.dim(2), x.dim(3), false};
    } else {
        throw ShapeError("squeeze expects [H,W,C] or [N,H,W,C], got " + shape_str(x.shape()));
    }
    if (forward) {
        if (d.h % 2 != 0 || d.w % 2 != 0) {
            throw ShapeError("squeeze requires even spatial extents, got " +
                             shape_str(x.shape()));
        }
    } else {
        if (d.c % 4 != 0) {
            throw ShapeError("unsqueeze requires channels divisible by 4, got " +
                             shape_str(x.shape()));
        }
    }
    return d;
}

// out[n, i, j, k*c + ch] = x[n, 2i + k/2, 2j + k%2, ch], k in {TL,TR,BL,BR}
void squeeze_loop(const real_t* x, real_t* out, const SqueezeDims& d) {
    const int64_t ho = d.h / 2, wo = d.w / 2;
    for (int64_t n = 0; n < d.n; ++n) {
        for (int64_t i = 0; i < ho; ++i) {
            for (int64_t j = 0; j < wo; ++j) {
                real_t* op = out + ((n * ho + i) * wo + j) * 4 * d.c;
                for (int64_t k = 0; k < 4; ++k) {
                    const int64_t ii = 2 * i + k / 2;
                    const int64_t jj = 2 * j + k % 2;
                    const real_t* xp = x + ((n * d.h + ii) * d.w + jj) * d.c;
                    for (int64_t ch = 0; ch < d.c; ++ch) op[k * d.c + ch] = xp[ch];
                }
            }
        }
    }
}

void unsqueeze_loop(const real_t* x, real_t* out, const SqueezeDims& d) {
    // d describes the squeezed tensor [n, h, w, c] with c divisible by 4.
    const int64_t co = d.c / 4;
    const int64_t ho = d.h * 2, wo = d.w * 2;
    for (int64_t n = 0; n < d.n; ++n) {
        for (int64_t i = 0; i < d.h; ++i) {
            for (int64_t j = 0; j < d.w; ++j) {
                const real_t* xp = x + ((n * d.h + i) * d.w + j) * d.c;
                for (int64_t k = 0; k < 4; ++k) {
                    const int64_t ii = 2 * i + k / 2;
                    const int64_t jj = 2 * j + k % 2;
                    real_t* op = out + ((n * ho + ii) * wo + jj) * co;
                    for (int64_t ch = 0; ch < co; ++ch) op[ch] = xp[k * co + ch];
                }
            }
        }
    }
}

}  // namespace

Tensor squeeze2x2(const Tensor& x) {
    const SqueezeDims d = squeeze_dims(x, true);
    Tensor out = d.squeeze_batch ? Tensor({d.h / 2, d.w / 2, 4 * d.c})
                                 : Tensor({d.n, d.h / 2, d.w / 2, 4 * d.c});
    squeeze_loop(x.data(), out.data(), d);
    return out;
}

Tensor unsqueeze2x2(const Tensor& x) {
    const SqueezeDims d = squeeze_dims(x, false);
    Tensor out = d.squeeze_batch ? Tensor({d.h * 2, d.w * 2, d.c / 4})
                                 : Tensor({d.n, d.h * 2, d.w * 2, d.c / 4});
    unsqueeze_loop(x.data(), out.data(), d);
    return out;
}

Var squeeze_op(Var x) {
    GradTape& t = *x.tape;
    Tensor out = squeeze2x2(t.value(x));
    Var outv{&t, static_cast<int32_t>(t.size())};
    return t.record(std::move(out), {x}, [x, outv](GradTape& tp) {
        // adjoint of a permutation is its inverse
        Tensor gx = unsqueeze2x2(tp.grad(outv));
        real_t* ga = tp.grad(x).data();
        for (int64_t i = 0; i < gx.numel(); ++i) ga[i] += gx[i];
    });
}

Var unsqueeze_op(Var x) {
    GradTape& t = *x.tape;
    Tensor out = unsqueeze2x2(t.value(x));
    Var outv{&t, static_cast<int32_t>(t.size())};
    return t.record(std::move(out), {x}, [x, outv](GradTape& tp) {
        Tensor gx = squeeze2x2(tp.grad(outv));
        real_t* ga = tp.grad(x).data();
        for (int64_t i = 0; i < gx.numel(); ++i) ga[i] += gx[i];
    });
}

// ---------------------------------------------------------------------------
// coupling layer
// ---------------------------------------------------------------------------

namespace {

// Fused coupling transform: y = x at mask 1 (bit-exact copy), else
// y = x * exp(s) + t. The mask broadcasts over leading dims by period.
Var coupling_combine(Var x, Var s, Var t_shift, const Tensor& mask_pattern) {
    GradTape& t = *x.tape;
    const Tensor& xv = t.value(x);
    const Tensor& sv = t.value(s);
    const Tensor& tv = t.value(t_shift);
    if (!xv.same_shape(sv) || !xv.same_shape(tv)) {
        throw ShapeError("coupling combine: s/t shape " + shape_str(sv.shape()) + "/" +
                         shape_str(tv.shape()) + " does not match data " +
                         shape_str(xv.shape()));
    }
    const int64_t n = xv.numel();
    const int64_t period = mask_pattern.numel();
    Tensor out(xv.shape());
    for (int64_t i = 0; i < n; ++i) {
        out[i] = mask_pattern[i % period] != 0 ? xv[i] : xv[i] * std::exp(sv[i]) + tv[i];
    }
    Var outv{&t, static_cast<int32_t>(t.size())};
    Tensor mask_copy = mask_pattern;
    return t.record(std::move(out), {x, s, t_shift},
                    [x, s, t_shift, outv, n, period, mask = std::move(mask_copy)](GradTape& tp) {
        const Tensor& g = tp.grad(outv);
        const Tensor& xv = tp.value(x);
        const Tensor& sv = tp.value(s);
        const bool need_x = tp.requires_grad(x);
        const bool need_s = tp.requires_grad(s);
        const bool need_t = tp.requires_grad(t_shift);
        real_t* gx = need_x ? tp.grad(x).data() : nullptr;
        real_t* gs = need_s ? tp.grad(s).data() : nullptr;
        real_t* gt = need_t ? tp.grad(t_shift).data() : nullptr;
        for (int64_t i = 0; i < n; ++i) {
            if (mask[i % period] != 0) {
                if (need_x) gx[i] += g[i];
            } else {
                const real_t es = std::exp(sv[i]);
                if (need_x) gx[i] += g[i] * es;
                if (need_s) gs[i] += g[i] * xv[i] * es;
                if (need_t) gt[i] += g[i];
            }
        }
    });
}

Tensor broadcast_mask_mul(const Tensor& x, const Tensor& pattern) {
    Tensor out(x.shape());
    const int64_t period = pattern.numel();
    for (int64_t i = 0; i < x.numel(); ++i) out[i] = x[i] * pattern[i % period];
    return out;
}

}  // namespace

CouplingLayer::CouplingLayer(std::string name, MaskKind kind, int parity, Shape data_shape,
                             std::unique_ptr<ConditionerNet> cond)
    : name_(std::move(name)),
      kind_(kind),
      parity_(parity),
      data_shape_(std::move(data_shape)),
      mask_(kind == MaskKind::checkerboard
                ? make_checkerboard_mask(data_shape_[0], data_shape_[1], data_shape_[2], parity)
                : make_channel_mask(data_shape_[2], parity)),
      cond_(std::move(cond)) {
    if (data_shape_.size() != 3) {
        throw ShapeError("coupling layer data shape must be [H,W,C]");
    }
}

Mask CouplingLayer::mask_for(const Shape& shape) const {
    if (shape == data_shape_) return mask_;
    if (kind_ == MaskKind::channelwise) {
        return make_channel_mask(shape[2], parity_);
    }
    return make_checkerboard_mask(shape[0], shape[1], shape[2], parity_);
}

std::pair<Var, Var> CouplingLayer::forward(FlowCtx& ctx, Var x) {
    GradTape& t = ctx.tape;
    const Tensor& xv = t.value(x);
    if (xv.rank() != 4) {
        throw ShapeError("coupling layer '" + name_ + "' expects [N,H,W,C], got " +
                         shape_str(xv.shape()));
    }
    const Mask m = mask_for({xv.dim(1), xv.dim(2), xv.dim(3)});
    Var bx = mul_const(x, m.pattern);
    auto [s, t_shift] = cond_->forward(ctx, bx);
    if (!t.value(s).all_finite() || !t.value(t_shift).all_finite()) {
        throw DivergenceError("coupling layer '" + name_ +
                              "': non-finite scale/translation output");
    }
    Var y = coupling_combine(x, s, t_shift, m.pattern);
    if (!t.value(y).all_finite()) {
        // finite s whose exp() overflows still counts as divergence here
        throw DivergenceError("coupling layer '" + name_ + "': non-finite output");
    }
    Var log_det = sum_per_sample(mul_const(s, m.inverse));
    return {y, log_det};
}

Tensor CouplingLayer::inverse(const Tensor& y, const Tensor* attrs) {
    if (y.rank() != 4) {
        throw ShapeError("coupling layer '" + name_ + "' inverse expects [N,H,W,C], got " +
                         shape_str(y.shape()));
    }
    const Mask m = mask_for({y.dim(1), y.dim(2), y.dim(3)});
    GradTape scratch;
    FlowCtx ctx{scratch, RunMode::eval, false, /*track_grads=*/false, std::nullopt};
    if (attrs) ctx.attrs = scratch.constant(*attrs);
    Var by = scratch.constant(broadcast_mask_mul(y, m.pattern));
    auto [s, t_shift] = cond_->forward(ctx, by);
    const Tensor& sv = scratch.value(s);
    const Tensor& tv = scratch.value(t_shift);
    if (!sv.all_finite() || !tv.all_finite()) {
        throw DivergenceError("coupling layer '" + name_ +
                              "': non-finite scale/translation output");
    }
    Tensor x(y.shape());
    const int64_t period = m.pattern.numel();
    for (int64_t i = 0; i < y.numel(); ++i) {
        x[i] = m.pattern[i % period] != 0 ? y[i] : (y[i] - tv[i]) * std::exp(-sv[i]);
    }
    return x;
}

// ---------------------------------------------------------------------------
// composite
// ---------------------------------------------------------------------------

std::pair<Var, Var> Composite::forward(FlowCtx& ctx, Var x) {
    Var log_det;
    for (auto& p : parts_) {
        auto [y, ld] = p->forward(ctx, x);
        x = y;
        log_det = log_det.valid() ? add(log_det, ld) : ld;
    }
    if (!log_det.valid()) {
        log_det = ctx.tape.constant(Tensor({ctx.tape.value(x).dim(0)}));
    }
    return {x, log_det};
}

Tensor Composite::inverse(const Tensor& y, const Tensor* attrs) {
    Tensor x = y;
    for (auto it = parts_.rbegin(); it != parts_.rend(); ++it) {
        x = (*it)->inverse(x, attrs);
    }
    return x;
}

}  // namespace nvp
