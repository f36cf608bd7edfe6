#include "nvp/autograd.hpp"

#include <algorithm>
#include <cmath>

namespace nvp {

// ---------------------------------------------------------------------------
// GradTape
// ---------------------------------------------------------------------------

Var GradTape::push(Tensor value, bool requires_grad, BackwardFn fn) {
    nodes_.push_back(Node{std::move(value), std::nullopt, requires_grad, std::move(fn)});
    return Var{this, static_cast<int32_t>(nodes_.size() - 1)};
}

Var GradTape::watch(Parameter& p) {
    for (const auto& [id, ptr] : watched_) {
        if (ptr == &p) return Var{this, id};
    }
    Var v = push(p.value, p.requires_grad, nullptr);
    watched_.emplace_back(v.id, &p);
    return v;
}

Var GradTape::record(Tensor value, std::span<const Var> inputs, BackwardFn backward) {
    bool req = false;
    for (const Var& in : inputs) {
        if (!in.valid() || in.tape != this) {
            throw ShapeError("op input does not belong to this tape");
        }
        req = req || nodes_[static_cast<size_t>(in.id)].requires_grad;
    }
    return push(std::move(value), req, req ? std::move(backward) : nullptr);
}

Var GradTape::record(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward) {
    return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
                  std::move(backward));
}

Tensor& GradTape::grad(Var v) {
    Node& nd = nodes_[static_cast<size_t>(v.id)];
    if (!nd.grad) nd.grad.emplace(nd.value.shape());
    return *nd.grad;
}

void GradTape::backward(Var loss) {
    if (!loss.valid() || loss.tape != this) throw ShapeError("loss is not a node of this tape");
    if (value(loss).numel() != 1) {
        throw ShapeError("backward requires a scalar loss, got shape " +
                         shape_str(value(loss).shape()));
    }
    for (auto& [id, p] : watched_) p->grad.fill(0);
    if (!requires_grad(loss)) return;  // loss unreachable from any watched parameter

    grad(loss)[0] = 1;
    for (int32_t id = loss.id; id >= 0; --id) {
        Node& nd = nodes_[static_cast<size_t>(id)];
        if (nd.requires_grad && nd.backward && nd.grad.has_value()) nd.backward(*this);
    }
    for (auto& [id, p] : watched_) {
        Node& nd = nodes_[static_cast<size_t>(id)];
        if (!nd.grad) continue;
        const Tensor& g = *nd.grad;
        for (int64_t i = 0; i < g.numel(); ++i) p->grad[i] += g[i];
    }
}

void GradTape::clear() {
    nodes_.clear();
    watched_.clear();
}

// ---------------------------------------------------------------------------
// broadcast plumbing
// ---------------------------------------------------------------------------

namespace {

bool is_trailing_of(const Shape& small, const Shape& big) {
    if (small.size() > big.size()) return false;
    return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

struct BinPlan {
    bool a_small = false;       // a is the broadcast operand
    bool b_small = false;       // b is the broadcast operand
    bool small_scalar = false;  // broadcast operand has a single element
    int64_t period = 0;         // numel of the broadcast operand
};

BinPlan plan_binary(const Shape& a, const Shape& b, const char* op) {
    BinPlan p;
    if (a == b) {
        p.period = shape_numel(a);
        return p;
    }
    if (shape_numel(b) == 1) {
        p.b_small = p.small_scalar = true;
        p.period = 1;
        return p;
    }
    if (shape_numel(a) == 1) {
        p.a_small = p.small_scalar = true;
        p.period = 1;
        return p;
    }
    if (is_trailing_of(b, a)) {
        p.b_small = true;
        p.period = shape_numel(b);
        return p;
    }
    if (is_trailing_of(a, b)) {
        p.a_small = true;
        p.period = shape_numel(a);
        return p;
    }
    throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " +
                     shape_str(b));
}

// Generic elementwise binary op with scalar / trailing-dim broadcast.
// f computes the value, da/db the partial factors given both operand values.
template <class F, class DA, class DB>
Var record_binary(Var a, Var b, const char* op, F f, DA da, DB db) {
    GradTape& t = *a.tape;
    const Tensor& av = t.value(a);
    const Tensor& bv = t.value(b);
    const BinPlan plan = plan_binary(av.shape(), bv.shape(), op);

    const Tensor& big = plan.a_small ? bv : av;
    Tensor out(big.shape());
    const int64_t n = out.numel();
    {
        const real_t* pa = av.data();
        const real_t* pb = bv.data();
        if (plan.a_small) {
            for (int64_t i = 0; i < n; ++i) out[i] = f(pa[i % plan.period], pb[i]);
        } else if (plan.b_small) {
            for (int64_t i = 0; i < n; ++i) out[i] = f(pa[i], pb[i % plan.period]);
        } else {
            for (int64_t i = 0; i < n; ++i) out[i] = f(pa[i], pb[i]);
        }
    }

    Var outv{&t, static_cast<int32_t>(t.size())};
    return t.record(std::move(out), {a, b}, [a, b, outv, plan, da, db, n](GradTape& tp) {
        const Tensor& g = tp.grad(outv);
        const real_t* pg = g.data();
        const real_t* pa = tp.value(a).data();
        const real_t* pb = tp.value(b).data();
        const bool need_a = tp.requires_grad(a);
        const bool need_b = tp.requires_grad(b);
        real_t* ga = need_a ? tp.grad(a).data() : nullptr;
        real_t* gb = need_b ? tp.grad(b).data() : nullptr;
        for (int64_t i = 0; i < n; ++i) {
            const int64_t ia = plan.a_small ? i % plan.period : i;
            const int64_t ib = plan.b_small ? i % plan.period : i;
            if (need_a) ga[ia] += pg[i] * da(pa[ia], pb[ib]);
            if (need_b) gb[ib] += pg[i] * db(pa[ia], pb[ib]);
        }
    });
}

template <class F, class D>
Var record_unary(Var a, F f, D dfdx) {
    GradTape& t = *a.tape;
    const Tensor& av = t.value(a);
    Tensor out(av.shape());
    const int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i) out[i] = f(av[i]);

    Var outv{&t, static_cast<int32_t>(t.size())};
    return t.record(std::move(out), {a}, [a, outv, dfdx, n](GradTape& tp) {
        const Tensor& g = tp.grad(outv);
        const Tensor& x = tp.value(a);
        const Tensor& y = tp.value(outv);
        real_t* ga = tp.grad(a).data();
        for (int64_t i = 0; i < n; ++i) ga[i] += g[i] * dfdx(x[i], y[i]);
    });
}

}  // namespace

// ---------------------------------------------------------------------------
// elementwise ops
// ---------------------------------------------------------------------------

Var add(Var a, Var b) {
    return record_binary(
        a, b, "add", [](real_t x, real_t y) { return x + y; },
        [](real_t, real_t) { return real_t(1); }, [](real_t, real_t) { return real_t(1); });
}

Var sub(Var a, Var b) {
    return record_binary(
        a, b, "sub", [](real_t x, real_t y) { return x - y; },
        [](real_t, real_t) { return real_t(1); }, [](real_t, real_t) { return real_t(-1); });
}

Var mul(Var a, Var b) {
    return record_binary(
        a, b, "mul", [](real_t x, real_t y) { return x * y; },
        [](real_t, real_t y) { return y; }, [](real_t x, real_t) { return x; });
}

Var neg(Var a) {
    return record_unary(
        a, [](real_t x) { return -x; }, [](real_t, real_t) { return real_t(-1); });
}

Var exp(Var a) {
    return record_unary(
        a, [](real_t x) { return std::exp(x); }, [](real_t, real_t y) { return y; });
}

Var log(Var a) {
    const Tensor& av = a.tape->value(a);
    for (int64_t i = 0; i < av.numel(); ++i) {
        if (!(av[i] > 0)) {
            throw DomainError("log of non-positive value " + std::to_string(av[i]));
        }
    }
    return record_unary(
        a, [](real_t x) { return std::log(x); }, [](real_t x, real_t) { return real_t(1) / x; });
}

Var tanh(Var a) {
    return record_unary(
        a, [](real_t x) { return std::tanh(x); },
        [](real_t, real_t y) { return real_t(1) - y * y; });
}

Var relu(Var a) {
    return record_unary(
        a, [](real_t x) { return x > 0 ? x : real_t(0); },
        [](real_t x, real_t) { return x > 0 ? real_t(1) : real_t(0); });
}

Var rsqrt(Var a) {
    const Tensor& av = a.tape->value(a);
    for (int64_t i = 0; i < av.numel(); ++i) {
        if (!(av[i] > 0)) {
            throw DomainError("rsqrt of non-positive value " + std::to_string(av[i]));
        }
    }
    return record_unary(
        a, [](real_t x) { return real_t(1) / std::sqrt(x); },
        [](real_t, real_t y) { return real_t(-0.5) * y * y * y; });
}

Var add_scalar(Var a, real_t c) {
    return record_unary(
        a, [c](real_t x) { return x + c; }, [](real_t, real_t) { return real_t(1); });
}

Var mul_scalar(Var a, real_t c) {
    return record_unary(
        a, [c](real_t x) { return x * c; }, [c](real_t, real_t) { return c; });
}

Var mul_const(Var a, const Tensor& c) {
    GradTape& t = *a.tape;
    const Tensor& av = t.value(a);
    const BinPlan plan = plan_binary(av.shape(), c.shape(), "mul_const");
    if (plan.a_small) {
        throw ShapeError("mul_const: constant shape " + shape_str(c.shape()) +
                         " larger than operand " + shape_str(av.shape()));
    }
    Tensor out(av.shape());
    const int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i) {
        out[i] = av[i] * c[plan.b_small ? i % plan.period : i];
    }
    Var outv{&t, static_cast<int32_t>(t.size())};
    // The constant participates by value only; no Var is recorded for it.
    Tensor cc = c;
    return t.record(std::move(out), {a}, [a, outv, plan, cc = std::move(cc), n](GradTape& tp) {
        const Tensor& g = tp.grad(outv);
        real_t* ga = tp.grad(a).data();
        for (int64_t i = 0; i < n; ++i) {
            ga[i] += g[i] * cc[plan.b_small ? i % plan.period : i];
        }
    });
}

// ---------------------------------------------------------------------------
// reductions and shape ops
// ---------------------------------------------------------------------------

Var sum(Var a) {
    GradTape& t = *a.tape;
    const Tensor& av = t.value(a);
    real_t acc = 0;
    for (int64_t i = 0; i < av.numel(); ++i) acc += av[i];
    Var outv{&t, static_cast<int32_t>(t.size())};
    const int64_t n = av.numel();
    return t.record(Tensor::scalar(acc), {a}, [a, outv, n](GradTape& tp) {
        const real_t g = tp.grad(outv)[0];
        real_t* ga = tp.grad(a).data();
        for (int64_t i = 0; i < n; ++i) ga[i] += g;
    });
}

Var mean(Var a) {
    GradTape& t = *a.tape;
    const Tensor& av = t.value(a);
    const int64_t n = av.numel();
    real_t acc = 0;
    for (int64_t i = 0; i < n; ++i) acc += av[i];
    Var outv{&t, static_cast<int32_t>(t.size())};
    return t.record(Tensor::scalar(acc / static_cast<real_t>(n)), {a}, [a, outv, n](GradTape& tp) {
        const real_t g = tp.grad(outv)[0] / static_cast<real_t>(n);
        real_t* ga = tp.grad(a).data();
        for (int64_t i = 0; i < n; ++i) ga[i] += g;
    });
}

Var sum_per_sample(Var a) {
    GradTape& t = *a.tape;
    const Tensor& av = t.value(a);
    if (av.rank() < 1) throw ShapeError("sum_per_sample requires rank >= 1");
    const int64_t n = av.dim(0);
    const int64_t per = av.numel() / n;
    Tensor out({n});
    for (int64_t s = 0; s < n; ++s) {
        real_t acc = 0;
        const real_t* p = av.data() + s * per;
        for (int64_t j = 0; j < per; ++j) acc += p[j];
        out[s] = acc;
    }
    Var outv{&t, static_cast<int32_t>(t.size())};
    return t.record(std::move(out), {a}, [a, outv, n, per](GradTape& tp) {
        const Tensor& g = tp.grad(outv);
        real_t* ga = tp.grad(a).data();
        for (int64_t s = 0; s < n; ++s) {
            const real_t gs = g[s];
            real_t* p = ga + s * per;
            for (int64_t j = 0; j < per; ++j) p[j] += gs;
        }
    });
}

Var channel_mean(Var a) {
    GradTape& t = *a.tape;
    const Tensor& av = t.value(a);
    if (av.rank() != 4) {
        throw ShapeError("channel_mean requires [N,H,W,C], got " + shape_str(av.shape()));
    }
    const int64_t c = av.dim(3);
    const int64_t groups = av.numel() / c;
    Tensor out({c});
    for (int64_t i = 0; i < av.numel(); ++i) out[i % c] += av[i];
    for (int64_t k = 0; k < c; ++k) out[k] /= static_cast<real_t>(groups);
    Var outv{&t, static_cast<int32_t>(t.size())};
    const int64_t n = av.numel();
    return t.record(std::move(out), {a}, [a, outv, c, groups, n](GradTape& tp) {
        const Tensor& g = tp.grad(outv);
        real_t* ga = tp.grad(a).data();
        const real_t inv = real_t(1) / static_cast<real_t>(groups);
        for (int64_t i = 0; i < n; ++i) ga[i] += g[i % c] * inv;
    });
}

Var broadcast_to_samples(Var s, int64_t n) {
    GradTape& t = *s.tape;
    if (t.value(s).numel() != 1) {
        throw ShapeError("broadcast_to_samples requires a scalar source");
    }
    Tensor out({n}, t.value(s)[0]);
    Var outv{&t, static_cast<int32_t>(t.size())};
    return t.record(std::move(out), {s}, [s, outv, n](GradTape& tp) {
        const Tensor& g = tp.grad(outv);
        real_t acc = 0;
        for (int64_t i = 0; i < n; ++i) acc += g[i];
        tp.grad(s)[0] += acc;
    });
}

Var reshape(Var a, Shape shape) {
    GradTape& t = *a.tape;
    Tensor out = t.value(a).reshaped(std::move(shape));
    Var outv{&t, static_cast<int32_t>(t.size())};
    const int64_t n = out.numel();
    return t.record(std::move(out), {a}, [a, outv, n](GradTape& tp) {
        const Tensor& g = tp.grad(outv);
        real_t* ga = tp.grad(a).data();
        for (int64_t i = 0; i < n; ++i) ga[i] += g[i];
    });
}

Var take_channels(Var a, int64_t from, int64_t to) {
    GradTape& t = *a.tape;
    const Tensor& av = t.value(a);
    if (av.rank() != 4) {
        throw ShapeError("take_channels requires [N,H,W,C], got " + shape_str(av.shape()));
    }
    const int64_t c = av.dim(3);
    if (from < 0 || to > c || from >= to) {
        throw ShapeError("take_channels range [" + std::to_string(from) + "," +
                         std::to_string(to) + ") invalid for C=" + std::to_string(c));
    }
    const int64_t cc = to - from;
    const int64_t groups = av.numel() / c;
    Tensor out({av.dim(0), av.dim(1), av.dim(2), cc});
    for (int64_t g = 0; g < groups; ++g) {
        const real_t* src = av.data() + g * c + from;
        real_t* dst = out.data() + g * cc;
        for (int64_t k = 0; k < cc; ++k) dst[k] = src[k];
    }
    Var outv{&t, static_cast<int32_t>(t.size())};
    return t.record(std::move(out), {a}, [a, outv, c, cc, from, groups](GradTape& tp) {
        const Tensor& g = tp.grad(outv);
        real_t* ga = tp.grad(a).data();
        for (int64_t gi = 0; gi < groups; ++gi) {
            const real_t* src = g.data() + gi * cc;
            real_t* dst = ga + gi * c + from;
            for (int64_t k = 0; k < cc; ++k) dst[k] += src[k];
        }
    });
}

Var concat_channels(Var a, Var b) {
    GradTape& t = *a.tape;
    const Tensor& av = t.value(a);
    const Tensor& bv = t.value(b);
    if (av.rank() != 4 || bv.rank() != 4 || av.dim(0) != bv.dim(0) || av.dim(1) != bv.dim(1) ||
        av.dim(2) != bv.dim(2)) {
        throw ShapeError("concat_channels: incompatible shapes " + shape_str(av.shape()) +
                         " and " + shape_str(bv.shape()));
    }
    const int64_t ca = av.dim(3), cb = bv.dim(3);
    const int64_t groups = av.numel() / ca;
    Tensor out({av.dim(0), av.dim(1), av.dim(2), ca + cb});
    for (int64_t g = 0; g < groups; ++g) {
        real_t* dst = out.data() + g * (ca + cb);
        const real_t* pa = av.data() + g * ca;
        const real_t* pb = bv.data() + g * cb;
        for (int64_t k = 0; k < ca; ++k) dst[k] = pa[k];
        for (int64_t k = 0; k < cb; ++k) dst[ca + k] = pb[k];
    }
    Var outv{&t, static_cast<int32_t>(t.size())};
    return t.record(std::move(out), {a, b}, [a, b, outv, ca, cb, groups](GradTape& tp) {
        const Tensor& g = tp.grad(outv);
        const bool need_a = tp.requires_grad(a);
        const bool need_b = tp.requires_grad(b);
        real_t* ga = need_a ? tp.grad(a).data() : nullptr;
        real_t* gb = need_b ? tp.grad(b).data() : nullptr;
        for (int64_t gi = 0; gi < groups; ++gi) {
            const real_t* src = g.data() + gi * (ca + cb);
            if (need_a) {
                real_t* dst = ga + gi * ca;
                for (int64_t k = 0; k < ca; ++k) dst[k] += src[k];
            }
            if (need_b) {
                real_t* dst = gb + gi * cb;
                for (int64_t k = 0; k < cb; ++k) dst[k] += src[ca + k];
            }
        }
    });
}

Var tile_attrs(Var y, int64_t h, int64_t w) {
    GradTape& t = *y.tape;
    const Tensor& yv = t.value(y);
    if (yv.rank() != 2) throw ShapeError("tile_attrs requires [N,K], got " + shape_str(yv.shape()));
    const int64_t n = yv.dim(0), k = yv.dim(1);
    Tensor out({n, h, w, k});
    for (int64_t s = 0; s < n; ++s) {
        const real_t* src = yv.data() + s * k;
        for (int64_t p = 0; p < h * w; ++p) {
            real_t* dst = out.data() + (s * h * w + p) * k;
            for (int64_t j = 0; j < k; ++j) dst[j] = src[j];
        }
    }
    Var outv{&t, static_cast<int32_t>(t.size())};
    return t.record(std::move(out), {y}, [y, outv, n, h, w, k](GradTape& tp) {
        const Tensor& g = tp.grad(outv);
        real_t* gy = tp.grad(y).data();
        for (int64_t s = 0; s < n; ++s) {
            real_t* dst = gy + s * k;
            for (int64_t p = 0; p < h * w; ++p) {
                const real_t* src = g.data() + (s * h * w + p) * k;
                for (int64_t j = 0; j < k; ++j) dst[j] += src[j];
            }
        }
    });
}

// ---------------------------------------------------------------------------
// convolution
// ---------------------------------------------------------------------------

namespace {

struct ConvDims {
    int64_t n, h, w, ci, kh, kw, co;
    bool squeeze_batch;  // x came in as [H,W,C]
};

ConvDims conv_dims(const Tensor& x, const Tensor& w, const Tensor* b) {
    ConvDims d{};
    if (x.rank() == 3) {
        d.squeeze_batch = true;
        d.n = 1;
        d.h = x.dim(0);
        d.w = x.dim(1);
        d.ci = x.dim(2);
    } else if (x.rank() == 4) {
        d.squeeze_batch = false;
        d.n = x.dim(0);
        d.h = x.dim(1);
        d.w = x.dim(2);
        d.ci = x.dim(3);
    } else {
        throw ShapeError("conv2d input must be [H,W,C] or [N,H,W,C], got " +
                         shape_str(x.shape()));
    }
    if (w.rank() != 4) {
        throw ShapeError("conv2d kernel must be [kh,kw,Cin,Cout], got " + shape_str(w.shape()));
    }
    d.kh = w.dim(0);
    d.kw = w.dim(1);
    d.co = w.dim(3);
    if (d.kh % 2 == 0 || d.kw % 2 == 0) {
        throw ShapeError("conv2d kernel extent must be odd, got " + shape_str(w.shape()));
    }
    if (w.dim(2) != d.ci) {
        throw ShapeError("conv2d channel mismatch: input " + shape_str(x.shape()) + " vs kernel " +
                         shape_str(w.shape()));
    }
    if (b && (b->rank() != 1 || b->dim(0) != d.co)) {
        throw ShapeError("conv2d bias must be [Cout], got " + shape_str(b->shape()));
    }
    return d;
}

Tensor conv_forward(const Tensor& x, const Tensor& w, const Tensor* b, const ConvDims& d) {
    Tensor out =
        d.squeeze_batch ? Tensor({d.h, d.w, d.co}) : Tensor({d.n, d.h, d.w, d.co});
    const int64_t ph = d.kh / 2, pw = d.kw / 2;
    const real_t* px = x.data();
    const real_t* pw_ = w.data();
    for (int64_t n = 0; n < d.n; ++n) {
        for (int64_t i = 0; i < d.h; ++i) {
            for (int64_t j = 0; j < d.w; ++j) {
                real_t* op = out.data() + ((n * d.h + i) * d.w + j) * d.co;
                if (b) {
                    const real_t* pb = b->data();
                    for (int64_t co = 0; co < d.co; ++co) op[co] = pb[co];
                }
                for (int64_t u = 0; u < d.kh; ++u) {
                    const int64_t ii = i + u - ph;
                    if (ii < 0 || ii >= d.h) continue;
                    for (int64_t v = 0; v < d.kw; ++v) {
                        const int64_t jj = j + v - pw;
                        if (jj < 0 || jj >= d.w) continue;
                        const real_t* xp = px + ((n * d.h + ii) * d.w + jj) * d.ci;
                        const real_t* wp = pw_ + (u * d.kw + v) * d.ci * d.co;
                        for (int64_t ci = 0; ci < d.ci; ++ci) {
                            const real_t xv = xp[ci];
                            const real_t* wr = wp + ci * d.co;
                            for (int64_t co = 0; co < d.co; ++co) op[co] += xv * wr[co];
                        }
                    }
                }
            }
        }
    }
    return out;
}

template <bool GX, bool GW>
void conv_backward_core(const Tensor& gout, const Tensor& x, const Tensor& w, real_t* gx,
                        real_t* gw, const ConvDims& d) {
    const int64_t ph = d.kh / 2, pw = d.kw / 2;
    const real_t* px = x.data();
    const real_t* pw_ = w.data();
    for (int64_t n = 0; n < d.n; ++n) {
        for (int64_t i = 0; i < d.h; ++i) {
            for (int64_t j = 0; j < d.w; ++j) {
                const real_t* gop = gout.data() + ((n * d.h + i) * d.w + j) * d.co;
                for (int64_t u = 0; u < d.kh; ++u) {
                    const int64_t ii = i + u - ph;
                    if (ii < 0 || ii >= d.h) continue;
                    for (int64_t v = 0; v < d.kw; ++v) {
                        const int64_t jj = j + v - pw;
                        if (jj < 0 || jj >= d.w) continue;
                        const int64_t xoff = ((n * d.h + ii) * d.w + jj) * d.ci;
                        const int64_t woff = (u * d.kw + v) * d.ci * d.co;
                        const real_t* xp = px + xoff;
                        for (int64_t ci = 0; ci < d.ci; ++ci) {
                            const real_t xv = xp[ci];
                            const real_t* wr = pw_ + woff + ci * d.co;
                            real_t acc = 0;
                            real_t* gwr = GW ? gw + woff + ci * d.co : nullptr;
                            for (int64_t co = 0; co < d.co; ++co) {
                                const real_t g = gop[co];
                                if constexpr (GW) gwr[co] += xv * g;
                                if constexpr (GX) acc += wr[co] * g;
                            }
                            if constexpr (GX) gx[xoff + ci] += acc;
                        }
                    }
                }
            }
        }
    }
}

}  // namespace

Var conv2d(Var x, Var w, Var b) {
    GradTape& t = *x.tape;
    const Tensor& xv = t.value(x);
    const Tensor& wv = t.value(w);
    const Tensor* bt = b.valid() ? &t.value(b) : nullptr;
    const ConvDims d = conv_dims(xv, wv, bt);

    Tensor out = conv_forward(xv, wv, bt, d);
    Var outv{&t, static_cast<int32_t>(t.size())};
    std::vector<Var> inputs{x, w};
    if (b.valid()) inputs.push_back(b);
    return t.record(std::move(out), std::span<const Var>(inputs), [x, w, b, outv, d](GradTape& tp) {
        const Tensor& gout = tp.grad(outv);
        const Tensor& xv = tp.value(x);
        const Tensor& wv = tp.value(w);
        const bool need_x = tp.requires_grad(x);
        const bool need_w = tp.requires_grad(w);
        if (b.valid() && tp.requires_grad(b)) {
            real_t* gb = tp.grad(b).data();
            const real_t* g = gout.data();
            const int64_t cells = gout.numel() / d.co;
            for (int64_t c = 0; c < cells; ++c) {
                for (int64_t co = 0; co < d.co; ++co) gb[co] += g[c * d.co + co];
            }
        }
        real_t* gx = need_x ? tp.grad(x).data() : nullptr;
        real_t* gw = need_w ? tp.grad(w).data() : nullptr;
        if (need_x && need_w) {
            conv_backward_core<true, true>(gout, xv, wv, gx, gw, d);
        } else if (need_x) {
            conv_backward_core<true, false>(gout, xv, wv, gx, nullptr, d);
        } else if (need_w) {
            conv_backward_core<false, true>(gout, xv, wv, nullptr, gw, d);
        }
    });
}

Var weight_norm(Var v, Var g) {
    GradTape& t = *v.tape;
    const Tensor& vv = t.value(v);
    const Tensor& gv = t.value(g);
    if (vv.rank() < 2) throw ShapeError("weight_norm direction must have rank >= 2");
    const int64_t co = vv.dim(vv.rank() - 1);
    if (gv.rank() != 1 || gv.dim(0) != co) {
        throw ShapeError("weight_norm magnitude must be [Cout]=" + std::to_string(co) + ", got " +
                         shape_str(gv.shape()));
    }
    const int64_t rows = vv.numel() / co;
    std::vector<real_t> norms(static_cast<size_t>(co), 0);
    for (int64_t r = 0; r < rows; ++r) {
        const real_t* p = vv.data() + r * co;
        for (int64_t o = 0; o < co; ++o) norms[static_cast<size_t>(o)] += p[o] * p[o];
    }
    for (int64_t o = 0; o < co; ++o) {
        norms[static_cast<size_t>(o)] = std::sqrt(norms[static_cast<size_t>(o)]);
        if (!(norms[static_cast<size_t>(o)] > 1e-30)) {
            throw DomainError("weight_norm: direction column " + std::to_string(o) +
                              " has (near-)zero norm");
        }
    }
    Tensor out(vv.shape());
    for (int64_t r = 0; r < rows; ++r) {
        const real_t* p = vv.data() + r * co;
        real_t* q = out.data() + r * co;
        for (int64_t o = 0; o < co; ++o) {
            q[o] = gv[o] * p[o] / norms[static_cast<size_t>(o)];
        }
    }
    Var outv{&t, static_cast<int32_t>(t.size())};
    return t.record(std::move(out), {v, g},
                    [v, g, outv, co, rows, norms = std::move(norms)](GradTape& tp) {
        const Tensor& gw = tp.grad(outv);
        const Tensor& vv = tp.value(v);
        const Tensor& gvv = tp.value(g);
        // dot[o] = sum_i gw[i,o] * v[i,o]
        std::vector<real_t> dot(static_cast<size_t>(co), 0);
        for (int64_t r = 0; r < rows; ++r) {
            const real_t* pg = gw.data() + r * co;
            const real_t* pv = vv.data() + r * co;
            for (int64_t o = 0; o < co; ++o) dot[static_cast<size_t>(o)] += pg[o] * pv[o];
        }
        if (tp.requires_grad(g)) {
            real_t* gg = tp.grad(g).data();
            for (int64_t o = 0; o < co; ++o) {
                gg[o] += dot[static_cast<size_t>(o)] / norms[static_cast<size_t>(o)];
            }
        }
        if (tp.requires_grad(v)) {
            real_t* gvp = tp.grad(v).data();
            for (int64_t r = 0; r < rows; ++r) {
                const real_t* pg = gw.data() + r * co;
                const real_t* pv = vv.data() + r * co;
                real_t* pd = gvp + r * co;
                for (int64_t o = 0; o < co; ++o) {
                    const real_t n1 = norms[static_cast<size_t>(o)];
                    pd[o] += gvv[o] * (pg[o] / n1 - pv[o] * dot[static_cast<size_t>(o)] / (n1 * n1 * n1));
                }
            }
        }
    });
}

Var conv2d(Var x, Var w) { return conv2d(x, w, Var{}); }

}  // namespace nvp
