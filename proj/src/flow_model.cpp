#include "nvp/flow_model.hpp"

#include <cmath>

#include "nvp/random.hpp"

namespace nvp {

namespace {

std::unique_ptr<CouplingLayer> make_coupling(const std::string& name, MaskKind kind, int parity,
                                             Shape data_shape, const FlowConfig& cfg,
                                             int64_t hidden, Rng& init_rng) {
    ConditionerConfig cc;
    cc.data_channels = data_shape[2];
    cc.attr_channels = cfg.attr_bits;
    cc.hidden = hidden;
    cc.res_blocks = cfg.res_blocks;
    cc.kernel = cfg.kernel;
    cc.bn_eps = cfg.bn_eps;
    cc.bn_momentum = cfg.bn_momentum;
    auto cond = make_residual_conditioner(name + ".cond", cc, init_rng);
    return std::make_unique<CouplingLayer>(name, kind, parity, std::move(data_shape),
                                           std::move(cond));
}

}  // namespace

FlowModel::FlowModel(FlowConfig cfg) : cfg_(cfg) {
    if (cfg_.height < 1 || cfg_.width < 1 || cfg_.channels < 1) {
        throw ConfigError("flow model requires positive input extents");
    }
    if (cfg_.num_levels < 1) throw ConfigError("flow model requires num_levels >= 1");
    if (cfg_.checker_couplings < 1 || cfg_.channel_couplings < 1 || cfg_.final_couplings < 1) {
        throw ConfigError("flow model requires at least one coupling per block");
    }
    if (cfg_.num_levels == 1 && cfg_.height * cfg_.width < 2) {
        throw ConfigError("checkerboard masking is degenerate on 1x1 spatial input");
    }
    // Validates divisibility for the build shape (throws ConfigError).
    const std::vector<Shape> shapes = factored_shapes();
    int64_t total = 0;
    for (const Shape& s : shapes) total += shape_numel(s);
    if (total != cfg_.height * cfg_.width * cfg_.channels) {
        throw ConfigError("factored dimensions do not sum to the input dimension");
    }

    Rng init_rng(cfg_.init_seed);
    int64_t h = cfg_.height, w = cfg_.width, c = cfg_.channels;
    const int levels = cfg_.num_levels - 1;
    for (int i = 0; i < levels; ++i) {
        Composite block;
        const int64_t hid = cfg_.hidden << i;
        const std::string lp = "l" + std::to_string(i);
        for (int j = 0; j < cfg_.checker_couplings; ++j) {
            const std::string name = lp + ".cb" + std::to_string(j);
            block.push(make_coupling(name, MaskKind::checkerboard, j % 2, {h, w, c}, cfg_, hid,
                                     init_rng));
            block.push(std::make_unique<BatchNormBijection>(name + ".bn", c, cfg_.bn_eps,
                                                            cfg_.bn_momentum));
            widths_.emplace_back(name, hid);
        }
        block.push(std::make_unique<SqueezeBijection>());
        h /= 2;
        w /= 2;
        c *= 4;
        const int64_t hid2 = cfg_.hidden << (i + 1);
        for (int j = 0; j < cfg_.channel_couplings; ++j) {
            const std::string name = lp + ".cw" + std::to_string(j);
            block.push(make_coupling(name, MaskKind::channelwise, j % 2, {h, w, c}, cfg_, hid2,
                                     init_rng));
            block.push(std::make_unique<BatchNormBijection>(name + ".bn", c, cfg_.bn_eps,
                                                            cfg_.bn_momentum));
            widths_.emplace_back(name, hid2);
        }
        levels_.push_back(std::move(block));
        c /= 2;  // first half factored out
    }
    const int64_t hid_final = cfg_.hidden << levels;
    for (int j = 0; j < cfg_.final_couplings; ++j) {
        const std::string name = "final.cb" + std::to_string(j);
        final_.push(
            make_coupling(name, MaskKind::checkerboard, j % 2, {h, w, c}, cfg_, hid_final,
                          init_rng));
        final_.push(
            std::make_unique<BatchNormBijection>(name + ".bn", c, cfg_.bn_eps, cfg_.bn_momentum));
        widths_.emplace_back(name, hid_final);
    }
}

std::vector<Shape> FlowModel::factored_shapes(int64_t height, int64_t width) const {
    int64_t h = height > 0 ? height : cfg_.height;
    int64_t w = width > 0 ? width : cfg_.width;
    int64_t c = cfg_.channels;
    std::vector<Shape> shapes;
    for (int i = 0; i + 1 < cfg_.num_levels; ++i) {
        if (h % 2 != 0 || w % 2 != 0) {
            throw ConfigError("spatial extent " + std::to_string(h) + "x" + std::to_string(w) +
                              " is not divisible across " + std::to_string(cfg_.num_levels) +
                              " levels");
        }
        h /= 2;
        w /= 2;
        c *= 4;
        shapes.push_back({h, w, c / 2});
        c /= 2;
    }
    shapes.push_back({h, w, c});
    return shapes;
}

int64_t FlowModel::dim(int64_t height, int64_t width) const {
    int64_t total = 0;
    for (const Shape& s : factored_shapes(height, width)) total += shape_numel(s);
    return total;
}

void FlowModel::check_input(const Tensor& x, const Tensor* attrs) const {
    if (x.rank() != 4 || x.dim(3) != cfg_.channels) {
        throw ShapeError("flow model expects [N,H,W," + std::to_string(cfg_.channels) +
                         "], got " + shape_str(x.shape()));
    }
    if (conditional()) {
        if (!attrs) throw ConfigError("conditional model requires attributes");
        if (attrs->rank() != 2 || attrs->dim(0) != x.dim(0) || attrs->dim(1) != cfg_.attr_bits) {
            throw ShapeError("attributes must be [N," + std::to_string(cfg_.attr_bits) +
                             "], got " + shape_str(attrs->shape()));
        }
    }
}

FlowModel::ForwardResult FlowModel::forward_parts(FlowCtx& ctx, Var x) {
    const Tensor& xv = ctx.tape.value(x);
    if (xv.rank() != 4 || xv.dim(3) != cfg_.channels) {
        throw ShapeError("flow model expects [N,H,W," + std::to_string(cfg_.channels) +
                         "], got " + shape_str(xv.shape()));
    }
    factored_shapes(xv.dim(1), xv.dim(2));  // validates spatial divisibility
    if (conditional() && !ctx.attrs) {
        throw ConfigError("conditional model requires ctx.attrs");
    }

    ForwardResult res;
    Var cur = x;
    Var total;
    for (Composite& level : levels_) {
        auto [y, ld] = level.forward(ctx, cur);
        cur = y;
        total = total.valid() ? add(total, ld) : ld;
        const int64_t c = ctx.tape.value(cur).dim(3);
        res.z_parts.push_back(take_channels(cur, 0, c / 2));
        cur = take_channels(cur, c / 2, c);
    }
    auto [y, ld] = final_.forward(ctx, cur);
    total = total.valid() ? add(total, ld) : ld;
    res.z_parts.push_back(y);
    res.log_det = total;
    return res;
}

Tensor FlowModel::encode(const Tensor& x, Tensor* log_det, const Tensor* attrs) {
    check_input(x, attrs);
    GradTape tape;
    FlowCtx ctx{tape, RunMode::eval, false, /*track_grads=*/false, std::nullopt};
    if (attrs) ctx.attrs = tape.constant(*attrs);
    ForwardResult res = forward_parts(ctx, tape.constant(x));

    const int64_t n = x.dim(0);
    int64_t d = 0;
    for (const Var& p : res.z_parts) d += tape.value(p).numel() / n;
    Tensor z({n, d});
    int64_t off = 0;
    for (const Var& p : res.z_parts) {
        const Tensor& pv = tape.value(p);
        const int64_t per = pv.numel() / n;
        for (int64_t s = 0; s < n; ++s) {
            const real_t* src = pv.data() + s * per;
            real_t* dst = z.data() + s * d + off;
            for (int64_t i = 0; i < per; ++i) dst[i] = src[i];
        }
        off += per;
    }
    if (log_det) *log_det = tape.value(res.log_det);
    return z;
}

Tensor concat_channels_plain(const Tensor& a, const Tensor& b) {
    if (a.rank() != 4 || b.rank() != 4 || a.dim(0) != b.dim(0) || a.dim(1) != b.dim(1) ||
        a.dim(2) != b.dim(2)) {
        throw ShapeError("channel concat: incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
    }
    const int64_t ca = a.dim(3), cb = b.dim(3);
    Tensor out({a.dim(0), a.dim(1), a.dim(2), ca + cb});
    const int64_t groups = a.numel() / ca;
    for (int64_t g = 0; g < groups; ++g) {
        real_t* dst = out.data() + g * (ca + cb);
        const real_t* pa = a.data() + g * ca;
        const real_t* pb = b.data() + g * cb;
        for (int64_t k = 0; k < ca; ++k) dst[k] = pa[k];
        for (int64_t k = 0; k < cb; ++k) dst[ca + k] = pb[k];
    }
    return out;
}

Tensor FlowModel::decode(const Tensor& z, const Tensor* attrs, int64_t height, int64_t width) {
    const std::vector<Shape> shapes = factored_shapes(height, width);
    int64_t d = 0;
    for (const Shape& s : shapes) d += shape_numel(s);
    if (z.rank() != 2 || z.dim(1) != d) {
        throw ShapeError("decode expects [N," + std::to_string(d) + "], got " +
                         shape_str(z.shape()));
    }
    if (conditional() && !attrs) throw ConfigError("conditional model requires attributes");
    const int64_t n = z.dim(0);

    // split the concatenated latent back into per-scale tensors
    std::vector<Tensor> parts;
    int64_t off = 0;
    for (const Shape& s : shapes) {
        const int64_t per = shape_numel(s);
        Tensor p({n, s[0], s[1], s[2]});
        for (int64_t i = 0; i < n; ++i) {
            const real_t* src = z.data() + i * d + off;
            real_t* dst = p.data() + i * per;
            for (int64_t k = 0; k < per; ++k) dst[k] = src[k];
        }
        parts.push_back(std::move(p));
        off += per;
    }

    Tensor cur = final_.inverse(parts.back(), attrs);
    for (int i = static_cast<int>(levels_.size()) - 1; i >= 0; --i) {
        cur = concat_channels_plain(parts[static_cast<size_t>(i)], cur);
        cur = levels_[static_cast<size_t>(i)].inverse(cur, attrs);
    }
    return cur;
}

Tensor FlowModel::prior_log_density(const Tensor& z) {
    if (z.rank() != 2) throw ShapeError("prior expects [N,D], got " + shape_str(z.shape()));
    const int64_t n = z.dim(0), d = z.dim(1);
    Tensor out({n});
    for (int64_t s = 0; s < n; ++s) {
        real_t acc = 0;
        const real_t* p = z.data() + s * d;
        for (int64_t i = 0; i < d; ++i) acc += p[i] * p[i];
        out[s] = real_t(-0.5) * acc - real_t(0.5) * static_cast<real_t>(d) *
                                          static_cast<real_t>(kLog2Pi);
    }
    return out;
}

Tensor FlowModel::log_likelihood(const Tensor& x, const Tensor* attrs) {
    Tensor log_det;
    Tensor z = encode(x, &log_det, attrs);
    Tensor prior = prior_log_density(z);
    Tensor out({x.dim(0)});
    for (int64_t i = 0; i < out.numel(); ++i) {
        const real_t v = prior[i] + log_det[i];
        if (!std::isfinite(v)) {
            throw DivergenceError("non-finite log-likelihood for sample " + std::to_string(i));
        }
        out[i] = v;
    }
    return out;
}

Tensor FlowModel::sample(int64_t n, uint64_t seed, const Tensor* attrs, int64_t height,
                         int64_t width) {
    const int64_t d = dim(height, width);
    Rng rng(seed);
    Tensor z = rng.normal_tensor({n, d});
    return decode(z, attrs, height, width);
}

void FlowModel::collect_params(std::vector<Parameter*>& out) {
    for (Composite& l : levels_) l.collect_params(out);
    final_.collect_params(out);
}

void FlowModel::collect_norms(std::vector<BatchNorm*>& out) {
    for (Composite& l : levels_) l.collect_norms(out);
    final_.collect_norms(out);
}

void FlowModel::collect_weight_scales(std::vector<Parameter*>& out) {
    for (Composite& l : levels_) l.collect_weight_scales(out);
    final_.collect_weight_scales(out);
}

void FlowModel::set_bn_momentum(real_t m) {
    std::vector<BatchNorm*> norms;
    collect_norms(norms);
    for (BatchNorm* bn : norms) bn->set_momentum(m);
}

Tensor manifold_interpolate(const Tensor& anchors, double phi, double phi_prime) {
    if (anchors.rank() != 2 || anchors.dim(0) != 4) {
        throw ShapeError("manifold interpolation requires four anchors [4,D], got " +
                         shape_str(anchors.shape()));
    }
    const int64_t d = anchors.dim(1);
    const double ca = std::cos(phi), sa = std::sin(phi);
    const double cb = std::cos(phi_prime), sb = std::sin(phi_prime);
    Tensor z({d});
    for (int64_t k = 0; k < d; ++k) {
        z[k] = static_cast<real_t>(ca * (cb * anchors[k] + sb * anchors[d + k]) +
                                   sa * (cb * anchors[2 * d + k] + sb * anchors[3 * d + k]));
    }
    return z;
}

}  // namespace nvp
