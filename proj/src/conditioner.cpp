#include "nvp/conditioner.hpp"

namespace nvp {

ResidualConditioner::ResidualConditioner(const std::string& name, const ConditionerConfig& cfg,
                                         Rng& init_rng)
    : cfg_(cfg),
      in_conv_(name + ".in", cfg.kernel, cfg.data_channels + cfg.attr_channels, cfg.hidden,
               /*weight_norm=*/true, init_rng),
      out_bn_(name + ".out_bn", cfg.hidden, cfg.bn_eps, cfg.bn_momentum),
      head_s_(name + ".head_s", cfg.kernel, cfg.hidden, cfg.data_channels,
              /*weight_norm=*/false, init_rng, /*zero_init=*/true),
      head_t_(name + ".head_t", cfg.kernel, cfg.hidden, cfg.data_channels,
              /*weight_norm=*/false, init_rng, /*zero_init=*/true),
      s_scale_(name + ".s_scale", Tensor::full({cfg.data_channels}, 1)) {
    if (cfg.hidden < 1 || cfg.res_blocks < 0) {
        throw ShapeError("conditioner requires hidden >= 1 and res_blocks >= 0");
    }
    blocks_.reserve(static_cast<size_t>(cfg.res_blocks));
    for (int b = 0; b < cfg.res_blocks; ++b) {
        const std::string p = name + ".rb" + std::to_string(b);
        blocks_.push_back(Block{
            BatchNorm(p + ".bn1", cfg.hidden, cfg.bn_eps, cfg.bn_momentum),
            Conv2d(p + ".c1", cfg.kernel, cfg.hidden, cfg.hidden, true, init_rng),
            BatchNorm(p + ".bn2", cfg.hidden, cfg.bn_eps, cfg.bn_momentum),
            Conv2d(p + ".c2", cfg.kernel, cfg.hidden, cfg.hidden, true, init_rng),
        });
    }
}

std::pair<Var, Var> ResidualConditioner::forward(FlowCtx& ctx, Var masked_x) {
    const Tensor& xv = ctx.tape.value(masked_x);
    if (xv.rank() != 4 || xv.dim(3) != cfg_.data_channels) {
        throw ShapeError("conditioner expects [N,H,W," + std::to_string(cfg_.data_channels) +
                         "], got " + shape_str(xv.shape()));
    }
    Var h = masked_x;
    if (cfg_.attr_channels > 0) {
        if (!ctx.attrs) {
            throw ConfigError("conditional model requires attribute input");
        }
        h = concat_channels(h, tile_attrs(*ctx.attrs, xv.dim(1), xv.dim(2)));
    }
    h = in_conv_.forward(ctx, h);
    for (Block& blk : blocks_) {
        Var r = blk.bn1.forward(ctx, h);
        r = blk.conv1.forward(ctx, relu(r));
        r = blk.bn2.forward(ctx, r);
        r = blk.conv2.forward(ctx, relu(r));
        h = add(h, r);
    }
    h = relu(out_bn_.forward(ctx, h));
    Var s = mul(tanh(head_s_.forward(ctx, h)), ctx.param(s_scale_));
    Var t = head_t_.forward(ctx, h);
    return {s, t};
}

void ResidualConditioner::collect_params(std::vector<Parameter*>& out) {
    in_conv_.collect_params(out);
    for (Block& blk : blocks_) {
        blk.conv1.collect_params(out);
        blk.conv2.collect_params(out);
    }
    head_s_.collect_params(out);
    head_t_.collect_params(out);
    out.push_back(&s_scale_);
}

void ResidualConditioner::collect_norms(std::vector<BatchNorm*>& out) {
    for (Block& blk : blocks_) {
        out.push_back(&blk.bn1);
        out.push_back(&blk.bn2);
    }
    out.push_back(&out_bn_);
}

void ResidualConditioner::collect_weight_scales(std::vector<Parameter*>& out) {
    out.push_back(in_conv_.scale_param());
    for (Block& blk : blocks_) {
        out.push_back(blk.conv1.scale_param());
        out.push_back(blk.conv2.scale_param());
    }
    out.push_back(&s_scale_);
}

std::unique_ptr<ResidualConditioner> make_residual_conditioner(const std::string& name,
                                                               const ConditionerConfig& cfg,
                                                               Rng& init_rng) {
    return std::make_unique<ResidualConditioner>(name, cfg, init_rng);
}

}  // namespace nvp
