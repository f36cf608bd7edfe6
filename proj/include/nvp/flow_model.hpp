#pragma once

#include "nvp/bijection.hpp"

namespace nvp {

inline constexpr double kLog2Pi = 1.8378770664093454836;

struct FlowConfig {
    int64_t height = 8;
    int64_t width = 8;
    int64_t channels = 1;
    int num_levels = 2;        // L: levels 1..L-1 are scale blocks, level L is the final block
    int checker_couplings = 3;  // per scale block, before the squeeze
    int channel_couplings = 3;  // per scale block, after the squeeze
    int final_couplings = 4;    // checkerboard couplings at the final scale
    int64_t hidden = 8;         // conditioner feature maps; doubles at each scale
    int res_blocks = 1;
    int kernel = 3;
    real_t bn_eps = real_t(1e-5);
    real_t bn_momentum = real_t(0.99);
    int64_t attr_bits = 0;  // > 0 builds a conditional model
    uint64_t init_seed = 1;
};

/// Multi-scale real-valued bijection stack with a standard isotropic Gaussian
/// prior. Each scale block runs checkerboard couplings, a squeeze, and
/// channel-wise couplings (a batch-norm bijection follows every coupling),
/// then factors the channel-wise first half of the tensor out into the
/// latent; the final scale runs checkerboard couplings only. Latents are
/// concatenated finest scale first, so the coarsest-scale part sits at the
/// end of the z vector.
///
/// Train-mode forward mutates running statistics when ctx.update_stats is
/// set; in eval mode the model is a fixed bijection and nothing is written,
/// so concurrent likelihood/sampling calls are safe.
class FlowModel {
public:
    explicit FlowModel(FlowConfig cfg);

    struct ForwardResult {
        std::vector<Var> z_parts;  // z^(1) ... z^(L)
        Var log_det;               // [N]
    };

    // Differentiable forward pass over a [N,H,W,C] input.
    ForwardResult forward_parts(FlowCtx& ctx, Var x);

    // Eval-mode encode to the concatenated latent [N,D]; optionally reports
    // the per-sample log-det.
    Tensor encode(const Tensor& x, Tensor* log_det = nullptr, const Tensor* attrs = nullptr);

    // Exact inverse of encode. height/width (default: the build shape) let a
    // fully convolutional model decode at scaled spatial sizes.
    Tensor decode(const Tensor& z, const Tensor* attrs = nullptr, int64_t height = 0,
                  int64_t width = 0);

    // Per-sample log p_X(x) under the prior plus log-det (eval mode).
    Tensor log_likelihood(const Tensor& x, const Tensor* attrs = nullptr);

    // Draw n exact samples: z from the prior, x = decode(z). Deterministic
    // given the seed.
    Tensor sample(int64_t n, uint64_t seed, const Tensor* attrs = nullptr, int64_t height = 0,
                  int64_t width = 0);

    // Shapes of z^(1)..z^(L) for the given spatial size; validates the size.
    std::vector<Shape> factored_shapes(int64_t height = 0, int64_t width = 0) const;
    int64_t dim(int64_t height = 0, int64_t width = 0) const;
    Shape input_shape() const { return {cfg_.height, cfg_.width, cfg_.channels}; }
    const FlowConfig& config() const { return cfg_; }
    bool conditional() const { return cfg_.attr_bits > 0; }

    void collect_params(std::vector<Parameter*>& out);
    void collect_norms(std::vector<BatchNorm*>& out);
    void collect_weight_scales(std::vector<Parameter*>& out);
    const std::vector<std::pair<std::string, int64_t>>& conditioner_widths() const {
        return widths_;
    }
    void set_bn_momentum(real_t m);

    // log N(z; 0, I) summed per sample for a [N,D] latent.
    static Tensor prior_log_density(const Tensor& z);

private:
    void check_input(const Tensor& x, const Tensor* attrs) const;

    FlowConfig cfg_;
    std::vector<Composite> levels_;  // L-1 scale blocks (squeeze included)
    Composite final_;
    std::vector<std::pair<std::string, int64_t>> widths_;
};

// Plain-tensor channel concat used when assembling decode inputs.
Tensor concat_channels_plain(const Tensor& a, const Tensor& b);

// Two-angle latent manifold spanned by four anchors z ([4,D]):
// cos(phi) (cos(phi') z1 + sin(phi') z2) + sin(phi) (cos(phi') z3 + sin(phi') z4).
Tensor manifold_interpolate(const Tensor& anchors, double phi, double phi_prime);

}  // namespace nvp
