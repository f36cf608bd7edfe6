#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "nvp/random.hpp"
#include "nvp/tensor.hpp"

namespace nvp {

// alpha of the logit preprocessing u = logit(alpha + (1-alpha) * x / 256)
inline constexpr double kLogitAlpha = 0.05;

/// In-memory store of H x W x C unsigned 8-bit images.
struct ImageDataset {
    int64_t height = 0;
    int64_t width = 0;
    int64_t channels = 0;
    int64_t count = 0;
    std::vector<uint8_t> pixels;  // count * h * w * c bytes, row-major

    int64_t image_size() const { return height * width * channels; }
    std::span<const uint8_t> image(int64_t i) const {
        return {pixels.data() + i * image_size(), static_cast<size_t>(image_size())};
    }
};

/// ImageDataset plus one attribute bit-vector per image.
struct LabeledDataset {
    ImageDataset images;
    int64_t attr_bits = 0;
    std::vector<uint8_t> labels;  // count * attr_bits entries in {0,1}

    Tensor label_tensor(std::span<const int64_t> indices) const;
};

// Binary container: magic "NVPD", u32 version, u32 count, u16 H, u16 W,
// u16 C, then count*H*W*C raw bytes, little-endian throughout.
void save_nvpd(const std::string& path, const ImageDataset& ds);
ImageDataset load_nvpd(const std::string& path);

// Adds Uniform[0,1) jitter per component: output lies in [pixel, pixel+1).
Tensor dequantize(const ImageDataset& ds, std::span<const int64_t> indices, Rng& rng);
Tensor dequantize(std::span<const uint8_t> pixels, Shape shape, Rng& rng);

// u = logit(alpha + (1-alpha) * x/256) with exact per-sample log-det
// accounting; input components must lie in [0,256). x has a leading batch
// dim; the log-det sums over the per-sample dims.
std::pair<Tensor, Tensor> logit_transform(const Tensor& x);
Tensor logit_inverse(const Tensor& u);

// bpd = -(log p_U(u) + logit log-det) / (D * ln 2)
double bits_per_dim(double log_lik_u, double logit_log_det, int64_t dims);

// Reverses the width axis of an [H,W,C] or [N,H,W,C] tensor when applied.
Tensor horizontal_flip(const Tensor& x, bool apply);
void flip_pixels_u8(std::span<uint8_t> image, int64_t h, int64_t w, int64_t c);

// ---- toy 2-d generators ----

enum class Toy2dKind { mixture4, two_moons, checkerboard };

Toy2dKind toy2d_kind_from_string(const std::string& name);

struct Toy2dData {
    Tensor samples;  // [n,2]
    // Exact density evaluator when the ground truth has closed form
    // (mixture4 and checkerboard); empty for two_moons.
    std::function<double(double, double)> density;
};

// 4-component symmetric Gaussian mixture geometry (shared with tests).
inline constexpr double kMix4Radius = 2.0;
inline constexpr double kMix4Sigma = 0.6;

Toy2dData gen_toy2d(Toy2dKind kind, int64_t n, uint64_t seed);

// ---- procedural sprite corpus (gradients, rectangles, noise textures) ----

LabeledDataset make_sprites(int64_t n, int64_t h, int64_t w, uint64_t seed);
ImageDataset make_uniform_pixels(int64_t n, int64_t h, int64_t w, int64_t c, uint64_t seed);

// ---- plain CSV (two columns; header optional on read) ----

void write_csv2d(const std::string& path, const Tensor& samples);
Tensor read_csv2d(const std::string& path);

// Attribute sidecar: one CSV row of 0/1 bits per image.
void write_labels_csv(const std::string& path, const std::vector<uint8_t>& labels,
                      int64_t attr_bits);
std::pair<std::vector<uint8_t>, int64_t> read_labels_csv(const std::string& path);

}  // namespace nvp
