#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nvp/tensor.hpp"

namespace nvp {

struct ImageU8 {
    int64_t height = 0;
    int64_t width = 0;
    int64_t channels = 1;  // 1 (PGM) or 3 (PPM)
    std::vector<uint8_t> pixels;
};

// Binary netpbm: P5 for single-channel, P6 for three-channel images.
void write_pnm(const std::string& path, const ImageU8& img);
ImageU8 read_pnm(const std::string& path);

// Display mapping for model-space samples: inverse logit, scale to [0,256),
// floor, clamp to [0,255]. u is [H,W,C].
ImageU8 u_to_pixels(const Tensor& u);

// Tiles equally sized cells into a rows x cols grid with a 1-pixel frame.
ImageU8 tile_grid(const std::vector<ImageU8>& cells, int64_t rows, int64_t cols,
                  uint8_t frame = 255);

}  // namespace nvp
