#pragma once

#include "nvp/tensor.hpp"

namespace nvp {

enum class MaskKind { checkerboard, channelwise };

/// Binary coupling mask. Entries are exactly 0 or 1; positions with value 1
/// are the pass-through partition. `inverse` holds the complement pattern.
struct Mask {
    Tensor pattern;   // checkerboard: [H,W,C]; channelwise: [C]
    Tensor inverse;   // 1 - pattern
    MaskKind kind;
    int parity;       // 0 or 1
};

// Checkerboard: entry at spatial coordinate (i,j) is 1 iff (i+j+parity) is
// odd, replicated across channels.
Mask make_checkerboard_mask(int64_t height, int64_t width, int64_t channels, int parity);

// Channelwise: the first half of the channels is 1 when parity=0, the
// complement when parity=1. Channel count must be even.
Mask make_channel_mask(int64_t channels, int parity);

}  // namespace nvp
