#include "nvp/mask.hpp"

namespace nvp {

Mask make_checkerboard_mask(int64_t height, int64_t width, int64_t channels, int parity) {
    if (height < 1 || width < 1 || channels < 1) {
        throw ShapeError("checkerboard mask requires positive extents");
    }
    if (parity != 0 && parity != 1) throw ShapeError("mask parity must be 0 or 1");
    Mask m{Tensor({height, width, channels}), Tensor({height, width, channels}),
           MaskKind::checkerboard, parity};
    for (int64_t i = 0; i < height; ++i) {
        for (int64_t j = 0; j < width; ++j) {
            const real_t on = ((i + j + parity) % 2 == 1) ? real_t(1) : real_t(0);
            for (int64_t c = 0; c < channels; ++c) {
                m.pattern.at({i, j, c}) = on;
                m.inverse.at({i, j, c}) = 1 - on;
            }
        }
    }
    return m;
}

Mask make_channel_mask(int64_t channels, int parity) {
    if (channels < 2 || channels % 2 != 0) {
        throw ShapeError("channel mask requires an even channel count >= 2, got " +
                         std::to_string(channels));
    }
    if (parity != 0 && parity != 1) throw ShapeError("mask parity must be 0 or 1");
    Mask m{Tensor({channels}), Tensor({channels}), MaskKind::channelwise, parity};
    const int64_t half = channels / 2;  // first ceil(c/2) channels pass through at parity 0
    for (int64_t c = 0; c < channels; ++c) {
        const bool first_half = c < half;
        const real_t on = (first_half == (parity == 0)) ? real_t(1) : real_t(0);
        m.pattern[c] = on;
        m.inverse[c] = 1 - on;
    }
    return m;
}

}  // namespace nvp
