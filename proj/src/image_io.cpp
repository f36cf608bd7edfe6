#include "nvp/image_io.hpp"

#include <cmath>
#include <fstream>

#include "nvp/datapipe.hpp"

namespace nvp {

void write_pnm(const std::string& path, const ImageU8& img) {
    if (img.channels != 1 && img.channels != 3) {
        throw IoError("pnm supports 1 or 3 channels, got " + std::to_string(img.channels));
    }
    if (static_cast<int64_t>(img.pixels.size()) != img.height * img.width * img.channels) {
        throw IoError("pnm pixel buffer does not match dimensions");
    }
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open " + path + " for writing");
    os << (img.channels == 1 ? "P5" : "P6") << "\n"
       << img.width << " " << img.height << "\n255\n";
    os.write(reinterpret_cast<const char*>(img.pixels.data()),
             static_cast<std::streamsize>(img.pixels.size()));
    if (!os) throw IoError("write failure on " + path);
}

namespace {
int64_t pnm_token(std::istream& is, const std::string& path) {
    // skips whitespace and '#' comments
    int c = is.get();
    while (c != EOF && (std::isspace(c) || c == '#')) {
        if (c == '#') {
            while (c != EOF && c != '\n') c = is.get();
        }
        c = is.get();
    }
    if (c == EOF) throw IoError(path + ": truncated pnm header");
    int64_t v = 0;
    bool any = false;
    while (c != EOF && std::isdigit(c)) {
        v = v * 10 + (c - '0');
        any = true;
        c = is.get();
    }
    if (!any) throw IoError(path + ": malformed pnm header");
    return v;
}
}  // namespace

ImageU8 read_pnm(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path);
    char p, kind;
    is.get(p);
    is.get(kind);
    if (p != 'P' || (kind != '5' && kind != '6')) {
        throw IoError(path + ": not a binary P5/P6 file");
    }
    ImageU8 img;
    img.channels = kind == '5' ? 1 : 3;
    img.width = pnm_token(is, path);
    img.height = pnm_token(is, path);
    const int64_t maxval = pnm_token(is, path);
    if (maxval != 255) throw IoError(path + ": unsupported maxval " + std::to_string(maxval));
    const int64_t n = img.height * img.width * img.channels;
    img.pixels.resize(static_cast<size_t>(n));
    is.read(reinterpret_cast<char*>(img.pixels.data()), n);
    if (is.gcount() != n) throw IoError(path + ": truncated pnm payload");
    return img;
}

ImageU8 u_to_pixels(const Tensor& u) {
    if (u.rank() != 3) throw ShapeError("u_to_pixels expects [H,W,C], got " + shape_str(u.shape()));
    ImageU8 img;
    img.height = u.dim(0);
    img.width = u.dim(1);
    img.channels = u.dim(2);
    Tensor x = logit_inverse(u);
    img.pixels.resize(static_cast<size_t>(x.numel()));
    for (int64_t i = 0; i < x.numel(); ++i) {
        const double v = std::floor(static_cast<double>(x[i]));
        img.pixels[static_cast<size_t>(i)] =
            static_cast<uint8_t>(std::clamp(v, 0.0, 255.0));
    }
    return img;
}

ImageU8 tile_grid(const std::vector<ImageU8>& cells, int64_t rows, int64_t cols, uint8_t frame) {
    if (cells.empty() || rows < 1 || cols < 1 ||
        static_cast<int64_t>(cells.size()) > rows * cols) {
        throw IoError("tile_grid: bad grid geometry");
    }
    const int64_t h = cells[0].height, w = cells[0].width, c = cells[0].channels;
    for (const ImageU8& cell : cells) {
        if (cell.height != h || cell.width != w || cell.channels != c) {
            throw IoError("tile_grid: cells must share dimensions");
        }
    }
    ImageU8 grid;
    grid.channels = c;
    grid.height = rows * (h + 1) + 1;
    grid.width = cols * (w + 1) + 1;
    grid.pixels.assign(static_cast<size_t>(grid.height * grid.width * c), frame);
    for (size_t k = 0; k < cells.size(); ++k) {
        const int64_t r = static_cast<int64_t>(k) / cols;
        const int64_t col = static_cast<int64_t>(k) % cols;
        const int64_t oi = 1 + r * (h + 1);
        const int64_t oj = 1 + col * (w + 1);
        for (int64_t i = 0; i < h; ++i) {
            const uint8_t* src = cells[k].pixels.data() + i * w * c;
            uint8_t* dst = grid.pixels.data() + ((oi + i) * grid.width + oj) * c;
            for (int64_t j = 0; j < w * c; ++j) dst[j] = src[j];
        }
    }
    return grid;
}

}  // namespace nvp
