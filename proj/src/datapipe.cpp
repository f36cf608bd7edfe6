#include "nvp/datapipe.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace nvp {

// ---------------------------------------------------------------------------
// NVPD container
// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'N', 'V', 'P', 'D'};
constexpr uint32_t kNvpdVersion = 1;

void put_u32(std::ostream& os, uint32_t v) {
    char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                 static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
    os.write(b, 4);
}

void put_u16(std::ostream& os, uint16_t v) {
    char b[2] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff)};
    os.write(b, 2);
}

uint32_t get_u32(std::istream& is, size_t offset, const std::string& path) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4)) {
        throw IoError(path + ": truncated header at offset " + std::to_string(offset));
    }
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

uint16_t get_u16(std::istream& is, size_t offset, const std::string& path) {
    unsigned char b[2];
    if (!is.read(reinterpret_cast<char*>(b), 2)) {
        throw IoError(path + ": truncated header at offset " + std::to_string(offset));
    }
    return static_cast<uint16_t>(b[0] | (b[1] << 8));
}

}  // namespace

void save_nvpd(const std::string& path, const ImageDataset& ds) {
    if (ds.count * ds.image_size() != static_cast<int64_t>(ds.pixels.size())) {
        throw IoError("dataset pixel store does not match count * H * W * C");
    }
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open " + path + " for writing");
    os.write(kMagic, 4);
    put_u32(os, kNvpdVersion);
    put_u32(os, static_cast<uint32_t>(ds.count));
    put_u16(os, static_cast<uint16_t>(ds.height));
    put_u16(os, static_cast<uint16_t>(ds.width));
    put_u16(os, static_cast<uint16_t>(ds.channels));
    os.write(reinterpret_cast<const char*>(ds.pixels.data()),
             static_cast<std::streamsize>(ds.pixels.size()));
    if (!os) throw IoError("write failure on " + path);
}

ImageDataset load_nvpd(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path);
    char magic[4];
    if (!is.read(magic, 4)) throw IoError(path + ": truncated header at offset 0");
    if (std::memcmp(magic, kMagic, 4) != 0) {
        throw IoError(path + ": bad magic at offset 0");
    }
    const uint32_t version = get_u32(is, 4, path);
    if (version != kNvpdVersion) {
        throw IoError(path + ": unsupported version " + std::to_string(version) +
                      " at offset 4");
    }
    ImageDataset ds;
    ds.count = get_u32(is, 8, path);
    ds.height = get_u16(is, 12, path);
    ds.width = get_u16(is, 14, path);
    ds.channels = get_u16(is, 16, path);
    if (ds.count > 0 && (ds.height < 1 || ds.width < 1 || ds.channels < 1)) {
        throw IoError(path + ": invalid dimensions in header");
    }
    const int64_t expected = ds.count * ds.image_size();
    ds.pixels.resize(static_cast<size_t>(expected));
    is.read(reinterpret_cast<char*>(ds.pixels.data()), expected);
    if (is.gcount() != expected) {
        throw IoError(path + ": truncated payload at offset 18: expected " +
                      std::to_string(expected) + " bytes, got " + std::to_string(is.gcount()));
    }
    return ds;
}

// ---------------------------------------------------------------------------
// preprocessing
// ---------------------------------------------------------------------------

Tensor dequantize(std::span<const uint8_t> pixels, Shape shape, Rng& rng) {
    Tensor out(std::move(shape));
    if (out.numel() != static_cast<int64_t>(pixels.size())) {
        throw ShapeError("dequantize: pixel count does not match shape");
    }
    for (int64_t i = 0; i < out.numel(); ++i) {
        out[i] = static_cast<real_t>(pixels[static_cast<size_t>(i)] + rng.uniform());
    }
    return out;
}

Tensor dequantize(const ImageDataset& ds, std::span<const int64_t> indices, Rng& rng) {
    const int64_t n = static_cast<int64_t>(indices.size());
    Tensor out({n, ds.height, ds.width, ds.channels});
    const int64_t per = ds.image_size();
    for (int64_t s = 0; s < n; ++s) {
        const auto img = ds.image(indices[static_cast<size_t>(s)]);
        real_t* dst = out.data() + s * per;
        for (int64_t i = 0; i < per; ++i) {
            dst[i] = static_cast<real_t>(img[static_cast<size_t>(i)] + rng.uniform());
        }
    }
    return out;
}

std::pair<Tensor, Tensor> logit_transform(const Tensor& x) {
    if (x.rank() < 2) throw ShapeError("logit_transform expects a leading batch dim");
    const int64_t n = x.dim(0);
    const int64_t per = x.numel() / n;
    Tensor u(x.shape());
    Tensor log_det({n});
    const double a = kLogitAlpha;
    const double log_scale = std::log(1.0 - a) - std::log(256.0);
    for (int64_t s = 0; s < n; ++s) {
        double acc = 0;
        const real_t* px = x.data() + s * per;
        real_t* pu = u.data() + s * per;
        for (int64_t i = 0; i < per; ++i) {
            const double xi = px[i];
            if (!(xi >= 0.0 && xi < 256.0)) {
                throw DomainError("logit_transform input " + std::to_string(xi) +
                                  " outside [0,256)");
            }
            const double p = a + (1.0 - a) * xi / 256.0;
            pu[i] = static_cast<real_t>(std::log(p) - std::log1p(-p));
            acc += log_scale - std::log(p) - std::log1p(-p);
        }
        log_det[s] = static_cast<real_t>(acc);
    }
    return {std::move(u), std::move(log_det)};
}

Tensor logit_inverse(const Tensor& u) {
    Tensor x(u.shape());
    const double a = kLogitAlpha;
    for (int64_t i = 0; i < u.numel(); ++i) {
        const double sig = 1.0 / (1.0 + std::exp(-static_cast<double>(u[i])));
        x[i] = static_cast<real_t>(256.0 * (sig - a) / (1.0 - a));
    }
    return x;
}

double bits_per_dim(double log_lik_u, double logit_log_det, int64_t dims) {
    if (dims < 1) throw DomainError("bits_per_dim requires dims >= 1");
    return -(log_lik_u + logit_log_det) / (static_cast<double>(dims) * std::log(2.0));
}

Tensor horizontal_flip(const Tensor& x, bool apply) {
    if (!apply) return x;
    int64_t n = 1, h, w, c;
    if (x.rank() == 3) {
        h = x.dim(0);
        w = x.dim(1);
        c = x.dim(2);
    } else if (x.rank() == 4) {
        n = x.dim(0);
        h = x.dim(1);
        w = x.dim(2);
        c = x.dim(3);
    } else {
        throw ShapeError("horizontal_flip expects [H,W,C] or [N,H,W,C], got " +
                         shape_str(x.shape()));
    }
    Tensor out(x.shape());
    for (int64_t s = 0; s < n; ++s) {
        for (int64_t i = 0; i < h; ++i) {
            for (int64_t j = 0; j < w; ++j) {
                const real_t* src = x.data() + (((s * h + i) * w) + j) * c;
                real_t* dst = out.data() + (((s * h + i) * w) + (w - 1 - j)) * c;
                for (int64_t k = 0; k < c; ++k) dst[k] = src[k];
            }
        }
    }
    return out;
}

void flip_pixels_u8(std::span<uint8_t> image, int64_t h, int64_t w, int64_t c) {
    for (int64_t i = 0; i < h; ++i) {
        for (int64_t j = 0; j < w / 2; ++j) {
            uint8_t* a = image.data() + ((i * w) + j) * c;
            uint8_t* b = image.data() + ((i * w) + (w - 1 - j)) * c;
            for (int64_t k = 0; k < c; ++k) std::swap(a[k], b[k]);
        }
    }
}

// ---------------------------------------------------------------------------
// toy 2-d generators
// ---------------------------------------------------------------------------

Toy2dKind toy2d_kind_from_string(const std::string& name) {
    if (name == "mixture4") return Toy2dKind::mixture4;
    if (name == "two-moons" || name == "two_moons") return Toy2dKind::two_moons;
    if (name == "checkerboard") return Toy2dKind::checkerboard;
    throw ConfigError("unknown toy 2-d dataset kind '" + name + "'");
}

namespace {

constexpr double kTwoPi = 6.28318530717958647692;

Toy2dData gen_mixture4(int64_t n, uint64_t seed) {
    Rng rng(seed);
    Toy2dData out;
    out.samples = Tensor({n, 2});
    const double r = kMix4Radius, s = kMix4Sigma;
    const double cx[4] = {r, r, -r, -r};
    const double cy[4] = {r, -r, r, -r};
    for (int64_t i = 0; i < n; ++i) {
        const int64_t k = rng.uniform_int(4);
        out.samples[2 * i] = static_cast<real_t>(cx[k] + s * rng.normal());
        out.samples[2 * i + 1] = static_cast<real_t>(cy[k] + s * rng.normal());
    }
    out.density = [=](double x, double y) {
        double acc = 0;
        for (int k = 0; k < 4; ++k) {
            const double dx = x - cx[k], dy = y - cy[k];
            acc += std::exp(-(dx * dx + dy * dy) / (2 * s * s));
        }
        return acc / (4.0 * kTwoPi * s * s);
    };
    return out;
}

Toy2dData gen_two_moons(int64_t n, uint64_t seed) {
    Rng rng(seed);
    Toy2dData out;
    out.samples = Tensor({n, 2});
    const double noise = 0.1;
    for (int64_t i = 0; i < n; ++i) {
        const double t = rng.uniform() * kTwoPi / 2.0;  // [0, pi)
        double x, y;
        if (rng.uniform_int(2) == 0) {
            x = std::cos(t);
            y = std::sin(t) - 0.25;
        } else {
            x = 1.0 - std::cos(t);
            y = 0.25 - std::sin(t);
        }
        out.samples[2 * i] = static_cast<real_t>(2.0 * (x - 0.5) + noise * rng.normal());
        out.samples[2 * i + 1] = static_cast<real_t>(2.0 * y + noise * rng.normal());
    }
    return out;  // no closed-form density
}

Toy2dData gen_checkerboard(int64_t n, uint64_t seed) {
    Rng rng(seed);
    Toy2dData out;
    out.samples = Tensor({n, 2});
    // cells of size 1 on [-4,4)^2 where floor(x)+floor(y) is even
    for (int64_t i = 0; i < n; ++i) {
        int64_t cx, cy;
        do {
            cx = rng.uniform_int(8) - 4;
            cy = rng.uniform_int(8) - 4;
        } while ((((cx + cy) % 2) + 2) % 2 != 0);
        out.samples[2 * i] = static_cast<real_t>(cx + rng.uniform());
        out.samples[2 * i + 1] = static_cast<real_t>(cy + rng.uniform());
    }
    out.density = [](double x, double y) {
        if (x < -4 || x >= 4 || y < -4 || y >= 4) return 0.0;
        const int64_t cx = static_cast<int64_t>(std::floor(x));
        const int64_t cy = static_cast<int64_t>(std::floor(y));
        return ((((cx + cy) % 2) + 2) % 2 == 0) ? 1.0 / 32.0 : 0.0;
    };
    return out;
}

}  // namespace

Toy2dData gen_toy2d(Toy2dKind kind, int64_t n, uint64_t seed) {
    if (n < 1) throw DomainError("gen_toy2d requires n >= 1");
    switch (kind) {
        case Toy2dKind::mixture4: return gen_mixture4(n, seed);
        case Toy2dKind::two_moons: return gen_two_moons(n, seed);
        case Toy2dKind::checkerboard: return gen_checkerboard(n, seed);
    }
    throw ConfigError("unknown toy 2-d dataset kind");
}

// ---------------------------------------------------------------------------
// sprites
// ---------------------------------------------------------------------------

namespace {
uint8_t clamp255(double v) {
    return static_cast<uint8_t>(std::clamp(v, 0.0, 255.0));
}
}  // namespace

LabeledDataset make_sprites(int64_t n, int64_t h, int64_t w, uint64_t seed) {
    if (n < 1 || h < 2 || w < 2) throw DomainError("sprites require n >= 1 and extents >= 2");
    Rng rng(seed);
    LabeledDataset out;
    out.images = ImageDataset{h, w, 1, n, std::vector<uint8_t>(static_cast<size_t>(n * h * w))};
    out.attr_bits = 3;
    out.labels.assign(static_cast<size_t>(n * 3), 0);
    for (int64_t s = 0; s < n; ++s) {
        uint8_t* img = out.images.pixels.data() + s * h * w;
        const int64_t kind = rng.uniform_int(3);
        out.labels[static_cast<size_t>(s * 3 + kind)] = 1;
        // Every sprite carries a small per-pixel texture so the corpus keeps
        // a per-pixel entropy floor above the dequantization jitter.
        const double grain = rng.uniform(4.0, 10.0);
        if (kind == 0) {
            // linear ramp in a random direction
            const double theta = rng.uniform(0.0, kTwoPi);
            const double base = rng.uniform(0.0, 60.0);
            const double amp = rng.uniform(120.0, 195.0);
            for (int64_t i = 0; i < h; ++i) {
                for (int64_t j = 0; j < w; ++j) {
                    const double u = static_cast<double>(j) / static_cast<double>(w - 1) - 0.5;
                    const double v = static_cast<double>(i) / static_cast<double>(h - 1) - 0.5;
                    const double ramp =
                        std::clamp(0.5 + u * std::cos(theta) + v * std::sin(theta), 0.0, 1.0);
                    img[i * w + j] = clamp255(base + amp * ramp +
                                              (rng.uniform() * 2.0 - 1.0) * grain);
                }
            }
        } else if (kind == 1) {
            // filled rectangle on a dark background
            const double bg = rng.uniform(0.0, 60.0);
            const double fg = rng.uniform(150.0, 255.0);
            const int64_t x0 = rng.uniform_int(w - 1);
            const int64_t x1 = x0 + 1 + rng.uniform_int(w - 1 - x0);
            const int64_t y0 = rng.uniform_int(h - 1);
            const int64_t y1 = y0 + 1 + rng.uniform_int(h - 1 - y0);
            for (int64_t i = 0; i < h; ++i) {
                for (int64_t j = 0; j < w; ++j) {
                    const bool inside = i >= y0 && i <= y1 && j >= x0 && j <= x1;
                    img[i * w + j] = clamp255((inside ? fg : bg) +
                                              (rng.uniform() * 2.0 - 1.0) * grain);
                }
            }
        } else {
            // uniform noise texture around a random mean
            const double mean = rng.uniform(60.0, 180.0);
            const double amp = rng.uniform(10.0, 40.0);
            for (int64_t i = 0; i < h * w; ++i) {
                img[i] = clamp255(mean + (rng.uniform() * 2.0 - 1.0) * amp);
            }
        }
    }
    return out;
}

ImageDataset make_uniform_pixels(int64_t n, int64_t h, int64_t w, int64_t c, uint64_t seed) {
    Rng rng(seed);
    ImageDataset ds{h, w, c, n, std::vector<uint8_t>(static_cast<size_t>(n * h * w * c))};
    for (auto& px : ds.pixels) px = static_cast<uint8_t>(rng.uniform_int(256));
    return ds;
}

Tensor LabeledDataset::label_tensor(std::span<const int64_t> indices) const {
    Tensor out({static_cast<int64_t>(indices.size()), attr_bits});
    for (size_t s = 0; s < indices.size(); ++s) {
        for (int64_t k = 0; k < attr_bits; ++k) {
            out[static_cast<int64_t>(s) * attr_bits + k] =
                static_cast<real_t>(labels[static_cast<size_t>(indices[s] * attr_bits + k)]);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

void write_csv2d(const std::string& path, const Tensor& samples) {
    if (samples.rank() != 2 || samples.dim(1) != 2) {
        throw ShapeError("write_csv2d expects [N,2], got " + shape_str(samples.shape()));
    }
    std::ofstream os(path);
    if (!os) throw IoError("cannot open " + path + " for writing");
    os << "x0,x1\n";
    char buf[96];
    for (int64_t i = 0; i < samples.dim(0); ++i) {
        std::snprintf(buf, sizeof(buf), "%.17g,%.17g\n", static_cast<double>(samples[2 * i]),
                      static_cast<double>(samples[2 * i + 1]));
        os << buf;
    }
    if (!os) throw IoError("write failure on " + path);
}

Tensor read_csv2d(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open " + path);
    std::vector<real_t> vals;
    std::string line;
    int64_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string a, b;
        if (!std::getline(ls, a, ',') || !std::getline(ls, b)) {
            throw IoError(path + ": line " + std::to_string(lineno) + " is not two columns");
        }
        char* end = nullptr;
        const double va = std::strtod(a.c_str(), &end);
        if (end == a.c_str()) {
            if (lineno == 1) continue;  // header
            throw IoError(path + ": non-numeric value at line " + std::to_string(lineno));
        }
        const double vb = std::strtod(b.c_str(), &end);
        if (end == b.c_str()) {
            throw IoError(path + ": non-numeric value at line " + std::to_string(lineno));
        }
        vals.push_back(static_cast<real_t>(va));
        vals.push_back(static_cast<real_t>(vb));
    }
    if (vals.empty()) throw IoError(path + ": no samples");
    const int64_t rows = static_cast<int64_t>(vals.size()) / 2;
    return Tensor({rows, 2}, std::move(vals));
}

void write_labels_csv(const std::string& path, const std::vector<uint8_t>& labels,
                      int64_t attr_bits) {
    if (attr_bits < 1 || labels.size() % static_cast<size_t>(attr_bits) != 0) {
        throw ShapeError("labels size is not a multiple of attr_bits");
    }
    std::ofstream os(path);
    if (!os) throw IoError("cannot open " + path + " for writing");
    const int64_t n = static_cast<int64_t>(labels.size()) / attr_bits;
    for (int64_t i = 0; i < n; ++i) {
        for (int64_t k = 0; k < attr_bits; ++k) {
            if (k) os << ',';
            os << static_cast<int>(labels[static_cast<size_t>(i * attr_bits + k)]);
        }
        os << '\n';
    }
    if (!os) throw IoError("write failure on " + path);
}

std::pair<std::vector<uint8_t>, int64_t> read_labels_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open " + path);
    std::vector<uint8_t> labels;
    int64_t attr_bits = 0;
    std::string line;
    int64_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string field;
        int64_t bits = 0;
        while (std::getline(ls, field, ',')) {
            if (field != "0" && field != "1") {
                throw IoError(path + ": label at line " + std::to_string(lineno) +
                              " is not a 0/1 bit");
            }
            labels.push_back(field == "1" ? 1 : 0);
            ++bits;
        }
        if (attr_bits == 0) {
            attr_bits = bits;
        } else if (bits != attr_bits) {
            throw IoError(path + ": inconsistent attribute count at line " +
                          std::to_string(lineno));
        }
    }
    if (attr_bits == 0) throw IoError(path + ": no labels");
    return {std::move(labels), attr_bits};
}

}  // namespace nvp
