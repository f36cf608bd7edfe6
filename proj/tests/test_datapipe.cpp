#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "nvp/datapipe.hpp"
#include "testutil.hpp"

using namespace nvp;
namespace fs = std::filesystem;

namespace {
std::string temp_path(const std::string& name) {
    return (fs::temp_directory_path() / ("nvp_datapipe_" + name)).string();
}
}  // namespace

TEST_CASE("dequantize stays within [pixel, pixel+1) and is seed-deterministic") {
    ImageDataset ds{2, 2, 1, 2, {10, 20, 30, 40, 50, 60, 70, 80}};
    const std::vector<int64_t> idx{0, 1};
    Rng r1(5), r2(5), r3(6);
    Tensor a = dequantize(ds, idx, r1);
    Tensor b = dequantize(ds, idx, r2);
    Tensor c = dequantize(ds, idx, r3);
    REQUIRE(a.shape() == Shape{2, 2, 2, 1});
    bool any_diff = false;
    for (int64_t i = 0; i < 8; ++i) {
        const double px = ds.pixels[static_cast<size_t>(i)];
        CHECK(a[i] >= px);
        CHECK(a[i] < px + 1);
        CHECK(a[i] == b[i]);
        any_diff = any_diff || a[i] != c[i];
    }
    CHECK(any_diff);
}

TEST_CASE("jitter mean converges to 0.5") {
    const int64_t n = 100000;
    ImageDataset ds{1, 1, 1, n, std::vector<uint8_t>(static_cast<size_t>(n), 7)};
    std::vector<int64_t> idx(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) idx[static_cast<size_t>(i)] = i;
    Rng rng(11);
    Tensor x = dequantize(ds, idx, rng);
    double mean = 0;
    for (int64_t i = 0; i < n; ++i) mean += x[i] - 7.0;
    mean /= static_cast<double>(n);
    const double sd = std::sqrt(1.0 / 12.0 / static_cast<double>(n));
    CHECK(std::abs(mean - 0.5) < 3 * sd);
}

TEST_CASE("logit transform values match direct evaluation") {
    Tensor x({1, 2}, std::vector<real_t>{0, 128});
    auto [u, ld] = logit_transform(x);
    CHECK(static_cast<double>(u[0]) == doctest::Approx(std::log(0.05 / 0.95)).epsilon(1e-12));
    CHECK(static_cast<double>(u[0]) == doctest::Approx(-2.944439).epsilon(1e-6));
    CHECK(static_cast<double>(u[1]) == doctest::Approx(std::log(0.525 / 0.475)).epsilon(1e-12));
    CHECK(static_cast<double>(u[1]) == doctest::Approx(0.100083).epsilon(1e-5));
    CHECK(ld.shape() == Shape{1});
}

TEST_CASE("logit inverse undoes the transform within 1e-9") {
    Rng rng(13);
    Tensor x = rng.uniform_tensor({4, 16}, 0.0, 256.0);
    auto [u, ld] = logit_transform(x);
    (void)ld;
    Tensor back = logit_inverse(u);
    for (int64_t i = 0; i < x.numel(); ++i) {
        CHECK(std::abs(back[i] - x[i]) < 1e-9);
    }
}

TEST_CASE("logit log-det matches the numerical diagonal Jacobian") {
    Rng rng(17);
    Tensor x = rng.uniform_tensor({2, 5}, 1.0, 255.0);
    auto [u, ld] = logit_transform(x);
    (void)u;
    const double h = 1e-6;
    for (int64_t s = 0; s < 2; ++s) {
        double numeric = 0;
        for (int64_t i = 0; i < 5; ++i) {
            Tensor xp = x, xm = x;
            xp[s * 5 + i] += static_cast<real_t>(h);
            xm[s * 5 + i] -= static_cast<real_t>(h);
            const double up = logit_transform(xp).first[s * 5 + i];
            const double um = logit_transform(xm).first[s * 5 + i];
            numeric += std::log((up - um) / (2 * h));
        }
        CHECK(std::abs(static_cast<double>(ld[s]) - numeric) < 1e-6);
    }
}

TEST_CASE("logit transform rejects out-of-range input") {
    CHECK_THROWS_AS(logit_transform(Tensor({1, 1}, std::vector<real_t>{-0.5})), DomainError);
    CHECK_THROWS_AS(logit_transform(Tensor({1, 1}, std::vector<real_t>{256.0})), DomainError);
}

TEST_CASE("bits_per_dim: uniform pixel density gives exactly 8 bits") {
    for (int64_t d : {1, 4, 16}) {
        const double ld = 0.37 * static_cast<double>(d);  // arbitrary preprocessing log-det
        const double ll_u = -static_cast<double>(d) * std::log(256.0) - ld;
        CHECK(bits_per_dim(ll_u, ld, d) == doctest::Approx(8.0).epsilon(1e-12));
    }
    CHECK_THROWS_AS(bits_per_dim(0, 0, 0), DomainError);
}

TEST_CASE("doubling the density lowers bits/dim by exactly 1/D") {
    const int64_t d = 4;
    const double ll = -3.21, ld = 0.5;
    const double base = bits_per_dim(ll, ld, d);
    const double doubled = bits_per_dim(ll + std::log(2.0), ld, d);
    CHECK(base - doubled == doctest::Approx(1.0 / static_cast<double>(d)).epsilon(1e-12));
}

TEST_CASE("horizontal flip is an involution and reverses the width axis") {
    Tensor x({1, 2, 1}, std::vector<real_t>{1, 2});
    Tensor f = horizontal_flip(x, true);
    CHECK(f[0] == 2);
    CHECK(f[1] == 1);
    Rng rng(19);
    Tensor img = rng.normal_tensor({2, 3, 4, 2});
    Tensor ff = horizontal_flip(horizontal_flip(img, true), true);
    for (int64_t i = 0; i < img.numel(); ++i) CHECK(ff[i] == img[i]);
    Tensor same = horizontal_flip(img, false);
    for (int64_t i = 0; i < img.numel(); ++i) CHECK(same[i] == img[i]);

    std::vector<uint8_t> px{1, 2, 3, 4, 5, 6};
    flip_pixels_u8(px, 1, 3, 2);
    CHECK(px == std::vector<uint8_t>{5, 6, 3, 4, 1, 2});
}

TEST_CASE("mixture4 moments, density normalization, and determinism") {
    Toy2dData a = gen_toy2d(Toy2dKind::mixture4, 20000, 23);
    Toy2dData b = gen_toy2d(Toy2dKind::mixture4, 20000, 23);
    REQUIRE(a.samples.shape() == Shape{20000, 2});
    for (int64_t i = 0; i < 100; ++i) CHECK(a.samples[i] == b.samples[i]);

    double mx = 0, my = 0;
    for (int64_t i = 0; i < 20000; ++i) {
        mx += a.samples[2 * i];
        my += a.samples[2 * i + 1];
    }
    mx /= 20000;
    my /= 20000;
    const double sd =
        std::sqrt((kMix4Radius * kMix4Radius + kMix4Sigma * kMix4Sigma) / 20000.0);
    CHECK(std::abs(mx) < 3 * sd);  // symmetric mixture has zero mean
    CHECK(std::abs(my) < 3 * sd);

    REQUIRE(static_cast<bool>(a.density));
    const double mass = nvptest::trapezoid2d(a.density, -8, 8, 0.05);
    CHECK(mass == doctest::Approx(1.0).epsilon(1e-3));
}

TEST_CASE("checkerboard density is exact; two-moons provides samples only") {
    Toy2dData cb = gen_toy2d(Toy2dKind::checkerboard, 5000, 29);
    REQUIRE(static_cast<bool>(cb.density));
    for (int64_t i = 0; i < 5000; ++i) {
        CHECK(cb.density(cb.samples[2 * i], cb.samples[2 * i + 1]) ==
              doctest::Approx(1.0 / 32.0));
    }
    const double mass = nvptest::trapezoid2d(cb.density, -4.5, 4.5, 0.01);
    CHECK(mass == doctest::Approx(1.0).epsilon(2e-2));  // discontinuous integrand

    Toy2dData tm = gen_toy2d(Toy2dKind::two_moons, 100, 31);
    CHECK(!tm.density);
    for (int64_t i = 0; i < tm.samples.numel(); ++i) CHECK(std::isfinite(tm.samples[i]));
}

TEST_CASE("unknown toy kind is rejected") {
    CHECK_THROWS_AS(toy2d_kind_from_string("spiral"), ConfigError);
    CHECK_THROWS_AS(gen_toy2d(Toy2dKind::mixture4, 0, 1), DomainError);
}

TEST_CASE("nvpd round trip is bit-exact") {
    LabeledDataset sprites = make_sprites(37, 8, 8, 41);
    const std::string path = temp_path("roundtrip.nvpd");
    save_nvpd(path, sprites.images);
    ImageDataset back = load_nvpd(path);
    CHECK(back.count == 37);
    CHECK(back.height == 8);
    CHECK(back.width == 8);
    CHECK(back.channels == 1);
    REQUIRE(back.pixels.size() == sprites.images.pixels.size());
    CHECK(back.pixels == sprites.images.pixels);
    fs::remove(path);
}

TEST_CASE("nvpd corrupted header and truncation are rejected with offsets") {
    LabeledDataset sprites = make_sprites(4, 4, 4, 43);
    const std::string path = temp_path("corrupt.nvpd");
    save_nvpd(path, sprites.images);

    // bad magic
    {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(0);
        f.put('X');
    }
    try {
        load_nvpd(path);
        FAIL("expected IoError");
    } catch (const IoError& e) {
        CHECK(std::string(e.what()).find("offset 0") != std::string::npos);
    }

    // truncated payload: header claims more images than the payload holds
    save_nvpd(path, sprites.images);
    {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(8);
        const uint32_t count = 400;
        char b[4] = {static_cast<char>(count & 0xff), static_cast<char>(count >> 8), 0, 0};
        f.write(b, 4);
    }
    try {
        load_nvpd(path);
        FAIL("expected IoError");
    } catch (const IoError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("truncated payload") != std::string::npos);
        CHECK(msg.find("offset 18") != std::string::npos);
    }
    fs::remove(path);
}

TEST_CASE("nvpd rejects unsupported versions") {
    LabeledDataset sprites = make_sprites(2, 4, 4, 47);
    const std::string path = temp_path("version.nvpd");
    save_nvpd(path, sprites.images);
    {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(4);
        f.put(9);
    }
    CHECK_THROWS_AS(load_nvpd(path), IoError);
    fs::remove(path);
}

TEST_CASE("sprites are deterministic, in range, and carry one-hot labels") {
    LabeledDataset a = make_sprites(64, 8, 8, 53);
    LabeledDataset b = make_sprites(64, 8, 8, 53);
    CHECK(a.images.pixels == b.images.pixels);
    CHECK(a.labels == b.labels);
    CHECK(a.attr_bits == 3);
    for (int64_t i = 0; i < 64; ++i) {
        int sum = 0;
        for (int64_t k = 0; k < 3; ++k) sum += a.labels[static_cast<size_t>(i * 3 + k)];
        CHECK(sum == 1);
    }
    // all three kinds appear in a reasonable draw
    int kind_counts[3] = {0, 0, 0};
    for (int64_t i = 0; i < 64; ++i) {
        for (int64_t k = 0; k < 3; ++k) {
            if (a.labels[static_cast<size_t>(i * 3 + k)]) kind_counts[k]++;
        }
    }
    CHECK(kind_counts[0] > 0);
    CHECK(kind_counts[1] > 0);
    CHECK(kind_counts[2] > 0);
}

TEST_CASE("csv round trips for 2-d samples and labels") {
    Rng rng(59);
    Tensor samples = rng.normal_tensor({17, 2});
    const std::string path = temp_path("toy.csv");
    write_csv2d(path, samples);
    Tensor back = read_csv2d(path);
    REQUIRE(back.shape() == samples.shape());
    for (int64_t i = 0; i < samples.numel(); ++i) CHECK(back[i] == samples[i]);
    fs::remove(path);

    std::vector<uint8_t> labels{1, 0, 0, 0, 1, 0, 0, 0, 1, 1, 1, 0};
    const std::string lpath = temp_path("labels.csv");
    write_labels_csv(lpath, labels, 3);
    auto [lback, bits] = read_labels_csv(lpath);
    CHECK(bits == 3);
    CHECK(lback == labels);
    fs::remove(lpath);
}

TEST_CASE("preprocessing composed with the prior forms a proper pixel-space density") {
    // one pixel dimension: integrate N(u(x)) * |du/dx| over [0,256)
    const double step = 0.01;
    const int64_t n = static_cast<int64_t>(256.0 / step);
    double mass = 0;
    for (int64_t i = 0; i <= n; ++i) {
        const double x = std::min(static_cast<double>(i) * step, 255.999999);
        auto [u, ld] = logit_transform(Tensor({1, 1}, std::vector<real_t>{
                                                          static_cast<real_t>(x)}));
        const double log_px = -0.5 * u[0] * u[0] - 0.5 * kLog2Pi + ld[0];
        mass += ((i == 0 || i == n) ? 0.5 : 1.0) * std::exp(log_px);
    }
    mass *= step;
    CHECK(mass == doctest::Approx(1.0).epsilon(1e-2));
}

TEST_CASE("preprocessing composed with a randomized flow keeps unit mass in pixel space") {
    FlowConfig mc;
    mc.height = 1;
    mc.width = 2;
    mc.channels = 1;
    mc.num_levels = 1;
    mc.final_couplings = 2;
    mc.hidden = 3;
    mc.res_blocks = 0;
    FlowModel model(mc);
    nvptest::randomize_model(model, 67, 0.1);

    const double step = 2.0;
    const int64_t n = static_cast<int64_t>(256.0 / step);
    Tensor grid({(n + 1) * (n + 1), 2});
    for (int64_t i = 0; i <= n; ++i) {
        for (int64_t j = 0; j <= n; ++j) {
            grid[(i * (n + 1) + j) * 2] =
                static_cast<real_t>(std::min(static_cast<double>(j) * step, 255.999999));
            grid[(i * (n + 1) + j) * 2 + 1] =
                static_cast<real_t>(std::min(static_cast<double>(i) * step, 255.999999));
        }
    }
    auto [u, ld] = logit_transform(grid);
    Tensor ll = model.log_likelihood(u.reshaped({(n + 1) * (n + 1), 1, 2, 1}));
    double mass = 0;
    for (int64_t i = 0; i <= n; ++i) {
        const double wy = (i == 0 || i == n) ? 0.5 : 1.0;
        for (int64_t j = 0; j <= n; ++j) {
            const double wx = (j == 0 || j == n) ? 0.5 : 1.0;
            const int64_t k = i * (n + 1) + j;
            mass += wx * wy * std::exp(static_cast<double>(ll[k]) + static_cast<double>(ld[k]));
        }
    }
    mass *= step * step;
    CHECK(mass == doctest::Approx(1.0).epsilon(1e-2));
}

TEST_CASE("csv reader tolerates a header and rejects garbage") {
    const std::string path = temp_path("header.csv");
    {
        std::ofstream os(path);
        os << "x0,x1\n1.5,2.5\n-0.25,3\n";
    }
    Tensor t = read_csv2d(path);
    REQUIRE(t.shape() == Shape{2, 2});
    CHECK(t[0] == 1.5);
    CHECK(t[3] == 3.0);
    {
        std::ofstream os(path);
        os << "1.0\n";  // one column
    }
    CHECK_THROWS_AS(read_csv2d(path), IoError);
    fs::remove(path);
}
