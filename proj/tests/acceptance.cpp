// Acceptance suite: one pass/fail line per criterion, nonzero exit on any
// failure. Training-based criteria share artifacts (the 2-d toy run feeds
// the quadrature, fit, and determinism checks).
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>

#include "nvp/checkpoint.hpp"
#include "nvp/cli.hpp"
#include "nvp/image_io.hpp"
#include "nvp/trainer.hpp"
#include "testutil.hpp"

using namespace nvp;
namespace fs = std::filesystem;
using nvptest::fd_jacobian;
using nvptest::ks_statistic_normal;
using nvptest::log_abs_det;
using nvptest::randomize_model;
using nvptest::rel_err;

namespace {

int g_failures = 0;

void report(int criterion, const char* name, bool pass, const std::string& detail,
            double seconds) {
    std::printf("[%s] C%-2d %-22s %s (%.1fs)\n", pass ? "PASS" : "FAIL", criterion, name,
                detail.c_str(), seconds);
    std::fflush(stdout);
    if (!pass) ++g_failures;
}

void run_criterion(int criterion, const char* name, const std::function<std::pair<bool, std::string>()>& fn) {
    const auto t0 = std::chrono::steady_clock::now();
    bool pass = false;
    std::string detail;
    try {
        auto [p, d] = fn();
        pass = p;
        detail = d;
    } catch (const std::exception& e) {
        detail = std::string("exception: ") + e.what();
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    report(criterion, name, pass, detail, secs);
}

std::string fmt(const char* f, ...) {
    char buf[512];
    va_list args;
    va_start(args, f);
    std::vsnprintf(buf, sizeof(buf), f, args);
    va_end(args);
    return buf;
}

std::string work_dir(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("nvp_acceptance_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p.string();
}

std::string read_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

Tensor eval_forward(Bijection& b, const Tensor& x, Tensor* log_det = nullptr) {
    GradTape tape;
    FlowCtx ctx{tape, RunMode::eval, false, false, std::nullopt};
    auto [y, ld] = b.forward(ctx, tape.constant(x));
    if (log_det) *log_det = tape.value(ld);
    return tape.value(y);
}

std::unique_ptr<CouplingLayer> residual_coupling(const std::string& name, MaskKind kind,
                                                 int parity, Shape shape, int64_t hidden,
                                                 uint64_t seed) {
    ConditionerConfig cc;
    cc.data_channels = shape[2];
    cc.hidden = hidden;
    cc.res_blocks = 1;
    cc.kernel = 3;
    Rng rng(seed);
    auto cond = std::make_unique<ResidualConditioner>(name + ".cond", cc, rng);
    auto layer =
        std::make_unique<CouplingLayer>(name, kind, parity, std::move(shape), std::move(cond));
    std::vector<Parameter*> params;
    layer->collect_params(params);
    Rng prng(seed + 1);
    for (Parameter* p : params) {
        for (int64_t i = 0; i < p->value.numel(); ++i) {
            p->value[i] += static_cast<real_t>(0.15 * prng.normal());
        }
    }
    return layer;
}

// ---- shared toy-run artifacts (criteria 4, 5, 11) ----

struct ToyRun {
    Toy2dData train, valid;
    TrainConfig cfg;
    std::unique_ptr<Trainer> trainer;
    TrainResult result;
    double entropy_mc = 0;  // Monte-Carlo differential entropy of the mixture
};

TrainConfig toy_train_config() {
    TrainConfig tc;
    tc.model.height = 1;
    tc.model.width = 2;
    tc.model.channels = 1;
    tc.model.num_levels = 1;
    tc.model.final_couplings = 6;
    tc.model.hidden = 24;
    tc.model.res_blocks = 1;
    tc.model.kernel = 3;
    tc.model.init_seed = 3;
    tc.batch_size = 64;
    tc.max_steps = 5000;
    tc.eval_interval = 500;
    tc.seed = 42;
    tc.log_wallclock = false;
    tc.max_eval_samples = 2048;
    return tc;
}

ToyRun g_toy;

void prepare_toy_run(const std::string& dir) {
    g_toy.train = gen_toy2d(Toy2dKind::mixture4, 8192, 1001);
    g_toy.valid = gen_toy2d(Toy2dKind::mixture4, 2048, 1002);
    g_toy.cfg = toy_train_config();
    TrainData td;
    td.kind = DataKind::toy2d;
    td.toy_train = g_toy.train.samples;
    td.toy_valid = g_toy.valid.samples;
    g_toy.trainer = std::make_unique<Trainer>(g_toy.cfg, td);
    g_toy.result = g_toy.trainer->run(dir);

    Toy2dData ent = gen_toy2d(Toy2dKind::mixture4, 200000, 1003);
    double acc = 0;
    for (int64_t i = 0; i < 200000; ++i) {
        acc += -std::log(ent.density(ent.samples[2 * i], ent.samples[2 * i + 1]));
    }
    g_toy.entropy_mc = acc / 200000.0;
}

// ---------------------------------------------------------------------------
// criteria
// ---------------------------------------------------------------------------

std::pair<bool, std::string> c1_invertibility() {
    FlowConfig mc;
    mc.height = 8;
    mc.width = 8;
    mc.channels = 1;
    mc.num_levels = 2;
    mc.hidden = 3;
    mc.res_blocks = 1;
    FlowModel model(mc);
    randomize_model(model, 501, 0.1);
    Rng rng(503);
    Tensor x = rng.normal_tensor({100, 8, 8, 1});
    Tensor z = model.encode(x);
    Tensor back = model.decode(z);
    double worst = 0;
    for (int64_t i = 0; i < x.numel(); ++i) {
        worst = std::max(worst, std::abs(static_cast<double>(back[i] - x[i])));
    }
    return {worst < 1e-9, fmt("100 inputs, max |inv(fwd(x))-x| = %.3g (limit 1e-9)", worst)};
}

std::pair<bool, std::string> c2_jacobian() {
    double worst = 0;
    int trials = 0;
    auto check = [&](Bijection& b, const Shape& in_shape, uint64_t seed) {
        Rng rng(seed);
        Tensor x = rng.normal_tensor({1, in_shape[0], in_shape[1], in_shape[2]});
        Tensor ld;
        eval_forward(b, x, &ld);
        auto fwd = [&](const Tensor& t) { return eval_forward(b, t); };
        const double numeric = log_abs_det(fd_jacobian(fwd, x), x.numel());
        worst = std::max(worst, std::abs(static_cast<double>(ld[0]) - numeric));
        ++trials;
    };

    for (int t = 0; t < 20; ++t) {
        auto coupling = residual_coupling("c", MaskKind::checkerboard, t % 2, {4, 4, 2}, 3,
                                          600 + static_cast<uint64_t>(t));
        check(*coupling, {4, 4, 2}, 700 + static_cast<uint64_t>(t));
    }
    for (int t = 0; t < 20; ++t) {
        BatchNormBijection bn("bn", 2, real_t(1e-5), real_t(0.9));
        Rng rng(800 + static_cast<uint64_t>(t));
        bn.norm().running_mean() = rng.normal_tensor({2});
        bn.norm().running_var() = rng.uniform_tensor({2}, 0.4, 2.5);
        check(bn, {4, 4, 2}, 900 + static_cast<uint64_t>(t));
    }
    for (int t = 0; t < 20; ++t) {
        Composite stack;
        stack.push(residual_coupling("a", MaskKind::checkerboard, 0, {4, 4, 1}, 3,
                                     1000 + static_cast<uint64_t>(t)));
        stack.push(std::make_unique<SqueezeBijection>());
        stack.push(residual_coupling("b", MaskKind::channelwise, t % 2, {2, 2, 4}, 4,
                                     1100 + static_cast<uint64_t>(t)));
        check(stack, {4, 4, 1}, 1200 + static_cast<uint64_t>(t));
    }
    for (int t = 0; t < 20; ++t) {
        FlowConfig mc;
        mc.height = 8;
        mc.width = 8;
        mc.channels = 1;
        mc.num_levels = 2;
        mc.hidden = 2;
        mc.res_blocks = 0;
        mc.init_seed = 1300 + static_cast<uint64_t>(t);
        FlowModel model(mc);  // D = 64
        randomize_model(model, 1400 + static_cast<uint64_t>(t), 0.12);
        Rng rng(1500 + static_cast<uint64_t>(t));
        Tensor x = rng.normal_tensor({1, 8, 8, 1});
        Tensor ld;
        model.encode(x, &ld);
        auto fwd = [&](const Tensor& in) { return model.encode(in); };
        const double numeric = log_abs_det(fd_jacobian(fwd, x), 64);
        worst = std::max(worst, std::abs(static_cast<double>(ld[0]) - numeric));
        ++trials;
    }
    return {worst < 1e-4,
            fmt("%d trials over coupling/batch-norm/squeeze-stack/full model, max |analytic - "
                "numeric| = %.3g (limit 1e-4)",
                trials, worst)};
}

std::pair<bool, std::string> c3_gradient() {
    FlowConfig mc;
    mc.height = 4;
    mc.width = 4;
    mc.channels = 1;
    mc.num_levels = 2;
    mc.hidden = 2;
    mc.res_blocks = 1;
    mc.init_seed = 11;
    TrainConfig tc;
    tc.model = mc;
    tc.batch_size = 4;
    tc.max_steps = 1;
    tc.l2_scale = 0;
    tc.seed = 13;

    LabeledDataset sprites = make_sprites(16, 4, 4, 1700);
    ImageDataset valid = sprites.images;
    TrainData td;
    td.kind = DataKind::images;
    td.train = {&sprites.images, nullptr};
    td.valid = {&valid, nullptr};
    Trainer trainer(tc, td);
    randomize_model(trainer.model(), 1701, 0.15);

    Rng rng(1702);
    std::vector<int64_t> idx{0, 1, 2, 3};
    Tensor raw = dequantize(sprites.images, idx, rng);
    Tensor batch = logit_transform(raw).first;

    auto loss_value = [&]() {
        GradTape tape;
        FlowCtx ctx{tape, RunMode::train, false, false, std::nullopt};
        auto [loss, nll] = trainer.objective(ctx, tape.constant(batch), 16);
        (void)nll;
        return static_cast<double>(tape.value(loss)[0]);
    };

    GradTape tape;
    FlowCtx ctx{tape, RunMode::train, false, true, std::nullopt};
    auto [loss, nll] = trainer.objective(ctx, tape.constant(batch), 16);
    (void)nll;
    tape.backward(loss);

    std::vector<Parameter*> params;
    trainer.model().collect_params(params);
    double worst = 0;
    int64_t checked = 0;
    for (Parameter* p : params) {
        Tensor fd = nvptest::fd_gradient(loss_value, p->value, 1e-5);
        for (int64_t i = 0; i < fd.numel(); ++i) {
            worst = std::max(worst, rel_err(p->grad[i], fd[i], 1e-7));
            ++checked;
        }
    }
    return {worst < 1e-3, fmt("%lld parameters on a 2-level 4x4 model, max rel err = %.3g "
                              "(limit 1e-3)",
                              static_cast<long long>(checked), worst)};
}

std::pair<bool, std::string> c4_normalization() {
    FlowModel& model = g_toy.trainer->model();
    const double step = 0.05;
    const int64_t n = static_cast<int64_t>(std::round(12.0 / step)) + 1;
    Tensor grid({n * n, 1, 2, 1});
    for (int64_t i = 0; i < n; ++i) {
        for (int64_t j = 0; j < n; ++j) {
            grid[(i * n + j) * 2] = static_cast<real_t>(-6.0 + step * static_cast<double>(j));
            grid[(i * n + j) * 2 + 1] =
                static_cast<real_t>(-6.0 + step * static_cast<double>(i));
        }
    }
    Tensor ll = model.log_likelihood(grid);
    double mass = 0;
    for (int64_t i = 0; i < n; ++i) {
        const double wy = (i == 0 || i == n - 1) ? 0.5 : 1.0;
        for (int64_t j = 0; j < n; ++j) {
            const double wx = (j == 0 || j == n - 1) ? 0.5 : 1.0;
            mass += wx * wy * std::exp(static_cast<double>(ll[i * n + j]));
        }
    }
    mass *= step * step;
    return {std::abs(mass - 1.0) < 1e-2,
            fmt("trapezoid mass on [-6,6]^2 at step 0.05 = %.5f (target 1 +- 0.01)", mass)};
}

std::pair<bool, std::string> c5_toy_fit() {
    const double val_nll_per_dim = g_toy.result.final_val_bpd * std::log(2.0);
    const double entropy_per_dim = g_toy.entropy_mc / 2.0;
    const double gap = std::abs(val_nll_per_dim - entropy_per_dim);

    Toy2dData probe = gen_toy2d(Toy2dKind::mixture4, 10000, 1004);
    Tensor z = g_toy.trainer->model().encode(probe.samples.reshaped({10000, 1, 2, 1}));
    std::vector<double> comp0(10000), comp1(10000);
    for (int64_t i = 0; i < 10000; ++i) {
        comp0[static_cast<size_t>(i)] = z[2 * i];
        comp1[static_cast<size_t>(i)] = z[2 * i + 1];
    }
    const double ks0 = ks_statistic_normal(comp0);
    const double ks1 = ks_statistic_normal(comp1);

    const bool pass = gap <= 0.3 && ks0 < 0.05 && ks1 < 0.05 && !g_toy.result.diverged;
    return {pass, fmt("5k steps batch 64: val NLL %.4f vs entropy %.4f nats/dim (gap %.4f, "
                      "limit 0.3); latent KS = %.4f / %.4f (limit 0.05)",
                      val_nll_per_dim, entropy_per_dim, gap, ks0, ks1)};
}

std::pair<bool, std::string> c6_sprite_fit() {
    FlowConfig mc;
    mc.height = 8;
    mc.width = 8;
    mc.channels = 1;
    mc.num_levels = 2;
    mc.hidden = 6;
    mc.res_blocks = 1;
    mc.init_seed = 5;
    mc.bn_momentum = real_t(0.9);  // shorter statistics lag trains steadier here
    TrainConfig tc;
    tc.model = mc;
    tc.batch_size = 24;
    tc.max_steps = 10000;
    tc.adam.lr = 5e-4;
    tc.eval_interval = 1000;
    tc.seed = 7;
    tc.log_wallclock = false;
    tc.max_eval_samples = 512;

    LabeledDataset train = make_sprites(8192, 8, 8, 2001);
    LabeledDataset valid = make_sprites(512, 8, 8, 2002);
    TrainData td;
    td.kind = DataKind::images;
    td.train = {&train.images, nullptr};
    td.valid = {&valid.images, nullptr};

    Trainer trainer(tc, td);
    TrainResult res = trainer.run("");
    if (res.diverged) {
        return {false, "training diverged: " + res.divergence_message};
    }
    FlowModel identity_model(mc);
    const double identity_bpd =
        evaluate_split_bpd(identity_model, td, tc.seed, tc.max_steps, tc.max_eval_samples);
    const double trained_bpd = res.final_val_bpd;
    const bool pass = trained_bpd < 8.0 && trained_bpd <= identity_bpd - 1.0;
    return {pass, fmt("10k steps: val %.4f bpd vs identity-init %.4f bpd "
                      "(needs < 8.0 and improvement >= 1.0)",
                      trained_bpd, identity_bpd)};
}

std::pair<bool, std::string> c7_moving_average() {
    BatchNorm bn("bn", 1, real_t(1e-5), real_t(0.9));
    Tensor batch({2, 1, 1, 1}, std::vector<real_t>{0.5, 1.5});  // batch mean exactly 1
    double worst = 0;
    for (int t = 1; t <= 40; ++t) {
        GradTape tape;
        FlowCtx ctx{tape, RunMode::train, true, false, std::nullopt};
        bn.forward(ctx, tape.constant(batch));
        const double expect = 1.0 - std::pow(0.9, t);
        worst = std::max(worst,
                         std::abs(static_cast<double>(bn.running_mean()[0]) - expect));
    }
    return {worst < 1e-12,
            fmt("rho=0.9 constant stream, 40 steps, max |mean_t - (1-0.9^t)| = %.3g", worst)};
}

std::pair<bool, std::string> c8_squeeze_mask() {
    // squeeze shape and bit-exact round trip
    Rng rng(2100);
    Tensor x = rng.normal_tensor({4, 4, 1});
    Tensor s = squeeze2x2(x);
    if (s.shape() != Shape{2, 2, 4}) return {false, "squeeze shape mismatch"};
    Tensor back = unsqueeze2x2(s);
    for (int64_t i = 0; i < 16; ++i) {
        if (back[i] != x[i]) return {false, "squeeze round trip not bit-exact"};
    }
    Mask cb = make_checkerboard_mask(2, 2, 1, 0);
    const bool cb_ok = cb.pattern.at({0, 0, 0}) == 0 && cb.pattern.at({0, 1, 0}) == 1 &&
                       cb.pattern.at({1, 0, 0}) == 1 && cb.pattern.at({1, 1, 0}) == 0;
    Mask cw = make_channel_mask(4, 0);
    const bool cw_ok =
        cw.pattern[0] == 1 && cw.pattern[1] == 1 && cw.pattern[2] == 0 && cw.pattern[3] == 0;
    return {cb_ok && cw_ok,
            "4x4x1 -> 2x2x4 bit-exact; checkerboard [[0,1],[1,0]]; channel mask [1,1,0,0]"};
}

std::pair<bool, std::string> c9_manifold_endpoint() {
    const std::string dir = work_dir("manifold");
    FlowConfig mc;
    mc.height = 8;
    mc.width = 8;
    mc.channels = 1;
    mc.num_levels = 2;
    mc.hidden = 3;
    mc.res_blocks = 1;
    mc.init_seed = 2203;
    FlowModel model(mc);
    randomize_model(model, 2201, 0.1);
    save_checkpoint(dir + "/model.nvpc", model, 0, nullptr);
    LabeledDataset sprites = make_sprites(8, 8, 8, 2202);
    save_nvpd(dir + "/data.nvpd", sprites.images);

    RunConfig rc;
    rc.subcommand = "interpolate";
    rc.out_dir = dir;
    rc.checkpoint = dir + "/model.nvpc";
    rc.seed = 77;
    rc.overrides = {"interp.data=" + dir + "/data.nvpd"};
    if (run_command(rc) != 0) return {false, "cmd_interpolate failed"};

    // independent reconstruction of input 1 through the same preprocessing
    Rng rng(derive_seed(77, 3, 0));
    std::vector<int64_t> idx{0, 1, 2, 3};
    Tensor raw = dequantize(sprites.images, idx, rng);
    Tensor u = logit_transform(raw).first;
    Tensor z = model.encode(u);
    Tensor z1({1, z.dim(1)});
    for (int64_t k = 0; k < z.dim(1); ++k) z1[k] = z[k];
    Tensor recon = model.decode(z1);
    Tensor cell0({8, 8, 1});
    for (int64_t k = 0; k < 64; ++k) cell0[k] = recon[k];
    ImageU8 expect = u_to_pixels(cell0);

    ImageU8 grid = read_pnm(dir + "/manifold.pgm");
    double worst = 0;
    for (int64_t i = 0; i < 8; ++i) {
        for (int64_t j = 0; j < 8; ++j) {
            const double got =
                grid.pixels[static_cast<size_t>((1 + i) * grid.width + 1 + j)];
            worst = std::max(worst,
                             std::abs(got - static_cast<double>(
                                                expect.pixels[static_cast<size_t>(i * 8 + j)])));
        }
    }
    const bool grid_ok = grid.height == 8 * 9 + 1 && grid.width == 8 * 9 + 1;
    fs::remove_all(dir);
    return {worst < 1e-6 && grid_ok,
            fmt("phi=phi'=0 cell vs input-1 reconstruction: max pixel delta = %.3g "
                "(limit 1e-6); 8x8 grid of 64 cells",
                worst)};
}

std::pair<bool, std::string> c10_compression() {
    if (std::string(kDefaultCompressFractions) != "100,50,25,12.5,6.25") {
        return {false, "default fraction ladder is not {100,50,25,12.5,6.25}"};
    }
    const std::string dir = work_dir("compress");
    FlowConfig mc;
    mc.height = 8;
    mc.width = 8;
    mc.channels = 1;
    mc.num_levels = 2;
    mc.hidden = 3;
    mc.res_blocks = 1;
    mc.init_seed = 2301;
    FlowModel model(mc);
    randomize_model(model, 2302, 0.1);
    save_checkpoint(dir + "/model.nvpc", model, 0, nullptr);
    LabeledDataset sprites = make_sprites(4, 8, 8, 2303);
    save_nvpd(dir + "/data.nvpd", sprites.images);

    RunConfig rc;
    rc.subcommand = "compress";
    rc.out_dir = dir;
    rc.checkpoint = dir + "/model.nvpc";
    rc.seed = 5;
    rc.overrides = {"compress.data=" + dir + "/data.nvpd", "compress.indices=0,1,2,3",
                    "compress.fractions=100"};
    if (run_command(rc) != 0) return {false, "cmd_compress failed"};

    ImageU8 grid = read_pnm(dir + "/compression.pgm");
    double worst = 0;
    for (int64_t s = 0; s < 4; ++s) {
        const auto img = sprites.images.image(s);
        for (int64_t i = 0; i < 8; ++i) {
            for (int64_t j = 0; j < 8; ++j) {
                const double got = grid.pixels[static_cast<size_t>(
                    (1 + s * 9 + i) * grid.width + 1 + j)];
                worst = std::max(
                    worst, std::abs(got - static_cast<double>(img[static_cast<size_t>(i * 8 + j)])));
            }
        }
    }
    fs::remove_all(dir);
    return {worst < 1e-6, fmt("100%% keep reproduces the 4 inputs: max pixel delta = %.3g "
                              "(limit 1e-6); default ladder {100,50,25,12.5,6.25}%%",
                              worst)};
}

std::pair<bool, std::string> c11_determinism(const std::string& first_dir) {
    const std::string dir = work_dir("toy_rerun");
    TrainData td;
    td.kind = DataKind::toy2d;
    td.toy_train = g_toy.train.samples;
    td.toy_valid = g_toy.valid.samples;
    Trainer trainer(g_toy.cfg, td);
    trainer.run(dir);
    const std::string a = read_file(first_dir + "/metrics.csv");
    const std::string b = read_file(dir + "/metrics.csv");
    fs::remove_all(dir);
    const bool pass = !a.empty() && a == b;
    return {pass, fmt("two full criterion-5 runs: metrics logs %s (%zu bytes)",
                      pass ? "byte-identical" : "DIFFER", a.size())};
}

}  // namespace

int main() {
    std::printf("acceptance suite\n");
    const std::string toy_dir = work_dir("toy_run");

    run_criterion(1, "invertibility", c1_invertibility);
    run_criterion(2, "jacobian oracle", c2_jacobian);
    run_criterion(3, "gradient oracle", c3_gradient);

    const auto t0 = std::chrono::steady_clock::now();
    prepare_toy_run(toy_dir);
    std::printf("       (2-d toy training for C4/C5/C11: %.1fs)\n",
                std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());

    run_criterion(4, "density normalization", c4_normalization);
    run_criterion(5, "toy-density fit", c5_toy_fit);
    run_criterion(6, "sprite-corpus fit", c6_sprite_fit);
    run_criterion(7, "bn moving average", c7_moving_average);
    run_criterion(8, "squeeze/mask exactness", c8_squeeze_mask);
    run_criterion(9, "manifold endpoints", c9_manifold_endpoint);
    run_criterion(10, "compression fractions", c10_compression);
    run_criterion(11, "determinism", [&] { return c11_determinism(toy_dir); });

    fs::remove_all(toy_dir);
    if (g_failures == 0) {
        std::printf("all 11 acceptance criteria passed\n");
    } else {
        std::printf("%d acceptance criteria FAILED\n", g_failures);
    }
    return g_failures;
}
