#include "nvp/cli.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "nvp/checkpoint.hpp"
#include "nvp/image_io.hpp"
#include "nvp/trainer.hpp"

namespace nvp {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// configuration plumbing
// ---------------------------------------------------------------------------

std::string KeyValues::get_str(const std::string& key, const std::string& dflt) const {
    auto it = kv_.find(key);
    return it == kv_.end() ? dflt : it->second;
}

std::string KeyValues::require_str(const std::string& key) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) throw ConfigError("missing required config key '" + key + "'");
    return it->second;
}

int64_t KeyValues::get_int(const std::string& key, int64_t dflt) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) return dflt;
    try {
        size_t pos = 0;
        const int64_t v = std::stoll(it->second, &pos);
        if (pos != it->second.size()) throw std::invalid_argument("trailing");
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "' is not an integer: " + it->second);
    }
}

double KeyValues::get_real(const std::string& key, double dflt) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) return dflt;
    char* end = nullptr;
    const double v = std::strtod(it->second.c_str(), &end);
    if (end == it->second.c_str() || *end != '\0') {
        throw ConfigError("config key '" + key + "' is not a number: " + it->second);
    }
    return v;
}

bool KeyValues::get_bool(const std::string& key, bool dflt) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) return dflt;
    if (it->second == "true" || it->second == "1") return true;
    if (it->second == "false" || it->second == "0") return false;
    throw ConfigError("config key '" + key + "' is not a boolean: " + it->second);
}

KeyValues parse_config_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file " + path);
    std::map<std::string, std::string> kv;
    std::string line;
    int64_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        // trim
        const size_t b = line.find_first_not_of(" \t\r");
        if (b == std::string::npos) continue;
        const size_t e = line.find_last_not_of(" \t\r");
        line = line.substr(b, e - b + 1);
        const size_t eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key=value");
        }
        auto strip = [](std::string s) {
            const size_t sb = s.find_first_not_of(" \t");
            if (sb == std::string::npos) return std::string();
            const size_t se = s.find_last_not_of(" \t");
            return s.substr(sb, se - sb + 1);
        };
        kv[strip(line.substr(0, eq))] = strip(line.substr(eq + 1));
    }
    return KeyValues(std::move(kv));
}

namespace {

const std::set<std::string>& allowed_keys() {
    static const std::set<std::string> keys = {
        "model.height", "model.width", "model.channels", "model.levels", "model.hidden",
        "model.res_blocks", "model.kernel", "model.checker_couplings",
        "model.channel_couplings", "model.final_couplings", "model.bn_eps", "model.bn_momentum",
        "model.attr_bits", "model.init_seed",
        "train.steps", "train.batch", "train.lr", "train.beta1", "train.beta2",
        "train.adam_eps", "train.l2", "train.eval_interval", "train.seed", "train.flip_prob",
        "train.grad_clip", "train.max_eval_samples", "train.log_wallclock",
        "data.kind", "data.train", "data.valid", "data.train_labels", "data.valid_labels",
        "data.count", "data.valid_count", "data.gen_seed", "data.toy",
        "sample.n", "sample.rows",
        "interp.data", "interp.indices", "interp.steps",
        "compress.data", "compress.indices", "compress.fractions",
        "extrap.factor", "extrap.n", "extrap.height", "extrap.width",
        "attr.data", "attr.labels", "attr.indices", "attr.permute",
    };
    return keys;
}

}  // namespace

void validate_config_keys(const KeyValues& kv) {
    for (const auto& [k, v] : kv.raw()) {
        if (!allowed_keys().count(k)) {
            throw ConfigError("unknown config key '" + k + "'");
        }
    }
}

KeyValues load_run_config(const RunConfig& rc) {
    KeyValues kv;
    if (!rc.config_path.empty()) kv = parse_config_file(rc.config_path);
    for (const std::string& ov : rc.overrides) {
        const size_t eq = ov.find('=');
        if (eq == std::string::npos || eq == 0) {
            throw ConfigError("override '" + ov + "' is not key=value");
        }
        kv.set(ov.substr(0, eq), ov.substr(eq + 1));
    }
    validate_config_keys(kv);
    return kv;
}

// ---------------------------------------------------------------------------
// schema -> configs
// ---------------------------------------------------------------------------

namespace {

FlowConfig flow_config_from(const KeyValues& kv) {
    FlowConfig c;
    c.height = kv.get_int("model.height", 8);
    c.width = kv.get_int("model.width", 8);
    c.channels = kv.get_int("model.channels", 1);
    c.num_levels = static_cast<int>(kv.get_int("model.levels", 2));
    c.hidden = kv.get_int("model.hidden", 8);
    c.res_blocks = static_cast<int>(kv.get_int("model.res_blocks", 1));
    c.kernel = static_cast<int>(kv.get_int("model.kernel", 3));
    c.checker_couplings = static_cast<int>(kv.get_int("model.checker_couplings", 3));
    c.channel_couplings = static_cast<int>(kv.get_int("model.channel_couplings", 3));
    c.final_couplings = static_cast<int>(kv.get_int("model.final_couplings", 4));
    c.bn_eps = static_cast<real_t>(kv.get_real("model.bn_eps", 1e-5));
    c.bn_momentum = static_cast<real_t>(kv.get_real("model.bn_momentum", 0.99));
    c.attr_bits = kv.get_int("model.attr_bits", 0);
    c.init_seed = static_cast<uint64_t>(kv.get_int("model.init_seed", 1));
    return c;
}

TrainConfig train_config_from(const KeyValues& kv, const FlowConfig& mc,
                              std::optional<uint64_t> seed_flag) {
    TrainConfig c;
    c.model = mc;
    c.adam.lr = kv.get_real("train.lr", 1e-3);
    c.adam.beta1 = kv.get_real("train.beta1", 0.9);
    c.adam.beta2 = kv.get_real("train.beta2", 0.999);
    c.adam.eps = kv.get_real("train.adam_eps", 1e-8);
    c.batch_size = kv.get_int("train.batch", 64);
    c.max_steps = kv.get_int("train.steps", 1000);
    c.l2_scale = kv.get_real("train.l2", 5e-5);
    c.eval_interval = kv.get_int("train.eval_interval", 250);
    c.seed = static_cast<uint64_t>(kv.get_int("train.seed", 1));
    if (seed_flag) c.seed = *seed_flag;
    c.flip_prob = kv.get_real("train.flip_prob", 0.5);
    c.grad_clip = kv.get_real("train.grad_clip", 100.0);
    c.max_eval_samples = kv.get_int("train.max_eval_samples", 512);
    c.log_wallclock = kv.get_bool("train.log_wallclock", true);
    return c;
}

struct OwnedData {
    DataKind kind = DataKind::images;
    ImageDataset train_images, valid_images;
    std::vector<uint8_t> train_labels, valid_labels;
    Tensor toy_train, toy_valid;

    TrainData view(bool conditional) const {
        TrainData td;
        td.kind = kind;
        if (kind == DataKind::images) {
            td.train = {&train_images, conditional ? &train_labels : nullptr};
            td.valid = {&valid_images, conditional ? &valid_labels : nullptr};
        } else {
            td.toy_train = toy_train;
            td.toy_valid = toy_valid;
        }
        return td;
    }
};

OwnedData build_data(const KeyValues& kv, const FlowConfig& mc, const std::string& out_dir,
                     bool write_generated) {
    OwnedData od;
    const std::string kind = kv.get_str("data.kind", "sprites");
    const int64_t count = kv.get_int("data.count", 2048);
    const int64_t valid_count = kv.get_int("data.valid_count", 256);
    const uint64_t gen_seed = static_cast<uint64_t>(kv.get_int("data.gen_seed", 7));
    const bool conditional = mc.attr_bits > 0;

    if (kind == "nvpd") {
        od.kind = DataKind::images;
        od.train_images = load_nvpd(kv.require_str("data.train"));
        od.valid_images = load_nvpd(kv.require_str("data.valid"));
        if (conditional) {
            auto [tl, tb] = read_labels_csv(kv.require_str("data.train_labels"));
            auto [vl, vb] = read_labels_csv(kv.require_str("data.valid_labels"));
            if (tb != mc.attr_bits || vb != mc.attr_bits) {
                throw ConfigError("label attribute count does not match model.attr_bits");
            }
            od.train_labels = std::move(tl);
            od.valid_labels = std::move(vl);
        }
    } else if (kind == "sprites") {
        od.kind = DataKind::images;
        LabeledDataset train = make_sprites(count, mc.height, mc.width, gen_seed);
        LabeledDataset valid = make_sprites(valid_count, mc.height, mc.width, gen_seed + 1);
        if (conditional && mc.attr_bits != train.attr_bits) {
            throw ConfigError("sprites carry " + std::to_string(train.attr_bits) +
                              " attribute bits; set model.attr_bits accordingly");
        }
        od.train_labels = std::move(train.labels);
        od.valid_labels = std::move(valid.labels);
        od.train_images = std::move(train.images);
        od.valid_images = std::move(valid.images);
        if (write_generated && !out_dir.empty()) {
            save_nvpd(out_dir + "/train.nvpd", od.train_images);
            save_nvpd(out_dir + "/valid.nvpd", od.valid_images);
            write_labels_csv(out_dir + "/train_labels.csv", od.train_labels, 3);
            write_labels_csv(out_dir + "/valid_labels.csv", od.valid_labels, 3);
        }
    } else if (kind == "uniform") {
        od.kind = DataKind::images;
        if (conditional) throw ConfigError("uniform noise data carries no attributes");
        od.train_images = make_uniform_pixels(count, mc.height, mc.width, mc.channels, gen_seed);
        od.valid_images =
            make_uniform_pixels(valid_count, mc.height, mc.width, mc.channels, gen_seed + 1);
        if (write_generated && !out_dir.empty()) {
            save_nvpd(out_dir + "/train.nvpd", od.train_images);
            save_nvpd(out_dir + "/valid.nvpd", od.valid_images);
        }
    } else if (kind == "toy2d") {
        od.kind = DataKind::toy2d;
        if (kv.has("data.train")) {
            od.toy_train = read_csv2d(kv.require_str("data.train"));
            od.toy_valid = read_csv2d(kv.require_str("data.valid"));
        } else {
            const Toy2dKind tk = toy2d_kind_from_string(kv.get_str("data.toy", "mixture4"));
            od.toy_train = gen_toy2d(tk, count, gen_seed).samples;
            od.toy_valid = gen_toy2d(tk, valid_count, gen_seed + 1).samples;
            if (write_generated && !out_dir.empty()) {
                write_csv2d(out_dir + "/toy_train.csv", od.toy_train);
                write_csv2d(out_dir + "/toy_valid.csv", od.toy_valid);
            }
        }
    } else {
        throw ConfigError("unknown data.kind '" + kind + "'");
    }
    return od;
}

std::vector<int64_t> parse_int_list(const std::string& s) {
    std::vector<int64_t> out;
    std::istringstream is(s);
    std::string field;
    while (std::getline(is, field, ',')) {
        if (field.empty()) continue;
        try {
            out.push_back(std::stoll(field));
        } catch (const std::exception&) {
            throw ConfigError("'" + field + "' is not an integer");
        }
    }
    return out;
}

std::vector<double> parse_real_list(const std::string& s) {
    std::vector<double> out;
    std::istringstream is(s);
    std::string field;
    while (std::getline(is, field, ',')) {
        if (field.empty()) continue;
        char* end = nullptr;
        const double v = std::strtod(field.c_str(), &end);
        if (end == field.c_str()) throw ConfigError("'" + field + "' is not a number");
        out.push_back(v);
    }
    return out;
}

LoadedCheckpoint require_checkpoint(const RunConfig& rc) {
    if (rc.checkpoint.empty()) {
        throw ConfigError("this command requires --checkpoint");
    }
    return load_checkpoint(rc.checkpoint);
}

Tensor slice_sample(const Tensor& batch, int64_t i) {
    const int64_t h = batch.dim(1), w = batch.dim(2), c = batch.dim(3);
    Tensor out({h, w, c});
    const int64_t per = h * w * c;
    for (int64_t k = 0; k < per; ++k) out[k] = batch[i * per + k];
    return out;
}

void write_sample_grid(const std::string& path, const Tensor& batch, int64_t rows) {
    const int64_t n = batch.dim(0);
    std::vector<ImageU8> cells;
    cells.reserve(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) cells.push_back(u_to_pixels(slice_sample(batch, i)));
    if (rows < 1) rows = static_cast<int64_t>(std::ceil(std::sqrt(static_cast<double>(n))));
    const int64_t cols = (n + rows - 1) / rows;
    write_pnm(path, tile_grid(cells, rows, cols));
}

std::string grid_extension(int64_t channels) { return channels == 3 ? ".ppm" : ".pgm"; }

// Deterministic encode pipeline for checkpoint-driven commands: gathers the
// requested images, jitters with the given seed, maps through the logit.
Tensor preprocess_images(const ImageDataset& ds, std::span<const int64_t> indices,
                         uint64_t seed) {
    for (int64_t ix : indices) {
        if (ix < 0 || ix >= ds.count) {
            throw ConfigError("image index " + std::to_string(ix) + " outside dataset of " +
                              std::to_string(ds.count));
        }
    }
    Rng rng(derive_seed(seed, 3, 0));
    Tensor raw = dequantize(ds, indices, rng);
    return logit_transform(raw).first;
}

}  // namespace

// ---------------------------------------------------------------------------
// commands
// ---------------------------------------------------------------------------

int cmd_train(const RunConfig& rc) {
    KeyValues kv = load_run_config(rc);
    const FlowConfig mc = flow_config_from(kv);
    const TrainConfig tc = train_config_from(kv, mc, rc.seed);
    fs::create_directories(rc.out_dir);
    OwnedData od = build_data(kv, mc, rc.out_dir, true);
    TrainData td = od.view(mc.attr_bits > 0);

    Trainer trainer = rc.checkpoint.empty() ? Trainer(tc, td)
                                            : Trainer::resume(rc.checkpoint, tc, td);
    TrainResult res = trainer.run(rc.out_dir);
    if (res.diverged) {
        std::fprintf(stderr, "training diverged at step %lld: %s\n",
                     static_cast<long long>(res.final_step + 1),
                     res.divergence_message.c_str());
        return 3;
    }
    std::printf("trained %lld steps, final val_bpd %.9g\n",
                static_cast<long long>(res.final_step), res.final_val_bpd);
    return 0;
}

int cmd_eval(const RunConfig& rc) {
    KeyValues kv = load_run_config(rc);
    LoadedCheckpoint lc = require_checkpoint(rc);
    OwnedData od = build_data(kv, lc.config, "", false);
    TrainData td = od.view(lc.config.attr_bits > 0);
    const uint64_t seed = rc.seed ? *rc.seed
                                  : static_cast<uint64_t>(kv.get_int("train.seed", 1));
    const int64_t max_eval = kv.get_int("train.max_eval_samples", 512);
    const double bpd = evaluate_split_bpd(*lc.model, td, seed, lc.step, max_eval);
    std::printf("bits_per_dim %.9g\n", bpd);
    return 0;
}

int cmd_sample(const RunConfig& rc) {
    KeyValues kv = load_run_config(rc);
    LoadedCheckpoint lc = require_checkpoint(rc);
    FlowModel& model = *lc.model;
    fs::create_directories(rc.out_dir);
    const int64_t n = kv.get_int("sample.n", 16);
    if (n < 1) throw ConfigError("sample.n must be positive");
    const uint64_t seed = rc.seed.value_or(0);

    Tensor attrs;
    const Tensor* attrs_ptr = nullptr;
    if (model.conditional()) {
        // cycle through one-hot attribute patterns
        attrs = Tensor({n, model.config().attr_bits});
        for (int64_t i = 0; i < n; ++i) {
            attrs[i * model.config().attr_bits + (i % model.config().attr_bits)] = 1;
        }
        attrs_ptr = &attrs;
    }
    Tensor x = model.sample(n, seed, attrs_ptr);

    if (model.dim() == 2) {
        // 2-d toy model: emit samples as CSV plus a density heat map
        Tensor flat({n, 2});
        for (int64_t i = 0; i < 2 * n; ++i) flat[i] = x[i];
        write_csv2d(rc.out_dir + "/samples.csv", flat);

        const int64_t res = 200;
        Tensor grid({res * res, model.config().height, model.config().width,
                     model.config().channels});
        for (int64_t i = 0; i < res; ++i) {
            for (int64_t j = 0; j < res; ++j) {
                grid[(i * res + j) * 2] = static_cast<real_t>(-6.0 + 12.0 * j / (res - 1));
                grid[(i * res + j) * 2 + 1] = static_cast<real_t>(6.0 - 12.0 * i / (res - 1));
            }
        }
        Tensor ll = model.log_likelihood(grid);
        double max_ll = -1e300;
        for (int64_t i = 0; i < ll.numel(); ++i) max_ll = std::max(max_ll, (double)ll[i]);
        ImageU8 img;
        img.height = res;
        img.width = res;
        img.channels = 1;
        img.pixels.resize(static_cast<size_t>(res * res));
        for (int64_t i = 0; i < res * res; ++i) {
            img.pixels[static_cast<size_t>(i)] =
                static_cast<uint8_t>(255.0 * std::exp(static_cast<double>(ll[i]) - max_ll));
        }
        write_pnm(rc.out_dir + "/density.pgm", img);
        std::printf("wrote %s and %s\n", (rc.out_dir + "/samples.csv").c_str(),
                    (rc.out_dir + "/density.pgm").c_str());
        return 0;
    }

    const std::string path =
        rc.out_dir + "/samples" + grid_extension(model.config().channels);
    write_sample_grid(path, x, kv.get_int("sample.rows", 0));
    std::printf("wrote %s\n", path.c_str());
    return 0;
}

int cmd_interpolate(const RunConfig& rc) {
    KeyValues kv = load_run_config(rc);
    LoadedCheckpoint lc = require_checkpoint(rc);
    FlowModel& model = *lc.model;
    if (model.conditional()) {
        throw ConfigError("interpolate requires an unconditional checkpoint");
    }
    const ImageDataset ds = load_nvpd(kv.require_str("interp.data"));
    const std::vector<int64_t> indices = parse_int_list(kv.get_str("interp.indices", "0,1,2,3"));
    if (indices.size() != 4) {
        throw ConfigError("interpolate requires exactly 4 input indices, got " +
                          std::to_string(indices.size()));
    }
    const int64_t steps = kv.get_int("interp.steps", 8);
    if (steps < 1) throw ConfigError("interp.steps must be positive");
    const uint64_t seed = rc.seed.value_or(0);
    fs::create_directories(rc.out_dir);

    Tensor u = preprocess_images(ds, indices, seed);
    Tensor z = model.encode(u);
    const int64_t d = z.dim(1);

    Tensor zg({steps * steps, d});
    constexpr double kTwoPi = 6.28318530717958647692;
    for (int64_t a = 0; a < steps; ++a) {
        const double phi = kTwoPi * static_cast<double>(a) / static_cast<double>(steps);
        for (int64_t b = 0; b < steps; ++b) {
            const double phi2 = kTwoPi * static_cast<double>(b) / static_cast<double>(steps);
            Tensor row = manifold_interpolate(z, phi, phi2);
            for (int64_t k = 0; k < d; ++k) zg[(a * steps + b) * d + k] = row[k];
        }
    }
    Tensor decoded = model.decode(zg);
    const std::string path = rc.out_dir + "/manifold" + grid_extension(ds.channels);
    write_sample_grid(path, decoded, steps);
    std::printf("wrote %s (%lldx%lld grid)\n", path.c_str(), static_cast<long long>(steps),
                static_cast<long long>(steps));
    return 0;
}

int cmd_compress(const RunConfig& rc) {
    KeyValues kv = load_run_config(rc);
    LoadedCheckpoint lc = require_checkpoint(rc);
    FlowModel& model = *lc.model;
    if (model.conditional()) {
        throw ConfigError("compress requires an unconditional checkpoint");
    }
    const ImageDataset ds = load_nvpd(kv.require_str("compress.data"));
    std::vector<int64_t> indices = parse_int_list(kv.get_str("compress.indices", "0,1,2,3"));
    if (indices.empty()) throw ConfigError("compress requires at least one input index");
    const std::vector<double> fractions =
        parse_real_list(kv.get_str("compress.fractions", kDefaultCompressFractions));
    if (fractions.empty()) throw ConfigError("compress requires at least one keep fraction");
    const uint64_t seed = rc.seed.value_or(0);
    fs::create_directories(rc.out_dir);

    // achievable keep sizes: whole scales counted from the coarsest
    const std::vector<Shape> shapes = model.factored_shapes();
    const int64_t d = model.dim();
    std::vector<int64_t> achievable{0};
    int64_t acc = 0;
    for (auto it = shapes.rbegin(); it != shapes.rend(); ++it) {
        acc += shape_numel(*it);
        achievable.push_back(acc);
    }
    auto keep_dims_for = [&](double percent) -> int64_t {
        for (int64_t k : achievable) {
            if (std::abs(percent / 100.0 * static_cast<double>(d) - static_cast<double>(k)) <
                1e-6) {
                return k;
            }
        }
        std::string list;
        for (int64_t k : achievable) {
            if (!list.empty()) list += ", ";
            char buf[32];
            std::snprintf(buf, sizeof(buf), "%g%%", 100.0 * static_cast<double>(k) /
                                                        static_cast<double>(d));
            list += buf;
        }
        throw ConfigError("keep fraction " + std::to_string(percent) +
                          "% is not achievable by the scale structure; achievable: " + list);
    };
    std::vector<int64_t> keeps;
    for (double f : fractions) keeps.push_back(keep_dims_for(f));

    Tensor u = preprocess_images(ds, indices, seed);
    Tensor z = model.encode(u);
    const int64_t n = z.dim(0);

    std::vector<ImageU8> cells;
    for (int64_t i = 0; i < n; ++i) {
        for (size_t fi = 0; fi < keeps.size(); ++fi) {
            const int64_t keep = keeps[fi];
            Tensor zi({1, d});
            Rng rng(derive_seed(seed, 4, static_cast<uint64_t>(i * 16 + static_cast<int64_t>(fi))));
            for (int64_t k = 0; k < d; ++k) {
                // kept dims are the coarsest scales, stored at the end of z
                const bool kept = k >= d - keep;
                zi[k] = kept ? z[i * d + k] : static_cast<real_t>(rng.normal());
            }
            Tensor x = model.decode(zi);
            cells.push_back(u_to_pixels(slice_sample(x, 0)));
        }
    }
    const std::string path = rc.out_dir + "/compression" + grid_extension(ds.channels);
    write_pnm(path, tile_grid(cells, n, static_cast<int64_t>(keeps.size())));
    std::printf("wrote %s (%lld inputs x %zu fractions)\n", path.c_str(),
                static_cast<long long>(n), keeps.size());
    return 0;
}

int cmd_extrapolate(const RunConfig& rc) {
    KeyValues kv = load_run_config(rc);
    LoadedCheckpoint lc = require_checkpoint(rc);
    FlowModel& model = *lc.model;
    if (model.conditional()) {
        throw ConfigError("extrapolate requires an unconditional checkpoint");
    }
    const int64_t factor = kv.get_int("extrap.factor", 2);
    if (factor < 1) throw ConfigError("extrap.factor must be >= 1");
    const int64_t n = kv.get_int("extrap.n", 1);
    if (n < 1) throw ConfigError("extrap.n must be >= 1");
    const uint64_t seed = rc.seed.value_or(0);
    fs::create_directories(rc.out_dir);

    const int64_t h = kv.get_int("extrap.height", model.config().height * factor);
    const int64_t w = kv.get_int("extrap.width", model.config().width * factor);
    model.factored_shapes(h, w);  // validates the scaled shape chain
    Tensor x = model.sample(n, seed, nullptr, h, w);
    const std::string path = rc.out_dir + "/extrapolated" +
                             grid_extension(model.config().channels);
    write_sample_grid(path, x, 1);
    std::printf("wrote %s (%lldx%lld)\n", path.c_str(), static_cast<long long>(h),
                static_cast<long long>(w));
    return 0;
}

int cmd_attr_transfer(const RunConfig& rc) {
    KeyValues kv = load_run_config(rc);
    LoadedCheckpoint lc = require_checkpoint(rc);
    FlowModel& model = *lc.model;
    if (!model.conditional()) {
        throw ConfigError("attribute transfer requires a conditional checkpoint");
    }
    const ImageDataset ds = load_nvpd(kv.require_str("attr.data"));
    auto [labels, bits] = read_labels_csv(kv.require_str("attr.labels"));
    if (bits != model.config().attr_bits) {
        throw ConfigError("label attribute count does not match the checkpoint");
    }
    std::vector<int64_t> indices = parse_int_list(kv.get_str("attr.indices", "0,1,2,3,4,5,6,7"));
    if (indices.empty()) throw ConfigError("attr.indices must name at least one image");
    const std::string permute = kv.get_str("attr.permute", "shift");
    const uint64_t seed = rc.seed.value_or(0);
    fs::create_directories(rc.out_dir);

    const int64_t n = static_cast<int64_t>(indices.size());
    Tensor y({n, bits});
    for (int64_t i = 0; i < n; ++i) {
        for (int64_t k = 0; k < bits; ++k) {
            y[i * bits + k] = static_cast<real_t>(
                labels[static_cast<size_t>(indices[static_cast<size_t>(i)] * bits + k)]);
        }
    }
    Tensor y2({n, bits});
    for (int64_t i = 0; i < n; ++i) {
        int64_t src = i;
        if (permute == "shift") {
            src = (i + 1) % n;
        } else if (permute == "reverse") {
            src = n - 1 - i;
        } else if (permute != "identity") {
            throw ConfigError("attr.permute must be shift, reverse, or identity");
        }
        for (int64_t k = 0; k < bits; ++k) y2[i * bits + k] = y[src * bits + k];
    }

    Tensor u = preprocess_images(ds, indices, seed);
    Tensor z = model.encode(u, nullptr, &y);
    Tensor xt = model.decode(z, &y2);

    std::vector<ImageU8> cells;
    for (int64_t i = 0; i < n; ++i) cells.push_back(u_to_pixels(slice_sample(u, i)));
    for (int64_t i = 0; i < n; ++i) cells.push_back(u_to_pixels(slice_sample(xt, i)));
    const std::string path = rc.out_dir + "/attr_transfer" + grid_extension(ds.channels);
    write_pnm(path, tile_grid(cells, 2, n));
    std::printf("wrote %s\n", path.c_str());
    return 0;
}

int run_command(const RunConfig& rc) {
    try {
        if (rc.subcommand == "train") return cmd_train(rc);
        if (rc.subcommand == "eval") return cmd_eval(rc);
        if (rc.subcommand == "sample") return cmd_sample(rc);
        if (rc.subcommand == "interpolate") return cmd_interpolate(rc);
        if (rc.subcommand == "compress") return cmd_compress(rc);
        if (rc.subcommand == "extrapolate") return cmd_extrapolate(rc);
        if (rc.subcommand == "attr-transfer") return cmd_attr_transfer(rc);
        std::fprintf(stderr, "unknown subcommand '%s'\n", rc.subcommand.c_str());
        return 2;
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const IoError& e) {
        std::fprintf(stderr, "io error: %s\n", e.what());
        return 2;
    } catch (const DivergenceError& e) {
        std::fprintf(stderr, "numerical divergence: %s\n", e.what());
        return 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}

}  // namespace nvp
