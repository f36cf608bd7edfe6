#include "nvp/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "nvp/trainer.hpp"

namespace nvp {

uint64_t fnv1a64(const std::string& data) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : data) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

namespace {

std::string fmt_real(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

std::string flow_config_text(const FlowConfig& c) {
    std::map<std::string, std::string> kv;
    kv["height"] = std::to_string(c.height);
    kv["width"] = std::to_string(c.width);
    kv["channels"] = std::to_string(c.channels);
    kv["num_levels"] = std::to_string(c.num_levels);
    kv["checker_couplings"] = std::to_string(c.checker_couplings);
    kv["channel_couplings"] = std::to_string(c.channel_couplings);
    kv["final_couplings"] = std::to_string(c.final_couplings);
    kv["hidden"] = std::to_string(c.hidden);
    kv["res_blocks"] = std::to_string(c.res_blocks);
    kv["kernel"] = std::to_string(c.kernel);
    kv["bn_eps"] = fmt_real(static_cast<double>(c.bn_eps));
    kv["bn_momentum"] = fmt_real(static_cast<double>(c.bn_momentum));
    kv["attr_bits"] = std::to_string(c.attr_bits);
    kv["init_seed"] = std::to_string(c.init_seed);
    std::string out;
    for (const auto& [k, v] : kv) {
        out += k;
        out += '=';
        out += v;
        out += '\n';
    }
    return out;
}

FlowConfig parse_flow_config_text(const std::string& text) {
    std::map<std::string, std::string> kv;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        const size_t eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError("malformed config line: " + line);
        kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
    auto geti = [&](const char* k) -> int64_t {
        auto it = kv.find(k);
        if (it == kv.end()) throw ConfigError(std::string("missing config key ") + k);
        return std::stoll(it->second);
    };
    auto getr = [&](const char* k) -> real_t {
        auto it = kv.find(k);
        if (it == kv.end()) throw ConfigError(std::string("missing config key ") + k);
        return static_cast<real_t>(std::strtod(it->second.c_str(), nullptr));
    };
    FlowConfig c;
    c.height = geti("height");
    c.width = geti("width");
    c.channels = geti("channels");
    c.num_levels = static_cast<int>(geti("num_levels"));
    c.checker_couplings = static_cast<int>(geti("checker_couplings"));
    c.channel_couplings = static_cast<int>(geti("channel_couplings"));
    c.final_couplings = static_cast<int>(geti("final_couplings"));
    c.hidden = geti("hidden");
    c.res_blocks = static_cast<int>(geti("res_blocks"));
    c.kernel = static_cast<int>(geti("kernel"));
    c.bn_eps = getr("bn_eps");
    c.bn_momentum = getr("bn_momentum");
    c.attr_bits = geti("attr_bits");
    c.init_seed = static_cast<uint64_t>(geti("init_seed"));
    return c;
}

// ---------------------------------------------------------------------------
// binary encoding
// ---------------------------------------------------------------------------

namespace {

constexpr char kCkptMagic[4] = {'N', 'V', 'P', 'C'};
constexpr uint32_t kCkptVersion = 1;

void put_u32(std::ostream& os, uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<char*>(b), 4);
}

void put_u64(std::ostream& os, uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<char*>(b), 8);
}

void put_str(std::ostream& os, const std::string& s) {
    put_u32(os, static_cast<uint32_t>(s.size()));
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

void put_tensor(std::ostream& os, const Tensor& t) {
    put_u32(os, static_cast<uint32_t>(t.rank()));
    for (int i = 0; i < t.rank(); ++i) put_u64(os, static_cast<uint64_t>(t.dim(i)));
    for (int64_t i = 0; i < t.numel(); ++i) {
        put_u64(os, std::bit_cast<uint64_t>(static_cast<double>(t[i])));
    }
}

struct Reader {
    std::ifstream is;
    std::string path;

    explicit Reader(const std::string& p) : is(p, std::ios::binary), path(p) {
        if (!is) throw IoError("cannot open " + p);
    }
    void raw(void* dst, size_t n) {
        if (!is.read(static_cast<char*>(dst), static_cast<std::streamsize>(n))) {
            throw IoError(path + ": truncated checkpoint");
        }
    }
    uint32_t u32() {
        unsigned char b[4];
        raw(b, 4);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
        return v;
    }
    uint64_t u64() {
        unsigned char b[8];
        raw(b, 8);
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
        return v;
    }
    std::string str() {
        const uint32_t n = u32();
        std::string s(n, '\0');
        if (n) raw(s.data(), n);
        return s;
    }
    Tensor tensor() {
        const uint32_t rank = u32();
        Shape shape;
        for (uint32_t i = 0; i < rank; ++i) shape.push_back(static_cast<int64_t>(u64()));
        Tensor t(std::move(shape));
        for (int64_t i = 0; i < t.numel(); ++i) {
            t[i] = static_cast<real_t>(std::bit_cast<double>(u64()));
        }
        return t;
    }
};

}  // namespace

void save_checkpoint(const std::string& path, FlowModel& model, int64_t step, const Adam* adam) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open " + path + " for writing");
    const std::string cfg = flow_config_text(model.config());

    os.write(kCkptMagic, 4);
    put_u32(os, kCkptVersion);
    put_u64(os, fnv1a64(cfg));
    put_u64(os, static_cast<uint64_t>(step));
    put_u32(os, adam ? 1u : 0u);
    put_str(os, cfg);

    std::vector<Parameter*> params;
    model.collect_params(params);
    put_u32(os, static_cast<uint32_t>(params.size()));
    for (Parameter* p : params) {
        put_str(os, p->name);
        put_tensor(os, p->value);
    }

    std::vector<BatchNorm*> norms;
    model.collect_norms(norms);
    put_u32(os, static_cast<uint32_t>(norms.size()));
    for (BatchNorm* bn : norms) {
        put_str(os, bn->name());
        put_tensor(os, bn->running_mean());
        put_tensor(os, bn->running_var());
    }

    if (adam) {
        put_u64(os, static_cast<uint64_t>(adam->step_count()));
        put_u32(os, static_cast<uint32_t>(adam->params().size()));
        Adam& a = const_cast<Adam&>(*adam);
        for (size_t i = 0; i < adam->params().size(); ++i) {
            put_str(os, adam->params()[i]->name);
            put_tensor(os, a.moment1(i));
            put_tensor(os, a.moment2(i));
        }
    }
    if (!os) throw IoError("write failure on " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
    Reader r(path);
    char magic[4];
    r.raw(magic, 4);
    if (std::memcmp(magic, kCkptMagic, 4) != 0) {
        throw IoError(path + ": bad checkpoint magic at offset 0");
    }
    const uint32_t version = r.u32();
    if (version != kCkptVersion) {
        throw IoError(path + ": unsupported checkpoint version " + std::to_string(version));
    }
    const uint64_t stored_hash = r.u64();
    LoadedCheckpoint out;
    out.step = static_cast<int64_t>(r.u64());
    out.has_adam = r.u32() != 0;
    const std::string cfg_text = r.str();
    if (fnv1a64(cfg_text) != stored_hash) {
        throw ConfigError(path + ": checkpoint topology hash mismatch");
    }
    out.config = parse_flow_config_text(cfg_text);
    out.model = std::make_unique<FlowModel>(out.config);

    std::vector<Parameter*> params;
    out.model->collect_params(params);
    std::map<std::string, Parameter*> by_name;
    for (Parameter* p : params) by_name[p->name] = p;
    const uint32_t n_params = r.u32();
    if (n_params != params.size()) {
        throw ConfigError(path + ": parameter count mismatch against rebuilt topology");
    }
    for (uint32_t i = 0; i < n_params; ++i) {
        const std::string name = r.str();
        Tensor value = r.tensor();
        auto it = by_name.find(name);
        if (it == by_name.end()) throw ConfigError(path + ": unknown parameter '" + name + "'");
        if (it->second->value.shape() != value.shape()) {
            throw ConfigError(path + ": shape mismatch for parameter '" + name + "'");
        }
        it->second->value = std::move(value);
    }

    std::vector<BatchNorm*> norms;
    out.model->collect_norms(norms);
    std::map<std::string, BatchNorm*> norms_by_name;
    for (BatchNorm* bn : norms) norms_by_name[bn->name()] = bn;
    const uint32_t n_norms = r.u32();
    if (n_norms != norms.size()) {
        throw ConfigError(path + ": running-statistics count mismatch");
    }
    for (uint32_t i = 0; i < n_norms; ++i) {
        const std::string name = r.str();
        Tensor mean = r.tensor();
        Tensor var = r.tensor();
        auto it = norms_by_name.find(name);
        if (it == norms_by_name.end()) {
            throw ConfigError(path + ": unknown normalization '" + name + "'");
        }
        it->second->running_mean() = std::move(mean);
        it->second->running_var() = std::move(var);
    }

    if (out.has_adam) {
        out.adam_t = static_cast<int64_t>(r.u64());
        const uint32_t n = r.u32();
        for (uint32_t i = 0; i < n; ++i) {
            std::string name = r.str();
            Tensor m = r.tensor();
            Tensor v = r.tensor();
            out.adam_moments.emplace_back(std::move(name), std::make_pair(std::move(m), std::move(v)));
        }
    }
    return out;
}

}  // namespace nvp
