#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace nvp {

// default keep-fraction ladder of the compress command, in percent
inline constexpr const char* kDefaultCompressFractions = "100,50,25,12.5,6.25";

/// Flat key=value configuration: file values first, then command-line
/// overrides. Keys are schema-validated against the documented set before
/// any compute runs.
class KeyValues {
public:
    KeyValues() = default;
    explicit KeyValues(std::map<std::string, std::string> kv) : kv_(std::move(kv)) {}

    void set(const std::string& key, const std::string& value) { kv_[key] = value; }
    bool has(const std::string& key) const { return kv_.count(key) > 0; }

    std::string get_str(const std::string& key, const std::string& dflt) const;
    std::string require_str(const std::string& key) const;
    int64_t get_int(const std::string& key, int64_t dflt) const;
    double get_real(const std::string& key, double dflt) const;
    bool get_bool(const std::string& key, bool dflt) const;

    const std::map<std::string, std::string>& raw() const { return kv_; }

private:
    std::map<std::string, std::string> kv_;
};

// Parses '#'-commented key=value lines.
KeyValues parse_config_file(const std::string& path);
// Rejects keys outside the documented schema.
void validate_config_keys(const KeyValues& kv);

struct RunConfig {
    std::string subcommand;
    std::string config_path;       // optional for checkpoint-driven commands
    std::string out_dir = "out";
    std::string checkpoint;
    std::optional<uint64_t> seed;  // --seed flag
    std::vector<std::string> overrides;  // key=value
};

// Merged file + override key set for a run.
KeyValues load_run_config(const RunConfig& rc);

int cmd_train(const RunConfig& rc);
int cmd_eval(const RunConfig& rc);
int cmd_sample(const RunConfig& rc);
int cmd_interpolate(const RunConfig& rc);
int cmd_compress(const RunConfig& rc);
int cmd_extrapolate(const RunConfig& rc);
int cmd_attr_transfer(const RunConfig& rc);

// Dispatches rc.subcommand and maps errors to exit codes:
// 0 success, 2 configuration error, 3 numerical divergence, 1 otherwise.
int run_command(const RunConfig& rc);

}  // namespace nvp
