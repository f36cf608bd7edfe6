#pragma once

#include <memory>
#include <string>

#include "nvp/flow_model.hpp"

namespace nvp {

class Adam;

// Canonical flat key=value text for a model topology; keys sorted, reals
// printed with enough digits to round-trip exactly.
std::string flow_config_text(const FlowConfig& cfg);
FlowConfig parse_flow_config_text(const std::string& text);
uint64_t fnv1a64(const std::string& data);

// Versioned self-describing container holding the model topology, all
// parameters, batch-norm running statistics, the step counter, and (when
// present) Adam moments. Load refuses a mismatched topology hash.
void save_checkpoint(const std::string& path, FlowModel& model, int64_t step,
                     const Adam* adam = nullptr);

struct LoadedCheckpoint {
    FlowConfig config;
    int64_t step = 0;
    std::unique_ptr<FlowModel> model;
    bool has_adam = false;
    int64_t adam_t = 0;
    // name-keyed Adam moments, aligned with the parameter names
    std::vector<std::pair<std::string, std::pair<Tensor, Tensor>>> adam_moments;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace nvp
