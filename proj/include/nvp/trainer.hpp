#pragma once

#include <memory>

#include "nvp/datapipe.hpp"
#include "nvp/flow_model.hpp"

namespace nvp {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Bias-corrected Adam over a fixed parameter list. A step with any
/// non-finite gradient is rejected before touching parameters or moments.
class Adam {
public:
    Adam(AdamConfig cfg, std::vector<Parameter*> params);

    void step();

    int64_t step_count() const { return t_; }
    void set_step_count(int64_t t) { t_ = t; }
    const AdamConfig& config() const { return cfg_; }
    const std::vector<Parameter*>& params() const { return params_; }
    Tensor& moment1(size_t i) { return m_[i]; }
    Tensor& moment2(size_t i) { return v_[i]; }

private:
    AdamConfig cfg_;
    std::vector<Parameter*> params_;
    std::vector<Tensor> m_, v_;
    int64_t t_ = 0;
};

double global_grad_norm(const std::vector<Parameter*>& params);
// Scales gradients so the global norm does not exceed max_norm.
void clip_gradients(const std::vector<Parameter*>& params, double max_norm);

enum class DataKind { images, toy2d };

struct ImageSplit {
    const ImageDataset* images = nullptr;
    const std::vector<uint8_t>* labels = nullptr;  // attr_bits per image, conditional models
};

struct TrainData {
    DataKind kind = DataKind::images;
    ImageSplit train;
    ImageSplit valid;
    Tensor toy_train;  // [N,2]
    Tensor toy_valid;
};

struct TrainConfig {
    FlowConfig model;
    AdamConfig adam;
    int64_t batch_size = 64;
    int64_t max_steps = 1000;
    double l2_scale = 5e-5;  // L2 coefficient on weight-scale parameters
    int64_t eval_interval = 250;
    uint64_t seed = 1;
    double flip_prob = 0.5;  // horizontal flip probability, image data only
    double grad_clip = 100.0;
    int64_t max_eval_samples = 512;
    bool log_wallclock = true;

    void validate() const;
};

struct MetricsRow {
    int64_t step;
    double train_nll;  // window mean of per-step batch NLL, nats per sample
    double val_bpd;    // validation bits/dim in eval mode (logit-corrected for images)
    double wallclock;
};

std::string metrics_csv_header();
std::string metrics_csv_row(const MetricsRow& row);

struct TrainResult {
    std::vector<MetricsRow> metrics;
    int64_t final_step = 0;
    bool diverged = false;
    std::string divergence_message;
    double final_val_bpd = 0;
};

// Mean validation bits/dim over the split in eval mode, deterministic in
// (seed, step). The trainer's logged val_bpd and cmd_eval both call this, so
// the two always agree.
double evaluate_split_bpd(FlowModel& model, const TrainData& data, uint64_t seed, int64_t step,
                          int64_t max_eval_samples);

/// Maximum-likelihood training loop. Every random draw comes from a stream
/// derived from (seed, purpose, step), so a run is a pure function of
/// (config, seeds, dataset) and training can resume from a checkpoint
/// without serialized generator state.
class Trainer {
public:
    Trainer(TrainConfig cfg, TrainData data);
    static Trainer resume(const std::string& checkpoint_path, TrainConfig cfg, TrainData data);

    // Runs to cfg.max_steps. When out_dir is non-empty, writes metrics.csv
    // and checkpoint.nvpc there (checkpoint refreshed at every eval
    // interval). On divergence the last good state is checkpointed and the
    // result is marked diverged.
    TrainResult run(const std::string& out_dir);

    FlowModel& model() { return model_; }
    const TrainConfig& config() const { return cfg_; }
    int64_t start_step() const { return start_step_; }

    // Optimized objective and its reported-NLL component for one batch:
    // loss = mean NLL + l2_scale * sum of squared weight-scale parameters.
    std::pair<Var, Var> objective(FlowCtx& ctx, Var u, int64_t dims);

    // Validation metric in eval mode (frozen running statistics).
    double validation_bpd(int64_t step);

private:
    struct Batch {
        Tensor u;        // model-space input [N,H,W,C]
        Tensor attrs;    // [N,K] when conditional, else empty
        Tensor logit_ld; // per-sample preprocessing log-det, images only
    };
    Batch make_batch(int64_t step, bool training_split);

    struct Snapshot {
        std::vector<Tensor> params;
        std::vector<std::pair<Tensor, Tensor>> norm_stats;
        std::vector<Tensor> m, v;
        int64_t adam_t = 0;
    };
    Snapshot snapshot() const;
    void restore(const Snapshot& s);

    TrainConfig cfg_;
    TrainData data_;
    FlowModel model_;
    std::vector<Parameter*> params_;
    std::vector<Parameter*> weight_scales_;
    std::vector<BatchNorm*> norms_;
    std::unique_ptr<Adam> adam_;
    int64_t start_step_ = 0;
};

}  // namespace nvp
