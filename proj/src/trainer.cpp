#include "nvp/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>

#include "nvp/checkpoint.hpp"

namespace nvp {

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

Adam::Adam(AdamConfig cfg, std::vector<Parameter*> params)
    : cfg_(cfg), params_(std::move(params)) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (Parameter* p : params_) {
        m_.emplace_back(p->value.shape());
        v_.emplace_back(p->value.shape());
    }
}

void Adam::step() {
    for (Parameter* p : params_) {
        for (int64_t i = 0; i < p->grad.numel(); ++i) {
            if (!std::isfinite(static_cast<double>(p->grad[i]))) {
                throw DivergenceError("non-finite gradient for parameter '" + p->name + "'");
            }
        }
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (size_t k = 0; k < params_.size(); ++k) {
        Parameter* p = params_[k];
        if (!p->requires_grad) continue;
        Tensor& m = m_[k];
        Tensor& v = v_[k];
        for (int64_t i = 0; i < p->value.numel(); ++i) {
            const double g = p->grad[i];
            m[i] = static_cast<real_t>(cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g);
            v[i] = static_cast<real_t>(cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g);
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            p->value[i] -= static_cast<real_t>(cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps));
        }
    }
}

double global_grad_norm(const std::vector<Parameter*>& params) {
    double acc = 0;
    for (const Parameter* p : params) {
        for (int64_t i = 0; i < p->grad.numel(); ++i) {
            acc += static_cast<double>(p->grad[i]) * static_cast<double>(p->grad[i]);
        }
    }
    return std::sqrt(acc);
}

void clip_gradients(const std::vector<Parameter*>& params, double max_norm) {
    const double norm = global_grad_norm(params);
    if (norm <= max_norm || norm == 0) return;
    const real_t scale = static_cast<real_t>(max_norm / norm);
    for (Parameter* p : params) {
        for (int64_t i = 0; i < p->grad.numel(); ++i) p->grad[i] *= scale;
    }
}

// ---------------------------------------------------------------------------
// config and metrics
// ---------------------------------------------------------------------------

void TrainConfig::validate() const {
    if (batch_size < 2) throw ConfigError("batch_size must be >= 2 (batch normalization)");
    if (max_steps < 1) throw ConfigError("max_steps must be positive");
    if (eval_interval < 1) throw ConfigError("eval_interval must be positive");
    if (!(adam.lr > 0)) throw ConfigError("learning rate must be positive");
    if (l2_scale < 0) throw ConfigError("l2_scale must be non-negative");
    if (flip_prob < 0 || flip_prob > 1) throw ConfigError("flip_prob must lie in [0,1]");
    if (!(grad_clip > 0)) throw ConfigError("grad_clip must be positive");
    if (max_eval_samples < 1) throw ConfigError("max_eval_samples must be positive");
}

std::string metrics_csv_header() { return "step,train_nll,val_bpd,wallclock\n"; }

std::string metrics_csv_row(const MetricsRow& row) {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%lld,%.9g,%.9g,%.3f\n", static_cast<long long>(row.step),
                  row.train_nll, row.val_bpd, row.wallclock);
    return buf;
}

// ---------------------------------------------------------------------------
// Trainer
// ---------------------------------------------------------------------------

Trainer::Trainer(TrainConfig cfg, TrainData data)
    : cfg_(cfg), data_(std::move(data)), model_(cfg.model) {
    cfg_.validate();
    if (data_.kind == DataKind::images) {
        if (!data_.train.images || !data_.valid.images) {
            throw ConfigError("image training requires train and valid datasets");
        }
        const ImageDataset& tr = *data_.train.images;
        if (tr.height != cfg_.model.height || tr.width != cfg_.model.width ||
            tr.channels != cfg_.model.channels) {
            throw ConfigError("dataset dimensions do not match the model input shape");
        }
        if (model_.conditional()) {
            if (!data_.train.labels || !data_.valid.labels) {
                throw ConfigError("conditional model requires labeled datasets");
            }
            if (static_cast<int64_t>(data_.train.labels->size()) !=
                tr.count * cfg_.model.attr_bits) {
                throw ConfigError("label count does not match dataset");
            }
        }
    } else {
        if (model_.conditional()) throw ConfigError("toy 2-d training is unconditional");
        if (cfg_.model.height * cfg_.model.width * cfg_.model.channels != 2) {
            throw ConfigError("toy 2-d training requires a 2-dimensional model input");
        }
        if (data_.toy_train.rank() != 2 || data_.toy_train.dim(1) != 2 ||
            data_.toy_valid.rank() != 2 || data_.toy_valid.dim(1) != 2) {
            throw ConfigError("toy training requires [N,2] sample tensors");
        }
    }
    model_.collect_params(params_);
    model_.collect_weight_scales(weight_scales_);
    model_.collect_norms(norms_);
    adam_ = std::make_unique<Adam>(cfg_.adam, params_);
}

Trainer Trainer::resume(const std::string& checkpoint_path, TrainConfig cfg, TrainData data) {
    LoadedCheckpoint lc = load_checkpoint(checkpoint_path);
    if (flow_config_text(lc.config) != flow_config_text(cfg.model)) {
        throw ConfigError("checkpoint topology does not match the requested model config");
    }
    if (!lc.has_adam) {
        throw ConfigError(checkpoint_path + " carries no optimizer state; cannot resume");
    }
    Trainer tr(cfg, std::move(data));

    std::vector<Parameter*> src_params;
    lc.model->collect_params(src_params);
    std::map<std::string, Parameter*> by_name;
    for (Parameter* p : src_params) by_name[p->name] = p;
    for (Parameter* p : tr.params_) p->value = by_name.at(p->name)->value;

    std::vector<BatchNorm*> src_norms;
    lc.model->collect_norms(src_norms);
    std::map<std::string, BatchNorm*> norms_by_name;
    for (BatchNorm* bn : src_norms) norms_by_name[bn->name()] = bn;
    for (BatchNorm* bn : tr.norms_) {
        BatchNorm* src = norms_by_name.at(bn->name());
        bn->running_mean() = src->running_mean();
        bn->running_var() = src->running_var();
    }

    std::map<std::string, size_t> param_index;
    for (size_t i = 0; i < tr.params_.size(); ++i) param_index[tr.params_[i]->name] = i;
    for (auto& [name, mv] : lc.adam_moments) {
        auto it = param_index.find(name);
        if (it == param_index.end()) {
            throw ConfigError("checkpoint optimizer state names unknown parameter '" + name + "'");
        }
        tr.adam_->moment1(it->second) = mv.first;
        tr.adam_->moment2(it->second) = mv.second;
    }
    tr.adam_->set_step_count(lc.adam_t);
    tr.start_step_ = lc.step;
    return tr;
}

std::pair<Var, Var> Trainer::objective(FlowCtx& ctx, Var u, int64_t dims) {
    FlowModel::ForwardResult res = model_.forward_parts(ctx, u);
    Var sumsq;
    for (const Var& p : res.z_parts) {
        Var s2 = sum_per_sample(mul(p, p));
        sumsq = sumsq.valid() ? add(sumsq, s2) : s2;
    }
    Var logp = add(mul_scalar(sumsq, real_t(-0.5)), res.log_det);
    logp = add_scalar(logp, static_cast<real_t>(-0.5 * static_cast<double>(dims) * kLog2Pi));
    Var nll = neg(mean(logp));
    Var loss = nll;
    if (cfg_.l2_scale > 0 && !weight_scales_.empty()) {
        Var pen;
        for (Parameter* ws : weight_scales_) {
            Var w = ctx.param(*ws);
            Var s = sum(mul(w, w));
            pen = pen.valid() ? add(pen, s) : s;
        }
        loss = add(loss, mul_scalar(pen, static_cast<real_t>(cfg_.l2_scale)));
    }
    if (!std::isfinite(static_cast<double>(ctx.tape.value(loss)[0]))) {
        throw DivergenceError("non-finite training objective");
    }
    return {loss, nll};
}

namespace {

struct AssembledBatch {
    Tensor u;
    Tensor attrs;
    Tensor logit_ld;
};

AssembledBatch assemble_batch(const FlowConfig& mc, const TrainData& data, bool training,
                              int64_t batch_size, double flip_prob, int64_t max_eval, Rng& rng) {
    AssembledBatch out;
    const bool conditional = mc.attr_bits > 0;
    if (data.kind == DataKind::images) {
        const ImageSplit& split = training ? data.train : data.valid;
        const ImageDataset& ds = *split.images;
        std::vector<int64_t> indices;
        if (training) {
            indices.resize(static_cast<size_t>(batch_size));
            for (auto& ix : indices) ix = rng.uniform_int(ds.count);
        } else {
            const int64_t n = std::min(ds.count, max_eval);
            indices.resize(static_cast<size_t>(n));
            for (int64_t i = 0; i < n; ++i) indices[static_cast<size_t>(i)] = i;
        }
        // gather (+augment) pixels, then jitter and map to logit space
        const int64_t per = ds.image_size();
        std::vector<uint8_t> px(static_cast<size_t>(per) * indices.size());
        for (size_t s = 0; s < indices.size(); ++s) {
            const auto img = ds.image(indices[s]);
            std::copy(img.begin(), img.end(), px.begin() + static_cast<int64_t>(s) * per);
            if (training && flip_prob > 0 && rng.uniform() < flip_prob) {
                flip_pixels_u8(
                    {px.data() + static_cast<int64_t>(s) * per, static_cast<size_t>(per)},
                    ds.height, ds.width, ds.channels);
            }
        }
        Tensor raw = dequantize(
            px, {static_cast<int64_t>(indices.size()), ds.height, ds.width, ds.channels}, rng);
        auto [u, ld] = logit_transform(raw);
        out.u = std::move(u);
        out.logit_ld = std::move(ld);
        if (conditional) {
            const int64_t k = mc.attr_bits;
            out.attrs = Tensor({static_cast<int64_t>(indices.size()), k});
            for (size_t s = 0; s < indices.size(); ++s) {
                for (int64_t j = 0; j < k; ++j) {
                    out.attrs[static_cast<int64_t>(s) * k + j] = static_cast<real_t>(
                        (*split.labels)[static_cast<size_t>(indices[s] * k + j)]);
                }
            }
        }
    } else {
        const Tensor& pool = training ? data.toy_train : data.toy_valid;
        std::vector<int64_t> indices;
        if (training) {
            indices.resize(static_cast<size_t>(batch_size));
            for (auto& ix : indices) ix = rng.uniform_int(pool.dim(0));
        } else {
            const int64_t n = std::min(pool.dim(0), max_eval);
            indices.resize(static_cast<size_t>(n));
            for (int64_t i = 0; i < n; ++i) indices[static_cast<size_t>(i)] = i;
        }
        Tensor u({static_cast<int64_t>(indices.size()), mc.height, mc.width, mc.channels});
        for (size_t s = 0; s < indices.size(); ++s) {
            u[2 * static_cast<int64_t>(s)] = pool[2 * indices[s]];
            u[2 * static_cast<int64_t>(s) + 1] = pool[2 * indices[s] + 1];
        }
        out.u = std::move(u);
        out.logit_ld = Tensor({static_cast<int64_t>(indices.size())});
    }
    return out;
}

}  // namespace

double evaluate_split_bpd(FlowModel& model, const TrainData& data, uint64_t seed, int64_t step,
                          int64_t max_eval_samples) {
    Rng rng(derive_seed(seed, 2, static_cast<uint64_t>(step)));
    AssembledBatch b =
        assemble_batch(model.config(), data, false, 0, 0.0, max_eval_samples, rng);
    const Tensor* attrs = b.attrs.numel() > 0 ? &b.attrs : nullptr;
    Tensor ll = model.log_likelihood(b.u, attrs);
    const int64_t dims = b.u.numel() / b.u.dim(0);
    double acc = 0;
    for (int64_t i = 0; i < ll.numel(); ++i) {
        acc += bits_per_dim(static_cast<double>(ll[i]), static_cast<double>(b.logit_ld[i]), dims);
    }
    return acc / static_cast<double>(ll.numel());
}

Trainer::Batch Trainer::make_batch(int64_t step, bool training_split) {
    Rng rng(derive_seed(cfg_.seed, training_split ? 1 : 2, static_cast<uint64_t>(step)));
    AssembledBatch b = assemble_batch(cfg_.model, data_, training_split, cfg_.batch_size,
                                      cfg_.flip_prob, cfg_.max_eval_samples, rng);
    return Batch{std::move(b.u), std::move(b.attrs), std::move(b.logit_ld)};
}

double Trainer::validation_bpd(int64_t step) {
    return evaluate_split_bpd(model_, data_, cfg_.seed, step, cfg_.max_eval_samples);
}

Trainer::Snapshot Trainer::snapshot() const {
    Snapshot s;
    for (const Parameter* p : params_) s.params.push_back(p->value);
    for (const BatchNorm* bn : norms_) {
        s.norm_stats.emplace_back(bn->running_mean(), bn->running_var());
    }
    for (size_t i = 0; i < params_.size(); ++i) {
        s.m.push_back(adam_->moment1(i));
        s.v.push_back(adam_->moment2(i));
    }
    s.adam_t = adam_->step_count();
    return s;
}

void Trainer::restore(const Snapshot& s) {
    for (size_t i = 0; i < params_.size(); ++i) params_[i]->value = s.params[i];
    for (size_t i = 0; i < norms_.size(); ++i) {
        norms_[i]->running_mean() = s.norm_stats[i].first;
        norms_[i]->running_var() = s.norm_stats[i].second;
    }
    for (size_t i = 0; i < params_.size(); ++i) {
        adam_->moment1(i) = s.m[i];
        adam_->moment2(i) = s.v[i];
    }
    adam_->set_step_count(s.adam_t);
}

TrainResult Trainer::run(const std::string& out_dir) {
    TrainResult result;
    const int64_t dims = cfg_.model.height * cfg_.model.width * cfg_.model.channels;
    std::ofstream metrics;
    const std::string ckpt_path = out_dir.empty() ? "" : out_dir + "/checkpoint.nvpc";
    if (!out_dir.empty()) {
        metrics.open(out_dir + "/metrics.csv", std::ios::trunc);
        if (!metrics) throw IoError("cannot open " + out_dir + "/metrics.csv for writing");
        metrics << metrics_csv_header();
    }
    const auto t0 = std::chrono::steady_clock::now();
    auto wallclock = [&]() -> double {
        if (!cfg_.log_wallclock) return 0.0;
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    };
    auto log_row = [&](int64_t step, double window_nll) {
        MetricsRow row{step, window_nll, validation_bpd(step), wallclock()};
        result.metrics.push_back(row);
        if (metrics.is_open()) metrics << metrics_csv_row(row) << std::flush;
        result.final_val_bpd = row.val_bpd;
    };

    if (start_step_ == 0) {
        // probe NLL before any update; statistics are not mutated
        Batch b = make_batch(0, true);
        GradTape tape;
        FlowCtx ctx{tape, RunMode::train, false, /*track_grads=*/false, std::nullopt};
        if (b.attrs.numel() > 0) ctx.attrs = tape.constant(b.attrs);
        auto [loss, nll] = objective(ctx, tape.constant(b.u), dims);
        (void)loss;
        log_row(0, static_cast<double>(tape.value(nll)[0]));
    }

    double window_sum = 0;
    int64_t window_n = 0;
    // Last state with a witnessed finite forward pass; divergence rolls back
    // to it so the written checkpoint is always usable.
    Snapshot verified = snapshot();
    int64_t verified_step = start_step_;
    for (int64_t t = start_step_ + 1; t <= cfg_.max_steps; ++t) {
        try {
            Batch b = make_batch(t, true);
            GradTape tape;
            FlowCtx ctx{tape, RunMode::train, /*update_stats=*/true, /*track_grads=*/true,
                        std::nullopt};
            if (b.attrs.numel() > 0) ctx.attrs = tape.constant(b.attrs);
            auto [loss, nll] = objective(ctx, tape.constant(b.u), dims);
            const double nll_val = static_cast<double>(tape.value(nll)[0]);
            verified = snapshot();  // pre-update state evaluated finitely
            verified_step = t - 1;
            tape.backward(loss);
            clip_gradients(params_, cfg_.grad_clip);
            adam_->step();
            window_sum += nll_val;
            ++window_n;
        } catch (const DivergenceError& e) {
            restore(verified);
            result.diverged = true;
            result.divergence_message = e.what();
            result.final_step = verified_step;
            if (!ckpt_path.empty()) {
                save_checkpoint(ckpt_path, model_, verified_step, adam_.get());
            }
            return result;
        }
        if (t % cfg_.eval_interval == 0 || t == cfg_.max_steps) {
            log_row(t, window_n ? window_sum / static_cast<double>(window_n) : 0.0);
            window_sum = 0;
            window_n = 0;
            if (!ckpt_path.empty()) save_checkpoint(ckpt_path, model_, t, adam_.get());
        }
    }
    result.final_step = cfg_.max_steps;
    return result;
}

}  // namespace nvp
