#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "cb/model.hpp"

namespace cb {

// Training hyperparameters; the defaults are the published configuration
// (30 epochs, lr 0.0025, weight decay 1e-4, momentum 0.9, SGD, batch 4).
struct TrainConfig {
    int epochs = 30;
    double learning_rate = 0.0025;
    double weight_decay = 0.0001;
    double momentum = 0.9;
    std::string optimizer = "sgd";
    int batch_size = 4;
    std::uint64_t seed = 0;
    std::string generator_combo = "Channel Generator-1";
    std::string merger_preset = "Channel Merger-1";
    int c_fpn = 16;
    bool deterministic = true;

    std::string profile = "desk";  // "desk" | "paper"
    double clip_norm = 10.0;
    bool augment_flips = false;
    int max_iterations = 0;      // 0: run all epochs; otherwise hard cap
    int checkpoint_every = 1;    // epochs between checkpoints
    std::string run_dir;         // outputs land here when non-empty

    void validate() const;
    ModelConfig to_model_config() const;
};

// Applies the named width/depth profile to a model config.
GeneratorScale profile_scale(const std::string& profile);

struct SgdOptimizer {
    double learning_rate, momentum, weight_decay, clip_norm;
    std::vector<std::vector<double>> velocity;

    SgdOptimizer(double lr, double momentum, double weight_decay, double clip_norm)
        : learning_rate(lr), momentum(momentum), weight_decay(weight_decay), clip_norm(clip_norm) {}

    // grad_scale multiplies gradients before clipping (batch averaging).
    void step(ParamStore& store, double grad_scale);
};

struct RunRecord {
    std::string config_json;
    std::string config_hash;
    std::vector<LossBreakdown> iterations;
    std::vector<std::string> checkpoint_paths;
    std::vector<GroupGradNorm> first_step_grads;
    bool aborted = false;
    std::string abort_reason;

    void save(const std::string& path) const;
};

using IterationCallback =
    std::function<void(int iteration, const LossBreakdown&, Model&)>;

// SGD with momentum/weight decay, gradient clipping at a global norm,
// per-epoch checkpoints, deterministic batch order per seed. A NaN loss
// aborts with the last good parameters restored and saved.
RunRecord train(const TrainConfig& config, const std::vector<ImageSample>& dataset, Model& model,
                const IterationCallback& on_iteration = nullptr);

// Convenience: build the model from the config, then train.
std::unique_ptr<Model> build_pipeline(const TrainConfig& config);

MetricsReport evaluate_model(Model& model, const std::vector<ImageSample>& dataset,
                             const MatchCriterion& criterion);

// Inference without metrics (unlabeled data); returns detections per image id.
std::map<std::string, std::vector<Detection>> run_inference(Model& model,
                                                            const std::vector<ImageSample>& dataset);

struct AblationRow {
    std::string label;   // "Comparison Model-k"
    std::string combo, merger;
    bool failed = false;
    std::string error;
    double train_f = 0, train_recall = 0;
    double eval_f = 0, eval_recall = 0;
};

struct AblationReport {
    std::vector<AblationRow> rows;
    std::string config_hash;

    std::string to_json() const;
    std::string to_text() const;
    void save(const std::string& dir) const;
};

// Trains/evaluates each (combo[k], merger[k]) pairing with a shared seed and
// shared data; per-row failures are recorded without aborting the sweep.
AblationReport ablate(const std::vector<std::string>& combo_names,
                      const std::vector<std::string>& merger_names, const TrainConfig& base_config,
                      const std::vector<ImageSample>& train_set,
                      const std::vector<ImageSample>& eval_set);

// Canonical config hash: FNV-1a over the sorted-key JSON dump.
std::string config_hash_of(const std::string& canonical_json);

}  // namespace cb
