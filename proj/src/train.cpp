#include "cb/train.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>

#include <json.hpp>

namespace cb {

namespace fs = std::filesystem;

void TrainConfig::validate() const {
    if (epochs < 1 && max_iterations <= 0)
        throw ConfigError("train: need epochs >= 1 or a positive max_iterations");
    if (learning_rate < 0 || weight_decay < 0 || momentum < 0 || momentum >= 1)
        throw ConfigError("train: bad optimizer hyperparameters");
    if (optimizer != "sgd") throw ConfigError("train: only the sgd optimizer is supported");
    if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    if (profile != "desk" && profile != "paper")
        throw ConfigError("train: profile must be 'desk' or 'paper'");
}

GeneratorScale profile_scale(const std::string& profile) {
    GeneratorScale scale;
    if (profile == "desk") return scale;  // the defaults are the desk profile
    if (profile == "paper") {
        // the published full-scale settings; buildable but far beyond desk runtime
        scale.channels = {64, 128, 256, 512};
        scale.depths = {3, 4, 6, 3};
        scale.deep_depths = {3, 4, 23, 3};
        scale.wide_channels = {96, 192, 384, 768};
        scale.attention_reduction = 16;
        return scale;
    }
    throw ConfigError("unknown profile: " + profile);
}

ModelConfig TrainConfig::to_model_config() const {
    ModelConfig mc;
    mc.combo_name = generator_combo;
    mc.merger_name = merger_preset;
    mc.c_fpn = c_fpn;
    mc.scale = profile_scale(profile);
    if (profile == "paper") {
        mc.det_hidden = 1024;
        mc.mask_mid = 256;
        mc.rpn_sample_count = 256;
        mc.roi_sample_count = 512;
        mc.mask_sample_count = 128;
        mc.rpn_pre_nms_train = 2000;
        mc.rpn_post_nms_train = 1000;
        mc.rpn_pre_nms_test = 1000;
        mc.rpn_post_nms_test = 300;
    }
    return mc;
}

void SgdOptimizer::step(ParamStore& store, double grad_scale) {
    auto& params = store.params();
    if (velocity.size() != params.size()) {
        velocity.clear();
        for (const auto& e : params) velocity.emplace_back(static_cast<size_t>(e.tensor.numel()), 0.0);
    }
    // global norm over trainable gradients (after batch scaling)
    double norm_sq = 0;
    for (const auto& e : params) {
        if (!e.tensor.requires_grad() || !e.tensor.has_grad()) continue;
        for (double g : e.tensor.grad()) norm_sq += (g * grad_scale) * (g * grad_scale);
    }
    double clip_scale = 1.0;
    double norm = std::sqrt(norm_sq);
    if (clip_norm > 0 && norm > clip_norm) clip_scale = clip_norm / norm;

    for (size_t i = 0; i < params.size(); ++i) {
        Tensor& t = params[i].tensor;
        if (!t.requires_grad() || !t.has_grad()) continue;
        const auto& grad = t.grad();
        double* value = t.data();
        std::vector<double>& vel = velocity[i];
        for (size_t k = 0; k < grad.size(); ++k) {
            double g = grad[k] * grad_scale * clip_scale + weight_decay * value[k];
            vel[k] = momentum * vel[k] + g;
            value[k] -= learning_rate * vel[k];
        }
    }
}

void RunRecord::save(const std::string& path) const {
    nlohmann::json j;
    j["config"] = nlohmann::json::parse(config_json);
    j["config_hash"] = config_hash;
    j["aborted"] = aborted;
    j["abort_reason"] = abort_reason;
    nlohmann::json iters = nlohmann::json::array();
    for (const LossBreakdown& lb : iterations)
        iters.push_back({{"cls", lb.cls}, {"box", lb.box}, {"mask", lb.mask}, {"total", lb.total}});
    j["iterations"] = std::move(iters);
    j["checkpoints"] = checkpoint_paths;
    nlohmann::json grads = nlohmann::json::array();
    for (const GroupGradNorm& g : first_step_grads)
        grads.push_back({{"group", g.group}, {"norm", g.norm}, {"frozen", g.frozen}});
    j["first_step_grad_norms"] = std::move(grads);
    std::ofstream os(path);
    if (!os) throw DataError("cannot write run record: " + path);
    os << j.dump(2) << "\n";
}

std::string config_hash_of(const std::string& canonical_json) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : canonical_json) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

namespace {

std::string train_config_json(const TrainConfig& c) {
    nlohmann::json j;
    j["epochs"] = c.epochs;
    j["learning_rate"] = c.learning_rate;
    j["weight_decay"] = c.weight_decay;
    j["momentum"] = c.momentum;
    j["optimizer"] = c.optimizer;
    j["batch_size"] = c.batch_size;
    j["seed"] = c.seed;
    j["generator_combo"] = c.generator_combo;
    j["merger_preset"] = c.merger_preset;
    j["c_fpn"] = c.c_fpn;
    j["deterministic"] = c.deterministic;
    j["profile"] = c.profile;
    j["clip_norm"] = c.clip_norm;
    j["augment_flips"] = c.augment_flips;
    j["max_iterations"] = c.max_iterations;
    return j.dump();  // nlohmann objects are key-sorted: stable under reordering
}

}  // namespace

std::unique_ptr<Model> build_pipeline(const TrainConfig& config) {
    config.validate();
    return std::make_unique<Model>(config.to_model_config(), config.seed);
}

RunRecord train(const TrainConfig& config, const std::vector<ImageSample>& dataset, Model& model,
                const IterationCallback& on_iteration) {
    config.validate();
    if (dataset.empty()) throw DataError("train: dataset is empty");
    if (config.batch_size > static_cast<int>(dataset.size()))
        throw DataError("train: batch_size exceeds dataset size");

    RunRecord record;
    record.config_json = train_config_json(config);
    record.config_hash = config_hash_of(record.config_json);

    if (!config.run_dir.empty()) fs::create_directories(config.run_dir);
    auto checkpoint_path = [&](const std::string& tag) {
        return (fs::path(config.run_dir.empty() ? "." : config.run_dir) /
                ("checkpoint_" + tag + ".bin"))
            .string();
    };

    model.set_training(true);
    SgdOptimizer opt(config.learning_rate, config.momentum, config.weight_decay, config.clip_norm);
    std::mt19937_64 order_rng(config.seed ^ 0xda7a0bffULL);
    std::mt19937_64 flip_rng(config.seed ^ 0xf11bb11fULL);

    // last-good parameter snapshot for the NaN abort path
    std::vector<std::vector<double>> last_good;
    auto snapshot = [&] {
        last_good.clear();
        for (const auto& e : model.params().params()) last_good.push_back(e.tensor.values());
        for (const auto& e : model.params().buffers()) last_good.push_back(e.tensor.values());
    };
    auto restore = [&] {
        size_t i = 0;
        for (auto& e : model.params().params()) e.tensor.values() = last_good[i++];
        for (auto& e : model.params().buffers()) e.tensor.values() = last_good[i++];
    };
    snapshot();

    int iteration = 0;
    bool done = false;
    for (int epoch = 0; epoch < config.epochs && !done; ++epoch) {
        std::vector<int> order(dataset.size());
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), order_rng);

        for (size_t start = 0; start + static_cast<size_t>(config.batch_size) <= order.size();
             start += static_cast<size_t>(config.batch_size)) {
            model.params().zero_grad();
            LossBreakdown batch{};
            try {
                for (int b = 0; b < config.batch_size; ++b) {
                    const ImageSample& raw = dataset[static_cast<size_t>(order[start + static_cast<size_t>(b)])];
                    bool flip = config.augment_flips && (flip_rng() & 1);
                    LossResult r = model.loss_on_sample(flip ? hflip(raw) : raw);
                    r.total.backward();
                    batch.cls += r.values.cls;
                    batch.box += r.values.box;
                    batch.mask += r.values.mask;
                }
            } catch (const NumericError& e) {
                restore();
                std::string path = checkpoint_path("lastgood");
                model.save(path);
                record.checkpoint_paths.push_back(path);
                record.aborted = true;
                record.abort_reason = e.what();
                if (!config.run_dir.empty()) record.save((fs::path(config.run_dir) / "run.json").string());
                throw NumericError(std::string("training aborted at iteration ") +
                                   std::to_string(iteration) + ": " + e.what() +
                                   " (last good checkpoint: " + path + ")");
            }
            batch.cls /= config.batch_size;
            batch.box /= config.batch_size;
            batch.mask /= config.batch_size;
            batch.total = batch.cls + batch.box + batch.mask;

            if (iteration == 0) record.first_step_grads = model.group_grad_norms();
            opt.step(model.params(), 1.0 / config.batch_size);
            snapshot();
            record.iterations.push_back(batch);
            ++iteration;
            if (on_iteration) on_iteration(iteration, batch, model);
            if (config.max_iterations > 0 && iteration >= config.max_iterations) {
                done = true;
                break;
            }
        }
        if (!config.run_dir.empty() && config.checkpoint_every > 0 &&
            ((epoch + 1) % config.checkpoint_every == 0 || epoch + 1 == config.epochs || done)) {
            std::string path = checkpoint_path("epoch" + std::to_string(epoch + 1));
            model.save(path);
            record.checkpoint_paths.push_back(path);
        }
    }

    if (!config.run_dir.empty()) record.save((fs::path(config.run_dir) / "run.json").string());
    return record;
}

MetricsReport evaluate_model(Model& model, const std::vector<ImageSample>& dataset,
                             const MatchCriterion& criterion) {
    bool was_training = model.params().training;
    model.set_training(false);
    std::map<std::string, std::vector<Detection>> dets;
    std::map<std::string, std::vector<Box>> anns;
    for (const ImageSample& s : dataset) {
        if (s.source == DataSource::lyon_roi)
            throw DataError("evaluate: dataset sample '" + s.id +
                            "' has no labels; use inference-only mode");
        dets[s.id] = model.predict(s);
        anns[s.id] = s.boxes;
    }
    model.set_training(was_training);
    return evaluate_dataset(dets, anns, criterion);
}

std::map<std::string, std::vector<Detection>> run_inference(Model& model,
                                                            const std::vector<ImageSample>& dataset) {
    bool was_training = model.params().training;
    model.set_training(false);
    std::map<std::string, std::vector<Detection>> out;
    for (const ImageSample& s : dataset) out[s.id] = model.predict(s);
    model.set_training(was_training);
    return out;
}

std::string AblationReport::to_json() const {
    nlohmann::json j;
    j["config_hash"] = config_hash;
    nlohmann::json rows_json = nlohmann::json::array();
    for (const AblationRow& r : rows) {
        nlohmann::json rj;
        rj["label"] = r.label;
        rj["combo"] = r.combo;
        rj["merger"] = r.merger;
        rj["failed"] = r.failed;
        rj["error"] = r.error;
        rj["train_f_score"] = r.train_f;
        rj["train_recall"] = r.train_recall;
        rj["eval_f_score"] = r.eval_f;
        rj["eval_recall"] = r.eval_recall;
        rows_json.push_back(std::move(rj));
    }
    j["rows"] = std::move(rows_json);
    return j.dump(2);
}

std::string AblationReport::to_text() const {
    std::string out;
    char line[256];
    std::snprintf(line, sizeof(line), "%-22s | %-22s | %-18s | %8s %8s | %8s %8s\n", "Model",
                  "Generator", "Merger", "F(train)", "R(train)", "F(eval)", "R(eval)");
    out += line;
    out += std::string(120, '-') + "\n";
    for (const AblationRow& r : rows) {
        if (r.failed) {
            std::snprintf(line, sizeof(line), "%-22s | %-22s | %-18s | FAILED: %s\n", r.label.c_str(),
                          r.combo.c_str(), r.merger.c_str(), r.error.c_str());
        } else {
            std::snprintf(line, sizeof(line), "%-22s | %-22s | %-18s | %8.4f %8.4f | %8.4f %8.4f\n",
                          r.label.c_str(), r.combo.c_str(), r.merger.c_str(), r.train_f,
                          r.train_recall, r.eval_f, r.eval_recall);
        }
        out += line;
    }
    return out;
}

void AblationReport::save(const std::string& dir) const {
    fs::create_directories(dir);
    {
        std::ofstream os(fs::path(dir) / "ablation.json");
        if (!os) throw DataError("cannot write ablation.json under " + dir);
        os << to_json() << "\n";
    }
    std::ofstream os(fs::path(dir) / "ablation.txt");
    os << to_text();
}

AblationReport ablate(const std::vector<std::string>& combo_names,
                      const std::vector<std::string>& merger_names, const TrainConfig& base_config,
                      const std::vector<ImageSample>& train_set,
                      const std::vector<ImageSample>& eval_set) {
    if (combo_names.empty() || combo_names.size() != merger_names.size())
        throw ConfigError("ablate: combo and merger lists must be non-empty and equal-length");
    AblationReport report;
    report.config_hash = config_hash_of(train_config_json(base_config));
    for (size_t k = 0; k < combo_names.size(); ++k) {
        AblationRow row;
        row.label = "Comparison Model-" + std::to_string(k + 1);
        row.combo = combo_names[k];
        row.merger = merger_names[k];
        try {
            TrainConfig cfg = base_config;
            cfg.generator_combo = combo_names[k];
            cfg.merger_preset = merger_names[k];
            if (!base_config.run_dir.empty())
                cfg.run_dir = (fs::path(base_config.run_dir) / ("row" + std::to_string(k + 1))).string();
            auto model = build_pipeline(cfg);
            train(cfg, train_set, *model);
            MatchCriterion criterion;
            MetricsReport train_metrics = evaluate_model(*model, train_set, criterion);
            row.train_f = train_metrics.f_score;
            row.train_recall = train_metrics.recall;
            if (!eval_set.empty()) {
                MetricsReport eval_metrics = evaluate_model(*model, eval_set, criterion);
                row.eval_f = eval_metrics.f_score;
                row.eval_recall = eval_metrics.recall;
            }
        } catch (const std::exception& e) {
            row.failed = true;
            row.error = e.what();
        }
        report.rows.push_back(std::move(row));
    }
    return report;
}

}  // namespace cb
