// Command-line driver for the channel-boosted hybrid detection pipeline.
//
// Verbs: synth, train, eval, infer, ablate, gradcheck, report.
// Exit codes: 0 success, 2 config error, 3 data error, 4 numeric failure.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <json.hpp>

#include "cb/config.hpp"
#include "cb/gradcheck.hpp"
#include "cb/plot.hpp"
#include "cb/train.hpp"

namespace fs = std::filesystem;
using namespace cb;

namespace {

struct CommonArgs {
    std::optional<std::string> config_path;
    CliConfig load() const { return config_path ? load_cli_config(*config_path) : CliConfig{}; }
};

std::vector<ImageSample> load_data(const std::string& dir, const std::string& format) {
    return load_dataset(dir, data_source_from_name(format));
}

void write_detections_json(const std::map<std::string, std::vector<Detection>>& dets,
                           const std::string& path) {
    nlohmann::json j;
    j["format_version"] = 1;
    nlohmann::json images = nlohmann::json::array();
    for (const auto& [id, list] : dets) {
        nlohmann::json rec;
        rec["id"] = id;
        nlohmann::json arr = nlohmann::json::array();
        for (const Detection& d : list) {
            nlohmann::json dj;
            dj["box"] = {d.box.x1, d.box.y1, d.box.x2, d.box.y2};
            dj["score"] = d.score;
            dj["label"] = d.label;
            dj["mask_h"] = d.mask_h;
            dj["mask_w"] = d.mask_w;
            std::vector<long long> rle = rle_encode(d.mask);
            dj["mask_rle"] = rle;
            arr.push_back(std::move(dj));
        }
        rec["detections"] = std::move(arr);
        images.push_back(std::move(rec));
    }
    j["images"] = std::move(images);
    std::ofstream os(path);
    if (!os) throw DataError("cannot write detections file: " + path);
    os << j.dump(2) << "\n";
}

int dispatch(CLI::App& app, int argc, char** argv);

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"channel-boosted hybrid CNN/transformer lymphocyte detection pipeline"};
    app.require_subcommand(1);
    try {
        return dispatch(app, argc, argv);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

namespace {

int dispatch(CLI::App& app, int argc, char** argv) {
    CommonArgs common;

    // ---- synth ----
    auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic lymphocyte-style dataset");
    std::string synth_out;
    std::optional<int> s_n, s_size, s_blobs_min, s_blobs_max;
    std::optional<double> s_rmin, s_rmax, s_cluster, s_artifact;
    std::optional<std::uint64_t> s_seed;
    synth_cmd->add_option("--out", synth_out, "output dataset directory")->required();
    synth_cmd->add_option("--config", common.config_path, "JSON config file");
    synth_cmd->add_option("--n-images", s_n);
    synth_cmd->add_option("--image-size", s_size);
    synth_cmd->add_option("--blobs-min", s_blobs_min);
    synth_cmd->add_option("--blobs-max", s_blobs_max);
    synth_cmd->add_option("--radius-min", s_rmin);
    synth_cmd->add_option("--radius-max", s_rmax);
    synth_cmd->add_option("--cluster-prob", s_cluster);
    synth_cmd->add_option("--artifact-prob", s_artifact);
    synth_cmd->add_option("--seed", s_seed);

    // ---- train ----
    auto* train_cmd = app.add_subcommand("train", "train the pipeline on a dataset");
    std::string train_data, train_format = "synthetic", train_out = "run";
    std::uint64_t train_seed = 0;
    std::optional<int> t_epochs, t_batch, t_cfpn, t_max_iter;
    std::optional<double> t_lr, t_wd, t_momentum, t_clip;
    std::optional<std::string> t_combo, t_merger, t_profile;
    std::optional<bool> t_flips;
    train_cmd->add_option("--data", train_data, "dataset directory")->required();
    train_cmd->add_option("--format", train_format, "synthetic|lysto|nuclick");
    train_cmd->add_option("--out", train_out, "run directory");
    train_cmd->add_option("--seed", train_seed, "random seed")->required();
    train_cmd->add_option("--config", common.config_path, "JSON config file");
    train_cmd->add_option("--epochs", t_epochs);
    train_cmd->add_option("--batch-size", t_batch);
    train_cmd->add_option("--c-fpn", t_cfpn);
    train_cmd->add_option("--max-iterations", t_max_iter);
    train_cmd->add_option("--lr", t_lr);
    train_cmd->add_option("--weight-decay", t_wd);
    train_cmd->add_option("--momentum", t_momentum);
    train_cmd->add_option("--clip-norm", t_clip);
    train_cmd->add_option("--combo", t_combo, "generator combo name");
    train_cmd->add_option("--merger", t_merger, "merger preset name");
    train_cmd->add_option("--profile", t_profile, "desk|paper");
    train_cmd->add_option("--augment-flips", t_flips);

    // ---- eval ----
    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a labeled dataset");
    std::string eval_ckpt, eval_data, eval_format = "synthetic", eval_out = "metrics.json";
    std::optional<std::string> e_criterion;
    std::optional<double> e_iou, e_dist;
    eval_cmd->add_option("--checkpoint", eval_ckpt)->required();
    eval_cmd->add_option("--data", eval_data)->required();
    eval_cmd->add_option("--format", eval_format, "synthetic|lysto|nuclick");
    eval_cmd->add_option("--out", eval_out, "metrics report path");
    eval_cmd->add_option("--config", common.config_path, "JSON config file");
    eval_cmd->add_option("--criterion", e_criterion, "iou|center_distance");
    eval_cmd->add_option("--iou-threshold", e_iou);
    eval_cmd->add_option("--distance-px", e_dist);

    // ---- infer ----
    auto* infer_cmd = app.add_subcommand("infer", "run inference, emit detections without metrics");
    std::string infer_ckpt, infer_data, infer_format = "lyon_roi", infer_out = "detections.json";
    infer_cmd->add_option("--checkpoint", infer_ckpt)->required();
    infer_cmd->add_option("--data", infer_data)->required();
    infer_cmd->add_option("--format", infer_format, "lyon_roi|synthetic|lysto|nuclick");
    infer_cmd->add_option("--out", infer_out, "detections file path");

    // ---- ablate ----
    auto* ablate_cmd = app.add_subcommand("ablate", "train/evaluate generator-merger pairings");
    std::string ablate_data, ablate_format = "synthetic", ablate_out = "ablation";
    std::string ablate_eval_data;
    std::uint64_t ablate_seed = 0;
    std::vector<std::string> ablate_combos, ablate_mergers;
    std::optional<int> a_epochs, a_max_iter;
    ablate_cmd->add_option("--data", ablate_data)->required();
    ablate_cmd->add_option("--eval-data", ablate_eval_data, "held-out dataset directory");
    ablate_cmd->add_option("--format", ablate_format);
    ablate_cmd->add_option("--out", ablate_out, "output directory");
    ablate_cmd->add_option("--seed", ablate_seed, "random seed")->required();
    ablate_cmd->add_option("--config", common.config_path, "JSON config file");
    ablate_cmd->add_option("--combos", ablate_combos, "generator combo names")->delimiter(',');
    ablate_cmd->add_option("--mergers", ablate_mergers, "merger preset names")->delimiter(',');
    ablate_cmd->add_option("--epochs", a_epochs);
    ablate_cmd->add_option("--max-iterations", a_max_iter);

    // ---- gradcheck ----
    auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference checks for every block");
    std::uint64_t grad_seed = 7;
    grad_cmd->add_option("--seed", grad_seed);

    // ---- report ----
    auto* report_cmd = app.add_subcommand("report", "render loss curves and tables from a run");
    std::string report_run, report_out;
    report_cmd->add_option("--run", report_run, "run directory containing run.json")->required();
    report_cmd->add_option("--out", report_out, "output directory (default: the run directory)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    if (synth_cmd->parsed()) {
        CliConfig cfg = common.load();
        SynthConfig& sc = cfg.synth;
        if (s_n) sc.n_images = *s_n;
        if (s_size) sc.image_size = *s_size;
        if (s_blobs_min) sc.blobs_min = *s_blobs_min;
        if (s_blobs_max) sc.blobs_max = *s_blobs_max;
        if (s_rmin) sc.radius_min = *s_rmin;
        if (s_rmax) sc.radius_max = *s_rmax;
        if (s_cluster) sc.cluster_probability = *s_cluster;
        if (s_artifact) sc.artifact_probability = *s_artifact;
        if (s_seed) sc.seed = *s_seed;
        auto samples = synth_generate(sc);
        save_dataset(samples, synth_out);
        std::cout << "wrote " << samples.size() << " samples to " << synth_out << "\n";
        return 0;
    }

    if (train_cmd->parsed()) {
        CliConfig cfg = common.load();
        TrainConfig& tc = cfg.train;
        tc.seed = train_seed;
        tc.run_dir = train_out;
        if (t_epochs) tc.epochs = *t_epochs;
        if (t_batch) tc.batch_size = *t_batch;
        if (t_cfpn) tc.c_fpn = *t_cfpn;
        if (t_max_iter) tc.max_iterations = *t_max_iter;
        if (t_lr) tc.learning_rate = *t_lr;
        if (t_wd) tc.weight_decay = *t_wd;
        if (t_momentum) tc.momentum = *t_momentum;
        if (t_clip) tc.clip_norm = *t_clip;
        if (t_combo) tc.generator_combo = *t_combo;
        if (t_merger) tc.merger_preset = *t_merger;
        if (t_profile) tc.profile = *t_profile;
        if (t_flips) tc.augment_flips = *t_flips;

        auto data = load_data(train_data, train_format);
        auto model = build_pipeline(tc);
        RunRecord record = train(tc, data, *model);
        std::string final_ckpt = (fs::path(train_out) / "checkpoint_final.bin").string();
        model->save(final_ckpt);

        MetricsReport train_metrics = evaluate_model(*model, data, cfg.criterion);
        train_metrics.config_hash = record.config_hash;
        train_metrics.save((fs::path(train_out) / "metrics_train.json").string());
        std::cout << "iterations: " << record.iterations.size() << "\n";
        if (!record.iterations.empty())
            std::cout << "final loss: " << record.iterations.back().total << "\n";
        std::cout << "train F-score: " << train_metrics.f_score
                  << " recall: " << train_metrics.recall << "\n";
        std::cout << "checkpoint: " << final_ckpt << "\n";
        return 0;
    }

    if (eval_cmd->parsed()) {
        CliConfig cfg = common.load();
        if (e_criterion) {
            if (*e_criterion == "iou") cfg.criterion.kind = MatchCriterion::Kind::iou;
            else if (*e_criterion == "center_distance")
                cfg.criterion.kind = MatchCriterion::Kind::center_distance;
            else throw ConfigError("--criterion must be iou or center_distance");
        }
        if (e_iou) cfg.criterion.iou_threshold = *e_iou;
        if (e_dist) cfg.criterion.center_distance_px = *e_dist;
        auto model = Model::load(eval_ckpt);
        auto data = load_data(eval_data, eval_format);
        MetricsReport report = evaluate_model(*model, data, cfg.criterion);
        report.save(eval_out);
        std::cout << "criterion: " << report.criterion << "\n";
        std::cout << "precision: " << report.precision << " recall: " << report.recall
                  << " f_score: " << report.f_score << "\n";
        std::cout << "report: " << eval_out << "\n";
        return 0;
    }

    if (infer_cmd->parsed()) {
        auto model = Model::load(infer_ckpt);
        auto data = load_data(infer_data, infer_format);
        auto dets = run_inference(*model, data);
        write_detections_json(dets, infer_out);
        size_t total = 0;
        for (const auto& [_, v] : dets) total += v.size();
        std::cout << "wrote " << total << " detections over " << dets.size() << " images to "
                  << infer_out << "\n";
        return 0;
    }

    if (ablate_cmd->parsed()) {
        CliConfig cfg = common.load();
        TrainConfig& tc = cfg.train;
        tc.seed = ablate_seed;
        tc.run_dir = ablate_out;
        if (a_epochs) tc.epochs = *a_epochs;
        if (a_max_iter) tc.max_iterations = *a_max_iter;
        if (ablate_combos.empty())
            for (int k = 1; k <= 6; ++k) ablate_combos.push_back("Channel Generator-" + std::to_string(k));
        if (ablate_mergers.empty())
            for (int k = 1; k <= 6; ++k) ablate_mergers.push_back("Channel Merger-" + std::to_string(k));
        auto data = load_data(ablate_data, ablate_format);
        std::vector<ImageSample> eval_set;
        if (!ablate_eval_data.empty()) eval_set = load_data(ablate_eval_data, ablate_format);
        AblationReport report = ablate(ablate_combos, ablate_mergers, tc, data, eval_set);
        report.save(ablate_out);
        std::cout << report.to_text();
        std::cout << "report: " << ablate_out << "/ablation.json\n";
        return 0;
    }

    if (grad_cmd->parsed()) {
        auto reports = run_gradcheck_suite(grad_seed);
        int failed = 0;
        for (const GradCheckReport& r : reports) {
            std::cout << (r.passed ? "[PASS] " : "[FAIL] ") << r.parameter_name
                      << "  max_rel_err=" << r.max_relative_error << "\n";
            if (!r.passed) ++failed;
        }
        std::cout << reports.size() - static_cast<size_t>(failed) << "/" << reports.size()
                  << " gradient checks passed\n";
        return failed == 0 ? 0 : 4;
    }

    if (report_cmd->parsed()) {
        std::string out_dir = report_out.empty() ? report_run : report_out;
        fs::create_directories(out_dir);
        std::ifstream is(fs::path(report_run) / "run.json");
        if (!is) throw DataError("no run.json under " + report_run);
        nlohmann::json j;
        is >> j;
        std::vector<LossBreakdown> iterations;
        for (const auto& it : j["iterations"]) {
            LossBreakdown lb;
            lb.cls = it["cls"].get<double>();
            lb.box = it["box"].get<double>();
            lb.mask = it["mask"].get<double>();
            lb.total = it["total"].get<double>();
            iterations.push_back(lb);
        }
        render_loss_curve(iterations, (fs::path(out_dir) / "loss_curve.png").string());
        std::ofstream os(fs::path(out_dir) / "summary.txt");
        os << "iterations: " << iterations.size() << "\n";
        if (!iterations.empty()) {
            os << "first total loss: " << iterations.front().total << "\n";
            os << "final total loss: " << iterations.back().total << "\n";
        }
        os << "config_hash: " << j.value("config_hash", std::string()) << "\n";
        if (fs::exists(fs::path(report_run) / "ablation.json")) {
            std::ifstream ab(fs::path(report_run) / "ablation.json");
            nlohmann::json aj;
            ab >> aj;
            os << "\nablation rows: " << aj["rows"].size() << "\n";
        }
        std::cout << "wrote " << (fs::path(out_dir) / "loss_curve.png").string() << "\n";
        return 0;
    }

    return 2;
}

}  // namespace
