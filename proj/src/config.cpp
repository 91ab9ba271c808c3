#include "cb/config.hpp"

#include <fstream>

#include <json.hpp>

namespace cb {

namespace {

void read_train(const nlohmann::json& j, TrainConfig& c) {
    c.epochs = j.value("epochs", c.epochs);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.momentum = j.value("momentum", c.momentum);
    c.optimizer = j.value("optimizer", c.optimizer);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.seed = j.value("seed", c.seed);
    c.generator_combo = j.value("generator_combo", c.generator_combo);
    c.merger_preset = j.value("merger_preset", c.merger_preset);
    c.c_fpn = j.value("c_fpn", c.c_fpn);
    c.deterministic = j.value("deterministic", c.deterministic);
    c.profile = j.value("profile", c.profile);
    c.clip_norm = j.value("clip_norm", c.clip_norm);
    c.augment_flips = j.value("augment_flips", c.augment_flips);
    c.max_iterations = j.value("max_iterations", c.max_iterations);
    c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
}

void read_synth(const nlohmann::json& j, SynthConfig& c) {
    c.n_images = j.value("n_images", c.n_images);
    c.image_size = j.value("image_size", c.image_size);
    if (j.contains("blobs_per_image")) {
        c.blobs_min = j["blobs_per_image"][0].get<int>();
        c.blobs_max = j["blobs_per_image"][1].get<int>();
    }
    if (j.contains("radius_px")) {
        c.radius_min = j["radius_px"][0].get<double>();
        c.radius_max = j["radius_px"][1].get<double>();
    }
    c.cluster_probability = j.value("cluster_probability", c.cluster_probability);
    c.artifact_probability = j.value("artifact_probability", c.artifact_probability);
    c.seed = j.value("seed", c.seed);
    auto read_range = [](const nlohmann::json& r, ColorRange& out) {
        out.lo = r.at("lo").get<std::array<int, 3>>();
        out.hi = r.at("hi").get<std::array<int, 3>>();
    };
    if (j.contains("stain_palette")) {
        const auto& p = j["stain_palette"];
        if (p.contains("foreground")) read_range(p["foreground"], c.stain_palette.foreground);
        if (p.contains("background")) read_range(p["background"], c.stain_palette.background);
    }
}

void read_criterion(const nlohmann::json& j, MatchCriterion& c) {
    std::string kind = j.value("criterion", std::string("iou"));
    if (kind == "iou") c.kind = MatchCriterion::Kind::iou;
    else if (kind == "center_distance") c.kind = MatchCriterion::Kind::center_distance;
    else throw ConfigError("eval.criterion must be 'iou' or 'center_distance'");
    c.iou_threshold = j.value("iou_threshold", c.iou_threshold);
    c.center_distance_px = j.value("center_distance_px", c.center_distance_px);
}

}  // namespace

CliConfig parse_cli_config(const std::string& json_text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(json_text);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config file is not valid JSON: ") + e.what());
    }
    CliConfig c;
    if (j.contains("train")) read_train(j["train"], c.train);
    if (j.contains("synth")) read_synth(j["synth"], c.synth);
    if (j.contains("eval")) read_criterion(j["eval"], c.criterion);
    return c;
}

CliConfig load_cli_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file: " + path);
    std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    return parse_cli_config(text);
}

}  // namespace cb
