#pragma once

#include <string>

#include "cb/data.hpp"
#include "cb/metrics.hpp"
#include "cb/train.hpp"

namespace cb {

// The single JSON config file read by the CLI; sections "train", "synth" and
// "eval" mirror the corresponding structs. CLI flags override config fields.
struct CliConfig {
    TrainConfig train;
    SynthConfig synth;
    MatchCriterion criterion;
};

CliConfig load_cli_config(const std::string& path);
CliConfig parse_cli_config(const std::string& json_text);

}  // namespace cb
