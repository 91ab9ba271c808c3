#pragma once

#include <string>
#include <vector>

#include "cb/generators.hpp"
#include "cb/pyramid.hpp"

namespace cb {

struct ChannelSpan {
    std::string source;
    int begin = 0, end = 0;  // [begin, end)
};

struct BoostedLevel {
    FeatureMap map;
    std::vector<ChannelSpan> spans;
};

// Per-stage concatenation of every generator's feature map, channel spans
// recording which generator produced which slice.
struct BoostedPyramid {
    std::vector<BoostedLevel> levels;

    void validate() const;  // spans partition [0, C) in order
    std::vector<int> channel_counts() const;
};

// Per stage: every member map is bilinearly resized to the first member's
// spatial grid, then concatenated along channels in member order.
BoostedPyramid align_and_concat(const std::vector<FeaturePyramid>& pyramids,
                                const std::vector<std::string>& names);

// Channel-then-spatial attention applied to each level independently
// (channel counts differ per level, so parameters are per-level).
class ExploitModule {
public:
    ExploitModule() = default;
    ExploitModule(ParamStore& ps, const std::string& prefix, const std::vector<int>& level_channels,
                  int reduction);

    BoostedPyramid forward(const BoostedPyramid& boosted) const;
    void collect_gate_stats(GateStats& out) const;

private:
    std::vector<ChannelSpatialAttention> per_level_;
};

BoostedPyramid exploit(const BoostedPyramid& boosted, const ExploitModule& module);

}  // namespace cb
