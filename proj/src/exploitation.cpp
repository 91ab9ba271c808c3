#include "cb/exploitation.hpp"

#include "cb/ops.hpp"

namespace cb {

void BoostedPyramid::validate() const {
    for (const BoostedLevel& level : levels) {
        int c = level.map.tensor.dim(0);
        int cursor = 0;
        for (const ChannelSpan& span : level.spans) {
            if (span.begin != cursor || span.end <= span.begin)
                throw ShapeError("boosted channel spans must partition [0,C) in order");
            cursor = span.end;
        }
        if (cursor != c) throw ShapeError("boosted channel spans do not cover all channels");
    }
}

std::vector<int> BoostedPyramid::channel_counts() const {
    std::vector<int> out;
    for (const BoostedLevel& level : levels) out.push_back(level.map.tensor.dim(0));
    return out;
}

BoostedPyramid align_and_concat(const std::vector<FeaturePyramid>& pyramids,
                                const std::vector<std::string>& names) {
    if (pyramids.size() < 2) throw ShapeError("align_and_concat needs at least 2 pyramids");
    if (names.size() != pyramids.size())
        throw ShapeError("align_and_concat: one name per pyramid required");
    size_t n_stages = pyramids[0].levels.size();
    for (const FeaturePyramid& p : pyramids)
        if (p.levels.size() != n_stages)
            throw ShapeError("align_and_concat: pyramids have different stage counts");

    BoostedPyramid out;
    for (size_t s = 0; s < n_stages; ++s) {
        const FeatureMap& ref = pyramids[0].levels[s];
        int th = ref.tensor.dim(1), tw = ref.tensor.dim(2);
        std::vector<Tensor> parts;
        std::vector<ChannelSpan> spans;
        int cursor = 0;
        for (size_t m = 0; m < pyramids.size(); ++m) {
            Tensor t = pyramids[m].levels[s].tensor;
            if (t.dim(1) != th || t.dim(2) != tw) t = resize_bilinear(t, th, tw);
            spans.push_back({names[m], cursor, cursor + t.dim(0)});
            cursor += t.dim(0);
            parts.push_back(t);
        }
        BoostedLevel level;
        level.map = {concat(parts, 0), ref.stride};
        level.spans = std::move(spans);
        out.levels.push_back(std::move(level));
    }
    return out;
}

ExploitModule::ExploitModule(ParamStore& ps, const std::string& prefix,
                             const std::vector<int>& level_channels, int reduction) {
    for (size_t i = 0; i < level_channels.size(); ++i)
        per_level_.emplace_back(ps, prefix + ".level" + std::to_string(i),
                                level_channels[i], reduction);
}

BoostedPyramid ExploitModule::forward(const BoostedPyramid& boosted) const {
    if (boosted.levels.size() != per_level_.size())
        throw ShapeError("exploit: level count does not match module configuration");
    BoostedPyramid out;
    for (size_t i = 0; i < boosted.levels.size(); ++i) {
        BoostedLevel level;
        level.map = {per_level_[i].forward(boosted.levels[i].map.tensor), boosted.levels[i].map.stride};
        level.spans = boosted.levels[i].spans;
        out.levels.push_back(std::move(level));
    }
    return out;
}

void ExploitModule::collect_gate_stats(GateStats& out) const {
    for (const auto& a : per_level_) out.merge(a.stats);
}

BoostedPyramid exploit(const BoostedPyramid& boosted, const ExploitModule& module) {
    return module.forward(boosted);
}

}  // namespace cb
