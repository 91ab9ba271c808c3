#include "cb/merging.hpp"

#include <algorithm>

#include "cb/ops.hpp"

namespace cb {

FusionSpec FusionSpec::resolved(int in_channels, int c_fpn) const {
    if (layers.empty()) throw ConfigError("fusion spec has no layers");
    FusionSpec out = *this;
    int current = in_channels;
    for (size_t i = 0; i < out.layers.size(); ++i) {
        if (out.layers[i].out_channels == 0) {
            int half = std::max(c_fpn, current / 2);
            out.layers[i].out_channels = i + 1 == out.layers.size() ? c_fpn : half;
        }
        current = out.layers[i].out_channels;
    }
    out.validate_resolved();
    return out;
}

void FusionSpec::validate_resolved() const {
    int prev = 1 << 30;
    for (const Layer& l : layers) {
        if (l.kernel != 1 && l.kernel != 3 && l.kernel != 5 && l.kernel != 7)
            throw ConfigError("fusion kernel size must be one of 1/3/5/7");
        if (l.out_channels <= 0) throw ConfigError("fusion layer has unresolved channels");
        if (l.out_channels > prev)
            throw ConfigError("fusion channels must be non-increasing across layers");
        prev = l.out_channels;
    }
}

std::map<std::string, FusionSpec> merger_presets() {
    auto spec = [](std::vector<int> kernels) {
        FusionSpec s;
        for (int k : kernels) s.layers.push_back({k, 0});
        s.pooling = FusionSpec::Pooling::max3x3_stride1;
        return s;
    };
    std::map<std::string, FusionSpec> presets;
    presets["Channel Merger-1"] = spec({5, 3, 1});
    presets["Channel Merger-2"] = spec({5, 3, 1});
    presets["Channel Merger-3"] = spec({5, 3, 1});
    presets["Channel Merger-4"] = spec({7, 5, 1});
    presets["Channel Merger-5"] = spec({3, 3, 1});
    presets["Channel Merger-6"] = spec({5, 3, 1});
    return presets;
}

FusionBlock::FusionBlock(ParamStore& ps, const std::string& name, int in_channels,
                         const FusionSpec& spec, int c_fpn) {
    FusionSpec r = spec.resolved(in_channels, c_fpn);
    pooling_ = r.pooling;
    int current = in_channels;
    for (size_t i = 0; i < r.layers.size(); ++i) {
        const FusionSpec::Layer& l = r.layers[i];
        convs_.emplace_back(ps, name + ".conv" + std::to_string(i), current, l.out_channels, l.kernel,
                            1, l.kernel / 2);
        bns_.emplace_back(ps, name + ".bn" + std::to_string(i), l.out_channels);
        current = l.out_channels;
    }
    out_channels_ = current;
}

FeatureMap FusionBlock::forward(const FeatureMap& level) const {
    if (convs_.empty()) throw ConfigError("fusion block has no layers");
    Tensor x = level.tensor;
    for (size_t i = 0; i < convs_.size(); ++i) x = relu(bns_[i].forward(convs_[i].forward(x)));
    if (pooling_ == FusionSpec::Pooling::max3x3_stride1) x = max_pool2d(x, 3, 1, 1);
    return {x, level.stride};
}

FpnModule::FpnModule(ParamStore& ps, const std::string& name, const std::vector<int>& in_channels,
                     int c_fpn)
    : c_fpn_(c_fpn) {
    for (size_t i = 0; i < in_channels.size(); ++i) {
        lateral_.emplace_back(ps, name + ".lateral" + std::to_string(i), in_channels[i], c_fpn, 1, 1, 0);
        smooth_.emplace_back(ps, name + ".smooth" + std::to_string(i), c_fpn, c_fpn, 3, 1, 1);
    }
}

FeaturePyramid FpnModule::forward(const std::vector<FeatureMap>& fused) const {
    if (fused.size() != lateral_.size()) throw ShapeError("fpn: wrong number of input stages");
    int expect = 4;
    for (const FeatureMap& fm : fused) {
        if (fm.stride != expect) throw ShapeError("fpn: stage stride mismatch");
        expect *= 2;
    }
    size_t n = fused.size();
    std::vector<Tensor> merged(n);
    for (size_t i = n; i-- > 0;) {
        Tensor lat = lateral_[i].forward(fused[i].tensor);
        if (i + 1 < n)
            lat = add(lat, resize_nearest(merged[i + 1], lat.dim(1), lat.dim(2)));
        merged[i] = lat;
    }
    FeaturePyramid out;
    for (size_t i = 0; i < n; ++i)
        out.levels.push_back({smooth_[i].forward(merged[i]), fused[i].stride});
    return out;
}

}  // namespace cb
