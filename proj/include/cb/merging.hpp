#pragma once

#include <map>
#include <string>
#include <vector>

#include "cb/layers.hpp"
#include "cb/pyramid.hpp"

namespace cb {

// Conv/BN/ReLU bottleneck chain that reduces the channel dimension while
// preserving spatial size, optionally followed by a spatial-preserving
// 3x3/stride-1 max pool.
struct FusionSpec {
    struct Layer {
        int kernel = 1;
        int out_channels = 0;  // 0 = auto: halve per layer, floored at c_fpn
    };
    enum class Pooling { max3x3_stride1, none };

    std::vector<Layer> layers;
    Pooling pooling = Pooling::max3x3_stride1;

    // Fills auto channel counts for a given input width; the last layer
    // always lands exactly on c_fpn.
    FusionSpec resolved(int in_channels, int c_fpn) const;
    void validate_resolved() const;
};

// The six named presets; keys "Channel Merger-1".."Channel Merger-6".
std::map<std::string, FusionSpec> merger_presets();

class FusionBlock {
public:
    FusionBlock() = default;
    FusionBlock(ParamStore& ps, const std::string& name, int in_channels, const FusionSpec& spec,
                int c_fpn);

    FeatureMap forward(const FeatureMap& level) const;
    int out_channels() const { return out_channels_; }

private:
    std::vector<Conv2d> convs_;
    std::vector<BatchNorm2d> bns_;
    FusionSpec::Pooling pooling_ = FusionSpec::Pooling::max3x3_stride1;
    int out_channels_ = 0;
};

// Lateral 1x1 projections to a common width, top-down 2x nearest-neighbor
// upsampling additions, then a 3x3 smoothing conv per level.
class FpnModule {
public:
    FpnModule() = default;
    FpnModule(ParamStore& ps, const std::string& name, const std::vector<int>& in_channels,
              int c_fpn);

    FeaturePyramid forward(const std::vector<FeatureMap>& fused) const;
    int c_fpn() const { return c_fpn_; }

private:
    std::vector<Conv2d> lateral_;
    std::vector<Conv2d> smooth_;
    int c_fpn_ = 0;
};

}  // namespace cb
