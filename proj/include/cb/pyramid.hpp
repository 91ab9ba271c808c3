#pragma once

#include <vector>

#include "cb/tensor.hpp"

namespace cb {

// One backbone stage output: (C,H,W) features tagged with the stage stride
// relative to the input image.
struct FeatureMap {
    Tensor tensor;
    int stride = 0;
};

// Four stages at strides 4/8/16/32, spatial size ceil(input/stride).
struct FeaturePyramid {
    std::vector<FeatureMap> levels;

    void validate(int input_h, int input_w) const;
};

inline int ceil_div(int a, int b) { return (a + b - 1) / b; }

}  // namespace cb
