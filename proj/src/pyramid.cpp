#include "cb/pyramid.hpp"

#include "cb/errors.hpp"

namespace cb {

void FeaturePyramid::validate(int input_h, int input_w) const {
    if (levels.size() != 4) throw ShapeError("feature pyramid must have 4 levels");
    int prev_stride = 0;
    for (size_t i = 0; i < levels.size(); ++i) {
        const FeatureMap& fm = levels[i];
        int expect_stride = 4 << i;
        if (fm.stride != expect_stride)
            throw ShapeError("pyramid level " + std::to_string(i) + " has stride " +
                             std::to_string(fm.stride) + ", expected " + std::to_string(expect_stride));
        if (fm.stride <= prev_stride) throw ShapeError("pyramid strides must strictly increase");
        prev_stride = fm.stride;
        if (!fm.tensor.defined() || fm.tensor.ndim() != 3)
            throw ShapeError("pyramid level " + std::to_string(i) + " is not a (C,H,W) tensor");
        int eh = ceil_div(input_h, fm.stride);
        int ew = ceil_div(input_w, fm.stride);
        if (fm.tensor.dim(1) != eh || fm.tensor.dim(2) != ew)
            throw ShapeError("pyramid level " + std::to_string(i) + " is " +
                             std::to_string(fm.tensor.dim(1)) + "x" + std::to_string(fm.tensor.dim(2)) +
                             ", expected " + std::to_string(eh) + "x" + std::to_string(ew));
    }
}

}  // namespace cb
