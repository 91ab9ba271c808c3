#pragma once

// Independent reference implementations used as test oracles. These are kept
// deliberately naive (double loops, explicit formulas) and share no code with
// the library paths they check.

#include <array>
#include <cstdint>
#include <random>
#include <vector>

namespace oracle {

// Bilinear interpolation on a single-channel row-major image, pixel centers at
// integer coordinates, border clamp.
double bilinear(const std::vector<double>& img, int w, int h, double x, double y);

// Bilinear sample per channel on (C,H,W) data.
std::vector<double> bilinear_chw(const std::vector<double>& data, int c, int h, int w, double x,
                                 double y);

// Half-pixel bilinear resize of (C,H,W), written against bilinear() above.
std::vector<double> resize_bilinear_chw(const std::vector<double>& data, int c, int h, int w,
                                        int out_h, int out_w);

// Dense multi-head self-attention: q,k,v projections given as explicit
// (d_model x d_model) row-major matrices W with y = x * W^T + b convention.
struct DenseAttentionParams {
    int heads = 1;
    std::vector<double> wq, bq, wk, bk, wv, bv, wo, bo;  // each w: (d,d), b: (d)
};
std::vector<double> dense_attention(const std::vector<double>& tokens, int n, int d,
                                    const DenseAttentionParams& p);

// Greedy NMS by descending score, O(n^2), ties by lower index.
std::vector<int> nms_quadratic(const std::vector<std::array<double, 4>>& boxes,
                               const std::vector<double>& scores, double iou_threshold);

double iou(const std::array<double, 4>& a, const std::array<double, 4>& b);

// Brute-force ROI align: per-bin average of sampling_ratio^2 bilinear samples.
std::vector<double> roi_align_brute(const std::vector<double>& feat, int c, int h, int w,
                                    const std::array<double, 4>& box, double spatial_scale,
                                    int out_h, int out_w, int sampling_ratio);

// Anchor enumeration with explicit loops (row, col, scale, ratio order).
std::vector<std::array<double, 4>> anchors_enumerated(int grid_h, int grid_w, int stride,
                                                      const std::vector<double>& scales,
                                                      const std::vector<double>& ratios);

// Box delta decode: (dx,dy,dw,dh), dw/dh clamped at 4 before exp, clipped to image.
std::array<double, 4> decode_box(const std::array<double, 4>& anchor,
                                 const std::array<double, 4>& deltas, double img_w, double img_h);

// Maximum-cardinality bipartite matching by exhaustive enumeration (small n).
int max_matching_size(const std::vector<std::vector<bool>>& compat);

std::vector<double> rand_vec(std::mt19937_64& rng, size_t n, double lo = -1.0, double hi = 1.0);

}  // namespace oracle
