#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "cb/region.hpp"
#include "cb/tensor.hpp"

namespace cb {

struct Image {
    int h = 0, w = 0;
    std::vector<std::uint8_t> rgb;  // row-major H*W*3

    std::uint8_t& at(int y, int x, int c) { return rgb[(static_cast<size_t>(y) * w + x) * 3 + c]; }
    std::uint8_t at(int y, int x, int c) const { return rgb[(static_cast<size_t>(y) * w + x) * 3 + c]; }
};

Image load_png(const std::string& path);
void save_png(const std::string& path, const Image& image);

// Image pixels scaled to [0,1] as a (3,H,W) tensor and back.
Tensor image_to_tensor(const Image& image);
Image tensor_to_image(const Tensor& t);

enum class DataSource { synthetic, lysto, nuclick, lyon_roi };
const char* data_source_name(DataSource s);
DataSource data_source_from_name(const std::string& name);

struct ImageSample {
    std::string id;
    std::string group;  // patient-like split key; defaults to id
    Image image;
    std::vector<Box> boxes;
    std::vector<std::vector<std::uint8_t>> masks;  // per instance, H*W in {0,1}
    std::vector<int> labels;
    DataSource source = DataSource::synthetic;

    // lengths equal; every box tightly bounds its mask (exact for synthetic,
    // within 1 px for ingested data).
    void validate(double box_tolerance_px = 0.0) const;
};

// Tight bounding box of a binary mask in pixel-corner coordinates
// (pixel (x,y) occupies [x,x+1) x [y,y+1)).
Box mask_tight_box(const std::vector<std::uint8_t>& mask, int w, int h);

// Row-major run-length encoding as (value, start, length) triples; only
// 1-runs are emitted.
std::vector<long long> rle_encode(const std::vector<std::uint8_t>& mask);
std::vector<std::uint8_t> rle_decode(const std::vector<long long>& runs, size_t size);

struct ColorRange {
    std::array<int, 3> lo{0, 0, 0}, hi{255, 255, 255};
};

struct StainPalette {
    ColorRange foreground{{95, 50, 25}, {150, 95, 60}};     // IHC-brown blobs
    ColorRange background{{225, 185, 195}, {250, 225, 235}};  // pinkish tissue
};

struct SynthConfig {
    int n_images = 16;
    int image_size = 256;
    int blobs_min = 3, blobs_max = 8;
    double radius_min = 6.0, radius_max = 14.0;
    double cluster_probability = 0.3;
    double artifact_probability = 0.5;
    StainPalette stain_palette;
    std::uint64_t seed = 0;

    void validate() const;
};

// Deterministic per (config, seed): elliptical near-circular foreground blobs
// with exact per-instance masks and tight boxes, optional overlapping
// clusters, and unlabeled artifact distractors.
std::vector<ImageSample> synth_generate(const SynthConfig& config);

// Dataset layout: root/images/*.png + root/annotations.json.
void save_dataset(const std::vector<ImageSample>& samples, const std::string& root);
std::vector<ImageSample> load_dataset(const std::string& root, DataSource format);

// Horizontal flip of image, boxes and masks (the one config-exposed augment).
ImageSample hflip(const ImageSample& sample);

struct DatasetSplit {
    std::vector<ImageSample> train, val, test;
};

// Group-aware split: samples sharing a group key never straddle splits.
// Groups are shuffled by seed and allocated by largest remainder.
DatasetSplit split_dataset(const std::vector<ImageSample>& samples,
                           const std::array<double, 3>& fractions, std::uint64_t seed);

constexpr int kCanonicalImageSize = 256;

// Bilinear image resize with annotation rescaling; masks use nearest lookup.
ImageSample resize_sample(const ImageSample& sample, int out_size);

}  // namespace cb
