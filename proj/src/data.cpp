#include "cb/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <random>

#include <json.hpp>
#include <png.h>

namespace cb {

namespace fs = std::filesystem;

// ---- png ----

Image load_png(const std::string& path) {
    FILE* fp = std::fopen(path.c_str(), "rb");
    if (!fp) throw DataError("cannot open image: " + path);
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        if (png) png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
        std::fclose(fp);
        throw DataError("libpng init failed for: " + path);
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        std::fclose(fp);
        throw DataError("failed to decode png: " + path);
    }
    png_init_io(png, fp);
    png_read_info(png, info);
    png_set_expand(png);
    png_set_strip_16(png);
    png_set_strip_alpha(png);
    png_set_gray_to_rgb(png);
    png_read_update_info(png, info);

    Image img;
    img.w = static_cast<int>(png_get_image_width(png, info));
    img.h = static_cast<int>(png_get_image_height(png, info));
    img.rgb.resize(static_cast<size_t>(img.h) * img.w * 3);
    std::vector<png_bytep> rows(static_cast<size_t>(img.h));
    for (int y = 0; y < img.h; ++y) rows[static_cast<size_t>(y)] = img.rgb.data() + static_cast<size_t>(y) * img.w * 3;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    return img;
}

void save_png(const std::string& path, const Image& image) {
    FILE* fp = std::fopen(path.c_str(), "wb");
    if (!fp) throw DataError("cannot write image: " + path);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
        std::fclose(fp);
        throw DataError("libpng init failed for: " + path);
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        std::fclose(fp);
        throw DataError("failed to encode png: " + path);
    }
    png_init_io(png, fp);
    png_set_IHDR(png, info, static_cast<png_uint_32>(image.w), static_cast<png_uint_32>(image.h), 8,
                 PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int y = 0; y < image.h; ++y)
        png_write_row(png, const_cast<png_bytep>(image.rgb.data() + static_cast<size_t>(y) * image.w * 3));
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
}

Tensor image_to_tensor(const Image& image) {
    Tensor t = Tensor::zeros({3, image.h, image.w});
    double* d = t.data();
    long long plane = static_cast<long long>(image.h) * image.w;
    for (int y = 0; y < image.h; ++y)
        for (int x = 0; x < image.w; ++x)
            for (int c = 0; c < 3; ++c)
                d[c * plane + static_cast<long long>(y) * image.w + x] = image.at(y, x, c) / 255.0;
    return t;
}

Image tensor_to_image(const Tensor& t) {
    if (t.ndim() != 3 || t.dim(0) != 3) throw ShapeError("tensor_to_image expects (3,H,W)");
    Image img;
    img.h = t.dim(1);
    img.w = t.dim(2);
    img.rgb.resize(static_cast<size_t>(img.h) * img.w * 3);
    long long plane = static_cast<long long>(img.h) * img.w;
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x)
            for (int c = 0; c < 3; ++c) {
                double v = t.data()[c * plane + static_cast<long long>(y) * img.w + x];
                img.at(y, x, c) = static_cast<std::uint8_t>(std::clamp(std::lround(v * 255.0), 0L, 255L));
            }
    return img;
}

// ---- sample plumbing ----

const char* data_source_name(DataSource s) {
    switch (s) {
        case DataSource::synthetic: return "synthetic";
        case DataSource::lysto: return "lysto";
        case DataSource::nuclick: return "nuclick";
        case DataSource::lyon_roi: return "lyon_roi";
    }
    return "?";
}

DataSource data_source_from_name(const std::string& name) {
    if (name == "synthetic") return DataSource::synthetic;
    if (name == "lysto") return DataSource::lysto;
    if (name == "nuclick") return DataSource::nuclick;
    if (name == "lyon_roi") return DataSource::lyon_roi;
    throw ConfigError("unknown data source: " + name);
}

Box mask_tight_box(const std::vector<std::uint8_t>& mask, int w, int h) {
    int min_x = w, min_y = h, max_x = -1, max_y = -1;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            if (mask[static_cast<size_t>(y) * w + x]) {
                min_x = std::min(min_x, x);
                min_y = std::min(min_y, y);
                max_x = std::max(max_x, x);
                max_y = std::max(max_y, y);
            }
    if (max_x < 0) throw DataError("mask_tight_box: empty mask");
    return {static_cast<double>(min_x), static_cast<double>(min_y), static_cast<double>(max_x + 1),
            static_cast<double>(max_y + 1)};
}

void ImageSample::validate(double box_tolerance_px) const {
    if (boxes.size() != masks.size() || boxes.size() != labels.size())
        throw DataError("sample '" + id + "': boxes, masks and labels must have equal length");
    size_t px = static_cast<size_t>(image.h) * image.w;
    if (image.rgb.size() != px * 3) throw DataError("sample '" + id + "': image buffer size mismatch");
    for (size_t i = 0; i < boxes.size(); ++i) {
        if (!boxes[i].valid()) throw DataError("sample '" + id + "': invalid box " + std::to_string(i));
        if (masks[i].size() != px)
            throw DataError("sample '" + id + "': mask " + std::to_string(i) + " size mismatch");
        Box tight = mask_tight_box(masks[i], image.w, image.h);
        if (std::abs(tight.x1 - boxes[i].x1) > box_tolerance_px ||
            std::abs(tight.y1 - boxes[i].y1) > box_tolerance_px ||
            std::abs(tight.x2 - boxes[i].x2) > box_tolerance_px ||
            std::abs(tight.y2 - boxes[i].y2) > box_tolerance_px)
            throw DataError("sample '" + id + "': box " + std::to_string(i) +
                            " does not tightly bound its mask");
    }
}

std::vector<long long> rle_encode(const std::vector<std::uint8_t>& mask) {
    std::vector<long long> runs;
    size_t i = 0;
    while (i < mask.size()) {
        if (!mask[i]) {
            ++i;
            continue;
        }
        size_t start = i;
        while (i < mask.size() && mask[i]) ++i;
        runs.push_back(1);
        runs.push_back(static_cast<long long>(start));
        runs.push_back(static_cast<long long>(i - start));
    }
    return runs;
}

std::vector<std::uint8_t> rle_decode(const std::vector<long long>& runs, size_t size) {
    if (runs.size() % 3 != 0) throw DataError("rle: run list length must be a multiple of 3");
    std::vector<std::uint8_t> mask(size, 0);
    for (size_t i = 0; i < runs.size(); i += 3) {
        long long value = runs[i], start = runs[i + 1], len = runs[i + 2];
        if (start < 0 || len < 0 || static_cast<size_t>(start + len) > size)
            throw DataError("rle: run out of bounds");
        if (value != 0 && value != 1) throw DataError("rle: mask runs must be 0/1 valued");
        if (value)
            std::fill(mask.begin() + start, mask.begin() + start + len, static_cast<std::uint8_t>(1));
    }
    return mask;
}

// ---- synthetic generation ----

void SynthConfig::validate() const {
    if (n_images < 0) throw ConfigError("synth: n_images must be >= 0");
    if (image_size < 32) throw ConfigError("synth: image_size must be >= 32");
    if (blobs_min > blobs_max || blobs_min < 0) throw ConfigError("synth: blob count range invalid");
    if (radius_min > radius_max || radius_min <= 1) throw ConfigError("synth: radius range invalid");
    if (cluster_probability < 0 || cluster_probability > 1 || artifact_probability < 0 ||
        artifact_probability > 1)
        throw ConfigError("synth: probabilities must lie in [0,1]");
}

namespace {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (index + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

struct Ellipse {
    double cx, cy, rx, ry, theta;
};

std::vector<std::uint8_t> rasterize_ellipse(const Ellipse& e, int size) {
    std::vector<std::uint8_t> mask(static_cast<size_t>(size) * size, 0);
    double cos_t = std::cos(e.theta), sin_t = std::sin(e.theta);
    int x_lo = std::max(0, static_cast<int>(std::floor(e.cx - std::max(e.rx, e.ry) - 1)));
    int x_hi = std::min(size - 1, static_cast<int>(std::ceil(e.cx + std::max(e.rx, e.ry) + 1)));
    int y_lo = std::max(0, static_cast<int>(std::floor(e.cy - std::max(e.rx, e.ry) - 1)));
    int y_hi = std::min(size - 1, static_cast<int>(std::ceil(e.cy + std::max(e.rx, e.ry) + 1)));
    for (int y = y_lo; y <= y_hi; ++y)
        for (int x = x_lo; x <= x_hi; ++x) {
            double dx = x + 0.5 - e.cx, dy = y + 0.5 - e.cy;
            double u = (dx * cos_t + dy * sin_t) / e.rx;
            double v = (-dx * sin_t + dy * cos_t) / e.ry;
            if (u * u + v * v <= 1.0) mask[static_cast<size_t>(y) * size + x] = 1;
        }
    return mask;
}

std::array<int, 3> sample_color(const ColorRange& range, std::mt19937_64& rng) {
    std::array<int, 3> c;
    for (int i = 0; i < 3; ++i) {
        std::uniform_int_distribution<int> d(range.lo[static_cast<size_t>(i)], range.hi[static_cast<size_t>(i)]);
        c[static_cast<size_t>(i)] = d(rng);
    }
    return c;
}

}  // namespace

std::vector<ImageSample> synth_generate(const SynthConfig& config) {
    config.validate();
    std::vector<ImageSample> samples;
    constexpr int kGroupSize = 4;  // images per synthetic "patient"

    for (int img_idx = 0; img_idx < config.n_images; ++img_idx) {
        std::mt19937_64 rng(mix_seed(config.seed, static_cast<std::uint64_t>(img_idx)));
        int size = config.image_size;
        ImageSample sample;
        char idbuf[32];
        std::snprintf(idbuf, sizeof(idbuf), "synth_%05d", img_idx);
        sample.id = idbuf;
        sample.group = "p" + std::to_string(img_idx / kGroupSize);
        sample.source = DataSource::synthetic;
        sample.image.h = sample.image.w = size;
        sample.image.rgb.resize(static_cast<size_t>(size) * size * 3);

        // background wash with mild per-pixel noise
        auto bg = sample_color(config.stain_palette.background, rng);
        std::uniform_int_distribution<int> noise(-6, 6);
        for (int y = 0; y < size; ++y)
            for (int x = 0; x < size; ++x)
                for (int c = 0; c < 3; ++c)
                    sample.image.at(y, x, c) = static_cast<std::uint8_t>(
                        std::clamp(bg[static_cast<size_t>(c)] + noise(rng), 0, 255));

        std::uniform_int_distribution<int> blob_count(config.blobs_min, config.blobs_max);
        int target = blob_count(rng);
        std::uniform_real_distribution<double> radius(config.radius_min, config.radius_max);
        std::uniform_real_distribution<double> ratio(0.85, 1.18);
        std::uniform_real_distribution<double> angle(0.0, 3.14159265358979);
        std::uniform_real_distribution<double> unit(0.0, 1.0);

        std::vector<Ellipse> placed;
        auto try_place = [&](bool clustered, double near_x, double near_y) -> bool {
            for (int attempt = 0; attempt < 60; ++attempt) {
                double r = radius(rng);
                double q = std::sqrt(ratio(rng));
                Ellipse e;
                e.rx = r * q;
                e.ry = r / q;
                e.theta = angle(rng);
                double margin = std::max(e.rx, e.ry) + 2.0;
                if (2 * margin >= size) return false;
                if (clustered) {
                    std::uniform_real_distribution<double> off(-1.6 * r, 1.6 * r);
                    e.cx = std::clamp(near_x + off(rng), margin, size - margin);
                    e.cy = std::clamp(near_y + off(rng), margin, size - margin);
                } else {
                    std::uniform_real_distribution<double> pos(margin, size - margin);
                    e.cx = pos(rng);
                    e.cy = pos(rng);
                    bool crowded = false;
                    for (const Ellipse& other : placed) {
                        double dx = e.cx - other.cx, dy = e.cy - other.cy;
                        double min_d = 0.8 * (std::max(e.rx, e.ry) + std::max(other.rx, other.ry));
                        if (dx * dx + dy * dy < min_d * min_d) {
                            crowded = true;
                            break;
                        }
                    }
                    if (crowded) continue;
                }
                placed.push_back(e);
                return true;
            }
            return false;
        };

        int failures = 0;
        while (static_cast<int>(placed.size()) < target) {
            size_t before = placed.size();
            if (!placed.empty() && unit(rng) < config.cluster_probability) {
                const Ellipse& seed_blob = placed[static_cast<size_t>(rng() % placed.size())];
                if (!try_place(true, seed_blob.cx, seed_blob.cy)) ++failures;
            } else {
                if (!try_place(false, 0, 0)) ++failures;
            }
            if (placed.size() == before && failures > 20)
                throw DataError("synth: cannot place " + std::to_string(target) + " blobs in a " +
                                std::to_string(size) + "px image (packing infeasible)");
        }

        // render blobs and record exact masks
        for (const Ellipse& e : placed) {
            auto mask = rasterize_ellipse(e, size);
            auto fg = sample_color(config.stain_palette.foreground, rng);
            double cos_t = std::cos(e.theta), sin_t = std::sin(e.theta);
            for (int y = 0; y < size; ++y)
                for (int x = 0; x < size; ++x) {
                    if (!mask[static_cast<size_t>(y) * size + x]) continue;
                    double dx = x + 0.5 - e.cx, dy = y + 0.5 - e.cy;
                    double u = (dx * cos_t + dy * sin_t) / e.rx;
                    double v = (-dx * sin_t + dy * cos_t) / e.ry;
                    double rim = std::sqrt(u * u + v * v);  // 0 center, 1 rim
                    for (int c = 0; c < 3; ++c) {
                        double shade = 1.0 - 0.25 * (1.0 - rim);  // darker toward the center
                        int val = static_cast<int>(fg[static_cast<size_t>(c)] * shade) + noise(rng) / 2;
                        sample.image.at(y, x, c) = static_cast<std::uint8_t>(std::clamp(val, 0, 255));
                    }
                }
            sample.masks.push_back(std::move(mask));
            sample.boxes.push_back(mask_tight_box(sample.masks.back(), size, size));
            sample.labels.push_back(1);
        }

        // unlabeled artifacts: dark gray streaks and specks that must not
        // touch any instance box
        if (unit(rng) < config.artifact_probability) {
            int n_artifacts = 1 + static_cast<int>(rng() % 3);
            for (int a = 0; a < n_artifacts; ++a) {
                for (int attempt = 0; attempt < 30; ++attempt) {
                    Ellipse e;
                    bool streak = unit(rng) < 0.5;
                    double r = streak ? 12.0 + 18.0 * unit(rng) : 3.0 + 4.0 * unit(rng);
                    e.rx = streak ? r : r * std::sqrt(ratio(rng));
                    e.ry = streak ? 1.2 + 1.8 * unit(rng) : r / std::sqrt(ratio(rng));
                    e.theta = angle(rng);
                    double margin = std::max(e.rx, e.ry) + 2.0;
                    if (2 * margin >= size) break;
                    std::uniform_real_distribution<double> pos(margin, size - margin);
                    e.cx = pos(rng);
                    e.cy = pos(rng);
                    Box abox{e.cx - margin, e.cy - margin, e.cx + margin, e.cy + margin};
                    bool collides = false;
                    for (const Box& b : sample.boxes)
                        if (box_iou(abox, b) > 0 || (abox.x1 < b.x2 && b.x1 < abox.x2 && abox.y1 < b.y2 &&
                                                     b.y1 < abox.y2)) {
                            collides = true;
                            break;
                        }
                    if (collides) continue;
                    auto amask = rasterize_ellipse(e, size);
                    int shade = 40 + static_cast<int>(rng() % 60);
                    for (int y = 0; y < size; ++y)
                        for (int x = 0; x < size; ++x)
                            if (amask[static_cast<size_t>(y) * size + x])
                                for (int c = 0; c < 3; ++c)
                                    sample.image.at(y, x, c) = static_cast<std::uint8_t>(
                                        std::clamp(shade + noise(rng), 0, 255));
                    break;
                }
            }
        }

        sample.validate();
        samples.push_back(std::move(sample));
    }
    return samples;
}

// ---- dataset save/load ----

void save_dataset(const std::vector<ImageSample>& samples, const std::string& root) {
    fs::create_directories(fs::path(root) / "images");
    nlohmann::json j;
    j["format_version"] = 1;
    nlohmann::json images = nlohmann::json::array();
    for (const ImageSample& s : samples) {
        std::string file = "images/" + s.id + ".png";
        save_png((fs::path(root) / file).string(), s.image);
        nlohmann::json rec;
        rec["id"] = s.id;
        rec["file"] = file;
        rec["width"] = s.image.w;
        rec["height"] = s.image.h;
        rec["source"] = data_source_name(s.source);
        rec["group"] = s.group;
        nlohmann::json instances = nlohmann::json::array();
        for (size_t i = 0; i < s.boxes.size(); ++i) {
            nlohmann::json inst;
            inst["box"] = {s.boxes[i].x1, s.boxes[i].y1, s.boxes[i].x2, s.boxes[i].y2};
            inst["label"] = s.labels[i];
            inst["rle"] = rle_encode(s.masks[i]);
            instances.push_back(std::move(inst));
        }
        rec["instances"] = std::move(instances);
        images.push_back(std::move(rec));
    }
    j["images"] = std::move(images);
    std::ofstream os(fs::path(root) / "annotations.json");
    if (!os) throw DataError("cannot write annotations.json under " + root);
    os << j.dump(2) << "\n";
}

ImageSample resize_sample(const ImageSample& sample, int out_size) {
    if (sample.image.h == out_size && sample.image.w == out_size) return sample;
    ImageSample out;
    out.id = sample.id;
    out.group = sample.group;
    out.source = sample.source;
    out.labels = sample.labels;

    Tensor t = image_to_tensor(sample.image);
    out.image = tensor_to_image(resize_bilinear(t, out_size, out_size));

    double sx = static_cast<double>(out_size) / sample.image.w;
    double sy = static_cast<double>(out_size) / sample.image.h;
    for (const Box& b : sample.boxes)
        out.boxes.push_back({b.x1 * sx, b.y1 * sy, b.x2 * sx, b.y2 * sy});
    for (const auto& mask : sample.masks) {
        std::vector<std::uint8_t> resized(static_cast<size_t>(out_size) * out_size, 0);
        for (int y = 0; y < out_size; ++y)
            for (int x = 0; x < out_size; ++x) {
                int src_y = std::min(sample.image.h - 1, static_cast<int>((y + 0.5) / sy));
                int src_x = std::min(sample.image.w - 1, static_cast<int>((x + 0.5) / sx));
                resized[static_cast<size_t>(y) * out_size + x] =
                    mask[static_cast<size_t>(src_y) * sample.image.w + src_x];
            }
        out.masks.push_back(std::move(resized));
    }
    // boxes stay linearly rescaled; nearest-resized masks can drift from them
    // by up to a source pixel, which is why ingested data gets 1 px tolerance
    return out;
}

std::vector<ImageSample> load_dataset(const std::string& root, DataSource format) {
    fs::path rootp(root);
    fs::path ann = rootp / "annotations.json";

    std::vector<ImageSample> samples;
    if (format == DataSource::lyon_roi && !fs::exists(ann)) {
        // inference-only ROI directory: just the images
        std::vector<fs::path> files;
        for (const auto& entry : fs::directory_iterator(rootp / "images"))
            if (entry.path().extension() == ".png") files.push_back(entry.path());
        std::sort(files.begin(), files.end());
        for (const auto& f : files) {
            ImageSample s;
            s.id = f.stem().string();
            s.group = s.id;
            s.source = format;
            s.image = load_png(f.string());
            samples.push_back(std::move(s));
        }
        return samples;
    }

    std::ifstream is(ann);
    if (!is) throw DataError("missing annotations.json under " + root);
    nlohmann::json j;
    try {
        is >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("malformed annotations.json under " + root + ": " + e.what());
    }
    if (!j.contains("format_version"))
        throw DataError(root + "/annotations.json: missing field 'format_version'");
    if (!j.contains("images")) throw DataError(root + "/annotations.json: missing field 'images'");

    int expected_size = 0;
    if (format == DataSource::lysto) expected_size = 267;
    if (format == DataSource::nuclick) expected_size = 256;

    for (const auto& rec : j["images"]) {
        auto field = [&](const char* name) -> const nlohmann::json& {
            if (!rec.contains(name))
                throw DataError(root + "/annotations.json: image record missing field '" +
                                std::string(name) + "'");
            return rec[name];
        };
        ImageSample s;
        s.id = field("id").get<std::string>();
        s.group = rec.contains("group") ? rec["group"].get<std::string>() : s.id;
        s.source = format;
        std::string file = field("file").get<std::string>();
        s.image = load_png((rootp / file).string());
        size_t px = static_cast<size_t>(s.image.h) * s.image.w;

        if (format != DataSource::lyon_roi) {
            for (const auto& inst : field("instances")) {
                if (!inst.contains("box") || inst["box"].size() != 4)
                    throw DataError(root + "/annotations.json: image '" + s.id +
                                    "' instance missing field 'box'");
                s.boxes.push_back({inst["box"][0].get<double>(), inst["box"][1].get<double>(),
                                   inst["box"][2].get<double>(), inst["box"][3].get<double>()});
                s.labels.push_back(inst.contains("label") ? inst["label"].get<int>() : 1);
                if (!inst.contains("rle"))
                    throw DataError(root + "/annotations.json: image '" + s.id +
                                    "' instance missing field 'rle'");
                s.masks.push_back(rle_decode(inst["rle"].get<std::vector<long long>>(), px));
            }
        }

        if (expected_size && (s.image.h != expected_size || s.image.w != expected_size))
            std::cerr << "warning: image '" << s.id << "' is " << s.image.w << "x" << s.image.h
                      << " but the " << data_source_name(format) << " format declares "
                      << expected_size << "x" << expected_size << "; resizing\n";

        // canonical input size: resize everything that is not already 256
        if (s.image.h != kCanonicalImageSize || s.image.w != kCanonicalImageSize) {
            if (format == DataSource::synthetic) {
                // synthetic data is trusted at its generated size
            } else {
                s = resize_sample(s, kCanonicalImageSize);
            }
        }
        if (format != DataSource::lyon_roi) s.validate(format == DataSource::synthetic ? 0.0 : 1.0);
        samples.push_back(std::move(s));
    }
    return samples;
}

ImageSample hflip(const ImageSample& sample) {
    ImageSample out = sample;
    int w = sample.image.w, h = sample.image.h;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) out.image.at(y, x, c) = sample.image.at(y, w - 1 - x, c);
    for (size_t i = 0; i < sample.boxes.size(); ++i) {
        const Box& b = sample.boxes[i];
        out.boxes[i] = {w - b.x2, b.y1, w - b.x1, b.y2};
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                out.masks[i][static_cast<size_t>(y) * w + x] =
                    sample.masks[i][static_cast<size_t>(y) * w + (w - 1 - x)];
    }
    return out;
}

DatasetSplit split_dataset(const std::vector<ImageSample>& samples,
                           const std::array<double, 3>& fractions, std::uint64_t seed) {
    double sum = fractions[0] + fractions[1] + fractions[2];
    if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("split fractions must sum to 1");
    for (double f : fractions)
        if (f < 0) throw ConfigError("split fractions must be non-negative");

    std::vector<std::string> groups;
    for (const ImageSample& s : samples)
        if (std::find(groups.begin(), groups.end(), s.group) == groups.end()) groups.push_back(s.group);

    int n_nonzero = 0;
    for (double f : fractions)
        if (f > 0) ++n_nonzero;
    if (static_cast<int>(groups.size()) < n_nonzero)
        throw DataError("split: fewer groups (" + std::to_string(groups.size()) +
                        ") than requested splits (" + std::to_string(n_nonzero) + ")");

    std::mt19937_64 rng(seed);
    std::shuffle(groups.begin(), groups.end(), rng);

    // largest-remainder allocation of whole groups
    size_t g = groups.size();
    std::array<long long, 3> counts{};
    std::array<double, 3> remainders{};
    long long assigned = 0;
    for (int i = 0; i < 3; ++i) {
        double exact = fractions[static_cast<size_t>(i)] * static_cast<double>(g);
        counts[static_cast<size_t>(i)] = static_cast<long long>(std::floor(exact));
        remainders[static_cast<size_t>(i)] = exact - std::floor(exact);
        assigned += counts[static_cast<size_t>(i)];
    }
    while (assigned < static_cast<long long>(g)) {
        int best = 0;
        for (int i = 1; i < 3; ++i)
            if (remainders[static_cast<size_t>(i)] > remainders[static_cast<size_t>(best)]) best = i;
        ++counts[static_cast<size_t>(best)];
        remainders[static_cast<size_t>(best)] = -1;
        ++assigned;
    }

    DatasetSplit split;
    size_t cursor = 0;
    for (int part = 0; part < 3; ++part) {
        std::vector<ImageSample>* dest = part == 0 ? &split.train : part == 1 ? &split.val : &split.test;
        for (long long k = 0; k < counts[static_cast<size_t>(part)]; ++k, ++cursor) {
            const std::string& group = groups[cursor];
            for (const ImageSample& s : samples)
                if (s.group == group) dest->push_back(s);
        }
    }
    return split;
}

}  // namespace cb
