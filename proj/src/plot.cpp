#include "cb/plot.hpp"

#include <algorithm>
#include <cmath>

#include "cb/data.hpp"

namespace cb {

namespace {

void draw_line(Image& img, int x0, int y0, int x1, int y1, std::array<int, 3> color) {
    int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
    int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
    int err = dx + dy;
    while (true) {
        if (x0 >= 0 && x0 < img.w && y0 >= 0 && y0 < img.h)
            for (int c = 0; c < 3; ++c) img.at(y0, x0, c) = static_cast<std::uint8_t>(color[static_cast<size_t>(c)]);
        if (x0 == x1 && y0 == y1) break;
        int e2 = 2 * err;
        if (e2 >= dy) {
            err += dy;
            x0 += sx;
        }
        if (e2 <= dx) {
            err += dx;
            y0 += sy;
        }
    }
}

}  // namespace

void render_loss_curve(const std::vector<LossBreakdown>& iterations, const std::string& path,
                       int width, int height) {
    Image img;
    img.w = width;
    img.h = height;
    img.rgb.assign(static_cast<size_t>(width) * height * 3, 255);

    const int margin = 32;
    draw_line(img, margin, height - margin, width - margin / 2, height - margin, {0, 0, 0});
    draw_line(img, margin, margin / 2, margin, height - margin, {0, 0, 0});
    if (iterations.empty()) {
        save_png(path, img);
        return;
    }

    double max_v = 1e-9;
    for (const LossBreakdown& lb : iterations) max_v = std::max(max_v, lb.total);
    int n = static_cast<int>(iterations.size());
    auto to_px = [&](int i, double v) {
        int x = margin + static_cast<int>((width - 1.5 * margin) * (n == 1 ? 0.0 : static_cast<double>(i) / (n - 1)));
        int y = height - margin - static_cast<int>((height - 1.5 * margin) * (v / max_v));
        return std::pair<int, int>(x, y);
    };
    struct Series {
        double LossBreakdown::*member;
        std::array<int, 3> color;
    };
    const Series series[] = {{&LossBreakdown::total, {20, 20, 20}},
                             {&LossBreakdown::cls, {200, 60, 40}},
                             {&LossBreakdown::box, {40, 120, 200}},
                             {&LossBreakdown::mask, {40, 160, 70}}};
    for (const Series& s : series)
        for (int i = 1; i < n; ++i) {
            auto [x0, y0] = to_px(i - 1, iterations[static_cast<size_t>(i - 1)].*s.member);
            auto [x1, y1] = to_px(i, iterations[static_cast<size_t>(i)].*s.member);
            draw_line(img, x0, y0, x1, y1, s.color);
        }
    save_png(path, img);
}

}  // namespace cb
