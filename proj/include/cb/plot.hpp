#pragma once

#include <string>
#include <vector>

#include "cb/heads.hpp"

namespace cb {

// Renders the per-iteration loss components as polylines into a PNG.
void render_loss_curve(const std::vector<LossBreakdown>& iterations, const std::string& path,
                       int width = 720, int height = 400);

}  // namespace cb
