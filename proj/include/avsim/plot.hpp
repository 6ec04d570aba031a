#pragma once

// Minimal raster figures for the analysis CSVs (no text rendering).

#include <array>
#include <cstdint>

#include "avsim/analysis.hpp"
#include "avsim/image.hpp"

namespace avsim {

/// Blue (0) through yellow (0.5) to red (1); inputs are clamped to [0, 1].
std::array<std::uint8_t, 3> score_color(double score);

/// Camera positions from a score-position CSV (x, y, score; yaw_deg optional)
/// as dots colored by score, with a heading tick per dot.
RgbImage plot_heatmap(const CsvTable& positions, int width = 480, int height = 480);

/// Accuracy table (method + one column per budget): one polyline per method on
/// an accuracy axis [0, 1]. Sensitivity table (distance_m, abs_score_diff):
/// scatter plus the mean per 0.3 m distance bin.
RgbImage plot_curve(const CsvTable& table, int width = 640, int height = 480);

}  // namespace avsim
