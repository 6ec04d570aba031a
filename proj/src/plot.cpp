#include "avsim/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <map>

#include <fmt/format.h>

#include "avsim/error.hpp"

namespace avsim {

namespace {

using Color = std::array<std::uint8_t, 3>;

constexpr int kMargin = 40;
constexpr Color kWhite{255, 255, 255};
constexpr Color kAxis{40, 40, 40};
constexpr Color kGrid{220, 220, 220};
constexpr std::array<Color, 6> kSeries = {
    Color{31, 119, 180}, Color{255, 127, 14}, Color{44, 160, 44},
    Color{214, 39, 40},  Color{148, 103, 189}, Color{140, 86, 75}};

void put(RgbImage& img, int x, int y, const Color& c) {
  if (!img.contains(x, y)) return;
  for (int k = 0; k < 3; ++k) img.at(x, y, k) = c[k];
}

void disk(RgbImage& img, double cx, double cy, double r, const Color& c) {
  for (int y = static_cast<int>(cy - r); y <= static_cast<int>(cy + r) + 1; ++y) {
    for (int x = static_cast<int>(cx - r); x <= static_cast<int>(cx + r) + 1; ++x) {
      const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
      if (dx * dx + dy * dy <= r * r) put(img, x, y, c);
    }
  }
}

void line(RgbImage& img, double x0, double y0, double x1, double y1, const Color& c,
          double thickness = 1.0) {
  const double len = std::hypot(x1 - x0, y1 - y0);
  const int steps = std::max(1, static_cast<int>(std::ceil(len * 2)));
  for (int i = 0; i <= steps; ++i) {
    const double t = static_cast<double>(i) / steps;
    const double x = x0 + t * (x1 - x0), y = y0 + t * (y1 - y0);
    if (thickness <= 1.0) {
      put(img, static_cast<int>(std::floor(x)), static_cast<int>(std::floor(y)), c);
    } else {
      disk(img, x, y, thickness / 2.0, c);
    }
  }
}

RgbImage canvas(int width, int height) {
  if (width < 2 * kMargin + 10 || height < 2 * kMargin + 10) {
    throw UserError(fmt::format("plot size {}x{} is too small", width, height));
  }
  RgbImage img(width, height, 3, 255);
  return img;
}

void frame(RgbImage& img) {
  const int x0 = kMargin, y0 = kMargin, x1 = img.width() - kMargin, y1 = img.height() - kMargin;
  line(img, x0, y1, x1, y1, kAxis);
  line(img, x0, y0, x0, y1, kAxis);
}

double cell(const CsvTable& t, std::size_t row, std::size_t col) {
  const std::string& s = t.rows[row][col];
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size() || !std::isfinite(v)) {
    throw ParseError(fmt::format("csv '{}' row {}: '{}' is not a number", t.name, row, s));
  }
  return v;
}

bool has_column(const CsvTable& t, const std::string& name) {
  return std::find(t.header.begin(), t.header.end(), name) != t.header.end();
}

// Linear map from [lo, hi] onto the plot area along one axis.
struct Axis {
  double lo, hi, p0, p1;
  double operator()(double v) const {
    return hi > lo ? p0 + (v - lo) / (hi - lo) * (p1 - p0) : 0.5 * (p0 + p1);
  }
};

RgbImage accuracy_curve(const CsvTable& t, int width, int height) {
  std::vector<double> budgets;
  for (std::size_t c = 1; c < t.header.size(); ++c) {
    char* end = nullptr;
    const double b = std::strtod(t.header[c].c_str(), &end);
    if (t.header[c].empty() || *end != '\0') {
      throw ParseError(fmt::format("csv '{}': column '{}' is not a budget", t.name, t.header[c]));
    }
    budgets.push_back(b);
  }
  if (budgets.empty()) throw ParseError(fmt::format("csv '{}' has no budget columns", t.name));
  RgbImage img = canvas(width, height);
  const Axis ax{*std::min_element(budgets.begin(), budgets.end()),
                *std::max_element(budgets.begin(), budgets.end()), kMargin + 10.0,
                width - kMargin - 10.0};
  const Axis ay{0.0, 1.0, height - kMargin - 0.0, kMargin + 0.0};
  for (int k = 1; k <= 4; ++k) line(img, kMargin + 1, ay(k / 4.0), width - kMargin, ay(k / 4.0), kGrid);
  for (double b : budgets) line(img, ax(b), height - kMargin, ax(b), height - kMargin + 6, kAxis);
  frame(img);
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const Color& c = kSeries[r % kSeries.size()];
    for (std::size_t k = 0; k < budgets.size(); ++k) {
      const double x = ax(budgets[k]), y = ay(cell(t, r, k + 1));
      if (k > 0) line(img, ax(budgets[k - 1]), ay(cell(t, r, k)), x, y, c, 2.5);
      disk(img, x, y, 4.0, c);
    }
    // Legend swatch per series, top right, in row order.
    const double ly = kMargin / 2.0 + 0.0;
    const double lx = width - kMargin - 24.0 * (t.rows.size() - r);
    line(img, lx, ly, lx + 16, ly, c, 4.0);
  }
  return img;
}

RgbImage sensitivity_scatter(const CsvTable& t, int width, int height) {
  const std::size_t cd = t.column("distance_m"), cs = t.column("abs_score_diff");
  double dmax = 0.0;
  for (std::size_t r = 0; r < t.rows.size(); ++r) dmax = std::max(dmax, cell(t, r, cd));
  RgbImage img = canvas(width, height);
  const Axis ax{0.0, std::max(dmax, 1e-9), kMargin + 5.0, width - kMargin - 5.0};
  const Axis ay{0.0, 1.0, height - kMargin - 0.0, kMargin + 0.0};
  frame(img);
  constexpr double kBin = 0.3;
  std::map<long, std::pair<double, int>> bins;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const double d = cell(t, r, cd), s = cell(t, r, cs);
    disk(img, ax(d), ay(s), 1.5, Color{150, 150, 150});
    auto& b = bins[static_cast<long>(d / kBin)];
    b.first += s;
    b.second += 1;
  }
  double px = 0, py = 0;
  bool first = true;
  for (const auto& [k, b] : bins) {
    const double x = ax((k + 0.5) * kBin), y = ay(b.first / b.second);
    if (!first) line(img, px, py, x, y, kSeries[3], 2.5);
    disk(img, x, y, 3.5, kSeries[3]);
    px = x;
    py = y;
    first = false;
  }
  return img;
}

}  // namespace

std::array<std::uint8_t, 3> score_color(double s) {
  s = std::clamp(std::isfinite(s) ? s : 0.0, 0.0, 1.0);
  constexpr Color lo{49, 54, 149}, mid{255, 230, 60}, hi{200, 30, 30};
  const Color& a = s < 0.5 ? lo : mid;
  const Color& b = s < 0.5 ? mid : hi;
  const double t = s < 0.5 ? s * 2.0 : (s - 0.5) * 2.0;
  Color out;
  for (int k = 0; k < 3; ++k) out[k] = static_cast<std::uint8_t>(std::lround(a[k] + t * (b[k] - a[k])));
  return out;
}

RgbImage plot_heatmap(const CsvTable& t, int width, int height) {
  const std::size_t cx = t.column("x"), cy = t.column("y"), cs = t.column("score");
  const bool yaw = has_column(t, "yaw_deg");
  RgbImage img = canvas(width, height);
  frame(img);
  if (t.rows.empty()) return img;
  double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    xmin = std::min(xmin, cell(t, r, cx));
    xmax = std::max(xmax, cell(t, r, cx));
    ymin = std::min(ymin, cell(t, r, cy));
    ymax = std::max(ymax, cell(t, r, cy));
  }
  // Equal scale on both axes so the floor plan is not distorted.
  const double span = std::max({xmax - xmin, ymax - ymin, 1e-9});
  const double pw = width - 2.0 * kMargin - 20, ph = height - 2.0 * kMargin - 20;
  const double scale = std::min(pw, ph) / span;
  const double ox = kMargin + 10 + (pw - (xmax - xmin) * scale) / 2;
  const double oy = height - kMargin - 10 - (ph - (ymax - ymin) * scale) / 2;
  // Low scores first so high-score dots stay visible where cameras coincide.
  std::vector<std::size_t> order(t.rows.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return cell(t, a, cs) < cell(t, b, cs); });
  for (std::size_t r : order) {
    const double px = ox + (cell(t, r, cx) - xmin) * scale;
    const double py = oy - (cell(t, r, cy) - ymin) * scale;
    const Color c = score_color(cell(t, r, cs));
    if (yaw) {
      const double a = cell(t, r, t.column("yaw_deg")) * M_PI / 180.0;
      line(img, px, py, px + 9 * std::cos(a), py - 9 * std::sin(a), kAxis);
    }
    disk(img, px, py, 4.0, c);
  }
  // Color bar along the right edge.
  for (int y = kMargin; y < height - kMargin; ++y) {
    const Color c = score_color(1.0 - static_cast<double>(y - kMargin) / (height - 2 * kMargin));
    for (int x = width - kMargin + 12; x < width - kMargin + 24; ++x) put(img, x, y, c);
  }
  return img;
}

RgbImage plot_curve(const CsvTable& t, int width, int height) {
  if (has_column(t, "distance_m") && has_column(t, "abs_score_diff")) {
    return sensitivity_scatter(t, width, height);
  }
  if (t.header.empty() || t.header.front() != "method") {
    throw UserError(fmt::format(
        "csv '{}' is neither an accuracy table (method, budgets...) nor a sensitivity table",
        t.name));
  }
  return accuracy_curve(t, width, height);
}

}  // namespace avsim
