#include "avsim/recognition.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>

#include <fmt/format.h>

#include "avsim/dataset.hpp"
#include "avsim/error.hpp"

namespace avsim {

namespace {

constexpr const char* kCheckpointMagic = "avsim-classifier";
constexpr int kCheckpointVersion = 1;

// Source index range [lo, hi) covered by destination index i of n over m.
std::pair<int, int> footprint(int i, int n, int m) {
  const int lo = static_cast<int>(static_cast<long>(i) * m / n);
  const int hi = std::max(static_cast<int>(static_cast<long>(i + 1) * m / n), lo + 1);
  return {lo, std::min(hi, m)};
}

int nearest_source(int i, int n, int m) {
  return std::min(m - 1, static_cast<int>((i + 0.5) * m / n));
}

std::uint8_t clamp_u8(double v) {
  return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
}

double gray(const RgbImage& img, int x, int y) {
  return (img.at(x, y, 0) + img.at(x, y, 1) + img.at(x, y, 2)) / 3.0;
}

void write_row(std::ostringstream& out, const char* name, const double* v, long n) {
  out << name;
  for (long i = 0; i < n; ++i) out << ' ' << fmt::format("{:.17g}", v[i]);
  out << '\n';
}

}  // namespace

FeatureVector extract_features(const RgbImage& crop) {
  if (crop.empty() || crop.channels() != 3) throw UserError("feature extraction needs a non-empty RGB crop");
  const int w = crop.width(), h = crop.height();
  const double n = static_cast<double>(crop.pixel_count());
  FeatureVector f = FeatureVector::Zero(kFeatureDim);

  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) f[c * kColorBins + crop.at(x, y, c) * kColorBins / 256] += 1.0 / n;
    }
  }

  // Magnitude-weighted orientation histograms, averaged over each cell's pixels.
  const int g0 = 3 * kColorBins;
  std::vector<int> cell_pixels(kGradientGrid * kGradientGrid, 0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double gx = gray(crop, std::min(x + 1, w - 1), y) - gray(crop, std::max(x - 1, 0), y);
      const double gy = gray(crop, x, std::min(y + 1, h - 1)) - gray(crop, x, std::max(y - 1, 0));
      const int cell = (y * kGradientGrid / h) * kGradientGrid + x * kGradientGrid / w;
      cell_pixels[cell]++;
      const double mag = std::hypot(gx, gy);
      if (mag == 0.0) continue;
      double angle = std::atan2(gy, gx);
      if (angle < 0.0) angle += 2.0 * std::numbers::pi;
      const int bin = std::min(kGradientBins - 1,
                               static_cast<int>(angle / (2.0 * std::numbers::pi) * kGradientBins));
      f[g0 + cell * kGradientBins + bin] += mag / 255.0;
    }
  }
  for (int cell = 0; cell < kGradientGrid * kGradientGrid; ++cell) {
    if (cell_pixels[cell] == 0) continue;
    for (int b = 0; b < kGradientBins; ++b) f[g0 + cell * kGradientBins + b] /= cell_pixels[cell];
  }

  const int t0 = g0 + kGradientGrid * kGradientGrid * kGradientBins;
  for (int ty = 0; ty < kThumbSize; ++ty) {
    const auto [y0, y1] = footprint(ty, kThumbSize, h);
    for (int tx = 0; tx < kThumbSize; ++tx) {
      const auto [x0, x1] = footprint(tx, kThumbSize, w);
      double sum = 0.0;
      for (int y = y0; y < y1; ++y) {
        for (int x = x0; x < x1; ++x) sum += gray(crop, x, y);
      }
      f[t0 + ty * kThumbSize + tx] = sum / ((y1 - y0) * (x1 - x0) * 255.0);
    }
  }
  return f;
}

RgbImage crop_image(const RgbImage& image, const BoundingBox& box) {
  const BoundingBox b = clip_box(box, image.width(), image.height());
  if (!b.valid()) {
    throw UserError(fmt::format("degenerate crop [{}, {}, {}, {}]", box.xmin, box.ymin, box.xmax,
                                box.ymax));
  }
  RgbImage out(b.width(), b.height(), image.channels());
  for (int y = 0; y < b.height(); ++y) {
    for (int x = 0; x < b.width(); ++x) {
      for (int c = 0; c < image.channels(); ++c) out.at(x, y, c) = image.at(b.xmin + x, b.ymin + y, c);
    }
  }
  return out;
}

RgbImage resize_nearest(const RgbImage& image, int width, int height) {
  RgbImage out(width, height, image.channels());
  for (int y = 0; y < height; ++y) {
    const int sy = nearest_source(y, height, image.height());
    for (int x = 0; x < width; ++x) {
      const int sx = nearest_source(x, width, image.width());
      for (int c = 0; c < image.channels(); ++c) out.at(x, y, c) = image.at(sx, sy, c);
    }
  }
  return out;
}

void AugmentationSpec::validate() const {
  if (!(scale_min > 0.0 && scale_min <= scale_max && scale_max <= 1.0)) {
    throw UserError(fmt::format("scale range [{}, {}] must lie in (0, 1]", scale_min, scale_max));
  }
  if (!(crop_jitter >= 0.0 && gain_jitter >= 0.0 && offset_jitter >= 0.0 && pixel_noise >= 0.0)) {
    throw UserError("augmentation jitters must be >= 0");
  }
}

CompositeSample composite_training_sample(const RgbImage& object, const MaskImage& mask,
                                          const RgbImage& background,
                                          const AugmentationSpec& spec, std::mt19937_64& rng) {
  spec.validate();
  if (object.empty() || mask.width() != object.width() || mask.height() != object.height()) {
    throw UserError("object mask must match the object crop size");
  }
  if (std::none_of(mask.data().begin(), mask.data().end(), [](auto v) { return v != 0; })) {
    throw UserError("object mask is empty");
  }
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double s = spec.scale_min + (spec.scale_max - spec.scale_min) * unit(rng);
  const int w = std::max(1, static_cast<int>(std::lround(s * object.width())));
  const int h = std::max(1, static_cast<int>(std::lround(s * object.height())));
  if (w > background.width() || h > background.height()) {
    throw UserError(fmt::format("scaled object {}x{} exceeds background {}x{}", w, h,
                                background.width(), background.height()));
  }
  std::array<double, 3> gain{};
  for (double& g : gain) g = 1.0 + spec.gain_jitter * (2.0 * unit(rng) - 1.0);
  const double offset = spec.offset_jitter * (2.0 * unit(rng) - 1.0);
  std::uniform_int_distribution<int> px(0, background.width() - w);
  std::uniform_int_distribution<int> py(0, background.height() - h);
  const int ox = px(rng), oy = py(rng);

  CompositeSample out{background, BoundingBox{ox + w, oy + h, ox, oy, 0, 0}};
  for (int y = 0; y < h; ++y) {
    const auto [y0, y1] = footprint(y, h, object.height());
    const int ny = nearest_source(y, h, object.height());
    for (int x = 0; x < w; ++x) {
      const auto [x0, x1] = footprint(x, w, object.width());
      const int nx = nearest_source(x, w, object.width());
      // Nearest source pixel when it is masked, else any masked pixel of the footprint.
      int sx = -1, sy = -1;
      if (mask.at(nx, ny)) {
        sx = nx, sy = ny;
      } else {
        for (int yy = y0; yy < y1 && sx < 0; ++yy) {
          for (int xx = x0; xx < x1; ++xx) {
            if (mask.at(xx, yy)) {
              sx = xx, sy = yy;
              break;
            }
          }
        }
      }
      if (sx < 0) continue;
      for (int c = 0; c < 3; ++c) {
        const double v = object.at(sx, sy, c);
        out.image.at(ox + x, oy + y, c) =
            (gain[c] == 1.0 && offset == 0.0) ? object.at(sx, sy, c) : clamp_u8(v * gain[c] + offset);
      }
      out.box.xmin = std::min(out.box.xmin, ox + x);
      out.box.ymin = std::min(out.box.ymin, oy + y);
      out.box.xmax = std::max(out.box.xmax, ox + x + 1);
      out.box.ymax = std::max(out.box.ymax, oy + y + 1);
    }
  }
  if (spec.pixel_noise > 0.0) {
    std::normal_distribution<double> noise(0.0, spec.pixel_noise);
    for (auto& v : out.image.data()) v = clamp_u8(v + noise(rng));
  }
  return out;
}

CompositeSample composite_training_sample(const RgbImage& object, const MaskImage& mask,
                                          const RgbImage& background,
                                          const AugmentationSpec& spec) {
  std::mt19937_64 rng(spec.seed);
  return composite_training_sample(object, mask, background, spec, rng);
}

BoundingBox jittered_crop_box(const BoundingBox& box, double jitter, int width, int height,
                              std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-jitter, jitter);
  const double bw = box.width(), bh = box.height();
  const double cx = (box.xmin + box.xmax) / 2.0 + u(rng) * bw;
  const double cy = (box.ymin + box.ymax) / 2.0 + u(rng) * bh;
  const double w = std::max(1.0, bw * (1.0 + u(rng)));
  const double h = std::max(1.0, bh * (1.0 + u(rng)));
  BoundingBox out = box;
  out.xmin = static_cast<int>(std::lround(cx - w / 2.0));
  out.ymin = static_cast<int>(std::lround(cy - h / 2.0));
  out.xmax = std::max(out.xmin + 1, static_cast<int>(std::lround(cx + w / 2.0)));
  out.ymax = std::max(out.ymin + 1, static_cast<int>(std::lround(cy + h / 2.0)));
  out = clip_box(out, width, height);
  return out.valid() ? out : clip_box(box, width, height);
}

Eigen::VectorXd softmax(const Eigen::VectorXd& logits) {
  const double m = logits.maxCoeff();
  Eigen::VectorXd e = (logits.array() - m).exp();
  return e / e.sum();
}

Eigen::VectorXd ClassifierModel::logits(const FeatureVector& x) const {
  const Eigen::VectorXd z = (x - mean).cwiseProduct(scale);
  return weights * z + bias;
}

double classifier_loss(const ClassifierModel& model, const std::vector<FeatureVector>& x,
                       const std::vector<int>& class_index, double l2, Eigen::MatrixXd* grad_w,
                       Eigen::VectorXd* grad_b) {
  const auto k = model.weights.rows();
  if (grad_w) *grad_w = Eigen::MatrixXd::Zero(k, model.weights.cols());
  if (grad_b) *grad_b = Eigen::VectorXd::Zero(k);
  double loss = 0.0;
  const double inv_n = 1.0 / static_cast<double>(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    Eigen::VectorXd p = softmax(model.weights * x[i] + model.bias);
    loss -= std::log(std::max(p[class_index[i]], 1e-300)) * inv_n;
    p[class_index[i]] -= 1.0;
    if (grad_w) grad_w->noalias() += p * x[i].transpose() * inv_n;
    if (grad_b) *grad_b += p * inv_n;
  }
  loss += 0.5 * l2 * model.weights.squaredNorm();
  if (grad_w) *grad_w += l2 * model.weights;
  return loss;
}

ClassifierModel train_classifier(const std::vector<FeatureVector>& samples,
                                 const std::vector<int>& labels, const ClassifierParams& params,
                                 TrainReport* report) {
  if (samples.size() != labels.size()) throw UserError("samples and labels differ in length");
  if (samples.empty()) throw UserError("no training samples");
  if (params.batch_size < 1 || params.epochs < 1 || !(params.learning_rate > 0.0)) {
    throw UserError("batch size, epochs and learning rate must be positive");
  }
  ClassifierModel model;
  model.classes = labels;
  std::sort(model.classes.begin(), model.classes.end());
  model.classes.erase(std::unique(model.classes.begin(), model.classes.end()), model.classes.end());
  if (model.classes.size() < 2) {
    throw UserError(fmt::format("need at least 2 classes, got {}", model.classes.size()));
  }
  const auto d = samples.front().size();
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].size() != d) throw UserError(fmt::format("sample {} has dimension {}", i, samples[i].size()));
    if (!samples[i].allFinite()) throw UserError(fmt::format("sample {} is not finite", i));
  }

  const double n = static_cast<double>(samples.size());
  model.mean = Eigen::VectorXd::Zero(d);
  for (const auto& s : samples) model.mean += s / n;
  Eigen::VectorXd var = Eigen::VectorXd::Zero(d);
  for (const auto& s : samples) var += (s - model.mean).cwiseAbs2() / n;
  model.scale = var.unaryExpr([](double v) { return v > 1e-24 ? 1.0 / std::sqrt(v) : 1.0; });
  const auto k = static_cast<Eigen::Index>(model.classes.size());
  model.weights = Eigen::MatrixXd::Zero(k, d);
  model.bias = Eigen::VectorXd::Zero(k);

  std::vector<FeatureVector> z;
  z.reserve(samples.size());
  for (const auto& s : samples) z.push_back((s - model.mean).cwiseProduct(model.scale));
  std::vector<int> y;
  y.reserve(labels.size());
  for (int l : labels) {
    y.push_back(static_cast<int>(std::lower_bound(model.classes.begin(), model.classes.end(), l) -
                                 model.classes.begin()));
  }

  std::mt19937_64 rng(params.seed);
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  Eigen::MatrixXd gw;
  Eigen::VectorXd gb;
  long step = 0;
  TrainReport rep;
  for (int epoch = 0; epoch < params.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += params.batch_size) {
      const std::size_t end = std::min(order.size(), start + params.batch_size);
      std::vector<FeatureVector> bx;
      std::vector<int> by;
      for (std::size_t i = start; i < end; ++i) {
        bx.push_back(z[order[i]]);
        by.push_back(y[order[i]]);
      }
      const double loss = classifier_loss(model, bx, by, params.l2, &gw, &gb);
      if (!std::isfinite(loss) || !gw.allFinite()) {
        throw DivergenceError(fmt::format("classifier loss is not finite at step {} (epoch {})", step, epoch));
      }
      model.weights -= params.learning_rate * gw;
      model.bias -= params.learning_rate * gb;
      ++step;
    }
    const double loss = classifier_loss(model, z, y, params.l2);
    if (!std::isfinite(loss)) {
      throw DivergenceError(fmt::format("classifier loss is not finite at step {} (epoch {})", step, epoch));
    }
    rep.epoch_loss.push_back(loss);
  }
  int correct = 0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    Eigen::Index best;
    (model.weights * z[i] + model.bias).maxCoeff(&best);
    correct += best == y[i];
  }
  rep.train_accuracy = correct / n;
  if (report) *report = std::move(rep);
  return model;
}

int Distribution::top1() const {
  const auto it = std::max_element(probs.begin(), probs.end());
  return classes[it - probs.begin()];
}

double Distribution::score() const { return *std::max_element(probs.begin(), probs.end()); }

double Distribution::prob_of(int instance_id) const {
  const auto it = std::find(classes.begin(), classes.end(), instance_id);
  return it == classes.end() ? 0.0 : probs[it - classes.begin()];
}

Distribution classify_features(const ClassifierModel& model, const FeatureVector& x) {
  if (x.size() != model.dim()) {
    throw UserError(fmt::format("feature dimension {} does not match model dimension {}", x.size(),
                                model.dim()));
  }
  const Eigen::VectorXd p = softmax(model.logits(x));
  return Distribution{model.classes, std::vector<double>(p.data(), p.data() + p.size())};
}

Distribution classify(const ClassifierModel& model, const RgbImage& crop) {
  return classify_features(model, extract_features(crop));
}

std::string classifier_to_text(const ClassifierModel& m) {
  std::ostringstream out;
  out << kCheckpointMagic << ' ' << kCheckpointVersion << '\n';
  out << "classes " << m.classes.size();
  for (int c : m.classes) out << ' ' << c;
  out << '\n' << "dim " << m.dim() << '\n';
  write_row(out, "mean", m.mean.data(), m.mean.size());
  write_row(out, "scale", m.scale.data(), m.scale.size());
  write_row(out, "bias", m.bias.data(), m.bias.size());
  const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> w = m.weights;
  write_row(out, "weights", w.data(), w.size());
  return out.str();
}

ClassifierModel classifier_from_text(const std::string& text) {
  std::istringstream in(text);
  auto expect = [&](const char* key) {
    std::string word;
    if (!(in >> word) || word != key) {
      throw ParseError(fmt::format("classifier checkpoint: expected '{}'", key));
    }
  };
  auto read_vec = [&](const char* key, long n) {
    expect(key);
    Eigen::VectorXd v(n);
    for (long i = 0; i < n; ++i) {
      if (!(in >> v[i]) || !std::isfinite(v[i])) {
        throw ParseError(fmt::format("classifier checkpoint: bad value {} of '{}'", i, key));
      }
    }
    return v;
  };
  expect(kCheckpointMagic);
  int version = 0;
  if (!(in >> version) || version != kCheckpointVersion) {
    throw ParseError(fmt::format("classifier checkpoint: unsupported version {}", version));
  }
  ClassifierModel m;
  long k = 0, d = 0;
  expect("classes");
  if (!(in >> k) || k < 2) throw ParseError("classifier checkpoint: bad class count");
  m.classes.resize(k);
  for (auto& c : m.classes) {
    if (!(in >> c)) throw ParseError("classifier checkpoint: bad class id");
  }
  expect("dim");
  if (!(in >> d) || d < 1) throw ParseError("classifier checkpoint: bad dimension");
  m.mean = read_vec("mean", d);
  m.scale = read_vec("scale", d);
  m.bias = read_vec("bias", k);
  const Eigen::VectorXd w = read_vec("weights", k * d);
  m.weights = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      w.data(), k, d);
  return m;
}

void save_classifier(const ClassifierModel& model, const std::filesystem::path& path) {
  write_text(path, classifier_to_text(model));
}

ClassifierModel load_classifier(const std::filesystem::path& path) {
  return classifier_from_text(read_text(path));
}

}  // namespace avsim
