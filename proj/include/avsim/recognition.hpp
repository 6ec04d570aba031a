#pragma once

// Instance classification: a frozen hand-crafted feature extractor, a linear
// softmax head and the compositing augmentation used to train it.

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "avsim/geometry.hpp"
#include "avsim/image.hpp"

namespace avsim {

using FeatureVector = Eigen::VectorXd;

/// 3 x 8 color bins, 8 orientation bins over a 4 x 4 grid, 8 x 8 grayscale.
constexpr int kColorBins = 8;
constexpr int kGradientBins = 8;
constexpr int kGradientGrid = 4;
constexpr int kThumbSize = 8;
constexpr int kFeatureDim = 3 * kColorBins + kGradientGrid * kGradientGrid * kGradientBins +
                            kThumbSize * kThumbSize;

/// Throws UserError on an empty crop.
FeatureVector extract_features(const RgbImage& crop);

/// Copy of the pixels inside `box` after clipping to the image. Throws
/// UserError when the clipped box has zero area.
RgbImage crop_image(const RgbImage& image, const BoundingBox& box);

/// Nearest-neighbor resize (pixel centers); works for any channel count.
RgbImage resize_nearest(const RgbImage& image, int width, int height);

struct AugmentationSpec {
  double scale_min = 0.02;
  double scale_max = 1.0;
  double crop_jitter = 0.1;     // fraction of box size, for jittered_crop_box
  double gain_jitter = 0.15;    // per-channel multiplicative, +-
  double offset_jitter = 12.0;  // brightness offset in 8-bit levels, +-
  double pixel_noise = 0.0;     // Gaussian sigma applied to the whole composite
  std::uint64_t seed = 0;

  void validate() const;
};

struct CompositeSample {
  RgbImage image;
  BoundingBox box;  // tight box of the pasted mask pixels
};

/// Scales the masked object by a factor drawn from the spec range, jitters its
/// colors and pastes it at a uniformly drawn location in a copy of the
/// background. Throws UserError when the scaled object does not fit or the mask
/// is empty or mismatched.
CompositeSample composite_training_sample(const RgbImage& object, const MaskImage& mask,
                                          const RgbImage& background,
                                          const AugmentationSpec& spec, std::mt19937_64& rng);
CompositeSample composite_training_sample(const RgbImage& object, const MaskImage& mask,
                                          const RgbImage& background,
                                          const AugmentationSpec& spec);

/// `box` shifted and resized by up to crop_jitter of its size, clipped.
BoundingBox jittered_crop_box(const BoundingBox& box, double jitter, int width, int height,
                              std::mt19937_64& rng);

struct ClassifierParams {
  double learning_rate = 0.05;
  int batch_size = 32;
  int epochs = 30;
  double l2 = 1e-4;
  std::uint64_t seed = 0;
};

/// Linear softmax over standardized features.
struct ClassifierModel {
  std::vector<int> classes;  // instance ids, ascending
  Eigen::VectorXd mean;
  Eigen::VectorXd scale;  // 1 / std (1 for constant features)
  Eigen::MatrixXd weights;  // classes x dim
  Eigen::VectorXd bias;

  int dim() const { return static_cast<int>(mean.size()); }
  Eigen::VectorXd logits(const FeatureVector& x) const;
};

struct TrainReport {
  std::vector<double> epoch_loss;
  double train_accuracy = 0.0;
};

/// Mini-batch gradient descent on softmax cross-entropy. Throws UserError with
/// fewer than two classes and DivergenceError naming the step on a non-finite loss.
ClassifierModel train_classifier(const std::vector<FeatureVector>& samples,
                                 const std::vector<int>& labels,
                                 const ClassifierParams& params = {},
                                 TrainReport* report = nullptr);

/// Mean cross-entropy plus l2/2 |W|^2 and its gradient with respect to the
/// weights and bias, for inputs already standardized.
double classifier_loss(const ClassifierModel& model, const std::vector<FeatureVector>& x,
                       const std::vector<int>& class_index, double l2,
                       Eigen::MatrixXd* grad_w = nullptr, Eigen::VectorXd* grad_b = nullptr);

struct Distribution {
  std::vector<int> classes;
  std::vector<double> probs;

  int top1() const;
  double score() const;
  double prob_of(int instance_id) const;
};

Eigen::VectorXd softmax(const Eigen::VectorXd& logits);

/// Throws UserError on a dimension mismatch.
Distribution classify_features(const ClassifierModel& model, const FeatureVector& x);
Distribution classify(const ClassifierModel& model, const RgbImage& crop);

std::string classifier_to_text(const ClassifierModel& model);
/// Throws ParseError on malformed input.
ClassifierModel classifier_from_text(const std::string& text);
void save_classifier(const ClassifierModel& model, const std::filesystem::path& path);
ClassifierModel load_classifier(const std::filesystem::path& path);

}  // namespace avsim
