#pragma once

// Action network, REINFORCE trainer, baselines and the accuracy-vs-moves evaluator.

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "avsim/environment.hpp"
#include "avsim/recognition.hpp"

namespace avsim {

/// Box coordinates [xmin, ymin, xmax, ymax] / image size plus a visibility bit.
constexpr int kBoxInputs = 5;

/// Input vector of the action network: image features, normalized box, visibility.
/// An absent box is encoded as a zero box with visibility 0.
Eigen::VectorXd policy_input(const FeatureVector& image_features,
                             const std::optional<BoundingBox>& box, int width, int height);

/// One-hidden-layer (tanh) network mapping standardized inputs to action logits;
/// hidden = 0 makes it linear. Inputs are standardized with a frozen mean/scale.
struct PolicyParams {
  int input_dim = 0;
  int hidden = 0;
  int actions = kActionCount;
  Eigen::VectorXd in_mean;
  Eigen::VectorXd in_scale;
  Eigen::MatrixXd w1;  // hidden x input (unused when hidden = 0)
  Eigen::VectorXd b1;
  Eigen::MatrixXd w2;  // actions x (hidden or input)
  Eigen::VectorXd b2;

  /// Trainable parameters, flattened in the order w1, b1, w2, b2 (row-major).
  Eigen::VectorXd flat() const;
  void set_flat(const Eigen::VectorXd& theta);
  long parameter_count() const;
};

struct PolicyInit {
  int hidden = 32;
  double init_range = 0.05;  // weights uniform in [-range, range], biases 0
  int actions = kActionCount;
  std::uint64_t seed = 0;
};

PolicyParams init_policy(int input_dim, const PolicyInit& init = {});

/// Standardization fitted on sample inputs (features with zero spread keep scale 1).
void fit_input_normalization(PolicyParams& params, const std::vector<Eigen::VectorXd>& inputs);

Eigen::VectorXd policy_logits(const PolicyParams& params, const Eigen::VectorXd& input);

/// Softmax over the logits. Throws UserError on an input dimension mismatch.
Eigen::VectorXd action_distribution(const PolicyParams& params, const Eigen::VectorXd& input);

/// Gradient of log p(action | input) with respect to flat().
Eigen::VectorXd log_prob_gradient(const PolicyParams& params, const Eigen::VectorXd& input,
                                  int action);

/// Index drawn from `probs` by inverse CDF with one uniform draw.
int sample_index(const Eigen::VectorXd& probs, std::mt19937_64& rng);

/// Decision rule used by rollouts and evaluation.
class Policy {
 public:
  virtual ~Policy() = default;
  virtual std::string name() const = 0;
  /// Distribution over the 6 actions for one observation input.
  virtual Eigen::VectorXd distribution(const Eigen::VectorXd& input) const = 0;
  virtual Action act(const Eigen::VectorXd& input, std::mt19937_64& rng) const;
};

class LearnedPolicy : public Policy {
 public:
  explicit LearnedPolicy(PolicyParams params, bool greedy = false, std::string name = "ours")
      : params_(std::move(params)), greedy_(greedy), name_(std::move(name)) {}
  std::string name() const override { return name_; }
  Eigen::VectorXd distribution(const Eigen::VectorXd& input) const override;
  Action act(const Eigen::VectorXd& input, std::mt19937_64& rng) const override;
  const PolicyParams& params() const { return params_; }

 private:
  PolicyParams params_;
  bool greedy_;
  std::string name_;
};

enum class BaselineKind { kRandom, kForward };

/// random: uniform over the 6 actions; forward: always forward. Both ignore inputs.
std::unique_ptr<Policy> baseline_policy(BaselineKind kind);
/// "random" or "forward"; throws UserError otherwise.
BaselineKind parse_baseline(const std::string& name);

/// Episode scene with per-frame image features and per-annotation classifier
/// outputs computed once, so rollouts reduce to table lookups.
class ActiveScene {
 public:
  /// `classifications` holds the distribution for each annotated (frame, instance).
  ActiveScene(const FrameSource& scene, std::vector<FeatureVector> frame_features,
              std::map<std::pair<std::string, int>, Distribution> classifications);

  const EpisodeScene& episodes() const { return episodes_; }
  const FrameSource& source() const { return episodes_.source(); }
  Eigen::VectorXd input(const EpisodeState& state) const;
  /// Absent when the target has no box in the state's frame.
  const Distribution* classification(const std::string& frame_id, int instance_id) const;
  int feature_dim() const;

 private:
  EpisodeScene episodes_;
  std::map<std::string, std::size_t> frame_index_;
  std::vector<FeatureVector> features_;
  std::map<std::pair<std::string, int>, Distribution> classifications_;
};

/// Extracts full-frame features and classifies every annotated crop.
std::unique_ptr<ActiveScene> build_active_scene(const FrameSource& scene,
                                                const ClassifierModel& classifier,
                                                int threads = 0);

struct Trajectory {
  std::vector<Eigen::VectorXd> inputs;  // observation the action was chosen from
  std::vector<int> actions;
  std::vector<std::string> frames;      // start frame plus one per step
  double reward = 0.0;
  bool correct = false;
  int top1 = 0;
  double score = 0.0;
  TerminationReason reason = TerminationReason::kNone;
  std::vector<TraceRecord> trace;
};

/// Runs one episode from `start`: classify, stop on confidence, else sample an
/// action, step and repeat. Reward is the final score when the final top-1 is the
/// target, else 0. A view without a target box classifies as wrong with score 0.
/// max_steps = 0 classifies the start view only.
Trajectory rollout(const Policy& policy, const ActiveScene& scene, int instance_id,
                   const std::string& start_frame, int max_steps, const EpisodeConfig& config,
                   std::uint64_t seed);

struct TrainConfig {
  int batch_episodes = 32;  // M
  double learning_rate = 0.05;
  int batches = 20000;
  bool baseline = false;  // subtract the batch-mean reward
  std::uint64_t seed = 0;
  EpisodeConfig episode;
  PolicyInit init;
  int threads = 0;

  void validate() const;
};

struct TrainStats {
  double mean_reward = 0.0;
  double accuracy = 0.0;
  double gradient_norm = 0.0;
  std::vector<int> length_histogram;  // index = episode length
};

/// (1/M) sum_i sum_t grad log p(a_t^i | x_t^i) * (R^i - b), b = batch mean when
/// `baseline`, else 0.
Eigen::VectorXd reinforce_gradient(const PolicyParams& params,
                                   const std::vector<Trajectory>& batch, bool baseline);

/// Surrogate (1/M) sum_i sum_t log p(a_t^i | x_t^i) * (R^i - b) whose gradient is
/// reinforce_gradient.
double reinforce_surrogate(const PolicyParams& params, const std::vector<Trajectory>& batch,
                           bool baseline);

/// theta <- theta + lr * reinforce_gradient. Throws DivergenceError on a
/// non-finite gradient.
TrainStats reinforce_update(PolicyParams& params, const std::vector<Trajectory>& batch,
                            const TrainConfig& config);

/// Episodes sample a scene, an annotated instance and a start frame uniformly.
PolicyParams train_policy(const std::vector<const ActiveScene*>& scenes,
                          const TrainConfig& config, std::vector<TrainStats>* history = nullptr);

struct EvalConfig {
  std::vector<int> budgets = {0, 3, 5, 10, 20};
  /// 0: every (instance, annotated frame) start; else a seeded sample of this size.
  int max_starts = 0;
  EpisodeConfig episode;
  std::uint64_t seed = 0;
  int threads = 0;
};

struct AccuracyRow {
  std::string method;
  std::vector<int> budgets;
  std::vector<double> accuracy;                          // per budget
  std::map<int, std::vector<double>> per_instance;       // instance -> per budget
  int episodes_per_budget = 0;
};

/// Mean top-1 accuracy at the final view for each move budget. Episode seeds
/// depend only on (start, budget), so every policy sees the same starts.
AccuracyRow evaluate_policy(const Policy& policy, const std::vector<const ActiveScene*>& scenes,
                            const EvalConfig& config);

std::string policy_to_text(const PolicyParams& params);
PolicyParams policy_from_text(const std::string& text);
void save_policy(const PolicyParams& params, const std::filesystem::path& path);
PolicyParams load_policy(const std::filesystem::path& path);

}  // namespace avsim
