#include "avsim/policy.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <fmt/format.h>

#include "avsim/dataset.hpp"
#include "avsim/error.hpp"
#include "avsim/parallel.hpp"

namespace avsim {

namespace {

constexpr const char* kPolicyMagic = "avsim-policy";
constexpr int kPolicyVersion = 1;

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c = 0) {
  return splitmix(splitmix(splitmix(a) ^ b) ^ c);
}

template <typename M>
void append_row_major(const M& m, Eigen::VectorXd& out, long& at) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) out[at++] = m(r, c);
  }
}

template <typename M>
void read_row_major(M& m, const Eigen::VectorXd& in, long& at) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = in[at++];
  }
}

struct Forward {
  Eigen::VectorXd z;  // standardized input
  Eigen::VectorXd h;  // hidden activations (z when linear)
  Eigen::VectorXd logits;
};

Forward forward(const PolicyParams& p, const Eigen::VectorXd& input) {
  if (input.size() != p.input_dim) {
    throw UserError(fmt::format("policy input has dimension {}, expected {}", input.size(),
                                p.input_dim));
  }
  Forward f;
  f.z = (input - p.in_mean).cwiseProduct(p.in_scale);
  f.h = p.hidden > 0 ? Eigen::VectorXd((p.w1 * f.z + p.b1).array().tanh()) : f.z;
  f.logits = p.w2 * f.h + p.b2;
  return f;
}

class UniformPolicy : public Policy {
 public:
  std::string name() const override { return "random"; }
  Eigen::VectorXd distribution(const Eigen::VectorXd&) const override {
    return Eigen::VectorXd::Constant(kActionCount, 1.0 / kActionCount);
  }
};

class ForwardPolicy : public Policy {
 public:
  std::string name() const override { return "forward"; }
  Eigen::VectorXd distribution(const Eigen::VectorXd&) const override {
    Eigen::VectorXd p = Eigen::VectorXd::Zero(kActionCount);
    p[action_index(Action::kForward)] = 1.0;
    return p;
  }
  Action act(const Eigen::VectorXd&, std::mt19937_64&) const override { return Action::kForward; }
};

void write_row(std::ostringstream& out, const char* name, const Eigen::VectorXd& v) {
  out << name << ' ' << v.size();
  for (double x : v) out << ' ' << fmt::format("{:.17g}", x);
  out << '\n';
}

}  // namespace

Eigen::VectorXd policy_input(const FeatureVector& features, const std::optional<BoundingBox>& box,
                             int width, int height) {
  Eigen::VectorXd x = Eigen::VectorXd::Zero(features.size() + kBoxInputs);
  x.head(features.size()) = features;
  if (box) {
    const auto n = features.size();
    x[n + 0] = static_cast<double>(box->xmin) / width;
    x[n + 1] = static_cast<double>(box->ymin) / height;
    x[n + 2] = static_cast<double>(box->xmax) / width;
    x[n + 3] = static_cast<double>(box->ymax) / height;
    x[n + 4] = 1.0;
  }
  return x;
}

long PolicyParams::parameter_count() const {
  return w1.size() + b1.size() + w2.size() + b2.size();
}

Eigen::VectorXd PolicyParams::flat() const {
  Eigen::VectorXd theta(parameter_count());
  long at = 0;
  append_row_major(w1, theta, at);
  append_row_major(b1, theta, at);
  append_row_major(w2, theta, at);
  append_row_major(b2, theta, at);
  return theta;
}

void PolicyParams::set_flat(const Eigen::VectorXd& theta) {
  if (theta.size() != parameter_count()) {
    throw UserError(fmt::format("policy has {} parameters, got {}", parameter_count(), theta.size()));
  }
  long at = 0;
  read_row_major(w1, theta, at);
  read_row_major(b1, theta, at);
  read_row_major(w2, theta, at);
  read_row_major(b2, theta, at);
}

PolicyParams init_policy(int input_dim, const PolicyInit& init) {
  if (input_dim < 1 || init.hidden < 0 || init.actions < 2 || !(init.init_range >= 0.0)) {
    throw UserError("policy needs input_dim >= 1, hidden >= 0, actions >= 2, init_range >= 0");
  }
  PolicyParams p;
  p.input_dim = input_dim;
  p.hidden = init.hidden;
  p.actions = init.actions;
  p.in_mean = Eigen::VectorXd::Zero(input_dim);
  p.in_scale = Eigen::VectorXd::Ones(input_dim);
  std::mt19937_64 rng(init.seed);
  std::uniform_real_distribution<double> u(-init.init_range, init.init_range);
  auto draw = [&](Eigen::Index r, Eigen::Index c) {
    Eigen::MatrixXd m(r, c);
    for (Eigen::Index i = 0; i < r; ++i) {
      for (Eigen::Index j = 0; j < c; ++j) m(i, j) = u(rng);
    }
    return m;
  };
  const int out_in = init.hidden > 0 ? init.hidden : input_dim;
  p.w1 = draw(init.hidden, input_dim);
  p.b1 = Eigen::VectorXd::Zero(init.hidden);
  p.w2 = draw(init.actions, out_in);
  p.b2 = Eigen::VectorXd::Zero(init.actions);
  return p;
}

void fit_input_normalization(PolicyParams& params, const std::vector<Eigen::VectorXd>& inputs) {
  if (inputs.empty()) return;
  const double n = static_cast<double>(inputs.size());
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(params.input_dim);
  for (const auto& x : inputs) mean += x / n;
  Eigen::VectorXd var = Eigen::VectorXd::Zero(params.input_dim);
  for (const auto& x : inputs) var += (x - mean).cwiseAbs2() / n;
  params.in_mean = mean;
  params.in_scale = var.unaryExpr([](double v) { return v > 1e-24 ? 1.0 / std::sqrt(v) : 1.0; });
}

Eigen::VectorXd policy_logits(const PolicyParams& params, const Eigen::VectorXd& input) {
  return forward(params, input).logits;
}

Eigen::VectorXd action_distribution(const PolicyParams& params, const Eigen::VectorXd& input) {
  return softmax(policy_logits(params, input));
}

Eigen::VectorXd log_prob_gradient(const PolicyParams& p, const Eigen::VectorXd& input, int action) {
  const Forward f = forward(p, input);
  Eigen::VectorXd dl = -softmax(f.logits);
  dl[action] += 1.0;
  Eigen::VectorXd g(p.parameter_count());
  long at = 0;
  if (p.hidden > 0) {
    const Eigen::VectorXd dh = p.w2.transpose() * dl;
    const Eigen::VectorXd dpre = dh.cwiseProduct((1.0 - f.h.array().square()).matrix());
    append_row_major(Eigen::MatrixXd(dpre * f.z.transpose()), g, at);
    append_row_major(dpre, g, at);
  }
  append_row_major(Eigen::MatrixXd(dl * f.h.transpose()), g, at);
  append_row_major(dl, g, at);
  return g;
}

int sample_index(const Eigen::VectorXd& probs, std::mt19937_64& rng) {
  const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  double acc = 0.0;
  for (Eigen::Index i = 0; i < probs.size(); ++i) {
    acc += probs[i];
    if (u < acc) return static_cast<int>(i);
  }
  // Rounding left u above the total: last action with nonzero mass.
  for (Eigen::Index i = probs.size() - 1; i > 0; --i) {
    if (probs[i] > 0.0) return static_cast<int>(i);
  }
  return 0;
}

Action Policy::act(const Eigen::VectorXd& input, std::mt19937_64& rng) const {
  return action_from_index(sample_index(distribution(input), rng));
}

Eigen::VectorXd LearnedPolicy::distribution(const Eigen::VectorXd& input) const {
  return action_distribution(params_, input);
}

Action LearnedPolicy::act(const Eigen::VectorXd& input, std::mt19937_64& rng) const {
  const Eigen::VectorXd p = distribution(input);
  if (!greedy_) return action_from_index(sample_index(p, rng));
  Eigen::Index best;
  p.maxCoeff(&best);
  return action_from_index(static_cast<int>(best));
}

std::unique_ptr<Policy> baseline_policy(BaselineKind kind) {
  if (kind == BaselineKind::kForward) return std::make_unique<ForwardPolicy>();
  return std::make_unique<UniformPolicy>();
}

BaselineKind parse_baseline(const std::string& name) {
  if (name == "random") return BaselineKind::kRandom;
  if (name == "forward") return BaselineKind::kForward;
  throw UserError(fmt::format("unknown baseline '{}' (valid: random, forward)", name));
}

ActiveScene::ActiveScene(const FrameSource& scene, std::vector<FeatureVector> frame_features,
                         std::map<std::pair<std::string, int>, Distribution> classifications)
    : episodes_(scene), features_(std::move(frame_features)),
      classifications_(std::move(classifications)) {
  const auto& frames = scene.manifest().frames;
  if (features_.size() != frames.size()) {
    throw UserError(fmt::format("{} frame features for {} frames", features_.size(), frames.size()));
  }
  for (std::size_t i = 0; i < frames.size(); ++i) frame_index_[frames[i].frame_id] = i;
}

Eigen::VectorXd ActiveScene::input(const EpisodeState& state) const {
  return policy_input(features_[frame_index_.at(state.frame_id)], state.box,
                      episodes_.image_width(), episodes_.image_height());
}

const Distribution* ActiveScene::classification(const std::string& frame_id, int instance_id) const {
  auto it = classifications_.find({frame_id, instance_id});
  return it == classifications_.end() ? nullptr : &it->second;
}

int ActiveScene::feature_dim() const {
  return features_.empty() ? kFeatureDim : static_cast<int>(features_.front().size());
}

std::unique_ptr<ActiveScene> build_active_scene(const FrameSource& scene,
                                                const ClassifierModel& classifier, int threads) {
  const SceneManifest& m = scene.manifest();
  std::map<std::string, std::vector<const InstanceAnnotation*>> by_frame;
  for (const auto& a : m.annotations) by_frame[a.frame_id].push_back(&a);

  std::vector<FeatureVector> features(m.frames.size());
  std::vector<std::vector<std::pair<int, Distribution>>> outputs(m.frames.size());
  parallel_for(
      m.frames.size(),
      [&](std::size_t i) {
        const std::string& id = m.frames[i].frame_id;
        const RgbImage rgb = scene.rgb(id);
        features[i] = extract_features(rgb);
        auto it = by_frame.find(id);
        if (it == by_frame.end()) return;
        for (const InstanceAnnotation* a : it->second) {
          outputs[i].emplace_back(a->instance_id, classify(classifier, crop_image(rgb, a->box)));
        }
      },
      threads > 0 ? threads : default_thread_count());

  std::map<std::pair<std::string, int>, Distribution> table;
  for (std::size_t i = 0; i < m.frames.size(); ++i) {
    for (auto& [id, d] : outputs[i]) table[{m.frames[i].frame_id, id}] = std::move(d);
  }
  return std::make_unique<ActiveScene>(scene, std::move(features), std::move(table));
}

Trajectory rollout(const Policy& policy, const ActiveScene& scene, int instance_id,
                   const std::string& start_frame, int max_steps, const EpisodeConfig& config,
                   std::uint64_t seed) {
  if (max_steps < 0) throw UserError("move budget must be >= 0");
  EpisodeConfig cfg = config;
  cfg.max_steps = std::max(1, max_steps);
  std::mt19937_64 rng(seed);
  Trajectory traj;
  EpisodeState state = reset_state(scene.episodes(), instance_id, start_frame, cfg);
  traj.frames.push_back(state.frame_id);
  while (true) {
    const Distribution* d = scene.classification(state.frame_id, instance_id);
    traj.top1 = d ? d->top1() : 0;
    traj.score = d ? d->score() : 0.0;
    traj.trace.push_back(TraceRecord{state.t, state.frame_id, std::nullopt, state.box, traj.top1,
                                     traj.score});
    if (d) state = check_confidence_stop(state, d->probs, cfg);
    if (state.terminated || state.t >= max_steps) break;
    Eigen::VectorXd x = scene.input(state);
    const Action a = policy.act(x, rng);
    traj.trace.back().action = a;
    traj.inputs.push_back(std::move(x));
    traj.actions.push_back(action_index(a));
    state = step_state(state, a, scene.episodes(), cfg);
    traj.frames.push_back(state.frame_id);
  }
  traj.reason = state.terminated ? state.reason : TerminationReason::kMaxSteps;
  traj.correct = traj.top1 == instance_id && traj.score > 0.0;
  traj.reward = traj.correct ? traj.score : 0.0;
  return traj;
}

void TrainConfig::validate() const {
  if (batch_episodes < 1) throw UserError("episodes per batch (M) must be >= 1");
  if (batches < 0) throw UserError("batch count must be >= 0");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw UserError("learning rate must be positive");
  }
  episode.validate();
}

Eigen::VectorXd reinforce_gradient(const PolicyParams& params, const std::vector<Trajectory>& batch,
                                   bool baseline) {
  Eigen::VectorXd g = Eigen::VectorXd::Zero(params.parameter_count());
  if (batch.empty()) return g;
  double b = 0.0;
  if (baseline) {
    for (const auto& t : batch) b += t.reward;
    b /= static_cast<double>(batch.size());
  }
  for (const auto& t : batch) {
    const double adv = t.reward - b;
    if (adv == 0.0) continue;
    for (std::size_t s = 0; s < t.actions.size(); ++s) {
      g += adv * log_prob_gradient(params, t.inputs[s], t.actions[s]);
    }
  }
  return g / static_cast<double>(batch.size());
}

double reinforce_surrogate(const PolicyParams& params, const std::vector<Trajectory>& batch,
                           bool baseline) {
  if (batch.empty()) return 0.0;
  double b = 0.0;
  if (baseline) {
    for (const auto& t : batch) b += t.reward;
    b /= static_cast<double>(batch.size());
  }
  double total = 0.0;
  for (const auto& t : batch) {
    for (std::size_t s = 0; s < t.actions.size(); ++s) {
      const Eigen::VectorXd logits = policy_logits(params, t.inputs[s]);
      const double m = logits.maxCoeff();
      const double lse = m + std::log((logits.array() - m).exp().sum());
      total += (logits[t.actions[s]] - lse) * (t.reward - b);
    }
  }
  return total / static_cast<double>(batch.size());
}

TrainStats reinforce_update(PolicyParams& params, const std::vector<Trajectory>& batch,
                            const TrainConfig& config) {
  if (batch.empty()) throw UserError("reinforce_update needs at least one trajectory");
  const Eigen::VectorXd g = reinforce_gradient(params, batch, config.baseline);
  if (!g.allFinite()) throw DivergenceError("policy gradient is not finite");
  TrainStats stats;
  stats.gradient_norm = g.norm();
  if (stats.gradient_norm > 0.0) params.set_flat(params.flat() + config.learning_rate * g);
  for (const auto& t : batch) {
    stats.mean_reward += t.reward / static_cast<double>(batch.size());
    stats.accuracy += (t.correct ? 1.0 : 0.0) / static_cast<double>(batch.size());
    const std::size_t len = t.actions.size();
    if (stats.length_histogram.size() <= len) stats.length_histogram.resize(len + 1, 0);
    stats.length_histogram[len]++;
  }
  return stats;
}

PolicyParams train_policy(const std::vector<const ActiveScene*>& scenes, const TrainConfig& config,
                          std::vector<TrainStats>* history) {
  config.validate();
  // Starts grouped per scene and instance, so sampling is uniform at each level.
  std::vector<std::vector<int>> instances;
  std::vector<const ActiveScene*> usable;
  for (const ActiveScene* s : scenes) {
    auto ids = s->episodes().annotated_instances();
    if (ids.empty()) continue;
    usable.push_back(s);
    instances.push_back(std::move(ids));
  }
  if (usable.empty()) throw UserError("no annotated instances in the training scenes");

  PolicyParams params = init_policy(usable.front()->feature_dim() + kBoxInputs, config.init);
  std::vector<Eigen::VectorXd> start_inputs;
  for (const ActiveScene* s : usable) {
    for (int id : s->episodes().annotated_instances()) {
      for (const auto& f : s->episodes().start_frames(id)) {
        start_inputs.push_back(s->input(reset_state(s->episodes(), id, f, config.episode)));
      }
    }
  }
  fit_input_normalization(params, start_inputs);

  const int threads = config.threads > 0 ? config.threads : default_thread_count();
  std::vector<Trajectory> batch(config.batch_episodes);
  for (int b = 0; b < config.batches; ++b) {
    const LearnedPolicy current(params);
    parallel_for(
        batch.size(),
        [&](std::size_t i) {
          std::mt19937_64 rng(mix_seed(config.seed, b, i));
          const std::size_t si = rng() % usable.size();
          const int id = instances[si][rng() % instances[si].size()];
          const auto& starts = usable[si]->episodes().start_frames(id);
          const std::string& start = starts[rng() % starts.size()];
          batch[i] = rollout(current, *usable[si], id, start, config.episode.max_steps,
                             config.episode, rng());
        },
        threads);
    TrainStats stats = reinforce_update(params, batch, config);
    if (history) history->push_back(std::move(stats));
  }
  return params;
}

AccuracyRow evaluate_policy(const Policy& policy, const std::vector<const ActiveScene*>& scenes,
                            const EvalConfig& config) {
  struct Start {
    const ActiveScene* scene;
    int instance;
    const std::string* frame;
  };
  std::vector<Start> starts;
  for (const ActiveScene* s : scenes) {
    for (int id : s->episodes().annotated_instances()) {
      for (const auto& f : s->episodes().start_frames(id)) starts.push_back({s, id, &f});
    }
  }
  if (config.max_starts > 0 && static_cast<std::size_t>(config.max_starts) < starts.size()) {
    std::vector<std::size_t> idx(starts.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::mt19937_64 rng(mix_seed(config.seed, 0xe7a1));
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(config.max_starts);
    std::sort(idx.begin(), idx.end());
    std::vector<Start> kept;
    for (std::size_t i : idx) kept.push_back(starts[i]);
    starts = std::move(kept);
  }
  for (int b : config.budgets) {
    if (b < 0) throw UserError(fmt::format("move budget must be >= 0, got {}", b));
  }

  AccuracyRow row;
  row.method = policy.name();
  row.budgets = config.budgets;
  row.episodes_per_budget = static_cast<int>(starts.size());
  const int threads = config.threads > 0 ? config.threads : default_thread_count();
  const std::size_t nb = config.budgets.size();
  std::vector<char> correct(starts.size() * nb, 0);
  parallel_for(
      starts.size(),
      [&](std::size_t j) {
        for (std::size_t k = 0; k < nb; ++k) {
          const Trajectory t =
              rollout(policy, *starts[j].scene, starts[j].instance, *starts[j].frame,
                      config.budgets[k], config.episode, mix_seed(config.seed, j, config.budgets[k]));
          correct[j * nb + k] = t.correct;
        }
      },
      threads);

  row.accuracy.assign(nb, 0.0);
  std::map<int, std::vector<int>> hits, counts;
  for (std::size_t j = 0; j < starts.size(); ++j) {
    auto& h = hits[starts[j].instance];
    auto& c = counts[starts[j].instance];
    h.resize(nb, 0);
    c.resize(nb, 0);
    for (std::size_t k = 0; k < nb; ++k) {
      row.accuracy[k] += correct[j * nb + k];
      h[k] += correct[j * nb + k];
      c[k] += 1;
    }
  }
  for (auto& a : row.accuracy) a = starts.empty() ? 0.0 : a / static_cast<double>(starts.size());
  for (const auto& [id, h] : hits) {
    auto& v = row.per_instance[id];
    for (std::size_t k = 0; k < nb; ++k) v.push_back(static_cast<double>(h[k]) / counts[id][k]);
  }
  return row;
}

std::string policy_to_text(const PolicyParams& p) {
  std::ostringstream out;
  out << kPolicyMagic << ' ' << kPolicyVersion << '\n';
  out << "input_dim " << p.input_dim << "\nhidden " << p.hidden << "\nactions " << p.actions << '\n';
  write_row(out, "in_mean", p.in_mean);
  write_row(out, "in_scale", p.in_scale);
  write_row(out, "theta", p.flat());
  return out.str();
}

PolicyParams policy_from_text(const std::string& text) {
  std::istringstream in(text);
  auto expect = [&](const char* key) {
    std::string word;
    if (!(in >> word) || word != key) {
      throw ParseError(fmt::format("policy checkpoint: expected '{}'", key));
    }
  };
  auto read_int = [&](const char* key) {
    expect(key);
    long v = 0;
    if (!(in >> v)) throw ParseError(fmt::format("policy checkpoint: bad '{}'", key));
    return v;
  };
  auto read_vec = [&](const char* key, long n) {
    if (read_int(key) != n) throw ParseError(fmt::format("policy checkpoint: '{}' has wrong length", key));
    Eigen::VectorXd v(n);
    for (long i = 0; i < n; ++i) {
      if (!(in >> v[i]) || !std::isfinite(v[i])) {
        throw ParseError(fmt::format("policy checkpoint: bad value {} of '{}'", i, key));
      }
    }
    return v;
  };
  expect(kPolicyMagic);
  if (long version = 0; !(in >> version) || version != kPolicyVersion) {
    throw ParseError("policy checkpoint: unsupported version");
  }
  PolicyInit init;
  const long dim = read_int("input_dim");
  init.hidden = static_cast<int>(read_int("hidden"));
  init.actions = static_cast<int>(read_int("actions"));
  if (dim < 1 || init.hidden < 0 || init.actions < 2) throw ParseError("policy checkpoint: bad shape");
  init.init_range = 0.0;
  PolicyParams p = init_policy(static_cast<int>(dim), init);
  p.in_mean = read_vec("in_mean", dim);
  p.in_scale = read_vec("in_scale", dim);
  p.set_flat(read_vec("theta", p.parameter_count()));
  return p;
}

void save_policy(const PolicyParams& params, const std::filesystem::path& path) {
  write_text(path, policy_to_text(params));
}

PolicyParams load_policy(const std::filesystem::path& path) {
  return policy_from_text(read_text(path));
}

}  // namespace avsim
