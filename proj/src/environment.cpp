#include "avsim/environment.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include <fmt/format.h>
#include <json.hpp>

#include "avsim/error.hpp"

namespace avsim {

namespace {

constexpr double kNormTolerance = 1e-6;

const std::vector<std::string> kNoFrames;

nlohmann::ordered_json box_json(const std::optional<BoundingBox>& box) {
  if (!box) return nullptr;
  return nlohmann::ordered_json::array({box->xmin, box->ymin, box->xmax, box->ymax});
}

}  // namespace

void EpisodeConfig::validate() const {
  if (max_steps < 1) throw UserError(fmt::format("max_steps must be >= 1, got {}", max_steps));
  if (!(confidence_threshold > 0.0 && confidence_threshold <= 1.0)) {
    throw UserError(
        fmt::format("confidence threshold must be in (0, 1], got {}", confidence_threshold));
  }
}

std::string_view termination_name(TerminationReason reason) {
  switch (reason) {
    case TerminationReason::kNone:
      return "none";
    case TerminationReason::kMaxSteps:
      return "max-steps";
    case TerminationReason::kConfidence:
      return "confidence";
    case TerminationReason::kBlocked:
      return "blocked";
  }
  return "none";
}

EpisodeScene::EpisodeScene(const FrameSource& scene) : scene_(&scene) {
  const SceneManifest& m = scene.manifest();
  if (!m.move_graph) {
    throw UserError(fmt::format("scene {} has no move graph; run build-graph first", m.scene_id));
  }
  if (!m.frames.empty()) {
    width_ = m.frames.front().intrinsics.width;
    height_ = m.frames.front().intrinsics.height;
  }
  std::map<std::string, std::size_t> order;
  for (std::size_t i = 0; i < m.frames.size(); ++i) order[m.frames[i].frame_id] = i;
  std::map<int, std::vector<std::size_t>> starts;
  for (const InstanceAnnotation& a : m.annotations) {
    boxes_[{a.frame_id, a.instance_id}] = a.box;
    starts[a.instance_id].push_back(order.at(a.frame_id));
  }
  for (auto& [id, idx] : starts) {
    std::sort(idx.begin(), idx.end());
    idx.erase(std::unique(idx.begin(), idx.end()), idx.end());
    auto& frames = starts_[id];
    for (std::size_t i : idx) frames.push_back(m.frames[i].frame_id);
  }
}

std::optional<BoundingBox> EpisodeScene::box(const std::string& frame_id, int instance_id) const {
  auto it = boxes_.find({frame_id, instance_id});
  if (it == boxes_.end()) return std::nullopt;
  return it->second;
}

const std::vector<std::string>& EpisodeScene::start_frames(int instance_id) const {
  auto it = starts_.find(instance_id);
  return it == starts_.end() ? kNoFrames : it->second;
}

std::vector<int> EpisodeScene::annotated_instances() const {
  std::vector<int> ids;
  for (const auto& [id, frames] : starts_) ids.push_back(id);
  return ids;
}

EpisodeState reset_state(const EpisodeScene& scene, int instance_id,
                         const std::string& start_frame, const EpisodeConfig& config) {
  config.validate();
  if (scene.start_frames(instance_id).empty()) {
    throw UserError(fmt::format("no valid start: instance {} is never visible", instance_id));
  }
  auto box = scene.box(start_frame, instance_id);
  if (!box) {
    throw UserError(
        fmt::format("instance {} is not annotated in start frame {}", instance_id, start_frame));
  }
  EpisodeState s;
  s.frame_id = start_frame;
  s.instance_id = instance_id;
  s.box = box;
  return s;
}

EpisodeState reset_state(const EpisodeScene& scene, int instance_id, std::uint64_t seed,
                         const EpisodeConfig& config) {
  const auto& frames = scene.start_frames(instance_id);
  if (frames.empty()) {
    throw UserError(fmt::format("no valid start: instance {} is never visible", instance_id));
  }
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, frames.size() - 1);
  return reset_state(scene, instance_id, frames[pick(rng)], config);
}

EpisodeState step_state(const EpisodeState& state, Action action, const EpisodeScene& scene,
                        const EpisodeConfig& config) {
  if (state.terminated) {
    throw ContractError(fmt::format("step after termination ({}) at t={}",
                                    termination_name(state.reason), state.t));
  }
  EpisodeState s = state;
  s.t += 1;
  if (auto next = scene.graph().next(state.frame_id, action)) {
    s.frame_id = *next;
  } else if (config.blocked == BlockedPolicy::kTerminate) {
    s.terminated = true;
    s.reason = TerminationReason::kBlocked;
  }
  s.box = scene.box(s.frame_id, s.instance_id);
  if (!s.terminated && s.t >= config.max_steps) {
    s.terminated = true;
    s.reason = TerminationReason::kMaxSteps;
  }
  return s;
}

Observation observe(const EpisodeScene& scene, const EpisodeState& state) {
  return Observation{scene.source().rgb(state.frame_id), state.box, state.frame_id};
}

std::pair<EpisodeState, Observation> reset(const EpisodeScene& scene, int instance_id,
                                           const std::string& start_frame,
                                           const EpisodeConfig& config) {
  EpisodeState s = reset_state(scene, instance_id, start_frame, config);
  Observation o = observe(scene, s);
  return {std::move(s), std::move(o)};
}

std::pair<EpisodeState, Observation> reset(const EpisodeScene& scene, int instance_id,
                                           std::uint64_t seed, const EpisodeConfig& config) {
  EpisodeState s = reset_state(scene, instance_id, seed, config);
  Observation o = observe(scene, s);
  return {std::move(s), std::move(o)};
}

std::pair<EpisodeState, Observation> step(const EpisodeState& state, Action action,
                                          const EpisodeScene& scene, const EpisodeConfig& config) {
  EpisodeState s = step_state(state, action, scene, config);
  Observation o = observe(scene, s);
  return {std::move(s), std::move(o)};
}

EpisodeState check_confidence_stop(const EpisodeState& state,
                                   std::span<const double> probabilities,
                                   const EpisodeConfig& config) {
  if (probabilities.empty()) throw ContractError("classifier output is empty");
  double sum = 0.0, best = 0.0;
  for (double p : probabilities) {
    if (!(p >= 0.0)) throw ContractError(fmt::format("classifier output has entry {}", p));
    sum += p;
    best = std::max(best, p);
  }
  if (std::abs(sum - 1.0) > kNormTolerance) {
    throw ContractError(fmt::format("classifier output sums to {:.9g}, not 1", sum));
  }
  EpisodeState s = state;
  if (!s.terminated && best > config.confidence_threshold) {
    s.terminated = true;
    s.reason = TerminationReason::kConfidence;
  }
  return s;
}

std::string trace_record_json(const TraceRecord& r) {
  nlohmann::ordered_json j;
  j["t"] = r.t;
  j["frame_id"] = r.frame_id;
  j["action"] = r.action ? nlohmann::ordered_json(std::string(action_name(*r.action)))
                         : nlohmann::ordered_json(nullptr);
  j["box"] = box_json(r.box);
  j["classifier_top1"] = r.classifier_top1;
  j["score"] = r.score;
  return j.dump();
}

std::string trace_to_jsonl(const std::vector<TraceRecord>& trace) {
  std::string out;
  for (const TraceRecord& r : trace) {
    out += trace_record_json(r);
    out += '\n';
  }
  return out;
}

}  // namespace avsim
