#pragma once

// Episodic agent-environment interface over a labeled scene with a move graph.

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "avsim/dataset.hpp"

namespace avsim {

enum class BlockedPolicy { kStay, kTerminate };

struct EpisodeConfig {
  int max_steps = 5;
  double confidence_threshold = 0.9;
  BlockedPolicy blocked = BlockedPolicy::kStay;

  void validate() const;
};

enum class TerminationReason { kNone, kMaxSteps, kConfidence, kBlocked };

std::string_view termination_name(TerminationReason reason);

struct EpisodeState {
  std::string frame_id;
  int instance_id = 0;
  std::optional<BoundingBox> box;  // absent when the target is not annotated here
  int t = 0;
  bool terminated = false;
  TerminationReason reason = TerminationReason::kNone;

  bool operator==(const EpisodeState&) const = default;
};

struct Observation {
  RgbImage rgb;
  std::optional<BoundingBox> box;
  std::string frame_id;
};

/// Read-only lookup tables over a scene: annotations by (frame, instance),
/// start frames per instance and the move graph. Safe to share across threads.
class EpisodeScene {
 public:
  /// Throws UserError when the scene has no move graph.
  explicit EpisodeScene(const FrameSource& scene);

  const FrameSource& source() const { return *scene_; }
  const MoveGraph& graph() const { return *scene_->manifest().move_graph; }

  std::optional<BoundingBox> box(const std::string& frame_id, int instance_id) const;
  /// Frames where the instance is annotated, in manifest order.
  const std::vector<std::string>& start_frames(int instance_id) const;
  /// Instances with at least one annotation, ascending.
  std::vector<int> annotated_instances() const;

  int image_width() const { return width_; }
  int image_height() const { return height_; }

 private:
  const FrameSource* scene_;
  std::map<std::pair<std::string, int>, BoundingBox> boxes_;
  std::map<int, std::vector<std::string>> starts_;
  int width_ = 0;
  int height_ = 0;
};

/// State after starting at `start_frame`. Throws UserError when the instance is
/// never annotated (no valid start) or not annotated in `start_frame`.
EpisodeState reset_state(const EpisodeScene& scene, int instance_id,
                         const std::string& start_frame, const EpisodeConfig& config = {});

/// Start frame drawn uniformly from the instance's annotated frames.
EpisodeState reset_state(const EpisodeScene& scene, int instance_id, std::uint64_t seed,
                         const EpisodeConfig& config = {});

/// Throws ContractError after termination.
EpisodeState step_state(const EpisodeState& state, Action action, const EpisodeScene& scene,
                        const EpisodeConfig& config = {});

Observation observe(const EpisodeScene& scene, const EpisodeState& state);

std::pair<EpisodeState, Observation> reset(const EpisodeScene& scene, int instance_id,
                                           const std::string& start_frame,
                                           const EpisodeConfig& config = {});
std::pair<EpisodeState, Observation> reset(const EpisodeScene& scene, int instance_id,
                                           std::uint64_t seed, const EpisodeConfig& config = {});
std::pair<EpisodeState, Observation> step(const EpisodeState& state, Action action,
                                          const EpisodeScene& scene,
                                          const EpisodeConfig& config = {});

/// Terminates with reason confidence iff max(probabilities) > threshold.
/// Throws ContractError when the input is not a distribution (negative entry or
/// sum off by more than 1e-6).
EpisodeState check_confidence_stop(const EpisodeState& state,
                                   std::span<const double> probabilities,
                                   const EpisodeConfig& config = {});

/// One line of an exported episode trace.
struct TraceRecord {
  int t = 0;
  std::string frame_id;
  std::optional<Action> action;  // action taken from this frame, absent at the end
  std::optional<BoundingBox> box;
  int classifier_top1 = 0;
  double score = 0.0;
};

std::string trace_record_json(const TraceRecord& record);
std::string trace_to_jsonl(const std::vector<TraceRecord>& trace);

}  // namespace avsim
