#pragma once

// Detection evaluation (AP / mAP), score-vs-camera diagnostics and CSV reports.

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "avsim/annotation.hpp"
#include "avsim/dataset.hpp"
#include "avsim/policy.hpp"

namespace avsim {

struct Detection {
  std::string frame_id;
  int instance_id = 0;
  BoundingBox box;
  double score = 0.0;
};

enum class ApInterpolation { kAllPoints, kElevenPoint };

struct ApResult {
  std::map<int, double> per_instance;  // instances with at least one ground-truth box
  std::map<int, int> ground_truth;     // box count per instance
  std::map<int, int> detections;       // detection count per instance
  double mean_ap = 0.0;
};

/// Detections are ranked by descending score (ties keep input order) and each is
/// matched to the unmatched ground-truth box of its instance and frame with the
/// highest IoU >= iou_threshold; anything else is a false positive. Detections
/// of instances without ground truth are ignored. Throws UserError on a
/// non-finite score or a threshold outside (0, 1].
ApResult average_precision(const std::vector<Detection>& detections,
                           const std::vector<InstanceAnnotation>& ground_truth,
                           double iou_threshold = 0.5,
                           ApInterpolation interpolation = ApInterpolation::kAllPoints,
                           int threads = 0);

/// Keeps ground truth and detections whose boxes are at least min_width x min_height.
std::vector<InstanceAnnotation> filter_min_size(const std::vector<InstanceAnnotation>& boxes,
                                                int min_width, int min_height);
std::vector<Detection> filter_min_size(const std::vector<Detection>& detections, int min_width,
                                       int min_height);

/// Per-frame score of one instance.
struct FrameScore {
  std::string frame_id;
  int instance_id = 0;
  double score = 0.0;
};

struct PositionRecord {
  std::string frame_id;
  double x = 0.0;
  double y = 0.0;
  double yaw_deg = 0.0;
  double score = 0.0;
};

/// One record per frame where the instance is annotated, in manifest frame
/// order. Frames without a score count as score 0 (not detected). Throws
/// UserError for an instance the manifest does not list.
std::vector<PositionRecord> score_position_map(const SceneManifest& scene, int instance_id,
                                               const std::vector<FrameScore>& scores);

struct SensitivityRecord {
  int instance_id = 0;
  std::string frame_a;
  std::string frame_b;
  double distance_m = 0.0;
  double abs_score_diff = 0.0;
};

/// Every unordered pair of scored frames per instance, with camera distance and
/// absolute score difference. Instances whose scores are all 0 are skipped.
/// Throws UserError for frames missing from the manifest or duplicate scores.
std::vector<SensitivityRecord> score_distance_sensitivity(const SceneManifest& scene,
                                                          const std::vector<FrameScore>& scores);

/// Parsed or generated CSV with a header row.
struct CsvTable {
  std::string name;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  /// Column index by name; throws ParseError when absent.
  std::size_t column(const std::string& name) const;
};

std::string format_number(double v);
std::string csv_to_text(const CsvTable& table);
/// Throws ParseError on ragged rows or an empty document.
CsvTable csv_from_text(const std::string& text, const std::string& name = "");
void write_csv(const std::filesystem::path& path, const CsvTable& table);
CsvTable read_csv(const std::filesystem::path& path);

/// frame_id, instance_id, xmin, ymin, xmax, ymax, score
std::vector<Detection> detections_from_csv(const CsvTable& table);
CsvTable detections_to_csv(const std::vector<Detection>& detections);
/// frame_id, instance_id, score
std::vector<FrameScore> scores_from_csv(const CsvTable& table);
CsvTable scores_to_csv(const std::vector<FrameScore>& scores);

CsvTable ap_table(const ApResult& result);
CsvTable position_table(int instance_id, const std::vector<PositionRecord>& records);
CsvTable sensitivity_table(const std::vector<SensitivityRecord>& records);
/// Methods as rows, move budgets as columns.
CsvTable accuracy_table(const std::vector<AccuracyRow>& rows);

/// Writes each table as <name>.csv plus index.json listing them sorted by name.
/// Throws IoError when the directory cannot be written and UserError on
/// duplicate or empty table names.
std::vector<std::filesystem::path> emit_report(const std::vector<CsvTable>& tables,
                                               const std::filesystem::path& out_dir);

}  // namespace avsim
