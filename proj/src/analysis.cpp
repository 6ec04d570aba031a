#include "avsim/analysis.hpp"

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdlib>
#include <numeric>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>

#include "avsim/error.hpp"
#include "avsim/parallel.hpp"

namespace avsim {

namespace {

double interpolated_ap(const std::vector<double>& precision, const std::vector<double>& recall,
                       ApInterpolation mode) {
  if (precision.empty()) return 0.0;
  if (mode == ApInterpolation::kElevenPoint) {
    double sum = 0.0;
    for (int i = 0; i <= 10; ++i) {
      const double r = i / 10.0;
      double best = 0.0;
      for (std::size_t k = 0; k < recall.size(); ++k) {
        if (recall[k] >= r - 1e-12) best = std::max(best, precision[k]);
      }
      sum += best;
    }
    return sum / 11.0;
  }
  // Precision envelope, then area under the step curve at each recall change.
  std::vector<double> env(precision);
  for (std::size_t k = env.size() - 1; k > 0; --k) env[k - 1] = std::max(env[k - 1], env[k]);
  double ap = 0.0;
  double prev_recall = 0.0;
  for (std::size_t k = 0; k < recall.size(); ++k) {
    if (recall[k] > prev_recall) {
      ap += (recall[k] - prev_recall) * env[k];
      prev_recall = recall[k];
    }
  }
  return ap;
}

double instance_ap(const std::vector<const Detection*>& dets,
                   const std::vector<const InstanceAnnotation*>& gts, double iou_threshold,
                   ApInterpolation mode) {
  std::map<std::string, std::vector<std::pair<const BoundingBox*, bool>>> by_frame;
  for (const auto* g : gts) by_frame[g->frame_id].push_back({&g->box, false});

  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return dets[a]->score > dets[b]->score; });

  std::vector<double> precision, recall;
  int tp = 0;
  int seen = 0;
  for (std::size_t i : order) {
    ++seen;
    auto it = by_frame.find(dets[i]->frame_id);
    if (it != by_frame.end()) {
      double best = -1.0;
      std::pair<const BoundingBox*, bool>* match = nullptr;
      for (auto& cand : it->second) {
        if (cand.second) continue;
        const double o = iou(dets[i]->box, *cand.first);
        if (o >= iou_threshold && o > best) {
          best = o;
          match = &cand;
        }
      }
      if (match) {
        match->second = true;
        ++tp;
      }
    }
    precision.push_back(static_cast<double>(tp) / seen);
    recall.push_back(static_cast<double>(tp) / static_cast<double>(gts.size()));
  }
  return interpolated_ap(precision, recall, mode);
}

double parse_double(const std::string& s, const std::string& what) {
  errno = 0;
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size() || errno == ERANGE) {
    throw ParseError(fmt::format("{}: '{}' is not a number", what, s));
  }
  return v;
}

int parse_int(const std::string& s, const std::string& what) {
  errno = 0;
  char* end = nullptr;
  const long v = std::strtol(s.c_str(), &end, 10);
  if (s.empty() || end != s.c_str() + s.size() || errno == ERANGE || v < INT32_MIN ||
      v > INT32_MAX) {
    throw ParseError(fmt::format("{}: '{}' is not an integer", what, s));
  }
  return static_cast<int>(v);
}

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

ApResult average_precision(const std::vector<Detection>& detections,
                           const std::vector<InstanceAnnotation>& ground_truth,
                           double iou_threshold, ApInterpolation interpolation, int threads) {
  if (!(iou_threshold > 0.0 && iou_threshold <= 1.0)) {
    throw UserError(fmt::format("iou threshold must be in (0, 1], got {}", iou_threshold));
  }
  std::map<int, std::vector<const InstanceAnnotation*>> gts;
  for (const auto& g : ground_truth) gts[g.instance_id].push_back(&g);
  std::map<int, std::vector<const Detection*>> dets;
  for (std::size_t i = 0; i < detections.size(); ++i) {
    if (!std::isfinite(detections[i].score)) {
      throw UserError(fmt::format("detection {} has a non-finite score", i));
    }
    dets[detections[i].instance_id].push_back(&detections[i]);
  }

  ApResult result;
  std::vector<int> ids;
  for (const auto& [id, list] : gts) {
    ids.push_back(id);
    result.ground_truth[id] = static_cast<int>(list.size());
    result.detections[id] = dets.count(id) ? static_cast<int>(dets[id].size()) : 0;
  }
  std::vector<double> ap(ids.size(), 0.0);
  parallel_for(
      ids.size(),
      [&](std::size_t k) {
        auto it = dets.find(ids[k]);
        if (it == dets.end()) return;
        ap[k] = instance_ap(it->second, gts.at(ids[k]), iou_threshold, interpolation);
      },
      threads > 0 ? threads : default_thread_count());
  for (std::size_t k = 0; k < ids.size(); ++k) {
    result.per_instance[ids[k]] = ap[k];
    result.mean_ap += ap[k] / static_cast<double>(ids.size());
  }
  return result;
}

std::vector<InstanceAnnotation> filter_min_size(const std::vector<InstanceAnnotation>& boxes,
                                                int min_width, int min_height) {
  std::vector<InstanceAnnotation> out;
  for (const auto& b : boxes) {
    if (b.box.width() >= min_width && b.box.height() >= min_height) out.push_back(b);
  }
  return out;
}

std::vector<Detection> filter_min_size(const std::vector<Detection>& detections, int min_width,
                                       int min_height) {
  std::vector<Detection> out;
  for (const auto& d : detections) {
    if (d.box.width() >= min_width && d.box.height() >= min_height) out.push_back(d);
  }
  return out;
}

std::vector<PositionRecord> score_position_map(const SceneManifest& scene, int instance_id,
                                               const std::vector<FrameScore>& scores) {
  const bool known = std::any_of(scene.instances.begin(), scene.instances.end(),
                                 [&](const InstanceRecord& r) { return r.instance_id == instance_id; });
  if (!known) throw UserError(fmt::format("unknown instance {}", instance_id));
  std::map<std::string, double> score_of;
  for (const auto& s : scores) {
    if (s.instance_id == instance_id) score_of[s.frame_id] = s.score;
  }
  std::set<std::string> annotated;
  for (const auto& a : scene.annotations) {
    if (a.instance_id == instance_id) annotated.insert(a.frame_id);
  }
  std::vector<PositionRecord> out;
  for (const auto& f : scene.frames) {
    if (!annotated.count(f.frame_id)) continue;
    auto it = score_of.find(f.frame_id);
    out.push_back({f.frame_id, f.position.x(), f.position.y(), f.yaw_degrees(),
                   it == score_of.end() ? 0.0 : it->second});
  }
  return out;
}

std::vector<SensitivityRecord> score_distance_sensitivity(const SceneManifest& scene,
                                                          const std::vector<FrameScore>& scores) {
  std::map<std::string, const ScenePose*> poses;
  for (const auto& f : scene.frames) poses[f.frame_id] = &f;
  std::map<int, std::vector<const FrameScore*>> by_instance;
  std::set<std::pair<int, std::string>> seen;
  for (const auto& s : scores) {
    if (!poses.count(s.frame_id)) throw UserError(fmt::format("score for unknown frame '{}'", s.frame_id));
    if (!seen.insert({s.instance_id, s.frame_id}).second) {
      throw UserError(fmt::format("duplicate score for instance {} in frame '{}'", s.instance_id,
                                  s.frame_id));
    }
    by_instance[s.instance_id].push_back(&s);
  }
  std::vector<SensitivityRecord> out;
  for (const auto& [id, list] : by_instance) {
    if (std::none_of(list.begin(), list.end(), [](const FrameScore* s) { return s->score > 0.0; })) {
      continue;
    }
    for (std::size_t i = 0; i < list.size(); ++i) {
      for (std::size_t j = i + 1; j < list.size(); ++j) {
        const Vec3 d = poses[list[i]->frame_id]->position - poses[list[j]->frame_id]->position;
        out.push_back({id, list[i]->frame_id, list[j]->frame_id, d.norm(),
                       std::abs(list[i]->score - list[j]->score)});
      }
    }
  }
  return out;
}

std::size_t CsvTable::column(const std::string& key) const {
  auto it = std::find(header.begin(), header.end(), key);
  if (it == header.end()) {
    throw ParseError(fmt::format("csv '{}': missing column '{}'", name, key));
  }
  return static_cast<std::size_t>(it - header.begin());
}

std::string format_number(double v) { return fmt::format("{:.9g}", v); }

std::string csv_to_text(const CsvTable& table) {
  auto line = [](const std::vector<std::string>& cells) {
    std::string s;
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (cells[i].find_first_of(",\n\r") != std::string::npos) {
        throw UserError(fmt::format("csv cell '{}' contains a separator", cells[i]));
      }
      if (i) s += ',';
      s += cells[i];
    }
    return s + '\n';
  };
  std::string out = line(table.header);
  for (const auto& r : table.rows) {
    if (r.size() != table.header.size()) {
      throw UserError(fmt::format("csv '{}': row has {} cells, header {}", table.name, r.size(),
                                  table.header.size()));
    }
    out += line(r);
  }
  return out;
}

CsvTable csv_from_text(const std::string& text, const std::string& name) {
  CsvTable t;
  t.name = name;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto cells = split_line(line);
    if (t.header.empty()) {
      t.header = std::move(cells);
      continue;
    }
    if (cells.size() != t.header.size()) {
      throw ParseError(fmt::format("csv '{}' line {}: {} cells, header has {}", name, lineno,
                                   cells.size(), t.header.size()));
    }
    t.rows.push_back(std::move(cells));
  }
  if (t.header.empty()) throw ParseError(fmt::format("csv '{}' is empty", name));
  return t;
}

void write_csv(const std::filesystem::path& path, const CsvTable& table) {
  write_text(path, csv_to_text(table));
}

CsvTable read_csv(const std::filesystem::path& path) {
  return csv_from_text(read_text(path), path.string());
}

std::vector<Detection> detections_from_csv(const CsvTable& t) {
  const std::size_t cf = t.column("frame_id"), ci = t.column("instance_id"),
                    c0 = t.column("xmin"), c1 = t.column("ymin"), c2 = t.column("xmax"),
                    c3 = t.column("ymax"), cs = t.column("score");
  std::vector<Detection> out;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    const std::string where = fmt::format("detection row {}", r);
    Detection d;
    d.frame_id = row[cf];
    d.instance_id = parse_int(row[ci], where);
    d.box = BoundingBox{parse_int(row[c0], where), parse_int(row[c1], where),
                        parse_int(row[c2], where), parse_int(row[c3], where), d.instance_id, 0};
    d.score = parse_double(row[cs], where);
    if (!std::isfinite(d.score)) throw ParseError(where + ": score is not finite");
    out.push_back(std::move(d));
  }
  return out;
}

CsvTable detections_to_csv(const std::vector<Detection>& detections) {
  CsvTable t{"detections", {"frame_id", "instance_id", "xmin", "ymin", "xmax", "ymax", "score"}, {}};
  for (const auto& d : detections) {
    t.rows.push_back({d.frame_id, std::to_string(d.instance_id), std::to_string(d.box.xmin),
                      std::to_string(d.box.ymin), std::to_string(d.box.xmax),
                      std::to_string(d.box.ymax), format_number(d.score)});
  }
  return t;
}

std::vector<FrameScore> scores_from_csv(const CsvTable& t) {
  const std::size_t cf = t.column("frame_id"), ci = t.column("instance_id"),
                    cs = t.column("score");
  std::vector<FrameScore> out;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const std::string where = fmt::format("score row {}", r);
    FrameScore s{t.rows[r][cf], parse_int(t.rows[r][ci], where), parse_double(t.rows[r][cs], where)};
    if (!std::isfinite(s.score)) throw ParseError(where + ": score is not finite");
    out.push_back(std::move(s));
  }
  return out;
}

CsvTable scores_to_csv(const std::vector<FrameScore>& scores) {
  CsvTable t{"scores", {"frame_id", "instance_id", "score"}, {}};
  for (const auto& s : scores) {
    t.rows.push_back({s.frame_id, std::to_string(s.instance_id), format_number(s.score)});
  }
  return t;
}

CsvTable ap_table(const ApResult& result) {
  CsvTable t{"average_precision", {"instance_id", "ground_truth", "detections", "ap"}, {}};
  for (const auto& [id, ap] : result.per_instance) {
    t.rows.push_back({std::to_string(id), std::to_string(result.ground_truth.at(id)),
                      std::to_string(result.detections.at(id)), format_number(ap)});
  }
  t.rows.push_back({"mean", "", "", format_number(result.mean_ap)});
  return t;
}

CsvTable position_table(int instance_id, const std::vector<PositionRecord>& records) {
  CsvTable t{fmt::format("score_position_{}", instance_id),
             {"frame_id", "x", "y", "yaw_deg", "score"},
             {}};
  for (const auto& r : records) {
    t.rows.push_back({r.frame_id, format_number(r.x), format_number(r.y), format_number(r.yaw_deg),
                      format_number(r.score)});
  }
  return t;
}

CsvTable sensitivity_table(const std::vector<SensitivityRecord>& records) {
  CsvTable t{"score_sensitivity",
             {"instance_id", "frame_a", "frame_b", "distance_m", "abs_score_diff"},
             {}};
  for (const auto& r : records) {
    t.rows.push_back({std::to_string(r.instance_id), r.frame_a, r.frame_b,
                      format_number(r.distance_m), format_number(r.abs_score_diff)});
  }
  return t;
}

CsvTable accuracy_table(const std::vector<AccuracyRow>& rows) {
  CsvTable t{"accuracy", {"method"}, {}};
  if (rows.empty()) return t;
  for (int b : rows.front().budgets) t.header.push_back(std::to_string(b));
  for (const auto& r : rows) {
    if (r.budgets != rows.front().budgets) {
      throw UserError(fmt::format("method '{}' was evaluated at different budgets", r.method));
    }
    std::vector<std::string> cells = {r.method};
    for (double a : r.accuracy) cells.push_back(format_number(a));
    t.rows.push_back(std::move(cells));
  }
  return t;
}

std::vector<std::filesystem::path> emit_report(const std::vector<CsvTable>& tables,
                                               const std::filesystem::path& out_dir) {
  std::vector<const CsvTable*> sorted;
  std::set<std::string> names;
  for (const auto& t : tables) {
    if (t.name.empty() || t.name.find_first_of("/\\") != std::string::npos) {
      throw UserError(fmt::format("invalid report table name '{}'", t.name));
    }
    if (!names.insert(t.name).second) throw UserError(fmt::format("duplicate table '{}'", t.name));
    sorted.push_back(&t);
  }
  std::sort(sorted.begin(), sorted.end(),
            [](const CsvTable* a, const CsvTable* b) { return a->name < b->name; });

  std::vector<std::filesystem::path> written;
  nlohmann::ordered_json index;
  index["artifacts"] = nlohmann::ordered_json::array();
  for (const CsvTable* t : sorted) {
    const std::string file = t->name + ".csv";
    write_csv(out_dir / file, *t);
    written.push_back(out_dir / file);
    index["artifacts"].push_back({{"name", t->name},
                                  {"file", file},
                                  {"columns", t->header},
                                  {"rows", t->rows.size()}});
  }
  write_text(out_dir / "index.json", index.dump(2) + "\n");
  written.push_back(out_dir / "index.json");
  return written;
}

}  // namespace avsim
