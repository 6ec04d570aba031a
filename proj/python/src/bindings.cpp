// Python bindings for the native primary operations. Arrays are copied out as
// numpy arrays; native errors surface as avsim.*Error exceptions.

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "avsim/analysis.hpp"
#include "avsim/benchmark.hpp"
#include "avsim/dataset.hpp"
#include "avsim/depth_fusion.hpp"
#include "avsim/environment.hpp"
#include "avsim/error.hpp"
#include "avsim/labels.hpp"
#include "avsim/move_graph.hpp"
#include "avsim/synth.hpp"

namespace py = pybind11;
using namespace py::literals;

namespace {

using BoxTuple = std::tuple<int, int, int, int>;

avsim::BoundingBox to_box(const BoxTuple& t) {
  return avsim::BoundingBox{std::get<0>(t), std::get<1>(t), std::get<2>(t), std::get<3>(t), 0, 0};
}

py::object from_box(const std::optional<avsim::BoundingBox>& b) {
  if (!b) return py::none();
  return py::make_tuple(b->xmin, b->ymin, b->xmax, b->ymax);
}

template <typename T>
py::array_t<T> to_array(const avsim::Image<T>& img) {
  std::vector<py::ssize_t> shape = {img.height(), img.width()};
  if (img.channels() > 1) shape.push_back(img.channels());
  py::array_t<T> out(shape);
  std::copy(img.data().begin(), img.data().end(), out.mutable_data());
  return out;
}

// Scene handle shared by environments built from it.
struct Scene {
  std::shared_ptr<avsim::DiskScene> disk;

  const avsim::SceneManifest& manifest() const { return disk->manifest(); }
};

py::dict annotation_dict(const avsim::InstanceAnnotation& a) {
  return py::dict("frame_id"_a = a.frame_id, "instance_id"_a = a.instance_id,
                  "box"_a = from_box(a.box), "visible_point_count"_a = a.visible_point_count,
                  "difficulty"_a = a.difficulty);
}

struct Environment {
  Scene scene;
  std::unique_ptr<avsim::EpisodeScene> episodes;
  avsim::EpisodeConfig config;
};

avsim::Action action_arg(int index) { return avsim::action_from_index(index); }

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Native core of the avsim active-vision simulator";

  static py::exception<avsim::Error> base(m, "AvsimError", PyExc_RuntimeError);
  static py::exception<avsim::UserError> user(m, "UserError", base.ptr());
  static py::exception<avsim::IntegrityError> integrity(m, "IntegrityError", base.ptr());
  static py::exception<avsim::LoadError> load(m, "LoadError", integrity.ptr());
  static py::exception<avsim::ParseError> parse(m, "ParseError", integrity.ptr());
  static py::exception<avsim::IoError> io(m, "IoError", base.ptr());
  static py::exception<avsim::DivergenceError> divergence(m, "DivergenceError", base.ptr());
  static py::exception<avsim::ContractError> contract(m, "ContractError", base.ptr());
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const avsim::LoadError& e) {
      PyErr_SetString(load.ptr(), e.what());
    } catch (const avsim::ParseError& e) {
      PyErr_SetString(parse.ptr(), e.what());
    } catch (const avsim::IntegrityError& e) {
      PyErr_SetString(integrity.ptr(), e.what());
    } catch (const avsim::IoError& e) {
      PyErr_SetString(io.ptr(), e.what());
    } catch (const avsim::ContractError& e) {
      PyErr_SetString(contract.ptr(), e.what());
    } catch (const avsim::UserError& e) {
      PyErr_SetString(user.ptr(), e.what());
    } catch (const avsim::DivergenceError& e) {
      PyErr_SetString(divergence.ptr(), e.what());
    } catch (const avsim::Error& e) {
      PyErr_SetString(base.ptr(), e.what());
    }
  });

  py::list actions;
  for (avsim::Action a : avsim::kAllActions) actions.append(std::string(avsim::action_name(a)));
  m.attr("ACTIONS") = actions;

  m.def(
      "iou", [](const BoxTuple& a, const BoxTuple& b) { return avsim::iou(to_box(a), to_box(b)); },
      "a"_a, "b"_a, "Intersection over union of two (xmin, ymin, xmax, ymax) boxes.");

  py::class_<Scene>(m, "Scene")
      .def_property_readonly("scene_id", [](const Scene& s) { return s.manifest().scene_id; })
      .def_property_readonly("frame_ids", [](const Scene& s) { return s.manifest().frame_ids(); })
      .def_property_readonly("instance_ids",
                             [](const Scene& s) {
                               std::vector<int> ids;
                               for (const auto& r : s.manifest().instances) ids.push_back(r.instance_id);
                               return ids;
                             })
      .def_property_readonly("has_move_graph",
                             [](const Scene& s) { return s.manifest().move_graph.has_value(); })
      .def("rgb", [](const Scene& s, const std::string& f) { return to_array(s.disk->rgb(f)); }, "frame_id"_a)
      .def("depth", [](const Scene& s, const std::string& f) { return to_array(s.disk->depth(f)); },
           "frame_id"_a, "Depth in millimeters, 0 = missing.")
      .def(
          "pose",
          [](const Scene& s, const std::string& f) {
            const avsim::ScenePose& p = s.disk->pose(f);
            return py::dict("position"_a = py::make_tuple(p.position.x(), p.position.y(), p.position.z()),
                            "orientation"_a = py::make_tuple(p.orientation.w(), p.orientation.x(),
                                                             p.orientation.y(), p.orientation.z()),
                            "yaw_degrees"_a = p.yaw_degrees());
          },
          "frame_id"_a, "Position and world-from-camera quaternion (w, x, y, z).")
      .def("annotations",
           [](const Scene& s) {
             py::list out;
             for (const auto& a : s.manifest().annotations) out.append(annotation_dict(a));
             return out;
           })
      .def(
          "move",
          [](const Scene& s, const std::string& f, int action) -> std::optional<std::string> {
            if (!s.manifest().move_graph) throw avsim::UserError("scene has no move graph");
            return s.manifest().move_graph->next(f, action_arg(action));
          },
          "frame_id"_a, "action"_a, "Successor frame for an action index, or None.")
      .def(
          "build_move_graph",
          [](Scene& s, double step, double rot) {
            avsim::MoveGraphParams p;
            p.target_step = step;
            p.rotation_step = rot;
            auto& m = s.disk->mutable_manifest();
            m.move_graph = avsim::build_move_graph(m.frames, p);
            return m.move_graph->edge_count();
          },
          "step"_a = 0.30, "rot"_a = 30.0, "Rebuilds the in-memory move graph; returns the edge count.")
      .def(
          "fuse_depth",
          [](const Scene& s, const std::string& f, int k) {
            avsim::FusionParams p;
            p.k_neighbors = k;
            return to_array(avsim::fuse_depth(*s.disk, f, p));
          },
          "frame_id"_a, "k"_a = 6)
      .def(
          "label",
          [](const Scene& s, double eps, int min_points) {
            avsim::LabelParams p;
            p.occlusion_slack = eps;
            p.min_visible_points = min_points;
            const auto& frames = s.manifest().frames;
            const auto r = avsim::label_scene(
                *s.disk, [&](std::size_t i) { return s.disk->depth(frames[i].frame_id); }, p);
            py::list out;
            for (const auto& a : r.annotations) out.append(annotation_dict(a));
            s.disk->mutable_manifest().annotations = r.annotations;
            return out;
          },
          "eps"_a = 0.05, "min_points"_a = 20,
          "Projects instance clouds using the raw depth and replaces the in-memory annotations.");

  m.def(
      "generate_scene",
      [](const std::string& spec_json, const std::string& out, std::optional<std::uint64_t> seed) {
        const avsim::SynthSceneSpec spec = avsim::load_scene_spec(spec_json, seed);
        const avsim::SynthScene s = avsim::generate_scene(spec);
        avsim::save_scene(s.scene.manifest(), s.scene, out);
        return s.scene.manifest().frames.size();
      },
      "spec_json"_a, "out_dir"_a, "seed"_a = py::none(),
      "Renders a synthetic scene from spec JSON into out_dir; returns the frame count.");

  m.def(
      "load_scene",
      [](const std::string& root) { return Scene{std::shared_ptr<avsim::DiskScene>(avsim::load_scene(root))}; },
      "root"_a);

  m.def(
      "average_precision",
      [](const std::vector<std::tuple<std::string, int, int, int, int, int, double>>& dets,
         const std::vector<std::tuple<std::string, int, int, int, int, int>>& gts, double threshold,
         bool eleven_point) {
        std::vector<avsim::Detection> d;
        for (const auto& [f, id, x0, y0, x1, y1, s] : dets) {
          d.push_back(avsim::Detection{f, id, avsim::BoundingBox{x0, y0, x1, y1, id, 0}, s});
        }
        std::vector<avsim::InstanceAnnotation> g;
        for (const auto& [f, id, x0, y0, x1, y1] : gts) {
          avsim::InstanceAnnotation a;
          a.frame_id = f;
          a.instance_id = id;
          a.box = avsim::BoundingBox{x0, y0, x1, y1, id, 0};
          g.push_back(a);
        }
        const auto r = avsim::average_precision(
            d, g, threshold,
            eleven_point ? avsim::ApInterpolation::kElevenPoint : avsim::ApInterpolation::kAllPoints);
        return py::make_tuple(r.mean_ap, r.per_instance);
      },
      "detections"_a, "ground_truth"_a, "iou_threshold"_a = 0.5, "eleven_point"_a = false,
      "Detections are (frame, instance, xmin, ymin, xmax, ymax, score); returns (mAP, {instance: AP}).");

  py::class_<avsim::EpisodeState>(m, "EpisodeState")
      .def_readonly("frame_id", &avsim::EpisodeState::frame_id)
      .def_readonly("instance_id", &avsim::EpisodeState::instance_id)
      .def_property_readonly("box", [](const avsim::EpisodeState& s) { return from_box(s.box); })
      .def_readonly("t", &avsim::EpisodeState::t)
      .def_readonly("terminated", &avsim::EpisodeState::terminated)
      .def_property_readonly("reason",
                             [](const avsim::EpisodeState& s) { return std::string(avsim::termination_name(s.reason)); })
      .def("__eq__", [](const avsim::EpisodeState& a, const avsim::EpisodeState& b) { return a == b; });

  py::class_<Environment>(m, "Environment")
      .def(py::init([](const Scene& scene, int max_steps, double threshold, const std::string& blocked) {
             auto env = std::make_unique<Environment>();
             env->scene = scene;
             env->config.max_steps = max_steps;
             env->config.confidence_threshold = threshold;
             if (blocked == "stay") {
               env->config.blocked = avsim::BlockedPolicy::kStay;
             } else if (blocked == "terminate") {
               env->config.blocked = avsim::BlockedPolicy::kTerminate;
             } else {
               throw avsim::UserError("blocked must be 'stay' or 'terminate', got '" + blocked + "'");
             }
             env->config.validate();
             env->episodes = std::make_unique<avsim::EpisodeScene>(*env->scene.disk);
             return env;
           }),
           "scene"_a, "max_steps"_a = 5, "confidence_threshold"_a = 0.9, "blocked"_a = "stay")
      .def(
          "reset",
          [](const Environment& e, int instance, const std::optional<std::string>& start,
             std::uint64_t seed) {
            return start ? avsim::reset_state(*e.episodes, instance, *start, e.config)
                         : avsim::reset_state(*e.episodes, instance, seed, e.config);
          },
          "instance_id"_a, "start_frame"_a = py::none(), "seed"_a = 0)
      .def(
          "step",
          [](const Environment& e, const avsim::EpisodeState& s, int action) {
            return avsim::step_state(s, action_arg(action), *e.episodes, e.config);
          },
          "state"_a, "action"_a)
      .def(
          "observe",
          [](const Environment& e, const avsim::EpisodeState& s) {
            const auto o = avsim::observe(*e.episodes, s);
            return py::make_tuple(to_array(o.rgb), from_box(o.box), o.frame_id);
          },
          "state"_a, "Returns (rgb array, box or None, frame_id).")
      .def(
          "check_confidence_stop",
          [](const Environment& e, const avsim::EpisodeState& s, const std::vector<double>& probs) {
            return avsim::check_confidence_stop(s, probs, e.config);
          },
          "state"_a, "probabilities"_a)
      .def("start_frames",
           [](const Environment& e, int instance) { return e.episodes->start_frames(instance); },
           "instance_id"_a)
      .def("annotated_instances", [](const Environment& e) { return e.episodes->annotated_instances(); });
}
