#pragma once

// Viewpoint-sensitive active-vision benchmark: a shared catalog of small
// instances that differ mostly in a thin colored band, placed in cluttered
// rooms, plus the object views and backgrounds used to train the classifier.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "avsim/recognition.hpp"
#include "avsim/synth.hpp"

namespace avsim {

/// One catalog instance; parts are relative to the object's bottom center.
struct CatalogObject {
  int instance_id = 0;
  std::string name;
  std::vector<SynthBox> parts;
};

struct BenchmarkParams {
  double body_width = 0.07;
  double body_height = 0.12;
  double band_height = 0.02;
  int bands_per_body = 4;       // instances per body color
  double band_contrast = 0.12;  // band shade relative to the body color
  double room_x = 4.2;
  double room_y = 4.2;
  int grid_nx = 10;
  int grid_ny = 10;
  int occluders = 3;
  int image_width = 80;
  int image_height = 60;
  double focal = 70.0;
  double rgb_noise_sigma = 14.0;
  double gap = 0.15;  // clearance between placed boxes
};

/// Three body colors shared by several instances; only the band shade and
/// height tell them apart, so distant views are ambiguous.
std::vector<CatalogObject> benchmark_catalog(const BenchmarkParams& params = {});

/// Every catalog object at a seeded position plus slab occluders.
SynthSceneSpec benchmark_scene_spec(std::uint64_t seed, const BenchmarkParams& params = {});

struct ObjectView {
  int instance_id = 0;
  RgbImage rgb;    // tight crop
  MaskImage mask;  // 255 on object pixels
};

/// Instances of an arbitrary spec as catalog objects (parts grouped by id).
std::vector<CatalogObject> catalog_from_spec(const SynthSceneSpec& spec);

/// Close-up renders of each catalog object alone, from `views` headings around
/// it, cropped to the object.
std::vector<ObjectView> render_catalog_views(const std::vector<CatalogObject>& catalog,
                                             const Intrinsics& intrinsics, int views = 12);

/// Scene spec JSON. A "benchmark_layout" object (BenchmarkParams fields)
/// selects benchmark_scene_spec; anything else goes to synth_spec_from_json.
/// `seed` replaces the file's seed when given.
SynthSceneSpec load_scene_spec(const std::string& json_text,
                               std::optional<std::uint64_t> seed = std::nullopt);
bool is_benchmark_spec(const std::string& json_text);
Intrinsics benchmark_intrinsics(const BenchmarkParams& params = {});

/// Object-free renders of the scene's room and occluders from seeded grid poses.
std::vector<RgbImage> render_backgrounds(const SynthSceneSpec& spec, int count, std::uint64_t seed);

/// Writes <dir>/<instance_id>/view_<k>.png with view_<k>_mask.png next to it.
void write_object_views(const std::filesystem::path& dir, const std::vector<ObjectView>& views);
/// Reads the layout written by write_object_views. Throws LoadError when the
/// directory holds no views and IntegrityError on a missing or mismatched mask.
std::vector<ObjectView> read_object_views(const std::filesystem::path& dir);
void write_backgrounds(const std::filesystem::path& dir, const std::vector<RgbImage>& images);
/// Every .png/.jpg in the directory, sorted by name.
std::vector<RgbImage> read_backgrounds(const std::filesystem::path& dir);

/// Augmentation matched to the benchmark sensor: objects shrink to a tenth of
/// their close-up size and get the same pixel noise as scene frames.
AugmentationSpec benchmark_augmentation(const BenchmarkParams& params = {});

struct CompositeTrainingConfig {
  int samples_per_instance = 300;
  AugmentationSpec augmentation = benchmark_augmentation();
  ClassifierParams classifier;
  int threads = 0;
};

/// Composites every object view onto backgrounds, extracts features of the
/// (jittered) pasted box and trains the softmax head.
ClassifierModel train_composite_classifier(const std::vector<ObjectView>& views,
                                           const std::vector<RgbImage>& backgrounds,
                                           const CompositeTrainingConfig& config,
                                           TrainReport* report = nullptr);

}  // namespace avsim
