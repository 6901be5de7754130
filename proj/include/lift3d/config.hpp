#pragma once

#include "lift3d/dataset.hpp"
#include "lift3d/io.hpp"
#include "lift3d/kinematics.hpp"
#include "lift3d/metrics.hpp"
#include "lift3d/model.hpp"
#include "lift3d/training.hpp"

#include <optional>
#include <string>
#include <vector>

namespace lift3d::config {

struct DatasetSection {
  std::vector<dataset::CategoryTemplate> templates;  // default: fox, bear, chicken, deer
  int sequences_per_category = 10;
  int frames = 48;
  double noise_px = 3.0;
  Eigen::Vector2i image_size{512, 512};
  double camera_margin = geometry::kDefaultCameraMargin;
  double world_to_mm = 1000.0;
  double satellite_radius = 0.02;
  double satellite_jitter = 0.004;
  double train_fraction = 0.8;
  std::optional<std::uint64_t> seed;
};

struct EvalSection {
  std::vector<std::string> scenarios{"noisy"};
  std::vector<double> occlusion_sweep{0.0, 0.1, 0.3, 0.6};
  metrics::SequenceAlignmentOptions alignment;
  std::optional<std::uint64_t> seed;
};

struct PathsSection {
  std::string dataset_dir;
  std::string output_dir;
};

struct TrainSection {
  training::TrainConfig settings;
  bool seed_set = false;  // settings.seed given explicitly
  std::vector<std::string> exclude_categories;
};

/// One experiment document. All randomness derives from `seed` unless a section
/// pins its own.
struct RunConfig {
  std::uint64_t seed = 0;
  DatasetSection dataset;
  kinematics::IkConfig ik;
  model::ModelConfig model;
  bool model_seeds_set = false;  // rff_seed / init_seed given explicitly
  TrainSection train;
  EvalSection eval;
  PathsSection paths;

  RunConfig();

  std::uint64_t dataset_seed() const;
  std::uint64_t train_seed() const;
  std::uint64_t eval_seed() const;
  /// Model config with derived seeds filled in.
  model::ModelConfig effective_model() const;
  training::TrainConfig effective_train() const;
  dataset::GenerationConfig generation() const;

  void validate() const;
};

/// Throws Config on unknown keys, wrong types, or invalid values.
RunConfig run_config_from_json(const io::Json& j);
RunConfig load_run_config(const io::fs::path& path);
/// Every field with its effective value (derived seeds resolved).
io::Json to_json(const RunConfig& c);

io::Json to_json(const training::TrainConfig& c);

}  // namespace lift3d::config
