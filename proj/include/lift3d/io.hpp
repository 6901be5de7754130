#pragma once

#include "lift3d/dataset.hpp"
#include "lift3d/metrics.hpp"
#include "lift3d/model.hpp"
#include "lift3d/training.hpp"

#include <json.hpp>

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

// JSON file formats. Doubles are written in shortest round-trip form, so every
// write/read pair reproduces values bit for bit.
namespace lift3d::io {

using Json = nlohmann::ordered_json;
namespace fs = std::filesystem;

inline constexpr int kFormatVersion = 1;

std::string read_text(const fs::path& path);
/// Creates parent directories as needed.
void write_text(const fs::path& path, const std::string& text);
Json parse_json(const std::string& text, const std::string& context);
Json read_json(const fs::path& path);
void write_json(const fs::path& path, const Json& j);

Json to_json(const geometry::Camera& c);
geometry::Camera camera_from_json(const Json& j, const std::string& context);

Json to_json(const dataset::SequenceRecord& seq);
dataset::SequenceRecord sequence_from_json(const Json& j, const std::string& context);
void write_sequence(const fs::path& path, const dataset::SequenceRecord& seq);
dataset::SequenceRecord read_sequence(const fs::path& path);

Json to_json(const dataset::SplitManifest& m);
dataset::SplitManifest manifest_from_json(const Json& j, const std::string& context);

Json to_json(const model::ModelConfig& c);
model::ModelConfig model_config_from_json(const Json& j, const std::string& context);

Json to_json(const model::ParameterSet& p);
model::ParameterSet parameters_from_json(const Json& j, const std::string& context);

inline constexpr const char* kLiftingModelKind = "lifting";
inline constexpr const char* kGroundTruthStubKind = "ground_truth_stub";

struct Checkpoint {
  std::string model_kind = kLiftingModelKind;
  model::LiftingModel model;
  std::optional<training::AdamState> adam;
  int epoch = 0;
  long step = 0;
  double best_val_fa_mpjpe = -1.0;
  std::optional<model::ParameterSet> best_params;  // present in resumable checkpoints
  std::vector<std::string> trained_categories;
  int max_train_joints = 0;
  Json train_config = Json::object();  // echo of the training settings
};

Json to_json(const Checkpoint& c);
Checkpoint checkpoint_from_json(const Json& j, const std::string& context);
void write_checkpoint(const fs::path& path, const Checkpoint& c);
Checkpoint read_checkpoint(const fs::path& path);

/// Canonical predictions of one sequence, optionally with an aligned copy.
struct PredictionFile {
  std::string sequence_id;
  std::string category;
  double fps = 30.0;
  std::vector<std::string> joint_names;
  std::vector<int> parent;
  Track3 canonical;
  std::optional<Track3> aligned;  // per-frame aligned to the labels, normalised units
};

Json to_json(const PredictionFile& p);
PredictionFile prediction_from_json(const Json& j, const std::string& context);
void write_prediction(const fs::path& path, const PredictionFile& p);
PredictionFile read_prediction(const fs::path& path);

Json to_json(const training::LogRecord& r);
training::LogRecord log_record_from_json(const Json& j, const std::string& context);
/// One JSON object per line.
std::vector<training::LogRecord> read_log(const fs::path& path);

Json to_json(const metrics::MetricReport& r);
metrics::MetricReport report_from_json(const Json& j, const std::string& context);
/// Per-sequence table.
std::string report_csv(const metrics::MetricReport& r);

struct CurvePoint {
  double fraction = 0.0;
  metrics::MetricReport report;
};
std::string curve_csv(const std::vector<CurvePoint>& curve);
/// Error-versus-occlusion line chart.
std::string curve_svg(const std::vector<CurvePoint>& curve);

/// Flat row-major arrays used in the sequence format.
Json flatten(const Mat& rows);
Mat unflatten(const Json& j, Eigen::Index rows, Eigen::Index cols, const std::string& context);

}  // namespace lift3d::io
