#pragma once

#include "lift3d/core.hpp"
#include "lift3d/dataset.hpp"
#include "lift3d/geometry.hpp"
#include "lift3d/model.hpp"

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace lift3d::metrics {

/// Options for the whole-sequence alignment used by SA-MPJPE and SA-MPVE.
struct SequenceAlignmentOptions {
  bool with_scale = true;
  /// false: every frame is centred on its own centroid before the shared rotation is
  /// solved. true: one centroid for the whole sequence.
  bool whole_sequence_centering = false;

  bool operator==(const SequenceAlignmentOptions&) const = default;
};

/// Per-frame centred Procrustes (rotation + scale), then mean Euclidean error over
/// present joints. Output is in the units of `y`. Throws DegenerateFrame.
double fa_mpjpe(const Track3& y, const Track3& y_canon, const Presence& mask);

/// Prediction aligned by one rotation (and scale) shared by all frames.
/// Throws DegenerateSequence.
Track3 sequence_align(const Track3& y, const Track3& y_canon, const Presence& mask,
                      const SequenceAlignmentOptions& options = {});

double sa_mpjpe(const Track3& y, const Track3& y_canon, const Presence& mask,
                const SequenceAlignmentOptions& options = {});

/// Mean velocity residual over t >= 1 after sequence alignment. Throws TooShort.
double sa_mpve(const Track3& y, const Track3& y_canon, const Presence& mask,
               const SequenceAlignmentOptions& options = {});

/// Mean over present joints of ||y - y_hat||.
double mean_joint_error(const Track3& y, const Track3& y_hat, const Presence& mask);
/// Mean over present consecutive pairs of the velocity residual norm.
double mean_velocity_error(const Track3& y, const Track3& y_hat, const Presence& mask);

/// Every joint of every frame present.
Presence full_mask(int frames, int joints);

/// Produces canonical predictions for a sequence given its (possibly altered) inputs.
class Lifter {
 public:
  virtual ~Lifter() = default;
  virtual Track3 predict(const dataset::SequenceRecord& seq, const dataset::KeypointSequence2D& inputs) const = 0;
};

class ModelLifter : public Lifter {
 public:
  explicit ModelLifter(const model::LiftingModel& model) : model_(&model) {}
  Track3 predict(const dataset::SequenceRecord& seq, const dataset::KeypointSequence2D& inputs) const override;

 private:
  const model::LiftingModel* model_;
};

/// Returns the stored labels; a perfect-oracle stand-in for a model.
class GroundTruthLifter : public Lifter {
 public:
  Track3 predict(const dataset::SequenceRecord& seq, const dataset::KeypointSequence2D& inputs) const override;
};

/// Serves predictions computed elsewhere, keyed by sequence id.
class PredictionLifter : public Lifter {
 public:
  explicit PredictionLifter(std::map<std::string, Track3> predictions) : predictions_(std::move(predictions)) {}
  Track3 predict(const dataset::SequenceRecord& seq, const dataset::KeypointSequence2D& inputs) const override;

 private:
  std::map<std::string, Track3> predictions_;
};

/// Builds the network input for a sequence from its keypoints.
model::LiftInput make_lift_input(const dataset::SequenceRecord& seq, const dataset::KeypointSequence2D& inputs);

struct Scenario {
  enum class Kind { Clean, Noisy, Occluded, Holdout, UnseenRig };
  Kind kind = Kind::Noisy;
  double fraction = 0.0;  // Occluded
  std::string category;   // Holdout

  /// "clean", "noisy", "occluded(0.1)", "holdout(fox)", "unseen_rig".
  static Scenario parse(const std::string& text);
  std::string label() const;
  bool operator==(const Scenario&) const = default;
};

struct EvalOptions {
  std::uint64_t seed = 0;
  int jobs = 1;
  int max_train_joints = 0;  // for unseen_rig; sequences with more joints are evaluated
  SequenceAlignmentOptions alignment;
};

struct SequenceMetrics {
  std::string sequence_id;
  std::string category;
  int frames = 0;
  int joints = 0;
  double fa_mpjpe = 0.0;  // mm
  double sa_mpjpe = 0.0;  // mm
  double sa_mpve = 0.0;   // mm per frame

  bool operator==(const SequenceMetrics&) const = default;
};

struct CategoryMetrics {
  int sequences = 0;
  double fa_mpjpe = 0.0;
  double sa_mpjpe = 0.0;
  double sa_mpve = 0.0;

  bool operator==(const CategoryMetrics&) const = default;
};

/// Aggregates are unweighted means over sequences.
struct MetricReport {
  std::string scenario;
  double fa_mpjpe = 0.0;
  double sa_mpjpe = 0.0;
  double sa_mpve = 0.0;
  std::map<std::string, CategoryMetrics> per_category;
  std::vector<SequenceMetrics> per_sequence;
  int sequence_count = 0;
  int frame_count = 0;

  bool operator==(const MetricReport&) const = default;
};

/// The keypoints a scenario feeds to the lifter for one sequence.
dataset::KeypointSequence2D scenario_inputs(const dataset::SequenceRecord& seq, const Scenario& scenario,
                                            std::uint64_t seed);

/// Sequences of `pool` that a scenario evaluates on.
std::vector<const dataset::SequenceRecord*> scenario_sequences(const std::vector<dataset::SequenceRecord>& pool,
                                                               const Scenario& scenario, int max_train_joints);

/// Lifts and scores every scenario sequence; metrics are reported in millimetres.
/// Throws EmptyDataset when the scenario selects nothing.
MetricReport evaluate(const Lifter& lifter, const std::vector<dataset::SequenceRecord>& pool,
                      const Scenario& scenario, const EvalOptions& options);

}  // namespace lift3d::metrics
