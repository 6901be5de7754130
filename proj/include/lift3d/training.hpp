#pragma once

#include "lift3d/core.hpp"
#include "lift3d/dataset.hpp"
#include "lift3d/metrics.hpp"
#include "lift3d/model.hpp"

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace lift3d::training {

struct TrainConfig {
  double learning_rate = 1e-4;
  double weight_decay = 1e-6;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double velocity_weight = 5000.0;
  int epochs = 200;
  int batch_sequences = 32;
  int frames_per_clip = 48;
  std::uint64_t seed = 0;
  bool procrustes_loss = true;
  bool full_svd_gradient = true;  // false: treat per-frame rotation and scale as constants
  double occlusion = 0.0;          // fraction of joints hidden per frame in training inputs
  double input_noise = 0.0;        // extra Gaussian noise on training inputs, normalised units
  int max_steps = 0;               // 0: run all epochs
  int validate_every = 1;          // epochs between validation records
  int jobs = 1;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

/// One training clip. Labels and inputs share the same joint slots.
struct Sample {
  Track2 keypoints;
  Presence presence;      // input observation flags
  Track3 target;          // normalised 3D labels
  Presence label_mask;    // which label entries count in the loss
  Eigen::MatrixXi adjacency;
  std::vector<std::uint8_t> joint_mask;  // 0 for padded slots
  std::string category;
};

/// Clips padded to the largest joint count of the batch.
struct Batch {
  int max_joints = 0;
  std::vector<Sample> samples;
};

/// Zero-pads every sample to the batch's largest joint count.
Batch make_batch(std::vector<Sample> samples);

/// Clip [start, start + frames) of a sequence, with the given inputs.
Sample make_sample(const dataset::SequenceRecord& seq, const dataset::KeypointSequence2D& inputs, int start,
                   int frames);

model::LiftInput to_lift_input(const Sample& s);

struct AlignedPrediction {
  Track3 aligned;  // absent entries are 0
  std::vector<Mat3> rotations;
  std::vector<double> scales;
};

/// Per-frame Procrustes of the present joints of y_canon onto y, recentred on the
/// label centroid. Throws DegenerateFrame.
AlignedPrediction align_prediction(const Track3& y, const Track3& y_canon, const Presence& mask);

struct LossValue {
  double raw = 0.0;   // sum of Euclidean norms
  double mean = 0.0;  // raw / number of terms
  int terms = 0;
};

LossValue position_loss(const Track3& y, const Track3& y_hat, const Presence& mask);
/// Throws TooShort when fewer than two frames.
LossValue velocity_loss(const Track3& y, const Track3& y_hat, const Presence& mask);

struct LossBreakdown {
  LossValue position;
  LossValue velocity;
  double total = 0.0;  // position.mean + velocity_weight * velocity.mean
};

LossBreakdown total_loss(const Track3& y, const Track3& y_canon, const Presence& mask, double velocity_weight,
                         bool procrustes);

enum class AlignmentGradient { StopGradient, FullSvd };

struct FrameAlignment {
  Mat3 rotation = Mat3::Identity();
  double scale = 1.0;
};

struct LossGradient {
  LossBreakdown loss;
  Mat d_canon;  // d total / d y_canon, (T*J) x 3
  std::vector<FrameAlignment> alignment;
};

/// Loss and its gradient with respect to the canonical prediction. With `frozen`
/// set, those rotations and scales are used instead of solving for them.
LossGradient loss_gradient(const Track3& y, const Track3& y_canon, const Presence& mask, double velocity_weight,
                           bool procrustes, AlignmentGradient mode,
                           const std::vector<FrameAlignment>* frozen = nullptr);

struct GradientResult {
  model::ParameterSet grads;
  double loss = 0.0;  // summed over samples
  std::vector<LossBreakdown> per_sample;
};

/// Gradients of the summed per-sample total loss for every parameter tensor.
/// Samples run in parallel; per-thread partial sums are added in a fixed order.
/// Throws NonFinite.
GradientResult compute_gradients(const model::LiftingModel& model, const Batch& batch, const TrainConfig& config);

/// Loss of one sample without gradients. `frozen` as in loss_gradient.
double sample_loss(const model::LiftingModel& model, const Sample& sample, const TrainConfig& config,
                   const std::vector<FrameAlignment>* frozen = nullptr);

struct AdamState {
  model::ParameterSet m;
  model::ParameterSet v;
  long step = 0;

  bool operator==(const AdamState&) const = default;
};

AdamState make_adam_state(const model::ParameterSet& params);

/// Adam with decoupled weight decay.
void adamw_step(model::ParameterSet& params, const model::ParameterSet& grads, AdamState& state,
                const TrainConfig& config);

struct LogRecord {
  int epoch = 0;
  long step = 0;
  double train_loss = 0.0;
  double train_position_raw = 0.0;
  double train_position_mean = 0.0;
  double train_velocity_raw = 0.0;
  double train_velocity_mean = 0.0;
  double val_fa_mpjpe = 0.0;
  double val_sa_mpjpe = 0.0;
  double val_sa_mpve = 0.0;
  double lr = 0.0;
  bool procrustes = true;

  bool operator==(const LogRecord&) const = default;
};

/// Everything needed to continue a run from an epoch boundary.
struct TrainState {
  model::LiftingModel model;
  AdamState adam;
  int epoch = 0;  // completed epochs
  long step = 0;
  double best_val_fa_mpjpe = -1.0;  // < 0: none yet
  model::ParameterSet best_params;
};

struct TrainData {
  std::vector<dataset::SequenceRecord> train;
  std::vector<dataset::SequenceRecord> validation;  // falls back to `train` when empty
};

struct TrainHooks {
  /// Called after every validation record with the state at that point.
  std::function<void(const LogRecord&, const TrainState&, bool is_best)> on_record;
};

struct TrainResult {
  model::LiftingModel best;  // lowest validation FA-MPJPE
  TrainState final_state;
  std::vector<LogRecord> log;
  bool aborted = false;  // non-finite loss or gradient; best/final_state hold the last good values
  std::string abort_reason;
};

/// Validation metrics of a model on sequences (their stored inputs), in millimetres.
metrics::MetricReport validate_model(const model::LiftingModel& model,
                                     const std::vector<dataset::SequenceRecord>& sequences, int jobs);

TrainResult train(const TrainData& data, const model::ModelConfig& model_config, const TrainConfig& config,
                  const TrainHooks& hooks = {}, std::optional<TrainState> resume = std::nullopt);

struct GradcheckConfig {
  model::ModelConfig model;  // defaults to a tiny model, see default_gradcheck_config
  int frames = 4;
  int joints = 5;
  int coordinates = 30;
  double step = 1e-4;
  double tolerance = 1e-3;
  double velocity_weight = 5000.0;
  bool procrustes = true;
  AlignmentGradient mode = AlignmentGradient::StopGradient;
  std::uint64_t seed = 0;
  /// Test hook: add this much to the analytic gradient of the named tensor.
  std::string corrupt_tensor;
  double corrupt_amount = 1.0;
};

GradcheckConfig default_gradcheck_config();

struct GradcheckEntry {
  std::string tensor;
  int row = 0;
  int col = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
  bool pass = false;
};

struct GradcheckReport {
  std::vector<GradcheckEntry> entries;
  double max_rel_error = 0.0;
  bool passed = false;
  std::vector<std::string> failed_tensors;
};

/// |a - n| / max(|a|, |n|, 1e-5); the floor absorbs round-off on exactly-zero gradients.
double relative_error(double analytic, double numeric);

/// Central differences on randomly sampled parameter coordinates of a tiny model.
/// In stop-gradient mode the alignment is frozen at the base point.
GradcheckReport gradcheck_model(const GradcheckConfig& config);

/// Central differences of the IK objective at random coordinates of theta and the root path.
GradcheckReport gradcheck_ik(int coordinates, double step, double tolerance, std::uint64_t seed);

}  // namespace lift3d::training
