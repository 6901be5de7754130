#pragma once

#include "lift3d/autodiff.hpp"
#include "lift3d/core.hpp"

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace lift3d::model {

inline constexpr int kUnboundedWindow = -1;

enum class TemporalEmbedding { AnalyticalRff, Learned, None };

std::string to_string(TemporalEmbedding e);
TemporalEmbedding temporal_embedding_from_string(const std::string& s);

struct ModelConfig {
  int feature_dim = 256;
  int motion_layers = 4;
  int space_layers = 12;
  int heads = 8;
  int window_alpha = 8;  // kUnboundedWindow for full temporal attention
  int max_joints = 29;
  int window_frames = 48;  // frames per temporal window; time index is t / (window_frames - 1)
  std::uint64_t rff_seed = 0;
  std::uint64_t init_seed = 0;
  TemporalEmbedding temporal_embedding = TemporalEmbedding::AnalyticalRff;
  bool multiplicative_window = false;  // literal logits * Z variant

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

/// Fixed random Fourier basis: W is (D/2) x 3 standard normal, b is U(0, 1/(2 pi)).
struct RffBasis {
  Mat weights;
  Vec offsets;

  static RffBasis sample(int feature_dim, std::uint64_t seed);
};

/// sqrt(2/D) [sin(W p + b); cos(W p + b)] for every row p of `points` (n x 3).
Mat rff_encode(const Mat& points, const RffBasis& basis);

struct NamedTensor {
  std::string name;
  Mat value;
};

/// Ordered named tensors. Order is fixed by construction and used for serialisation.
class ParameterSet {
 public:
  void add(std::string name, Mat value);
  Mat& at(const std::string& name);
  const Mat& at(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  std::size_t size() const { return tensors_.size(); }
  std::vector<NamedTensor>& tensors() { return tensors_; }
  const std::vector<NamedTensor>& tensors() const { return tensors_; }
  std::size_t index_of(const std::string& name) const;
  std::size_t scalar_count() const;

  /// Same names and shapes, all zeros.
  ParameterSet zeros_like() const;
  bool all_finite() const;

  bool operator==(const ParameterSet& o) const;

 private:
  std::vector<NamedTensor> tensors_;
  std::map<std::string, std::size_t> index_;
};

/// Scaled-normal fan-in initialisation for every tensor the config requires.
ParameterSet init_parameters(const ModelConfig& config, std::uint64_t seed);

struct LiftingModel {
  ModelConfig config;
  RffBasis basis;
  ParameterSet params;

  static LiftingModel create(const ModelConfig& config);
};

/// 1 for present joints, 0 for absent ones and for padded slots up to max_joints.
std::vector<std::uint8_t> build_joint_mask(const std::vector<bool>& present, int max_joints);

/// Z(t, i) = 1 iff |t - i| <= alpha; all ones when alpha is unbounded.
Mat build_window_mask(int frames, int alpha);

/// Token layout shared by every layer: tokens are frame-major (row t * J + j).
struct TokenLayout {
  int frames = 0;
  int joints = 0;
  Presence presence;                     // per-token observation flags
  std::vector<std::uint8_t> joint_mask;  // structural mask (0 for padded slots)
  Eigen::MatrixXi adjacency;             // J x J
  int window_alpha = kUnboundedWindow;
  bool multiplicative_window = false;

  Vec row_mask() const;
  std::shared_ptr<const ad::AttentionPattern> motion_pattern() const;
  std::shared_ptr<const ad::AttentionPattern> space_local_pattern() const;
  std::shared_ptr<const ad::AttentionPattern> space_global_pattern() const;
};

/// Input to the network: normalised keypoints of one sequence.
struct LiftInput {
  Track2 keypoints;
  Presence presence;
  std::vector<std::uint8_t> joint_mask;  // empty: all joints structural
  Eigen::MatrixXi adjacency;
  int time_offset = 0;
};

/// Maps parameter tensors to tape variables.
class ParamVars {
 public:
  ParamVars(ad::Tape& tape, const ParameterSet& params, bool trainable);
  ad::Var operator[](const std::string& name) const;
  const std::vector<ad::Var>& vars() const { return vars_; }

 private:
  const ParameterSet* params_;
  std::vector<ad::Var> vars_;
};

/// Tape-level building blocks. Features are (T*J) x D token matrices.
ad::Var input_features(ad::Tape& tape, const ParamVars& p, const LiftingModel& model, const LiftInput& input,
                       const TokenLayout& layout);
ad::Var windowed_mhsa(ad::Tape& tape, const ParamVars& p, const ModelConfig& config, int layer, ad::Var x,
                      const TokenLayout& layout, ad::Var* attention_out = nullptr);
ad::Var motion_encoder(ad::Tape& tape, const ParamVars& p, const ModelConfig& config, ad::Var x,
                       const TokenLayout& layout);

struct SpaceStreams {
  ad::Var local;
  ad::Var global;
};
ad::Var space_encoder_layer(ad::Tape& tape, const ParamVars& p, const ModelConfig& config, int layer, ad::Var x,
                            const TokenLayout& layout, SpaceStreams* streams = nullptr);
ad::Var decode_canonical(ad::Tape& tape, const ParamVars& p, ad::Var x, const TokenLayout& layout);

TokenLayout make_layout(const ModelConfig& config, const LiftInput& input);

/// Full forward for one window of at most config.window_frames frames. Returns the
/// (T*J) x 3 canonical prediction node.
ad::Var forward(ad::Tape& tape, const ParamVars& p, const LiftingModel& model, const LiftInput& input);

/// Lifts a sequence of any length by running the network over consecutive windows of
/// config.window_frames frames (the last window is aligned to the sequence end).
/// Padded joints come back as zeros. Throws TooManyJoints / ShapeMismatch.
Track3 lift(const LiftingModel& model, const LiftInput& input);

void validate_input(const ModelConfig& config, const LiftInput& input);

}  // namespace lift3d::model
