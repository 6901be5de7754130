#pragma once

#include "lift3d/core.hpp"
#include "lift3d/geometry.hpp"
#include "lift3d/kinematics.hpp"

#include <map>
#include <string>
#include <vector>

namespace lift3d::dataset {

/// Mesh-like vertex clouds over time; `data.joints` is the vertex count K.
struct VertexTrajectories {
  Track3 vertices;
  std::string source_id;
};

/// For each joint, the vertex indices whose mean gives the joint position.
struct VirtualMarkerMap {
  std::vector<std::vector<int>> marker_indices;
};

/// J(t, j) = mean of the marker vertices of joint j at frame t.
Track3 compute_joints_from_markers(const VertexTrajectories& v, const VirtualMarkerMap& map);

enum class Topology { Quadruped, Biped, Custom };

std::string to_string(Topology t);
Topology topology_from_string(const std::string& s);

struct CategoryTemplate {
  std::string name;
  Topology topology = Topology::Quadruped;
  int num_joints = 21;
  double body_length = 1.0;  // metres
  double amplitude = 0.35;   // radians, per-joint sinusoid scale
  int frames = 48;
  double fps = 30.0;
};

inline constexpr int kMinTemplateJoints = 19;
inline constexpr int kMaxTemplateJoints = 29;

/// Default desk-scale categories used by dataset generation.
std::vector<CategoryTemplate> builtin_templates();
CategoryTemplate builtin_template(const std::string& name);

struct SynthesizedRig {
  kinematics::KinematicChain chain;
  kinematics::PoseAngles theta;
  Mat root_path;  // T x 3
};

/// Procedural rig and sum-of-sinusoids animation. Deterministic per seed.
/// Throws InvalidTemplate for joint counts outside [19, 29] or empty names.
SynthesizedRig synthesize_rig(const CategoryTemplate& tmpl, std::uint64_t seed);

/// Random tree of `joints` joints with a smooth animation (no joint-count limits);
/// used for small test rigs.
SynthesizedRig synthesize_random_rig(int joints, int frames, double amplitude, std::uint64_t seed);

/// Three jittered satellite vertices per joint, attached in the joint's local frame.
/// `radius` bounds the rigid satellite offsets; `jitter` is the per-frame noise sigma.
struct SatelliteCloud {
  VertexTrajectories vertices;
  VirtualMarkerMap markers;
};
SatelliteCloud attach_satellites(const kinematics::KinematicChain& chain, const kinematics::PoseAngles& theta,
                                 const Mat& root_path, double radius, double jitter, std::uint64_t seed);

/// Isotropic Gaussian pixel noise with E||eps|| = mean_error_px.
Track2 add_keypoint_noise(const Track2& keypoints_px, double mean_error_px, std::uint64_t seed);

struct NormalizationRecord {
  Row2 center_2d = Row2::Zero();
  double scale_2d = 1.0;
  Row3 center_3d = Row3::Zero();  // millimetres
  double scale_3d = 1.0;          // millimetres per normalised unit
  double world_to_mm = 1000.0;

  bool operator==(const NormalizationRecord&) const = default;
};

struct KeypointSequence2D {
  Track2 keypoints;  // normalised, absent joints hold 0
  Presence presence;
  geometry::Camera camera;
  double noise_sigma_px = 0.0;

  bool operator==(const KeypointSequence2D&) const = default;
};

struct SkeletonSequence3D {
  Track3 joints;
  kinematics::KinematicChain chain;
  std::string category;
  std::string sequence_id;
  double fps = 30.0;
};

struct NormalizedSequence {
  KeypointSequence2D keypoints;
  SkeletonSequence3D skeleton;
  NormalizationRecord record;
};

/// 2D: centre on the present-keypoint centroid and divide by the largest absolute
/// centred coordinate. 3D: convert to mm, then centre and divide likewise.
/// Throws DegenerateExtent when either extent is zero.
NormalizedSequence normalize_sequence(const Track2& keypoints_px, const Presence& presence, const Track3& joints_world,
                                      double world_to_mm);

Track2 denormalize_2d(const Track2& normalized, const NormalizationRecord& record);
Track3 denormalize_3d_mm(const Track3& normalized, const NormalizationRecord& record);
Track2 normalize_2d_with(const Track2& pixels, const NormalizationRecord& record);

/// Hides floor(fraction * J) uniformly chosen joints per frame (presence 0, value 0).
KeypointSequence2D mask_random_joints(const KeypointSequence2D& kp, double fraction, std::uint64_t seed);

/// Everything stored in one sequence file.
struct SequenceRecord {
  SkeletonSequence3D skeleton;  // normalised 3D labels
  KeypointSequence2D observed;  // normalised (noisy) 2D inputs
  NormalizationRecord record;

  int frames() const { return skeleton.joints.frames; }
  int joints() const { return skeleton.joints.joints; }
};

/// Exact (noise-free) normalised keypoints re-projected from the stored 3D labels.
Track2 clean_keypoints(const SequenceRecord& seq);

struct SplitManifest {
  std::uint64_t seed = 0;
  std::map<std::string, std::vector<std::string>> train;
  std::map<std::string, std::vector<std::string>> test;

  bool operator==(const SplitManifest&) const = default;
};

struct SequenceRef {
  std::string sequence_id;
  std::string category;
};

/// Per-category shuffled split; round(train_fraction * n) sequences go to train,
/// categories with fewer than two sequences go entirely to train.
SplitManifest split_dataset(const std::vector<SequenceRef>& sequences, double train_fraction, std::uint64_t seed);

struct GenerationConfig {
  std::vector<std::string> templates{"fox", "bear", "chicken", "deer"};
  int sequences_per_category = 10;
  int frames = 48;
  double noise_px = 3.0;
  Eigen::Vector2i image_size{512, 512};
  double camera_margin = geometry::kDefaultCameraMargin;
  double world_to_mm = 1000.0;
  double satellite_radius = 0.02;  // metres
  double satellite_jitter = 0.004;
  double train_fraction = 0.8;
  kinematics::IkConfig ik;
};

/// Full synthetic pipeline for one sequence: rig -> satellites -> marker joints ->
/// IK refinement -> camera -> projection -> noise -> normalisation.
SequenceRecord generate_sequence(const CategoryTemplate& tmpl, const GenerationConfig& config, std::uint64_t seed,
                                 const std::string& sequence_id);

}  // namespace lift3d::dataset
