#pragma once

#include "lift3d/core.hpp"

#include <string>
#include <vector>

namespace lift3d::kinematics {

inline constexpr int kNoParent = -1;

/// Joint hierarchy with rest offsets expressed in the parent frame.
struct KinematicChain {
  std::vector<int> parent;
  std::vector<Vec3> rest_offset;
  Eigen::MatrixXi adjacency;  // symmetric 0/1, zero diagonal
  std::vector<std::string> joint_names;

  int size() const { return static_cast<int>(parent.size()); }
  int root() const;

  /// Joints ordered so every parent precedes its children.
  std::vector<int> topological_order() const;

  /// Throws ShapeMismatch if the chain breaks any of its invariants
  /// (single root, acyclic, adjacency consistent with parents, non-zero bones).
  void validate() const;

  /// Builds a chain and its adjacency from parent links and offsets.
  static KinematicChain from_parents(std::vector<int> parent, std::vector<Vec3> rest_offset,
                                     std::vector<std::string> names = {});
};

/// Adjacency implied by parent links.
Eigen::MatrixXi adjacency_from_parents(const std::vector<int>& parent);

/// Per-frame per-joint axis-angle parameters, stored like a Track3.
struct PoseAngles {
  Track3 theta;

  PoseAngles() = default;
  PoseAngles(int frames, int joints) : theta(frames, joints) {}
  int frames() const { return theta.frames; }
  int joints() const { return theta.joints; }
};

struct IkConfig {
  double smoothness_weight = 0.1;
  double learning_rate = 1e-2;
  int max_iters = 2000;
  double convergence_tol = 1e-7;  // relative improvement over `convergence_window` iterations
  int convergence_window = 50;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  bool root_translation_free = true;
};

/// Root transform is [R(theta_root), root_position]; every other joint j sits at
/// parent position + (accumulated parent rotation) * rest_offset_j.
/// `root_position` is T x 3.
Track3 forward_kinematics(const KinematicChain& chain, const PoseAngles& theta, const Mat& root_position);

/// Sum of joint distances to the target plus `smoothness` times the summed
/// frame-to-frame joint displacement of the FK output. Norms are not squared.
double ik_objective(const KinematicChain& chain, const PoseAngles& theta, const Mat& root_position,
                    const Track3& target, double smoothness);

struct IkGradient {
  double value = 0.0;
  Track3 d_theta;
  Mat d_root;  // T x 3
};

/// Accumulated world orientation of every joint at frame t.
std::vector<Mat3> joint_orientations(const KinematicChain& chain, const PoseAngles& theta, int t);

/// Objective value and its exact gradient by reverse accumulation through FK.
IkGradient ik_objective_gradient(const KinematicChain& chain, const PoseAngles& theta, const Mat& root_position,
                                 const Track3& target, double smoothness);

/// Replaces rest offsets with the bone vectors of `frame` of the given joints.
KinematicChain with_rest_offsets_from(const KinematicChain& chain, const Track3& joints, int frame = 0);

struct IkResult {
  KinematicChain chain;  // chain with first-frame rest offsets
  PoseAngles theta;
  Mat root_position;
  Track3 joints;
  std::vector<double> trace;  // objective per iteration, starting with the initial value
  double initial_objective = 0.0;
  double final_objective = 0.0;
};

/// Adam on the pose angles (and root path) so the chain tracks `target` with bone
/// lengths fixed to the target's first frame. Returns the best iterate seen.
/// Throws Diverged when the objective exceeds 10x its initial value.
IkResult refine_inverse_kinematics(const KinematicChain& chain, const Track3& target, const IkConfig& config);

/// Length of the bone from each joint to its parent, per frame (root entries are 0).
Mat bone_lengths(const KinematicChain& chain, const Track3& joints);

}  // namespace lift3d::kinematics
