#pragma once

#include "lift3d/core.hpp"

#include <array>

namespace lift3d::geometry {

/// Axis-angle vector: direction is the rotation axis, norm the angle in radians.
using AxisAngle = Vec3;

/// Rodrigues map from axis-angle to a rotation matrix (column-vector convention).
Mat3 rodrigues(const AxisAngle& aa);

/// Partial derivatives dR/d(aa_i), i = 0..2.
std::array<Mat3, 3> rodrigues_jacobian(const AxisAngle& aa);

Mat3 skew(const Vec3& v);

/// Rotation about the world y axis.
Mat3 rotation_y(double angle);

/// Orthogonality and determinant check against a tolerance.
bool is_rotation(const Mat3& r, double tol = 1e-9);

struct Camera {
  Mat3 rotation = Mat3::Identity();  // world -> camera
  Vec3 translation = Vec3::Zero();   // x_cam = rotation * x_world + translation
  double focal_length = 1.0;
  Vec2 principal_point = Vec2::Zero();
  Eigen::Vector2i image_size{512, 512};

  bool operator==(const Camera&) const = default;
};

/// Maps T*J world points to pixels with a pinhole model. Throws BehindCamera on depth <= 0.
Track2 project_perspective(const Track3& points, const Camera& camera);

/// Places a camera that looks at the sequence mean from a direction rotated by `yaw`
/// about world y, with the largest focal length keeping every joint inside the image
/// shrunk by `margin` on each side.
Camera place_camera(const Track3& sequence, Eigen::Vector2i image_size, double margin, double yaw);

inline constexpr double kDefaultCameraMargin = 0.05;

/// Result of aligning a source cloud onto a target cloud: target_c ~ scale * source_c * rotation.
struct AlignmentResult {
  Mat3 rotation = Mat3::Identity();
  double scale = 1.0;
  double residual = 0.0;  // || target_c - scale * source_c * rotation ||_F^2
  Row3 target_centroid = Row3::Zero();
  Row3 source_centroid = Row3::Zero();
};

/// SVD pieces of the rotation solve, kept for differentiating through it.
struct RotationSolve {
  Mat3 rotation;
  Mat3 basis;    // right singular vectors V of the cross-covariance
  Vec3 lambdas;  // eigenvalues of rotation^T * covariance in `basis`
};

/// Maximises tr(R^T M) over SO(3) for a cross-covariance M = source^T target.
/// The column tied to the smallest singular value is flipped when det(U V^T) = -1.
RotationSolve rotation_from_covariance(const Mat3& covariance);

/// Pulls a gradient with respect to the solved rotation back onto the covariance.
Mat3 rotation_covariance_vjp(const RotationSolve& solve, const Mat3& grad_rotation);

/// Orthogonal Procrustes over SO(3) with optional least-squares scale. Both clouds
/// (rows are points) are centred on their centroids before solving.
/// Throws DegenerateCloud when the centred source has rank < 2.
AlignmentResult solve_procrustes(const Eigen::Ref<const Mat>& target, const Eigen::Ref<const Mat>& source,
                                 bool with_scale);

/// Applies an alignment to a source cloud, returning points in target coordinates.
Mat apply_alignment(const AlignmentResult& a, const Eigen::Ref<const Mat>& source);

}  // namespace lift3d::geometry
