#include "lift3d/geometry.hpp"

#include <cmath>
#include <limits>

namespace lift3d::geometry {

Mat3 skew(const Vec3& v) {
  Mat3 k;
  k << 0, -v.z(), v.y(),
       v.z(), 0, -v.x(),
       -v.y(), v.x(), 0;
  return k;
}

Mat3 rodrigues(const AxisAngle& aa) {
  const double theta2 = aa.squaredNorm();
  const Mat3 k = skew(aa);
  double a, b;
  if (theta2 < 1e-12) {
    // Taylor expansions of sin(x)/x and (1 - cos(x))/x^2.
    a = 1.0 - theta2 / 6.0;
    b = 0.5 - theta2 / 24.0;
  } else {
    const double theta = std::sqrt(theta2);
    a = std::sin(theta) / theta;
    b = (1.0 - std::cos(theta)) / theta2;
  }
  return Mat3::Identity() + a * k + b * k * k;
}

std::array<Mat3, 3> rodrigues_jacobian(const AxisAngle& aa) {
  std::array<Mat3, 3> out;
  const double theta2 = aa.squaredNorm();
  if (theta2 < 1e-14) {
    for (int i = 0; i < 3; ++i) out[i] = skew(Vec3::Unit(i));
    return out;
  }
  const Mat3 r = rodrigues(aa);
  const Mat3 k = skew(aa);
  const Mat3 i_minus_r = Mat3::Identity() - r;
  for (int i = 0; i < 3; ++i) {
    const Vec3 w = aa.cross(i_minus_r.col(i));
    out[i] = (aa[i] * k + skew(w)) * r / theta2;
  }
  return out;
}

Mat3 rotation_y(double angle) {
  const double c = std::cos(angle), s = std::sin(angle);
  Mat3 r;
  r << c, 0, s,
       0, 1, 0,
       -s, 0, c;
  return r;
}

bool is_rotation(const Mat3& r, double tol) {
  if (!r.allFinite()) return false;
  const Mat3 e = r.transpose() * r - Mat3::Identity();
  return e.cwiseAbs().maxCoeff() <= tol && std::abs(r.determinant() - 1.0) <= tol;
}

Track2 project_perspective(const Track3& points, const Camera& camera) {
  Track2 out(points.frames, points.joints);
  for (int t = 0; t < points.frames; ++t) {
    for (int j = 0; j < points.joints; ++j) {
      const Vec3 pc = camera.rotation * points.at(t, j).transpose() + camera.translation;
      if (!(pc.z() > 0.0)) {
        throw Error(ErrorKind::BehindCamera, "frame " + std::to_string(t) + ", joint " + std::to_string(j));
      }
      out.at(t, j) << camera.focal_length * pc.x() / pc.z() + camera.principal_point.x(),
          camera.focal_length * pc.y() / pc.z() + camera.principal_point.y();
    }
  }
  return out;
}

Camera place_camera(const Track3& sequence, Eigen::Vector2i image_size, double margin, double yaw) {
  Camera cam;
  cam.image_size = image_size;
  cam.principal_point = image_size.cast<double>() / 2.0;

  const Row3 mean = sequence.data.colwise().mean();
  // Base view looks down world +z with image x to world -x and image y to world -y.
  Mat3 base;
  base << -1, 0, 0,
          0, -1, 0,
          0, 0, 1;
  cam.rotation = base * rotation_y(yaw).transpose();
  const Vec3 forward = rotation_y(yaw) * Vec3::UnitZ();

  const double radius = sequence.data.rows() == 0
                            ? 0.0
                            : (sequence.data.rowwise() - mean).rowwise().norm().maxCoeff();
  const double default_focal = static_cast<double>(image_size.x());
  if (!(radius > 1e-12)) {
    const Vec3 center = mean.transpose() - forward;
    cam.translation = -cam.rotation * center;
    cam.focal_length = default_focal;
    return cam;
  }

  const Vec3 center = mean.transpose() - 3.0 * radius * forward;
  cam.translation = -cam.rotation * center;

  const double half_w = 0.5 * image_size.x() * (1.0 - margin);
  const double half_h = 0.5 * image_size.y() * (1.0 - margin);
  double focal = std::numeric_limits<double>::infinity();
  for (Eigen::Index r = 0; r < sequence.data.rows(); ++r) {
    const Vec3 pc = cam.rotation * sequence.data.row(r).transpose() + cam.translation;
    const double ax = std::abs(pc.x() / pc.z());
    const double ay = std::abs(pc.y() / pc.z());
    if (ax > 0.0) focal = std::min(focal, half_w / ax);
    if (ay > 0.0) focal = std::min(focal, half_h / ay);
  }
  cam.focal_length = std::isfinite(focal) ? focal : default_focal;
  return cam;
}

RotationSolve rotation_from_covariance(const Mat3& covariance) {
  Eigen::JacobiSVD<Mat3> svd(covariance, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Mat3& u = svd.matrixU();
  const Mat3& v = svd.matrixV();
  const double d = (u * v.transpose()).determinant() < 0.0 ? -1.0 : 1.0;
  Vec3 diag(1.0, 1.0, d);
  RotationSolve out;
  out.rotation = u * diag.asDiagonal() * v.transpose();
  out.basis = v;
  out.lambdas = diag.cwiseProduct(svd.singularValues());
  return out;
}

Mat3 rotation_covariance_vjp(const RotationSolve& solve, const Mat3& grad_rotation) {
  // With dR = R * Omega (Omega skew) and R^T M symmetric at the optimum, Omega in the
  // V basis is (X - X^T)_ij / (l_i + l_j) where X = V^T R^T dM V.
  const Mat3& v = solve.basis;
  const Mat3 c = v.transpose() * grad_rotation.transpose() * solve.rotation * v;
  Mat3 k = Mat3::Zero();
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      if (i == j) continue;
      const double denom = solve.lambdas[i] + solve.lambdas[j];
      if (std::abs(denom) < 1e-300) continue;
      k(i, j) = (c(j, i) - c(i, j)) / denom;
    }
  }
  return solve.rotation * v * k * v.transpose();
}

AlignmentResult solve_procrustes(const Eigen::Ref<const Mat>& target, const Eigen::Ref<const Mat>& source,
                                 bool with_scale) {
  require_shape(target.cols() == 3 && source.cols() == 3 && target.rows() == source.rows(),
                "procrustes clouds must both be Jx3 with equal J");
  if (source.rows() < 3) throw Error(ErrorKind::DegenerateCloud, "fewer than 3 points");

  AlignmentResult out;
  out.target_centroid = target.colwise().mean();
  out.source_centroid = source.colwise().mean();
  const Mat tc = target.rowwise() - out.target_centroid;
  const Mat sc = source.rowwise() - out.source_centroid;

  Eigen::JacobiSVD<Mat> rank_check(sc);
  const Vec3 sv = rank_check.singularValues();
  if (!(sv[0] > 0.0) || sv[1] <= 1e-10 * sv[0]) {
    throw Error(ErrorKind::DegenerateCloud, "centred source has rank < 2");
  }

  const Mat3 m = sc.transpose() * tc;
  const RotationSolve solve = rotation_from_covariance(m);
  out.rotation = solve.rotation;
  if (with_scale) {
    out.scale = solve.lambdas.sum() / sc.squaredNorm();
  }
  out.residual = (tc - out.scale * sc * out.rotation).squaredNorm();
  return out;
}

Mat apply_alignment(const AlignmentResult& a, const Eigen::Ref<const Mat>& source) {
  Mat centred = source.rowwise() - a.source_centroid;
  Mat out = a.scale * centred * a.rotation;
  out.rowwise() += a.target_centroid;
  return out;
}

}  // namespace lift3d::geometry
