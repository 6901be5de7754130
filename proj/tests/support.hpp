#pragma once

#include "lift3d/core.hpp"

#include <Eigen/Geometry>

#include <cmath>
#include <random>

namespace lift3d::test {

inline Mat random_cloud(Rng& rng, int rows, int cols = 3, double spread = 1.0) {
  std::normal_distribution<double> n(0.0, spread);
  Mat m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = n(rng);
  return m;
}

// Uniform on SO(3) via a normalised Gaussian quaternion.
inline Mat3 random_rotation(Rng& rng) {
  std::normal_distribution<double> n;
  Eigen::Quaterniond q(n(rng), n(rng), n(rng), n(rng));
  q.normalize();
  return q.toRotationMatrix();
}

inline Track3 random_track3(Rng& rng, int frames, int joints, double spread = 1.0) {
  Track3 t(frames, joints);
  t.data = random_cloud(rng, frames * joints, 3, spread);
  return t;
}

inline Track2 random_track2(Rng& rng, int frames, int joints, double spread = 1.0) {
  Track2 t(frames, joints);
  t.data = random_cloud(rng, frames * joints, 2, spread);
  return t;
}

inline double max_abs_diff(const Mat& a, const Mat& b) { return (a - b).cwiseAbs().maxCoeff(); }

}  // namespace lift3d::test
