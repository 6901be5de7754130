#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace lift3d {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;
using Mat3 = Eigen::Matrix3d;
using Vec3 = Eigen::Vector3d;
using Vec2 = Eigen::Vector2d;
using Row3 = Eigen::RowVector3d;
using Row2 = Eigen::RowVector2d;

/// Failure categories. The CLI maps InvalidInput-class errors to exit code 2.
enum class ErrorKind {
  DegenerateCloud,
  BehindCamera,
  ShapeMismatch,
  Diverged,
  IndexOutOfRange,
  InvalidTemplate,
  DegenerateExtent,
  EmptyDataset,
  TooManyJoints,
  DegenerateFrame,
  DegenerateSequence,
  TooShort,
  NonFinite,
  Format,
  Config,
  Io,
};

std::string_view to_string(ErrorKind kind);

/// True for errors caused by bad user input (files, configs, joint counts).
bool is_input_error(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind), detail_(what) {}

  ErrorKind kind() const noexcept { return kind_; }
  /// Message without the kind prefix.
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorKind kind_;
  std::string detail_;
};

/// Per-token 3D trajectory storage: row `t * joints + j` holds joint j at frame t.
/// The same frame-major layout is used by the lifting network's token matrix.
struct Track3 {
  int frames = 0;
  int joints = 0;
  Mat data;  // (frames * joints) x 3

  Track3() = default;
  Track3(int t, int j) : frames(t), joints(j), data(Mat::Zero(t * j, 3)) {}

  auto frame(int t) { return data.middleRows(t * joints, joints); }
  auto frame(int t) const { return data.middleRows(t * joints, joints); }
  auto at(int t, int j) { return data.row(t * joints + j); }
  auto at(int t, int j) const { return data.row(t * joints + j); }

  bool operator==(const Track3& o) const {
    return frames == o.frames && joints == o.joints && data == o.data;
  }
};

struct Track2 {
  int frames = 0;
  int joints = 0;
  Mat data;  // (frames * joints) x 2

  Track2() = default;
  Track2(int t, int j) : frames(t), joints(j), data(Mat::Zero(t * j, 2)) {}

  auto frame(int t) { return data.middleRows(t * joints, joints); }
  auto frame(int t) const { return data.middleRows(t * joints, joints); }
  auto at(int t, int j) { return data.row(t * joints + j); }
  auto at(int t, int j) const { return data.row(t * joints + j); }

  bool operator==(const Track2& o) const {
    return frames == o.frames && joints == o.joints && data == o.data;
  }
};

/// Frame x joint 0/1 presence flags, stored row-major (frame-major) like tracks.
struct Presence {
  int frames = 0;
  int joints = 0;
  std::vector<std::uint8_t> flags;

  Presence() = default;
  Presence(int t, int j, bool value = true) : frames(t), joints(j), flags(std::size_t(t) * j, value ? 1 : 0) {}

  bool operator()(int t, int j) const { return flags[std::size_t(t) * joints + j] != 0; }
  void set(int t, int j, bool v) { flags[std::size_t(t) * joints + j] = v ? 1 : 0; }
  int count() const;
  bool operator==(const Presence& o) const = default;
};

using Rng = std::mt19937_64;

/// Derives an independent generator for a named sub-stream of a root seed.
Rng make_stream(std::uint64_t root_seed, std::string_view name);

/// Draws a fresh 64-bit seed from a generator (for handing seeds to sub-components).
inline std::uint64_t draw_seed(Rng& rng) { return rng(); }

void require_shape(bool ok, const std::string& what);

/// Runs fn(i) for every i in [0, n) on up to `jobs` worker threads. Indices are
/// handed out in order; the exception of the lowest failing index is rethrown.
void parallel_for(int n, int jobs, const std::function<void(int)>& fn);

}  // namespace lift3d
