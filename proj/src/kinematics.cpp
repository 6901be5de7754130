#include "lift3d/kinematics.hpp"

#include "lift3d/geometry.hpp"

#include <cmath>
#include <limits>

namespace lift3d::kinematics {

namespace {

struct FrameState {
  std::vector<Vec3> position;
  std::vector<Mat3> local;        // R(theta_j)
  std::vector<Mat3> accumulated;  // parent accumulation times local
};

void check_shapes(const KinematicChain& chain, const PoseAngles& theta, const Mat& root_position) {
  require_shape(theta.joints() == chain.size(), "theta joint count does not match chain");
  require_shape(root_position.rows() == theta.frames() && root_position.cols() == 3,
                "root_position must be T x 3");
  require_shape(static_cast<int>(chain.rest_offset.size()) == chain.size(), "rest offsets do not match chain");
}

FrameState solve_frame(const KinematicChain& chain, const std::vector<int>& order, const PoseAngles& theta,
                       const Mat& root_position, int t) {
  const int n = chain.size();
  FrameState s;
  s.position.resize(n);
  s.local.resize(n);
  s.accumulated.resize(n);
  for (int j : order) {
    s.local[j] = geometry::rodrigues(theta.theta.at(t, j).transpose());
    const int p = chain.parent[j];
    if (p == kNoParent) {
      s.accumulated[j] = s.local[j];
      s.position[j] = root_position.row(t).transpose();
    } else {
      s.accumulated[j] = s.accumulated[p] * s.local[j];
      s.position[j] = s.position[p] + s.accumulated[p] * chain.rest_offset[j];
    }
  }
  return s;
}

Vec3 unit_or_zero(const Vec3& d) {
  const double n = d.norm();
  return n > 0.0 ? Vec3(d / n) : Vec3::Zero();
}

}  // namespace

int KinematicChain::root() const {
  for (int j = 0; j < size(); ++j) {
    if (parent[j] == kNoParent) return j;
  }
  return kNoParent;
}

std::vector<int> KinematicChain::topological_order() const {
  const int n = size();
  std::vector<std::vector<int>> children(n);
  int root_joint = kNoParent;
  for (int j = 0; j < n; ++j) {
    if (parent[j] == kNoParent) {
      root_joint = j;
    } else if (parent[j] >= 0 && parent[j] < n) {
      children[parent[j]].push_back(j);
    }
  }
  std::vector<int> order;
  if (root_joint == kNoParent) return order;
  order.reserve(n);
  order.push_back(root_joint);
  for (std::size_t i = 0; i < order.size(); ++i) {
    for (int c : children[order[i]]) order.push_back(c);
  }
  return order;
}

void KinematicChain::validate() const {
  const int n = size();
  require_shape(n >= 1, "chain has no joints");
  require_shape(static_cast<int>(rest_offset.size()) == n, "rest offsets do not match joint count");
  require_shape(joint_names.empty() || static_cast<int>(joint_names.size()) == n, "joint names do not match");
  int roots = 0;
  for (int j = 0; j < n; ++j) {
    if (parent[j] == kNoParent) {
      ++roots;
    } else {
      require_shape(parent[j] >= 0 && parent[j] < n && parent[j] != j, "invalid parent index");
      require_shape(rest_offset[j].norm() > 0.0, "zero-length bone at joint " + std::to_string(j));
    }
  }
  require_shape(roots == 1, "chain must have exactly one root");
  require_shape(static_cast<int>(topological_order().size()) == n, "parent links contain a cycle");
  require_shape(adjacency.rows() == n && adjacency.cols() == n, "adjacency has wrong shape");
  require_shape(adjacency == adjacency_from_parents(parent), "adjacency inconsistent with parents");
}

Eigen::MatrixXi adjacency_from_parents(const std::vector<int>& parent) {
  const int n = static_cast<int>(parent.size());
  Eigen::MatrixXi a = Eigen::MatrixXi::Zero(n, n);
  for (int j = 0; j < n; ++j) {
    const int p = parent[j];
    if (p >= 0 && p < n && p != j) {
      a(j, p) = 1;
      a(p, j) = 1;
    }
  }
  return a;
}

KinematicChain KinematicChain::from_parents(std::vector<int> parent, std::vector<Vec3> rest_offset,
                                            std::vector<std::string> names) {
  KinematicChain c;
  c.adjacency = adjacency_from_parents(parent);
  c.parent = std::move(parent);
  c.rest_offset = std::move(rest_offset);
  if (names.empty()) {
    for (int j = 0; j < c.size(); ++j) names.push_back("joint_" + std::to_string(j));
  }
  c.joint_names = std::move(names);
  return c;
}

Track3 forward_kinematics(const KinematicChain& chain, const PoseAngles& theta, const Mat& root_position) {
  check_shapes(chain, theta, root_position);
  const auto order = chain.topological_order();
  Track3 out(theta.frames(), chain.size());
  for (int t = 0; t < theta.frames(); ++t) {
    const FrameState s = solve_frame(chain, order, theta, root_position, t);
    for (int j = 0; j < chain.size(); ++j) out.at(t, j) = s.position[j].transpose();
  }
  return out;
}

std::vector<Mat3> joint_orientations(const KinematicChain& chain, const PoseAngles& theta, int t) {
  require_shape(theta.joints() == chain.size() && t >= 0 && t < theta.frames(), "theta does not match chain");
  const Mat root = Mat::Zero(theta.frames(), 3);
  return solve_frame(chain, chain.topological_order(), theta, root, t).accumulated;
}

double ik_objective(const KinematicChain& chain, const PoseAngles& theta, const Mat& root_position,
                    const Track3& target, double smoothness) {
  const Track3 fk = forward_kinematics(chain, theta, root_position);
  require_shape(target.frames == fk.frames && target.joints == fk.joints, "target shape mismatch");
  double value = (fk.data - target.data).rowwise().norm().sum();
  for (int t = 1; t < fk.frames; ++t) {
    value += smoothness * (fk.frame(t) - fk.frame(t - 1)).rowwise().norm().sum();
  }
  return value;
}

IkGradient ik_objective_gradient(const KinematicChain& chain, const PoseAngles& theta, const Mat& root_position,
                                 const Track3& target, double smoothness) {
  check_shapes(chain, theta, root_position);
  require_shape(target.frames == theta.frames() && target.joints == chain.size(), "target shape mismatch");
  const int frames = theta.frames();
  const int n = chain.size();
  const auto order = chain.topological_order();

  std::vector<FrameState> states;
  states.reserve(frames);
  Track3 fk(frames, n);
  for (int t = 0; t < frames; ++t) {
    states.push_back(solve_frame(chain, order, theta, root_position, t));
    for (int j = 0; j < n; ++j) fk.at(t, j) = states.back().position[j].transpose();
  }

  IkGradient g;
  g.d_theta = Track3(frames, n);
  g.d_root = Mat::Zero(frames, 3);
  Track3 d_pos(frames, n);
  for (int t = 0; t < frames; ++t) {
    for (int j = 0; j < n; ++j) {
      const Vec3 d = (fk.at(t, j) - target.at(t, j)).transpose();
      g.value += d.norm();
      d_pos.at(t, j) += unit_or_zero(d).transpose();
      if (t > 0) {
        const Vec3 v = (fk.at(t, j) - fk.at(t - 1, j)).transpose();
        g.value += smoothness * v.norm();
        const Row3 u = smoothness * unit_or_zero(v).transpose();
        d_pos.at(t, j) += u;
        d_pos.at(t - 1, j) -= u;
      }
    }
  }

  std::vector<Vec3> gp(n);
  std::vector<Mat3> ga(n);
  for (int t = 0; t < frames; ++t) {
    const FrameState& s = states[t];
    for (int j = 0; j < n; ++j) {
      gp[j] = d_pos.at(t, j).transpose();
      ga[j].setZero();
    }
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      const int j = *it;
      const int p = chain.parent[j];
      Mat3 g_local;
      if (p == kNoParent) {
        g_local = ga[j];
        g.d_root.row(t) = gp[j].transpose();
      } else {
        gp[p] += gp[j];
        ga[p] += gp[j] * chain.rest_offset[j].transpose() + ga[j] * s.local[j].transpose();
        g_local = s.accumulated[p].transpose() * ga[j];
      }
      const auto jac = geometry::rodrigues_jacobian(theta.theta.at(t, j).transpose());
      for (int i = 0; i < 3; ++i) g.d_theta.at(t, j)(i) = g_local.cwiseProduct(jac[i]).sum();
    }
  }
  return g;
}

KinematicChain with_rest_offsets_from(const KinematicChain& chain, const Track3& joints, int frame) {
  require_shape(joints.joints == chain.size() && frame >= 0 && frame < joints.frames, "joints do not match chain");
  KinematicChain out = chain;
  for (int j = 0; j < chain.size(); ++j) {
    const int p = chain.parent[j];
    out.rest_offset[j] = p == kNoParent ? Vec3::Zero() : Vec3((joints.at(frame, j) - joints.at(frame, p)).transpose());
  }
  return out;
}

IkResult refine_inverse_kinematics(const KinematicChain& chain, const Track3& target, const IkConfig& config) {
  require_shape(target.joints == chain.size() && target.frames >= 1, "target does not match chain");
  require_shape(config.learning_rate > 0.0 && config.max_iters >= 1, "invalid IK config");

  IkResult r;
  r.chain = with_rest_offsets_from(chain, target, 0);
  r.chain.validate();
  const int frames = target.frames;
  const int n = chain.size();
  const int root = r.chain.root();

  PoseAngles theta(frames, n);
  Mat root_pos(frames, 3);
  for (int t = 0; t < frames; ++t) root_pos.row(t) = target.at(t, root);

  Mat m_theta = Mat::Zero(frames * n, 3), v_theta = Mat::Zero(frames * n, 3);
  Mat m_root = Mat::Zero(frames, 3), v_root = Mat::Zero(frames, 3);
  const double eps = 1e-8;

  PoseAngles best_theta = theta;
  Mat best_root = root_pos;
  double best = std::numeric_limits<double>::infinity();
  std::vector<double> best_history;

  for (int it = 0; it < config.max_iters; ++it) {
    const IkGradient g = ik_objective_gradient(r.chain, theta, root_pos, target, config.smoothness_weight);
    if (!std::isfinite(g.value)) throw Error(ErrorKind::NonFinite, "IK objective is not finite");
    if (it == 0) r.initial_objective = g.value;
    if (g.value > 10.0 * r.initial_objective && g.value > 0.0) {
      throw Error(ErrorKind::Diverged, "IK objective exceeded 10x its initial value");
    }
    r.trace.push_back(g.value);
    if (g.value < best) {
      best = g.value;
      best_theta = theta;
      best_root = root_pos;
    }
    best_history.push_back(best);
    const int w = config.convergence_window;
    if (it >= w) {
      const double before = best_history[it - w];
      if (before - best < config.convergence_tol * std::max(std::abs(before), 1e-300)) break;
    }
    if (best == 0.0) break;

    const double b1 = config.adam_beta1, b2 = config.adam_beta2;
    const double c1 = 1.0 - std::pow(b1, it + 1), c2 = 1.0 - std::pow(b2, it + 1);
    m_theta = b1 * m_theta + (1 - b1) * g.d_theta.data;
    v_theta = b2 * v_theta + (1 - b2) * g.d_theta.data.cwiseAbs2();
    theta.theta.data.array() -=
        config.learning_rate * (m_theta.array() / c1) / ((v_theta.array() / c2).sqrt() + eps);
    if (config.root_translation_free) {
      m_root = b1 * m_root + (1 - b1) * g.d_root;
      v_root = b2 * v_root + (1 - b2) * g.d_root.cwiseAbs2();
      root_pos.array() -= config.learning_rate * (m_root.array() / c1) / ((v_root.array() / c2).sqrt() + eps);
    }
  }

  r.theta = std::move(best_theta);
  r.root_position = std::move(best_root);
  r.joints = forward_kinematics(r.chain, r.theta, r.root_position);
  r.final_objective = best;
  return r;
}

Mat bone_lengths(const KinematicChain& chain, const Track3& joints) {
  require_shape(joints.joints == chain.size(), "joints do not match chain");
  Mat out = Mat::Zero(joints.frames, chain.size());
  for (int t = 0; t < joints.frames; ++t) {
    for (int j = 0; j < chain.size(); ++j) {
      const int p = chain.parent[j];
      if (p != kNoParent) out(t, j) = (joints.at(t, j) - joints.at(t, p)).norm();
    }
  }
  return out;
}

}  // namespace lift3d::kinematics
