#include "lift3d/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>

namespace lift3d::dataset {

using kinematics::KinematicChain;
using kinematics::kNoParent;
using kinematics::PoseAngles;

Track3 compute_joints_from_markers(const VertexTrajectories& v, const VirtualMarkerMap& map) {
  const Track3& verts = v.vertices;
  const int joints = static_cast<int>(map.marker_indices.size());
  Track3 out(verts.frames, joints);
  for (int j = 0; j < joints; ++j) {
    const auto& idx = map.marker_indices[j];
    if (idx.empty()) throw Error(ErrorKind::IndexOutOfRange, "joint " + std::to_string(j) + " has no markers");
    for (int i : idx) {
      if (i < 0 || i >= verts.joints) {
        throw Error(ErrorKind::IndexOutOfRange, "marker index " + std::to_string(i) + " for joint " +
                                                    std::to_string(j) + " exceeds vertex count");
      }
    }
    for (int t = 0; t < verts.frames; ++t) {
      Row3 sum = Row3::Zero();
      for (int i : idx) sum += verts.at(t, i);
      out.at(t, j) = sum / static_cast<double>(idx.size());
    }
  }
  return out;
}

std::string to_string(Topology t) {
  switch (t) {
    case Topology::Quadruped: return "quadruped";
    case Topology::Biped: return "biped";
    case Topology::Custom: return "custom";
  }
  return "custom";
}

Topology topology_from_string(const std::string& s) {
  if (s == "quadruped") return Topology::Quadruped;
  if (s == "biped") return Topology::Biped;
  if (s == "custom") return Topology::Custom;
  throw Error(ErrorKind::InvalidTemplate, "unknown topology '" + s + "'");
}

std::vector<CategoryTemplate> builtin_templates() {
  return {
      {"fox", Topology::Quadruped, 21, 0.8, 0.35, 48, 30.0},
      {"bear", Topology::Quadruped, 25, 1.8, 0.25, 48, 30.0},
      {"chicken", Topology::Biped, 19, 0.5, 0.35, 48, 30.0},
      {"deer", Topology::Quadruped, 29, 1.6, 0.30, 48, 30.0},
      {"rabbit", Topology::Quadruped, 23, 0.5, 0.40, 48, 30.0},
      {"crane", Topology::Biped, 27, 1.2, 0.30, 48, 30.0},
      {"critter", Topology::Custom, 22, 1.0, 0.30, 48, 30.0},
  };
}

CategoryTemplate builtin_template(const std::string& name) {
  for (const auto& t : builtin_templates()) {
    if (t.name == name) return t;
  }
  throw Error(ErrorKind::InvalidTemplate, "unknown category template '" + name + "'");
}

namespace {

struct RigBuilder {
  std::vector<int> parent;
  std::vector<Vec3> offset;
  std::vector<std::string> names;

  int add(const std::string& name, int p, const Vec3& off) {
    parent.push_back(p);
    offset.push_back(off);
    names.push_back(name);
    return static_cast<int>(parent.size()) - 1;
  }

  int chain(const std::string& name, int p, int count, const Vec3& step) {
    int last = p;
    for (int i = 0; i < count; ++i) last = add(name + "_" + std::to_string(i + 1), last, step);
    return last;
  }
};

// Extra joints beyond the base count go first to toes/tips, then alternate
// between the two growable chains.
struct Extras {
  int tips = 0;
  int first = 0;
  int second = 0;
};

Extras distribute(int extra, int max_tips) {
  Extras e;
  e.tips = std::min(extra, max_tips);
  for (int i = 0; i < extra - e.tips; ++i) (i % 2 == 0 ? e.first : e.second)++;
  return e;
}

RigBuilder quadruped(int joints, double bl) {
  const Extras ex = distribute(joints - 19, 4);
  const int spine_n = 2 + ex.first;
  const int tail_n = 2 + ex.second;
  RigBuilder b;
  const int pelvis = b.add("pelvis", kNoParent, Vec3::Zero());
  const int chest = b.chain("spine", pelvis, spine_n, Vec3(0.5 * bl / spine_n, 0.02 * bl, 0.0));
  const int neck = b.add("neck", chest, Vec3(0.15 * bl, 0.12 * bl, 0.0));
  b.add("head", neck, Vec3(0.12 * bl, 0.04 * bl, 0.0));
  b.chain("tail", pelvis, tail_n, Vec3(-0.25 * bl / tail_n, -0.02 * bl, 0.0));
  int tip = 0;
  const char* legs[] = {"front_left", "front_right", "hind_left", "hind_right"};
  for (int l = 0; l < 4; ++l) {
    const double side = (l % 2 == 0) ? 1.0 : -1.0;
    const int base = l < 2 ? chest : pelvis;
    const int hip = b.add(std::string(legs[l]) + "_hip", base, Vec3(0.0, -0.05 * bl, side * 0.1 * bl));
    const int knee = b.add(std::string(legs[l]) + "_knee", hip, Vec3(0.02 * bl, -0.2 * bl, 0.0));
    const int foot = b.add(std::string(legs[l]) + "_foot", knee, Vec3(-0.02 * bl, -0.2 * bl, 0.0));
    if (tip++ < ex.tips) b.add(std::string(legs[l]) + "_toe", foot, Vec3(0.05 * bl, -0.03 * bl, 0.0));
  }
  return b;
}

RigBuilder biped(int joints, double bl) {
  const Extras ex = distribute(joints - 19, 4);
  const int neck_n = 2 + ex.first;
  const int tail_n = 3 + ex.second;
  RigBuilder b;
  const int pelvis = b.add("pelvis", kNoParent, Vec3::Zero());
  const int chest = b.chain("spine", pelvis, 2, Vec3(0.08 * bl, 0.1 * bl, 0.0));
  const int neck = b.chain("neck", chest, neck_n, Vec3(0.06 * bl / neck_n * 2.0, 0.24 * bl / neck_n, 0.0));
  b.add("head", neck, Vec3(0.06 * bl, 0.03 * bl, 0.0));
  b.chain("tail", pelvis, tail_n, Vec3(-0.3 * bl / tail_n, 0.03 * bl, 0.0));
  int tip = 0;
  for (int l = 0; l < 2; ++l) {
    const double side = l == 0 ? 1.0 : -1.0;
    const std::string n = l == 0 ? "left" : "right";
    const int hip = b.add(n + "_hip", pelvis, Vec3(0.0, -0.03 * bl, side * 0.07 * bl));
    const int knee = b.add(n + "_knee", hip, Vec3(0.03 * bl, -0.15 * bl, 0.0));
    const int ankle = b.add(n + "_ankle", knee, Vec3(-0.04 * bl, -0.15 * bl, 0.0));
    if (tip++ < ex.tips) b.add(n + "_toe", ankle, Vec3(0.06 * bl, -0.02 * bl, 0.0));
  }
  for (int l = 0; l < 2; ++l) {
    const double side = l == 0 ? 1.0 : -1.0;
    const std::string n = l == 0 ? "left" : "right";
    const int shoulder = b.add(n + "_shoulder", chest, Vec3(0.0, 0.0, side * 0.1 * bl));
    const int mid = b.add(n + "_wing", shoulder, Vec3(-0.05 * bl, 0.0, side * 0.15 * bl));
    if (tip++ < ex.tips) b.add(n + "_wing_tip", mid, Vec3(-0.08 * bl, 0.0, side * 0.12 * bl));
  }
  return b;
}

RigBuilder random_tree(int joints, double bl, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> length(0.1, 0.3);
  RigBuilder b;
  b.add("joint_0", kNoParent, Vec3::Zero());
  for (int j = 1; j < joints; ++j) {
    std::uniform_int_distribution<int> pick(std::max(0, j - 3), j - 1);
    Vec3 dir(normal(rng), normal(rng), normal(rng));
    if (dir.norm() < 1e-6) dir = Vec3::UnitX();
    b.add("joint_" + std::to_string(j), pick(rng), dir.normalized() * length(rng) * bl);
  }
  return b;
}

SynthesizedRig animate(RigBuilder b, int frames, double fps, double amplitude, double body_length, Rng& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (std::size_t j = 0; j < b.offset.size(); ++j) b.offset[j] *= 0.85 + 0.3 * unit(rng);

  SynthesizedRig rig;
  rig.chain = KinematicChain::from_parents(b.parent, b.offset, b.names);
  const int n = rig.chain.size();
  rig.theta = PoseAngles(frames, n);
  const double two_pi = 2.0 * std::numbers::pi;

  for (int j = 0; j < n; ++j) {
    const bool root = rig.chain.parent[j] == kNoParent;
    for (int axis = 0; axis < 3; ++axis) {
      const double weight = root ? (axis == 1 ? 0.5 : 0.15) : 0.3 + 0.7 * unit(rng);
      for (int k = 0; k < 2; ++k) {
        const double a = amplitude * weight * (k == 0 ? 1.0 : 0.35) * (0.5 + 0.5 * unit(rng));
        const double f = 0.3 + 1.2 * unit(rng);
        const double phase = two_pi * unit(rng);
        for (int t = 0; t < frames; ++t) {
          rig.theta.theta.at(t, j)(axis) += a * std::sin(two_pi * f * t / fps + phase);
        }
      }
    }
  }

  const double speed = amplitude * (0.6 + 1.4 * unit(rng)) * body_length;
  const double bob_f = 0.8 + 1.2 * unit(rng);
  const double bob_phase = two_pi * unit(rng);
  rig.root_path = Mat::Zero(frames, 3);
  for (int t = 0; t < frames; ++t) {
    const double s = t / fps;
    rig.root_path(t, 0) = speed * s;
    rig.root_path(t, 1) = amplitude * 0.05 * body_length * std::sin(two_pi * bob_f * s + bob_phase);
  }
  return rig;
}

}  // namespace

SynthesizedRig synthesize_rig(const CategoryTemplate& tmpl, std::uint64_t seed) {
  if (tmpl.name.empty()) throw Error(ErrorKind::InvalidTemplate, "template has no name");
  if (tmpl.num_joints < kMinTemplateJoints || tmpl.num_joints > kMaxTemplateJoints) {
    throw Error(ErrorKind::InvalidTemplate, "joint count " + std::to_string(tmpl.num_joints) + " outside [19, 29]");
  }
  if (tmpl.frames < 1 || !(tmpl.fps > 0.0) || !(tmpl.body_length > 0.0) || !(tmpl.amplitude >= 0.0)) {
    throw Error(ErrorKind::InvalidTemplate, "template '" + tmpl.name + "' has invalid motion settings");
  }
  Rng rng = make_stream(seed, "rig/" + tmpl.name);
  RigBuilder b;
  switch (tmpl.topology) {
    case Topology::Quadruped: b = quadruped(tmpl.num_joints, tmpl.body_length); break;
    case Topology::Biped: b = biped(tmpl.num_joints, tmpl.body_length); break;
    case Topology::Custom: b = random_tree(tmpl.num_joints, tmpl.body_length, rng); break;
  }
  return animate(std::move(b), tmpl.frames, tmpl.fps, tmpl.amplitude, tmpl.body_length, rng);
}

SynthesizedRig synthesize_random_rig(int joints, int frames, double amplitude, std::uint64_t seed) {
  if (joints < 1 || frames < 1) throw Error(ErrorKind::InvalidTemplate, "random rig needs joints and frames");
  Rng rng = make_stream(seed, "random_rig");
  RigBuilder b = random_tree(joints, 1.0, rng);
  return animate(std::move(b), frames, 30.0, amplitude, 1.0, rng);
}

SatelliteCloud attach_satellites(const KinematicChain& chain, const PoseAngles& theta, const Mat& root_path,
                                 double radius, double jitter, std::uint64_t seed) {
  Rng rng = make_stream(seed, "satellites");
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.5, 1.0);
  const int n = chain.size();
  const int frames = theta.frames();
  std::vector<Vec3> local(3 * n);
  for (auto& o : local) {
    Vec3 d(normal(rng), normal(rng), normal(rng));
    if (d.norm() < 1e-9) d = Vec3::UnitY();
    o = d.normalized() * radius * unit(rng);
  }
  const Track3 joints = kinematics::forward_kinematics(chain, theta, root_path);
  SatelliteCloud out;
  out.vertices.vertices = Track3(frames, 3 * n);
  out.vertices.source_id = "satellites";
  out.markers.marker_indices.resize(n);
  for (int j = 0; j < n; ++j) out.markers.marker_indices[j] = {3 * j, 3 * j + 1, 3 * j + 2};
  for (int t = 0; t < frames; ++t) {
    const auto orient = kinematics::joint_orientations(chain, theta, t);
    for (int j = 0; j < n; ++j) {
      for (int i = 0; i < 3; ++i) {
        const Vec3 noise(normal(rng), normal(rng), normal(rng));
        const Vec3 v = joints.at(t, j).transpose() + orient[j] * local[3 * j + i] + jitter * noise;
        out.vertices.vertices.at(t, 3 * j + i) = v.transpose();
      }
    }
  }
  return out;
}

Track2 add_keypoint_noise(const Track2& keypoints_px, double mean_error_px, std::uint64_t seed) {
  if (mean_error_px < 0.0) throw Error(ErrorKind::Config, "mean_error_px must be non-negative");
  Track2 out = keypoints_px;
  if (mean_error_px == 0.0) return out;
  const double sigma = mean_error_px / std::sqrt(std::numbers::pi / 2.0);
  Rng rng = make_stream(seed, "keypoint_noise");
  std::normal_distribution<double> normal(0.0, sigma);
  for (Eigen::Index i = 0; i < out.data.size(); ++i) out.data.data()[i] += normal(rng);
  return out;
}

NormalizedSequence normalize_sequence(const Track2& keypoints_px, const Presence& presence, const Track3& joints_world,
                                      double world_to_mm) {
  require_shape(presence.frames == keypoints_px.frames && presence.joints == keypoints_px.joints,
                "presence shape mismatch");
  require_shape(joints_world.frames == keypoints_px.frames && joints_world.joints == keypoints_px.joints,
                "2D and 3D sequences differ in shape");
  NormalizedSequence out;
  NormalizationRecord& rec = out.record;
  rec.world_to_mm = world_to_mm;

  const int present = presence.count();
  if (present == 0) throw Error(ErrorKind::DegenerateExtent, "no present keypoints");
  Row2 sum = Row2::Zero();
  for (int t = 0; t < presence.frames; ++t) {
    for (int j = 0; j < presence.joints; ++j) {
      if (presence(t, j)) sum += keypoints_px.at(t, j);
    }
  }
  rec.center_2d = sum / static_cast<double>(present);
  double extent2 = 0.0;
  for (int t = 0; t < presence.frames; ++t) {
    for (int j = 0; j < presence.joints; ++j) {
      if (presence(t, j)) extent2 = std::max(extent2, (keypoints_px.at(t, j) - rec.center_2d).cwiseAbs().maxCoeff());
    }
  }
  if (!(extent2 > 0.0)) throw Error(ErrorKind::DegenerateExtent, "2D keypoints have zero extent");
  rec.scale_2d = extent2;

  const Mat mm = joints_world.data * world_to_mm;
  rec.center_3d = mm.colwise().mean();
  const Mat centred = mm.rowwise() - rec.center_3d;
  const double extent3 = centred.cwiseAbs().maxCoeff();
  if (!(extent3 > 0.0)) throw Error(ErrorKind::DegenerateExtent, "3D joints have zero extent");
  rec.scale_3d = extent3;

  out.keypoints.keypoints = normalize_2d_with(keypoints_px, rec);
  out.keypoints.presence = presence;
  for (int t = 0; t < presence.frames; ++t) {
    for (int j = 0; j < presence.joints; ++j) {
      if (!presence(t, j)) out.keypoints.keypoints.at(t, j).setZero();
    }
  }
  out.skeleton.joints = Track3(joints_world.frames, joints_world.joints);
  out.skeleton.joints.data = centred / extent3;
  return out;
}

Track2 normalize_2d_with(const Track2& pixels, const NormalizationRecord& record) {
  Track2 out = pixels;
  out.data = (pixels.data.rowwise() - record.center_2d) / record.scale_2d;
  return out;
}

Track2 denormalize_2d(const Track2& normalized, const NormalizationRecord& record) {
  Track2 out = normalized;
  out.data = (normalized.data * record.scale_2d).rowwise() + record.center_2d;
  return out;
}

Track3 denormalize_3d_mm(const Track3& normalized, const NormalizationRecord& record) {
  Track3 out = normalized;
  out.data = (normalized.data * record.scale_3d).rowwise() + record.center_3d;
  return out;
}

KeypointSequence2D mask_random_joints(const KeypointSequence2D& kp, double fraction, std::uint64_t seed) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) throw Error(ErrorKind::Config, "mask fraction must be in [0, 1]");
  KeypointSequence2D out = kp;
  const int joints = kp.keypoints.joints;
  const int hidden = static_cast<int>(std::floor(fraction * joints + 1e-9));
  if (hidden == 0) return out;
  Rng rng = make_stream(seed, "mask_joints");
  std::vector<int> order(joints);
  for (int t = 0; t < kp.keypoints.frames; ++t) {
    for (int j = 0; j < joints; ++j) order[j] = j;
    // Partial Fisher-Yates: the first `hidden` entries are a uniform subset.
    for (int i = 0; i < hidden; ++i) {
      std::uniform_int_distribution<int> pick(i, joints - 1);
      std::swap(order[i], order[pick(rng)]);
    }
    for (int i = 0; i < hidden; ++i) {
      out.presence.set(t, order[i], false);
      out.keypoints.at(t, order[i]).setZero();
    }
  }
  return out;
}

Track2 clean_keypoints(const SequenceRecord& seq) {
  Track3 world = denormalize_3d_mm(seq.skeleton.joints, seq.record);
  world.data /= seq.record.world_to_mm;
  const Track2 px = geometry::project_perspective(world, seq.observed.camera);
  return normalize_2d_with(px, seq.record);
}

SplitManifest split_dataset(const std::vector<SequenceRef>& sequences, double train_fraction, std::uint64_t seed) {
  if (sequences.empty()) throw Error(ErrorKind::EmptyDataset, "no sequences to split");
  std::map<std::string, std::vector<std::string>> by_category;
  for (const auto& s : sequences) by_category[s.category].push_back(s.sequence_id);
  SplitManifest m;
  m.seed = seed;
  for (auto& [category, ids] : by_category) {
    std::sort(ids.begin(), ids.end());
    Rng rng = make_stream(seed, "split/" + category);
    std::shuffle(ids.begin(), ids.end(), rng);
    const int n = static_cast<int>(ids.size());
    int n_train = n < 2 ? n : static_cast<int>(std::lround(train_fraction * n));
    n_train = std::clamp(n_train, 0, n);
    auto& train = m.train[category];
    auto& test = m.test[category];
    train.assign(ids.begin(), ids.begin() + n_train);
    test.assign(ids.begin() + n_train, ids.end());
    std::sort(train.begin(), train.end());
    std::sort(test.begin(), test.end());
  }
  return m;
}

SequenceRecord generate_sequence(const CategoryTemplate& tmpl, const GenerationConfig& config, std::uint64_t seed,
                                 const std::string& sequence_id) {
  CategoryTemplate t = tmpl;
  t.frames = config.frames;
  const SynthesizedRig rig = synthesize_rig(t, seed);

  const SatelliteCloud cloud = attach_satellites(rig.chain, rig.theta, rig.root_path, config.satellite_radius,
                                                 config.satellite_jitter, seed);
  const Track3 marker_joints = compute_joints_from_markers(cloud.vertices, cloud.markers);
  const kinematics::IkResult ik = kinematics::refine_inverse_kinematics(rig.chain, marker_joints, config.ik);

  Rng cam_rng = make_stream(seed, "camera");
  std::uniform_real_distribution<double> yaw(0.0, 2.0 * std::numbers::pi);
  const geometry::Camera camera = geometry::place_camera(ik.joints, config.image_size, config.camera_margin, yaw(cam_rng));
  const Track2 exact = geometry::project_perspective(ik.joints, camera);
  const Track2 noisy = add_keypoint_noise(exact, config.noise_px, seed);

  const Presence presence(exact.frames, exact.joints, true);
  NormalizedSequence norm = normalize_sequence(noisy, presence, ik.joints, config.world_to_mm);

  SequenceRecord rec;
  rec.record = norm.record;
  rec.observed = std::move(norm.keypoints);
  rec.observed.camera = camera;
  rec.observed.noise_sigma_px = config.noise_px / std::sqrt(std::numbers::pi / 2.0);
  rec.skeleton = std::move(norm.skeleton);
  rec.skeleton.chain = ik.chain;
  rec.skeleton.category = tmpl.name;
  rec.skeleton.sequence_id = sequence_id;
  rec.skeleton.fps = tmpl.fps;
  return rec;
}

}  // namespace lift3d::dataset
