#include "lift3d/metrics.hpp"

#include <cmath>
#include <regex>
#include <sstream>

namespace lift3d::metrics {

namespace {

struct FrameCloud {
  Mat target;
  Mat source;
  std::vector<int> joints;
};

FrameCloud present_rows(const Track3& y, const Track3& y_canon, const Presence& mask, int t) {
  FrameCloud c;
  for (int j = 0; j < y.joints; ++j) {
    if (mask(t, j)) c.joints.push_back(j);
  }
  const int n = static_cast<int>(c.joints.size());
  c.target.resize(n, 3);
  c.source.resize(n, 3);
  for (int i = 0; i < n; ++i) {
    c.target.row(i) = y.at(t, c.joints[i]);
    c.source.row(i) = y_canon.at(t, c.joints[i]);
  }
  return c;
}

void check_shapes(const Track3& y, const Track3& y_canon, const Presence& mask) {
  require_shape(y.frames == y_canon.frames && y.joints == y_canon.joints, "prediction and labels differ in shape");
  require_shape(mask.frames == y.frames && mask.joints == y.joints, "mask shape mismatch");
}

}  // namespace

Presence full_mask(int frames, int joints) { return Presence(frames, joints, true); }

double mean_joint_error(const Track3& y, const Track3& y_hat, const Presence& mask) {
  check_shapes(y, y_hat, mask);
  double sum = 0.0;
  int count = 0;
  for (int t = 0; t < y.frames; ++t) {
    for (int j = 0; j < y.joints; ++j) {
      if (!mask(t, j)) continue;
      sum += (y.at(t, j) - y_hat.at(t, j)).norm();
      ++count;
    }
  }
  return count > 0 ? sum / count : 0.0;
}

double mean_velocity_error(const Track3& y, const Track3& y_hat, const Presence& mask) {
  check_shapes(y, y_hat, mask);
  if (y.frames < 2) throw Error(ErrorKind::TooShort, "velocity error needs at least 2 frames");
  double sum = 0.0;
  int count = 0;
  for (int t = 1; t < y.frames; ++t) {
    for (int j = 0; j < y.joints; ++j) {
      if (!mask(t, j) || !mask(t - 1, j)) continue;
      sum += ((y.at(t, j) - y.at(t - 1, j)) - (y_hat.at(t, j) - y_hat.at(t - 1, j))).norm();
      ++count;
    }
  }
  return count > 0 ? sum / count : 0.0;
}

double fa_mpjpe(const Track3& y, const Track3& y_canon, const Presence& mask) {
  check_shapes(y, y_canon, mask);
  Track3 aligned(y.frames, y.joints);
  for (int t = 0; t < y.frames; ++t) {
    const FrameCloud c = present_rows(y, y_canon, mask, t);
    if (c.joints.empty()) continue;
    geometry::AlignmentResult a;
    try {
      a = geometry::solve_procrustes(c.target, c.source, true);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::DegenerateCloud) throw;
      throw Error(ErrorKind::DegenerateFrame, "frame " + std::to_string(t) + ": " + e.what());
    }
    const Mat out = geometry::apply_alignment(a, c.source);
    for (std::size_t i = 0; i < c.joints.size(); ++i) aligned.at(t, c.joints[i]) = out.row(i);
  }
  return mean_joint_error(y, aligned, mask);
}

Track3 sequence_align(const Track3& y, const Track3& y_canon, const Presence& mask,
                      const SequenceAlignmentOptions& options) {
  check_shapes(y, y_canon, mask);
  const int n = mask.count();
  if (n < 3) throw Error(ErrorKind::DegenerateSequence, "fewer than 3 present joints in the sequence");

  Mat target(n, 3);
  Mat source(n, 3);
  std::vector<Row3> target_centroid(y.frames, Row3::Zero());
  std::vector<Row3> source_centroid(y.frames, Row3::Zero());
  if (options.whole_sequence_centering) {
    Row3 ts = Row3::Zero();
    Row3 ss = Row3::Zero();
    for (int t = 0; t < y.frames; ++t) {
      for (int j = 0; j < y.joints; ++j) {
        if (!mask(t, j)) continue;
        ts += y.at(t, j);
        ss += y_canon.at(t, j);
      }
    }
    std::fill(target_centroid.begin(), target_centroid.end(), ts / n);
    std::fill(source_centroid.begin(), source_centroid.end(), ss / n);
  } else {
    for (int t = 0; t < y.frames; ++t) {
      int k = 0;
      for (int j = 0; j < y.joints; ++j) {
        if (!mask(t, j)) continue;
        target_centroid[t] += y.at(t, j);
        source_centroid[t] += y_canon.at(t, j);
        ++k;
      }
      if (k > 0) {
        target_centroid[t] /= k;
        source_centroid[t] /= k;
      }
    }
  }
  int r = 0;
  for (int t = 0; t < y.frames; ++t) {
    for (int j = 0; j < y.joints; ++j) {
      if (!mask(t, j)) continue;
      target.row(r) = y.at(t, j) - target_centroid[t];
      source.row(r) = y_canon.at(t, j) - source_centroid[t];
      ++r;
    }
  }
  geometry::AlignmentResult a;
  try {
    a = geometry::solve_procrustes(target, source, options.with_scale);
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::DegenerateCloud) throw;
    throw Error(ErrorKind::DegenerateSequence, e.what());
  }
  // The stacked clouds are already centred, so only the rotation and scale matter.
  Track3 out(y.frames, y.joints);
  for (int t = 0; t < y.frames; ++t) {
    for (int j = 0; j < y.joints; ++j) {
      if (!mask(t, j)) continue;
      out.at(t, j) = a.scale * (y_canon.at(t, j) - source_centroid[t]) * a.rotation + target_centroid[t];
    }
  }
  return out;
}

double sa_mpjpe(const Track3& y, const Track3& y_canon, const Presence& mask, const SequenceAlignmentOptions& options) {
  return mean_joint_error(y, sequence_align(y, y_canon, mask, options), mask);
}

double sa_mpve(const Track3& y, const Track3& y_canon, const Presence& mask, const SequenceAlignmentOptions& options) {
  check_shapes(y, y_canon, mask);
  if (y.frames < 2) throw Error(ErrorKind::TooShort, "SA-MPVE needs at least 2 frames");
  return mean_velocity_error(y, sequence_align(y, y_canon, mask, options), mask);
}

model::LiftInput make_lift_input(const dataset::SequenceRecord& seq, const dataset::KeypointSequence2D& inputs) {
  model::LiftInput in;
  in.keypoints = inputs.keypoints;
  in.presence = inputs.presence;
  in.adjacency = seq.skeleton.chain.adjacency;
  return in;
}

Track3 ModelLifter::predict(const dataset::SequenceRecord& seq, const dataset::KeypointSequence2D& inputs) const {
  return model::lift(*model_, make_lift_input(seq, inputs));
}

Track3 GroundTruthLifter::predict(const dataset::SequenceRecord& seq, const dataset::KeypointSequence2D&) const {
  return seq.skeleton.joints;
}

Track3 PredictionLifter::predict(const dataset::SequenceRecord& seq, const dataset::KeypointSequence2D&) const {
  const auto it = predictions_.find(seq.skeleton.sequence_id);
  if (it == predictions_.end()) {
    throw Error(ErrorKind::Io, "no prediction for sequence '" + seq.skeleton.sequence_id + "'");
  }
  require_shape(it->second.frames == seq.frames() && it->second.joints == seq.joints(),
                "prediction for '" + seq.skeleton.sequence_id + "' has the wrong shape");
  return it->second;
}

Scenario Scenario::parse(const std::string& text) {
  static const std::regex occluded(R"(occluded\(\s*([0-9]*\.?[0-9]+(?:[eE][-+]?[0-9]+)?)\s*\))");
  static const std::regex holdout(R"(holdout\(\s*([A-Za-z0-9_\-]+)\s*\))");
  Scenario s;
  std::smatch m;
  if (text == "clean") {
    s.kind = Kind::Clean;
  } else if (text == "noisy") {
    s.kind = Kind::Noisy;
  } else if (text == "unseen_rig") {
    s.kind = Kind::UnseenRig;
  } else if (std::regex_match(text, m, occluded)) {
    s.kind = Kind::Occluded;
    s.fraction = std::stod(m[1].str());
    if (s.fraction > 1.0) throw Error(ErrorKind::Config, "occlusion fraction must be in [0, 1]");
  } else if (std::regex_match(text, m, holdout)) {
    s.kind = Kind::Holdout;
    s.category = m[1].str();
  } else {
    throw Error(ErrorKind::Config, "unknown scenario '" + text + "'");
  }
  return s;
}

std::string Scenario::label() const {
  switch (kind) {
    case Kind::Clean: return "clean";
    case Kind::Noisy: return "noisy";
    case Kind::UnseenRig: return "unseen_rig";
    case Kind::Holdout: return "holdout(" + category + ")";
    case Kind::Occluded: {
      std::ostringstream os;
      os << "occluded(" << fraction << ")";
      return os.str();
    }
  }
  return "noisy";
}

dataset::KeypointSequence2D scenario_inputs(const dataset::SequenceRecord& seq, const Scenario& scenario,
                                            std::uint64_t seed) {
  if (scenario.kind != Scenario::Kind::Clean && scenario.kind != Scenario::Kind::Occluded) return seq.observed;
  dataset::KeypointSequence2D clean = seq.observed;
  clean.keypoints = dataset::clean_keypoints(seq);
  clean.presence = Presence(seq.frames(), seq.joints(), true);
  clean.noise_sigma_px = 0.0;
  if (scenario.kind == Scenario::Kind::Clean) return clean;
  Rng rng = make_stream(seed, "occlusion/" + seq.skeleton.sequence_id);
  return dataset::mask_random_joints(clean, scenario.fraction, draw_seed(rng));
}

std::vector<const dataset::SequenceRecord*> scenario_sequences(const std::vector<dataset::SequenceRecord>& pool,
                                                               const Scenario& scenario, int max_train_joints) {
  std::vector<const dataset::SequenceRecord*> out;
  for (const auto& s : pool) {
    if (scenario.kind == Scenario::Kind::Holdout && s.skeleton.category != scenario.category) continue;
    if (scenario.kind == Scenario::Kind::UnseenRig && s.joints() <= max_train_joints) continue;
    out.push_back(&s);
  }
  return out;
}

MetricReport evaluate(const Lifter& lifter, const std::vector<dataset::SequenceRecord>& pool,
                      const Scenario& scenario, const EvalOptions& options) {
  const auto selected = scenario_sequences(pool, scenario, options.max_train_joints);
  if (selected.empty()) throw Error(ErrorKind::EmptyDataset, "scenario " + scenario.label() + " selects no sequences");

  MetricReport report;
  report.scenario = scenario.label();
  report.per_sequence.resize(selected.size());
  parallel_for(static_cast<int>(selected.size()), options.jobs, [&](int i) {
    const dataset::SequenceRecord& seq = *selected[i];
    const auto inputs = scenario_inputs(seq, scenario, options.seed);
    const Track3 pred = lifter.predict(seq, inputs);
    const Presence mask = full_mask(seq.frames(), seq.joints());
    const double mm = seq.record.scale_3d;
    SequenceMetrics& m = report.per_sequence[i];
    m.sequence_id = seq.skeleton.sequence_id;
    m.category = seq.skeleton.category;
    m.frames = seq.frames();
    m.joints = seq.joints();
    m.fa_mpjpe = mm * fa_mpjpe(seq.skeleton.joints, pred, mask);
    m.sa_mpjpe = mm * sa_mpjpe(seq.skeleton.joints, pred, mask, options.alignment);
    m.sa_mpve = seq.frames() >= 2 ? mm * sa_mpve(seq.skeleton.joints, pred, mask, options.alignment) : 0.0;
  });

  for (const auto& m : report.per_sequence) {
    report.fa_mpjpe += m.fa_mpjpe;
    report.sa_mpjpe += m.sa_mpjpe;
    report.sa_mpve += m.sa_mpve;
    report.frame_count += m.frames;
    CategoryMetrics& c = report.per_category[m.category];
    c.sequences += 1;
    c.fa_mpjpe += m.fa_mpjpe;
    c.sa_mpjpe += m.sa_mpjpe;
    c.sa_mpve += m.sa_mpve;
  }
  report.sequence_count = static_cast<int>(report.per_sequence.size());
  report.fa_mpjpe /= report.sequence_count;
  report.sa_mpjpe /= report.sequence_count;
  report.sa_mpve /= report.sequence_count;
  for (auto& [name, c] : report.per_category) {
    c.fa_mpjpe /= c.sequences;
    c.sa_mpjpe /= c.sequences;
    c.sa_mpve /= c.sequences;
  }
  return report;
}

}  // namespace lift3d::metrics
