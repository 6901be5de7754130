#include "lift3d/cli.hpp"

#include "lift3d/config.hpp"
#include "lift3d/io.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <set>

namespace lift3d::cli {

namespace {

namespace fs = std::filesystem;
using io::Json;

struct GlobalOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
  int jobs = 1;
};

struct Context {
  config::RunConfig config;
  fs::path out_dir;
  int jobs = 1;
  std::ostream* out = nullptr;
};

Context make_context(const GlobalOptions& g, const std::string& command, std::ostream& out) {
  Context c;
  if (!g.config_path.empty()) c.config = config::load_run_config(g.config_path);
  if (g.seed) c.config.seed = *g.seed;
  if (g.jobs < 1) throw Error(ErrorKind::Config, "--jobs must be at least 1");
  c.jobs = g.jobs;
  if (!g.out.empty()) {
    c.out_dir = g.out;
  } else if (!c.config.paths.output_dir.empty()) {
    c.out_dir = c.config.paths.output_dir;
  } else if (const char* root = std::getenv(kOutputRootEnv); root && *root) {
    c.out_dir = fs::path(root) / command;
  } else {
    c.out_dir = fs::path("lift3d_runs") / command;
  }
  c.out = &out;
  return c;
}

void echo_config(const Context& c) { io::write_json(c.out_dir / "config.json", config::to_json(c.config)); }

fs::path dataset_dir(const Context& c, const std::string& flag) {
  const fs::path dir = !flag.empty() ? fs::path(flag) : fs::path(c.config.paths.dataset_dir);
  if (!dir.empty()) {
    if (!fs::is_directory(dir)) throw Error(ErrorKind::Config, "dataset directory '" + dir.string() + "' does not exist");
    return dir;
  }
  throw Error(ErrorKind::Config, "no dataset directory (use --dataset or paths.dataset_dir)");
}

struct LoadedDataset {
  dataset::SplitManifest manifest;
  std::map<std::string, dataset::SequenceRecord> sequences;
};

LoadedDataset load_dataset(const fs::path& dir, int jobs) {
  LoadedDataset d;
  d.manifest = io::manifest_from_json(io::read_json(dir / "manifest.json"), (dir / "manifest.json").string());
  std::vector<std::string> ids;
  for (const auto* split : {&d.manifest.train, &d.manifest.test}) {
    for (const auto& [cat, list] : *split) ids.insert(ids.end(), list.begin(), list.end());
  }
  std::vector<dataset::SequenceRecord> records(ids.size());
  parallel_for(static_cast<int>(ids.size()), jobs,
               [&](int i) { records[i] = io::read_sequence(dir / "sequences" / (ids[i] + ".json")); });
  for (std::size_t i = 0; i < ids.size(); ++i) d.sequences.emplace(ids[i], std::move(records[i]));
  return d;
}

std::vector<dataset::SequenceRecord> select(const LoadedDataset& d, const std::map<std::string, std::vector<std::string>>& split,
                                            const std::set<std::string>& exclude) {
  std::vector<dataset::SequenceRecord> out;
  for (const auto& [cat, ids] : split) {
    if (exclude.count(cat)) continue;
    for (const auto& id : ids) out.push_back(d.sequences.at(id));
  }
  return out;
}

std::string file_label(const std::string& label) {
  std::string s;
  for (char ch : label) {
    if (ch == '(') s += '_';
    else if (ch != ')') s += ch;
  }
  return s;
}

// dataset-gen ---------------------------------------------------------------

int cmd_dataset_gen(const Context& c) {
  const auto& cfg = c.config;
  const dataset::GenerationConfig gen = cfg.generation();
  struct Job {
    dataset::CategoryTemplate tmpl;
    std::string id;
  };
  std::vector<Job> jobs;
  for (const auto& t : cfg.dataset.templates) {
    for (int i = 0; i < cfg.dataset.sequences_per_category; ++i) {
      std::ostringstream id;
      id << t.name << '_' << std::setw(3) << std::setfill('0') << i;
      jobs.push_back({t, id.str()});
    }
  }
  const std::uint64_t root = cfg.dataset_seed();
  parallel_for(static_cast<int>(jobs.size()), c.jobs, [&](int k) {
    const Job& job = jobs[k];
    Rng rng = make_stream(root, "sequence/" + job.id);
    try {
      const auto rec = dataset::generate_sequence(job.tmpl, gen, draw_seed(rng), job.id);
      io::write_sequence(c.out_dir / "sequences" / (job.id + ".json"), rec);
    } catch (const Error& e) {
      throw Error(e.kind(), "sequence " + job.id + ": " + e.detail());
    }
  });

  std::vector<dataset::SequenceRef> refs;
  for (const auto& j : jobs) refs.push_back({j.id, j.tmpl.name});
  Rng split_rng = make_stream(root, "split");
  const auto manifest = dataset::split_dataset(refs, cfg.dataset.train_fraction, draw_seed(split_rng));
  io::write_json(c.out_dir / "manifest.json", io::to_json(manifest));
  echo_config(c);
  *c.out << "wrote " << jobs.size() << " sequences to " << c.out_dir.string() << "\n";
  return kExitOk;
}

// train ---------------------------------------------------------------------

struct TrainFlags {
  std::string dataset;
  std::string resume;
  std::string procrustes;
  std::optional<int> epochs;
  std::optional<int> max_steps;
  std::optional<double> velocity_weight;
  bool stop_gradient = false;
};

io::Checkpoint make_checkpoint(const model::LiftingModel& m, int epoch, long step, double best,
                               const std::vector<std::string>& categories, int max_joints, const Json& train_config) {
  io::Checkpoint ck;
  ck.model = m;
  ck.epoch = epoch;
  ck.step = step;
  ck.best_val_fa_mpjpe = best;
  ck.trained_categories = categories;
  ck.max_train_joints = max_joints;
  ck.train_config = train_config;
  return ck;
}

int cmd_train(Context& c, const TrainFlags& f) {
  auto& settings = c.config.train.settings;
  if (!f.procrustes.empty()) settings.procrustes_loss = f.procrustes == "on";
  if (f.epochs) settings.epochs = *f.epochs;
  if (f.max_steps) settings.max_steps = *f.max_steps;
  if (f.velocity_weight) settings.velocity_weight = *f.velocity_weight;
  if (f.stop_gradient) settings.full_svd_gradient = false;
  c.config.validate();

  const LoadedDataset data = load_dataset(dataset_dir(c, f.dataset), c.jobs);
  const std::set<std::string> exclude(c.config.train.exclude_categories.begin(),
                                      c.config.train.exclude_categories.end());
  training::TrainData td;
  td.train = select(data, data.manifest.train, exclude);
  td.validation = select(data, data.manifest.test, exclude);
  if (td.train.empty()) throw Error(ErrorKind::EmptyDataset, "no training sequences after exclusions");

  std::set<std::string> categories;
  int max_joints = 0;
  for (const auto& s : td.train) {
    categories.insert(s.skeleton.category);
    max_joints = std::max(max_joints, s.joints());
  }
  const std::vector<std::string> cats(categories.begin(), categories.end());

  training::TrainConfig tc = c.config.effective_train();
  tc.jobs = c.jobs;
  model::ModelConfig mc = c.config.effective_model();

  std::optional<training::TrainState> resume;
  if (!f.resume.empty()) {
    io::Checkpoint ck = io::read_checkpoint(f.resume);
    if (!ck.adam || !ck.best_params) {
      throw Error(ErrorKind::Format, f.resume + ": checkpoint has no optimizer state to resume from");
    }
    mc = ck.model.config;
    resume = training::TrainState{ck.model, *ck.adam, ck.epoch, ck.step, ck.best_val_fa_mpjpe, *ck.best_params};
  }

  const Json train_json = config::to_json(tc);
  const fs::path log_path = c.out_dir / "train_log.jsonl";
  std::string log_text;
  if (resume && fs::exists(log_path)) {
    // Keep the records written before the resumed state, drop anything later.
    for (const auto& r : io::read_log(log_path)) {
      if (r.step <= resume->step) log_text += io::to_json(r).dump() + "\n";
    }
  }
  io::write_text(log_path, log_text);
  echo_config(c);

  std::ofstream log(log_path, std::ios::app);
  if (!log) throw Error(ErrorKind::Io, "cannot open " + log_path.string());

  training::TrainHooks hooks;
  hooks.on_record = [&](const training::LogRecord& rec, const training::TrainState& st, bool is_best) {
    log << io::to_json(rec).dump() << "\n";
    log.flush();
    io::Checkpoint last = make_checkpoint(st.model, st.epoch, st.step, st.best_val_fa_mpjpe, cats, max_joints, train_json);
    last.adam = st.adam;
    last.best_params = st.best_params;
    io::write_checkpoint(c.out_dir / "checkpoint_last.json", last);
    if (is_best) {
      io::write_checkpoint(c.out_dir / "checkpoint_best.json",
                           make_checkpoint(st.model, st.epoch, st.step, st.best_val_fa_mpjpe, cats, max_joints, train_json));
    }
    *c.out << "epoch " << rec.epoch << " step " << rec.step << " loss " << rec.train_loss << " val_fa_mpjpe "
           << rec.val_fa_mpjpe << (is_best ? " *" : "") << "\n";
  };

  const training::TrainResult result = training::train(td, mc, tc, hooks, resume);
  if (result.aborted) {
    *c.out << "training aborted: " << result.abort_reason << "\n";
    return kExitFailure;
  }
  *c.out << "best val_fa_mpjpe " << result.final_state.best_val_fa_mpjpe << " mm\n";
  return kExitOk;
}

// eval ----------------------------------------------------------------------

struct EvalFlags {
  std::string checkpoint;
  std::string dataset;
  std::vector<std::string> scenarios;
  bool sweep = false;
  std::string predictions;
  std::string split = "test";
};

Json summary_json(const metrics::MetricReport& r) {
  Json j = Json::object();
  j["scenario"] = r.scenario;
  j["fa_mpjpe_mm"] = r.fa_mpjpe;
  j["sa_mpjpe_mm"] = r.sa_mpjpe;
  j["sa_mpve_mm"] = r.sa_mpve;
  j["sequences"] = r.sequence_count;
  return j;
}

int cmd_eval(Context& c, const EvalFlags& f) {
  if (f.checkpoint.empty() && f.predictions.empty()) {
    throw Error(ErrorKind::Config, "eval needs --checkpoint or --predictions");
  }
  if (!f.scenarios.empty()) c.config.eval.scenarios = f.scenarios;
  c.config.validate();

  const LoadedDataset data = load_dataset(dataset_dir(c, f.dataset), c.jobs);
  std::vector<dataset::SequenceRecord> pool;
  if (f.split == "test" || f.split == "all") pool = select(data, data.manifest.test, {});
  if (f.split == "train" || f.split == "all") {
    auto tr = select(data, data.manifest.train, {});
    pool.insert(pool.end(), tr.begin(), tr.end());
  }

  std::optional<io::Checkpoint> ck;
  if (!f.checkpoint.empty()) ck = io::read_checkpoint(f.checkpoint);

  std::unique_ptr<metrics::Lifter> lifter;
  if (!f.predictions.empty()) {
    std::map<std::string, Track3> preds;
    for (const auto& s : pool) {
      const fs::path p = fs::path(f.predictions) / (s.skeleton.sequence_id + ".json");
      if (fs::exists(p)) preds.emplace(s.skeleton.sequence_id, io::read_prediction(p).canonical);
    }
    lifter = std::make_unique<metrics::PredictionLifter>(std::move(preds));
  } else if (ck->model_kind == io::kGroundTruthStubKind) {
    lifter = std::make_unique<metrics::GroundTruthLifter>();
  } else {
    lifter = std::make_unique<metrics::ModelLifter>(ck->model);
  }

  metrics::EvalOptions opts;
  opts.seed = c.config.eval_seed();
  opts.jobs = c.jobs;
  opts.max_train_joints = ck ? ck->max_train_joints : 0;
  opts.alignment = c.config.eval.alignment;

  Json summary = Json::array();
  for (const auto& text : c.config.eval.scenarios) {
    const auto scenario = metrics::Scenario::parse(text);
    const auto report = metrics::evaluate(*lifter, pool, scenario, opts);
    const std::string stem = "report_" + file_label(report.scenario);
    io::write_json(c.out_dir / (stem + ".json"), io::to_json(report));
    io::write_text(c.out_dir / (stem + ".csv"), io::report_csv(report));
    summary.push_back(summary_json(report));
    *c.out << report.scenario << ": FA-MPJPE " << report.fa_mpjpe << " mm, SA-MPJPE " << report.sa_mpjpe
           << " mm, SA-MPVE " << report.sa_mpve << " mm (" << report.sequence_count << " sequences)\n";
  }

  if (f.sweep) {
    std::vector<io::CurvePoint> curve;
    for (double frac : c.config.eval.occlusion_sweep) {
      metrics::Scenario s;
      s.kind = metrics::Scenario::Kind::Occluded;
      s.fraction = frac;
      curve.push_back({frac, metrics::evaluate(*lifter, pool, s, opts)});
      summary.push_back(summary_json(curve.back().report));
      *c.out << "occlusion " << frac << ": FA-MPJPE " << curve.back().report.fa_mpjpe << " mm\n";
    }
    io::write_text(c.out_dir / "occlusion_curve.csv", io::curve_csv(curve));
    io::write_text(c.out_dir / "occlusion_curve.svg", io::curve_svg(curve));
  }
  io::write_json(c.out_dir / "summary.json", summary);
  echo_config(c);
  return kExitOk;
}

// lift ----------------------------------------------------------------------

struct LiftFlags {
  std::string checkpoint;
  std::vector<std::string> inputs;
  std::string output;
};

int cmd_lift(Context& c, const LiftFlags& f) {
  if (!f.output.empty() && f.inputs.size() != 1) throw Error(ErrorKind::Config, "--output needs exactly one --input");
  const io::Checkpoint ck = io::read_checkpoint(f.checkpoint);
  std::unique_ptr<metrics::Lifter> lifter;
  if (ck.model_kind == io::kGroundTruthStubKind) {
    lifter = std::make_unique<metrics::GroundTruthLifter>();
  } else {
    lifter = std::make_unique<metrics::ModelLifter>(ck.model);
  }
  for (const auto& input : f.inputs) {
    const dataset::SequenceRecord seq = io::read_sequence(input);
    io::PredictionFile p;
    p.sequence_id = seq.skeleton.sequence_id;
    p.category = seq.skeleton.category;
    p.fps = seq.skeleton.fps;
    p.joint_names = seq.skeleton.chain.joint_names;
    p.parent = seq.skeleton.chain.parent;
    p.canonical = lifter->predict(seq, seq.observed);
    p.aligned = training::align_prediction(seq.skeleton.joints, p.canonical, seq.observed.presence).aligned;
    const fs::path dest = f.output.empty() ? c.out_dir / (p.sequence_id + ".json") : fs::path(f.output);
    io::write_prediction(dest, p);
    *c.out << "wrote " << dest.string() << "\n";
  }
  echo_config(c);
  return kExitOk;
}

// gradcheck -----------------------------------------------------------------

struct GradcheckFlags {
  int coords = 30;
  std::string corrupt;
  double corrupt_amount = 1.0;
  bool stop_gradient = false;
};

Json entries_json(const training::GradcheckReport& r) {
  Json entries = Json::array();
  for (const auto& e : r.entries) {
    entries.push_back({{"tensor", e.tensor},
                       {"row", e.row},
                       {"col", e.col},
                       {"analytic", e.analytic},
                       {"numeric", e.numeric},
                       {"rel_error", e.rel_error},
                       {"pass", e.pass}});
  }
  Json j = Json::object();
  j["passed"] = r.passed;
  j["max_rel_error"] = r.max_rel_error;
  j["failed_tensors"] = r.failed_tensors;
  j["entries"] = entries;
  return j;
}

int cmd_gradcheck(const Context& c, const GradcheckFlags& f) {
  if (f.coords < 1) throw Error(ErrorKind::Config, "--coords must be positive");
  training::GradcheckConfig gc = training::default_gradcheck_config();
  gc.seed = c.config.seed;
  gc.coordinates = f.coords;
  gc.corrupt_tensor = f.corrupt;
  gc.corrupt_amount = f.corrupt_amount;
  gc.mode = f.stop_gradient ? training::AlignmentGradient::StopGradient : training::AlignmentGradient::FullSvd;
  if (!gc.corrupt_tensor.empty()) {
    if (!model::init_parameters(gc.model, 0).contains(gc.corrupt_tensor)) {
      throw Error(ErrorKind::Config, "unknown tensor '" + gc.corrupt_tensor + "'");
    }
  }
  const auto model_report = training::gradcheck_model(gc);
  const auto ik_report = training::gradcheck_ik(f.coords, 1e-6, 1e-4, c.config.seed);

  Json j = Json::object();
  j["passed"] = model_report.passed && ik_report.passed;
  j["model"] = entries_json(model_report);
  j["ik"] = entries_json(ik_report);
  io::write_json(c.out_dir / "gradcheck.json", j);
  echo_config(c);

  *c.out << "model gradients: " << (model_report.passed ? "pass" : "FAIL") << " (max rel error "
         << model_report.max_rel_error << ")\n";
  for (const auto& t : model_report.failed_tensors) *c.out << "  failed tensor: " << t << "\n";
  *c.out << "ik gradients: " << (ik_report.passed ? "pass" : "FAIL") << " (max rel error " << ik_report.max_rel_error
         << ")\n";
  return j["passed"].get<bool>() ? kExitOk : kExitFailure;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Synthetic animal pose data generation and 2D-to-3D skeleton lifting"};
  app.name(args.empty() ? "lift3d" : fs::path(args[0]).filename().string());
  app.require_subcommand(1);

  GlobalOptions g;
  app.add_option("--config", g.config_path, "JSON run configuration")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "root seed (overrides the config)");
  app.add_option("--out", g.out, std::string("output directory (default $") + kOutputRootEnv + "/<command>)");
  app.add_option("--jobs", g.jobs, "worker threads")->check(CLI::PositiveNumber);

  auto* gen = app.add_subcommand("dataset-gen", "synthesize a dataset")->fallthrough();

  TrainFlags tf;
  auto* tr = app.add_subcommand("train", "train a lifting model")->fallthrough();
  tr->add_option("--dataset", tf.dataset, "dataset directory")->check(CLI::ExistingDirectory);
  tr->add_option("--resume", tf.resume, "resume from a checkpoint_last.json")->check(CLI::ExistingFile);
  tr->add_option("--procrustes", tf.procrustes, "Procrustes-aligned loss")->check(CLI::IsMember({"on", "off"}));
  tr->add_option("--epochs", tf.epochs)->check(CLI::PositiveNumber);
  tr->add_option("--max-steps", tf.max_steps)->check(CLI::NonNegativeNumber);
  tr->add_option("--velocity-weight", tf.velocity_weight)->check(CLI::NonNegativeNumber);
  tr->add_flag("--stop-gradient", tf.stop_gradient, "treat alignment rotation and scale as constants");

  EvalFlags ef;
  auto* ev = app.add_subcommand("eval", "score a checkpoint or saved predictions")->fallthrough();
  ev->add_option("--checkpoint", ef.checkpoint)->check(CLI::ExistingFile);
  ev->add_option("--dataset", ef.dataset, "dataset directory")->check(CLI::ExistingDirectory);
  ev->add_option("--scenario", ef.scenarios, "clean, noisy, occluded(f), holdout(category), unseen_rig");
  ev->add_flag("--sweep", ef.sweep, "occlusion sweep over eval.occlusion_sweep");
  ev->add_option("--predictions", ef.predictions, "directory of lift outputs to score instead of a model")
      ->check(CLI::ExistingDirectory);
  ev->add_option("--split", ef.split)->check(CLI::IsMember({"test", "train", "all"}));

  LiftFlags lf;
  auto* li = app.add_subcommand("lift", "lift sequence files to 3D")->fallthrough();
  li->add_option("--checkpoint", lf.checkpoint)->required()->check(CLI::ExistingFile);
  li->add_option("--input", lf.inputs, "sequence file (repeatable)")->required()->check(CLI::ExistingFile);
  li->add_option("--output", lf.output, "prediction file (single input only)");

  GradcheckFlags gf;
  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient check")->fallthrough();
  gc->add_option("--coords", gf.coords, "coordinates to check");
  gc->add_option("--corrupt", gf.corrupt, "test hook: perturb this tensor's analytic gradient");
  gc->add_option("--corrupt-amount", gf.corrupt_amount);
  gc->add_flag("--stop-gradient", gf.stop_gradient, "check the frozen-alignment gradient instead");

  std::vector<std::string> rev(args.begin() + (args.empty() ? 0 : 1), args.end());
  std::reverse(rev.begin(), rev.end());
  try {
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitInvalid;
  }

  try {
    auto* sub = app.get_subcommands().front();
    Context c = make_context(g, sub->get_name(), out);
    if (sub == gen) return cmd_dataset_gen(c);
    if (sub == tr) return cmd_train(c, tf);
    if (sub == ev) return cmd_eval(c, ef);
    if (sub == li) return cmd_lift(c, lf);
    return cmd_gradcheck(c, gf);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return is_input_error(e.kind()) ? kExitInvalid : kExitFailure;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
}

}  // namespace lift3d::cli
