// voxalign: standardize the pose of 3D scalar volumes to canonical
// sagittal/coronal/axial axes.
//
// Subcommands: phantom-gen, fit-planes, standardize, recover-pose,
// evaluate, extract-slices.  Results go to files, diagnostics to stderr;
// the exit status is 0 only when no error was surfaced (3 flags estimator
// divergence).  Every command is deterministic given its flags; seeds are
// recorded in the run manifests.

#include <array>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "voxalign/voxalign.hpp"

namespace fs = std::filesystem;
using namespace voxalign;

namespace {

constexpr int kExitError = 1;
constexpr int kExitDiverged = 3;

struct TripleOption {
  std::vector<double> values;

  bool given() const { return !values.empty(); }
  Vec3 vec() const { return {values[0], values[1], values[2]}; }
};

void add_triple(CLI::App* cmd, const std::string& name, TripleOption& t,
                const std::string& desc) {
  cmd->add_option(name, t.values, desc)->delimiter(',')->expected(3);
}

void ensure_out_dir(const std::string& out) {
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw std::runtime_error(out + ": cannot create output directory");
}

// ---------------------------------------------------------------------------
// phantom-gen

struct PhantomGenArgs {
  std::string out;
  int dims = 128;
  double spacing = 0.5;
  TripleOption pose_euler;
  TripleOption pose_trans;
  double noise_sigma = 0.0;
  std::uint64_t seed = 0;
};

int run_phantom_gen(const PhantomGenArgs& a) {
  PhantomSpec spec;
  spec.dims = {a.dims, a.dims, a.dims};
  spec.spacing = {a.spacing, a.spacing, a.spacing};
  if (a.pose_euler.given()) {
    const Vec3 e = a.pose_euler.vec();
    spec.pose.rotation = euler_to_rotation({e.x, e.y, e.z});
  }
  if (a.pose_trans.given()) {
    const Vec3 t = a.pose_trans.vec();
    spec.pose.translation = {t.x, t.y, t.z};
  }
  spec.noise_sigma = a.noise_sigma;
  spec.seed = a.seed;

  const PhantomBundle b = generate_phantom(spec);
  ensure_out_dir(a.out);
  io::write_vvol(a.out + "/volume.vvol", b.volume);
  io::write_landmarks(a.out + "/landmarks.csv", b.landmarks);
  io::write_membership(a.out + "/membership.csv", b.membership);
  io::write_transform(a.out + "/gt_transform.txt", b.gt_transform);

  io::RunManifest m;
  m.command = "phantom-gen";
  m.estimator = "none";
  m.seed = a.seed;
  m.n_iters = 0;
  m.init = {0.0, 0.0};
  m.gt_supplied = true;
  m.final_transform = b.gt_transform;
  io::write_run_manifest(a.out + "/manifest.txt", m);
  return 0;
}

// ---------------------------------------------------------------------------
// fit-planes

struct FitPlanesArgs {
  std::string landmarks, membership, volume, out;
  std::vector<int> dims;
};

int run_fit_planes(const FitPlanesArgs& a) {
  const LandmarkSet landmarks = io::read_landmarks(a.landmarks);
  const PlaneMembership membership = io::read_membership(a.membership);
  std::array<int, 3> dims{};
  if (!a.volume.empty()) {
    dims = io::read_vvol(a.volume).dims;
  } else if (a.dims.size() == 3) {
    dims = {a.dims[0], a.dims[1], a.dims[2]};
  } else {
    throw std::runtime_error("fit-planes: provide --volume or --dims H,W,D");
  }

  const FitResult fit = fit_orthogonal_planes(landmarks, membership);
  ensure_out_dir(a.out);
  io::write_planes(a.out + "/planes.txt", fit.planes);
  io::write_transform(a.out + "/transform.txt",
                      planes_to_gt_transform(fit.planes, dims));
  io::write_fit_report(a.out + "/fit_report.txt", fit);
  if (!fit.converged) {
    std::cerr << "fit-planes: solver stopped without meeting the convergence "
                 "threshold; best iterate written\n";
    return kExitError;
  }
  return 0;
}

// ---------------------------------------------------------------------------
// standardize / recover-pose

struct StandardizeArgs {
  std::string volume, out, gt_path, target_volume;
  std::string estimator = "gradient-descent";
  std::uint64_t seed = 0;
  int iters = 3;
  int gd_steps = 300;
  double gd_step_size = 0.01;
  double gd_momentum = 0.9;
  double beta = 1.0;
  double gamma = 1.0;
  double noise_deg = 0.0;
  double noise_trans = 0.0;
  std::uint64_t estimator_seed = 0;
  double init_max_angle = 20.0;
  double init_max_trans = 0.05;
  bool downsample = false;
  int pad = 0;
};

int run_standardize(const StandardizeArgs& a) {
  Volume volume = io::read_vvol(a.volume);
  if (a.downsample) volume = downsample_by_two(volume);
  if (a.pad > 0) volume = zero_pad_to_cube(volume, a.pad);

  std::optional<RigidTransform> gt;
  if (!a.gt_path.empty()) gt = io::read_transform(a.gt_path);

  PoseEstimator estimator;
  std::string estimator_desc;
  if (a.estimator == "oracle") {
    if (!gt) throw std::runtime_error("standardize: the oracle estimator needs --gt");
    estimator = oracle_estimator(*gt, a.noise_deg, a.noise_trans, a.estimator_seed);
    estimator_desc = "oracle noise_deg=" + std::to_string(a.noise_deg) +
                     " noise_trans=" + std::to_string(a.noise_trans) +
                     " seed=" + std::to_string(a.estimator_seed);
  } else if (a.estimator == "gradient-descent") {
    SliceTriplet target;
    if (!a.target_volume.empty()) {
      target = extract_center_slices(io::read_vvol(a.target_volume));
    } else if (gt) {
      target = sample_center_slices(volume, *gt);
    } else {
      throw std::runtime_error(
          "standardize: gradient-descent needs --target-volume or --gt");
    }
    GdOptions opts;
    opts.steps = a.gd_steps;
    opts.step_size = a.gd_step_size;
    opts.momentum = a.gd_momentum;
    opts.weights = {a.beta, a.gamma};
    estimator = gradient_descent_estimator(std::move(target), opts);
    estimator_desc = "gradient-descent steps=" + std::to_string(a.gd_steps) +
                     " step_size=" + std::to_string(a.gd_step_size) +
                     " momentum=" + std::to_string(a.gd_momentum);
  } else {
    throw std::runtime_error("standardize: unknown estimator `" + a.estimator + "`");
  }

  StandardizeOptions opts;
  opts.n_iters = a.iters;
  opts.seed = a.seed;
  opts.init = {a.init_max_angle, a.init_max_trans};
  opts.gt = gt;
  opts.weights = {a.beta, a.gamma};
  const StandardizeResult result = standardize(volume, estimator, opts);

  ensure_out_dir(a.out);
  io::write_vvol(a.out + "/standardized.vvol", result.volume);
  io::write_slice_triplet(a.out, result.slices, center_slice_indices(result.volume));
  io::write_transform(a.out + "/transform.txt", result.accumulated);

  io::RunManifest m;
  m.command = "standardize";
  m.estimator = estimator_desc;
  m.seed = a.seed;
  m.n_iters = a.iters;
  m.init = opts.init;
  m.gt_supplied = gt.has_value();
  m.log = result.log;
  m.final_transform = result.accumulated;
  m.any_divergence = result.any_divergence;
  io::write_run_manifest(a.out + "/manifest.txt", m);

  if (result.any_divergence) {
    std::cerr << "standardize: estimator flagged divergence; see manifest\n";
    return kExitDiverged;
  }
  return 0;
}

// ---------------------------------------------------------------------------
// evaluate

struct EvaluateArgs {
  std::string est, gt, volume, out, batch;
};

int run_evaluate(const EvaluateArgs& a) {
  if (!a.batch.empty()) {
    // batch manifest rows: id,est_path,gt_path,volume_path
    std::ifstream f(a.batch);
    if (!f) throw std::runtime_error(a.batch + ": cannot open batch manifest");
    ensure_out_dir(a.out);
    std::vector<EvalReport> reports;
    std::string line;
    while (std::getline(f, line)) {
      if (line.empty() || line[0] == '#') continue;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      std::array<std::string, 4> cell;
      std::size_t pos = 0;
      for (int k = 0; k < 4; ++k) {
        const std::size_t comma = line.find(',', pos);
        if (comma == std::string::npos && k < 3)
          throw std::runtime_error(a.batch + ": bad row: " + line);
        cell[k] = line.substr(pos, comma == std::string::npos ? comma : comma - pos);
        pos = comma + 1;
      }
      const EvalReport r = evaluate(io::read_transform(cell[1]), io::read_transform(cell[2]),
                                    io::read_vvol(cell[3]));
      io::write_eval_report(a.out + "/" + cell[0] + "_report.txt", r);
      reports.push_back(r);
    }
    if (reports.empty()) throw std::runtime_error(a.batch + ": no cases");
    io::write_eval_aggregate(a.out + "/aggregate.txt", reports);
    return 0;
  }
  if (a.est.empty() || a.gt.empty() || a.volume.empty())
    throw std::runtime_error("evaluate: need --est, --gt, and --volume (or --batch)");
  const EvalReport r = evaluate(io::read_transform(a.est), io::read_transform(a.gt),
                                io::read_vvol(a.volume));
  io::write_eval_report(a.out, r);
  return 0;
}

// ---------------------------------------------------------------------------
// extract-slices

struct ExtractArgs {
  std::string volume, out;
};

int run_extract_slices(const ExtractArgs& a) {
  const Volume v = io::read_vvol(a.volume);
  ensure_out_dir(a.out);
  io::write_slice_triplet(a.out, extract_center_slices(v), center_slice_indices(v));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"voxalign: rigid standardization of 3D volumes to canonical facial axes"};
  app.require_subcommand(1);
  app.set_config("--config", "", "Read options from an INI config file");
  app.allow_config_extras(CLI::config_extras_mode::error);

  PhantomGenArgs pg;
  auto* phantom_gen =
      app.add_subcommand("phantom-gen", "Generate a synthetic phantom bundle");
  phantom_gen->add_option("--out", pg.out, "Output directory")->required();
  phantom_gen->add_option("--dims", pg.dims, "Cubic volume size (voxels)")
      ->check(CLI::Range(32, 1024));
  phantom_gen->add_option("--spacing", pg.spacing, "Voxel spacing in mm")
      ->check(CLI::PositiveNumber);
  add_triple(phantom_gen, "--pose-euler", pg.pose_euler, "Pose Euler angles ax,ay,az (deg)");
  add_triple(phantom_gen, "--pose-trans", pg.pose_trans,
             "Pose translation tx,ty,tz (normalized)");
  phantom_gen->add_option("--noise-sigma", pg.noise_sigma, "Additive noise sigma")
      ->check(CLI::NonNegativeNumber);
  phantom_gen->add_option("--seed", pg.seed, "Noise seed");

  FitPlanesArgs fp;
  auto* fit_planes = app.add_subcommand(
      "fit-planes", "Fit orthonormal planes to landmarks and derive the transform");
  fit_planes->add_option("--landmarks", fp.landmarks, "Landmark CSV")->required();
  fit_planes->add_option("--membership", fp.membership, "Membership CSV")->required();
  fit_planes->add_option("--volume", fp.volume, "Volume whose dims normalize the center");
  fit_planes->add_option("--dims", fp.dims, "Volume dims H,W,D")->delimiter(',')->expected(3);
  fit_planes->add_option("--out", fp.out, "Output directory")->required();

  StandardizeArgs st;
  auto add_standardize_options = [&](CLI::App* cmd, bool with_estimator) {
    cmd->add_option("--volume", st.volume, "Input VVOL volume")->required();
    cmd->add_option("--out", st.out, "Output directory")->required();
    cmd->add_option("--gt", st.gt_path, "Ground-truth transform file");
    cmd->add_option("--target-volume", st.target_volume,
                    "Volume whose center slices are the descent target");
    if (with_estimator)
      cmd->add_option("--estimator", st.estimator, "oracle or gradient-descent");
    cmd->add_option("--seed", st.seed, "Initialization seed");
    cmd->add_option("--iters", st.iters, "Refinement iterations")->check(CLI::Range(1, 100));
    cmd->add_option("--gd-steps", st.gd_steps, "Descent steps per iteration")
        ->check(CLI::Range(1, 100000));
    cmd->add_option("--gd-step-size", st.gd_step_size, "Descent base step size")
        ->check(CLI::PositiveNumber);
    cmd->add_option("--gd-momentum", st.gd_momentum, "Descent momentum in [0,1)");
    cmd->add_option("--beta", st.beta, "Translation loss weight");
    cmd->add_option("--gamma", st.gamma, "Rotation loss weight");
    cmd->add_option("--noise-deg", st.noise_deg, "Oracle rotation noise (deg)");
    cmd->add_option("--noise-trans", st.noise_trans, "Oracle translation noise");
    cmd->add_option("--estimator-seed", st.estimator_seed, "Oracle noise seed");
    cmd->add_option("--init-max-angle", st.init_max_angle, "Init Euler range (deg)");
    cmd->add_option("--init-max-trans", st.init_max_trans, "Init translation range");
    cmd->add_flag("--downsample", st.downsample, "Mean-pool the input by 2 first");
    cmd->add_option("--pad", st.pad, "Zero-pad to this cubic size (0 = off)");
  };
  auto* standardize_cmd =
      app.add_subcommand("standardize", "Run the full standardization pipeline");
  add_standardize_options(standardize_cmd, true);
  auto* recover_cmd = app.add_subcommand(
      "recover-pose", "Standardize with the gradient-descent estimator");
  add_standardize_options(recover_cmd, false);

  EvaluateArgs ev;
  auto* evaluate_cmd =
      app.add_subcommand("evaluate", "Score an estimated transform against ground truth");
  evaluate_cmd->add_option("--est", ev.est, "Estimated transform file");
  evaluate_cmd->add_option("--gt", ev.gt, "Ground-truth transform file");
  evaluate_cmd->add_option("--volume", ev.volume, "Volume file");
  evaluate_cmd->add_option("--out", ev.out, "Report file (or directory with --batch)")
      ->required();
  evaluate_cmd->add_option("--batch", ev.batch, "CSV manifest: id,est,gt,volume");

  ExtractArgs ex;
  auto* extract_cmd =
      app.add_subcommand("extract-slices", "Export the three center slices as PGM");
  extract_cmd->add_option("--volume", ex.volume, "Input VVOL volume")->required();
  extract_cmd->add_option("--out", ex.out, "Output directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (phantom_gen->parsed()) return run_phantom_gen(pg);
    if (fit_planes->parsed()) return run_fit_planes(fp);
    if (standardize_cmd->parsed()) return run_standardize(st);
    if (recover_cmd->parsed()) {
      st.estimator = "gradient-descent";
      return run_standardize(st);
    }
    if (evaluate_cmd->parsed()) return run_evaluate(ev);
    if (extract_cmd->parsed()) return run_extract_slices(ex);
  } catch (const std::exception& e) {
    std::cerr << "voxalign: " << e.what() << '\n';
    return kExitError;
  }
  return kExitError;
}
