#pragma once

// End-to-end standardization: seeded initialization, pluggable pose
// estimation, cumulative refinement with exact residual bookkeeping, and a
// gradient-descent pose estimator.
//
// Accumulation is exact composition: each refinement step composes the
// estimate onto the accumulated transform and folds its inverse into the
// residual ground truth, so compose(accumulated, residual_gt) equals the
// original ground-truth transform identically at every step.  The final
// volume is always a single resampling of the original input.
//
// Estimators receive the current center slices plus the sampling context
// (original volume, accumulated transform, iteration index).  A learned
// slice-to-pose model only needs the slices; the gradient-descent
// estimator needs the context, because an increment can only be evaluated
// by resampling the volume at the current pose.

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <vector>

#include "voxalign/geometry.hpp"
#include "voxalign/metrics.hpp"
#include "voxalign/sampler.hpp"
#include "voxalign/volume.hpp"

namespace voxalign {

/// A pose increment (unit quaternion + normalized translation) with
/// optional solver diagnostics.
struct PoseEstimate {
  Quaternion q;
  NormalizedTranslation t;
  bool diverged = false;   // set by the gradient-descent estimator
  double loss = 0.0;       // best loss seen by the solver, when applicable
  int steps_used = 0;

  RigidTransform to_transform() const { return {quat_to_rotation(q), t}; }

  static PoseEstimate from_transform(const RigidTransform& tr) {
    PoseEstimate e;
    e.q = rotation_to_quat(tr.rotation);
    e.t = tr.translation;
    return e;
  }
};

/// What an estimator sees at each refinement step.
struct EstimatorInput {
  const Volume& volume;               // original, never resampled
  const RigidTransform& accumulated;  // current accumulated transform
  const SliceTriplet& slices;         // center slices at `accumulated`
  int iteration = 0;                  // 0-based refinement index
};

using PoseEstimator = std::function<PoseEstimate(const EstimatorInput&)>;

struct RefinementState {
  RigidTransform accumulated;
  std::optional<RigidTransform> residual_gt;  // present when GT is known
  int iteration = 0;
};

struct InitRanges {
  double max_angle_deg = 20.0;
  double max_trans = 0.05;
};

/// Seeded random initial state.  With GT supplied the residual satisfies
/// compose(accumulated, residual_gt) == gt by construction.
inline RefinementState initialize(std::uint64_t seed, const InitRanges& ranges = {},
                                  const std::optional<RigidTransform>& gt = std::nullopt) {
  RefinementState s;
  s.accumulated = random_perturbation(seed, ranges.max_angle_deg, ranges.max_trans);
  if (gt) s.residual_gt = compose(invert(s.accumulated), *gt);
  s.iteration = 0;
  return s;
}

struct RefineResult {
  RefinementState state;
  PoseEstimate estimate;
  SliceTriplet slices;  // the slices the estimator saw
};

/// One refinement step: slice the volume at the accumulated transform, ask
/// the estimator for an increment, and fold it into the accumulated and
/// residual transforms.
inline RefineResult refine_step(const RefinementState& state, const PoseEstimator& estimator,
                                const Volume& volume) {
  RefineResult r;
  r.slices = extract_center_slices(apply_transform(volume, state.accumulated));
  try {
    r.estimate = estimator({volume, state.accumulated, r.slices, state.iteration});
  } catch (const std::exception& e) {
    throw std::runtime_error("refine_step: estimator failed at iteration " +
                             std::to_string(state.iteration) + ": " + e.what());
  }
  const RigidTransform inc = r.estimate.to_transform();
  r.state.accumulated = compose(state.accumulated, inc);
  if (state.residual_gt) r.state.residual_gt = compose(invert(inc), *state.residual_gt);
  r.state.iteration = state.iteration + 1;
  return r;
}

// ---------------------------------------------------------------------------
// Shipped estimators

struct GdOptions {
  int steps = 300;
  double step_size = 0.01;
  double momentum = 0.9;  // velocity decay; 0 recovers plain projected descent
  LossWeights weights;    // forwarded to the loss; the image term itself is unweighted
};

namespace detail {

inline double grad_norm(const std::array<double, 7>& g) {
  double s = 0.0;
  for (double v : g) s += v * v;
  return std::sqrt(s);
}

}  // namespace detail

/// Projected-gradient-descent estimator (with momentum) minimizing the
/// image term of the loss against fixed target slices.
///
/// Each call starts from the current accumulated pose, descends on the
/// full pose (renormalizing the quaternion after every step), and returns
/// the increment from the accumulated pose to the best pose found.  The
/// update direction is a decaying velocity (momentum 0.9 by default;
/// plain descent stalls in the narrow valley the three-slice image loss
/// forms around the optimum).  Steps that fail to decrease the loss are
/// rejected, reset the velocity, and halve the step size; accepted steps
/// double it, up to 64x the configured base — so the best loss is
/// non-increasing over accepted steps.  Termination: gradient norm
/// < 1e-10, an accepted decrease below 1e-14 * max(1, loss), step-size
/// underflow below 1e-14, or 10 consecutive rejections at or below the
/// base step size (rejections above the base are the adaptive policy
/// shrinking back and do not count).  A rejection stall flags divergence
/// and returns the best-seen estimate, unless the loss is already below
/// 1e-3 of the target's summed per-plane mean absolute intensity — at
/// that scale the match is tight and the stall is the rounding floor.
/// Deterministic for fixed inputs.
inline PoseEstimator gradient_descent_estimator(SliceTriplet target, GdOptions opts = {}) {
  if (opts.steps < 1 || !(opts.step_size > 0.0) || opts.momentum < 0.0 || opts.momentum >= 1.0)
    throw std::invalid_argument("gradient_descent_estimator: bad options");
  double target_scale = 0.0;
  for (int p = 0; p < 3; ++p) {
    const Image2D& img = target.plane(p);
    if (img.data.empty()) continue;
    double sum = 0.0;
    for (double v : img.data) sum += std::abs(v);
    target_scale += sum / static_cast<double>(img.data.size());
  }
  const double stall_floor = 1e-3 * target_scale + 1e-12;
  return [target = std::move(target), opts, stall_floor](const EstimatorInput& in)
             -> PoseEstimate {
    Quaternion q = rotation_to_quat(in.accumulated.rotation);
    NormalizedTranslation t = in.accumulated.translation;
    PoseLossResult cur = pose_loss_with_gradient(in.volume, target, q, t, opts.weights.beta,
                                                 opts.weights.gamma, nullptr, true);
    Quaternion best_q = q;
    NormalizedTranslation best_t = t;
    double best_loss = cur.loss;
    double eta = opts.step_size;
    std::array<double, 7> velocity{};
    int rejects_in_a_row = 0;
    int steps_used = 0;
    bool diverged = false;

    for (int step = 0; step < opts.steps; ++step) {
      if (detail::grad_norm(cur.gradient) < 1e-10) break;
      std::array<double, 7> v;
      for (int k = 0; k < 7; ++k) v[k] = opts.momentum * velocity[k] + cur.gradient[k];
      const Quaternion qp =
          Quaternion{q.w - eta * v[0], q.x - eta * v[1], q.y - eta * v[2], q.z - eta * v[3]}
              .normalized();
      const NormalizedTranslation tp{t.x - eta * v[4], t.y - eta * v[5], t.z - eta * v[6]};
      const double lp = pose_loss(in.volume, target, qp, tp, opts.weights.beta,
                                  opts.weights.gamma, nullptr);
      ++steps_used;
      if (lp < cur.loss) {
        const double decrease = cur.loss - lp;
        q = qp;
        t = tp;
        velocity = v;
        cur = pose_loss_with_gradient(in.volume, target, q, t, opts.weights.beta,
                                      opts.weights.gamma, nullptr, true);
        if (cur.loss < best_loss) {
          best_loss = cur.loss;
          best_q = q;
          best_t = t;
        }
        rejects_in_a_row = 0;
        eta = std::min(eta * 2.0, 64.0 * opts.step_size);
        if (decrease < 1e-14 * std::max(1.0, cur.loss)) break;
      } else {
        velocity = {};  // restart momentum along the raw gradient
        if (eta <= opts.step_size && ++rejects_in_a_row >= 10) {
          diverged = best_loss > stall_floor;
          break;
        }
        eta *= 0.5;
        if (eta < 1e-14) break;
      }
    }

    const RigidTransform best_pose{quat_to_rotation(canonicalize(best_q)), best_t};
    PoseEstimate out = PoseEstimate::from_transform(
        compose(invert(in.accumulated), best_pose));
    out.diverged = diverged;
    out.loss = best_loss;
    out.steps_used = steps_used;
    return out;
  };
}

/// Test-double estimator: emits the current residual ground truth composed
/// with a fixed seeded perturbation of the stated magnitudes (an estimator
/// that is wrong by a known amount).  Zero noise gives the perfect
/// estimator.
inline PoseEstimator oracle_estimator(const RigidTransform& gt, double noise_deg,
                                      double noise_trans, std::uint64_t seed) {
  if (noise_deg < 0.0 || noise_trans < 0.0)
    throw std::invalid_argument("oracle_estimator: noise magnitudes must be >= 0");
  const RigidTransform perturb = random_perturbation(seed, noise_deg, noise_trans);
  return [gt, perturb](const EstimatorInput& in) -> PoseEstimate {
    const RigidTransform residual = compose(invert(in.accumulated), gt);
    return PoseEstimate::from_transform(compose(residual, perturb));
  };
}

// ---------------------------------------------------------------------------
// Full standardization run

struct StandardizeOptions {
  int n_iters = 3;
  std::uint64_t seed = 0;
  InitRanges init;
  std::optional<RigidTransform> gt;  // enables residual bookkeeping + metrics
  LossWeights weights;               // for the per-iteration loss log
};

struct IterationLog {
  int iteration = 0;                      // 0 = initialization
  std::optional<PoseEstimate> estimate;   // absent for the init entry
  std::optional<double> so3_deg;          // vs GT, when supplied
  std::optional<double> trans_mm;
  std::optional<double> loss;             // network loss vs GT slices
};

struct StandardizeResult {
  Volume volume;               // single resampling of the input
  SliceTriplet slices;
  RigidTransform accumulated;
  RefinementState final_state;
  std::vector<IterationLog> log;
  bool any_divergence = false;
};

/// Initialize, run n_iters refinement steps, and resample the original
/// volume once under the accumulated transform.
inline StandardizeResult standardize(const Volume& volume, const PoseEstimator& estimator,
                                     const StandardizeOptions& opts = {}) {
  if (opts.n_iters < 1) throw std::invalid_argument("standardize: n_iters must be >= 1");
  RefinementState state = initialize(opts.seed, opts.init, opts.gt);

  StandardizeResult out;
  std::optional<SliceTriplet> gt_slices;
  if (opts.gt) gt_slices = extract_center_slices(apply_transform(volume, *opts.gt));

  auto pose_errors = [&](IterationLog& entry, const RigidTransform& acc) {
    if (!opts.gt) return;
    entry.so3_deg = geodesic_angle_deg(acc.rotation, opts.gt->rotation);
    entry.trans_mm = translation_error_mm(acc, *opts.gt, volume).total_mm;
  };
  // Entry k describes the state after k refinement steps (k = 0 is the
  // initialization).  Its slices surface as the input of step k+1 (or as
  // the final output), which is when its loss gets filled in.
  auto fill_loss = [&](IterationLog& entry, const RigidTransform& acc,
                       const SliceTriplet& slices) {
    if (opts.gt) entry.loss = network_loss(acc, *opts.gt, slices, *gt_slices, opts.weights);
  };

  {
    IterationLog init_entry;
    init_entry.iteration = 0;
    pose_errors(init_entry, state.accumulated);
    out.log.push_back(init_entry);
  }

  for (int it = 0; it < opts.n_iters; ++it) {
    const RigidTransform pre_update = state.accumulated;
    RefineResult r = refine_step(state, estimator, volume);
    fill_loss(out.log.back(), pre_update, r.slices);
    state = r.state;
    IterationLog entry;
    entry.iteration = state.iteration;
    entry.estimate = r.estimate;
    out.any_divergence = out.any_divergence || r.estimate.diverged;
    pose_errors(entry, state.accumulated);
    out.log.push_back(entry);
  }

  out.volume = apply_transform(volume, state.accumulated);
  out.slices = extract_center_slices(out.volume);
  out.accumulated = state.accumulated;
  out.final_state = state;
  fill_loss(out.log.back(), out.accumulated, out.slices);
  return out;
}

}  // namespace voxalign
