#pragma once

// Training loss and evaluation metrics: combined pose/image loss, geodesic
// (SO3) angle, per-plane Euclidean angle errors, translation error in mm,
// SSIM, and PSNR.
//
// Metric conventions:
//   * The loss rotation term is in radians (it is a loss, not a report);
//     all reported angles are degrees.
//   * "Euclidean angle" per plane is the angle between the corresponding
//     estimated and ground-truth plane normals (rows of the rotation
//     matrices), with an absolute dot product so the metric ignores normal
//     sign; the scalar EA is the mean of the three.
//   * Per-plane translation error is the absolute projection of the mm
//     translation difference onto the ground-truth plane normal.
//   * SSIM uses a 7x7 uniform window, k1 = 0.01, k2 = 0.03, dynamic range
//     L = max intensity over both images (1 if that max is not positive),
//     windows fully inside the image, biased (1/N) moments.
//   * PSNR of identical images is +infinity, the "identical" sentinel.
//   * Comparing bit-identical rotations yields exact zero angles.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "voxalign/geometry.hpp"
#include "voxalign/sampler.hpp"
#include "voxalign/volume.hpp"

namespace voxalign {

struct LossWeights {
  double beta = 1.0;   // translation weight
  double gamma = 1.0;  // rotation weight
};

struct EvalReport {
  double so3_deg = 0.0;
  double ea_mean_deg = 0.0;
  std::array<double, 3> ea_per_plane_deg{};    // sagittal, coronal, axial
  double trans_mm_total = 0.0;
  std::array<double, 3> trans_mm_per_plane{};  // sagittal, coronal, axial
  double ssim = 1.0;
  double psnr_db = std::numeric_limits<double>::infinity();
};

// ---------------------------------------------------------------------------
// Loss

/// Combined loss: beta * |t_es - t_gt|_1 + gamma * SO3 angle in radians +
/// per-plane mean absolute image difference summed over the three planes.
inline double network_loss(const RigidTransform& est, const RigidTransform& gt,
                           const SliceTriplet& i_es, const SliceTriplet& i_gt,
                           const LossWeights& w) {
  if (!(w.beta >= 0.0) || !(w.gamma >= 0.0))
    throw std::invalid_argument("network_loss: weights must be finite and non-negative");
  const Vec3 dt = est.translation.vec() - gt.translation.vec();
  double loss = w.beta * (std::abs(dt.x) + std::abs(dt.y) + std::abs(dt.z));
  const Rotation3 rel = est.rotation * gt.rotation.transposed();
  loss += w.gamma * std::acos(clamp_unit(0.5 * (rel.trace() - 1.0)));
  for (int p = 0; p < 3; ++p) {
    const Image2D& a = i_gt.plane(p);
    const Image2D& b = i_es.plane(p);
    if (a.width != b.width || a.height != b.height)
      throw std::invalid_argument("network_loss: slice dims mismatch");
    double sum = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) sum += std::abs(a.data[i] - b.data[i]);
    loss += sum / static_cast<double>(a.data.size());
  }
  return loss;
}

// ---------------------------------------------------------------------------
// Pose error metrics

struct TranslationError {
  double total_mm = 0.0;
  std::array<double, 3> per_plane_mm{};  // projection onto GT plane normals
};

/// Translation difference converted from normalized units to mm per axis
/// (delta_k * (dim_k - 1)/2 * spacing_k), reported as the Euclidean total
/// and as absolute projections onto the ground-truth plane normals.
inline TranslationError translation_error_mm(const RigidTransform& est,
                                             const RigidTransform& gt, const Volume& v) {
  const Vec3 dn = est.translation.vec() - gt.translation.vec();
  const Vec3 dmm{dn.x * 0.5 * (v.dims[0] - 1) * v.spacing[0],
                 dn.y * 0.5 * (v.dims[1] - 1) * v.spacing[1],
                 dn.z * 0.5 * (v.dims[2] - 1) * v.spacing[2]};
  TranslationError e;
  e.total_mm = norm(dmm);
  for (int p = 0; p < 3; ++p) e.per_plane_mm[p] = std::abs(dot(gt.rotation.row(p), dmm));
  return e;
}

struct EulerAngleError {
  double mean_deg = 0.0;
  std::array<double, 3> per_plane_deg{};
};

/// Per-plane normal angle acos(|n_es . n_gt|) in degrees and its mean.
/// Bit-identical rows give exact zero.
inline EulerAngleError euclidean_angle_errors(const RigidTransform& est,
                                              const RigidTransform& gt) {
  EulerAngleError e;
  double sum = 0.0;
  for (int p = 0; p < 3; ++p) {
    const Vec3 a = est.rotation.row(p), b = gt.rotation.row(p);
    double deg = 0.0;
    if (!(a.x == b.x && a.y == b.y && a.z == b.z))
      deg = rad_to_deg(std::acos(clamp_unit(std::abs(dot(a, b)))));
    e.per_plane_deg[p] = deg;
    sum += deg;
  }
  e.mean_deg = sum / 3.0;
  return e;
}

// ---------------------------------------------------------------------------
// Image quality metrics

namespace detail {

inline double dynamic_range(const Image2D& a, const Image2D& b) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double v : a.data) mx = std::max(mx, v);
  for (double v : b.data) mx = std::max(mx, v);
  return mx > 0.0 ? mx : 1.0;
}

inline void require_same_dims(const Image2D& a, const Image2D& b, const char* who) {
  if (a.width != b.width || a.height != b.height)
    throw std::invalid_argument(std::string(who) + ": image dims mismatch");
}

}  // namespace detail

inline constexpr int kSsimWindow = 7;

/// Mean local SSIM over all fully-interior 7x7 windows.
inline double ssim(const Image2D& a, const Image2D& b) {
  detail::require_same_dims(a, b, "ssim");
  if (a.width < kSsimWindow || a.height < kSsimWindow)
    throw std::invalid_argument("ssim: image smaller than the 7x7 window");
  const double l = detail::dynamic_range(a, b);
  const double c1 = (0.01 * l) * (0.01 * l);
  const double c2 = (0.03 * l) * (0.03 * l);
  constexpr double n = kSsimWindow * kSsimWindow;
  double total = 0.0;
  int windows = 0;
  for (int v0 = 0; v0 + kSsimWindow <= a.height; ++v0) {
    for (int u0 = 0; u0 + kSsimWindow <= a.width; ++u0) {
      double sa = 0.0, sb = 0.0, saa = 0.0, sbb = 0.0, sab = 0.0;
      for (int v = v0; v < v0 + kSsimWindow; ++v)
        for (int u = u0; u < u0 + kSsimWindow; ++u) {
          const double x = a.at(u, v), y = b.at(u, v);
          sa += x;
          sb += y;
          saa += x * x;
          sbb += y * y;
          sab += x * y;
        }
      const double ma = sa / n, mb = sb / n;
      const double va = saa / n - ma * ma;
      const double vb = sbb / n - mb * mb;
      const double cab = sab / n - ma * mb;
      total += ((2.0 * ma * mb + c1) * (2.0 * cab + c2)) /
               ((ma * ma + mb * mb + c1) * (va + vb + c2));
      ++windows;
    }
  }
  return total / windows;
}

/// 10 log10(L^2 / MSE); +infinity when the images are identical.
inline double psnr(const Image2D& a, const Image2D& b) {
  detail::require_same_dims(a, b, "psnr");
  const double l = detail::dynamic_range(a, b);
  double se = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const double d = a.data[i] - b.data[i];
    se += d * d;
  }
  if (se == 0.0) return std::numeric_limits<double>::infinity();
  const double mse = se / static_cast<double>(a.data.size());
  return 10.0 * std::log10(l * l / mse);
}

// ---------------------------------------------------------------------------

/// Full evaluation of an estimated transform against ground truth on one
/// volume.  SSIM/PSNR compare the center slices of the volume resampled
/// under each transform, averaged over the three planes (a PSNR mean with
/// any identical plane is +infinity).
inline EvalReport evaluate(const RigidTransform& est, const RigidTransform& gt,
                           const Volume& v) {
  EvalReport r;
  r.so3_deg = geodesic_angle_deg(est.rotation, gt.rotation);
  const EulerAngleError ea = euclidean_angle_errors(est, gt);
  r.ea_mean_deg = ea.mean_deg;
  r.ea_per_plane_deg = ea.per_plane_deg;
  const TranslationError te = translation_error_mm(est, gt, v);
  r.trans_mm_total = te.total_mm;
  r.trans_mm_per_plane = te.per_plane_mm;
  const SliceTriplet s_es = extract_center_slices(apply_transform(v, est));
  const SliceTriplet s_gt = extract_center_slices(apply_transform(v, gt));
  double ssim_sum = 0.0, psnr_sum = 0.0;
  for (int p = 0; p < 3; ++p) {
    ssim_sum += ssim(s_es.plane(p), s_gt.plane(p));
    psnr_sum += psnr(s_es.plane(p), s_gt.plane(p));
  }
  r.ssim = ssim_sum / 3.0;
  r.psnr_db = psnr_sum / 3.0;
  return r;
}

}  // namespace voxalign
