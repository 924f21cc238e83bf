#pragma once

// Differentiable spatial transformer: normalized-coordinate affine grids,
// trilinear resampling with zero fill outside the volume, and analytic
// gradients of the pose loss.
//
// Coordinate map: the output voxel at normalized coordinate x reads the
// input volume at g = R * x + t.  Normalized-to-voxel conversion is
// align-corners (see volume.hpp).  After conversion, a coordinate within
// 1e-11 voxels of a lattice point is snapped onto it, which absorbs the
// rounding error of the normalized round trip and makes identity
// resampling reproduce the input bit-exactly.
//
// The trilinear value is the 8-neighbor weighted sum; its spatial
// derivative is piecewise constant per cell.  On a cell boundary (integer
// voxel coordinate) the one-sided derivative of the lower cell is used.

#include <array>
#include <cmath>
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <vector>

#include "voxalign/geometry.hpp"
#include "voxalign/volume.hpp"

namespace voxalign {

/// Per-output-voxel input sampling coordinates, normalized units,
/// x-fastest storage like Volume.
struct SamplingGrid {
  std::array<int, 3> dims{0, 0, 0};
  std::vector<Vec3> coords;
  bool has_out_of_range = false;  // any coordinate component outside [-1, 1]

  std::size_t point_count() const {
    return static_cast<std::size_t>(dims[0]) * dims[1] * dims[2];
  }
};

namespace detail {

inline constexpr double kLatticeSnap = 1e-11;  // voxel units

inline double snap_to_lattice(double p) {
  const double r = std::round(p);
  return std::abs(p - r) < kLatticeSnap ? r : p;
}

inline double read_or_zero(const Volume& v, int ix, int iy, int iz) {
  return v.in_bounds(ix, iy, iz) ? static_cast<double>(v.at(ix, iy, iz)) : 0.0;
}

/// Output-lattice normalized coordinate mapped through the transform.
/// apply_transform() and affine_grid() both route through here so their
/// per-voxel arithmetic is identical.
inline Vec3 mapped_grid_point(const RigidTransform& t, int ix, int iy, int iz,
                              const std::array<int, 3>& dims) {
  const Vec3 x{lattice_coord(ix, dims[0]), lattice_coord(iy, dims[1]),
               lattice_coord(iz, dims[2])};
  return t.map_point(x);
}

inline void require_sampler_dims(const std::array<int, 3>& dims) {
  for (int a = 0; a < 3; ++a)
    if (dims[a] < 2)
      throw std::invalid_argument("sampler: dims must be >= 2 per axis");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Sampling

/// Trilinear value at a normalized coordinate; 0 outside the volume.
inline double sample_at(const Volume& u, const Vec3& g) {
  double p[3] = {detail::snap_to_lattice(norm_to_voxel(g.x, u.dims[0])),
                 detail::snap_to_lattice(norm_to_voxel(g.y, u.dims[1])),
                 detail::snap_to_lattice(norm_to_voxel(g.z, u.dims[2]))};
  int i0[3];
  double f[3];
  for (int a = 0; a < 3; ++a) {
    const double fl = std::floor(p[a]);
    i0[a] = static_cast<int>(fl);
    f[a] = p[a] - fl;
  }
  const double wx[2] = {1.0 - f[0], f[0]};
  const double wy[2] = {1.0 - f[1], f[1]};
  const double wz[2] = {1.0 - f[2], f[2]};
  double acc = 0.0;
  for (int dz = 0; dz < 2; ++dz)
    for (int dy = 0; dy < 2; ++dy)
      for (int dx = 0; dx < 2; ++dx) {
        const double w = wx[dx] * wy[dy] * wz[dz];
        if (w != 0.0)
          acc += w * detail::read_or_zero(u, i0[0] + dx, i0[1] + dy, i0[2] + dz);
      }
  return acc;
}

/// Trilinear value plus its derivative with respect to the voxel-space
/// coordinate.  On an exact cell boundary the derivative comes from the
/// lower cell.
struct SampleGrad {
  double value = 0.0;
  Vec3 d_voxel{};  // dV/dp, voxel units
};

inline SampleGrad sample_with_gradient(const Volume& u, const Vec3& g) {
  double p[3] = {detail::snap_to_lattice(norm_to_voxel(g.x, u.dims[0])),
                 detail::snap_to_lattice(norm_to_voxel(g.y, u.dims[1])),
                 detail::snap_to_lattice(norm_to_voxel(g.z, u.dims[2]))};
  int i0[3];
  double f[3];
  for (int a = 0; a < 3; ++a) {
    double fl = std::floor(p[a]);
    double fr = p[a] - fl;
    if (fr == 0.0) {  // boundary: take the lower cell
      fl -= 1.0;
      fr = 1.0;
    }
    i0[a] = static_cast<int>(fl);
    f[a] = fr;
  }
  double c[2][2][2];
  for (int dz = 0; dz < 2; ++dz)
    for (int dy = 0; dy < 2; ++dy)
      for (int dx = 0; dx < 2; ++dx)
        c[dx][dy][dz] = detail::read_or_zero(u, i0[0] + dx, i0[1] + dy, i0[2] + dz);
  const double wx[2] = {1.0 - f[0], f[0]};
  const double wy[2] = {1.0 - f[1], f[1]};
  const double wz[2] = {1.0 - f[2], f[2]};
  SampleGrad out;
  for (int dz = 0; dz < 2; ++dz)
    for (int dy = 0; dy < 2; ++dy)
      for (int dx = 0; dx < 2; ++dx) {
        const double v = c[dx][dy][dz];
        out.value += wx[dx] * wy[dy] * wz[dz] * v;
        out.d_voxel.x += (dx ? v : -v) * wy[dy] * wz[dz];
        out.d_voxel.y += (dy ? v : -v) * wx[dx] * wz[dz];
        out.d_voxel.z += (dz ? v : -v) * wx[dx] * wy[dy];
      }
  return out;
}

// ---------------------------------------------------------------------------
// Grid generation and resampling

/// Sampling grid of a rigid transform over the output lattice of `dims`.
inline SamplingGrid affine_grid(const RigidTransform& t, const std::array<int, 3>& dims) {
  detail::require_sampler_dims(dims);
  SamplingGrid g;
  g.dims = dims;
  g.coords.resize(static_cast<std::size_t>(dims[0]) * dims[1] * dims[2]);
  std::size_t i = 0;
  bool oor = false;
  for (int iz = 0; iz < dims[2]; ++iz)
    for (int iy = 0; iy < dims[1]; ++iy)
      for (int ix = 0; ix < dims[0]; ++ix, ++i) {
        const Vec3 c = detail::mapped_grid_point(t, ix, iy, iz, dims);
        oor |= std::abs(c.x) > 1.0 || std::abs(c.y) > 1.0 || std::abs(c.z) > 1.0;
        g.coords[i] = c;
      }
  g.has_out_of_range = oor;
  return g;
}

/// Resample a volume over an explicit grid.  Output dims are the grid dims,
/// spacing is inherited from the input.
inline Volume trilinear_sample(const Volume& u, const SamplingGrid& g) {
  detail::require_sampler_dims(u.dims);
  if (g.coords.size() != g.point_count())
    throw std::invalid_argument("trilinear_sample: grid size does not match its dims");
  Volume out(g.dims, u.spacing);
  for (std::size_t i = 0; i < g.coords.size(); ++i) {
    const Vec3& c = g.coords[i];
    if (!(std::isfinite(c.x) && std::isfinite(c.y) && std::isfinite(c.z)))
      throw std::invalid_argument("trilinear_sample: non-finite grid coordinate");
    out.data[i] = static_cast<float>(sample_at(u, c));
  }
  return out;
}

/// Resample under a rigid transform.  Equivalent to
/// trilinear_sample(u, affine_grid(t, u.dims)) but streams the grid
/// coordinates instead of materializing them; the per-voxel arithmetic is
/// identical, so the results match bit for bit.
inline Volume apply_transform(const Volume& u, const RigidTransform& t) {
  detail::require_sampler_dims(u.dims);
  Volume out(u.dims, u.spacing);
  std::size_t i = 0;
  for (int iz = 0; iz < u.dims[2]; ++iz)
    for (int iy = 0; iy < u.dims[1]; ++iy)
      for (int ix = 0; ix < u.dims[0]; ++ix, ++i)
        out.data[i] =
            static_cast<float>(sample_at(u, detail::mapped_grid_point(t, ix, iy, iz, u.dims)));
  return out;
}

// ---------------------------------------------------------------------------
// Pose loss and its analytic gradient
//
// Loss (gt present):
//   L = beta * |t - t_gt|_1
//     + gamma * acos(0.5 * (Tr(R(q) R_gt^T) - 1))        [radians]
//     + sum over planes of mean |I(q, t) - target|
// where I(q, t) are the three center slices of the volume resampled at
// pose (q, t).  With gt absent only the image term is present.

namespace detail {

/// Iterate the three center-slice output lattices.  fn(plane, pixel_index,
/// out_coord) is called pixel by pixel in storage order per plane.
template <typename Fn>
inline void for_each_slice_point(const std::array<int, 3>& dims, Fn&& fn) {
  const int cx = dims[0] / 2, cy = dims[1] / 2, cz = dims[2] / 2;
  // sagittal: (u, v) = (y, z)
  {
    const double x0 = lattice_coord(cx, dims[0]);
    std::size_t i = 0;
    for (int iz = 0; iz < dims[2]; ++iz)
      for (int iy = 0; iy < dims[1]; ++iy, ++i)
        fn(0, i, Vec3{x0, lattice_coord(iy, dims[1]), lattice_coord(iz, dims[2])});
  }
  // coronal: (u, v) = (x, z)
  {
    const double y0 = lattice_coord(cy, dims[1]);
    std::size_t i = 0;
    for (int iz = 0; iz < dims[2]; ++iz)
      for (int ix = 0; ix < dims[0]; ++ix, ++i)
        fn(1, i, Vec3{lattice_coord(ix, dims[0]), y0, lattice_coord(iz, dims[2])});
  }
  // axial: (u, v) = (x, y)
  {
    const double z0 = lattice_coord(cz, dims[2]);
    std::size_t i = 0;
    for (int iy = 0; iy < dims[1]; ++iy)
      for (int ix = 0; ix < dims[0]; ++ix, ++i)
        fn(2, i, Vec3{lattice_coord(ix, dims[0]), lattice_coord(iy, dims[1]), z0});
  }
}

inline void require_target_dims(const Volume& u, const SliceTriplet& target) {
  const bool ok = target.sagittal.width == u.dims[1] && target.sagittal.height == u.dims[2] &&
                  target.coronal.width == u.dims[0] && target.coronal.height == u.dims[2] &&
                  target.axial.width == u.dims[0] && target.axial.height == u.dims[1];
  if (!ok)
    throw std::invalid_argument("pose loss: target slice dims do not match the volume");
}

/// d(R)/d(q_k) of the quaternion-to-rotation map, one matrix per component.
inline std::array<Rotation3, 4> rotation_quat_jacobian(const Quaternion& q) {
  const double w = q.w, x = q.x, y = q.y, z = q.z;
  std::array<Rotation3, 4> d;
  d[0].m = {0, -2 * z, 2 * y, 2 * z, 0, -2 * x, -2 * y, 2 * x, 0};
  d[1].m = {0, 2 * y, 2 * z, 2 * y, -4 * x, -2 * w, 2 * z, 2 * w, -4 * x};
  d[2].m = {-4 * y, 2 * x, 2 * w, 2 * x, 0, 2 * z, -2 * w, 2 * z, -4 * y};
  d[3].m = {-4 * z, -2 * w, 2 * x, 2 * w, -4 * z, 2 * y, 2 * x, 2 * y, 0};
  return d;
}

inline double sign_of(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

}  // namespace detail

/// Center slices of the resampled volume, computed by sampling the three
/// slice lattices directly in double precision.  Matches
/// extract_center_slices(apply_transform(u, t)) up to the float rounding
/// of the intermediate volume; this is the exact function the pose loss
/// sees.
inline SliceTriplet sample_center_slices(const Volume& u, const RigidTransform& t) {
  detail::require_sampler_dims(u.dims);
  SliceTriplet s;
  s.sagittal = Image2D(u.dims[1], u.dims[2], {u.spacing[1], u.spacing[2]});
  s.coronal = Image2D(u.dims[0], u.dims[2], {u.spacing[0], u.spacing[2]});
  s.axial = Image2D(u.dims[0], u.dims[1], {u.spacing[0], u.spacing[1]});
  detail::for_each_slice_point(u.dims, [&](int plane, std::size_t pix, const Vec3& x) {
    s.plane(plane).data[pix] = sample_at(u, t.map_point(x));
  });
  return s;
}

struct PoseLossResult {
  double loss = 0.0;
  std::array<double, 7> gradient{};  // d/d(q0..q3, tx, ty, tz)
};

/// Shared evaluator for the pose loss and (optionally) its gradient.
/// The quaternion is normalized before use, so finite-difference probes of
/// the loss see exactly the function whose tangent-projected gradient is
/// reported.
inline PoseLossResult pose_loss_with_gradient(
    const Volume& u, const SliceTriplet& target, const Quaternion& q_in,
    const NormalizedTranslation& t, double beta, double gamma,
    const RigidTransform* gt, bool want_gradient) {
  detail::require_sampler_dims(u.dims);
  detail::require_target_dims(u, target);
  if (std::abs(q_in.norm() - 1.0) > 0.1)
    throw std::invalid_argument("pose loss: quaternion too far from unit norm");
  // Normalize, except when already unit to near machine precision: exact
  // inputs must pass through bit-unchanged so residuals vanish exactly at
  // the target-generating pose.
  const Quaternion q =
      std::abs(q_in.norm() - 1.0) < 1e-12 ? q_in : q_in.normalized();
  const Rotation3 rot = quat_to_rotation(q);
  const RigidTransform pose{rot, t};

  PoseLossResult out;
  std::array<double, 7>& grad = out.gradient;

  const std::array<Rotation3, 4> drdq =
      want_gradient ? detail::rotation_quat_jacobian(q) : std::array<Rotation3, 4>{};
  const double pix_count[3] = {
      static_cast<double>(target.sagittal.data.size()),
      static_cast<double>(target.coronal.data.size()),
      static_cast<double>(target.axial.data.size())};
  const double axis_scale[3] = {0.5 * (u.dims[0] - 1), 0.5 * (u.dims[1] - 1),
                                0.5 * (u.dims[2] - 1)};

  double plane_abs_sum[3] = {0.0, 0.0, 0.0};
  detail::for_each_slice_point(u.dims, [&](int plane, std::size_t pix, const Vec3& x_out) {
    const Vec3 g = pose.map_point(x_out);
    if (want_gradient) {
      const SampleGrad s = sample_with_gradient(u, g);
      const double r = s.value - target.plane(plane).data[pix];
      plane_abs_sum[plane] += std::abs(r);
      const double scale = detail::sign_of(r) / pix_count[plane];
      if (scale != 0.0) {
        // dV/d(normalized g)
        const Vec3 dvdg{s.d_voxel.x * axis_scale[0], s.d_voxel.y * axis_scale[1],
                        s.d_voxel.z * axis_scale[2]};
        grad[4] += scale * dvdg.x;
        grad[5] += scale * dvdg.y;
        grad[6] += scale * dvdg.z;
        for (int k = 0; k < 4; ++k) grad[k] += scale * dot(dvdg, drdq[k] * x_out);
      }
    } else {
      plane_abs_sum[plane] += std::abs(sample_at(u, g) - target.plane(plane).data[pix]);
    }
  });
  for (int p = 0; p < 3; ++p) out.loss += plane_abs_sum[p] / pix_count[p];

  if (gt) {
    const Vec3 dt = t.vec() - gt->translation.vec();
    out.loss += beta * (std::abs(dt.x) + std::abs(dt.y) + std::abs(dt.z));
    const Rotation3 rel = rot * gt->rotation.transposed();
    const double f = clamp_unit(0.5 * (rel.trace() - 1.0));
    out.loss += gamma * std::acos(f);
    if (want_gradient) {
      grad[4] += beta * detail::sign_of(dt.x);
      grad[5] += beta * detail::sign_of(dt.y);
      grad[6] += beta * detail::sign_of(dt.z);
      // d acos(f)/dq through f = (Tr(R G^T) - 1)/2; zero at the f -> 1 cusp.
      if (f < 1.0 - 1e-12) {
        const double dacos = -1.0 / std::sqrt(1.0 - f * f);
        for (int k = 0; k < 4; ++k) {
          double tr = 0.0;
          for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) tr += drdq[k](i, j) * gt->rotation(i, j);
          grad[k] += gamma * dacos * 0.5 * tr;
        }
      }
    }
  }

  if (want_gradient) {
    // Project the quaternion gradient onto the tangent of the unit sphere.
    const double gq = grad[0] * q.w + grad[1] * q.x + grad[2] * q.y + grad[3] * q.z;
    grad[0] -= gq * q.w;
    grad[1] -= gq * q.x;
    grad[2] -= gq * q.y;
    grad[3] -= gq * q.z;
  }
  return out;
}

/// Loss value only.  Accepts mildly non-unit quaternions (they are
/// normalized), which is what finite-difference probes need.
inline double pose_loss(const Volume& u, const SliceTriplet& target, const Quaternion& q,
                        const NormalizedTranslation& t, double beta, double gamma,
                        const RigidTransform* gt = nullptr) {
  return pose_loss_with_gradient(u, target, q, t, beta, gamma, gt, false).loss;
}

/// Analytic gradient of the pose loss with respect to (q0, q1, q2, q3,
/// tx, ty, tz); the quaternion part is tangent-projected.  Requires a
/// unit quaternion within 1e-6.
inline std::array<double, 7> loss_pose_gradient(const Volume& u, const SliceTriplet& target,
                                                const Quaternion& q,
                                                const NormalizedTranslation& t, double beta,
                                                double gamma,
                                                const RigidTransform* gt = nullptr) {
  if (std::abs(q.norm() - 1.0) > 1e-6)
    throw std::invalid_argument("loss_pose_gradient: quaternion is not unit-norm");
  return pose_loss_with_gradient(u, target, q, t, beta, gamma, gt, true).gradient;
}

}  // namespace voxalign
