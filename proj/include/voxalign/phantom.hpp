#pragma once

// Deterministic synthetic "head" phantoms with closed-form intensities and
// analytically known landmarks, planes, and ground-truth transform.
//
// The canonical field is a sum of compactly supported C1 radial bumps
// ((1 - r^2)^2 inside the unit ellipsoid, 0 outside): a head ellipsoid, a
// midline nose ridge, two eye blobs, a mouth bar, and one off-center
// chirality marker that breaks every mirror symmetry.  A posed phantom is
// the canonical field evaluated through the pose's coordinate map
// (volume(x) = F(R x + t)), so the ground truth carries no interpolation
// error.  Landmarks and planes are moved by the matching inverse map so
// they stay glued to the features.
//
// 23 canonical landmarks are distributed 9/7/7 over the sagittal, coronal,
// and axial planes; their spread is deliberately anisotropic and skewed so
// the plane-fit sign convention is stable under rigid motion.

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "voxalign/geometry.hpp"
#include "voxalign/plane_fit.hpp"
#include "voxalign/volume.hpp"

namespace voxalign {

struct PhantomSpec {
  std::array<int, 3> dims{128, 128, 128};
  std::array<double, 3> spacing{0.5, 0.5, 0.5};
  RigidTransform pose;       // pull-back map applied to the canonical field
  double noise_sigma = 0.0;  // additive Gaussian intensity noise
  std::uint64_t seed = 0;
};

struct PhantomBundle {
  PhantomSpec spec;
  Volume volume;
  LandmarkSet landmarks;          // posed, voxel coordinates
  PlaneMembership membership;     // default 9/7/7 assignment
  PlaneSet gt_planes;             // posed, voxel coordinates
  RigidTransform gt_transform;    // planes_to_gt_transform of gt_planes
};

// ---------------------------------------------------------------------------
// Canonical field

struct RadialBump {
  Vec3 center;
  Vec3 radii;
  double amplitude = 1.0;
};

/// Smooth compact bump profile: (1 - r^2)^2 for r < 1, else 0 (C1).
inline double bump_field(const std::vector<RadialBump>& bumps, const Vec3& s) {
  double v = 0.0;
  for (const auto& b : bumps) {
    const double rx = (s.x - b.center.x) / b.radii.x;
    const double ry = (s.y - b.center.y) / b.radii.y;
    const double rz = (s.z - b.center.z) / b.radii.z;
    const double r2 = rx * rx + ry * ry + rz * rz;
    if (r2 < 1.0) {
      const double u = 1.0 - r2;
      v += b.amplitude * u * u;
    }
  }
  return v;
}

/// The standard phantom features, normalized coordinates.
inline const std::vector<RadialBump>& canonical_phantom_features() {
  static const std::vector<RadialBump> features = {
      {{0.00, 0.00, 0.00}, {0.68, 0.55, 0.48}, 1.00},   // head
      {{0.00, 0.42, 0.05}, {0.10, 0.16, 0.30}, 0.85},   // nose ridge (midsagittal)
      {{-0.22, 0.30, 0.22}, {0.11, 0.10, 0.10}, 0.75},  // left eye
      {{0.22, 0.30, 0.22}, {0.11, 0.10, 0.10}, 0.75},   // right eye
      {{0.00, 0.34, -0.22}, {0.18, 0.10, 0.08}, 0.70},  // mouth bar
      {{0.30, -0.18, -0.30}, {0.13, 0.12, 0.12}, 0.65}  // chirality marker
  };
  return features;
}

/// Canonical landmark positions in normalized coordinates, 9/7/7 on the
/// sagittal (x = 0), coronal (y = 0), and axial (z = 0) planes.
inline const std::array<Vec3, 23>& canonical_phantom_landmarks() {
  // The in-plane spreads are zero-mean with positive third moments along
  // every axis and near-diagonal scatter, which keeps the plane-fit sign
  // convention stable under rigid motion and landmark noise.
  static const std::array<Vec3, 23> pts = {{
      // sagittal (x = 0), ids 1..9
      {0.00, 0.50, -0.15},
      {0.00, -0.25, -0.18},
      {0.00, -0.25, -0.15},
      {0.00, 0.44, -0.21},
      {0.00, -0.22, 0.36},
      {0.00, -0.22, -0.18},
      {0.00, 0.36, 0.42},
      {0.00, -0.18, -0.21},
      {0.00, -0.18, 0.30},
      // coronal (y = 0), ids 10..16
      {0.60, 0.00, -0.20},
      {-0.30, 0.00, 0.00},
      {-0.30, 0.00, 0.40},
      {0.52, 0.00, 0.34},
      {-0.26, 0.00, -0.17},
      {-0.26, 0.00, -0.14},
      {0.00, 0.00, -0.23},
      // axial (z = 0), ids 17..23
      {0.62, -0.21, 0.00},
      {-0.31, 0.42, 0.00},
      {-0.31, 0.00, 0.00},
      {0.54, 0.36, 0.00},
      {-0.27, -0.18, 0.00},
      {-0.27, -0.15, 0.00},
      {0.00, -0.24, 0.00},
  }};
  return pts;
}

/// Default membership: ids 1..9 sagittal, 10..16 coronal, 17..23 axial.
inline PlaneMembership default_phantom_membership() {
  PlaneMembership m;
  for (int id = 1; id <= 9; ++id) m.planes_of[id] = 1u << kPlaneSagittal;
  for (int id = 10; id <= 16; ++id) m.planes_of[id] = 1u << kPlaneCoronal;
  for (int id = 17; id <= 23; ++id) m.planes_of[id] = 1u << kPlaneAxial;
  return m;
}

/// Evaluate a feature field over a voxel grid through a pose's coordinate
/// map, with optional seeded Gaussian noise: volume(x) = F(R x + t) + eta.
inline Volume render_feature_volume(const std::vector<RadialBump>& features,
                                    const std::array<int, 3>& dims,
                                    const std::array<double, 3>& spacing,
                                    const RigidTransform& pose, double noise_sigma,
                                    std::uint64_t seed) {
  Volume v(dims, spacing);
  SeededRng rng(seed);
  std::size_t i = 0;
  for (int iz = 0; iz < dims[2]; ++iz)
    for (int iy = 0; iy < dims[1]; ++iy)
      for (int ix = 0; ix < dims[0]; ++ix, ++i) {
        const Vec3 x{lattice_coord(ix, dims[0]), lattice_coord(iy, dims[1]),
                     lattice_coord(iz, dims[2])};
        double val = bump_field(features, pose.map_point(x));
        if (noise_sigma > 0.0) val += noise_sigma * rng.normal01();
        v.data[i] = static_cast<float>(val);
      }
  return v;
}

// ---------------------------------------------------------------------------

/// Generate a posed phantom bundle.  Throws std::out_of_range if the posed
/// landmarks or plane center leave the volume.
inline PhantomBundle generate_phantom(const PhantomSpec& spec) {
  for (int a = 0; a < 3; ++a)
    if (spec.dims[a] < 32) throw std::invalid_argument("phantom: dims must be >= 32");
  if (spec.noise_sigma < 0.0)
    throw std::invalid_argument("phantom: noise_sigma must be >= 0");

  PhantomBundle b;
  b.spec = spec;
  b.volume = render_feature_volume(canonical_phantom_features(), spec.dims, spec.spacing,
                                   spec.pose, spec.noise_sigma, spec.seed);
  b.membership = default_phantom_membership();

  // Features move by the inverse of the pull-back map.
  const RigidTransform motion = invert(spec.pose);
  const auto& canon = canonical_phantom_landmarks();
  for (int k = 0; k < 23; ++k) {
    const Vec3 posed = motion.map_point(canon[k]);
    Vec3 voxel{norm_to_voxel(posed.x, spec.dims[0]), norm_to_voxel(posed.y, spec.dims[1]),
               norm_to_voxel(posed.z, spec.dims[2])};
    for (int a = 0; a < 3; ++a)
      if (!(voxel[a] >= 0.0 && voxel[a] <= static_cast<double>(spec.dims[a] - 1)))
        throw std::out_of_range("phantom: posed landmark leaves the volume");
    b.landmarks.push_back({k + 1, voxel});
  }

  b.gt_planes.normal_s = motion.rotation * Vec3{1, 0, 0};
  b.gt_planes.normal_c = motion.rotation * Vec3{0, 1, 0};
  b.gt_planes.normal_a = motion.rotation * Vec3{0, 0, 1};
  const Vec3 posed_center = motion.map_point(Vec3{0, 0, 0});
  b.gt_planes.center = {norm_to_voxel(posed_center.x, spec.dims[0]),
                        norm_to_voxel(posed_center.y, spec.dims[1]),
                        norm_to_voxel(posed_center.z, spec.dims[2])};

  // Same content as planes_to_gt_transform(gt_planes, dims), constructed
  // directly; the bundle consistency test compares the two routes.
  b.gt_transform.rotation = Rotation3::from_rows(
      b.gt_planes.normal_s, b.gt_planes.normal_c, b.gt_planes.normal_a);
  b.gt_transform.translation = {posed_center.x, posed_center.y, posed_center.z};
  return b;
}

// ---------------------------------------------------------------------------
// Identifiability guard

namespace detail {

/// The 24 proper axis-aligned rotations as signed axis permutations:
/// input_axis[k] -> (source output axis, sign).
struct AxisRotation {
  std::array<int, 3> src{0, 1, 2};
  std::array<int, 3> sign{1, 1, 1};

  bool is_identity() const {
    return src == std::array<int, 3>{0, 1, 2} && sign == std::array<int, 3>{1, 1, 1};
  }
};

inline std::vector<AxisRotation> proper_axis_rotations() {
  std::vector<AxisRotation> out;
  static constexpr int perms[6][3] = {{0, 1, 2}, {0, 2, 1}, {1, 0, 2},
                                      {1, 2, 0}, {2, 0, 1}, {2, 1, 0}};
  static constexpr int perm_sign[6] = {1, -1, -1, 1, 1, -1};
  for (int p = 0; p < 6; ++p)
    for (int sx = -1; sx <= 1; sx += 2)
      for (int sy = -1; sy <= 1; sy += 2)
        for (int sz = -1; sz <= 1; sz += 2) {
          if (perm_sign[p] * sx * sy * sz != 1) continue;  // proper rotations only
          AxisRotation r;
          r.src = {perms[p][0], perms[p][1], perms[p][2]};
          r.sign = {sx, sy, sz};
          out.push_back(r);
        }
  return out;
}

}  // namespace detail

/// True iff every one of the 24 axis-aligned proper rotations (other than
/// the identity) changes the canonical volume by more than
/// 10 * noise_sigma + 1e-3 in mean absolute intensity.  Requires a cubic
/// volume.
inline bool phantom_asymmetry_check(const Volume& canonical, double noise_sigma) {
  if (canonical.dims[0] != canonical.dims[1] || canonical.dims[1] != canonical.dims[2])
    throw std::invalid_argument("phantom_asymmetry_check: volume must be cubic");
  const int n = canonical.dims[0];
  const double threshold = 10.0 * noise_sigma + 1e-3;
  for (const auto& rot : detail::proper_axis_rotations()) {
    if (rot.is_identity()) continue;
    double sum = 0.0;
    for (int oz = 0; oz < n; ++oz)
      for (int oy = 0; oy < n; ++oy)
        for (int ox = 0; ox < n; ++ox) {
          const int out_idx[3] = {ox, oy, oz};
          int in_idx[3];
          for (int k = 0; k < 3; ++k) {
            const int v = out_idx[rot.src[k]];
            in_idx[k] = rot.sign[k] > 0 ? v : n - 1 - v;
          }
          sum += std::abs(static_cast<double>(canonical.at(in_idx[0], in_idx[1], in_idx[2])) -
                          canonical.at(ox, oy, oz));
        }
    if (sum / canonical.voxel_count() <= threshold) return false;
  }
  return true;
}

/// Bundle overload: regenerates the canonical (identity-pose, noiseless)
/// volume of the standard phantom at the bundle's dims.
inline bool phantom_asymmetry_check(const PhantomBundle& b) {
  const Volume canonical =
      render_feature_volume(canonical_phantom_features(), b.spec.dims, b.spec.spacing,
                            RigidTransform::identity(), 0.0, 0);
  return phantom_asymmetry_check(canonical, b.spec.noise_sigma);
}

}  // namespace voxalign
