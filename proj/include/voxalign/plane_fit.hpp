#pragma once

// Fit of three mutually orthonormal planes with a common center to a
// landmark set, and conversion of the fitted planes into a rigid
// transform.
//
// The plane triple is parameterized by a rotation (the three normals are
// orthonormal by construction) plus a center.  The objective is the sum of
// squared point-to-plane distances over every (landmark, assigned plane)
// pair.  Minimization alternates a closed-form center update with a
// Gauss-Newton step on a 3-parameter rotation increment, starting from the
// eigenvectors of the landmark scatter matrix.
//
// Sign conventions (the objective is sign-invariant, so one is needed for
// reproducible output): the scatter eigenvectors are orientation-pinned by
// the third moment of the landmarks along them; the fitted sagittal and
// coronal normals take positive dot products with the first and second
// pinned eigenvectors, and the axial normal is flipped if needed to make
// the triple right-handed.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "voxalign/geometry.hpp"
#include "voxalign/volume.hpp"

namespace voxalign {

inline constexpr int kPlaneSagittal = 0;
inline constexpr int kPlaneCoronal = 1;
inline constexpr int kPlaneAxial = 2;

inline const char* plane_name(int p) {
  return p == kPlaneSagittal ? "sagittal" : (p == kPlaneCoronal ? "coronal" : "axial");
}

/// Expert-placed point in voxel coordinates of the preprocessed volume.
struct Landmark {
  int id = 0;
  Vec3 position;
};

using LandmarkSet = std::vector<Landmark>;

/// Which planes each landmark constrains, as a bitmask over
/// (sagittal, coronal, axial) = bits 0..2.
struct PlaneMembership {
  std::map<int, unsigned> planes_of;  // landmark id -> bitmask

  bool contains(int id, int plane) const {
    auto it = planes_of.find(id);
    return it != planes_of.end() && (it->second >> plane) & 1u;
  }
};

/// Three orthonormal plane normals and their common center, voxel
/// coordinates.
struct PlaneSet {
  Vec3 normal_s, normal_c, normal_a;
  Vec3 center;

  const Vec3& normal(int p) const {
    return p == kPlaneSagittal ? normal_s : (p == kPlaneCoronal ? normal_c : normal_a);
  }

  double orthonormality_error() const {
    const Rotation3 r = Rotation3::from_rows(normal_s, normal_c, normal_a);
    return voxalign::orthonormality_error(r);
  }

  bool valid(double tol = 1e-6) const {
    const Rotation3 r = Rotation3::from_rows(normal_s, normal_c, normal_a);
    return is_rotation(r, tol);  // orthonormal + right-handed
  }
};

struct FitDegenerateError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Unsigned point-to-plane distance |n . (p - c)| for a unit normal.
inline double point_plane_distance(const Vec3& point, const Vec3& unit_normal,
                                   const Vec3& center) {
  if (std::abs(norm(unit_normal) - 1.0) > 1e-6)
    throw std::invalid_argument("point_plane_distance: normal must be unit length");
  return std::abs(dot(unit_normal, point - center));
}

struct PlaneResidual {
  int landmark_id = 0;
  int plane = 0;
  double distance = 0.0;  // voxels
};

struct FitResult {
  PlaneSet planes;
  std::vector<PlaneResidual> residuals;
  double objective = 0.0;  // sum of squared distances
  int iterations = 0;
  bool converged = false;
};

// ---------------------------------------------------------------------------

namespace detail {

/// Eigen-decomposition of a symmetric 3x3 matrix by cyclic Jacobi sweeps.
/// Eigenvalues descending; eigenvectors are the matching columns.
struct SymmetricEigen3 {
  std::array<double, 3> values{};
  std::array<Vec3, 3> vectors{};
};

inline SymmetricEigen3 symmetric_eigen3(std::array<double, 9> a) {
  std::array<double, 9> v{1, 0, 0, 0, 1, 0, 0, 0, 1};
  for (int sweep = 0; sweep < 50; ++sweep) {
    double off = std::abs(a[1]) + std::abs(a[2]) + std::abs(a[5]);
    if (off < 1e-15 * (std::abs(a[0]) + std::abs(a[4]) + std::abs(a[8]) + 1e-300)) break;
    static constexpr int pairs[3][2] = {{0, 1}, {0, 2}, {1, 2}};
    for (const auto& pq : pairs) {
      const int p = pq[0], q = pq[1];
      const double apq = a[3 * p + q];
      if (apq == 0.0) continue;
      const double theta = (a[3 * q + q] - a[3 * p + p]) / (2.0 * apq);
      const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                       (std::abs(theta) + std::sqrt(theta * theta + 1.0));
      const double c = 1.0 / std::sqrt(t * t + 1.0);
      const double s = t * c;
      for (int k = 0; k < 3; ++k) {
        const double akp = a[3 * k + p], akq = a[3 * k + q];
        a[3 * k + p] = c * akp - s * akq;
        a[3 * k + q] = s * akp + c * akq;
      }
      for (int k = 0; k < 3; ++k) {
        const double apk = a[3 * p + k], aqk = a[3 * q + k];
        a[3 * p + k] = c * apk - s * aqk;
        a[3 * q + k] = s * apk + c * aqk;
      }
      for (int k = 0; k < 3; ++k) {
        const double vkp = v[3 * k + p], vkq = v[3 * k + q];
        v[3 * k + p] = c * vkp - s * vkq;
        v[3 * k + q] = s * vkp + c * vkq;
      }
    }
  }
  SymmetricEigen3 out;
  std::array<int, 3> order{0, 1, 2};
  std::array<double, 3> diag{a[0], a[4], a[8]};
  std::sort(order.begin(), order.end(), [&](int i, int j) { return diag[i] > diag[j]; });
  for (int k = 0; k < 3; ++k) {
    const int j = order[k];
    out.values[k] = diag[j];
    out.vectors[k] = {v[j], v[3 + j], v[6 + j]};
  }
  return out;
}

/// Solve a symmetric positive-definite 3x3 system by Cramer's rule.
inline Vec3 solve3(const std::array<double, 9>& m, const Vec3& b) {
  const double det = m[0] * (m[4] * m[8] - m[5] * m[7]) -
                     m[1] * (m[3] * m[8] - m[5] * m[6]) +
                     m[2] * (m[3] * m[7] - m[4] * m[6]);
  if (std::abs(det) < 1e-300) throw FitDegenerateError("plane fit: singular normal system");
  auto det3 = [](double a0, double a1, double a2, double b0, double b1, double b2,
                 double c0, double c1, double c2) {
    return a0 * (b1 * c2 - b2 * c1) - a1 * (b0 * c2 - b2 * c0) + a2 * (b0 * c1 - b1 * c0);
  };
  const double dx = det3(b.x, m[1], m[2], b.y, m[4], m[5], b.z, m[7], m[8]);
  const double dy = det3(m[0], b.x, m[2], m[3], b.y, m[5], m[6], b.z, m[8]);
  const double dz = det3(m[0], m[1], b.x, m[3], m[4], b.y, m[6], m[7], b.z);
  return {dx / det, dy / det, dz / det};
}

/// Rodrigues rotation of a small-angle increment.
inline Rotation3 rotation_exp(const Vec3& w) {
  const double th = norm(w);
  if (th < 1e-300) return Rotation3::identity();
  const Vec3 a = {w.x / th, w.y / th, w.z / th};
  const double c = std::cos(th), s = std::sin(th), o = 1.0 - c;
  Rotation3 r;
  r.m = {c + a.x * a.x * o,       a.x * a.y * o - a.z * s, a.x * a.z * o + a.y * s,
         a.y * a.x * o + a.z * s, c + a.y * a.y * o,       a.y * a.z * o - a.x * s,
         a.z * a.x * o - a.y * s, a.z * a.y * o + a.x * s, c + a.z * a.z * o};
  return r;
}

}  // namespace detail

// ---------------------------------------------------------------------------

/// Least-squares fit of three orthonormal planes with a common center.
///
/// Preconditions: every landmark id appears in the membership, each plane
/// is constrained by >= 3 landmarks which are not collinear, and there are
/// >= 9 (landmark, plane) constraints in total; otherwise
/// FitDegenerateError.  The fit stops when the objective decreases by less
/// than 1e-10 or after 200 iterations; non-convergence is reported through
/// FitResult::converged with the best iterate retained.
inline FitResult fit_orthogonal_planes(const LandmarkSet& landmarks,
                                       const PlaneMembership& membership) {
  // --- validation
  if (landmarks.empty()) throw std::invalid_argument("plane fit: no landmarks");
  std::map<int, int> seen;
  for (const auto& l : landmarks) {
    if (!(std::isfinite(l.position.x) && std::isfinite(l.position.y) &&
          std::isfinite(l.position.z)))
      throw std::invalid_argument("plane fit: non-finite landmark position");
    if (++seen[l.id] > 1)
      throw std::invalid_argument("plane fit: duplicate landmark id " + std::to_string(l.id));
    auto it = membership.planes_of.find(l.id);
    if (it == membership.planes_of.end() || (it->second & 7u) == 0)
      throw std::invalid_argument("plane fit: landmark " + std::to_string(l.id) +
                                  " has no plane membership");
  }
  std::array<std::vector<const Landmark*>, 3> members;
  std::size_t total_constraints = 0;
  for (const auto& l : landmarks)
    for (int p = 0; p < 3; ++p)
      if (membership.contains(l.id, p)) {
        members[p].push_back(&l);
        ++total_constraints;
      }
  for (int p = 0; p < 3; ++p)
    if (members[p].size() < 3)
      throw FitDegenerateError(std::string("plane fit: plane ") + plane_name(p) +
                               " is constrained by fewer than 3 landmarks");
  if (total_constraints < 9)
    throw FitDegenerateError("plane fit: fewer than 9 constraints in total");
  for (int p = 0; p < 3; ++p) {
    // Collinear landmarks leave the in-plane orientation free.
    Vec3 mu{};
    for (const auto* l : members[p]) mu = mu + l->position;
    mu = (1.0 / members[p].size()) * mu;
    std::array<double, 9> scatter{};
    for (const auto* l : members[p]) {
      const Vec3 d = l->position - mu;
      const double dd[3] = {d.x, d.y, d.z};
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) scatter[3 * i + j] += dd[i] * dd[j];
    }
    const auto eig = detail::symmetric_eigen3(scatter);
    if (eig.values[1] <= 1e-12 * std::max(eig.values[0], 1.0))
      throw FitDegenerateError(std::string("plane fit: landmarks of plane ") + plane_name(p) +
                               " are collinear");
  }

  // --- closed-form center given normals (normals orthonormal)
  auto center_for = [&](const std::array<Vec3, 3>& n) {
    Vec3 c{};
    for (int p = 0; p < 3; ++p) {
      double s = 0.0;
      for (const auto* l : members[p]) s += dot(n[p], l->position);
      c = c + (s / members[p].size()) * n[p];
    }
    return c;
  };
  auto objective_for = [&](const std::array<Vec3, 3>& n, const Vec3& c) {
    double obj = 0.0;
    for (int p = 0; p < 3; ++p)
      for (const auto* l : members[p]) {
        const double r = dot(n[p], l->position - c);
        obj += r * r;
      }
    return obj;
  };

  // --- initialization from the scatter eigenbasis of all landmarks,
  //     orientation-pinned by third moments
  Vec3 mu{};
  for (const auto& l : landmarks) mu = mu + l.position;
  mu = (1.0 / landmarks.size()) * mu;
  std::array<double, 9> scatter{};
  for (const auto& l : landmarks) {
    const Vec3 d = l.position - mu;
    const double dd[3] = {d.x, d.y, d.z};
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) scatter[3 * i + j] += dd[i] * dd[j];
  }
  auto eig = detail::symmetric_eigen3(scatter);
  for (int k = 0; k < 3; ++k) {
    double skew = 0.0;
    for (const auto& l : landmarks) {
      const double t = dot(eig.vectors[k], l.position - mu);
      skew += t * t * t;
    }
    if (skew < 0.0) eig.vectors[k] = -eig.vectors[k];
  }

  static constexpr int perms[6][3] = {{0, 1, 2}, {0, 2, 1}, {1, 0, 2},
                                      {1, 2, 0}, {2, 0, 1}, {2, 1, 0}};
  std::array<Vec3, 3> normals{};
  double best_init = std::numeric_limits<double>::infinity();
  for (const auto& perm : perms) {
    const std::array<Vec3, 3> cand{eig.vectors[perm[0]], eig.vectors[perm[1]],
                                   eig.vectors[perm[2]]};
    const double obj = objective_for(cand, center_for(cand));
    if (obj < best_init) {
      best_init = obj;
      normals = cand;
    }
  }

  // --- alternate closed-form center / Gauss-Newton rotation increment
  Vec3 center = center_for(normals);
  double objective = objective_for(normals, center);
  int iterations = 0;
  bool converged = false;
  for (; iterations < 200; ++iterations) {
    std::array<double, 9> jtj{};
    Vec3 jtr{};
    for (int p = 0; p < 3; ++p)
      for (const auto* l : members[p]) {
        const Vec3 d = l->position - center;
        const double r = dot(normals[p], d);
        const Vec3 j = cross(normals[p], d);  // d r / d omega
        const double jj[3] = {j.x, j.y, j.z};
        for (int i = 0; i < 3; ++i)
          for (int k = 0; k < 3; ++k) jtj[3 * i + k] += jj[i] * jj[k];
        jtr = jtr + r * j;
      }
    Vec3 omega;
    try {
      omega = detail::solve3(jtj, -jtr);
    } catch (const FitDegenerateError&) {
      break;  // gradient flat in all directions; keep the current iterate
    }

    // Backtrack the step if it fails to decrease the objective.
    bool accepted = false;
    for (int halving = 0; halving < 25; ++halving) {
      const Rotation3 rot = detail::rotation_exp(std::pow(0.5, halving) * omega);
      const std::array<Vec3, 3> trial{rot * normals[0], rot * normals[1], rot * normals[2]};
      const Vec3 trial_center = center_for(trial);
      const double trial_obj = objective_for(trial, trial_center);
      if (trial_obj < objective) {
        const double decrease = objective - trial_obj;
        normals = trial;
        center = trial_center;
        objective = trial_obj;
        accepted = true;
        if (decrease < 1e-10) {
          converged = true;
          ++iterations;
        }
        break;
      }
    }
    if (!accepted) {
      converged = true;  // no descent direction left at working precision
      ++iterations;
      break;
    }
    if (converged) break;
  }

  // --- polish orthonormality and apply the sign convention
  normals[0] = normalized(normals[0]);
  normals[1] = normalized(normals[1] - dot(normals[1], normals[0]) * normals[0]);
  normals[2] = normalized(normals[2] - dot(normals[2], normals[0]) * normals[0] -
                          dot(normals[2], normals[1]) * normals[1]);
  if (dot(normals[0], eig.vectors[0]) < 0.0) normals[0] = -normals[0];
  if (dot(normals[1], eig.vectors[1]) < 0.0) normals[1] = -normals[1];
  if (dot(normals[0], cross(normals[1], normals[2])) < 0.0) normals[2] = -normals[2];
  center = center_for(normals);
  objective = objective_for(normals, center);

  FitResult out;
  out.planes = {normals[0], normals[1], normals[2], center};
  out.objective = objective;
  out.iterations = iterations;
  out.converged = converged;
  for (const auto& l : landmarks)
    for (int p = 0; p < 3; ++p)
      if (membership.contains(l.id, p))
        out.residuals.push_back({l.id, p, point_plane_distance(l.position, normals[p], center)});
  return out;
}

/// Rigid transform of a plane set: rotation rows are the plane normals
/// (sagittal, coronal, axial) and the translation is the center converted
/// to normalized [-1, 1] coordinates.  The center must lie inside the
/// volume bounds.
inline RigidTransform planes_to_gt_transform(const PlaneSet& p,
                                             const std::array<int, 3>& volume_dims) {
  if (!p.valid(1e-6))
    throw std::invalid_argument("planes_to_gt_transform: plane set is not orthonormal");
  for (int a = 0; a < 3; ++a) {
    const double c = p.center[a];
    if (!(c >= 0.0 && c <= static_cast<double>(volume_dims[a] - 1)))
      throw std::out_of_range("planes_to_gt_transform: center outside volume bounds");
  }
  RigidTransform t;
  t.rotation = Rotation3::from_rows(p.normal_s, p.normal_c, p.normal_a);
  t.translation = {voxel_to_norm(p.center.x, volume_dims[0]),
                   voxel_to_norm(p.center.y, volume_dims[1]),
                   voxel_to_norm(p.center.z, volume_dims[2])};
  return t;
}

}  // namespace voxalign
