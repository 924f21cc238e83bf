#pragma once

// Rotation, quaternion, and rigid-transform algebra.
//
// Conventions used throughout the library:
//   * Rotations are 3x3 row-major orthonormal matrices with det +1.
//   * Quaternions are Hamilton (w, x, y, z), kept unit-norm and in canonical
//     sign (w >= 0; if w == 0 the first nonzero component is positive).
//   * Translations are expressed in normalized volume coordinates, where
//     each axis of a volume spans [-1, 1].
//   * A RigidTransform is the pull-back coordinate map of the resampler:
//     the voxel at output coordinate x reads the input volume at
//     R * x + t.  Composition follows from that map (see compose()).

#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>

namespace voxalign {

inline constexpr double kPi = 3.14159265358979323846;

inline double deg_to_rad(double deg) { return deg * (kPi / 180.0); }
inline double rad_to_deg(double rad) { return rad * (180.0 / kPi); }

/// Clamp to [-1, 1] before acos/asin so floating-point drift cannot
/// produce NaN.
inline double clamp_unit(double v) {
  return v < -1.0 ? -1.0 : (v > 1.0 ? 1.0 : v);
}

// ---------------------------------------------------------------------------
// Vec3

struct Vec3 {
  double x = 0.0, y = 0.0, z = 0.0;

  constexpr double operator[](int i) const { return i == 0 ? x : (i == 1 ? y : z); }

  friend constexpr Vec3 operator+(const Vec3& a, const Vec3& b) {
    return {a.x + b.x, a.y + b.y, a.z + b.z};
  }
  friend constexpr Vec3 operator-(const Vec3& a, const Vec3& b) {
    return {a.x - b.x, a.y - b.y, a.z - b.z};
  }
  friend constexpr Vec3 operator*(double s, const Vec3& v) {
    return {s * v.x, s * v.y, s * v.z};
  }
  friend constexpr Vec3 operator-(const Vec3& v) { return {-v.x, -v.y, -v.z}; }
};

inline constexpr double dot(const Vec3& a, const Vec3& b) {
  return a.x * b.x + a.y * b.y + a.z * b.z;
}

inline constexpr Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}

inline double norm(const Vec3& v) { return std::sqrt(dot(v, v)); }

inline Vec3 normalized(const Vec3& v) {
  const double n = norm(v);
  if (n == 0.0) throw std::invalid_argument("cannot normalize zero vector");
  return {v.x / n, v.y / n, v.z / n};
}

// ---------------------------------------------------------------------------
// Quaternion

/// Unit quaternion (w, x, y, z).  The value itself does not self-normalize;
/// use normalized()/canonicalize() or the factory functions.
struct Quaternion {
  double w = 1.0, x = 0.0, y = 0.0, z = 0.0;

  static constexpr Quaternion identity() { return {1.0, 0.0, 0.0, 0.0}; }

  double norm() const { return std::sqrt(w * w + x * x + y * y + z * z); }

  Quaternion normalized() const {
    const double n = norm();
    if (n == 0.0) throw std::invalid_argument("cannot normalize zero quaternion");
    return {w / n, x / n, y / n, z / n};
  }
};

/// Canonical sign: w >= 0, and if w == 0 the first nonzero of (x, y, z)
/// is positive.  +q and -q encode the same rotation; this picks one
/// representative so serialized transforms are unique.
inline Quaternion canonicalize(const Quaternion& q) {
  bool flip = false;
  if (q.w < 0.0) {
    flip = true;
  } else if (q.w == 0.0) {
    if (q.x != 0.0) {
      flip = q.x < 0.0;
    } else if (q.y != 0.0) {
      flip = q.y < 0.0;
    } else {
      flip = q.z < 0.0;
    }
  }
  return flip ? Quaternion{-q.w, -q.x, -q.y, -q.z} : q;
}

// ---------------------------------------------------------------------------
// Rotation3

/// 3x3 rotation matrix, row-major.  Constructed raw; validation happens in
/// the operations that require a proper rotation (see is_rotation()).
struct Rotation3 {
  // r11 r12 r13 / r21 r22 r23 / r31 r32 r33
  std::array<double, 9> m{1, 0, 0, 0, 1, 0, 0, 0, 1};

  static constexpr Rotation3 identity() { return {}; }

  double operator()(int row, int col) const { return m[3 * row + col]; }
  double& operator()(int row, int col) { return m[3 * row + col]; }

  Vec3 row(int i) const { return {m[3 * i], m[3 * i + 1], m[3 * i + 2]}; }
  Vec3 col(int j) const { return {m[j], m[3 + j], m[6 + j]}; }

  static Rotation3 from_rows(const Vec3& r0, const Vec3& r1, const Vec3& r2) {
    Rotation3 r;
    r.m = {r0.x, r0.y, r0.z, r1.x, r1.y, r1.z, r2.x, r2.y, r2.z};
    return r;
  }

  Rotation3 transposed() const {
    Rotation3 t;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) t(i, j) = (*this)(j, i);
    return t;
  }

  double trace() const { return m[0] + m[4] + m[8]; }

  double determinant() const {
    return m[0] * (m[4] * m[8] - m[5] * m[7]) -
           m[1] * (m[3] * m[8] - m[5] * m[6]) +
           m[2] * (m[3] * m[7] - m[4] * m[6]);
  }

  friend Vec3 operator*(const Rotation3& r, const Vec3& v) {
    return {r.m[0] * v.x + r.m[1] * v.y + r.m[2] * v.z,
            r.m[3] * v.x + r.m[4] * v.y + r.m[5] * v.z,
            r.m[6] * v.x + r.m[7] * v.y + r.m[8] * v.z};
  }

  friend Rotation3 operator*(const Rotation3& a, const Rotation3& b) {
    Rotation3 c;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        c(i, j) = a(i, 0) * b(0, j) + a(i, 1) * b(1, j) + a(i, 2) * b(2, j);
      }
    return c;
  }

  friend bool operator==(const Rotation3& a, const Rotation3& b) {
    return a.m == b.m;
  }
};

/// Frobenius distance of R^T R from the identity.
inline double orthonormality_error(const Rotation3& r) {
  double err = 0.0;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      const double g = dot(r.col(i), r.col(j)) - (i == j ? 1.0 : 0.0);
      err += g * g;
    }
  return std::sqrt(err);
}

inline bool is_rotation(const Rotation3& r, double tol = 1e-6) {
  return orthonormality_error(r) <= tol && std::abs(r.determinant() - 1.0) <= tol;
}

// ---------------------------------------------------------------------------
// Quaternion <-> rotation

/// Rotation matrix of a unit quaternion (Hamilton convention).
/// Throws if the quaternion deviates from unit norm by more than 1e-6.
inline Rotation3 quat_to_rotation(const Quaternion& q) {
  if (std::abs(q.norm() - 1.0) > 1e-6)
    throw std::invalid_argument("quat_to_rotation: quaternion is not unit-norm");
  const double w = q.w, x = q.x, y = q.y, z = q.z;
  Rotation3 r;
  r.m = {1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y),
         2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x),
         2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)};
  return r;
}

/// Quaternion of a rotation matrix, canonical sign.  Uses the stable
/// four-branch extraction (branch on the largest of the trace and the
/// diagonal entries), which stays accurate arbitrarily close to 180
/// degrees.  Throws if the input is not orthonormal within 1e-6.
inline Quaternion rotation_to_quat(const Rotation3& r) {
  if (!is_rotation(r))
    throw std::invalid_argument("rotation_to_quat: matrix is not a rotation");
  const double t = r.trace();
  Quaternion q;
  if (t > r(0, 0) && t > r(1, 1) && t > r(2, 2)) {
    const double s = std::sqrt(t + 1.0) * 2.0;  // s = 4w
    q.w = 0.25 * s;
    q.x = (r(2, 1) - r(1, 2)) / s;
    q.y = (r(0, 2) - r(2, 0)) / s;
    q.z = (r(1, 0) - r(0, 1)) / s;
  } else if (r(0, 0) > r(1, 1) && r(0, 0) > r(2, 2)) {
    const double s = std::sqrt(1.0 + r(0, 0) - r(1, 1) - r(2, 2)) * 2.0;  // s = 4x
    q.w = (r(2, 1) - r(1, 2)) / s;
    q.x = 0.25 * s;
    q.y = (r(0, 1) + r(1, 0)) / s;
    q.z = (r(0, 2) + r(2, 0)) / s;
  } else if (r(1, 1) > r(2, 2)) {
    const double s = std::sqrt(1.0 + r(1, 1) - r(0, 0) - r(2, 2)) * 2.0;  // s = 4y
    q.w = (r(0, 2) - r(2, 0)) / s;
    q.x = (r(0, 1) + r(1, 0)) / s;
    q.y = 0.25 * s;
    q.z = (r(1, 2) + r(2, 1)) / s;
  } else {
    const double s = std::sqrt(1.0 + r(2, 2) - r(0, 0) - r(1, 1)) * 2.0;  // s = 4z
    q.w = (r(1, 0) - r(0, 1)) / s;
    q.x = (r(0, 2) + r(2, 0)) / s;
    q.y = (r(1, 2) + r(2, 1)) / s;
    q.z = 0.25 * s;
  }
  return canonicalize(q.normalized());
}

// ---------------------------------------------------------------------------
// Euler angles

/// Euler angles in degrees, extrinsic about the fixed x, y, z axes applied
/// in that order: R = Rz(az) * Ry(ay) * Rx(ax).  Used for initialization
/// only; all error metrics are convention-free.
struct EulerAnglesDeg {
  double ax = 0.0, ay = 0.0, az = 0.0;
};

inline Rotation3 euler_to_rotation(const EulerAnglesDeg& e) {
  const double a = deg_to_rad(e.ax), b = deg_to_rad(e.ay), c = deg_to_rad(e.az);
  const double ca = std::cos(a), sa = std::sin(a);
  const double cb = std::cos(b), sb = std::sin(b);
  const double cc = std::cos(c), sc = std::sin(c);
  // Rz * Ry * Rx, expanded.
  Rotation3 r;
  r.m = {cc * cb, cc * sb * sa - sc * ca, cc * sb * ca + sc * sa,
         sc * cb, sc * sb * sa + cc * ca, sc * sb * ca - cc * sa,
         -sb, cb * sa, cb * ca};
  return r;
}

// ---------------------------------------------------------------------------
// Rigid transform

/// Translation in normalized volume coordinates.  Components of genuine
/// poses lie in [-1, 1]; intermediate algebra (compose/invert) may step
/// outside, which callers can detect via in_unit_range().
struct NormalizedTranslation {
  double x = 0.0, y = 0.0, z = 0.0;

  Vec3 vec() const { return {x, y, z}; }

  bool in_unit_range() const {
    return std::abs(x) <= 1.0 && std::abs(y) <= 1.0 && std::abs(z) <= 1.0;
  }
};

/// Rigid pull-back map: output coordinate x samples the input at
/// R * x + t (both in normalized coordinates).
struct RigidTransform {
  Rotation3 rotation;
  NormalizedTranslation translation;

  static RigidTransform identity() { return {}; }

  /// Apply the coordinate map to a normalized point.
  Vec3 map_point(const Vec3& p) const {
    return rotation * p + translation.vec();
  }
};

struct ComposeInfo {
  bool translation_in_range = true;
};

/// Transform equivalent to resampling with `outer` first and then
/// resampling that result with `inner`:
///   R = R_outer * R_inner,  t = R_outer * t_inner + t_outer.
/// If a composed translation component leaves [-1, 1] the result is still
/// returned exactly (never clamped) and `info`, when given, is flagged.
inline RigidTransform compose(const RigidTransform& outer, const RigidTransform& inner,
                              ComposeInfo* info = nullptr) {
  RigidTransform out;
  out.rotation = outer.rotation * inner.rotation;
  const Vec3 t = outer.rotation * inner.translation.vec() + outer.translation.vec();
  out.translation = {t.x, t.y, t.z};
  if (info) info->translation_in_range = out.translation.in_unit_range();
  return out;
}

/// Inverse under compose(): R^T, -R^T t.
inline RigidTransform invert(const RigidTransform& t) {
  RigidTransform out;
  out.rotation = t.rotation.transposed();
  const Vec3 ti = -(out.rotation * t.translation.vec());
  out.translation = {ti.x, ti.y, ti.z};
  return out;
}

// ---------------------------------------------------------------------------
// Rotation distance

/// Geodesic angle between two rotations in degrees:
/// acos(0.5 * (Tr(R1 R2^T) - 1)), argument clamped.  Returns exact 0 for
/// bit-identical inputs.  Symmetric, in [0, 180].
inline double geodesic_angle_deg(const Rotation3& r1, const Rotation3& r2) {
  if (r1 == r2) return 0.0;
  const Rotation3 rel = r1 * r2.transposed();
  return rad_to_deg(std::acos(clamp_unit(0.5 * (rel.trace() - 1.0))));
}

// ---------------------------------------------------------------------------
// Seeded randomness
//
// The engine is std::mt19937_64, whose stream is fixed by the standard.
// The uniform/normal mappings are written out here because the standard
// library's distribution algorithms are implementation-defined; with them
// in-header the draw sequences are reproducible from the seed alone.

class SeededRng {
 public:
  explicit SeededRng(std::uint64_t seed) : engine_(seed) {}

  /// Uniform in [0, 1), 53-bit resolution.
  double uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Uniform in [lo, hi).  Exact lo when lo == hi.
  double uniform(double lo, double hi) { return lo + uniform01() * (hi - lo); }

  /// Standard normal via Box-Muller (pairs cached).
  double normal01() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    const double u1 = 1.0 - uniform01();  // (0, 1]
    const double u2 = uniform01();
    const double mag = std::sqrt(-2.0 * std::log(u1));
    spare_ = mag * std::sin(2.0 * kPi * u2);
    have_spare_ = true;
    return mag * std::cos(2.0 * kPi * u2);
  }

  std::uint64_t next_u64() { return engine_(); }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

/// Deterministic random rigid perturbation: Euler angles uniform in
/// [-max_angle_deg, max_angle_deg] (drawn in x, y, z order), then
/// translation components uniform in [-max_trans, max_trans].
inline RigidTransform random_perturbation(std::uint64_t seed, double max_angle_deg,
                                          double max_trans) {
  if (max_angle_deg < 0.0 || max_trans < 0.0 || max_trans > 1.0)
    throw std::invalid_argument("random_perturbation: ranges out of domain");
  SeededRng rng(seed);
  EulerAnglesDeg e;
  e.ax = rng.uniform(-max_angle_deg, max_angle_deg);
  e.ay = rng.uniform(-max_angle_deg, max_angle_deg);
  e.az = rng.uniform(-max_angle_deg, max_angle_deg);
  RigidTransform t;
  t.rotation = euler_to_rotation(e);
  t.translation = {rng.uniform(-max_trans, max_trans),
                   rng.uniform(-max_trans, max_trans),
                   rng.uniform(-max_trans, max_trans)};
  return t;
}

}  // namespace voxalign
