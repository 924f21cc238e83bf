#pragma once

// File formats.  Text formats are hand-auditable; only volumes are binary.
//
//   VVOL volume:  magic "VVOL1\0", three uint32 dims (H, W, D), three
//                 float64 spacings (mm), then H*W*D float32 intensities in
//                 x-fastest order; everything little-endian.
//   Transform:    lines `rotation:` (9 values row-major), `translation:`
//                 (3 values), `quaternion:` (4 values, canonical sign);
//                 17 significant digits, so doubles round-trip exactly.
//   Landmarks:    CSV rows `id,x,y,z` in voxel coordinates.
//   Membership:   CSV rows `id,planes` with planes a subset of "SCA".
//   Plane set:    lines `normal_s/normal_c/normal_a/center:` with 3 values.
//   Eval report:  one `key: value` line per EvalReport field, 6 decimals;
//                 the identical-PSNR sentinel serializes as `inf`.
//   Slice image:  16-bit binary PGM (P5), min-max scaled per image, with
//                 the scale and slice index recorded in a sidecar text
//                 file.
//
// `#` starts a comment line in every text format.

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "voxalign/geometry.hpp"
#include "voxalign/metrics.hpp"
#include "voxalign/pipeline.hpp"
#include "voxalign/plane_fit.hpp"
#include "voxalign/volume.hpp"

namespace voxalign {
namespace io {

namespace detail {

inline std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string fmt6(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (std::isnan(v)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

[[noreturn]] inline void fail(const std::string& path, const std::string& what) {
  throw std::runtime_error(path + ": " + what);
}

inline std::ofstream open_out(const std::string& path, bool binary) {
  std::ofstream f(path, binary ? std::ios::binary : std::ios::out);
  if (!f) fail(path, "cannot open for writing");
  return f;
}

inline std::ifstream open_in(const std::string& path, bool binary) {
  std::ifstream f(path, binary ? std::ios::binary : std::ios::in);
  if (!f) fail(path, "cannot open for reading");
  return f;
}

inline void put_u32le(std::ostream& s, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 24)};
  s.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t get_u32le(std::istream& s) {
  unsigned char b[4];
  s.read(reinterpret_cast<char*>(b), 4);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline void put_u64le(std::ostream& s, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  s.write(reinterpret_cast<const char*>(b), 8);
}

inline std::uint64_t get_u64le(std::istream& s) {
  unsigned char b[8];
  s.read(reinterpret_cast<char*>(b), 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

inline void put_f64le(std::ostream& s, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  put_u64le(s, bits);
}

inline double get_f64le(std::istream& s) {
  const std::uint64_t bits = get_u64le(s);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

inline void put_f32le(std::ostream& s, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32le(s, bits);
}

inline float get_f32le(std::istream& s) {
  const std::uint32_t bits = get_u32le(s);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

/// Next content line (comments and blank lines skipped); false at EOF.
inline bool next_line(std::istream& in, std::string& line) {
  while (std::getline(in, line)) {
    std::size_t i = line.find_first_not_of(" \t\r");
    if (i == std::string::npos) continue;
    if (line[i] == '#') continue;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return true;
  }
  return false;
}

/// Parse `key: v0 v1 ...` with an exact expected count.  Values go through
/// strtod, so `inf` and `nan` sentinels parse too.
inline std::vector<double> parse_keyed_values(const std::string& path, const std::string& line,
                                              const std::string& key, std::size_t count) {
  const std::string prefix = key + ":";
  if (line.compare(0, prefix.size(), prefix) != 0)
    fail(path, "expected `" + key + ":`, got: " + line);
  std::vector<double> vals;
  const char* p = line.c_str() + prefix.size();
  while (*p) {
    char* end = nullptr;
    const double v = std::strtod(p, &end);
    if (end == p) {
      while (*p == ' ' || *p == '\t') ++p;
      if (*p) fail(path, "bad value for `" + key + "`: " + line);
      break;
    }
    vals.push_back(v);
    p = end;
  }
  if (vals.size() != count)
    fail(path, "expected " + std::to_string(count) + " values for `" + key + "`");
  return vals;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// VVOL volumes

inline constexpr char kVvolMagic[6] = {'V', 'V', 'O', 'L', '1', '\0'};

inline void write_vvol(const std::string& path, const Volume& v) {
  v.validate_shape();
  auto f = detail::open_out(path, true);
  f.write(kVvolMagic, 6);
  for (int a = 0; a < 3; ++a) detail::put_u32le(f, static_cast<std::uint32_t>(v.dims[a]));
  for (int a = 0; a < 3; ++a) detail::put_f64le(f, v.spacing[a]);
  for (float x : v.data) detail::put_f32le(f, x);
  if (!f) detail::fail(path, "write failed");
}

inline Volume read_vvol(const std::string& path) {
  auto f = detail::open_in(path, true);
  char magic[6];
  f.read(magic, 6);
  if (!f || std::memcmp(magic, kVvolMagic, 6) != 0)
    detail::fail(path, "not a VVOL file (bad magic)");
  Volume v;
  for (int a = 0; a < 3; ++a) {
    const std::uint32_t d = detail::get_u32le(f);
    if (d < 1 || d > (1u << 14)) detail::fail(path, "unreasonable dimension");
    v.dims[a] = static_cast<int>(d);
  }
  for (int a = 0; a < 3; ++a) {
    v.spacing[a] = detail::get_f64le(f);
    if (!(v.spacing[a] > 0.0) || !std::isfinite(v.spacing[a]))
      detail::fail(path, "invalid spacing");
  }
  v.data.resize(v.voxel_count());
  for (auto& x : v.data) {
    x = detail::get_f32le(f);
    if (!std::isfinite(x)) detail::fail(path, "non-finite intensity");
  }
  if (!f) detail::fail(path, "truncated volume data");
  return v;
}

// ---------------------------------------------------------------------------
// Transforms

inline void write_transform(const std::string& path, const RigidTransform& t) {
  auto f = detail::open_out(path, false);
  f << "# rigid transform: input = rotation * output + translation "
       "(normalized coordinates)\n";
  f << "rotation:";
  for (double v : t.rotation.m) f << ' ' << detail::fmt17(v);
  f << "\ntranslation: " << detail::fmt17(t.translation.x) << ' '
    << detail::fmt17(t.translation.y) << ' ' << detail::fmt17(t.translation.z) << '\n';
  const Quaternion q = rotation_to_quat(t.rotation);
  f << "quaternion: " << detail::fmt17(q.w) << ' ' << detail::fmt17(q.x) << ' '
    << detail::fmt17(q.y) << ' ' << detail::fmt17(q.z) << '\n';
  if (!f) detail::fail(path, "write failed");
}

inline RigidTransform read_transform(const std::string& path) {
  auto f = detail::open_in(path, false);
  std::string line;
  if (!detail::next_line(f, line)) detail::fail(path, "empty transform file");
  const auto r = detail::parse_keyed_values(path, line, "rotation", 9);
  if (!detail::next_line(f, line)) detail::fail(path, "missing translation");
  const auto t = detail::parse_keyed_values(path, line, "translation", 3);
  if (!detail::next_line(f, line)) detail::fail(path, "missing quaternion");
  const auto q = detail::parse_keyed_values(path, line, "quaternion", 4);

  RigidTransform out;
  std::copy(r.begin(), r.end(), out.rotation.m.begin());
  out.translation = {t[0], t[1], t[2]};
  if (!is_rotation(out.rotation, 1e-6))
    detail::fail(path, "rotation block is not orthonormal");
  for (double c : t)
    if (!(c >= -1.0 && c <= 1.0)) detail::fail(path, "translation outside [-1, 1]");
  const Quaternion expect = rotation_to_quat(out.rotation);
  const double dq = std::max({std::abs(expect.w - q[0]), std::abs(expect.x - q[1]),
                              std::abs(expect.y - q[2]), std::abs(expect.z - q[3])});
  if (dq > 1e-6) detail::fail(path, "quaternion inconsistent with rotation");
  return out;
}

// ---------------------------------------------------------------------------
// Landmarks and membership

inline void write_landmarks(const std::string& path, const LandmarkSet& landmarks) {
  auto f = detail::open_out(path, false);
  f << "# id,x,y,z (voxel coordinates)\n";
  for (const auto& l : landmarks)
    f << l.id << ',' << detail::fmt17(l.position.x) << ',' << detail::fmt17(l.position.y)
      << ',' << detail::fmt17(l.position.z) << '\n';
  if (!f) detail::fail(path, "write failed");
}

inline LandmarkSet read_landmarks(const std::string& path) {
  auto f = detail::open_in(path, false);
  LandmarkSet out;
  std::string line;
  while (detail::next_line(f, line)) {
    std::istringstream ss(line);
    Landmark l;
    char c1, c2, c3;
    if (!(ss >> l.id >> c1 >> l.position.x >> c2 >> l.position.y >> c3 >> l.position.z) ||
        c1 != ',' || c2 != ',' || c3 != ',')
      detail::fail(path, "bad landmark row: " + line);
    out.push_back(l);
  }
  if (out.empty()) detail::fail(path, "no landmarks");
  return out;
}

inline void write_membership(const std::string& path, const PlaneMembership& m) {
  auto f = detail::open_out(path, false);
  f << "# id,planes (subset of SCA)\n";
  for (const auto& [id, mask] : m.planes_of) {
    f << id << ',';
    if (mask & (1u << kPlaneSagittal)) f << 'S';
    if (mask & (1u << kPlaneCoronal)) f << 'C';
    if (mask & (1u << kPlaneAxial)) f << 'A';
    f << '\n';
  }
  if (!f) detail::fail(path, "write failed");
}

inline PlaneMembership read_membership(const std::string& path) {
  auto f = detail::open_in(path, false);
  PlaneMembership out;
  std::string line;
  while (detail::next_line(f, line)) {
    const std::size_t comma = line.find(',');
    if (comma == std::string::npos) detail::fail(path, "bad membership row: " + line);
    int id = 0;
    try {
      id = std::stoi(line.substr(0, comma));
    } catch (...) {
      detail::fail(path, "bad landmark id in row: " + line);
    }
    unsigned mask = 0;
    for (char c : line.substr(comma + 1)) {
      if (c == ' ' || c == '\t') continue;
      if (c == 'S')
        mask |= 1u << kPlaneSagittal;
      else if (c == 'C')
        mask |= 1u << kPlaneCoronal;
      else if (c == 'A')
        mask |= 1u << kPlaneAxial;
      else
        detail::fail(path, std::string("unknown plane letter `") + c + "` in row: " + line);
    }
    if (mask == 0) detail::fail(path, "empty plane set in row: " + line);
    if (!out.planes_of.emplace(id, mask).second)
      detail::fail(path, "duplicate landmark id " + std::to_string(id));
  }
  if (out.planes_of.empty()) detail::fail(path, "no membership rows");
  return out;
}

// ---------------------------------------------------------------------------
// Plane sets and fit reports

inline void write_planes(const std::string& path, const PlaneSet& p) {
  auto f = detail::open_out(path, false);
  f << "# orthonormal plane set (normals unit, center in voxel coordinates)\n";
  auto line = [&](const char* key, const Vec3& v) {
    f << key << ": " << detail::fmt17(v.x) << ' ' << detail::fmt17(v.y) << ' '
      << detail::fmt17(v.z) << '\n';
  };
  line("normal_s", p.normal_s);
  line("normal_c", p.normal_c);
  line("normal_a", p.normal_a);
  line("center", p.center);
  if (!f) detail::fail(path, "write failed");
}

inline PlaneSet read_planes(const std::string& path) {
  auto f = detail::open_in(path, false);
  std::string line;
  PlaneSet p;
  auto read_vec = [&](const char* key) -> Vec3 {
    if (!detail::next_line(f, line)) detail::fail(path, std::string("missing ") + key);
    const auto v = detail::parse_keyed_values(path, line, key, 3);
    return {v[0], v[1], v[2]};
  };
  p.normal_s = read_vec("normal_s");
  p.normal_c = read_vec("normal_c");
  p.normal_a = read_vec("normal_a");
  p.center = read_vec("center");
  if (!p.valid(1e-6)) detail::fail(path, "plane set is not orthonormal/right-handed");
  return p;
}

inline void write_fit_report(const std::string& path, const FitResult& r) {
  auto f = detail::open_out(path, false);
  f << "# plane-fit residual report\n";
  f << "objective: " << detail::fmt17(r.objective) << '\n';
  f << "iterations: " << r.iterations << '\n';
  f << "converged: " << (r.converged ? "true" : "false") << '\n';
  f << "# id,plane,distance_voxels\n";
  for (const auto& res : r.residuals)
    f << res.landmark_id << ',' << plane_name(res.plane) << ','
      << detail::fmt17(res.distance) << '\n';
  if (!f) detail::fail(path, "write failed");
}

// ---------------------------------------------------------------------------
// Evaluation reports

inline void write_eval_report(const std::string& path, const EvalReport& r) {
  auto f = detail::open_out(path, false);
  using detail::fmt6;
  f << "so3_deg: " << fmt6(r.so3_deg) << '\n';
  f << "ea_mean_deg: " << fmt6(r.ea_mean_deg) << '\n';
  f << "ea_per_plane_deg: " << fmt6(r.ea_per_plane_deg[0]) << ' '
    << fmt6(r.ea_per_plane_deg[1]) << ' ' << fmt6(r.ea_per_plane_deg[2]) << '\n';
  f << "trans_mm_total: " << fmt6(r.trans_mm_total) << '\n';
  f << "trans_mm_per_plane: " << fmt6(r.trans_mm_per_plane[0]) << ' '
    << fmt6(r.trans_mm_per_plane[1]) << ' ' << fmt6(r.trans_mm_per_plane[2]) << '\n';
  f << "ssim: " << fmt6(r.ssim) << '\n';
  f << "psnr_db: " << fmt6(r.psnr_db) << '\n';
  if (!f) detail::fail(path, "write failed");
}

inline EvalReport read_eval_report(const std::string& path) {
  auto f = detail::open_in(path, false);
  std::string line;
  EvalReport r;
  auto next = [&](const char* key, std::size_t n) {
    if (!detail::next_line(f, line)) detail::fail(path, std::string("missing ") + key);
    return detail::parse_keyed_values(path, line, key, n);
  };
  r.so3_deg = next("so3_deg", 1)[0];
  r.ea_mean_deg = next("ea_mean_deg", 1)[0];
  const auto ea = next("ea_per_plane_deg", 3);
  std::copy(ea.begin(), ea.end(), r.ea_per_plane_deg.begin());
  r.trans_mm_total = next("trans_mm_total", 1)[0];
  const auto tp = next("trans_mm_per_plane", 3);
  std::copy(tp.begin(), tp.end(), r.trans_mm_per_plane.begin());
  r.ssim = next("ssim", 1)[0];
  r.psnr_db = next("psnr_db", 1)[0];
  return r;
}

/// Batch aggregate: per metric, mean +/- sample standard deviation
/// (n - 1 denominator; 0 for a single case).
inline void write_eval_aggregate(const std::string& path,
                                 const std::vector<EvalReport>& reports) {
  if (reports.empty()) detail::fail(path, "no reports to aggregate");
  auto f = detail::open_out(path, false);
  f << "# aggregate over " << reports.size() << " cases: mean +/- std\n";
  f << "cases: " << reports.size() << '\n';
  auto emit = [&](const char* key, auto getter) {
    double mean = 0.0;
    for (const auto& r : reports) mean += getter(r);
    mean /= static_cast<double>(reports.size());
    double var = 0.0;
    if (reports.size() > 1) {
      for (const auto& r : reports) {
        const double d = getter(r) - mean;
        var += d * d;
      }
      var /= static_cast<double>(reports.size() - 1);
    }
    f << key << ": " << detail::fmt6(mean) << " +/- " << detail::fmt6(std::sqrt(var)) << '\n';
  };
  emit("so3_deg", [](const EvalReport& r) { return r.so3_deg; });
  emit("ea_mean_deg", [](const EvalReport& r) { return r.ea_mean_deg; });
  emit("trans_mm_total", [](const EvalReport& r) { return r.trans_mm_total; });
  emit("ssim", [](const EvalReport& r) { return r.ssim; });
  emit("psnr_db", [](const EvalReport& r) { return r.psnr_db; });
  if (!f) detail::fail(path, "write failed");
}

// ---------------------------------------------------------------------------
// Slice images

/// 16-bit binary PGM, min-max scaled per image; the scale goes into a
/// sidecar file next to the pixels.
inline void write_pgm16(const std::string& path, const Image2D& img,
                        const std::string& sidecar_path, const std::string& plane,
                        int slice_index) {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  for (double v : img.data) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  const double scale = hi > lo ? 65535.0 / (hi - lo) : 0.0;
  {
    auto f = detail::open_out(path, true);
    f << "P5\n" << img.width << ' ' << img.height << "\n65535\n";
    for (int v = 0; v < img.height; ++v)
      for (int u = 0; u < img.width; ++u) {
        const double n = (img.at(u, v) - lo) * scale;
        const auto px = static_cast<std::uint16_t>(std::lround(std::min(std::max(n, 0.0), 65535.0)));
        const unsigned char be[2] = {static_cast<unsigned char>(px >> 8),
                                     static_cast<unsigned char>(px & 0xff)};
        f.write(reinterpret_cast<const char*>(be), 2);
      }
    if (!f) detail::fail(path, "write failed");
  }
  auto s = detail::open_out(sidecar_path, false);
  s << "plane: " << plane << '\n';
  s << "slice_index: " << slice_index << '\n';
  s << "width: " << img.width << '\n';
  s << "height: " << img.height << '\n';
  s << "min: " << detail::fmt17(lo) << '\n';
  s << "max: " << detail::fmt17(hi) << '\n';
  if (!s) detail::fail(sidecar_path, "write failed");
}

/// Write the three slices of a triplet as PGM + sidecar pairs with the
/// standard names (slice_<plane>.pgm / slice_<plane>_scale.txt).
inline void write_slice_triplet(const std::string& out_dir, const SliceTriplet& slices,
                                const std::array<int, 3>& slice_indices) {
  static const char* names[3] = {"sagittal", "coronal", "axial"};
  for (int p = 0; p < 3; ++p) {
    const std::string base = out_dir + "/slice_" + names[p];
    write_pgm16(base + ".pgm", slices.plane(p), base + "_scale.txt", names[p],
                slice_indices[p]);
  }
}

// ---------------------------------------------------------------------------
// Run manifests

struct RunManifest {
  std::string command;
  std::string estimator;  // human-readable estimator description
  std::uint64_t seed = 0;
  int n_iters = 0;
  InitRanges init;
  bool gt_supplied = false;
  std::vector<IterationLog> log;
  RigidTransform final_transform;
  bool any_divergence = false;
};

inline void write_run_manifest(const std::string& path, const RunManifest& m) {
  auto f = detail::open_out(path, false);
  f << "command: " << m.command << '\n';
  f << "estimator: " << m.estimator << '\n';
  f << "seed: " << m.seed << '\n';
  f << "n_iters: " << m.n_iters << '\n';
  f << "init_max_angle_deg: " << detail::fmt17(m.init.max_angle_deg) << '\n';
  f << "init_max_trans: " << detail::fmt17(m.init.max_trans) << '\n';
  f << "gt_supplied: " << (m.gt_supplied ? "true" : "false") << '\n';
  for (const auto& e : m.log) {
    f << "iteration " << e.iteration << ':';
    if (e.so3_deg) f << " so3_deg=" << detail::fmt6(*e.so3_deg);
    if (e.trans_mm) f << " trans_mm=" << detail::fmt6(*e.trans_mm);
    if (e.loss) f << " loss=" << detail::fmt6(*e.loss);
    if (e.estimate) {
      f << " estimate_loss=" << detail::fmt6(e.estimate->loss)
        << " steps=" << e.estimate->steps_used
        << " diverged=" << (e.estimate->diverged ? "true" : "false");
    }
    f << '\n';
  }
  f << "diverged: " << (m.any_divergence ? "true" : "false") << '\n';
  f << "final_rotation:";
  for (double v : m.final_transform.rotation.m) f << ' ' << detail::fmt17(v);
  f << "\nfinal_translation: " << detail::fmt17(m.final_transform.translation.x) << ' '
    << detail::fmt17(m.final_transform.translation.y) << ' '
    << detail::fmt17(m.final_transform.translation.z) << '\n';
  if (!f) detail::fail(path, "write failed");
}

}  // namespace io
}  // namespace voxalign
