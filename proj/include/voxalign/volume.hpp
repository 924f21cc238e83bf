#pragma once

// Volume storage and preprocessing: 2x mean-pool downsampling, symmetric
// zero-padding, and center-slice extraction.
//
// Storage convention (fixed): a volume has dims (H, W, D), the sizes along
// the x, y, z axes.  Intensities are stored x-fastest:
//   index(ix, iy, iz) = ix + H * (iy + W * iz).
// Normalized coordinates are align-corners style: voxel k on an axis of
// size n sits at -1 + 2k/(n-1), so -1 and +1 are the centers of the first
// and last voxels.
//
// Slice orientation (matching the storage convention):
//   sagittal = x-slice at floor(H/2), image axes (u, v) = (y, z)
//   coronal  = y-slice at floor(W/2), image axes (u, v) = (x, z)
//   axial    = z-slice at floor(D/2), image axes (u, v) = (x, y)
// Slice pixels are stored u-fastest: index(u, v) = u + width * v.

#include <array>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "voxalign/geometry.hpp"

namespace voxalign {

/// Normalized coordinate of lattice index k on an axis of size n.
inline double lattice_coord(int k, int n) {
  if (n < 2) return 0.0;  // single-voxel axis: the center
  return -1.0 + 2.0 * static_cast<double>(k) / static_cast<double>(n - 1);
}

/// Inverse of lattice_coord: normalized -> voxel units.
inline double norm_to_voxel(double x, int n) {
  return (x + 1.0) * 0.5 * static_cast<double>(n - 1);
}

/// Voxel units -> normalized, used when converting centers/translations.
inline double voxel_to_norm(double p, int n) {
  return 2.0 * p / static_cast<double>(n - 1) - 1.0;
}

// ---------------------------------------------------------------------------

/// 3D scalar intensity grid.  Intensities are stored as float; all
/// computation on them is done in double.
struct Volume {
  std::array<int, 3> dims{0, 0, 0};            // (H, W, D) = sizes along x, y, z
  std::array<double, 3> spacing{1.0, 1.0, 1.0};  // mm per voxel
  std::vector<float> data;                     // x-fastest

  Volume() = default;
  Volume(std::array<int, 3> d, std::array<double, 3> sp, float fill = 0.0f)
      : dims(d), spacing(sp) {
    validate_shape();
    data.assign(voxel_count(), fill);
  }

  std::size_t voxel_count() const {
    return static_cast<std::size_t>(dims[0]) * dims[1] * dims[2];
  }

  std::size_t index(int ix, int iy, int iz) const {
    return static_cast<std::size_t>(ix) +
           static_cast<std::size_t>(dims[0]) *
               (static_cast<std::size_t>(iy) + static_cast<std::size_t>(dims[1]) * iz);
  }

  float at(int ix, int iy, int iz) const { return data[index(ix, iy, iz)]; }
  float& at(int ix, int iy, int iz) { return data[index(ix, iy, iz)]; }

  bool in_bounds(int ix, int iy, int iz) const {
    return ix >= 0 && ix < dims[0] && iy >= 0 && iy < dims[1] && iz >= 0 && iz < dims[2];
  }

  void validate_shape() const {
    for (int a = 0; a < 3; ++a) {
      if (dims[a] < 1) throw std::invalid_argument("Volume: dims must be >= 1");
      if (!(spacing[a] > 0.0)) throw std::invalid_argument("Volume: spacing must be > 0");
    }
  }
};

/// 2D scalar image, u-fastest.  Pixel values in double: slices feed the
/// loss/gradient path, where float rounding would inject sign noise into
/// the L1 residuals.
struct Image2D {
  int width = 0, height = 0;
  std::array<double, 2> spacing{1.0, 1.0};
  std::vector<double> data;

  Image2D() = default;
  Image2D(int w, int h, std::array<double, 2> sp = {1.0, 1.0}, double fill = 0.0)
      : width(w), height(h), spacing(sp), data(static_cast<std::size_t>(w) * h, fill) {}

  std::size_t index(int u, int v) const {
    return static_cast<std::size_t>(u) + static_cast<std::size_t>(width) * v;
  }
  double at(int u, int v) const { return data[index(u, v)]; }
  double& at(int u, int v) { return data[index(u, v)]; }
};

/// The three orthogonal center slices (sagittal, coronal, axial).
struct SliceTriplet {
  Image2D sagittal, coronal, axial;

  const Image2D& plane(int p) const {
    return p == 0 ? sagittal : (p == 1 ? coronal : axial);
  }
  Image2D& plane(int p) { return p == 0 ? sagittal : (p == 1 ? coronal : axial); }
};

// ---------------------------------------------------------------------------
// Preprocessing

/// Downsample by a factor of two with 2x2x2 mean pooling.  Odd axes keep a
/// final slab averaged over the voxels that exist; output dims are
/// ceil(n/2) and spacing doubles.
inline Volume downsample_by_two(const Volume& v) {
  v.validate_shape();
  Volume out({(v.dims[0] + 1) / 2, (v.dims[1] + 1) / 2, (v.dims[2] + 1) / 2},
             {v.spacing[0] * 2.0, v.spacing[1] * 2.0, v.spacing[2] * 2.0});
  for (int oz = 0; oz < out.dims[2]; ++oz) {
    for (int oy = 0; oy < out.dims[1]; ++oy) {
      for (int ox = 0; ox < out.dims[0]; ++ox) {
        double sum = 0.0;
        int count = 0;
        for (int dz = 0; dz < 2; ++dz)
          for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx) {
              const int ix = 2 * ox + dx, iy = 2 * oy + dy, iz = 2 * oz + dz;
              if (v.in_bounds(ix, iy, iz)) {
                sum += v.at(ix, iy, iz);
                ++count;
              }
            }
        out.at(ox, oy, oz) = static_cast<float>(sum / count);
      }
    }
  }
  return out;
}

/// Symmetric zero-padding to an N^3 cube.  The original volume is centered;
/// an odd pad puts the extra voxel on the high side.  Spacing is preserved.
inline Volume zero_pad_to_cube(const Volume& v, int n = 256) {
  v.validate_shape();
  for (int a = 0; a < 3; ++a)
    if (v.dims[a] > n)
      throw std::invalid_argument("zero_pad_to_cube: volume dimension exceeds target size");
  Volume out({n, n, n}, v.spacing, 0.0f);
  const int lo[3] = {(n - v.dims[0]) / 2, (n - v.dims[1]) / 2, (n - v.dims[2]) / 2};
  for (int iz = 0; iz < v.dims[2]; ++iz)
    for (int iy = 0; iy < v.dims[1]; ++iy)
      for (int ix = 0; ix < v.dims[0]; ++ix)
        out.at(ix + lo[0], iy + lo[1], iz + lo[2]) = v.at(ix, iy, iz);
  return out;
}

/// Center slices by direct indexing: sagittal at floor(H/2), coronal at
/// floor(W/2), axial at floor(D/2).
inline SliceTriplet extract_center_slices(const Volume& v) {
  v.validate_shape();
  SliceTriplet s;
  const int cx = v.dims[0] / 2, cy = v.dims[1] / 2, cz = v.dims[2] / 2;
  s.sagittal = Image2D(v.dims[1], v.dims[2], {v.spacing[1], v.spacing[2]});
  for (int iz = 0; iz < v.dims[2]; ++iz)
    for (int iy = 0; iy < v.dims[1]; ++iy)
      s.sagittal.at(iy, iz) = v.at(cx, iy, iz);
  s.coronal = Image2D(v.dims[0], v.dims[2], {v.spacing[0], v.spacing[2]});
  for (int iz = 0; iz < v.dims[2]; ++iz)
    for (int ix = 0; ix < v.dims[0]; ++ix)
      s.coronal.at(ix, iz) = v.at(ix, cy, iz);
  s.axial = Image2D(v.dims[0], v.dims[1], {v.spacing[0], v.spacing[1]});
  for (int iy = 0; iy < v.dims[1]; ++iy)
    for (int ix = 0; ix < v.dims[0]; ++ix)
      s.axial.at(ix, iy) = v.at(ix, iy, cz);
  return s;
}

/// Slice indices used by extract_center_slices, exposed for sidecar
/// metadata.
inline std::array<int, 3> center_slice_indices(const Volume& v) {
  return {v.dims[0] / 2, v.dims[1] / 2, v.dims[2] / 2};
}

}  // namespace voxalign
