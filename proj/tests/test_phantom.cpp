#include "voxalign/phantom.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "test_support.hpp"
#include "voxalign/pipeline.hpp"

using namespace voxalign;
using namespace testsupport;

namespace {

double angle_between_deg(const Vec3& a, const Vec3& b) {
  return rad_to_deg(std::acos(clamp_unit(dot(normalized(a), normalized(b)))));
}

}  // namespace

TEST(Phantom, IdentityPoseGivesIdentityTransformAndCanonicalPlanes) {
  PhantomSpec spec;
  spec.dims = {64, 64, 64};
  const PhantomBundle b = generate_phantom(spec);

  EXPECT_EQ(b.gt_transform.rotation.m, Rotation3::identity().m);
  EXPECT_NEAR(b.gt_transform.translation.x, 0.0, 1e-15);
  EXPECT_NEAR(b.gt_transform.translation.y, 0.0, 1e-15);
  EXPECT_NEAR(b.gt_transform.translation.z, 0.0, 1e-15);

  const FitResult fit = fit_orthogonal_planes(b.landmarks, b.membership);
  EXPECT_LE(angle_between_deg(fit.planes.normal_s, {1, 0, 0}), rad_to_deg(1e-6));
  EXPECT_LE(angle_between_deg(fit.planes.normal_c, {0, 1, 0}), rad_to_deg(1e-6));
  EXPECT_LE(angle_between_deg(fit.planes.normal_a, {0, 0, 1}), rad_to_deg(1e-6));
  EXPECT_LE(norm(fit.planes.center - b.gt_planes.center), 1e-3);
}

TEST(Phantom, PosedBundleIsRecoveredByPlaneFit) {
  PhantomSpec spec;
  spec.dims = {64, 64, 64};
  RigidTransform pose;
  pose.rotation = rodrigues({0, 1, 0}, deg_to_rad(15.0));
  pose.translation = {0.03, 0, 0};
  spec.pose = pose;
  const PhantomBundle b = generate_phantom(spec);

  const FitResult fit = fit_orthogonal_planes(b.landmarks, b.membership);
  EXPECT_LE(angle_between_deg(fit.planes.normal_s, b.gt_planes.normal_s), rad_to_deg(1e-5));
  EXPECT_LE(angle_between_deg(fit.planes.normal_c, b.gt_planes.normal_c), rad_to_deg(1e-5));
  EXPECT_LE(angle_between_deg(fit.planes.normal_a, b.gt_planes.normal_a), rad_to_deg(1e-5));
  EXPECT_LE(norm(fit.planes.center - b.gt_planes.center), 1e-3);
}

TEST(Phantom, BundleTransformMatchesPlanesToGtTransform) {
  SeededRng rng(601);
  for (int i = 0; i < 20; ++i) {
    PhantomSpec spec;
    spec.dims = {64, 64, 64};
    spec.pose = random_perturbation(rng.next_u64(), 20.0, 0.05);
    const PhantomBundle b = generate_phantom(spec);
    const RigidTransform via_planes = planes_to_gt_transform(b.gt_planes, spec.dims);
    EXPECT_LE(frobenius_distance(via_planes.rotation, b.gt_transform.rotation), 1e-9);
    EXPECT_NEAR(via_planes.translation.x, b.gt_transform.translation.x, 1e-9);
    EXPECT_NEAR(via_planes.translation.y, b.gt_transform.translation.y, 1e-9);
    EXPECT_NEAR(via_planes.translation.z, b.gt_transform.translation.z, 1e-9);
    // landmarks stay inside the volume
    for (const auto& l : b.landmarks)
      for (int a = 0; a < 3; ++a) {
        EXPECT_GE(l.position[a], 0.0);
        EXPECT_LE(l.position[a], 63.0);
      }
  }
}

TEST(Phantom, FixedSeedGivesBitIdenticalVolumes) {
  PhantomSpec spec;
  spec.dims = {48, 48, 48};
  spec.noise_sigma = 0.01;
  spec.seed = 1234;
  spec.pose = random_perturbation(5, 12.0, 0.02);
  const PhantomBundle a = generate_phantom(spec);
  const PhantomBundle b = generate_phantom(spec);
  EXPECT_EQ(a.volume.data, b.volume.data);
}

TEST(Phantom, PoseMovesLandmarksOntoTheSameFeatures) {
  // The intensity under each landmark must be pose-invariant: landmarks
  // ride with the features.
  PhantomSpec canon_spec;
  canon_spec.dims = {96, 96, 96};
  const PhantomBundle canon = generate_phantom(canon_spec);
  PhantomSpec posed_spec = canon_spec;
  posed_spec.pose = random_perturbation(21, 18.0, 0.04);
  const PhantomBundle posed = generate_phantom(posed_spec);
  for (int k = 0; k < 23; ++k) {
    const Vec3 canon_norm{lattice_coord(0, 96) + 2.0 * canon.landmarks[k].position.x / 95.0,
                          lattice_coord(0, 96) + 2.0 * canon.landmarks[k].position.y / 95.0,
                          lattice_coord(0, 96) + 2.0 * canon.landmarks[k].position.z / 95.0};
    const Vec3 posed_norm{-1.0 + 2.0 * posed.landmarks[k].position.x / 95.0,
                          -1.0 + 2.0 * posed.landmarks[k].position.y / 95.0,
                          -1.0 + 2.0 * posed.landmarks[k].position.z / 95.0};
    const double f_canon = bump_field(canonical_phantom_features(), canon_norm);
    const double f_posed =
        bump_field(canonical_phantom_features(), posed_spec.pose.map_point(posed_norm));
    EXPECT_NEAR(f_canon, f_posed, 1e-12) << "landmark " << k + 1;
  }
}

TEST(Phantom, RejectsOutOfBoundsPose) {
  PhantomSpec spec;
  spec.dims = {64, 64, 64};
  spec.pose.translation = {0.8, 0, 0};
  EXPECT_THROW(generate_phantom(spec), std::out_of_range);
}

TEST(Phantom, RejectsBadSpec) {
  PhantomSpec tiny;
  tiny.dims = {16, 64, 64};
  EXPECT_THROW(generate_phantom(tiny), std::invalid_argument);
  PhantomSpec negnoise;
  negnoise.noise_sigma = -0.1;
  EXPECT_THROW(generate_phantom(negnoise), std::invalid_argument);
}

// ---------------------------------------------------------------------------
// Asymmetry check

TEST(PhantomAsymmetry, ShippedPhantomPassesAllTwentyFourRotations) {
  PhantomSpec spec;
  spec.dims = {48, 48, 48};
  const PhantomBundle b = generate_phantom(spec);
  EXPECT_TRUE(phantom_asymmetry_check(b));
}

TEST(PhantomAsymmetry, SphereFails) {
  const std::vector<RadialBump> sphere = {{{0, 0, 0}, {0.6, 0.6, 0.6}, 1.0}};
  const Volume v = render_feature_volume(sphere, {48, 48, 48}, {1, 1, 1},
                                         RigidTransform::identity(), 0.0, 0);
  EXPECT_FALSE(phantom_asymmetry_check(v, 0.0));
}

TEST(PhantomAsymmetry, EllipsoidKeepsHalfTurnSymmetries) {
  const std::vector<RadialBump> ellipsoid = {{{0, 0, 0}, {0.7, 0.5, 0.35}, 1.0}};
  const Volume v = render_feature_volume(ellipsoid, {48, 48, 48}, {1, 1, 1},
                                         RigidTransform::identity(), 0.0, 0);
  EXPECT_FALSE(phantom_asymmetry_check(v, 0.0));
}

TEST(PhantomAsymmetry, RequiresCubicVolume) {
  Volume v({16, 16, 18}, {1, 1, 1}, 0.0f);
  EXPECT_THROW(phantom_asymmetry_check(v, 0.0), std::invalid_argument);
}

// ---------------------------------------------------------------------------
// Round-trip identifiability (desk scale)

TEST(Phantom, PoseRecoveryHasUniqueMinimumAcrossRestarts) {
  PhantomSpec spec;
  spec.dims = {64, 64, 64};
  spec.pose = random_perturbation(31, 10.0, 0.02);
  const PhantomBundle b = generate_phantom(spec);
  const SliceTriplet target = sample_center_slices(b.volume, b.gt_transform);
  const PoseEstimator estimator = gradient_descent_estimator(target, {});

  // Every restart within the initialization ranges must land on the same
  // minimum: the true pose.
  const int restarts = 12;
  for (int r = 0; r < restarts; ++r) {
    StandardizeOptions opts;
    opts.seed = 1000 + r;
    const StandardizeResult res = standardize(b.volume, estimator, opts);
    const double so3 = geodesic_angle_deg(res.accumulated.rotation, b.gt_transform.rotation);
    const Vec3 dt = res.accumulated.translation.vec() - b.gt_transform.translation.vec();
    EXPECT_LE(so3, 1.0) << "restart " << r;
    EXPECT_LE(norm(dt), 1e-3) << "restart " << r;
  }
}
