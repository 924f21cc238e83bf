#include "voxalign/io.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "test_support.hpp"
#include "voxalign/phantom.hpp"

using namespace voxalign;
using namespace testsupport;
namespace fs = std::filesystem;

namespace {

std::string scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "voxalign_tests" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir.string();
}

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  EXPECT_TRUE(bool(f)) << path;
  return std::string(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(VOXALIGN_CLI_PATH) + " " + args + " 2>/dev/null";
  const int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

}  // namespace

// ---------------------------------------------------------------------------
// VVOL

TEST(IoVvol, RoundTripsBitExactly) {
  SeededRng rng(801);
  const std::string dir = scratch_dir("vvol");
  const Volume v = random_volume(rng, {9, 7, 5}, {0.4, 0.5, 0.6});
  io::write_vvol(dir + "/v.vvol", v);
  const Volume r = io::read_vvol(dir + "/v.vvol");
  EXPECT_EQ(r.dims, v.dims);
  EXPECT_EQ(r.spacing, v.spacing);
  EXPECT_EQ(r.data, v.data);
}

TEST(IoVvol, RejectsBadMagicAndTruncation) {
  const std::string dir = scratch_dir("vvol_bad");
  {
    std::ofstream f(dir + "/bad.vvol", std::ios::binary);
    f << "NOTVOL data";
  }
  EXPECT_THROW(io::read_vvol(dir + "/bad.vvol"), std::runtime_error);
  {
    Volume v({4, 4, 4}, {1, 1, 1}, 1.0f);
    io::write_vvol(dir + "/t.vvol", v);
    const std::string full = read_file(dir + "/t.vvol");
    std::ofstream f(dir + "/t.vvol", std::ios::binary);
    f.write(full.data(), static_cast<long>(full.size() - 10));
  }
  EXPECT_THROW(io::read_vvol(dir + "/t.vvol"), std::runtime_error);
  EXPECT_THROW(io::read_vvol(dir + "/missing.vvol"), std::runtime_error);
}

// ---------------------------------------------------------------------------
// Transform documents

TEST(IoTransform, RoundTripsExactly) {
  SeededRng rng(802);
  const std::string dir = scratch_dir("transform");
  for (int i = 0; i < 20; ++i) {
    const RigidTransform t = random_transform(rng, 0.5);
    io::write_transform(dir + "/t.txt", t);
    const RigidTransform r = io::read_transform(dir + "/t.txt");
    EXPECT_EQ(r.rotation.m, t.rotation.m);  // 17 significant digits round-trip
    EXPECT_EQ(r.translation.x, t.translation.x);
    EXPECT_EQ(r.translation.y, t.translation.y);
    EXPECT_EQ(r.translation.z, t.translation.z);
  }
}

TEST(IoTransform, RejectsTamperedFiles) {
  SeededRng rng(803);
  const std::string dir = scratch_dir("transform_bad");
  const RigidTransform t = random_transform(rng, 0.5);
  io::write_transform(dir + "/t.txt", t);
  std::string text = read_file(dir + "/t.txt");

  {  // break orthonormality
    std::ofstream f(dir + "/bad1.txt");
    f << "rotation: 1 0.2 0 0 1 0 0 0 1\ntranslation: 0 0 0\nquaternion: 1 0 0 0\n";
  }
  EXPECT_THROW(io::read_transform(dir + "/bad1.txt"), std::runtime_error);
  {  // quaternion inconsistent with the rotation
    std::ofstream f(dir + "/bad2.txt");
    f << "rotation: 1 0 0 0 1 0 0 0 1\ntranslation: 0 0 0\nquaternion: 0 1 0 0\n";
  }
  EXPECT_THROW(io::read_transform(dir + "/bad2.txt"), std::runtime_error);
  {  // translation out of range
    std::ofstream f(dir + "/bad3.txt");
    f << "rotation: 1 0 0 0 1 0 0 0 1\ntranslation: 1.5 0 0\nquaternion: 1 0 0 0\n";
  }
  EXPECT_THROW(io::read_transform(dir + "/bad3.txt"), std::runtime_error);
}

// ---------------------------------------------------------------------------
// Landmarks / membership / planes

TEST(IoLandmarks, RoundTripWithCommentsAndErrors) {
  const std::string dir = scratch_dir("landmarks");
  PhantomSpec spec;
  spec.dims = {48, 48, 48};
  const PhantomBundle b = generate_phantom(spec);
  io::write_landmarks(dir + "/l.csv", b.landmarks);
  const LandmarkSet r = io::read_landmarks(dir + "/l.csv");
  ASSERT_EQ(r.size(), b.landmarks.size());
  for (std::size_t i = 0; i < r.size(); ++i) {
    EXPECT_EQ(r[i].id, b.landmarks[i].id);
    EXPECT_EQ(r[i].position.x, b.landmarks[i].position.x);
  }
  {
    std::ofstream f(dir + "/bad.csv");
    f << "1,2.0,3.0\n";  // missing z
  }
  EXPECT_THROW(io::read_landmarks(dir + "/bad.csv"), std::runtime_error);
}

TEST(IoMembership, RoundTripAndValidation) {
  const std::string dir = scratch_dir("membership");
  const PlaneMembership m = default_phantom_membership();
  io::write_membership(dir + "/m.csv", m);
  const PlaneMembership r = io::read_membership(dir + "/m.csv");
  EXPECT_EQ(r.planes_of, m.planes_of);
  {
    std::ofstream f(dir + "/multi.csv");
    f << "5,SC\n6,A\n7,SCA\n";
  }
  const PlaneMembership multi = io::read_membership(dir + "/multi.csv");
  EXPECT_TRUE(multi.contains(5, kPlaneSagittal));
  EXPECT_TRUE(multi.contains(5, kPlaneCoronal));
  EXPECT_FALSE(multi.contains(5, kPlaneAxial));
  EXPECT_TRUE(multi.contains(7, kPlaneAxial));
  {
    std::ofstream f(dir + "/bad.csv");
    f << "5,SQ\n";
  }
  EXPECT_THROW(io::read_membership(dir + "/bad.csv"), std::runtime_error);
}

TEST(IoPlanes, RoundTripAndValidation) {
  const std::string dir = scratch_dir("planes");
  SeededRng rng(804);
  const Rotation3 r = random_rotation(rng);
  PlaneSet p{r.row(0), r.row(1), r.row(2), {10.5, 20.25, 30.125}};
  io::write_planes(dir + "/p.txt", p);
  const PlaneSet q = io::read_planes(dir + "/p.txt");
  EXPECT_EQ(q.normal_s.x, p.normal_s.x);
  EXPECT_EQ(q.center.z, p.center.z);
  {
    std::ofstream f(dir + "/bad.txt");
    f << "normal_s: 1 0 0\nnormal_c: 1 0 0\nnormal_a: 0 0 1\ncenter: 0 0 0\n";
  }
  EXPECT_THROW(io::read_planes(dir + "/bad.txt"), std::runtime_error);
}

// ---------------------------------------------------------------------------
// Eval reports

TEST(IoEvalReport, RoundTripsAtSerializedPrecision) {
  const std::string dir = scratch_dir("report");
  EvalReport r;
  r.so3_deg = 12.3456789;
  r.ea_mean_deg = 3.14159265;
  r.ea_per_plane_deg = {1.0 / 3.0, 2.0 / 7.0, 0.125};
  r.trans_mm_total = 4.2;
  r.trans_mm_per_plane = {0.1, 0.2, 0.3};
  r.ssim = 0.87654321;
  r.psnr_db = std::numeric_limits<double>::infinity();
  io::write_eval_report(dir + "/r.txt", r);
  const EvalReport q = io::read_eval_report(dir + "/r.txt");
  EXPECT_NEAR(q.so3_deg, r.so3_deg, 5e-7);
  EXPECT_NEAR(q.ea_per_plane_deg[1], r.ea_per_plane_deg[1], 5e-7);
  EXPECT_NEAR(q.ssim, r.ssim, 5e-7);
  EXPECT_TRUE(std::isinf(q.psnr_db));
  const std::string text = read_file(dir + "/r.txt");
  EXPECT_NE(text.find("psnr_db: inf"), std::string::npos);
}

TEST(IoEvalAggregate, MeanAndStdMatchHandComputation) {
  const std::string dir = scratch_dir("aggregate");
  std::vector<EvalReport> reports(3);
  reports[0].so3_deg = 1.0;
  reports[1].so3_deg = 2.0;
  reports[2].so3_deg = 4.0;
  for (auto& r : reports) r.psnr_db = 30.0;
  io::write_eval_aggregate(dir + "/agg.txt", reports);
  const std::string text = read_file(dir + "/agg.txt");
  // mean 7/3 = 2.333333, sample std = sqrt(7/3) = 1.527525
  EXPECT_NE(text.find("so3_deg: 2.333333 +/- 1.527525"), std::string::npos) << text;
  EXPECT_NE(text.find("cases: 3"), std::string::npos);
}

// ---------------------------------------------------------------------------
// PGM slices

TEST(IoPgm, WritesSixteenBitImagesWithScaleSidecar) {
  const std::string dir = scratch_dir("pgm");
  Image2D img(4, 3);
  for (std::size_t i = 0; i < img.data.size(); ++i) img.data[i] = static_cast<double>(i);
  io::write_pgm16(dir + "/a.pgm", img, dir + "/a_scale.txt", "axial", 7);
  const std::string pgm = read_file(dir + "/a.pgm");
  EXPECT_EQ(pgm.substr(0, 3), "P5\n");
  EXPECT_NE(pgm.find("4 3\n65535\n"), std::string::npos);
  // last pixel has the max value: big-endian 0xFFFF
  EXPECT_EQ(static_cast<unsigned char>(pgm[pgm.size() - 1]), 0xFF);
  EXPECT_EQ(static_cast<unsigned char>(pgm[pgm.size() - 2]), 0xFF);
  const std::string sidecar = read_file(dir + "/a_scale.txt");
  EXPECT_NE(sidecar.find("plane: axial"), std::string::npos);
  EXPECT_NE(sidecar.find("slice_index: 7"), std::string::npos);
  EXPECT_NE(sidecar.find("min: 0"), std::string::npos);
  EXPECT_NE(sidecar.find("max: 11"), std::string::npos);
}

TEST(IoPgm, ConstantImageWritesZeros) {
  const std::string dir = scratch_dir("pgm_const");
  Image2D img(8, 8);
  for (auto& v : img.data) v = 3.5;
  io::write_pgm16(dir + "/c.pgm", img, dir + "/c_scale.txt", "sagittal", 4);
  const std::string pgm = read_file(dir + "/c.pgm");
  const std::string tail = pgm.substr(pgm.size() - 128);
  for (char c : tail) EXPECT_EQ(c, 0);
}

// ---------------------------------------------------------------------------
// CLI end-to-end (subprocess)

TEST(Cli, PhantomGenWritesFiveFilesAndIsSeedDeterministic) {
  const std::string dir = scratch_dir("cli_phantom");
  ASSERT_EQ(run_cli("phantom-gen --out " + dir + "/a --dims 48 --seed 7 --noise-sigma 0.01"),
            0);
  for (const char* name :
       {"volume.vvol", "landmarks.csv", "membership.csv", "gt_transform.txt", "manifest.txt"})
    EXPECT_TRUE(fs::exists(dir + "/a/" + name)) << name;
  ASSERT_EQ(run_cli("phantom-gen --out " + dir + "/b --dims 48 --seed 7 --noise-sigma 0.01"),
            0);
  EXPECT_EQ(read_file(dir + "/a/volume.vvol"), read_file(dir + "/b/volume.vvol"));
  EXPECT_EQ(read_file(dir + "/a/manifest.txt"), read_file(dir + "/b/manifest.txt"));
}

TEST(Cli, PhantomGenPoseMatchesConstructionOracle) {
  const std::string dir = scratch_dir("cli_pose");
  ASSERT_EQ(run_cli("phantom-gen --out " + dir +
                    " --dims 48 --pose-euler 10,5,-8 --pose-trans 0.02,0,0"),
            0);
  const RigidTransform stored = io::read_transform(dir + "/gt_transform.txt");
  // expected: rotation = pose rotation, translation = -R^T t (the posed
  // plane center), with R from the elementary-product oracle
  const Rotation3 r_pose = euler_product_oracle(10, 5, -8);
  const Vec3 expect_t = -(r_pose.transposed() * Vec3{0.02, 0, 0});
  EXPECT_LE(frobenius_distance(stored.rotation, r_pose), 1e-12);
  EXPECT_NEAR(stored.translation.x, expect_t.x, 1e-12);
  EXPECT_NEAR(stored.translation.y, expect_t.y, 1e-12);
  EXPECT_NEAR(stored.translation.z, expect_t.z, 1e-12);
}

TEST(Cli, FitPlanesRecoversPhantomGroundTruth) {
  const std::string dir = scratch_dir("cli_fit");
  ASSERT_EQ(run_cli("phantom-gen --out " + dir +
                    "/ph --dims 48 --pose-euler 8,-4,6 --pose-trans 0.02,-0.01,0.015"),
            0);
  ASSERT_EQ(run_cli("fit-planes --landmarks " + dir + "/ph/landmarks.csv --membership " +
                    dir + "/ph/membership.csv --dims 48,48,48 --out " + dir + "/fit"),
            0);
  const RigidTransform fitted = io::read_transform(dir + "/fit/transform.txt");
  const RigidTransform gt = io::read_transform(dir + "/ph/gt_transform.txt");
  EXPECT_LE(geodesic_angle_deg(fitted.rotation, gt.rotation), rad_to_deg(1e-5));
  EXPECT_NEAR(fitted.translation.x, gt.translation.x, 1e-4);
  // exact-fit residuals
  const std::string report = read_file(dir + "/fit/fit_report.txt");
  EXPECT_NE(report.find("converged: true"), std::string::npos);
}

TEST(Cli, FitPlanesDegenerateInputExitsNonzero) {
  const std::string dir = scratch_dir("cli_fit_bad");
  {
    std::ofstream lm(dir + "/l.csv");
    lm << "1,10,10,10\n2,20,10,10\n3,20,20,10\n4,10,20,10\n5,15,15,30\n6,15,16,31\n";
    std::ofstream mb(dir + "/m.csv");
    mb << "1,S\n2,S\n3,S\n4,C\n5,C\n6,A\n";  // coronal and axial underconstrained
  }
  EXPECT_NE(run_cli("fit-planes --landmarks " + dir + "/l.csv --membership " + dir +
                    "/m.csv --dims 48,48,48 --out " + dir + "/fit"),
            0);
}

TEST(Cli, StandardizeWithPerfectOracleMatchesGroundTruth) {
  const std::string dir = scratch_dir("cli_std");
  ASSERT_EQ(run_cli("phantom-gen --out " + dir +
                    "/ph --dims 48 --pose-euler 6,-9,12 --pose-trans 0.02,-0.01,0.01"),
            0);
  ASSERT_EQ(run_cli("standardize --volume " + dir + "/ph/volume.vvol --estimator oracle "
                    "--gt " + dir + "/ph/gt_transform.txt --out " + dir + "/std --seed 5"),
            0);
  const RigidTransform est = io::read_transform(dir + "/std/transform.txt");
  const RigidTransform gt = io::read_transform(dir + "/ph/gt_transform.txt");
  EXPECT_LE(frobenius_distance(est.rotation, gt.rotation), 1e-6);
  EXPECT_NEAR(est.translation.x, gt.translation.x, 1e-6);
  for (const char* name : {"standardized.vvol", "slice_sagittal.pgm", "slice_coronal.pgm",
                           "slice_axial.pgm", "transform.txt", "manifest.txt"})
    EXPECT_TRUE(fs::exists(dir + "/std/" + name)) << name;
}

TEST(Cli, RecoverPoseBeatsOneDegree) {
  const std::string dir = scratch_dir("cli_recover");
  ASSERT_EQ(run_cli("phantom-gen --out " + dir + "/ph --dims 48 --pose-euler 10,0,0"), 0);
  ASSERT_EQ(run_cli("recover-pose --volume " + dir + "/ph/volume.vvol --gt " + dir +
                    "/ph/gt_transform.txt --out " + dir +
                    "/rec --seed 3 --gd-steps 150 --iters 2"),
            0);
  const RigidTransform est = io::read_transform(dir + "/rec/transform.txt");
  const RigidTransform gt = io::read_transform(dir + "/ph/gt_transform.txt");
  EXPECT_LE(geodesic_angle_deg(est.rotation, gt.rotation), 1.0);
  const std::string manifest = read_file(dir + "/rec/manifest.txt");
  EXPECT_NE(manifest.find("diverged: false"), std::string::npos);
}

TEST(Cli, EvaluateSelfGivesIdentityReportAndBatchAggregates) {
  const std::string dir = scratch_dir("cli_eval");
  ASSERT_EQ(run_cli("phantom-gen --out " + dir + "/ph --dims 48 --pose-euler 5,3,-2"), 0);
  ASSERT_EQ(run_cli("evaluate --est " + dir + "/ph/gt_transform.txt --gt " + dir +
                    "/ph/gt_transform.txt --volume " + dir + "/ph/volume.vvol --out " + dir +
                    "/self.txt"),
            0);
  const EvalReport self = io::read_eval_report(dir + "/self.txt");
  EXPECT_EQ(self.so3_deg, 0.0);
  EXPECT_EQ(self.ssim, 1.0);
  EXPECT_TRUE(std::isinf(self.psnr_db));

  // batch: three cases against the same volume
  io::write_transform(dir + "/est_a.txt", io::read_transform(dir + "/ph/gt_transform.txt"));
  RigidTransform off = io::read_transform(dir + "/ph/gt_transform.txt");
  off = compose(off, random_perturbation(2, 5.0, 0.01));
  io::write_transform(dir + "/est_b.txt", off);
  off = compose(off, random_perturbation(3, 5.0, 0.01));
  io::write_transform(dir + "/est_c.txt", off);
  {
    std::ofstream f(dir + "/batch.csv");
    for (const char* id : {"a", "b", "c"})
      f << id << ',' << dir << "/est_" << id << ".txt," << dir << "/ph/gt_transform.txt,"
        << dir << "/ph/volume.vvol\n";
  }
  ASSERT_EQ(run_cli("evaluate --batch " + dir + "/batch.csv --out " + dir + "/batch"), 0);
  for (const char* id : {"a", "b", "c"})
    EXPECT_TRUE(fs::exists(dir + "/batch/" + std::string(id) + "_report.txt"));
  // aggregate mean of so3 must equal the mean of the three reports
  double mean = 0.0;
  std::vector<double> vals;
  for (const char* id : {"a", "b", "c"}) {
    vals.push_back(io::read_eval_report(dir + "/batch/" + std::string(id) + "_report.txt")
                       .so3_deg);
    mean += vals.back();
  }
  mean /= 3.0;
  double var = 0.0;
  for (double v : vals) var += (v - mean) * (v - mean);
  const std::string agg = read_file(dir + "/batch/aggregate.txt");
  char expect[64];
  std::snprintf(expect, sizeof expect, "so3_deg: %.6f +/- %.6f", mean, std::sqrt(var / 2.0));
  EXPECT_NE(agg.find(expect), std::string::npos) << agg << "\nwanted: " << expect;
}

TEST(Cli, ExtractSlicesRecordsFloorIndicesForOddDims) {
  const std::string dir = scratch_dir("cli_slices");
  Volume v({9, 8, 7}, {1, 1, 1});
  SeededRng rng(805);
  for (auto& x : v.data) x = static_cast<float>(rng.uniform01());
  io::write_vvol(dir + "/v.vvol", v);
  ASSERT_EQ(run_cli("extract-slices --volume " + dir + "/v.vvol --out " + dir + "/s"), 0);
  const std::string sidecar = read_file(dir + "/s/slice_sagittal_scale.txt");
  EXPECT_NE(sidecar.find("slice_index: 4"), std::string::npos);  // floor(9/2)
  const std::string axial = read_file(dir + "/s/slice_axial_scale.txt");
  EXPECT_NE(axial.find("slice_index: 3"), std::string::npos);  // floor(7/2)
}

TEST(Cli, MissingInputsExitNonzero) {
  const std::string dir = scratch_dir("cli_missing");
  EXPECT_NE(run_cli("standardize --volume " + dir + "/nope.vvol --out " + dir + "/out"), 0);
  EXPECT_NE(run_cli("evaluate --out " + dir + "/r.txt"), 0);
  EXPECT_NE(run_cli("definitely-not-a-command"), 0);
}

TEST(Cli, ConfigFileSuppliesDefaultsFlagsWin) {
  const std::string dir = scratch_dir("cli_config");
  {
    std::ofstream f(dir + "/cfg.ini");
    f << "[phantom-gen]\ndims=48\nseed=9\n";
  }
  ASSERT_EQ(run_cli("--config " + dir + "/cfg.ini phantom-gen --out " + dir + "/a"), 0);
  const Volume a = io::read_vvol(dir + "/a/volume.vvol");
  EXPECT_EQ(a.dims[0], 48);
  // flag overrides the config value
  ASSERT_EQ(run_cli("--config " + dir + "/cfg.ini phantom-gen --dims 64 --out " + dir + "/b"),
            0);
  EXPECT_EQ(io::read_vvol(dir + "/b/volume.vvol").dims[0], 64);
}
