#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numbers>

#include <Eigen/Geometry>

#include "eigfree/geometry.hpp"
#include "eigfree/linalg.hpp"
#include "eigfree/synth.hpp"
#include "test_util.hpp"

using namespace eigfree;
using namespace eigfree::geometry;

namespace {

constexpr double kPi = std::numbers::pi;

Eigen::Matrix3d rot(double angle, const Eigen::Vector3d& axis) {
  return Eigen::AngleAxisd(angle, axis.normalized()).toRotationMatrix();
}

std::vector<Correspondence2D2D> eight_of(Correspondence2D2D q) { return std::vector<Correspondence2D2D>(8, q); }

double cond(const Eigen::MatrixXd& x) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(x);
  const auto& s = svd.singularValues();
  double smallest = s(0);
  for (Eigen::Index i = 0; i < s.size(); ++i)
    if (s(i) > 1e-12 * s(0)) smallest = s(i);
  return s(0) / smallest;
}

}  // namespace

TEST_CASE("essential rows, printed form") {
  auto x = build_essential_matrix_rows(eight_of({0, 0, 0, 0}), RowForm::paper);
  CHECK(x.rows.row(0).transpose().isApprox((Eigen::VectorXd(9) << 0, 0, 0, 0, 0, 0, 0, 0, 1).finished()));
  x = build_essential_matrix_rows(eight_of({1, 1, 1, 1}), RowForm::paper);
  CHECK(x.rows.row(0).isApprox(Eigen::RowVectorXd::Ones(9)));
  x = build_essential_matrix_rows(eight_of({2, 3, 5, 7}), RowForm::paper);
  CHECK(x.rows.row(0).transpose().isApprox((Eigen::VectorXd(9) << 10, 6, 2, 15, 21, 3, 5, 7, 1).finished()));
}

TEST_CASE("essential rows, classical form") {
  const auto x = build_essential_matrix_rows(eight_of({2, 3, 5, 7}), RowForm::classical);
  CHECK(x.rows.row(0).transpose().isApprox((Eigen::VectorXd(9) << 10, 14, 2, 15, 21, 3, 5, 7, 1).finished()));
  CHECK_THROWS_AS(build_essential_matrix_rows(std::vector<Correspondence2D2D>(7)), ContractViolation);
  CHECK(parse_row_form("paper") == RowForm::paper);
  CHECK(to_string(RowForm::classical) == "classical");
  CHECK_THROWS_AS(parse_row_form("other"), ContractViolation);
}

TEST_CASE("hartley normalization") {
  std::vector<Eigen::Vector2d> p = {{1, 0}, {-1, 0}};
  auto n = hartley_normalize(p);
  CHECK(n.transform.scale == doctest::Approx(std::sqrt(2.0)));
  CHECK(n.points[0].isApprox(Eigen::Vector2d(std::sqrt(2.0), 0)));
  CHECK(n.points[1].isApprox(Eigen::Vector2d(-std::sqrt(2.0), 0)));

  p = {{5, 5}, {7, 5}};
  n = hartley_normalize(p);
  CHECK(n.points[0].isApprox(Eigen::Vector2d(-std::sqrt(2.0), 0)));
  CHECK(n.points[1].isApprox(Eigen::Vector2d(std::sqrt(2.0), 0)));
  const Eigen::Vector3d h = n.transform.matrix() * Eigen::Vector3d(7, 5, 1);
  CHECK(h.head<2>().isApprox(n.points[1]));

  p = {{std::sqrt(2.0), 0}, {-std::sqrt(2.0), 0}};
  n = hartley_normalize(p);
  CHECK(n.transform.matrix().isApprox(Eigen::Matrix3d::Identity()));

  CHECK_THROWS_AS(hartley_normalize(std::vector<Eigen::Vector2d>(4, Eigen::Vector2d(3, 3))), DegenerateConfiguration);
}

TEST_CASE("normalized point sets have zero centroid and the target RMS radius") {
  Rng rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<Eigen::Vector2d> p2(30);
    std::vector<Eigen::Vector3d> p3(30);
    for (auto& q : p2) q = Eigen::Vector2d(rng.uniform(0, 640), rng.uniform(0, 480));
    for (auto& q : p3) q = Eigen::Vector3d(rng.normal(3, 2), rng.normal(-1, 1), rng.normal(6, 1));
    const auto n2 = hartley_normalize(p2);
    const auto n3 = normalize_points_3d(p3);
    Eigen::Vector2d c2 = Eigen::Vector2d::Zero();
    double r2 = 0;
    for (const auto& q : n2.points) c2 += q, r2 += q.squaredNorm();
    Eigen::Vector3d c3 = Eigen::Vector3d::Zero();
    double r3 = 0;
    for (const auto& q : n3.points) c3 += q, r3 += q.squaredNorm();
    CHECK(c2.norm() / 30 < 1e-10);
    CHECK(c3.norm() / 30 < 1e-10);
    CHECK(std::abs(std::sqrt(r2 / 30) - std::sqrt(2.0)) < 1e-10);
    CHECK(std::abs(std::sqrt(r3 / 30) - std::sqrt(3.0)) < 1e-10);
    CHECK((n2.transform.matrix() * n2.transform.inverse_matrix()).isApprox(Eigen::Matrix3d::Identity()));
    CHECK((n3.transform.matrix() * n3.transform.inverse_matrix()).isApprox(Eigen::Matrix4d::Identity()));
  }
}

TEST_CASE("hartley normalization improves conditioning of the essential rows") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto scene = synth::gen_epipolar(100, 0, 1.0, seed);
    const synth::Camera cam;
    std::vector<Correspondence2D2D> pixels;
    std::vector<Eigen::Vector2d> a, b;
    for (const auto& c : scene.correspondences) {
      pixels.push_back({cam.focal * c.u + cam.cx, cam.focal * c.v + cam.cy, cam.focal * c.u2 + cam.cx,
                        cam.focal * c.v2 + cam.cy});
      a.emplace_back(pixels.back().u, pixels.back().v);
      b.emplace_back(pixels.back().u2, pixels.back().v2);
    }
    const auto na = hartley_normalize(a), nb = hartley_normalize(b);
    std::vector<Correspondence2D2D> normalized;
    for (std::size_t i = 0; i < a.size(); ++i)
      normalized.push_back({na.points[i].x(), na.points[i].y(), nb.points[i].x(), nb.points[i].y()});
    CHECK(cond(build_essential_matrix_rows(normalized).rows) < cond(build_essential_matrix_rows(pixels).rows));
  }
}

TEST_CASE("transform_gt_essential with identity transforms is the normalized column-major E") {
  Eigen::Matrix3d e;
  e << 1, 2, 3, 4, 5, 6, 7, 8, 10;
  const auto v = transform_gt_essential(e, {}, {});
  CHECK(v(1) == doctest::Approx(4.0 / e.norm()));
  CHECK(v(3) == doctest::Approx(2.0 / e.norm()));
  CHECK(v.norm() == doctest::Approx(1.0));
}

TEST_CASE("noise-free essential rows annihilate the transformed target") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto scene = synth::gen_epipolar(60, 0, 0.0, seed);
    std::vector<Eigen::Vector2d> a, b;
    for (const auto& c : scene.correspondences) a.emplace_back(c.u, c.v), b.emplace_back(c.u2, c.v2);
    const auto na = hartley_normalize(a), nb = hartley_normalize(b);
    std::vector<Correspondence2D2D> normalized;
    for (std::size_t i = 0; i < a.size(); ++i)
      normalized.push_back({na.points[i].x(), na.points[i].y(), nb.points[i].x(), nb.points[i].y()});
    const auto e = transform_gt_essential(scene.e_gt, na.transform, nb.transform);
    const auto x = build_essential_matrix_rows(normalized, RowForm::classical);
    CHECK((x.rows * e).cwiseAbs().maxCoeff() < 1e-8);
    // The printed second entry (u*v) is not annihilated.
    const auto xp = build_essential_matrix_rows(normalized, RowForm::paper);
    CHECK((xp.rows * e).cwiseAbs().maxCoeff() > 1e-3);
  }
}

TEST_CASE("scaling both images leaves the normalized target unchanged up to sign") {
  const auto scene = synth::gen_epipolar(40, 0, 0.0, 3);
  std::vector<Eigen::Vector2d> a, b, as, bs;
  for (const auto& c : scene.correspondences) {
    a.emplace_back(c.u, c.v), b.emplace_back(c.u2, c.v2);
    as.emplace_back(3.0 * c.u, 3.0 * c.v), bs.emplace_back(3.0 * c.u2, 3.0 * c.v2);
  }
  const Eigen::Matrix3d s = Eigen::Vector3d(1.0 / 3.0, 1.0 / 3.0, 1.0).asDiagonal();
  const auto v = transform_gt_essential(scene.e_gt, hartley_normalize(a).transform, hartley_normalize(b).transform);
  const auto vs = transform_gt_essential(s * scene.e_gt * s, hartley_normalize(as).transform,
                                         hartley_normalize(bs).transform);
  CHECK(std::min((v - vs).norm(), (v + vs).norm()) < 1e-10);
}

TEST_CASE("pnp rows") {
  std::vector<Correspondence3D2D> q(6, Correspondence3D2D{0, 0, 0, 0, 0});
  auto x = build_pnp_rows(q);
  CHECK(x.rows_per_correspondence == 2);
  Eigen::VectorXd r1 = Eigen::VectorXd::Zero(12), r2 = Eigen::VectorXd::Zero(12);
  r1(3) = 1;
  r2(7) = 1;
  CHECK(x.rows.row(0).transpose() == r1);
  CHECK(x.rows.row(1).transpose() == r2);

  q.assign(6, Correspondence3D2D{1, 0, 0, 1, 0});
  x = build_pnp_rows(q);
  r1 << 1, 0, 0, 1, 0, 0, 0, 0, -1, 0, 0, -1;
  r2 << 0, 0, 0, 0, 1, 0, 0, 1, 0, 0, 0, 0;
  CHECK(x.rows.row(0).transpose() == r1);
  CHECK(x.rows.row(1).transpose() == r2);
  CHECK_THROWS_AS(build_pnp_rows(std::vector<Correspondence3D2D>(5)), ContractViolation);
}

TEST_CASE("pnp target for the identity pose") {
  Pose pose;
  pose.translation = Eigen::Vector3d(0, 0, 5);
  const auto v = pnp_target_vector(pose, {});
  Eigen::VectorXd expect(12);
  expect << 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 5;
  CHECK(v.isApprox(expect / expect.norm()));
}

TEST_CASE("noise-free pnp rows annihilate the target and the DLT round trip is exact") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto scene = synth::gen_pnp(50, 0, 0.0, seed);
    std::vector<Eigen::Vector2d> img;
    std::vector<Eigen::Vector3d> world;
    for (const auto& c : scene.correspondences) img.emplace_back(c.u, c.v), world.emplace_back(c.x, c.y, c.z);
    const auto n2 = hartley_normalize(img);
    const auto n3 = normalize_points_3d(world);
    std::vector<Correspondence3D2D> normalized;
    for (std::size_t i = 0; i < img.size(); ++i)
      normalized.push_back({n3.points[i].x(), n3.points[i].y(), n3.points[i].z(), n2.points[i].x(), n2.points[i].y()});
    const auto e = pnp_target_vector(scene.pose_gt, n2.transform, n3.transform);
    CHECK((build_pnp_rows(normalized).rows * e).cwiseAbs().maxCoeff() < 1e-8);

    // Unnormalized round trip, both signs.
    const auto raw = pnp_target_vector(scene.pose_gt, {});
    CHECK((build_pnp_rows(scene.correspondences).rows * raw).cwiseAbs().maxCoeff() < 1e-8);
    for (double sign : {1.0, -1.0}) {
      const Pose p = refine_dlt(dlt_pose_from_vector(sign * raw, scene.correspondences[0]));
      CHECK(rotation_error(p.rotation, scene.pose_gt.rotation) < 1e-8);
      CHECK(translation_error(p.translation, scene.pose_gt.translation) < 1e-8);
      CHECK(p.is_valid());
    }
  }
}

TEST_CASE("dlt_pose_from_vector rejects a vanishing rotation block") {
  Eigen::VectorXd e = Eigen::VectorXd::Zero(12);
  e(3) = 1.0;
  CHECK_THROWS_AS(dlt_pose_from_vector(e, {}), DegenerateConfiguration);
}

TEST_CASE("weighted DLT on clean scenes recovers the pose") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto scene = synth::gen_pnp(100, 0, 0.0, seed);
    const Pose p = estimate_pose_dlt(scene.correspondences, Eigen::VectorXd::Ones(100));
    CHECK(rotation_error(p.rotation, scene.pose_gt.rotation) < 1e-6);
    CHECK(translation_error(p.translation, scene.pose_gt.translation) < 1e-6);
  }
}

TEST_CASE("weighted DLT ignores zero-weight outliers; RANSAC copes without weights") {
  const auto scene = synth::gen_pnp(200, 80, 2.0, 7);
  Eigen::VectorXd w(200);
  for (int i = 0; i < 200; ++i) w(i) = scene.inlier_mask[static_cast<std::size_t>(i)] ? 1.0 : 0.0;
  const Pose oracle = estimate_pose_dlt(scene.correspondences, w);
  CHECK(rotation_error(oracle.rotation, scene.pose_gt.rotation) < 1.0 * kPi / 180);
  const Pose plain = estimate_pose_dlt(scene.correspondences, Eigen::VectorXd::Ones(200));
  CHECK(rotation_error(plain.rotation, scene.pose_gt.rotation) > rotation_error(oracle.rotation, scene.pose_gt.rotation));
  const Pose ransac = estimate_pose_ransac_dlt(scene.correspondences, 1);
  CHECK(rotation_error(ransac.rotation, scene.pose_gt.rotation) < 1.0 * kPi / 180);
}

TEST_CASE("procrustes projection") {
  const Eigen::Matrix3d r = rot(0.7, Eigen::Vector3d(1, 2, 3));
  CHECK((procrustes_project(r) - r).cwiseAbs().maxCoeff() < 1e-10);
  CHECK(procrustes_project(Eigen::Vector3d(2, 1, 1).asDiagonal()).isApprox(Eigen::Matrix3d::Identity()));
  CHECK_THROWS_AS(procrustes_project(Eigen::Vector3d(1, 0, 0).asDiagonal()), DegenerateConfiguration);

  // A perturbed rotation projects back close to the original, and no small
  // rotation around the result is closer to the input.
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::Matrix3d base = rot(rng.uniform(0, kPi), testutil::unit(rng, 3));
    const Eigen::Matrix3d m = base + 0.01 * testutil::gaussian(rng, 3, 3);
    const Eigen::Matrix3d p = procrustes_project(m);
    CHECK(Pose{p, Eigen::Vector3d::Zero()}.is_valid());
    CHECK((p - base).norm() < 0.02 * std::sqrt(3.0) * 3);
    const double d0 = (p - m).norm();
    for (int k = 0; k < 50; ++k) {
      const Eigen::Matrix3d q = p * rot(rng.uniform(-0.02, 0.02), testutil::unit(rng, 3));
      CHECK((q - m).norm() >= d0 - 1e-12);
    }
  }
}

TEST_CASE("estimate_essential and decompose_essential on clean scenes") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto scene = synth::gen_epipolar(80, 0, 0.0, seed);
    const Eigen::Vector3d t_dir = scene.pose2.translation.normalized();
    for (double sign : {1.0, -1.0}) {
      const Pose p = decompose_essential(sign * scene.e_gt, scene.correspondences);
      CHECK(rotation_error(p.rotation, scene.pose2.rotation) < 1e-6);
      CHECK(direction_error(p.translation, t_dir) < 1e-6);
      CHECK(p.translation.dot(t_dir) > 0);
    }
    const Eigen::Matrix3d e = estimate_essential(scene.correspondences, Eigen::VectorXd::Ones(80));
    const Pose p = decompose_essential(e, scene.correspondences);
    CHECK(rotation_error(p.rotation, scene.pose2.rotation) < 1e-6);
    CHECK(direction_error(p.translation, t_dir) < 1e-6);
    const auto s = linalg::svd3(e);
    CHECK(s.s(2) < 1e-12);
    CHECK(s.s(0) == doctest::Approx(s.s(1)));
  }
}

TEST_CASE("a pure rotation has no essential matrix to decompose") {
  const auto scene = synth::gen_epipolar(20, 0, 0.0, 1);
  CHECK_THROWS_AS(decompose_essential(Eigen::Matrix3d::Zero(), scene.correspondences), DegenerateConfiguration);
  synth::EpipolarConfig cfg;
  cfg.baseline = 0.0;
  CHECK_THROWS_AS(synth::gen_epipolar(20, 0, 0.0, 1, cfg), DegenerateConfiguration);
}

TEST_CASE("rotation and translation errors") {
  const Eigen::Matrix3d r = rot(0.3, Eigen::Vector3d(0, 1, 1));
  CHECK(rotation_error(r, r) == 0.0);
  CHECK(rotation_error(rot(kPi / 2, Eigen::Vector3d::UnitZ()), Eigen::Matrix3d::Identity()) ==
        doctest::Approx(kPi / 2));
  CHECK(rotation_error(rot(1e-9, Eigen::Vector3d::UnitX()), Eigen::Matrix3d::Identity()) ==
        doctest::Approx(1e-9).epsilon(1e-6));
  // Rotation by pi: q and -q describe the same rotation.
  CHECK(rotation_error(rot(kPi, Eigen::Vector3d::UnitY()), Eigen::Matrix3d::Identity()) == doctest::Approx(kPi));
  CHECK(translation_error(Eigen::Vector3d(1, 0, 0), Eigen::Vector3d(2, 0, 0)) == doctest::Approx(0.5));
  CHECK_THROWS_AS(translation_error(Eigen::Vector3d::Ones(), Eigen::Vector3d::Zero()), ContractViolation);
  CHECK(direction_error(Eigen::Vector3d(1, 0, 0), Eigen::Vector3d(-2, 0, 0)) == 0.0);
  CHECK(direction_error(Eigen::Vector3d(1, 0, 0), Eigen::Vector3d(0, 3, 0)) == doctest::Approx(kPi / 2));
}

TEST_CASE("map_score") {
  const std::vector<double> th = {5, 10, 20};
  CHECK(map_score(std::vector<double>(4, 0.0), th) == doctest::Approx(1.0));
  CHECK(map_score(std::vector<double>(4, 0.5), th) == doctest::Approx(0.0));
  CHECK(map_score(std::vector<double>{0.0, 0.0, 1.0, 1.0}, th) == doctest::Approx(0.5));
  // One error of 9.5 degrees: recall is 0 up to 9, 1 from 10, so the
  // [9,10] bin contributes 0.5 and [10,20] contributes 10.
  CHECK(map_score(std::vector<double>{9.5 * kPi / 180}, th) == doctest::Approx(10.5 / 20));
  CHECK_THROWS_AS(map_score(std::vector<double>{}, th), ContractViolation);
  CHECK_THROWS_AS(map_score(std::vector<double>{0.1}, std::vector<double>{10, 5}), ContractViolation);

  Rng rng(5);
  std::vector<double> errs(30);
  for (auto& e : errs) e = rng.uniform(0, 0.5);
  const double before = map_score(errs, th);
  for (auto& e : errs) e *= rng.uniform(0.5, 1.0);
  CHECK(map_score(errs, th) >= before);
}
