#include <doctest.h>

#include <cmath>
#include <limits>

#include "posekit/decoupled_rotation.hpp"
#include "posekit/random.hpp"
#include "test_support.hpp"

using namespace posekit;

namespace {

// Brute-force argmin over explicitly enumerated R * Rz(k 360/n).
std::size_t argmin_oracle(const Rotation& R, int n) {
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (int k = 0; k < n; ++k) {
    const Rotation g = R * Rotation::rz(360.0 * k / n);
    const double d = test::quaternion_angle_deg(g, Rotation());
    if (d < best_d - 1e-9) {
      best_d = d;
      best = static_cast<std::size_t>(k);
    }
  }
  return best;
}

}  // namespace

TEST_SUITE("decoupled_rotation") {

TEST_CASE("vectors_from_rotation") {
  const auto id = vectors_from_rotation(Rotation());
  CHECK(test::near(id.v1, Vec3::UnitZ(), 0));
  CHECK(test::near(id.v2, Vec3::UnitX(), 0));
  for (double th : {0.0, 17.0, 123.0, 359.0}) {
    CHECK(test::near(vectors_from_rotation(Rotation::rz(th)).v1, Vec3::UnitZ(), 1e-15));
  }
  const auto R = Rotation::rx(90);
  const auto v = vectors_from_rotation(R);
  Vec3 ez_image = Vec3::Zero();
  for (int r = 0; r < 3; ++r) ez_image[r] = R.matrix()(r, 2);
  CHECK(test::near(v.v1, ez_image, 0));
  CHECK(test::near(v.v1, Vec3(0, -1, 0), 1e-15));
  CHECK(test::near(v.v2, Vec3::UnitX(), 1e-15));
}

TEST_CASE("rotation_from_vectors") {
  CHECK(geodesic_rotation_distance(rotation_from_vectors(Vec3::UnitZ(), Vec3::UnitX()),
                                   Rotation()) == 0.0);
  CHECK(test::error_kind([] { rotation_from_vectors(Vec3(0, 0, 1), Vec3(0, 0, 2)); }) ==
        ErrorKind::DegenerateVectors);
  CHECK(test::error_kind([] { rotation_from_vectors(Vec3(0, 0, 1), Vec3(0, 0, -2)); }) ==
        ErrorKind::DegenerateVectors);
  CHECK(test::error_kind([] { rotation_from_vectors(Vec3::Zero(), Vec3(1, 0, 0)); }) ==
        ErrorKind::DegenerateVectors);

  SUBCASE("v1 is trusted, v2 corrected") {
    const auto R = rotation_from_vectors(Vec3(0, 0, 3), Vec3(1, 0, 0.5));
    CHECK(test::near(R.column(2), Vec3::UnitZ(), 1e-15));
    CHECK(test::near(R.column(0), Vec3::UnitX(), 1e-15));
  }

  SUBCASE("roundtrip over random rotations") {
    Rng rng(1);
    for (int i = 0; i < 1000; ++i) {
      const auto R = rng.rotation();
      const auto v = vectors_from_rotation(R);
      CHECK_NOTHROW(v.validate());
      CHECK(geodesic_rotation_distance(R, rotation_from_vectors(v.v1, v.v2)) < 1e-6);
    }
  }
}

TEST_CASE("decoupled representation is continuous along a spin path") {
  double max_step = 0.0;
  auto prev = vectors_from_rotation(Rotation::rz(0));
  for (int t = 1; t <= 360; ++t) {
    const auto cur = vectors_from_rotation(Rotation::rz(t));
    max_step = std::max({max_step, (cur.v1 - prev.v1).cwiseAbs().maxCoeff(),
                         (cur.v2 - prev.v2).cwiseAbs().maxCoeff()});
    prev = cur;
  }
  CHECK(max_step < 0.02);
}

TEST_CASE("rotation_vector_loss") {
  const DecoupledRotation gt = vectors_from_rotation(Rotation::from_quaternion(1, 2, 3, 4));

  const auto perfect = rotation_vector_loss(gt.v1, gt.v2, gt, {1.0});
  CHECK(perfect.similarity == doctest::Approx(2.0));
  CHECK(perfect.objective == doctest::Approx(0.0).epsilon(1e-12));

  const Vec3 ortho = gt.v1.cross(gt.v2);
  CHECK(rotation_vector_loss(ortho, gt.v2, gt, {0.0}).similarity ==
        doctest::Approx(0.0).epsilon(1e-12));

  // gt v1 turned 60 deg toward v2: cos 60 = 0.5
  const Vec3 p1 = std::cos(M_PI / 3) * gt.v1 + std::sin(M_PI / 3) * gt.v2;
  const auto l = rotation_vector_loss(p1, gt.v2, gt, {1.0});
  CHECK(p1.dot(gt.v1) == doctest::Approx(0.5));
  CHECK(l.similarity == doctest::Approx(1.5));
  CHECK(l.objective == doctest::Approx(0.5));

  CHECK(test::error_kind([&] { rotation_vector_loss(Vec3::Zero(), gt.v2, gt, {1.0}); }) ==
        ErrorKind::DegenerateVectors);

  SUBCASE("gradient matches central differences") {
    Rng rng(5);
    for (int seed = 0; seed < 5; ++seed) {
      const auto truth = vectors_from_rotation(rng.rotation());
      const Vec3 a(rng.normal(), rng.normal(), rng.normal());
      const Vec3 b(rng.normal(), rng.normal(), rng.normal());
      const RotationLossConfig cfg{0.7};
      const auto res = rotation_vector_loss(a, b, truth, cfg);
      const double eps = 1e-5;
      for (int k = 0; k < 3; ++k) {
        Vec3 ap = a, am = a, bp = b, bm = b;
        ap[k] += eps;
        am[k] -= eps;
        bp[k] += eps;
        bm[k] -= eps;
        const double ga = (rotation_vector_loss(ap, b, truth, cfg).objective -
                           rotation_vector_loss(am, b, truth, cfg).objective) / (2 * eps);
        const double gb = (rotation_vector_loss(a, bp, truth, cfg).objective -
                           rotation_vector_loss(a, bm, truth, cfg).objective) / (2 * eps);
        CHECK(std::abs(ga - res.grad_p1[k]) <= 1e-4 * std::max(1.0, std::abs(ga)));
        CHECK(std::abs(gb - res.grad_p2[k]) <= 1e-4 * std::max(1.0, std::abs(gb)));
      }
    }
  }
}

TEST_CASE("loss config for circular symmetry zeroes lambda_r") {
  CHECK(RotationLossConfig::for_symmetry(SymmetrySpec::circular(), 1.0).lambda_r == 0.0);
  CHECK(RotationLossConfig::for_symmetry(SymmetrySpec::n_fold(2), 0.8).lambda_r == 0.8);
}

TEST_CASE("symmetry_group") {
  const auto R = Rotation::from_quaternion(0.2, 0.4, -0.1, 0.9);
  const auto single = symmetry_group(R, SymmetrySpec::none());
  REQUIRE(single.size() == 1);
  CHECK(single[0].matrix() == R.matrix());

  const auto two = symmetry_group(Rotation(), SymmetrySpec::n_fold(2));
  REQUIRE(two.size() == 2);
  CHECK(geodesic_rotation_distance(two[0], Rotation()) < 1e-12);
  CHECK(geodesic_rotation_distance(two[1], Rotation::rz(180)) < 1e-9);

  const auto four = symmetry_group(Rotation::rz(10), SymmetrySpec::n_fold(4));
  REQUIRE(four.size() == 4);
  const double angles[] = {10, 100, 190, 280};
  for (int k = 0; k < 4; ++k) {
    CHECK(geodesic_rotation_distance(four[k], Rotation::rz(angles[k])) < 1e-9);
  }

  CHECK(test::error_kind([&] { symmetry_group(R, SymmetrySpec::circular()); }) ==
        ErrorKind::UnsupportedForFiniteGroup);

  Rng rng(21);
  for (int n : {2, 3, 5, 6}) {
    const auto g = symmetry_group(rng.rotation(), SymmetrySpec::n_fold(n, Vec3(0, 0.6, 0.8)));
    CHECK(g.size() == static_cast<std::size_t>(n));
    for (const auto& m : g) CHECK_NOTHROW(Rotation::from_matrix(m.matrix()));
  }
}

TEST_CASE("canonicalize_rotation") {
  const auto R = Rotation::from_quaternion(0.5, 0.1, 0.7, -0.2);
  CHECK(canonicalize_rotation(R, SymmetrySpec::none()).matrix() == R.matrix());

  const auto c2 = canonicalize_rotation(Rotation::rz(190), SymmetrySpec::n_fold(2));
  CHECK(geodesic_rotation_distance(c2, Rotation::rz(10)) < 1e-9);
  CHECK(argmin_oracle(Rotation::rz(190), 2) == 1);

  for (double th : {0.0, 45.0, 137.0, 300.0}) {
    const auto c = canonicalize_rotation(Rotation::rz(th), SymmetrySpec::circular());
    CHECK(geodesic_rotation_distance(c, Rotation()) < 1e-9);
  }

  SUBCASE("circular keeps the axis image and is spin invariant") {
    Rng rng(8);
    for (int i = 0; i < 200; ++i) {
      const auto Ri = rng.rotation();
      const auto c = canonicalize_rotation(Ri, SymmetrySpec::circular());
      CHECK(test::near(c * Vec3::UnitZ(), Ri * Vec3::UnitZ(), 1e-12));
      const auto spun = canonicalize_rotation(Ri * Rotation::rz(rng.uniform(0, 360)),
                                              SymmetrySpec::circular());
      CHECK((spun.matrix() - c.matrix()).cwiseAbs().maxCoeff() < 1e-9);
      const auto twice = canonicalize_rotation(c, SymmetrySpec::circular());
      CHECK((twice.matrix() - c.matrix()).cwiseAbs().maxCoeff() < 1e-9);
    }
  }

  SUBCASE("n_fold: idempotent, invariant over the group, matches the oracle") {
    Rng rng(9);
    for (int n : {2, 3, 4, 6}) {
      const auto sym = SymmetrySpec::n_fold(n);
      for (int i = 0; i < 100; ++i) {
        const auto Ri = rng.rotation();
        CHECK(canonical_group_index(Ri, sym) == argmin_oracle(Ri, n));
        const auto c = canonicalize_rotation(Ri, sym);
        CHECK((canonicalize_rotation(c, sym).matrix() - c.matrix()).cwiseAbs().maxCoeff() <
              1e-9);
        for (const auto& g : symmetry_group(Ri, sym)) {
          CHECK((canonicalize_rotation(g, sym).matrix() - c.matrix()).cwiseAbs().maxCoeff() <
                1e-9);
        }
      }
    }
  }
}

TEST_CASE("symmetry_aware_rotation_error") {
  Rng rng(12);
  const auto gt = rng.rotation();
  for (const auto& sym : {SymmetrySpec::none(), SymmetrySpec::circular(),
                          SymmetrySpec::n_fold(4)}) {
    CHECK(symmetry_aware_rotation_error(gt, gt, sym) == doctest::Approx(0.0).epsilon(1e-9));
  }
  CHECK(symmetry_aware_rotation_error(gt * Rotation::rz(137), gt, SymmetrySpec::circular()) <
        1e-9);
  CHECK(symmetry_aware_rotation_error(gt * Rotation::rz(95), gt, SymmetrySpec::n_fold(4)) ==
        doctest::Approx(5.0));
  // oracle: explicit min over the four members
  double oracle = 1e9;
  for (int k = 0; k < 4; ++k) {
    oracle = std::min(oracle, test::quaternion_angle_deg(gt * Rotation::rz(95),
                                                         gt * Rotation::rz(90.0 * k)));
  }
  CHECK(oracle == doctest::Approx(5.0).epsilon(1e-6));

  for (const auto& g : symmetry_group(gt, SymmetrySpec::n_fold(3))) {
    CHECK(symmetry_aware_rotation_error(g, gt, SymmetrySpec::n_fold(3)) < 1e-6);
  }
  CHECK(symmetry_aware_rotation_error(Rotation::rx(30), Rotation(), SymmetrySpec::none()) ==
        doctest::Approx(30.0));
}

}  // TEST_SUITE

TEST_CASE("lift_spin against the tilt-then-spin construction") {
  Rng rng(41);
  for (int n : {2, 3, 4, 6}) {
    for (int trial = 0; trial < 200; ++trial) {
      const double az = rng.uniform(0.0, 360.0);
      const double tilt = rng.uniform(0.0, 170.0);
      const double yaw = rng.uniform(-180.0, 180.0);
      // tilt about a horizontal axis is the minimal rotation carrying e_z to v1
      const Rotation tilt_part = Rotation::rz(az) * Rotation::rx(tilt) * Rotation::rz(-az);
      const Rotation R = tilt_part * Rotation::rz(yaw);
      const double a = n * yaw * std::numbers::pi / 180.0;
      const Vec3 expected = tilt_part * Vec3(std::cos(a), std::sin(a), 0.0);
      const DecoupledRotation v = vectors_from_rotation(R);
      CHECK(test::near(lift_spin(v.v1, v.v2, n), expected, 1e-12));

      for (int k = 1; k < n; ++k) {
        const DecoupledRotation g = vectors_from_rotation(R * Rotation::rz(360.0 * k / n));
        CHECK(test::near(lift_spin(g.v1, g.v2, n), expected, 1e-12));
      }

      // scale and an along-axis component of w do not matter
      const Vec3 w = 3.0 * expected + 0.4 * v.v1;
      const Rotation back = rotation_from_lifted(2.0 * v.v1, w, n);
      CHECK(symmetry_aware_rotation_error(back, R, SymmetrySpec::n_fold(n)) < 1e-6);
    }
  }
}

TEST_CASE("lift_spin is continuous across the canonical boundary") {
  const Rotation base = Rotation::rx(30.0);
  const Rotation before = base * Rotation::rz(90.0 - 1e-6);
  const Rotation after = base * Rotation::rz(90.0 + 1e-6);
  const SymmetrySpec sym = SymmetrySpec::n_fold(2);
  const DecoupledRotation cb = vectors_from_rotation(canonicalize_rotation(before, sym));
  const DecoupledRotation ca = vectors_from_rotation(canonicalize_rotation(after, sym));
  CHECK((cb.v2 - ca.v2).norm() > 1.9);
  CHECK((lift_spin(cb.v1, cb.v2, 2) - lift_spin(ca.v1, ca.v2, 2)).norm() < 1e-7);
}

TEST_CASE("rotation_from_lifted errors and spin_liftable") {
  CHECK(test::error_kind([] { rotation_from_lifted(Vec3(0, 0, 1), Vec3(0, 0, 2), 2); }) ==
        ErrorKind::DegenerateVectors);
  CHECK(test::error_kind([] { rotation_from_lifted(Vec3::Zero(), Vec3(1, 0, 0), 2); }) ==
        ErrorKind::DegenerateVectors);
  CHECK(spin_liftable(SymmetrySpec::n_fold(3)));
  CHECK_FALSE(spin_liftable(SymmetrySpec::n_fold(2, Vec3::UnitX())));
  CHECK_FALSE(spin_liftable(SymmetrySpec::circular()));
  CHECK_FALSE(spin_liftable(SymmetrySpec::none()));
}
