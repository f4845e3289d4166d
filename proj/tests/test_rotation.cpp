#include "glteleop/errors.hpp"
#include "glteleop/rotation.hpp"

#include <gtest/gtest.h>

#include <Eigen/Geometry>

#include <cmath>
#include <numbers>
#include <random>

using namespace glteleop;

namespace {

constexpr double kPi = std::numbers::pi;

UnitQuaternion random_quaternion(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  return {n(rng), n(rng), n(rng), n(rng)};
}

// Oracle: Eigen's own quaternion-to-matrix conversion.
Eigen::Matrix3d eigen_matrix(const UnitQuaternion& q) {
  return Eigen::Quaterniond(q.w(), q.x(), q.y(), q.z()).toRotationMatrix();
}

}  // namespace

TEST(UnitQuaternion, ConstructorNormalizesAndCanonicalizes) {
  const UnitQuaternion q(-2.0, 0.0, 0.0, 0.0);
  EXPECT_EQ(q, UnitQuaternion::identity());

  const UnitQuaternion h(0.0, 0.0, -3.0, 0.0);
  EXPECT_EQ(h.y(), 1.0);
  EXPECT_EQ(h.w(), 0.0);

  EXPECT_THROW(UnitQuaternion(0.0, 0.0, 0.0, 0.0), InputError);
  EXPECT_THROW(UnitQuaternion(NAN, 0.0, 0.0, 1.0), InputError);
}

TEST(UnitQuaternion, ConstructionIsIdempotent) {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 1000; ++i) {
    const UnitQuaternion q = random_quaternion(rng);
    const UnitQuaternion again(q.w(), q.x(), q.y(), q.z());
    EXPECT_EQ(q, again);
  }
}

TEST(Compose, IdentityAndInverse) {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 100; ++i) {
    const UnitQuaternion q = random_quaternion(rng);
    EXPECT_LT(quaternion_distance(compose(UnitQuaternion::identity(), q), q), 1e-15);
    EXPECT_LT(quaternion_distance(compose(q, q.inverse()), UnitQuaternion::identity()), 1e-15);
  }
}

TEST(Compose, QuarterTurnsAboutZMatchMatrixProduct) {
  const UnitQuaternion rz90 = UnitQuaternion::from_axis_angle(Eigen::Vector3d::UnitZ(), kPi / 2);
  const UnitQuaternion result = compose(rz90, rz90);
  const Eigen::Matrix3d oracle = eigen_matrix(rz90) * eigen_matrix(rz90);
  EXPECT_LT((result.to_matrix().matrix() - oracle).norm(), 1e-15);
  const UnitQuaternion rz180 = UnitQuaternion::from_axis_angle(Eigen::Vector3d::UnitZ(), kPi);
  EXPECT_LT(quaternion_distance(result, rz180), 1e-15);
}

TEST(Compose, MatchesEigenOnRandomPairs) {
  std::mt19937_64 rng(2);
  for (int i = 0; i < 1000; ++i) {
    const UnitQuaternion a = random_quaternion(rng);
    const UnitQuaternion b = random_quaternion(rng);
    const Eigen::Matrix3d oracle = eigen_matrix(a) * eigen_matrix(b);
    EXPECT_LT((compose(a, b).to_matrix().matrix() - oracle).norm(), 1e-14);
    EXPECT_GE(compose(a, b).w(), 0.0);
  }
}

TEST(ToAxisAngle, Identity) {
  const AxisAngle aa = to_axis_angle(UnitQuaternion::identity());
  EXPECT_EQ(aa.axis, Eigen::Vector3d(1, 0, 0));
  EXPECT_EQ(aa.angle, 0.0);
}

TEST(ToAxisAngle, QuarterTurnAboutZAgreesWithMatrixLogarithm) {
  const UnitQuaternion q(std::sqrt(2.0) / 2, 0.0, 0.0, std::sqrt(2.0) / 2);
  const AxisAngle aa = to_axis_angle(q);
  const Eigen::AngleAxisd oracle(eigen_matrix(q));
  EXPECT_NEAR(aa.angle, kPi / 2, 1e-15);
  EXPECT_NEAR(oracle.angle(), aa.angle, 1e-12);
  EXPECT_LT((aa.axis - Eigen::Vector3d::UnitZ()).norm(), 1e-15);
  EXPECT_LT((oracle.axis() - aa.axis).norm(), 1e-12);
}

TEST(ToAxisAngle, HalfTurnAboutX) {
  const AxisAngle aa = to_axis_angle(UnitQuaternion(0.0, 1.0, 0.0, 0.0));
  EXPECT_EQ(aa.axis, Eigen::Vector3d(1, 0, 0));
  EXPECT_EQ(aa.angle, kPi);
}

TEST(ToAxisAngle, RoundTripsThroughFromAxisAngle) {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 10000; ++i) {
    const UnitQuaternion q = random_quaternion(rng);
    const AxisAngle aa = to_axis_angle(q);
    ASSERT_GE(aa.angle, 0.0);
    ASSERT_LE(aa.angle, kPi);
    ASSERT_NEAR(aa.axis.norm(), 1.0, 1e-12);
    ASSERT_LT(quaternion_distance(UnitQuaternion::from_axis_angle(aa), q), 1e-12);
  }
}

TEST(ScaledDisplacement, ZeroDisplacement) {
  std::mt19937_64 rng(4);
  const UnitQuaternion q = random_quaternion(rng);
  EXPECT_EQ(scaled_displacement(q, q, 0.37).angle, 0.0);
}

TEST(ScaledDisplacement, HalfOfQuarterTurn) {
  const UnitQuaternion rz90 = UnitQuaternion::from_axis_angle(Eigen::Vector3d::UnitZ(), kPi / 2);
  const AxisAngle d = scaled_displacement(UnitQuaternion::identity(), rz90, 0.5);
  EXPECT_LT((d.axis - Eigen::Vector3d::UnitZ()).norm(), 1e-15);
  EXPECT_NEAR(d.angle, kPi / 4, 1e-15);
}

TEST(ScaledDisplacement, UnitScaleIsPlainDisplacement) {
  std::mt19937_64 rng(5);
  for (int i = 0; i < 100; ++i) {
    const UnitQuaternion q0 = random_quaternion(rng);
    const UnitQuaternion q = random_quaternion(rng);
    const AxisAngle a = scaled_displacement(q0, q, 1.0);
    const AxisAngle b = to_axis_angle(compose(q0.inverse(), q));
    EXPECT_EQ(a.axis, b.axis);
    EXPECT_EQ(a.angle, b.angle);
  }
}

TEST(ScaledDisplacement, RejectsScaleOutsideUnitInterval) {
  const UnitQuaternion q = UnitQuaternion::identity();
  EXPECT_THROW(scaled_displacement(q, q, 0.0), ConfigError);
  EXPECT_THROW(scaled_displacement(q, q, -0.1), ConfigError);
  EXPECT_THROW(scaled_displacement(q, q, 1.0000001), ConfigError);
  EXPECT_THROW(scaled_displacement(q, q, NAN), ConfigError);
}

TEST(ScaledDisplacement, AxisIsIndependentOfScale) {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> alpha(1e-6, 1.0);
  for (int i = 0; i < 1000; ++i) {
    const UnitQuaternion q0 = random_quaternion(rng);
    const UnitQuaternion q = random_quaternion(rng);
    const AxisAngle full = scaled_displacement(q0, q, 1.0);
    if (full.angle <= 1e-12) continue;
    const double a = alpha(rng);
    const AxisAngle part = scaled_displacement(q0, q, a);
    EXPECT_EQ(part.axis, full.axis);
    EXPECT_EQ(part.angle, a * full.angle);
  }
}

TEST(ScaledDisplacement, KFractionalStepsReproduceFullDisplacement) {
  std::mt19937_64 rng(8);
  for (int k : {1, 2, 3, 7, 10, 25}) {
    for (int i = 0; i < 50; ++i) {
      const UnitQuaternion q0 = random_quaternion(rng);
      const UnitQuaternion q = random_quaternion(rng);
      const AxisAngle step = scaled_displacement(q0, q, 1.0 / k);
      const UnitQuaternion inc = UnitQuaternion::from_axis_angle(step);
      UnitQuaternion acc = q0;
      for (int j = 0; j < k; ++j) acc = compose(acc, inc);
      EXPECT_LT(quaternion_distance(acc, q), 1e-9) << "k=" << k;
    }
  }
}

TEST(Matrix, QuaternionConversionsAreMutuallyInverse) {
  std::mt19937_64 rng(9);
  for (int i = 0; i < 10000; ++i) {
    const UnitQuaternion q = random_quaternion(rng);
    const RotationMatrix r = q.to_matrix();
    ASSERT_LT((r.matrix() - eigen_matrix(q)).norm(), 1e-14);
    ASSERT_LT(quaternion_distance(UnitQuaternion::from_matrix(r), q), 1e-12);
    ASSERT_LT(frobenius_distance(UnitQuaternion::from_matrix(r).to_matrix(), r), 1e-12);
  }
}

TEST(Matrix, ValidatingConstructorRejectsNonRotations) {
  EXPECT_NO_THROW(RotationMatrix(Eigen::Matrix3d::Identity()));
  EXPECT_THROW(RotationMatrix(2.0 * Eigen::Matrix3d::Identity()), InputError);
  Eigen::Matrix3d reflect = Eigen::Matrix3d::Identity();
  reflect(2, 2) = -1.0;
  EXPECT_THROW(RotationMatrix{reflect}, InputError);
}

TEST(Euler, IdentityIsZero) {
  for (auto c : {EulerConvention::XYZ, EulerConvention::XYX}) {
    const EulerTriple e = extract_euler(RotationMatrix::identity(), c);
    EXPECT_EQ(e.a, 0.0);
    EXPECT_EQ(e.b, 0.0);
    EXPECT_EQ(e.c, 0.0);
  }
}

TEST(Euler, ComposeSingleAxis) {
  const RotationMatrix r = compose_euler({0.3, 0.0, 0.0, EulerConvention::XYZ});
  EXPECT_LT(frobenius_distance(r, RotationMatrix::rot_x(0.3)), 1e-16);
  EXPECT_LT(frobenius_distance(compose_euler({}), RotationMatrix::identity()), 1e-16);
}

TEST(Euler, IntrinsicOrderIsRightMultiplication) {
  // Intrinsic X-Y-Z: Rx(a) * Ry(b) * Rz(c), checked against Eigen.
  const double a = 0.4, b = -0.7, c = 1.9;
  const Eigen::Matrix3d oracle = (Eigen::AngleAxisd(a, Eigen::Vector3d::UnitX()) *
                                  Eigen::AngleAxisd(b, Eigen::Vector3d::UnitY()) *
                                  Eigen::AngleAxisd(c, Eigen::Vector3d::UnitZ()))
                                     .toRotationMatrix();
  EXPECT_LT((compose_euler({a, b, c, EulerConvention::XYZ}).matrix() - oracle).norm(), 1e-15);
}

TEST(Euler, GimbalLockXyzFoldsIntoFirstAngle) {
  const RotationMatrix ry = RotationMatrix::rot_y(kPi / 2);
  const EulerTriple e = extract_euler(ry, EulerConvention::XYZ);
  EXPECT_NEAR(e.b, kPi / 2, 1e-15);
  EXPECT_EQ(e.c, 0.0);
  EXPECT_LT(frobenius_distance(compose_euler(e), ry), 1e-9);

  // Coupled a/c about the locked axis collapse into a.
  const RotationMatrix r = compose_euler({0.5, -kPi / 2, 0.2, EulerConvention::XYZ});
  const EulerTriple f = extract_euler(r, EulerConvention::XYZ);
  EXPECT_EQ(f.c, 0.0);
  EXPECT_NEAR(f.a, 0.5 - 0.2, 1e-12);
  EXPECT_LT(frobenius_distance(compose_euler(f), r), 1e-9);
}

TEST(Euler, GimbalLockXyx) {
  for (double b : {0.0, kPi}) {
    const RotationMatrix r = compose_euler({0.8, b, -0.3, EulerConvention::XYX});
    const EulerTriple e = extract_euler(r, EulerConvention::XYX);
    EXPECT_EQ(e.c, 0.0);
    EXPECT_LT(frobenius_distance(compose_euler(e), r), 1e-9) << "b=" << b;
  }
}

TEST(Euler, NearGimbalRecompositionStaysWithinTolerance) {
  std::mt19937_64 rng(10);
  std::uniform_real_distribution<double> u(-kPi, kPi);
  for (double d : {1e-3, 1e-7, 1e-9, 1e-10, 5e-11, 1e-12, 0.0}) {
    for (int i = 0; i < 200; ++i) {
      const double a = u(rng), c = u(rng);
      for (const EulerTriple& e : {EulerTriple{a, kPi / 2 - d, c, EulerConvention::XYZ},
                                   EulerTriple{a, -kPi / 2 + d, c, EulerConvention::XYZ},
                                   EulerTriple{a, d, c, EulerConvention::XYX},
                                   EulerTriple{a, kPi - d, c, EulerConvention::XYX}}) {
        const RotationMatrix r = compose_euler(e);
        ASSERT_LT(frobenius_distance(compose_euler(extract_euler(r, e.convention)), r), 1e-9)
            << "d=" << d;
      }
    }
  }
}

TEST(Euler, RandomRoundTripBothConventions) {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 10000; ++i) {
    const RotationMatrix r = random_quaternion(rng).to_matrix();
    for (auto c : {EulerConvention::XYZ, EulerConvention::XYX}) {
      const EulerTriple e = extract_euler(r, c);
      ASSERT_GT(e.a, -kPi);
      ASSERT_LE(e.a, kPi);
      ASSERT_GT(e.c, -kPi);
      ASSERT_LE(e.c, kPi);
      if (c == EulerConvention::XYZ) {
        ASSERT_GE(e.b, -kPi / 2);
        ASSERT_LE(e.b, kPi / 2);
      } else {
        ASSERT_GE(e.b, 0.0);
        ASSERT_LE(e.b, kPi);
      }
      ASSERT_LT(frobenius_distance(compose_euler(e), r), 1e-9);
    }
  }
}

TEST(Euler, ExtractInvertsComposeAwayFromSingularity) {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> u(-3.1, 3.1);
  std::uniform_real_distribution<double> bxyz(-1.5, 1.5);
  std::uniform_real_distribution<double> bxyx(0.05, 3.1);
  for (int i = 0; i < 1000; ++i) {
    const EulerTriple e1{u(rng), bxyz(rng), u(rng), EulerConvention::XYZ};
    const EulerTriple r1 = extract_euler(compose_euler(e1), e1.convention);
    EXPECT_NEAR(r1.a, e1.a, 1e-9);
    EXPECT_NEAR(r1.b, e1.b, 1e-9);
    EXPECT_NEAR(r1.c, e1.c, 1e-9);

    const EulerTriple e2{u(rng), bxyx(rng), u(rng), EulerConvention::XYX};
    const EulerTriple r2 = extract_euler(compose_euler(e2), e2.convention);
    EXPECT_NEAR(r2.a, e2.a, 1e-9);
    EXPECT_NEAR(r2.b, e2.b, 1e-9);
    EXPECT_NEAR(r2.c, e2.c, 1e-9);
  }
}

TEST(Euler, ConventionNames) {
  EXPECT_EQ(parse_euler_convention("XYZ"), EulerConvention::XYZ);
  EXPECT_EQ(parse_euler_convention("XYX"), EulerConvention::XYX);
  EXPECT_THROW(parse_euler_convention("ZYX"), ConfigError);
}
