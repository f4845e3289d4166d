#include "glteleop/rotation.hpp"

#include "glteleop/errors.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <numbers>

namespace glteleop {

namespace {

constexpr double kPi = std::numbers::pi;

// Maps an atan2 result onto (-pi, pi].
double wrap_half_open(double angle) {
  return angle <= -kPi ? angle + 2.0 * kPi : angle;
}

}  // namespace

UnitQuaternion::UnitQuaternion(double w, double x, double y, double z) {
  if (!std::isfinite(w) || !std::isfinite(x) || !std::isfinite(y) || !std::isfinite(z)) {
    throw InputError("quaternion has non-finite components");
  }
  const double n = std::sqrt(w * w + x * x + y * y + z * z);
  if (n < 1e-300) {
    throw InputError("quaternion has zero norm");
  }
  // Values already unit to rounding are kept bit-for-bit, which makes
  // construction idempotent and serialization round-trips exact.
  if (std::abs(n - 1.0) > 1e-15) {
    w /= n;
    x /= n;
    y /= n;
    z /= n;
  }
  bool flip = w < 0.0;
  if (w == 0.0) {
    // Both signs describe the same half-turn; keep the first non-zero
    // vector component positive.
    if (x != 0.0) {
      flip = x < 0.0;
    } else if (y != 0.0) {
      flip = y < 0.0;
    } else {
      flip = z < 0.0;
    }
  }
  if (flip) {
    w = -w;
    x = -x;
    y = -y;
    z = -z;
  }
  // Normalize -0.0 so that equal rotations compare and serialize equally.
  w_ = w + 0.0;
  x_ = x + 0.0;
  y_ = y + 0.0;
  z_ = z + 0.0;
}

UnitQuaternion UnitQuaternion::from_axis_angle(const Eigen::Vector3d& axis, double angle) {
  if (!std::isfinite(angle) || !axis.allFinite()) {
    throw InputError("axis-angle has non-finite components");
  }
  if (angle == 0.0) {
    return identity();
  }
  const double n = axis.norm();
  if (n < 1e-300) {
    throw InputError("axis-angle axis has zero norm");
  }
  const Eigen::Vector3d u = axis / n;
  const double s = std::sin(0.5 * angle);
  return {std::cos(0.5 * angle), u.x() * s, u.y() * s, u.z() * s};
}

UnitQuaternion UnitQuaternion::from_matrix(const RotationMatrix& rot) {
  // Shepperd: branch on the largest diagonal term for conditioning.
  const Eigen::Matrix3d& m = rot.matrix();
  const double trace = m(0, 0) + m(1, 1) + m(2, 2);
  double w, x, y, z;
  if (trace > m(0, 0) && trace > m(1, 1) && trace > m(2, 2)) {
    const double s = 2.0 * std::sqrt(1.0 + trace);
    w = 0.25 * s;
    x = (m(2, 1) - m(1, 2)) / s;
    y = (m(0, 2) - m(2, 0)) / s;
    z = (m(1, 0) - m(0, 1)) / s;
  } else if (m(0, 0) > m(1, 1) && m(0, 0) > m(2, 2)) {
    const double s = 2.0 * std::sqrt(1.0 + m(0, 0) - m(1, 1) - m(2, 2));
    w = (m(2, 1) - m(1, 2)) / s;
    x = 0.25 * s;
    y = (m(0, 1) + m(1, 0)) / s;
    z = (m(0, 2) + m(2, 0)) / s;
  } else if (m(1, 1) > m(2, 2)) {
    const double s = 2.0 * std::sqrt(1.0 + m(1, 1) - m(0, 0) - m(2, 2));
    w = (m(0, 2) - m(2, 0)) / s;
    x = (m(0, 1) + m(1, 0)) / s;
    y = 0.25 * s;
    z = (m(1, 2) + m(2, 1)) / s;
  } else {
    const double s = 2.0 * std::sqrt(1.0 + m(2, 2) - m(0, 0) - m(1, 1));
    w = (m(1, 0) - m(0, 1)) / s;
    x = (m(0, 2) + m(2, 0)) / s;
    y = (m(1, 2) + m(2, 1)) / s;
    z = 0.25 * s;
  }
  return {w, x, y, z};
}

UnitQuaternion UnitQuaternion::inverse() const {
  return {w_, -x_, -y_, -z_};
}

RotationMatrix UnitQuaternion::to_matrix() const {
  const double ww = w_ * w_, xx = x_ * x_, yy = y_ * y_, zz = z_ * z_;
  const double xy = x_ * y_, xz = x_ * z_, yz = y_ * z_;
  const double wx = w_ * x_, wy = w_ * y_, wz = w_ * z_;
  Eigen::Matrix3d m;
  m << ww + xx - yy - zz, 2.0 * (xy - wz), 2.0 * (xz + wy),
      2.0 * (xy + wz), ww - xx + yy - zz, 2.0 * (yz - wx),
      2.0 * (xz - wy), 2.0 * (yz + wx), ww - xx - yy + zz;
  return RotationMatrix::unchecked(m);
}

Eigen::Vector3d UnitQuaternion::rotate(const Eigen::Vector3d& v) const {
  const Eigen::Vector3d u = vec();
  const Eigen::Vector3d t = 2.0 * u.cross(v);
  return v + w_ * t + u.cross(t);
}

RotationMatrix::RotationMatrix(const Eigen::Matrix3d& m) : m_(m) {
  if (!m.allFinite()) {
    throw InputError("rotation matrix has non-finite entries");
  }
  const double ortho = (m.transpose() * m - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
  if (ortho > 1e-9 || std::abs(m.determinant() - 1.0) > 1e-9) {
    throw InputError("matrix is not a proper rotation");
  }
}

RotationMatrix RotationMatrix::rot_x(double angle) {
  const double c = std::cos(angle), s = std::sin(angle);
  Eigen::Matrix3d m;
  m << 1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c;
  return unchecked(m);
}

RotationMatrix RotationMatrix::rot_y(double angle) {
  const double c = std::cos(angle), s = std::sin(angle);
  Eigen::Matrix3d m;
  m << c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c;
  return unchecked(m);
}

RotationMatrix RotationMatrix::rot_z(double angle) {
  const double c = std::cos(angle), s = std::sin(angle);
  Eigen::Matrix3d m;
  m << c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0;
  return unchecked(m);
}

std::string_view to_string(EulerConvention c) {
  return c == EulerConvention::XYZ ? "XYZ" : "XYX";
}

EulerConvention parse_euler_convention(std::string_view s) {
  if (s == "XYZ") return EulerConvention::XYZ;
  if (s == "XYX") return EulerConvention::XYX;
  throw ConfigError("unknown Euler convention '" + std::string(s) + "' (expected XYZ or XYX)");
}

UnitQuaternion compose(const UnitQuaternion& a, const UnitQuaternion& b) {
  return {a.w() * b.w() - a.x() * b.x() - a.y() * b.y() - a.z() * b.z(),
          a.w() * b.x() + a.x() * b.w() + a.y() * b.z() - a.z() * b.y(),
          a.w() * b.y() - a.x() * b.z() + a.y() * b.w() + a.z() * b.x(),
          a.w() * b.z() + a.x() * b.y() - a.y() * b.x() + a.z() * b.w()};
}

AxisAngle to_axis_angle(const UnitQuaternion& q) {
  const Eigen::Vector3d v = q.vec();
  const double s = v.norm();
  // w >= 0 by canonicalization, so the angle falls in [0, pi].
  const double angle = 2.0 * std::atan2(s, q.w());
  if (angle < 1e-12) {
    return {};
  }
  return {v / s, angle};
}

AxisAngle scaled_displacement(const UnitQuaternion& q0, const UnitQuaternion& q, double alpha_r) {
  if (!(alpha_r > 0.0 && alpha_r <= 1.0)) {
    throw ConfigError("rotational scaling factor must lie in (0, 1]");
  }
  AxisAngle d = to_axis_angle(compose(q0.inverse(), q));
  d.angle *= alpha_r;
  return d;
}

EulerTriple extract_euler(const RotationMatrix& rot, EulerConvention convention) {
  const Eigen::Matrix3d& m = rot.matrix();
  EulerTriple e;
  e.convention = convention;
  if (convention == EulerConvention::XYZ) {
    // R = Rx(a) Ry(b) Rz(c):
    //   [ cb*cc          -cb*sc           sb    ]
    //   [ .              .               -sa*cb ]
    //   [ .              .                ca*cb ]
    e.b = std::atan2(m(0, 2), std::hypot(m(0, 0), m(0, 1)));
    if (std::abs(std::abs(e.b) - 0.5 * kPi) < kGimbalTolerance) {
      // Rx(a) Ry(+-pi/2) Rz(c) == Rx(a +- c) Ry(+-pi/2); R21 = sin, R11 = cos.
      e.a = std::atan2(m(2, 1), m(1, 1));
      e.c = 0.0;
    } else {
      e.a = std::atan2(-m(1, 2), m(2, 2));
      e.c = std::atan2(-m(0, 1), m(0, 0));
    }
  } else {
    // R = Rx(a) Ry(b) Rx(c):
    //   [ cb       sb*sc   sb*cc ]
    //   [ sa*sb    .       .     ]
    //   [ -ca*sb   .       .     ]
    e.b = std::atan2(std::hypot(m(0, 1), m(0, 2)), m(0, 0));
    if (e.b < kGimbalTolerance) {
      // Rx(a) Rx(c) == Rx(a + c).
      e.a = std::atan2(m(2, 1), m(1, 1));
      e.c = 0.0;
    } else if (kPi - e.b < kGimbalTolerance) {
      // Rx(a) Ry(pi) Rx(c): rows 1-2 hold cos/sin of (a - c).
      e.a = std::atan2(m(1, 2), m(1, 1));
      e.c = 0.0;
    } else {
      e.a = std::atan2(m(1, 0), -m(2, 0));
      e.c = std::atan2(m(0, 1), m(0, 2));
    }
  }
  e.a = wrap_half_open(e.a);
  e.c = wrap_half_open(e.c);
  return e;
}

RotationMatrix compose_euler(const EulerTriple& e) {
  const RotationMatrix third =
      e.convention == EulerConvention::XYZ ? RotationMatrix::rot_z(e.c) : RotationMatrix::rot_x(e.c);
  return RotationMatrix::rot_x(e.a) * RotationMatrix::rot_y(e.b) * third;
}

double quaternion_distance(const UnitQuaternion& q1, const UnitQuaternion& q2) {
  const Eigen::Vector4d a = q1.coeffs_wxyz();
  const Eigen::Vector4d b = q2.coeffs_wxyz();
  return std::min((a - b).norm(), (a + b).norm());
}

double frobenius_distance(const RotationMatrix& r1, const RotationMatrix& r2) {
  return (r1.matrix() - r2.matrix()).norm();
}

Eigen::Vector3d rotation_vector(const UnitQuaternion& q) {
  const AxisAngle aa = to_axis_angle(q);
  return aa.axis * aa.angle;
}

}  // namespace glteleop
