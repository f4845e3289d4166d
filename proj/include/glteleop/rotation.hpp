#pragma once

#include <Eigen/Core>

#include <string_view>

namespace glteleop {

class RotationMatrix;

/// Rotation axis and angle. The angle lies in [0, pi] and the axis is unit
/// length. A zero rotation is reported with axis (1, 0, 0).
struct AxisAngle {
  Eigen::Vector3d axis{1.0, 0.0, 0.0};
  double angle = 0.0;
};

/// Unit quaternion in Hamilton convention, stored w-first.
///
/// Every constructed value is normalized and canonicalized so that w >= 0
/// (when w == 0 the first non-zero vector component is made positive). q and
/// -q therefore always map to the same stored value.
class UnitQuaternion {
 public:
  UnitQuaternion() = default;

  /// Normalizes the given components. Throws InputError on zero norm or
  /// non-finite input.
  UnitQuaternion(double w, double x, double y, double z);

  static UnitQuaternion identity() { return {}; }

  /// Rotation of `angle` radians about `axis`. The axis need not be unit
  /// length but must be non-zero unless the angle is zero.
  static UnitQuaternion from_axis_angle(const Eigen::Vector3d& axis, double angle);
  static UnitQuaternion from_axis_angle(const AxisAngle& aa) {
    return from_axis_angle(aa.axis, aa.angle);
  }
  static UnitQuaternion from_matrix(const RotationMatrix& r);

  double w() const noexcept { return w_; }
  double x() const noexcept { return x_; }
  double y() const noexcept { return y_; }
  double z() const noexcept { return z_; }
  Eigen::Vector3d vec() const { return {x_, y_, z_}; }
  Eigen::Vector4d coeffs_wxyz() const { return {w_, x_, y_, z_}; }

  UnitQuaternion inverse() const;
  RotationMatrix to_matrix() const;
  Eigen::Vector3d rotate(const Eigen::Vector3d& v) const;

  bool operator==(const UnitQuaternion&) const = default;

 private:
  double w_ = 1.0;
  double x_ = 0.0;
  double y_ = 0.0;
  double z_ = 0.0;
};

/// Proper rotation matrix (orthonormal, det = +1).
class RotationMatrix {
 public:
  RotationMatrix() : m_(Eigen::Matrix3d::Identity()) {}

  /// Validates orthonormality and determinant within 1e-9; throws InputError.
  explicit RotationMatrix(const Eigen::Matrix3d& m);

  /// Wraps a matrix the caller has already established to be a rotation.
  static RotationMatrix unchecked(const Eigen::Matrix3d& m) {
    RotationMatrix r;
    r.m_ = m;
    return r;
  }

  static RotationMatrix identity() { return {}; }
  static RotationMatrix rot_x(double angle);
  static RotationMatrix rot_y(double angle);
  static RotationMatrix rot_z(double angle);

  const Eigen::Matrix3d& matrix() const noexcept { return m_; }
  double operator()(int row, int col) const { return m_(row, col); }

  RotationMatrix inverse() const { return unchecked(m_.transpose()); }
  RotationMatrix operator*(const RotationMatrix& rhs) const { return unchecked(m_ * rhs.m_); }
  Eigen::Vector3d operator*(const Eigen::Vector3d& v) const { return m_ * v; }

 private:
  Eigen::Matrix3d m_;
};

enum class EulerConvention { XYZ, XYX };

std::string_view to_string(EulerConvention c);
/// Parses "XYZ" / "XYX"; throws ConfigError otherwise.
EulerConvention parse_euler_convention(std::string_view s);

/// Intrinsic Euler angles: R = R1(a) * R2(b) * R3(c) with axes taken from the
/// convention (X-Y-Z or X-Y-X), each applied about the already rotated frame.
///
/// Ranges: a, c in (-pi, pi]; b in [-pi/2, pi/2] for XYZ and [0, pi] for XYX.
struct EulerTriple {
  double a = 0.0;
  double b = 0.0;
  double c = 0.0;
  EulerConvention convention = EulerConvention::XYZ;
};

/// Hamilton product q1 * q2 (apply q2 first in the body frame of q1).
UnitQuaternion compose(const UnitQuaternion& q1, const UnitQuaternion& q2);
inline UnitQuaternion operator*(const UnitQuaternion& q1, const UnitQuaternion& q2) {
  return compose(q1, q2);
}

AxisAngle to_axis_angle(const UnitQuaternion& q);

/// Axis-angle of q0^-1 * q with the angle multiplied by `alpha_r`.
/// Throws ConfigError unless alpha_r is in (0, 1].
AxisAngle scaled_displacement(const UnitQuaternion& q0, const UnitQuaternion& q, double alpha_r);

/// Extracts intrinsic Euler angles.
///
/// At the gimbal singularity (b within the gimbal tolerance of +-pi/2 for XYZ,
/// of 0 or pi for XYX) the third angle is fixed to c = 0 and the remaining
/// rotation about the coupled axis is carried entirely by a.
EulerTriple extract_euler(const RotationMatrix& r, EulerConvention convention);

RotationMatrix compose_euler(const EulerTriple& e);

/// Distance between two rotations in quaternion space, min(|q1-q2|, |q1+q2|).
double quaternion_distance(const UnitQuaternion& q1, const UnitQuaternion& q2);

/// Frobenius norm of the difference of two matrices.
double frobenius_distance(const RotationMatrix& r1, const RotationMatrix& r2);

/// Rotation vector (axis * angle) of q, in [0, pi] magnitude.
Eigen::Vector3d rotation_vector(const UnitQuaternion& q);

/// Angle tolerance defining the gimbal branch in extract_euler.
inline constexpr double kGimbalTolerance = 1e-10;

}  // namespace glteleop
