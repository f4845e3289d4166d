#pragma once

#include "glteleop/rotation.hpp"

#include <Eigen/Core>

#include <string>
#include <vector>

namespace glteleop {

/// Joint angles in radians, ordered base to tip.
using JointVector = Eigen::VectorXd;

/// Position in meters plus orientation.
struct Pose {
  Eigen::Vector3d position = Eigen::Vector3d::Zero();
  UnitQuaternion orientation;

  /// this * rhs: rhs expressed in this frame.
  Pose operator*(const Pose& rhs) const;
  Pose inverse() const;
  bool is_finite() const;

  bool operator==(const Pose& other) const {
    return position == other.position && orientation == other.orientation;
  }
};

/// One revolute joint: the fixed transform from the previous joint frame,
/// followed by rotation about `axis` expressed in that transformed frame.
struct Link {
  std::string name;
  Pose origin;
  Eigen::Vector3d axis = Eigen::Vector3d::UnitZ();
  double min = -3.14159;
  double max = 3.14159;
  double velocity_limit = 1.0;  // rad/s
};

/// Serial chain of revolute joints with an end-effector offset.
class KinematicChain {
 public:
  /// Validates the chain: at least one joint, unit axes (normalized within
  /// 1e-9), min < max and positive velocity limits. Throws ConfigError.
  KinematicChain(std::string name, std::vector<Link> links, Pose ee_offset);

  const std::string& name() const noexcept { return name_; }
  int dof() const noexcept { return static_cast<int>(links_.size()); }
  const std::vector<Link>& links() const noexcept { return links_; }
  const Pose& ee_offset() const noexcept { return ee_offset_; }

  JointVector lower_limits() const;
  JointVector upper_limits() const;
  JointVector velocity_limits() const;

  bool within_limits(const JointVector& q, double slack = 0.0) const;
  JointVector clamp(const JointVector& q) const;

  /// Loads a robot model document (JSON, see models/). Throws ConfigError.
  static KinematicChain from_json_text(const std::string& text);
  static KinematicChain load(const std::string& path);

 private:
  std::string name_;
  std::vector<Link> links_;
  Pose ee_offset_;
};

/// Throws InputError when the length differs from the chain dof.
void require_dof(const KinematicChain& chain, const JointVector& q, const char* what);

Pose forward_kinematics(const KinematicChain& chain, const JointVector& q);

/// Geometric Jacobian: rows 0-2 linear velocity (m/rad), rows 3-5 angular
/// velocity (rad/rad), both in the base frame.
Eigen::MatrixXd jacobian(const KinematicChain& chain, const JointVector& q);

struct IkConfig {
  double damping = 0.05;
  int max_iters = 200;
  double pos_tol = 1e-4;   // m
  double ang_tol = 1e-3;   // rad
  double step_cap = 0.2;   // rad, on the joint-step norm
  /// Twist-error norm below which the damping is scaled down in proportion.
  double damping_fade_error = 0.01;
};

struct IkSolution {
  JointVector joints;
  double residual_position = 0.0;
  double residual_angle = 0.0;
  int iterations = 0;
  bool converged = false;
};

/// Damped least squares: dq = J^T (J J^T + lambda^2 I)^-1 e, with the step
/// norm capped and joints clamped to limits after every step. lambda^2 is
/// damping^2 * min(1, |e| / damping_fade_error).
///
/// The seed is returned unchanged when it already satisfies the tolerances.
/// Non-convergence is reported through `converged`, not thrown. Throws
/// InputError on a non-finite target or a seed of the wrong length.
IkSolution solve_ik(const KinematicChain& chain, const Pose& target, const JointVector& seed,
                    const IkConfig& cfg = {});

/// Position and orientation error between two poses (meters, radians).
struct PoseError {
  double position = 0.0;
  double angle = 0.0;
};
PoseError pose_error(const Pose& a, const Pose& b);

}  // namespace glteleop
