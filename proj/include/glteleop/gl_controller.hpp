#pragma once

#include "glteleop/commands.hpp"
#include "glteleop/kinematics.hpp"
#include "glteleop/rotation.hpp"
#include "glteleop/sim_slave.hpp"

#include <optional>
#include <string>
#include <vector>

namespace glteleop {

/// Linear (alpha_l) and rotational (alpha_r) clutch scaling, each in (0, 1].
class ScalingFactors {
 public:
  /// Throws ConfigError when either factor is outside (0, 1].
  ScalingFactors(double alpha_l, double alpha_r);

  double linear() const noexcept { return alpha_l_; }
  double rotational() const noexcept { return alpha_r_; }

 private:
  double alpha_l_;
  double alpha_r_;
};

/// Master and slave state captured when the local component engages.
struct ClutchAnchor {
  Eigen::Vector3d p0 = Eigen::Vector3d::Zero();
  UnitQuaternion q0;
  Pose ee_anchor;
};

ClutchAnchor engage_local(const Pose& haptic, const Pose& slave_ee);

/// Clutched Cartesian target:
///   position    = ee_anchor.position + alpha_l * A (p - p0)
///   orientation = ee_anchor.orientation * Rot(A v, alpha_r * theta)
/// where (v, theta) is the axis-angle of q0^-1 q and A the fixed
/// master-to-slave alignment rotation. Throws InputError on a non-finite pose.
CartesianTarget local_target(const ClutchAnchor& anchor, const Pose& haptic,
                             const ScalingFactors& scale,
                             const UnitQuaternion& alignment = UnitQuaternion::identity());

/// Drives the replica toward the slave joints, each joint moving at most
/// vel_limit * dt and landing exactly on the slave value when within reach.
JointVector mirror_update(const JointVector& replica, const JointVector& slave, double vel_limit,
                          double dt);

struct ControllerConfig {
  ScalingFactors scale{1.0, 1.0};
  UnitQuaternion alignment;
  EulerConvention euler = EulerConvention::XYZ;
  double mirror_velocity_limit = 1.0;  // rad/s
  /// Replica-to-slave distance below which the mirror counts as converged.
  double mirror_tolerance = 1e-3;  // rad
  double control_rate_hz = 100.0;

  double dt() const { return 1.0 / control_rate_hz; }

  static ControllerConfig from_json_text(const std::string& text);
  static ControllerConfig load(const std::string& path);
  std::string to_json_text() const;
};

/// One tick of master-device readings for the temporal system.
struct TemporalInputs {
  JointVector replica;
  Pose haptic;
  /// Pedal edge this tick, if any.
  std::optional<TeleopMode> pedal;
  std::optional<double> gripper;
};

enum class ModeRequest { Granted, Pending, Unchanged };

struct TemporalOutput {
  std::vector<SlaveCommand> commands;
  /// Motor command for the replica while it mirrors the slave (Local mode).
  std::optional<JointVector> replica_drive;
  TeleopMode mode = TeleopMode::Global;
  bool switch_pending = false;
  /// Mode changed during this tick.
  bool switched = false;
};

/// Sequential global/local controller: a joint-space replica and a clutched
/// haptic stylus share all DOFs of one arm and are selected by pedals.
///
/// Global mode emits the replica joints (clamped to limits). Engaging Local
/// anchors the clutch at the slave's current joint command, so the first
/// Local target reproduces it exactly. While Local, the replica is driven to
/// mirror the slave. A request to return to Global holds the last local
/// target until the replica has converged onto the held joint command.
class TemporalController {
 public:
  TemporalController(KinematicChain chain, ControllerConfig config);

  TeleopMode mode() const noexcept { return mode_; }
  bool switch_pending() const noexcept { return pending_global_; }
  const std::optional<ClutchAnchor>& anchor() const noexcept { return anchor_; }
  const ControllerConfig& config() const noexcept { return config_; }
  void set_scale(const ScalingFactors& scale) { config_.scale = scale; }

  /// Records a pedal request; the switch itself happens inside step().
  ModeRequest request_mode(TeleopMode mode);

  /// Mirror convergence (replica within mirror_tolerance of the slave) and
  /// the replica sitting exactly on the slave's held joint command.
  bool transition_ready(const JointVector& replica, const SlaveState& slave) const;

  TemporalOutput step(const TemporalInputs& inputs, const SlaveState& slave, double dt);

 private:
  void engage(const Pose& haptic, const SlaveState& slave);

  KinematicChain chain_;
  ControllerConfig config_;
  TeleopMode mode_ = TeleopMode::Global;
  bool pending_local_ = false;
  bool pending_global_ = false;
  std::optional<ClutchAnchor> anchor_;
  std::optional<CartesianTarget> held_target_;
};

/// Home orientations of the forearm and hand IMUs, recorded once.
struct ImuCalibration {
  RotationMatrix forearm_home;
  RotationMatrix hand_home;
};

struct ImuPair {
  RotationMatrix forearm;
  RotationMatrix hand;
};

/// R_s = R1^-1 * R1_home * R2_home^-1 * R2: the hand's rotation relative to
/// the forearm, measured from the calibrated home pose.
RotationMatrix wrist_rotation(const ImuCalibration& calib, const ImuPair& now);

struct ClampEvent {
  int joint = 0;
  double requested = 0.0;
  double applied = 0.0;
};

struct SpatialOutput {
  JointTarget joints;
  std::optional<HandTarget> hand;
  std::vector<ClampEvent> clamps;
};

/// Spatial decoupling: the first N-3 joints copy the replica, the last three
/// take the Euler angles of the wrist rotation. All joints are clamped to
/// limits and each clamp is reported. Throws InputError when the replica does
/// not have exactly N-3 values.
SpatialOutput spatial_step(const KinematicChain& chain, const JointVector& replica,
                           const ImuCalibration& calib, const ImuPair& imus,
                           const std::optional<HandTarget>& hand,
                           EulerConvention convention = EulerConvention::XYZ);

}  // namespace glteleop
