#pragma once

#include "glteleop/gl_controller.hpp"
#include "glteleop/hand_retarget.hpp"
#include "glteleop/protocol.hpp"
#include "glteleop/session.hpp"
#include "glteleop/sim_slave.hpp"

#include <optional>
#include <string>
#include <vector>

namespace glteleop::server {

enum class ArmKind { Temporal, Spatial };

/// One server-hosted arm: the master-side controller fed by DeviceInput
/// messages, plus the simulated slave.
///
/// A temporal arm runs the global/local controller once a replica or haptic
/// reading has arrived. While it is in Local mode the replica is driven by
/// its motors and replica readings are ignored. A spatial arm maps replica
/// joints, the IMU pair and the exoskeleton; the IMU home is the first
/// complete IMU pair received. Direct slave commands are applied after the
/// controller output.
class ArmRuntime {
 public:
  ArmRuntime(ArmKind kind, SlaveModel model, ControllerConfig config,
             std::optional<HandCalibration> hand = std::nullopt);

  ArmKind kind() const noexcept { return kind_; }
  const SlaveModel& model() const noexcept { return model_; }
  const SlaveState& state() const noexcept { return state_; }
  TeleopMode mode() const;
  bool switch_pending() const;
  /// Replica joint positions as the server models them.
  const JointVector& replica() const noexcept { return replica_; }

  session::GateResult request_mode(TeleopMode mode);

  /// Accepts a routed payload: slave commands, DeviceInput, Estop or Reset.
  /// Throws ProtocolError when it does not fit this arm.
  void apply(const protocol::Payload& payload);
  void engage_safe_hold();

  /// Runs the controller and the simulator for one tick; returns the
  /// simulator's diagnostics.
  std::vector<std::string> tick(double dt);

  protocol::StateUpdate state_update() const;

 private:
  void validate(const SlaveCommand& cmd) const;
  void restart_controller();

  ArmKind kind_;
  SlaveModel model_;
  ControllerConfig config_;
  std::optional<HandCalibration> hand_calibration_;
  std::optional<TemporalController> controller_;
  SlaveState state_;

  bool have_input_ = false;
  JointVector replica_;
  Pose haptic_;
  std::optional<UnitQuaternion> imu_forearm_;
  std::optional<UnitQuaternion> imu_hand_;
  std::optional<ImuCalibration> imu_home_;
  std::optional<ExoskeletonReading> exo_;
  std::vector<SlaveCommand> direct_;
};

/// The arms of one server, indexed by arm number.
class ArmSet : public session::ArmGate {
 public:
  std::vector<ArmRuntime> arms;

  bool has_arm(int arm) const override;
  session::GateResult request_mode(int arm, TeleopMode mode) override;
  TeleopMode mode(int arm) const override;
  bool switch_pending(int arm) const override;
};

}  // namespace glteleop::server
