#pragma once

#include "glteleop/commands.hpp"
#include "glteleop/kinematics.hpp"

#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <vector>

namespace glteleop {

enum class EndEffectorKind { None, Gripper, Hand };

struct WorkspaceBox {
  Eigen::Vector3d min = Eigen::Vector3d::Constant(-10.0);
  Eigen::Vector3d max = Eigen::Vector3d::Constant(10.0);

  bool contains(const Eigen::Vector3d& p) const {
    return (p.array() >= min.array()).all() && (p.array() <= max.array()).all();
  }
};

/// Tracking error stands in for the joint-torque safety limit of the real
/// arm: a joint whose commanded target is further than the limit from its
/// actual angle latches the e-stop.
struct SafetyConfig {
  double tracking_error_limit = 0.5;  // rad
  WorkspaceBox workspace;
};

/// Everything the simulator needs about one slave arm. Loaded from the same
/// robot model document as the kinematic chain.
struct SlaveModel {
  KinematicChain chain;
  JointVector home;
  SafetyConfig safety;
  EndEffectorKind end_effector = EndEffectorKind::None;
  double gripper_rate = 2.0;  // channel units per second
  double hand_rate = 2.0;
  IkConfig ik;
  EulerConvention wrist_convention = EulerConvention::XYZ;

  static SlaveModel from_json_text(const std::string& text);
  static SlaveModel load(const std::string& path);
};

struct SlaveState {
  JointVector joints;
  JointVector velocities;
  /// Joint target currently being tracked; Cartesian targets are resolved
  /// into it by IK seeded with its previous value.
  JointVector command;
  Pose ee_pose;
  double gripper = 0.0;
  double gripper_target = 0.0;
  std::array<double, HandTarget::kChannels> hand{};
  std::array<double, HandTarget::kChannels> hand_target{};
  bool estopped = false;
  bool safe_hold = false;
  /// Set for the tick in which a Cartesian target failed to converge.
  bool ik_failed = false;
  std::uint64_t tick = 0;
  double time = 0.0;

  bool operator==(const SlaveState&) const = default;
};

SlaveState initial_state(const SlaveModel& model);

struct StepResult {
  SlaveState state;
  std::vector<std::string> diagnostics;
};

/// Advances the simulation by one fixed tick.
///
/// Commands are latched in order; joints then move toward the latched target
/// at no more than their velocity limit and land on it exactly once within
/// one tick's reach. An e-stop freezes the joints until reset(). A Cartesian
/// target that IK cannot reach holds the arm where it is (safe-hold) and is
/// reported as a diagnostic. Throws ProtocolError on a command that does not
/// fit this arm (wrong dof, missing end effector, non-finite values).
StepResult step(const SlaveModel& model, const SlaveState& state,
                std::span<const SlaveCommand> commands, double dt);
StepResult step(const SlaveModel& model, const SlaveState& state, const SlaveCommand& command,
                double dt);

/// Home joints, e-stop and safe-hold cleared, tick and time zeroed.
SlaveState reset(const SlaveModel& model, const SlaveState& state);

/// Freezes the arm at its current joints until released or reset.
SlaveState engage_safe_hold(const SlaveState& state);
SlaveState release_safe_hold(const SlaveState& state);

/// One line of the append-only state log (compact JSON, round-trip exact).
std::string state_log_line(const SlaveState& state);

/// Publish/subscribe fan-out of immutable state snapshots.
class StateBroadcaster {
 public:
  using Snapshot = std::shared_ptr<const SlaveState>;
  using Callback = std::function<void(const Snapshot&)>;

  /// Returns a token for unsubscribe().
  int subscribe(Callback cb);
  void unsubscribe(int token);
  void publish(const SlaveState& state);
  Snapshot latest() const;

 private:
  mutable std::mutex mutex_;
  std::vector<std::pair<int, Callback>> subscribers_;
  Snapshot latest_;
  int next_token_ = 0;
};

}  // namespace glteleop
