#include "glteleop/arm_runtime.hpp"

#include "glteleop/errors.hpp"

#include "overloaded.hpp"

namespace glteleop::server {

using namespace protocol;

ArmRuntime::ArmRuntime(ArmKind kind, SlaveModel model, ControllerConfig config,
                       std::optional<HandCalibration> hand)
    : kind_(kind),
      model_(std::move(model)),
      config_(config),
      hand_calibration_(std::move(hand)),
      state_(initial_state(model_)) {
  if (kind_ == ArmKind::Spatial && model_.chain.dof() < 4) {
    throw ConfigError("a spatial arm needs at least 4 joints");
  }
  if (hand_calibration_) hand_calibration_->validate();
  restart_controller();
}

void ArmRuntime::restart_controller() {
  const int n = model_.chain.dof();
  replica_ = kind_ == ArmKind::Temporal ? model_.home : JointVector(model_.home.head(n - 3));
  haptic_ = Pose{};
  imu_forearm_.reset();
  imu_hand_.reset();
  imu_home_.reset();
  exo_.reset();
  have_input_ = false;
  direct_.clear();
  if (kind_ == ArmKind::Temporal) controller_.emplace(model_.chain, config_);
}

TeleopMode ArmRuntime::mode() const {
  return controller_ ? controller_->mode() : TeleopMode::Global;
}

bool ArmRuntime::switch_pending() const {
  return controller_ && controller_->switch_pending();
}

session::GateResult ArmRuntime::request_mode(TeleopMode mode) {
  if (!controller_) return session::GateResult::Unchanged;
  switch (controller_->request_mode(mode)) {
    case ModeRequest::Granted:
      return session::GateResult::Granted;
    case ModeRequest::Pending:
      return session::GateResult::Pending;
    case ModeRequest::Unchanged:
      break;
  }
  return session::GateResult::Unchanged;
}

void ArmRuntime::validate(const SlaveCommand& cmd) const {
  // A trial step raises the same ProtocolError the tick would.
  (void)step(model_, state_, cmd, config_.dt());
}

void ArmRuntime::apply(const Payload& payload) {
  std::visit(
      detail::overloaded{
          [&](const Estop&) { state_.estopped = true; },
          [&](const Reset&) {
            if (state_.estopped) {
              SlaveState fresh = reset(model_, state_);
              fresh.tick = state_.tick;
              fresh.time = state_.time;
              state_ = fresh;
              restart_controller();
            } else {
              state_ = release_safe_hold(state_);
            }
          },
          [&](const DeviceInput& in) {
            const int n = model_.chain.dof();
            const int replica_dof = kind_ == ArmKind::Temporal ? n : n - 3;
            if (in.replica && in.replica->size() != replica_dof) {
              throw ProtocolError("replica needs " + std::to_string(replica_dof) + " joints", "DeviceInput");
            }
            if (kind_ == ArmKind::Temporal && (in.imu_forearm || in.imu_hand || in.exo)) {
              throw ProtocolError("arm uses temporal decoupling; IMU and exoskeleton inputs do not apply",
                                  "DeviceInput");
            }
            if (kind_ == ArmKind::Spatial && (in.haptic || in.alpha_l || in.alpha_r)) {
              throw ProtocolError("arm uses spatial decoupling; haptic inputs do not apply", "DeviceInput");
            }
            if (in.exo && !hand_calibration_) {
              throw ProtocolError("arm has no hand calibration", "DeviceInput");
            }
            if (in.gripper && model_.end_effector != EndEffectorKind::Gripper) {
              throw ProtocolError("arm has no gripper", "DeviceInput");
            }
            if (in.alpha_l || in.alpha_r) {
              if (controller_->mode() != TeleopMode::Global) {
                throw ProtocolError("scaling can change only in Global mode", "DeviceInput");
              }
              try {
                controller_->set_scale(ScalingFactors(in.alpha_l.value_or(controller_->config().scale.linear()),
                                                      in.alpha_r.value_or(controller_->config().scale.rotational())));
              } catch (const ConfigError& e) {
                throw ProtocolError(e.what(), "DeviceInput");
              }
            }
            if (in.replica && mode() == TeleopMode::Global) replica_ = *in.replica;
            if (in.haptic) haptic_ = *in.haptic;
            if (in.gripper) direct_.emplace_back(GripperTarget{*in.gripper});
            if (in.imu_forearm) imu_forearm_ = *in.imu_forearm;
            if (in.imu_hand) imu_hand_ = *in.imu_hand;
            if (in.exo) exo_ = ExoskeletonReading{*in.exo};
            if (!imu_home_ && imu_forearm_ && imu_hand_) {
              imu_home_ = ImuCalibration{imu_forearm_->to_matrix(), imu_hand_->to_matrix()};
            }
            if (in.replica || in.haptic) have_input_ = true;
          },
          [&](const auto& p) {
            if (!is_command(p)) throw ProtocolError("not a command for an arm", kind_name(p));
            const SlaveCommand cmd = to_command(p);
            validate(cmd);
            direct_.push_back(cmd);
          },
      },
      payload);
}

void ArmRuntime::engage_safe_hold() {
  state_ = glteleop::engage_safe_hold(state_);
}

std::vector<std::string> ArmRuntime::tick(double dt) {
  std::vector<SlaveCommand> commands;
  if (have_input_ && controller_) {
    TemporalOutput out = controller_->step(TemporalInputs{replica_, haptic_, std::nullopt, std::nullopt}, state_, dt);
    if (out.replica_drive) replica_ = *out.replica_drive;
    commands = std::move(out.commands);
  } else if (have_input_) {
    const ImuCalibration home = imu_home_.value_or(ImuCalibration{});
    const ImuPair now{imu_forearm_ ? imu_forearm_->to_matrix() : home.forearm_home,
                      imu_hand_ ? imu_hand_->to_matrix() : home.hand_home};
    std::optional<HandTarget> hand;
    if (exo_ && hand_calibration_) hand = retarget(*exo_, *hand_calibration_);
    SpatialOutput out = spatial_step(model_.chain, replica_, home, now, hand, model_.wrist_convention);
    commands.emplace_back(std::move(out.joints));
    if (out.hand) commands.emplace_back(*out.hand);
  }
  commands.insert(commands.end(), direct_.begin(), direct_.end());
  direct_.clear();
  StepResult r = step(model_, state_, commands, dt);
  state_ = std::move(r.state);
  return std::move(r.diagnostics);
}

StateUpdate ArmRuntime::state_update() const {
  StateUpdate u;
  u.tick = state_.tick;
  u.time = state_.time;
  u.joints = state_.joints;
  u.command = state_.command;
  u.ee = state_.ee_pose;
  u.gripper = state_.gripper;
  u.hand = state_.hand;
  u.estopped = state_.estopped;
  u.safe_hold = state_.safe_hold;
  u.mode = mode();
  u.switch_pending = switch_pending();
  return u;
}

bool ArmSet::has_arm(int arm) const {
  return arm >= 0 && arm < static_cast<int>(arms.size());
}

session::GateResult ArmSet::request_mode(int arm, TeleopMode mode) {
  return arms.at(static_cast<std::size_t>(arm)).request_mode(mode);
}

TeleopMode ArmSet::mode(int arm) const {
  return arms.at(static_cast<std::size_t>(arm)).mode();
}

bool ArmSet::switch_pending(int arm) const {
  return arms.at(static_cast<std::size_t>(arm)).switch_pending();
}

}  // namespace glteleop::server
