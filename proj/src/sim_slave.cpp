#include "glteleop/sim_slave.hpp"

#include "glteleop/errors.hpp"
#include "glteleop/json_io.hpp"
#include "overloaded.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

namespace glteleop {

using detail::overloaded;
using nlohmann::json;

namespace {

EndEffectorKind parse_end_effector(const std::string& s) {
  if (s == "none") return EndEffectorKind::None;
  if (s == "gripper") return EndEffectorKind::Gripper;
  if (s == "hand") return EndEffectorKind::Hand;
  throw ConfigError("unknown end_effector '" + s + "'");
}

// Moves `value` toward `target` by at most `max_step`, landing exactly on
// the target when it is within reach.
double slew(double value, double target, double max_step) {
  const double diff = target - value;
  if (std::abs(diff) <= max_step) return target;
  return diff > 0.0 ? value + max_step : value - max_step;
}

}  // namespace

SlaveModel SlaveModel::from_json_text(const std::string& text) {
  SlaveModel model{KinematicChain::from_json_text(text), {}, {}, {}, 2.0, 2.0, {}, {}};
  try {
    const json doc = json::parse(text);
    const int dof = model.chain.dof();
    if (doc.contains("home")) {
      model.home = jsonio::read_vec(doc.at("home"), "home");
      if (model.home.size() != dof) throw ConfigError("home must have one value per joint");
      if (!model.chain.within_limits(model.home)) throw ConfigError("home violates joint limits");
    } else {
      model.home = JointVector::Zero(dof);
    }
    model.end_effector = parse_end_effector(doc.value("end_effector", "none"));
    model.gripper_rate = doc.value("gripper_rate", 2.0);
    model.hand_rate = doc.value("hand_rate", 2.0);
    model.wrist_convention = parse_euler_convention(doc.value("wrist_convention", "XYZ"));
    if (doc.contains("safety")) {
      const json& s = doc.at("safety");
      model.safety.tracking_error_limit = s.value("tracking_error_limit", 0.5);
      if (s.contains("workspace")) {
        model.safety.workspace.min = jsonio::read_vec3(s.at("workspace").at("min"), "workspace.min");
        model.safety.workspace.max = jsonio::read_vec3(s.at("workspace").at("max"), "workspace.max");
      }
    }
    if (doc.contains("ik")) {
      const json& k = doc.at("ik");
      model.ik.damping = k.value("damping", model.ik.damping);
      model.ik.max_iters = k.value("max_iters", model.ik.max_iters);
      model.ik.pos_tol = k.value("pos_tol", model.ik.pos_tol);
      model.ik.ang_tol = k.value("ang_tol", model.ik.ang_tol);
      model.ik.step_cap = k.value("step_cap", model.ik.step_cap);
      model.ik.damping_fade_error = k.value("damping_fade_error", model.ik.damping_fade_error);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("robot model: ") + e.what());
  } catch (const InputError& e) {
    throw ConfigError(std::string("robot model: ") + e.what());
  }
  if (!(model.safety.tracking_error_limit > 0.0) || !(model.gripper_rate > 0.0) ||
      !(model.hand_rate > 0.0)) {
    throw ConfigError("robot model: safety limits and slew rates must be positive");
  }
  if (!(model.safety.workspace.min.array() < model.safety.workspace.max.array()).all()) {
    throw ConfigError("robot model: workspace min must be below max");
  }
  return model;
}

SlaveModel SlaveModel::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open robot model '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json_text(ss.str());
}

SlaveState initial_state(const SlaveModel& model) {
  SlaveState s;
  s.joints = model.home;
  s.velocities = JointVector::Zero(model.chain.dof());
  s.command = model.home;
  s.ee_pose = forward_kinematics(model.chain, model.home);
  return s;
}

StepResult step(const SlaveModel& model, const SlaveState& state,
                std::span<const SlaveCommand> commands, double dt) {
  if (!(dt > 0.0) || !std::isfinite(dt)) {
    throw InputError("step: dt must be positive");
  }
  const KinematicChain& chain = model.chain;
  const int dof = chain.dof();

  StepResult out{state, {}};
  SlaveState& next = out.state;
  next.tick = state.tick + 1;
  next.time = static_cast<double>(next.tick) * dt;
  next.ik_failed = false;

  if (state.estopped) {
    next.velocities = JointVector::Zero(dof);
    return out;
  }

  for (const SlaveCommand& cmd : commands) {
    if (!is_finite(cmd)) {
      throw ProtocolError("command has non-finite values", std::string(command_kind(cmd)));
    }
    if (state.safe_hold) {
      out.diagnostics.push_back("safe-hold: ignoring " + std::string(command_kind(cmd)) +
                                " command");
      continue;
    }
    std::visit(
        overloaded{
            [&](const JointTarget& t) {
              if (t.joints.size() != dof) {
                throw ProtocolError("joint command has " + std::to_string(t.joints.size()) +
                                        " values for a " + std::to_string(dof) + "-dof arm",
                                    "joint");
              }
              next.command = chain.clamp(t.joints);
            },
            [&](const CartesianTarget& t) {
              const IkSolution ik = solve_ik(chain, t.pose, next.command, model.ik);
              if (ik.converged) {
                next.command = ik.joints;
              } else {
                next.ik_failed = true;
                next.command = state.joints;
                std::ostringstream msg;
                msg << "ik did not converge (residual " << ik.residual_position << " m, "
                    << ik.residual_angle << " rad); holding position";
                out.diagnostics.push_back(msg.str());
              }
            },
            [&](const GripperTarget& t) {
              if (model.end_effector != EndEffectorKind::Gripper) {
                throw ProtocolError("arm has no gripper", "gripper");
              }
              next.gripper_target = std::clamp(t.value, 0.0, 1.0);
            },
            [&](const HandTarget& t) {
              if (model.end_effector != EndEffectorKind::Hand) {
                throw ProtocolError("arm has no dexterous hand", "hand");
              }
              for (int i = 0; i < HandTarget::kChannels; ++i) {
                next.hand_target[i] = std::clamp(t.values[i], 0.0, 1.0);
              }
            },
        },
        cmd);
  }

  const JointVector limits = chain.velocity_limits();
  const double worst = (next.command - state.joints).cwiseAbs().maxCoeff();
  if (worst > model.safety.tracking_error_limit) {
    next.estopped = true;
    next.velocities = JointVector::Zero(dof);
    std::ostringstream msg;
    msg << "e-stop: tracking error " << worst << " rad exceeds "
        << model.safety.tracking_error_limit;
    out.diagnostics.push_back(msg.str());
    return out;
  }

  JointVector moved(dof);
  for (int i = 0; i < dof; ++i) {
    moved[i] = slew(state.joints[i], next.command[i], limits[i] * dt);
  }
  const Pose pose = forward_kinematics(chain, moved);
  if (!model.safety.workspace.contains(pose.position)) {
    next.estopped = true;
    next.velocities = JointVector::Zero(dof);
    out.diagnostics.push_back("e-stop: end effector would leave the workspace box");
    return out;
  }
  next.velocities = (moved - state.joints) / dt;
  next.joints = moved;
  next.ee_pose = pose;

  next.gripper = slew(state.gripper, next.gripper_target, model.gripper_rate * dt);
  for (int i = 0; i < HandTarget::kChannels; ++i) {
    next.hand[i] = slew(state.hand[i], next.hand_target[i], model.hand_rate * dt);
  }
  return out;
}

StepResult step(const SlaveModel& model, const SlaveState& state, const SlaveCommand& command,
                double dt) {
  return step(model, state, std::span<const SlaveCommand>(&command, 1), dt);
}

SlaveState reset(const SlaveModel& model, const SlaveState&) {
  return initial_state(model);
}

SlaveState engage_safe_hold(const SlaveState& state) {
  SlaveState s = state;
  s.safe_hold = true;
  s.command = state.joints;
  return s;
}

SlaveState release_safe_hold(const SlaveState& state) {
  SlaveState s = state;
  s.safe_hold = false;
  return s;
}

std::string state_log_line(const SlaveState& s) {
  json j;
  j["tick"] = s.tick;
  j["t"] = s.time;
  j["joints"] = jsonio::vec(s.joints);
  j["cmd"] = jsonio::vec(s.command);
  j["vel"] = jsonio::vec(s.velocities);
  j["ee"] = jsonio::pose(s.ee_pose);
  j["gripper"] = s.gripper;
  j["hand"] = s.hand;
  j["estop"] = s.estopped;
  j["hold"] = s.safe_hold;
  j["ik_failed"] = s.ik_failed;
  return j.dump();
}

int StateBroadcaster::subscribe(Callback cb) {
  std::lock_guard lock(mutex_);
  subscribers_.emplace_back(next_token_, std::move(cb));
  return next_token_++;
}

void StateBroadcaster::unsubscribe(int token) {
  std::lock_guard lock(mutex_);
  std::erase_if(subscribers_, [token](const auto& s) { return s.first == token; });
}

void StateBroadcaster::publish(const SlaveState& state) {
  auto snapshot = std::make_shared<const SlaveState>(state);
  std::vector<Callback> targets;
  {
    std::lock_guard lock(mutex_);
    latest_ = snapshot;
    for (const auto& [token, cb] : subscribers_) targets.push_back(cb);
  }
  for (const auto& cb : targets) cb(snapshot);
}

StateBroadcaster::Snapshot StateBroadcaster::latest() const {
  std::lock_guard lock(mutex_);
  return latest_;
}

}  // namespace glteleop
