#include "glteleop/gl_controller.hpp"

#include "glteleop/errors.hpp"
#include "glteleop/json_io.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

namespace glteleop {

using nlohmann::json;

namespace {

// Replica and held command must coincide to this level before Global
// resumes; anything larger would show up as a command jump.
constexpr double kHandoverTolerance = 1e-12;

}  // namespace

ScalingFactors::ScalingFactors(double alpha_l, double alpha_r) : alpha_l_(alpha_l), alpha_r_(alpha_r) {
  if (!(alpha_l > 0.0 && alpha_l <= 1.0)) {
    throw ConfigError("linear scaling factor must lie in (0, 1]");
  }
  if (!(alpha_r > 0.0 && alpha_r <= 1.0)) {
    throw ConfigError("rotational scaling factor must lie in (0, 1]");
  }
}

ClutchAnchor engage_local(const Pose& haptic, const Pose& slave_ee) {
  return {haptic.position, haptic.orientation, slave_ee};
}

CartesianTarget local_target(const ClutchAnchor& anchor, const Pose& haptic,
                             const ScalingFactors& scale, const UnitQuaternion& alignment) {
  if (!haptic.is_finite()) {
    throw InputError("haptic pose is not finite");
  }
  const bool aligned = alignment == UnitQuaternion::identity();
  const Eigen::Vector3d dp = haptic.position - anchor.p0;
  CartesianTarget out;
  out.pose.position =
      anchor.ee_anchor.position + scale.linear() * (aligned ? dp : alignment.rotate(dp));

  AxisAngle d = scaled_displacement(anchor.q0, haptic.orientation, scale.rotational());
  if (d.angle == 0.0) {
    out.pose.orientation = anchor.ee_anchor.orientation;
  } else {
    if (!aligned) d.axis = alignment.rotate(d.axis);
    out.pose.orientation =
        compose(anchor.ee_anchor.orientation, UnitQuaternion::from_axis_angle(d));
  }
  return out;
}

JointVector mirror_update(const JointVector& replica, const JointVector& slave, double vel_limit,
                          double dt) {
  if (replica.size() != slave.size()) {
    throw InputError("mirror_update: replica and slave lengths differ");
  }
  const double max_step = vel_limit * dt;
  JointVector out = replica;
  for (Eigen::Index i = 0; i < replica.size(); ++i) {
    const double diff = slave[i] - replica[i];
    if (std::abs(diff) <= max_step) {
      out[i] = slave[i];
    } else {
      out[i] = replica[i] + (diff > 0.0 ? max_step : -max_step);
    }
  }
  return out;
}

ControllerConfig ControllerConfig::from_json_text(const std::string& text) {
  try {
    const json doc = json::parse(text);
    if (doc.value("config_version", 1) != 1) {
      throw ConfigError("controller config: unsupported config_version");
    }
    ControllerConfig cfg;
    cfg.scale = ScalingFactors(doc.value("alpha_l", 1.0), doc.value("alpha_r", 1.0));
    if (doc.contains("alignment")) {
      cfg.alignment = jsonio::read_quat(doc.at("alignment"), "alignment");
    }
    cfg.euler = parse_euler_convention(doc.value("euler_convention", "XYZ"));
    cfg.mirror_velocity_limit = doc.value("mirror_velocity_limit", cfg.mirror_velocity_limit);
    cfg.mirror_tolerance = doc.value("mirror_tolerance", cfg.mirror_tolerance);
    cfg.control_rate_hz = doc.value("control_rate_hz", cfg.control_rate_hz);
    if (!(cfg.mirror_velocity_limit > 0.0) || !(cfg.mirror_tolerance > 0.0) ||
        !(cfg.control_rate_hz > 0.0)) {
      throw ConfigError("controller config: rates and tolerances must be positive");
    }
    return cfg;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("controller config: ") + e.what());
  } catch (const InputError& e) {
    throw ConfigError(std::string("controller config: ") + e.what());
  }
}

ControllerConfig ControllerConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open controller config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json_text(ss.str());
}

std::string ControllerConfig::to_json_text() const {
  json j;
  j["config_version"] = 1;
  j["alpha_l"] = scale.linear();
  j["alpha_r"] = scale.rotational();
  j["alignment"] = jsonio::quat(alignment);
  j["euler_convention"] = std::string(to_string(euler));
  j["mirror_velocity_limit"] = mirror_velocity_limit;
  j["mirror_tolerance"] = mirror_tolerance;
  j["control_rate_hz"] = control_rate_hz;
  return j.dump();
}

TemporalController::TemporalController(KinematicChain chain, ControllerConfig config)
    : chain_(std::move(chain)), config_(config) {}

ModeRequest TemporalController::request_mode(TeleopMode requested) {
  if (requested == TeleopMode::Local) {
    if (mode_ == TeleopMode::Local) {
      pending_global_ = false;
      return ModeRequest::Unchanged;
    }
    pending_local_ = true;
    return ModeRequest::Granted;
  }
  if (mode_ == TeleopMode::Global) {
    pending_local_ = false;
    return ModeRequest::Unchanged;
  }
  pending_global_ = true;
  return ModeRequest::Pending;
}

bool TemporalController::transition_ready(const JointVector& replica, const SlaveState& slave) const {
  if (replica.size() != slave.joints.size()) return false;
  const double mirror_gap = (replica - slave.joints).cwiseAbs().maxCoeff();
  const double command_gap = (replica - slave.command).cwiseAbs().maxCoeff();
  return mirror_gap < config_.mirror_tolerance && command_gap <= kHandoverTolerance;
}

void TemporalController::engage(const Pose& haptic, const SlaveState& slave) {
  // Anchor on the pose of the joint command rather than the measured pose so
  // the first local target resolves to exactly the command already in force.
  anchor_ = engage_local(haptic, forward_kinematics(chain_, slave.command));
  held_target_.reset();
}

TemporalOutput TemporalController::step(const TemporalInputs& in, const SlaveState& slave, double dt) {
  require_dof(chain_, in.replica, "temporal_step replica");
  if (!in.replica.allFinite()) throw InputError("temporal_step: replica joints are not finite");
  if (!in.haptic.is_finite()) throw InputError("temporal_step: haptic pose is not finite");
  require_dof(chain_, slave.joints, "temporal_step slave");

  if (in.pedal) request_mode(*in.pedal);

  TemporalOutput out;
  if (mode_ == TeleopMode::Global && pending_local_) {
    engage(in.haptic, slave);
    mode_ = TeleopMode::Local;
    pending_local_ = false;
    out.switched = true;
  }
  if (mode_ == TeleopMode::Local && pending_global_ && transition_ready(in.replica, slave)) {
    mode_ = TeleopMode::Global;
    pending_global_ = false;
    anchor_.reset();
    held_target_.reset();
    out.switched = true;
  }

  if (mode_ == TeleopMode::Global) {
    out.commands.emplace_back(JointTarget{chain_.clamp(in.replica)});
  } else {
    if (!pending_global_ || !held_target_) {
      held_target_ = local_target(*anchor_, in.haptic, config_.scale, config_.alignment);
    }
    out.commands.emplace_back(*held_target_);
    out.replica_drive = mirror_update(in.replica, slave.joints, config_.mirror_velocity_limit, dt);
  }
  if (in.gripper) out.commands.emplace_back(GripperTarget{*in.gripper});

  out.mode = mode_;
  out.switch_pending = pending_global_;
  return out;
}

RotationMatrix wrist_rotation(const ImuCalibration& calib, const ImuPair& now) {
  return now.forearm.inverse() * calib.forearm_home * calib.hand_home.inverse() * now.hand;
}

SpatialOutput spatial_step(const KinematicChain& chain, const JointVector& replica,
                           const ImuCalibration& calib, const ImuPair& imus,
                           const std::optional<HandTarget>& hand, EulerConvention convention) {
  const int n = chain.dof();
  if (n < 4) {
    throw InputError("spatial_step needs a chain with at least 4 joints");
  }
  if (replica.size() != n - 3) {
    throw InputError("spatial_step: replica must have " + std::to_string(n - 3) + " values, got " +
                     std::to_string(replica.size()));
  }
  if (!replica.allFinite()) throw InputError("spatial_step: replica joints are not finite");

  const EulerTriple wrist = extract_euler(wrist_rotation(calib, imus), convention);
  JointVector requested(n);
  requested.head(n - 3) = replica;
  requested[n - 3] = wrist.a;
  requested[n - 2] = wrist.b;
  requested[n - 1] = wrist.c;

  SpatialOutput out;
  out.joints.joints = chain.clamp(requested);
  for (int i = 0; i < n; ++i) {
    if (out.joints.joints[i] != requested[i]) {
      out.clamps.push_back({i, requested[i], out.joints.joints[i]});
    }
  }
  out.hand = hand;
  return out;
}

}  // namespace glteleop
