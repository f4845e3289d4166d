#include "glteleop/kinematics.hpp"

#include "glteleop/errors.hpp"

#include <Eigen/Dense>
#include <json.hpp>

#include <cmath>
#include <fstream>
#include <sstream>

namespace glteleop {

namespace {

using nlohmann::json;

struct Frame {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d position = Eigen::Vector3d::Zero();

  void append(const Pose& p) {
    position += rotation * p.position;
    rotation = rotation * p.orientation.to_matrix().matrix();
  }
};

Eigen::Matrix3d axis_rotation(const Eigen::Vector3d& axis, double angle) {
  return Eigen::AngleAxisd(angle, axis).toRotationMatrix();
}

Eigen::Vector3d read_vec3(const json& j, const char* field) {
  if (!j.is_array() || j.size() != 3) {
    throw ConfigError(std::string("field '") + field + "' must be a 3-element array");
  }
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

// Origin transforms use fixed-axis roll-pitch-yaw: R = Rz(yaw) Ry(pitch) Rx(roll).
Pose read_pose(const json& j, const char* field) {
  Pose p;
  if (j.is_null()) return p;
  if (!j.is_object()) {
    throw ConfigError(std::string("field '") + field + "' must be an object");
  }
  if (j.contains("xyz")) p.position = read_vec3(j.at("xyz"), "xyz");
  if (j.contains("rpy") && j.contains("quat")) {
    throw ConfigError(std::string("field '") + field + "' gives both rpy and quat");
  }
  if (j.contains("rpy")) {
    const Eigen::Vector3d rpy = read_vec3(j.at("rpy"), "rpy");
    const RotationMatrix r = RotationMatrix::rot_z(rpy.z()) * RotationMatrix::rot_y(rpy.y()) *
                             RotationMatrix::rot_x(rpy.x());
    p.orientation = UnitQuaternion::from_matrix(r);
  } else if (j.contains("quat")) {
    const json& q = j.at("quat");
    if (!q.is_array() || q.size() != 4) throw ConfigError("field 'quat' must be [w, x, y, z]");
    p.orientation = UnitQuaternion(q[0].get<double>(), q[1].get<double>(), q[2].get<double>(),
                                   q[3].get<double>());
  }
  return p;
}

double score(double pos, double ang, const IkConfig& cfg) {
  return std::max(pos / cfg.pos_tol, ang / cfg.ang_tol);
}

}  // namespace

Pose Pose::operator*(const Pose& rhs) const {
  return {position + orientation.rotate(rhs.position), compose(orientation, rhs.orientation)};
}

Pose Pose::inverse() const {
  const UnitQuaternion inv = orientation.inverse();
  return {-inv.rotate(position), inv};
}

bool Pose::is_finite() const {
  return position.allFinite() && orientation.coeffs_wxyz().allFinite();
}

KinematicChain::KinematicChain(std::string name, std::vector<Link> links, Pose ee_offset)
    : name_(std::move(name)), links_(std::move(links)), ee_offset_(ee_offset) {
  if (links_.empty()) {
    throw ConfigError("kinematic chain needs at least one joint");
  }
  for (auto& link : links_) {
    const double n = link.axis.norm();
    if (!link.axis.allFinite() || n < 1e-9) {
      throw ConfigError("joint '" + link.name + "' has a degenerate axis");
    }
    link.axis /= n;
    if (!(link.min < link.max)) {
      throw ConfigError("joint '" + link.name + "' needs min < max");
    }
    if (!(link.velocity_limit > 0.0)) {
      throw ConfigError("joint '" + link.name + "' needs a positive velocity limit");
    }
  }
}

JointVector KinematicChain::lower_limits() const {
  JointVector v(dof());
  for (int i = 0; i < dof(); ++i) v[i] = links_[i].min;
  return v;
}

JointVector KinematicChain::upper_limits() const {
  JointVector v(dof());
  for (int i = 0; i < dof(); ++i) v[i] = links_[i].max;
  return v;
}

JointVector KinematicChain::velocity_limits() const {
  JointVector v(dof());
  for (int i = 0; i < dof(); ++i) v[i] = links_[i].velocity_limit;
  return v;
}

bool KinematicChain::within_limits(const JointVector& q, double slack) const {
  if (q.size() != dof()) return false;
  for (int i = 0; i < dof(); ++i) {
    if (!(q[i] >= links_[i].min - slack && q[i] <= links_[i].max + slack)) return false;
  }
  return true;
}

JointVector KinematicChain::clamp(const JointVector& q) const {
  JointVector out = q;
  for (int i = 0; i < dof(); ++i) out[i] = std::clamp(q[i], links_[i].min, links_[i].max);
  return out;
}

KinematicChain KinematicChain::from_json_text(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("robot model is not valid JSON: ") + e.what());
  }
  try {
    if (!doc.contains("model_version") || doc.at("model_version").get<int>() != 1) {
      throw ConfigError("robot model must declare model_version 1");
    }
    std::vector<Link> links;
    for (const auto& j : doc.at("joints")) {
      Link link;
      link.name = j.value("name", "joint" + std::to_string(links.size() + 1));
      link.origin = read_pose(j.value("origin", json()), "origin");
      link.axis = read_vec3(j.at("axis"), "axis");
      const auto& lim = j.at("limits");
      if (!lim.is_array() || lim.size() != 2) throw ConfigError("field 'limits' must be [min, max]");
      link.min = lim[0].get<double>();
      link.max = lim[1].get<double>();
      link.velocity_limit = j.at("velocity_limit").get<double>();
      links.push_back(std::move(link));
    }
    return KinematicChain(doc.value("name", "robot"), std::move(links),
                          read_pose(doc.value("ee_offset", json()), "ee_offset"));
  } catch (const json::exception& e) {
    throw ConfigError(std::string("robot model: ") + e.what());
  }
}

KinematicChain KinematicChain::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open robot model '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json_text(ss.str());
}

void require_dof(const KinematicChain& chain, const JointVector& q, const char* what) {
  if (q.size() != chain.dof()) {
    throw InputError(std::string(what) + ": expected " + std::to_string(chain.dof()) +
                     " joint values, got " + std::to_string(q.size()));
  }
}

Pose forward_kinematics(const KinematicChain& chain, const JointVector& q) {
  require_dof(chain, q, "forward_kinematics");
  Frame f;
  for (int i = 0; i < chain.dof(); ++i) {
    const Link& link = chain.links()[i];
    f.append(link.origin);
    f.rotation = f.rotation * axis_rotation(link.axis, q[i]);
  }
  f.append(chain.ee_offset());
  return {f.position, UnitQuaternion::from_matrix(RotationMatrix::unchecked(f.rotation))};
}

Eigen::MatrixXd jacobian(const KinematicChain& chain, const JointVector& q) {
  require_dof(chain, q, "jacobian");
  const int n = chain.dof();
  std::vector<Eigen::Vector3d> axes(n);
  std::vector<Eigen::Vector3d> origins(n);
  Frame f;
  for (int i = 0; i < n; ++i) {
    const Link& link = chain.links()[i];
    f.append(link.origin);
    axes[i] = f.rotation * link.axis;
    origins[i] = f.position;
    f.rotation = f.rotation * axis_rotation(link.axis, q[i]);
  }
  f.append(chain.ee_offset());
  Eigen::MatrixXd jac(6, n);
  for (int i = 0; i < n; ++i) {
    jac.block<3, 1>(0, i) = axes[i].cross(f.position - origins[i]);
    jac.block<3, 1>(3, i) = axes[i];
  }
  return jac;
}

PoseError pose_error(const Pose& a, const Pose& b) {
  return {(a.position - b.position).norm(),
          to_axis_angle(compose(a.orientation.inverse(), b.orientation)).angle};
}

IkSolution solve_ik(const KinematicChain& chain, const Pose& target, const JointVector& seed,
                    const IkConfig& cfg) {
  if (!target.is_finite()) {
    throw InputError("solve_ik: target pose is not finite");
  }
  require_dof(chain, seed, "solve_ik seed");
  if (!seed.allFinite()) {
    throw InputError("solve_ik: seed is not finite");
  }

  JointVector q = chain.clamp(seed);
  IkSolution best;
  double best_score = std::numeric_limits<double>::infinity();

  for (int iter = 0;; ++iter) {
    const Pose current = forward_kinematics(chain, q);
    Eigen::Matrix<double, 6, 1> err;
    err.head<3>() = target.position - current.position;
    // World-frame orientation error: rotation taking current onto target.
    err.tail<3>() = rotation_vector(compose(target.orientation, current.orientation.inverse()));
    const double pos = err.head<3>().norm();
    const double ang = err.tail<3>().norm();

    const double s = score(pos, ang, cfg);
    if (s < best_score) {
      best_score = s;
      best.joints = q;
      best.residual_position = pos;
      best.residual_angle = ang;
      best.iterations = iter;
    }
    if (pos < cfg.pos_tol && ang < cfg.ang_tol) {
      best.converged = true;
      best.iterations = iter;
      return best;
    }
    if (iter >= cfg.max_iters) break;

    const Eigen::MatrixXd jac = jacobian(chain, q);
    // Full damping far from the target, fading linearly below
    // damping_fade_error so the last iterations are close to Gauss-Newton.
    const double lambda2 = cfg.damping * cfg.damping *
                           std::min(1.0, err.norm() / cfg.damping_fade_error);
    const Eigen::Matrix<double, 6, 6> a =
        jac * jac.transpose() + lambda2 * Eigen::Matrix<double, 6, 6>::Identity();
    JointVector dq = jac.transpose() * a.ldlt().solve(err);
    const double norm = dq.norm();
    if (norm > cfg.step_cap) dq *= cfg.step_cap / norm;
    q = chain.clamp(q + dq);
  }
  best.iterations = cfg.max_iters;
  return best;
}

}  // namespace glteleop
