#include "glteleop/json_io.hpp"

#include "glteleop/errors.hpp"

#include <cmath>

namespace glteleop::jsonio {

json vec(const Eigen::VectorXd& v) {
  json out = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v[i]);
  return out;
}

json vec3(const Eigen::Vector3d& v) {
  return json::array({v.x(), v.y(), v.z()});
}

json quat(const UnitQuaternion& q) {
  return json::array({q.w(), q.x(), q.y(), q.z()});
}

json pose(const Pose& p) {
  return json{{"p", vec3(p.position)}, {"q", quat(p.orientation)}};
}

double read_finite(const json& j, const std::string& field) {
  if (!j.is_number()) {
    throw InputError("field '" + field + "' must be a number");
  }
  const double v = j.get<double>();
  if (!std::isfinite(v)) {
    throw InputError("field '" + field + "' must be finite");
  }
  return v;
}

Eigen::VectorXd read_vec(const json& j, const std::string& field) {
  if (!j.is_array()) {
    throw InputError("field '" + field + "' must be an array");
  }
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    v[static_cast<Eigen::Index>(i)] = read_finite(j[i], field);
  }
  return v;
}

Eigen::Vector3d read_vec3(const json& j, const std::string& field) {
  const Eigen::VectorXd v = read_vec(j, field);
  if (v.size() != 3) {
    throw InputError("field '" + field + "' must have 3 elements");
  }
  return v;
}

UnitQuaternion read_quat(const json& j, const std::string& field) {
  const Eigen::VectorXd v = read_vec(j, field);
  if (v.size() != 4) {
    throw InputError("field '" + field + "' must be [w, x, y, z]");
  }
  return {v[0], v[1], v[2], v[3]};
}

Pose read_pose(const json& j, const std::string& field) {
  if (!j.is_object() || !j.contains("p") || !j.contains("q")) {
    throw InputError("field '" + field + "' must be {\"p\": [...], \"q\": [...]}");
  }
  return {read_vec3(j.at("p"), field + ".p"), read_quat(j.at("q"), field + ".q")};
}

}  // namespace glteleop::jsonio
