#pragma once

// JSON helpers shared by the model, protocol, scenario and log formats.
// Doubles are written in shortest round-trip form, so a parse of a dump
// reproduces every value bit-exactly.

#include "glteleop/kinematics.hpp"

#include <json.hpp>

#include <string>

namespace glteleop::jsonio {

using nlohmann::json;

json vec(const Eigen::VectorXd& v);
json vec3(const Eigen::Vector3d& v);
/// [w, x, y, z]
json quat(const UnitQuaternion& q);
/// {"p": [x, y, z], "q": [w, x, y, z]}
json pose(const Pose& p);

// Readers throw json::exception subclasses or InputError; callers translate
// into their own error domain.
Eigen::VectorXd read_vec(const json& j, const std::string& field);
Eigen::Vector3d read_vec3(const json& j, const std::string& field);
UnitQuaternion read_quat(const json& j, const std::string& field);
Pose read_pose(const json& j, const std::string& field);
double read_finite(const json& j, const std::string& field);

}  // namespace glteleop::jsonio
