#include "glteleop/commands.hpp"

#include "glteleop/errors.hpp"
#include "overloaded.hpp"

#include <cmath>
#include <string>

namespace glteleop {

using detail::overloaded;

std::string_view command_kind(const SlaveCommand& cmd) {
  return std::visit(overloaded{
                        [](const JointTarget&) { return std::string_view("joint"); },
                        [](const CartesianTarget&) { return std::string_view("cartesian"); },
                        [](const GripperTarget&) { return std::string_view("gripper"); },
                        [](const HandTarget&) { return std::string_view("hand"); },
                    },
                    cmd);
}

bool is_finite(const SlaveCommand& cmd) {
  return std::visit(overloaded{
                        [](const JointTarget& t) { return t.joints.allFinite(); },
                        [](const CartesianTarget& t) { return t.pose.is_finite(); },
                        [](const GripperTarget& t) { return std::isfinite(t.value); },
                        [](const HandTarget& t) {
                          for (double v : t.values) {
                            if (!std::isfinite(v)) return false;
                          }
                          return true;
                        },
                    },
                    cmd);
}

std::string_view to_string(TeleopMode mode) {
  return mode == TeleopMode::Global ? "global" : "local";
}

TeleopMode parse_mode(std::string_view s) {
  if (s == "global") return TeleopMode::Global;
  if (s == "local") return TeleopMode::Local;
  throw InputError("unknown teleoperation mode '" + std::string(s) + "'");
}

}  // namespace glteleop
