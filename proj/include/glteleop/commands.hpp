#pragma once

#include "glteleop/kinematics.hpp"

#include <array>
#include <string_view>
#include <variant>

namespace glteleop {

struct JointTarget {
  JointVector joints;
};

struct CartesianTarget {
  Pose pose;
};

/// Gripper opening, 0 = open, 1 = closed.
struct GripperTarget {
  double value = 0.0;
};

/// Dexterous hand channels, each in [0, 1]: thumb bend, thumb rotation,
/// index, middle, ring, pinky.
struct HandTarget {
  static constexpr int kChannels = 6;
  enum Channel { kThumbBend = 0, kThumbRotation, kIndex, kMiddle, kRing, kPinky };
  std::array<double, kChannels> values{};

  bool operator==(const HandTarget&) const = default;
};

using SlaveCommand = std::variant<JointTarget, CartesianTarget, GripperTarget, HandTarget>;

std::string_view command_kind(const SlaveCommand& cmd);

/// True when every numeric field is finite.
bool is_finite(const SlaveCommand& cmd);

enum class TeleopMode { Global, Local };

std::string_view to_string(TeleopMode mode);
/// Parses "global" / "local" (case-sensitive). Throws InputError.
TeleopMode parse_mode(std::string_view s);

}  // namespace glteleop
