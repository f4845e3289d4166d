#pragma once

#include "glteleop/commands.hpp"
#include "glteleop/kinematics.hpp"

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace glteleop::protocol {

inline constexpr int kSchemaVersion = 1;
inline constexpr std::uint32_t kMaxFrameBytes = 1u << 20;  // 1 MiB body
inline constexpr std::size_t kHeaderBytes = 4;

struct JointCommand {
  JointVector joints;
};
struct CartesianCommand {
  Pose pose;
};
struct GripperCommand {
  double value = 0.0;
};
struct HandCommand {
  std::array<double, HandTarget::kChannels> values{};
};

enum class SwitchStatus { Request, Pending, Granted };

/// Pedal event. Clients send Request; the server answers Pending or Granted.
struct ModeSwitch {
  TeleopMode mode = TeleopMode::Global;
  SwitchStatus status = SwitchStatus::Request;
};

struct StateUpdate {
  std::uint64_t tick = 0;
  double time = 0.0;
  JointVector joints;
  JointVector command;
  Pose ee;
  double gripper = 0.0;
  std::array<double, HandTarget::kChannels> hand{};
  bool estopped = false;
  bool safe_hold = false;
  TeleopMode mode = TeleopMode::Global;
  bool switch_pending = false;
};

struct Heartbeat {};
struct Estop {};
struct Reset {};

struct Error {
  std::string code;
  std::string text;
};

/// Raw master-device readings for a server-hosted controller. Every field
/// is optional; absent fields keep their previous value.
struct DeviceInput {
  std::optional<JointVector> replica;
  std::optional<Pose> haptic;
  std::optional<UnitQuaternion> imu_forearm;
  std::optional<UnitQuaternion> imu_hand;
  std::optional<std::array<double, 6>> exo;
  std::optional<double> gripper;
  std::optional<double> alpha_l;
  std::optional<double> alpha_r;
};

using Payload = std::variant<JointCommand, CartesianCommand, GripperCommand, HandCommand, ModeSwitch,
                             StateUpdate, Heartbeat, Estop, Reset, Error, DeviceInput>;

struct TeleopMessage {
  int schema_version = kSchemaVersion;
  std::string session;
  int arm = 0;
  std::uint64_t seq = 0;
  std::int64_t timestamp_us = 0;
  Payload payload;
};

/// Wire name of the payload ("JointCommand", "Heartbeat", ...).
std::string kind_name(const Payload& payload);

/// Exact equality, comparing doubles bit-for-bit.
bool operator==(const TeleopMessage& a, const TeleopMessage& b);

/// UTF-8 JSON body of a message (no frame header).
std::string encode_body(const TeleopMessage& msg);
/// Parses a body. Throws ProtocolError (malformed, unknown kind) or
/// NegotiationError (schema version mismatch).
TeleopMessage decode_body(std::string_view body);

/// Frame = 4-byte big-endian body length + body. Throws ProtocolError if the
/// message carries non-finite numbers, FramingError if the body is too large.
std::vector<std::uint8_t> encode(const TeleopMessage& msg);
/// Decodes exactly one frame. Throws FramingError when the buffer is
/// truncated, oversized or has trailing bytes.
TeleopMessage decode(std::span<const std::uint8_t> frame);

/// Incremental frame splitter for stream transports.
class FrameReader {
 public:
  void feed(std::span<const std::uint8_t> bytes);
  /// Next complete body, if one has arrived. Throws FramingError when the
  /// declared length exceeds kMaxFrameBytes.
  std::optional<std::string> next();
  std::size_t buffered() const noexcept { return buffer_.size(); }

 private:
  std::vector<std::uint8_t> buffer_;
};

/// Conversions between slave commands and their wire payloads.
Payload to_payload(const SlaveCommand& cmd);
/// Throws ProtocolError when the payload is not a slave command.
SlaveCommand to_command(const Payload& payload);
bool is_command(const Payload& payload);

}  // namespace glteleop::protocol
