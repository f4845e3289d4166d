#pragma once

#include "glteleop/protocol.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace glteleop::session {

using EndpointId = std::uint32_t;

struct InboundEvent {
  enum class Kind { Connected, Disconnected, Frame };
  Kind kind = Kind::Frame;
  EndpointId endpoint = 0;
  std::optional<protocol::TeleopMessage> message;

  static InboundEvent connected(EndpointId ep) { return {Kind::Connected, ep, std::nullopt}; }
  static InboundEvent disconnected(EndpointId ep) { return {Kind::Disconnected, ep, std::nullopt}; }
  static InboundEvent frame(EndpointId ep, protocol::TeleopMessage msg) {
    return {Kind::Frame, ep, std::move(msg)};
  }
};

struct Outbound {
  /// Empty for a broadcast to every connected endpoint.
  std::optional<EndpointId> to;
  protocol::TeleopMessage message;
};

/// A message the session accepted for an arm: slave commands, device
/// inputs, Estop and Reset.
struct RoutedCommand {
  int arm = 0;
  EndpointId from = 0;
  protocol::Payload payload;
};

enum class GateResult { Granted, Pending, Unchanged };

/// The session's view of the per-arm controllers. Mode switches are decided
/// by the controller; the session only relays and reports them.
class ArmGate {
 public:
  virtual ~ArmGate() = default;
  virtual bool has_arm(int arm) const = 0;
  virtual GateResult request_mode(int arm, TeleopMode mode) = 0;
  virtual TeleopMode mode(int arm) const = 0;
  virtual bool switch_pending(int arm) const = 0;
};

struct EndpointState {
  std::int64_t last_heard_us = 0;
  std::optional<std::uint64_t> last_seq;
};

struct SessionState {
  std::string session_id = "default";
  std::int64_t heartbeat_timeout_us = 300'000;
  std::map<EndpointId, EndpointState> endpoints;
  /// Command authority per arm; at most one endpoint each.
  std::map<int, EndpointId> authority;
  /// Arms with a Local->Global request waiting on the controller.
  std::map<int, TeleopMode> pending;
  bool safe_hold = false;
  std::uint64_t next_seq = 1;
};

struct SessionStepResult {
  SessionState state;
  std::vector<Outbound> outbound;
  std::vector<RoutedCommand> commands;
  std::vector<std::string> diagnostics;
  /// Safe-hold was entered during this step.
  bool safe_hold_engaged = false;
};

/// Processes one batch of inbound events at time `now_us`.
///
///  - Sequence numbers must increase per endpoint; stale frames are dropped
///    with a diagnostic.
///  - The first endpoint to command an arm holds its authority; commands
///    from any other endpoint are answered with Error "not_authority".
///  - Any endpoint silent for heartbeat_timeout_us is dropped and puts the
///    session into safe-hold, as does a disconnect of an authority. Safe-hold
///    is broadcast as Error "safe_hold"; only Reset leaves it.
///  - ModeSwitch requests are forwarded to the gate and answered with
///    Granted or Pending; pending switches are announced once granted.
SessionStepResult session_step(SessionState state, std::span<const InboundEvent> events,
                               std::int64_t now_us, ArmGate& gate);

}  // namespace glteleop::session
