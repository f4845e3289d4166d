#include "glteleop/session.hpp"

namespace glteleop::session {

using namespace protocol;

namespace {

class Stepper {
 public:
  Stepper(SessionState state, std::int64_t now, ArmGate& gate)
      : gate_(gate), now_(now) {
    result_.state = std::move(state);
  }

  void handle(const InboundEvent& ev) {
    switch (ev.kind) {
      case InboundEvent::Kind::Connected:
        s().endpoints[ev.endpoint] = EndpointState{now_, std::nullopt};
        break;
      case InboundEvent::Kind::Disconnected:
        s().endpoints.erase(ev.endpoint);
        if (release_authority(ev.endpoint)) {
          engage_safe_hold("authority endpoint " + std::to_string(ev.endpoint) + " disconnected");
        }
        break;
      case InboundEvent::Kind::Frame:
        if (ev.message) handle_frame(ev.endpoint, *ev.message);
        break;
    }
  }

  void check_timeouts() {
    std::vector<EndpointId> silent;
    for (const auto& [ep, st] : s().endpoints) {
      if (now_ - st.last_heard_us >= s().heartbeat_timeout_us) silent.push_back(ep);
    }
    for (EndpointId ep : silent) {
      s().endpoints.erase(ep);
      release_authority(ep);
      engage_safe_hold("endpoint " + std::to_string(ep) + " missed its heartbeat");
    }
  }

  void poll_pending() {
    for (auto it = s().pending.begin(); it != s().pending.end();) {
      const auto [arm, target] = *it;
      if (gate_.mode(arm) == target) {
        broadcast(arm, ModeSwitch{target, SwitchStatus::Granted});
        it = s().pending.erase(it);
      } else if (!gate_.switch_pending(arm)) {
        result_.diagnostics.push_back("arm " + std::to_string(arm) + ": pending switch withdrawn");
        it = s().pending.erase(it);
      } else {
        ++it;
      }
    }
  }

  SessionStepResult finish() { return std::move(result_); }

 private:
  SessionState& s() { return result_.state; }

  TeleopMessage make(int arm, Payload payload) {
    TeleopMessage m;
    m.session = s().session_id;
    m.arm = arm;
    m.seq = s().next_seq++;
    m.timestamp_us = now_;
    m.payload = std::move(payload);
    return m;
  }

  void reply(EndpointId to, int arm, Payload payload) {
    result_.outbound.push_back({to, make(arm, std::move(payload))});
  }

  void broadcast(int arm, Payload payload) {
    result_.outbound.push_back({std::nullopt, make(arm, std::move(payload))});
  }

  bool release_authority(EndpointId ep) {
    bool released = false;
    for (auto it = s().authority.begin(); it != s().authority.end();) {
      if (it->second == ep) {
        it = s().authority.erase(it);
        released = true;
      } else {
        ++it;
      }
    }
    return released;
  }

  void engage_safe_hold(const std::string& why) {
    result_.diagnostics.push_back("safe-hold: " + why);
    if (!s().safe_hold) {
      s().safe_hold = true;
      result_.safe_hold_engaged = true;
      broadcast(0, Error{"safe_hold", why});
    }
  }

  // Claims the arm for `ep` if free; false if another endpoint holds it.
  bool authorize(EndpointId ep, int arm) {
    auto it = s().authority.find(arm);
    if (it == s().authority.end()) {
      s().authority[arm] = ep;
      return true;
    }
    return it->second == ep;
  }

  void handle_frame(EndpointId ep, const TeleopMessage& msg) {
    auto epit = s().endpoints.find(ep);
    if (epit == s().endpoints.end()) {
      // Frames may arrive before an explicit Connected on some transports.
      epit = s().endpoints.emplace(ep, EndpointState{now_, std::nullopt}).first;
    }
    EndpointState& st = epit->second;
    if (st.last_seq && msg.seq <= *st.last_seq) {
      result_.diagnostics.push_back("endpoint " + std::to_string(ep) + ": dropped out-of-order seq " +
                                    std::to_string(msg.seq) + " (last " + std::to_string(*st.last_seq) +
                                    ")");
      return;
    }
    st.last_seq = msg.seq;
    st.last_heard_us = now_;

    if (msg.session != s().session_id) {
      reply(ep, msg.arm, Error{"session", "unknown session '" + msg.session + "'"});
      return;
    }

    const Payload& p = msg.payload;
    if (std::holds_alternative<Heartbeat>(p)) return;
    if (std::holds_alternative<StateUpdate>(p) || std::holds_alternative<Error>(p)) {
      result_.diagnostics.push_back("endpoint " + std::to_string(ep) + ": ignoring client " + kind_name(p));
      return;
    }
    if (!gate_.has_arm(msg.arm)) {
      reply(ep, msg.arm, Error{"unknown_arm", "no arm " + std::to_string(msg.arm)});
      return;
    }
    if (std::holds_alternative<Estop>(p)) {
      // Any endpoint may stop the arm.
      result_.commands.push_back({msg.arm, ep, p});
      broadcast(msg.arm, Estop{});
      return;
    }
    if (std::holds_alternative<Reset>(p)) {
      const auto holder = s().authority.find(msg.arm);
      if (holder != s().authority.end() && holder->second != ep &&
          s().endpoints.count(holder->second) != 0) {
        reply(ep, msg.arm, Error{"not_authority", "arm " + std::to_string(msg.arm) + " is held by another endpoint"});
        return;
      }
      s().authority[msg.arm] = ep;
      s().safe_hold = false;
      s().pending.erase(msg.arm);
      result_.commands.push_back({msg.arm, ep, p});
      return;
    }
    if (s().safe_hold) {
      reply(ep, msg.arm, Error{"safe_hold", "session is in safe-hold; send Reset to resume"});
      return;
    }
    if (!authorize(ep, msg.arm)) {
      reply(ep, msg.arm, Error{"not_authority", "arm " + std::to_string(msg.arm) + " is held by another endpoint"});
      return;
    }
    if (const auto* sw = std::get_if<ModeSwitch>(&p)) {
      if (sw->status != SwitchStatus::Request) {
        reply(ep, msg.arm, Error{"bad_switch", "clients may only send mode switch requests"});
        return;
      }
      switch (gate_.request_mode(msg.arm, sw->mode)) {
        case GateResult::Granted:
          s().pending.erase(msg.arm);
          broadcast(msg.arm, ModeSwitch{sw->mode, SwitchStatus::Granted});
          break;
        case GateResult::Pending:
          s().pending[msg.arm] = sw->mode;
          reply(ep, msg.arm, ModeSwitch{sw->mode, SwitchStatus::Pending});
          break;
        case GateResult::Unchanged:
          s().pending.erase(msg.arm);
          reply(ep, msg.arm, ModeSwitch{gate_.mode(msg.arm), SwitchStatus::Granted});
          break;
      }
      return;
    }
    result_.commands.push_back({msg.arm, ep, p});
  }

  ArmGate& gate_;
  std::int64_t now_;
  SessionStepResult result_;
};

}  // namespace

SessionStepResult session_step(SessionState state, std::span<const InboundEvent> events,
                               std::int64_t now_us, ArmGate& gate) {
  Stepper stepper(std::move(state), now_us, gate);
  for (const InboundEvent& ev : events) stepper.handle(ev);
  stepper.check_timeouts();
  stepper.poll_pending();
  return stepper.finish();
}

}  // namespace glteleop::session
