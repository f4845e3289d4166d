#include "glteleop/protocol.hpp"

#include "glteleop/errors.hpp"
#include "glteleop/json_io.hpp"
#include "overloaded.hpp"

#include <cmath>
#include <cstring>

namespace glteleop::protocol {

using detail::overloaded;
using nlohmann::json;

namespace {

std::string status_name(SwitchStatus s) {
  switch (s) {
    case SwitchStatus::Request: return "request";
    case SwitchStatus::Pending: return "pending";
    case SwitchStatus::Granted: return "granted";
  }
  return "request";
}

SwitchStatus parse_status(const std::string& s) {
  if (s == "request") return SwitchStatus::Request;
  if (s == "pending") return SwitchStatus::Pending;
  if (s == "granted") return SwitchStatus::Granted;
  throw ProtocolError("unknown mode switch status '" + s + "'", "ModeSwitch");
}

bool same_bits(double a, double b) {
  return std::memcmp(&a, &b, sizeof a) == 0;
}

bool same_vec(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  if (a.size() != b.size()) return false;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    if (!same_bits(a[i], b[i])) return false;
  }
  return true;
}

template <std::size_t N>
bool same_arr(const std::array<double, N>& a, const std::array<double, N>& b) {
  for (std::size_t i = 0; i < N; ++i) {
    if (!same_bits(a[i], b[i])) return false;
  }
  return true;
}

bool same_pose(const Pose& a, const Pose& b) {
  return same_vec(a.position, b.position) && same_vec(a.orientation.coeffs_wxyz(), b.orientation.coeffs_wxyz());
}

template <class T>
bool same_opt(const std::optional<T>& a, const std::optional<T>& b, auto eq) {
  if (a.has_value() != b.has_value()) return false;
  return !a || eq(*a, *b);
}

bool same_payload(const Payload& a, const Payload& b) {
  if (a.index() != b.index()) return false;
  return std::visit(
      overloaded{
          [&](const JointCommand& x) { return same_vec(x.joints, std::get<JointCommand>(b).joints); },
          [&](const CartesianCommand& x) { return same_pose(x.pose, std::get<CartesianCommand>(b).pose); },
          [&](const GripperCommand& x) { return same_bits(x.value, std::get<GripperCommand>(b).value); },
          [&](const HandCommand& x) { return same_arr(x.values, std::get<HandCommand>(b).values); },
          [&](const ModeSwitch& x) {
            const auto& y = std::get<ModeSwitch>(b);
            return x.mode == y.mode && x.status == y.status;
          },
          [&](const StateUpdate& x) {
            const auto& y = std::get<StateUpdate>(b);
            return x.tick == y.tick && same_bits(x.time, y.time) && same_vec(x.joints, y.joints) &&
                   same_vec(x.command, y.command) && same_pose(x.ee, y.ee) &&
                   same_bits(x.gripper, y.gripper) && same_arr(x.hand, y.hand) &&
                   x.estopped == y.estopped && x.safe_hold == y.safe_hold && x.mode == y.mode &&
                   x.switch_pending == y.switch_pending;
          },
          [&](const Heartbeat&) { return true; },
          [&](const Estop&) { return true; },
          [&](const Reset&) { return true; },
          [&](const Error& x) {
            const auto& y = std::get<Error>(b);
            return x.code == y.code && x.text == y.text;
          },
          [&](const DeviceInput& x) {
            const auto& y = std::get<DeviceInput>(b);
            auto eq_d = [](double p, double q) { return same_bits(p, q); };
            auto eq_q = [](const UnitQuaternion& p, const UnitQuaternion& q) {
              return same_vec(p.coeffs_wxyz(), q.coeffs_wxyz());
            };
            return same_opt(x.replica, y.replica, same_vec) && same_opt(x.haptic, y.haptic, same_pose) &&
                   same_opt(x.imu_forearm, y.imu_forearm, eq_q) && same_opt(x.imu_hand, y.imu_hand, eq_q) &&
                   same_opt(x.exo, y.exo, [](const auto& p, const auto& q) { return same_arr(p, q); }) &&
                   same_opt(x.gripper, y.gripper, eq_d) && same_opt(x.alpha_l, y.alpha_l, eq_d) &&
                   same_opt(x.alpha_r, y.alpha_r, eq_d);
          },
      },
      a);
}

std::uint64_t read_unsigned(const json& j, const char* field) {
  if (!j.is_number_unsigned()) {
    throw InputError(std::string("field '") + field + "' must be a non-negative integer");
  }
  return j.get<std::uint64_t>();
}

template <std::size_t N>
std::array<double, N> read_arr(const json& j, const std::string& field) {
  const Eigen::VectorXd v = jsonio::read_vec(j, field);
  if (v.size() != static_cast<Eigen::Index>(N)) {
    throw InputError("field '" + field + "' must have " + std::to_string(N) + " values");
  }
  std::array<double, N> out{};
  for (std::size_t i = 0; i < N; ++i) out[i] = v[static_cast<Eigen::Index>(i)];
  return out;
}

json payload_to_json(const Payload& p) {
  return std::visit(
      overloaded{
          [](const JointCommand& x) { return json{{"joints", jsonio::vec(x.joints)}}; },
          [](const CartesianCommand& x) { return json{{"pose", jsonio::pose(x.pose)}}; },
          [](const GripperCommand& x) { return json{{"value", x.value}}; },
          [](const HandCommand& x) { return json{{"values", x.values}}; },
          [](const ModeSwitch& x) {
            return json{{"mode", std::string(to_string(x.mode))}, {"status", status_name(x.status)}};
          },
          [](const StateUpdate& x) {
            return json{{"tick", x.tick},
                        {"time", x.time},
                        {"joints", jsonio::vec(x.joints)},
                        {"command", jsonio::vec(x.command)},
                        {"ee", jsonio::pose(x.ee)},
                        {"gripper", x.gripper},
                        {"hand", x.hand},
                        {"estopped", x.estopped},
                        {"safe_hold", x.safe_hold},
                        {"mode", std::string(to_string(x.mode))},
                        {"switch_pending", x.switch_pending}};
          },
          [](const Heartbeat&) { return json::object(); },
          [](const Estop&) { return json::object(); },
          [](const Reset&) { return json::object(); },
          [](const Error& x) { return json{{"code", x.code}, {"text", x.text}}; },
          [](const DeviceInput& x) {
            json j = json::object();
            if (x.replica) j["replica"] = jsonio::vec(*x.replica);
            if (x.haptic) j["haptic"] = jsonio::pose(*x.haptic);
            if (x.imu_forearm) j["imu_forearm"] = jsonio::quat(*x.imu_forearm);
            if (x.imu_hand) j["imu_hand"] = jsonio::quat(*x.imu_hand);
            if (x.exo) j["exo"] = *x.exo;
            if (x.gripper) j["gripper"] = *x.gripper;
            if (x.alpha_l) j["alpha_l"] = *x.alpha_l;
            if (x.alpha_r) j["alpha_r"] = *x.alpha_r;
            return j;
          },
      },
      p);
}

Payload payload_from_json(const std::string& kind, const json& j) {
  if (!j.is_object()) throw ProtocolError("payload must be an object", kind);
  if (kind == "JointCommand") return JointCommand{jsonio::read_vec(j.at("joints"), "joints")};
  if (kind == "CartesianCommand") return CartesianCommand{jsonio::read_pose(j.at("pose"), "pose")};
  if (kind == "GripperCommand") return GripperCommand{jsonio::read_finite(j.at("value"), "value")};
  if (kind == "HandCommand") return HandCommand{read_arr<HandTarget::kChannels>(j.at("values"), "values")};
  if (kind == "ModeSwitch") {
    return ModeSwitch{parse_mode(j.at("mode").get<std::string>()),
                      parse_status(j.value("status", std::string("request")))};
  }
  if (kind == "StateUpdate") {
    StateUpdate s;
    s.tick = read_unsigned(j.at("tick"), "tick");
    s.time = jsonio::read_finite(j.at("time"), "time");
    s.joints = jsonio::read_vec(j.at("joints"), "joints");
    s.command = jsonio::read_vec(j.at("command"), "command");
    s.ee = jsonio::read_pose(j.at("ee"), "ee");
    s.gripper = jsonio::read_finite(j.at("gripper"), "gripper");
    s.hand = read_arr<HandTarget::kChannels>(j.at("hand"), "hand");
    s.estopped = j.at("estopped").get<bool>();
    s.safe_hold = j.at("safe_hold").get<bool>();
    s.mode = parse_mode(j.at("mode").get<std::string>());
    s.switch_pending = j.at("switch_pending").get<bool>();
    return s;
  }
  if (kind == "Heartbeat") return Heartbeat{};
  if (kind == "Estop") return Estop{};
  if (kind == "Reset") return Reset{};
  if (kind == "Error") return Error{j.at("code").get<std::string>(), j.at("text").get<std::string>()};
  if (kind == "DeviceInput") {
    DeviceInput d;
    if (j.contains("replica")) d.replica = jsonio::read_vec(j.at("replica"), "replica");
    if (j.contains("haptic")) d.haptic = jsonio::read_pose(j.at("haptic"), "haptic");
    if (j.contains("imu_forearm")) d.imu_forearm = jsonio::read_quat(j.at("imu_forearm"), "imu_forearm");
    if (j.contains("imu_hand")) d.imu_hand = jsonio::read_quat(j.at("imu_hand"), "imu_hand");
    if (j.contains("exo")) d.exo = read_arr<6>(j.at("exo"), "exo");
    if (j.contains("gripper")) d.gripper = jsonio::read_finite(j.at("gripper"), "gripper");
    if (j.contains("alpha_l")) d.alpha_l = jsonio::read_finite(j.at("alpha_l"), "alpha_l");
    if (j.contains("alpha_r")) d.alpha_r = jsonio::read_finite(j.at("alpha_r"), "alpha_r");
    return d;
  }
  throw ProtocolError("unknown payload kind '" + kind + "'", kind);
}

bool finite_payload(const Payload& p) {
  auto fin = [](const Eigen::VectorXd& v) { return v.allFinite(); };
  return std::visit(
      overloaded{
          [&](const JointCommand& x) { return fin(x.joints); },
          [&](const CartesianCommand& x) { return x.pose.is_finite(); },
          [&](const GripperCommand& x) { return std::isfinite(x.value); },
          [&](const HandCommand& x) {
            return std::all_of(x.values.begin(), x.values.end(), [](double v) { return std::isfinite(v); });
          },
          [&](const StateUpdate& x) {
            return std::isfinite(x.time) && fin(x.joints) && fin(x.command) && x.ee.is_finite() &&
                   std::isfinite(x.gripper) &&
                   std::all_of(x.hand.begin(), x.hand.end(), [](double v) { return std::isfinite(v); });
          },
          [&](const DeviceInput& x) {
            bool ok = true;
            if (x.replica) ok = ok && fin(*x.replica);
            if (x.haptic) ok = ok && x.haptic->is_finite();
            if (x.exo) ok = ok && std::all_of(x.exo->begin(), x.exo->end(), [](double v) { return std::isfinite(v); });
            if (x.gripper) ok = ok && std::isfinite(*x.gripper);
            if (x.alpha_l) ok = ok && std::isfinite(*x.alpha_l);
            if (x.alpha_r) ok = ok && std::isfinite(*x.alpha_r);
            return ok;
          },
          [](const auto&) { return true; },
      },
      p);
}

}  // namespace

std::string kind_name(const Payload& payload) {
  static constexpr const char* kNames[] = {"JointCommand", "CartesianCommand", "GripperCommand",
                                           "HandCommand",  "ModeSwitch",       "StateUpdate",
                                           "Heartbeat",    "Estop",            "Reset",
                                           "Error",        "DeviceInput"};
  static_assert(std::size(kNames) == std::variant_size_v<Payload>);
  return kNames[payload.index()];
}

bool operator==(const TeleopMessage& a, const TeleopMessage& b) {
  return a.schema_version == b.schema_version && a.session == b.session && a.arm == b.arm &&
         a.seq == b.seq && a.timestamp_us == b.timestamp_us && same_payload(a.payload, b.payload);
}

std::string encode_body(const TeleopMessage& msg) {
  if (!finite_payload(msg.payload)) {
    throw ProtocolError("message carries non-finite values", kind_name(msg.payload));
  }
  json j;
  j["v"] = msg.schema_version;
  j["session"] = msg.session;
  j["arm"] = msg.arm;
  j["seq"] = msg.seq;
  j["ts"] = msg.timestamp_us;
  j["kind"] = kind_name(msg.payload);
  j["payload"] = payload_to_json(msg.payload);
  return j.dump();
}

TeleopMessage decode_body(std::string_view body) {
  json j;
  try {
    j = json::parse(body);
  } catch (const json::exception& e) {
    throw ProtocolError(std::string("body is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ProtocolError("body must be a JSON object");
  TeleopMessage msg;
  try {
    msg.schema_version = j.at("v").get<int>();
  } catch (const json::exception&) {
    throw ProtocolError("body lacks an integer schema version 'v'");
  }
  if (msg.schema_version != kSchemaVersion) {
    throw NegotiationError("schema version " + std::to_string(msg.schema_version) +
                               " is not supported (expected " + std::to_string(kSchemaVersion) + ")",
                           msg.schema_version);
  }
  std::string kind;
  try {
    kind = j.at("kind").get<std::string>();
    msg.session = j.at("session").get<std::string>();
    msg.arm = j.at("arm").get<int>();
    msg.seq = read_unsigned(j.at("seq"), "seq");
    msg.timestamp_us = j.at("ts").get<std::int64_t>();
    msg.payload = payload_from_json(kind, j.at("payload"));
  } catch (const json::exception& e) {
    throw ProtocolError(std::string("malformed message: ") + e.what(), kind);
  } catch (const InputError& e) {
    throw ProtocolError(std::string("malformed message: ") + e.what(), kind);
  }
  return msg;
}

std::vector<std::uint8_t> encode(const TeleopMessage& msg) {
  const std::string body = encode_body(msg);
  if (body.size() > kMaxFrameBytes) {
    throw FramingError("encoded body exceeds the 1 MiB frame limit");
  }
  const auto n = static_cast<std::uint32_t>(body.size());
  std::vector<std::uint8_t> out;
  out.reserve(kHeaderBytes + body.size());
  out.push_back(static_cast<std::uint8_t>(n >> 24));
  out.push_back(static_cast<std::uint8_t>(n >> 16));
  out.push_back(static_cast<std::uint8_t>(n >> 8));
  out.push_back(static_cast<std::uint8_t>(n));
  out.insert(out.end(), body.begin(), body.end());
  return out;
}

namespace {

std::uint32_t read_length(std::span<const std::uint8_t> header) {
  return (std::uint32_t{header[0]} << 24) | (std::uint32_t{header[1]} << 16) |
         (std::uint32_t{header[2]} << 8) | std::uint32_t{header[3]};
}

}  // namespace

TeleopMessage decode(std::span<const std::uint8_t> frame) {
  if (frame.size() < kHeaderBytes) {
    throw FramingError("truncated frame header");
  }
  const std::uint32_t n = read_length(frame.first(kHeaderBytes));
  if (n > kMaxFrameBytes) {
    throw FramingError("declared frame length " + std::to_string(n) + " exceeds the 1 MiB limit");
  }
  if (frame.size() < kHeaderBytes + n) {
    throw FramingError("truncated frame body");
  }
  if (frame.size() > kHeaderBytes + n) {
    throw FramingError("trailing bytes after frame");
  }
  const auto body = frame.subspan(kHeaderBytes);
  return decode_body(std::string_view(reinterpret_cast<const char*>(body.data()), body.size()));
}

void FrameReader::feed(std::span<const std::uint8_t> bytes) {
  buffer_.insert(buffer_.end(), bytes.begin(), bytes.end());
}

std::optional<std::string> FrameReader::next() {
  if (buffer_.size() < kHeaderBytes) return std::nullopt;
  const std::uint32_t n = read_length(std::span(buffer_).first(kHeaderBytes));
  if (n > kMaxFrameBytes) {
    throw FramingError("declared frame length " + std::to_string(n) + " exceeds the 1 MiB limit");
  }
  if (buffer_.size() < kHeaderBytes + n) return std::nullopt;
  std::string body(buffer_.begin() + kHeaderBytes, buffer_.begin() + kHeaderBytes + n);
  buffer_.erase(buffer_.begin(), buffer_.begin() + kHeaderBytes + n);
  return body;
}

Payload to_payload(const SlaveCommand& cmd) {
  return std::visit(overloaded{
                        [](const JointTarget& t) -> Payload { return JointCommand{t.joints}; },
                        [](const CartesianTarget& t) -> Payload { return CartesianCommand{t.pose}; },
                        [](const GripperTarget& t) -> Payload { return GripperCommand{t.value}; },
                        [](const HandTarget& t) -> Payload { return HandCommand{t.values}; },
                    },
                    cmd);
}

bool is_command(const Payload& payload) {
  return std::holds_alternative<JointCommand>(payload) || std::holds_alternative<CartesianCommand>(payload) ||
         std::holds_alternative<GripperCommand>(payload) || std::holds_alternative<HandCommand>(payload);
}

SlaveCommand to_command(const Payload& payload) {
  if (const auto* p = std::get_if<JointCommand>(&payload)) return JointTarget{p->joints};
  if (const auto* p = std::get_if<CartesianCommand>(&payload)) return CartesianTarget{p->pose};
  if (const auto* p = std::get_if<GripperCommand>(&payload)) return GripperTarget{p->value};
  if (const auto* p = std::get_if<HandCommand>(&payload)) return HandTarget{p->values};
  throw ProtocolError("payload is not a slave command", kind_name(payload));
}

}  // namespace glteleop::protocol
