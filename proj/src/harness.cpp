#include "glteleop/harness.hpp"

#include "glteleop/errors.hpp"
#include "glteleop/json_io.hpp"
#include "glteleop/protocol.hpp"
#include "glteleop/session.hpp"

#include "overloaded.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <numbers>
#include <sstream>

namespace glteleop::harness {

using nlohmann::json;

double GaussianSource::next() {
  auto uniform = [this] { return static_cast<double>((rng_() >> 11) + 1) * 0x1p-53; };
  const double u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

namespace {

// ---------------------------------------------------------------------------
// Source positions: a SAX pass that maps JSON pointers to 1-based lines.

class TrackingIterator {
 public:
  using iterator_category = std::forward_iterator_tag;
  using value_type = char;
  using difference_type = std::ptrdiff_t;
  using pointer = const char*;
  using reference = const char&;

  TrackingIterator(const char* p, const char* base, std::size_t* cursor)
      : p_(p), base_(base), cursor_(cursor) {}

  reference operator*() const {
    *cursor_ = static_cast<std::size_t>(p_ - base_);
    return *p_;
  }
  TrackingIterator& operator++() {
    ++p_;
    return *this;
  }
  TrackingIterator operator++(int) {
    TrackingIterator old = *this;
    ++p_;
    return old;
  }
  bool operator==(const TrackingIterator& o) const { return p_ == o.p_; }

 private:
  const char* p_;
  const char* base_;
  std::size_t* cursor_;
};

class LineMapper : public nlohmann::json_sax<json> {
 public:
  explicit LineMapper(const std::string& text) : text_(text) {}

  std::size_t cursor = 0;
  std::map<std::string, int> lines;

  bool null() override { return value(); }
  bool boolean(bool) override { return value(); }
  bool number_integer(number_integer_t) override { return value(); }
  bool number_unsigned(number_unsigned_t) override { return value(); }
  bool number_float(number_float_t, const string_t&) override { return value(); }
  bool string(string_t&) override { return value(); }
  bool binary(binary_t&) override { return value(); }
  bool start_object(std::size_t) override {
    value();
    stack_.push_back({false, 0, {}});
    return true;
  }
  bool key(string_t& k) override {
    stack_.back().key = k;
    record();
    return true;
  }
  bool end_object() override {
    stack_.pop_back();
    return true;
  }
  bool start_array(std::size_t) override {
    value();
    stack_.push_back({true, 0, {}});
    return true;
  }
  bool end_array() override {
    stack_.pop_back();
    return true;
  }
  bool parse_error(std::size_t, const std::string&, const nlohmann::detail::exception&) override {
    return false;
  }

 private:
  struct Frame {
    bool array;
    std::size_t next_index;
    std::string key;
  };

  bool value() {
    if (!stack_.empty() && stack_.back().array) {
      stack_.back().key = std::to_string(stack_.back().next_index++);
      record();
    }
    return true;
  }

  void record() {
    std::string ptr;
    for (const Frame& f : stack_) ptr += "/" + f.key;
    const auto end = text_.begin() + static_cast<std::ptrdiff_t>(std::min(cursor, text_.size()));
    lines.emplace(ptr, 1 + static_cast<int>(std::count(text_.begin(), end, '\n')));
  }

  const std::string& text_;
  std::vector<Frame> stack_;
};

int line_at_offset(const std::string& text, std::size_t offset) {
  const auto end = text.begin() + static_cast<std::ptrdiff_t>(std::min(offset, text.size()));
  return 1 + static_cast<int>(std::count(text.begin(), end, '\n'));
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// ---------------------------------------------------------------------------
// Scenario parsing.

class ScenarioReader {
 public:
  ScenarioReader(const std::string& text, std::string base_dir) : text_(text), base_dir_(std::move(base_dir)) {
    try {
      doc_ = json::parse(text);
    } catch (const json::parse_error& e) {
      throw ParseError(std::string("scenario is not valid JSON: ") + e.what(), "",
                       line_at_offset(text, e.byte == 0 ? 0 : e.byte - 1));
    }
    LineMapper mapper(text);
    const TrackingIterator first(text.data(), text.data(), &mapper.cursor);
    const TrackingIterator last(text.data() + text.size(), text.data(), &mapper.cursor);
    json::sax_parse(first, last, &mapper);
    lines_ = std::move(mapper.lines);
  }

  ScenarioScript parse() {
    if (!doc_.is_object()) fail("", "scenario must be a JSON object");
    static const char* known[] = {"scenario_version", "name", "model", "controller",
                                  "hand_calibration", "mode", "duration", "operator_speed",
                                  "operator_compensates_scale", "noise", "ik", "imu_home",
                                  "events", "waypoints"};
    for (const auto& [k, v] : doc_.items()) {
      if (std::find(std::begin(known), std::end(known), k) == std::end(known)) {
        fail("/" + k, "unknown field '" + k + "'");
      }
    }
    if (!doc_.contains("scenario_version") || doc_.at("scenario_version") != 1) {
      fail("/scenario_version", "scenario_version must be 1");
    }

    ScenarioScript s;
    if (doc_.contains("name")) s.name = string_at(doc_.at("name"), "/name");
    if (!doc_.contains("model")) fail("/model", "missing robot model");
    s.model = document(doc_.at("model"), "/model");
    if (doc_.contains("ik")) {
      if (!doc_.at("ik").is_object()) fail("/ik", "ik must be an object");
      s.ik_override = doc_.at("ik");
    }
    try {
      (void)s.slave_model();
    } catch (const ConfigError& e) {
      fail("/model", e.what());
    }
    if (doc_.contains("controller")) {
      const json c = document(doc_.at("controller"), "/controller");
      try {
        s.controller = ControllerConfig::from_json_text(c.dump());
      } catch (const ConfigError& e) {
        fail("/controller", e.what());
      }
    }
    if (doc_.contains("hand_calibration")) {
      const json c = document(doc_.at("hand_calibration"), "/hand_calibration");
      try {
        s.hand_calibration = HandCalibration::from_json_text(c.dump());
      } catch (const ConfigError& e) {
        fail("/hand_calibration", e.what());
      }
    }
    if (doc_.contains("mode")) {
      const std::string m = string_at(doc_.at("mode"), "/mode");
      if (m == "temporal") {
        s.mode = Decoupling::Temporal;
      } else if (m == "spatial") {
        s.mode = Decoupling::Spatial;
      } else {
        fail("/mode", "mode must be \"temporal\" or \"spatial\"");
      }
    }
    if (!doc_.contains("duration")) fail("/duration", "missing duration");
    s.duration = number(doc_.at("duration"), "/duration");
    if (s.duration < 0.0) fail("/duration", "duration must be non-negative");
    if (doc_.contains("operator_speed")) {
      s.operator_speed = number(doc_.at("operator_speed"), "/operator_speed");
      if (!(s.operator_speed > 0.0)) fail("/operator_speed", "operator_speed must be positive");
    }
    if (doc_.contains("operator_compensates_scale")) {
      const json& b = doc_.at("operator_compensates_scale");
      if (!b.is_boolean()) fail("/operator_compensates_scale", "must be true or false");
      s.operator_compensates_scale = b.get<bool>();
    }
    if (doc_.contains("noise")) parse_noise(doc_.at("noise"), s.noise);
    if (doc_.contains("imu_home")) {
      const json& h = doc_.at("imu_home");
      if (!h.is_object()) fail("/imu_home", "imu_home must be {\"forearm\": q, \"hand\": q}");
      s.imu_home.forearm_home = quat(member(h, "/imu_home", "forearm"), "/imu_home/forearm").to_matrix();
      s.imu_home.hand_home = quat(member(h, "/imu_home", "hand"), "/imu_home/hand").to_matrix();
    }
    if (doc_.contains("events")) parse_events(doc_.at("events"), s);
    if (doc_.contains("waypoints")) parse_waypoints(doc_.at("waypoints"), s);
    return s;
  }

 private:
  [[noreturn]] void fail(const std::string& ptr, const std::string& msg) const {
    std::string probe = ptr;
    int line = 0;
    while (true) {
      if (auto it = lines_.find(probe); it != lines_.end()) {
        line = it->second;
        break;
      }
      if (probe.empty()) break;
      probe.erase(probe.rfind('/'));
    }
    const std::string field = ptr.empty() ? "/" : ptr;
    throw ParseError("scenario " + field + (line > 0 ? " (line " + std::to_string(line) + ")" : "") +
                         ": " + msg,
                     field, line);
  }

  const json& member(const json& obj, const std::string& ptr, const char* key) const {
    if (!obj.contains(key)) fail(ptr + "/" + key, std::string("missing '") + key + "'");
    return obj.at(key);
  }

  double number(const json& j, const std::string& ptr) const {
    try {
      return jsonio::read_finite(j, ptr);
    } catch (const InputError& e) {
      fail(ptr, e.what());
    }
  }

  std::string string_at(const json& j, const std::string& ptr) const {
    if (!j.is_string()) fail(ptr, "must be a string");
    return j.get<std::string>();
  }

  Eigen::VectorXd vec(const json& j, const std::string& ptr) const {
    try {
      return jsonio::read_vec(j, ptr);
    } catch (const InputError& e) {
      fail(ptr, e.what());
    }
  }

  Eigen::Vector3d vec3(const json& j, const std::string& ptr) const {
    try {
      return jsonio::read_vec3(j, ptr);
    } catch (const InputError& e) {
      fail(ptr, e.what());
    }
  }

  UnitQuaternion quat(const json& j, const std::string& ptr) const {
    try {
      return jsonio::read_quat(j, ptr);
    } catch (const InputError& e) {
      fail(ptr, e.what());
    }
  }

  Pose pose(const json& j, const std::string& ptr) const {
    try {
      return jsonio::read_pose(j, ptr);
    } catch (const InputError& e) {
      fail(ptr, e.what());
    }
  }

  // Inline object, or a path resolved against the scenario's directory.
  json document(const json& j, const std::string& ptr) const {
    if (j.is_object()) return j;
    if (!j.is_string()) fail(ptr, "must be a file path or an inline object");
    std::filesystem::path p(j.get<std::string>());
    if (p.is_relative()) p = std::filesystem::path(base_dir_) / p;
    std::string text;
    try {
      text = read_text(p.string());
    } catch (const ConfigError& e) {
      fail(ptr, e.what());
    }
    try {
      return json::parse(text);
    } catch (const json::parse_error& e) {
      fail(ptr, "'" + p.string() + "' is not valid JSON: " + e.what());
    }
  }

  void parse_noise(const json& n, NoiseSpec& out) const {
    if (!n.is_object()) fail("/noise", "noise must be {\"seed\": n, \"sigma\": m}");
    if (n.contains("seed")) {
      if (!n.at("seed").is_number_unsigned()) fail("/noise/seed", "seed must be a non-negative integer");
      out.seed = n.at("seed").get<std::uint64_t>();
    }
    if (n.contains("sigma")) {
      out.sigma = number(n.at("sigma"), "/noise/sigma");
      if (out.sigma < 0.0) fail("/noise/sigma", "sigma must be non-negative");
    }
  }

  void parse_events(const json& events, ScenarioScript& s) const {
    if (!events.is_array()) fail("/events", "events must be an array");
    static const char* kinds[] = {"replica", "haptic", "pedal", "gripper", "imu", "exo", "dropout"};
    double last_t = 0.0;
    for (std::size_t i = 0; i < events.size(); ++i) {
      const std::string ptr = "/events/" + std::to_string(i);
      const json& e = events[i];
      if (!e.is_object()) fail(ptr, "event must be an object");
      const double t = number(member(e, ptr, "t"), ptr + "/t");
      if (t < 0.0) fail(ptr + "/t", "timestamps must be non-negative");
      if (t < last_t) fail(ptr + "/t", "timestamps must be monotone");
      last_t = t;

      std::string kind;
      for (const auto& [k, v] : e.items()) {
        if (k == "t") continue;
        if (std::find(std::begin(kinds), std::end(kinds), k) == std::end(kinds)) {
          fail(ptr + "/" + k, "unknown event kind '" + k + "'");
        }
        if (!kind.empty()) fail(ptr + "/" + k, "an event carries exactly one kind");
        kind = k;
      }
      if (kind.empty()) fail(ptr, "event has no kind");
      const std::string kp = ptr + "/" + kind;
      const json& v = e.at(kind);

      const bool temporal_only = kind == "haptic" || kind == "pedal" || kind == "gripper";
      const bool spatial_only = kind == "imu" || kind == "exo";
      if (temporal_only && s.mode != Decoupling::Temporal) {
        fail(kp, "'" + kind + "' events need mode \"temporal\"");
      }
      if (spatial_only && s.mode != Decoupling::Spatial) {
        fail(kp, "'" + kind + "' events need mode \"spatial\"");
      }

      if (kind == "replica") {
        s.replica.push_back({t, vec(v, kp)});
      } else if (kind == "haptic") {
        s.haptic.push_back({t, pose(v, kp)});
      } else if (kind == "pedal") {
        try {
          s.pedals.push_back({t, parse_mode(string_at(v, kp))});
        } catch (const InputError&) {
          fail(kp, "pedal must be \"global\" or \"local\"");
        }
      } else if (kind == "gripper") {
        s.gripper.push_back({t, number(v, kp)});
      } else if (kind == "imu") {
        if (!v.is_object()) fail(kp, "imu must be {\"forearm\": q, \"hand\": q}");
        s.imu.push_back({t, quat(member(v, kp, "forearm"), kp + "/forearm"),
                         quat(member(v, kp, "hand"), kp + "/hand")});
      } else if (kind == "exo") {
        if (!s.hand_calibration) fail(kp, "exoskeleton events need a hand_calibration");
        const Eigen::VectorXd r = vec(v, kp);
        if (r.size() != kExoEncoderCount) fail(kp, "exo needs 6 encoder angles");
        ExoKey key{t, {}};
        for (int k = 0; k < kExoEncoderCount; ++k) key.encoders[k] = r[k];
        s.exo.push_back(key);
      } else {
        const double d = number(v, kp);
        if (!(d > 0.0)) fail(kp, "dropout duration must be positive");
        s.dropouts.push_back({t, d});
      }
    }
  }

  void parse_waypoints(const json& wps, ScenarioScript& s) const {
    if (!wps.is_array()) fail("/waypoints", "waypoints must be an array");
    double last_t = 0.0;
    for (std::size_t i = 0; i < wps.size(); ++i) {
      const std::string ptr = "/waypoints/" + std::to_string(i);
      const json& w = wps[i];
      if (!w.is_object()) fail(ptr, "waypoint must be an object");
      Waypoint wp;
      wp.name = w.contains("name") ? string_at(w.at("name"), ptr + "/name") : "waypoint " + std::to_string(i);
      wp.t = number(member(w, ptr, "t"), ptr + "/t");
      if (wp.t < last_t) fail(ptr + "/t", "timestamps must be monotone");
      if (wp.t > s.duration) fail(ptr + "/t", "waypoint lies after the end of the scenario");
      last_t = wp.t;
      if (w.contains("position")) wp.position = vec3(w.at("position"), ptr + "/position");
      if (w.contains("offset")) wp.offset = vec3(w.at("offset"), ptr + "/offset");
      if (wp.position && wp.offset) fail(ptr + "/offset", "give either position or offset");
      if (w.contains("orientation")) wp.orientation = quat(w.at("orientation"), ptr + "/orientation");
      if (w.contains("joints")) wp.joints = vec(w.at("joints"), ptr + "/joints");
      if (!wp.position && !wp.offset && !wp.orientation && !wp.joints) {
        fail(ptr, "waypoint needs a position, offset, orientation or joints goal");
      }
      for (auto [key, tol] : {std::pair{"pos_tol", &wp.pos_tol}, std::pair{"ang_tol", &wp.ang_tol},
                              std::pair{"joint_tol", &wp.joint_tol}}) {
        if (!w.contains(key)) continue;
        *tol = number(w.at(key), ptr + "/" + key);
        if (!(*tol > 0.0)) fail(ptr + "/" + key, "tolerances must be positive");
      }
      s.waypoints.push_back(std::move(wp));
    }
  }

  const std::string& text_;
  std::string base_dir_;
  json doc_;
  std::map<std::string, int> lines_;
};

std::string to_hex(const unsigned char* data, std::size_t n) {
  static const char* digits = "0123456789abcdef";
  std::string out;
  out.reserve(2 * n);
  for (std::size_t i = 0; i < n; ++i) {
    out += digits[data[i] >> 4];
    out += digits[data[i] & 0xf];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Master-device models.

// Geodesic interpolation, s in [0, 1].
UnitQuaternion interpolate(const UnitQuaternion& a, const UnitQuaternion& b, double s) {
  if (s <= 0.0) return a;
  if (s >= 1.0) return b;
  return a * UnitQuaternion::from_axis_angle(scaled_displacement(a, b, s));
}

template <typename Key>
std::pair<const Key*, const Key*> bracket(const std::vector<Key>& keys, double t, double& s) {
  s = 0.0;
  if (keys.empty()) return {nullptr, nullptr};
  if (t <= keys.front().t) return {&keys.front(), &keys.front()};
  for (std::size_t i = 1; i < keys.size(); ++i) {
    if (t < keys[i].t) {
      const Key& a = keys[i - 1];
      const Key& b = keys[i];
      s = (t - a.t) / (b.t - a.t);
      return {&a, &b};
    }
  }
  return {&keys.back(), &keys.back()};
}

Pose haptic_at(const ScenarioScript& sc, double t) {
  double s = 0.0;
  const auto [a, b] = bracket(sc.haptic, t, s);
  if (!a) return {};
  Pose p{a->pose.position + s * (b->pose.position - a->pose.position),
         interpolate(a->pose.orientation, b->pose.orientation, s)};
  if (sc.operator_compensates_scale) {
    const Pose& ref = sc.haptic.front().pose;
    p.position = ref.position + (p.position - ref.position) / sc.controller.scale.linear();
    const AxisAngle d = scaled_displacement(ref.orientation, p.orientation, 1.0);
    p.orientation = ref.orientation *
                    UnitQuaternion::from_axis_angle(d.axis, d.angle / sc.controller.scale.rotational());
  }
  return p;
}

ImuPair imu_at(const ScenarioScript& sc, double t) {
  double s = 0.0;
  const auto [a, b] = bracket(sc.imu, t, s);
  if (!a) return {sc.imu_home.forearm_home, sc.imu_home.hand_home};
  return {interpolate(a->forearm, b->forearm, s).to_matrix(), interpolate(a->hand, b->hand, s).to_matrix()};
}

ExoskeletonReading exo_at(const ScenarioScript& sc, double t) {
  double s = 0.0;
  const auto [a, b] = bracket(sc.exo, t, s);
  ExoskeletonReading r;
  if (!a) return r;
  for (int i = 0; i < kExoEncoderCount; ++i) {
    r.encoders[i] = a->encoders[i] + s * (b->encoders[i] - a->encoders[i]);
  }
  return r;
}

// Presents the temporal controller (when there is one) to the session.
class ControllerGate : public session::ArmGate {
 public:
  explicit ControllerGate(TemporalController* ctl) : ctl_(ctl) {}

  bool has_arm(int arm) const override { return arm == 0; }
  session::GateResult request_mode(int, TeleopMode mode) override {
    if (!ctl_) return session::GateResult::Unchanged;
    switch (ctl_->request_mode(mode)) {
      case ModeRequest::Granted:
        return session::GateResult::Granted;
      case ModeRequest::Pending:
        return session::GateResult::Pending;
      case ModeRequest::Unchanged:
        break;
    }
    return session::GateResult::Unchanged;
  }
  TeleopMode mode(int) const override { return ctl_ ? ctl_->mode() : TeleopMode::Global; }
  bool switch_pending(int) const override { return ctl_ && ctl_->switch_pending(); }

 private:
  TemporalController* ctl_;
};

double inf_norm(const JointVector& v) { return v.size() == 0 ? 0.0 : v.cwiseAbs().maxCoeff(); }

std::string tick_line(std::uint64_t k, TeleopMode mode, const JointVector& replica, const SlaveState& st) {
  return R"({"k":)" + std::to_string(k) + R"(,"mode":")" + std::string(to_string(mode)) +
         R"(","replica":)" + jsonio::vec(replica).dump() + R"(,"state":)" + state_log_line(st) + "}";
}

int event_tick(double t, double rate) {
  return static_cast<int>(std::ceil(t * rate - 1e-9));
}

struct WaypointTracker {
  const Waypoint* wp;
  Eigen::Vector3d goal_position;
  bool has_position;
  int tick;
  WaypointResult result;
};

void measure(WaypointTracker& w, const SlaveState& st) {
  const Waypoint& wp = *w.wp;
  w.result.position_error = w.has_position ? (st.ee_pose.position - w.goal_position).norm() : 0.0;
  w.result.angle_error = wp.orientation ? pose_error(st.ee_pose, Pose{st.ee_pose.position, *wp.orientation}).angle : 0.0;
  w.result.joint_error = wp.joints ? inf_norm(st.joints - *wp.joints) : 0.0;
  w.result.reached = w.result.position_error <= wp.pos_tol && w.result.angle_error <= wp.ang_tol &&
                     w.result.joint_error <= wp.joint_tol;
}

}  // namespace

// ---------------------------------------------------------------------------

ScenarioScript ScenarioScript::from_json_text(const std::string& text, const std::string& base_dir) {
  return ScenarioReader(text, base_dir).parse();
}

ScenarioScript ScenarioScript::load(const std::string& path) {
  std::string text;
  try {
    text = read_text(path);
  } catch (const ConfigError& e) {
    throw ParseError(e.what(), "", 0);
  }
  return from_json_text(text, std::filesystem::path(path).parent_path().string());
}

void ScenarioScript::set_model_file(const std::string& path) {
  try {
    model = json::parse(read_text(path));
  } catch (const json::parse_error& e) {
    throw ConfigError("model '" + path + "' is not valid JSON: " + e.what());
  }
  (void)slave_model();
}

void ScenarioScript::set_controller_file(const std::string& path) {
  controller = ControllerConfig::load(path);
}

SlaveModel ScenarioScript::slave_model() const {
  json doc = model;
  if (!ik_override.empty()) {
    if (!doc.contains("ik")) doc["ik"] = json::object();
    doc["ik"].update(ik_override);
  }
  return SlaveModel::from_json_text(doc.dump());
}

int ScenarioScript::ticks() const {
  return static_cast<int>(std::llround(duration * controller.control_rate_hz));
}

json ScenarioScript::to_json() const {
  json j;
  j["scenario_version"] = 1;
  j["name"] = name;
  j["model"] = model;
  if (!ik_override.empty()) j["ik"] = ik_override;
  j["controller"] = json::parse(controller.to_json_text());
  if (hand_calibration) j["hand_calibration"] = json::parse(hand_calibration->to_json_text());
  j["mode"] = mode == Decoupling::Temporal ? "temporal" : "spatial";
  j["duration"] = duration;
  j["operator_speed"] = operator_speed;
  j["operator_compensates_scale"] = operator_compensates_scale;
  j["noise"] = {{"seed", noise.seed}, {"sigma", noise.sigma}};
  j["imu_home"] = {{"forearm", jsonio::quat(UnitQuaternion::from_matrix(imu_home.forearm_home))},
                   {"hand", jsonio::quat(UnitQuaternion::from_matrix(imu_home.hand_home))}};

  // Kinds keep their relative order; a stable sort on time restores one
  // monotone timeline.
  std::vector<std::pair<double, json>> events;
  for (const auto& k : replica) events.push_back({k.t, {{"t", k.t}, {"replica", jsonio::vec(k.joints)}}});
  for (const auto& k : haptic) events.push_back({k.t, {{"t", k.t}, {"haptic", jsonio::pose(k.pose)}}});
  for (const auto& k : pedals) events.push_back({k.t, {{"t", k.t}, {"pedal", std::string(to_string(k.mode))}}});
  for (const auto& k : gripper) events.push_back({k.t, {{"t", k.t}, {"gripper", k.value}}});
  for (const auto& k : imu) {
    events.push_back({k.t, {{"t", k.t}, {"imu", {{"forearm", jsonio::quat(k.forearm)}, {"hand", jsonio::quat(k.hand)}}}}});
  }
  for (const auto& k : exo) events.push_back({k.t, {{"t", k.t}, {"exo", k.encoders}}});
  for (const auto& k : dropouts) events.push_back({k.t, {{"t", k.t}, {"dropout", k.duration}}});
  std::stable_sort(events.begin(), events.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  j["events"] = json::array();
  for (auto& e : events) j["events"].push_back(std::move(e.second));

  j["waypoints"] = json::array();
  for (const Waypoint& w : waypoints) {
    json o{{"name", w.name}, {"t", w.t}, {"pos_tol", w.pos_tol}, {"ang_tol", w.ang_tol}, {"joint_tol", w.joint_tol}};
    if (w.position) o["position"] = jsonio::vec3(*w.position);
    if (w.offset) o["offset"] = jsonio::vec3(*w.offset);
    if (w.orientation) o["orientation"] = jsonio::quat(*w.orientation);
    if (w.joints) o["joints"] = jsonio::vec(*w.joints);
    j["waypoints"].push_back(std::move(o));
  }
  return j;
}

bool RunReport::passed() const {
  const bool all_reached =
      std::all_of(waypoints.begin(), waypoints.end(), [](const WaypointResult& w) { return w.reached; });
  return all_reached && estops.empty() && max_switch_jump < 1e-9;
}

json RunReport::to_json() const {
  json j;
  j["scenario"] = scenario;
  j["ticks"] = ticks;
  j["passed"] = passed();
  j["digest"] = digest;
  j["max_command_jump"] = max_command_jump;
  j["max_switch_jump"] = max_switch_jump;
  j["waypoints"] = json::array();
  for (const WaypointResult& w : waypoints) {
    json o{{"name", w.name},
           {"t", w.t},
           {"position_error", w.position_error},
           {"angle_error", w.angle_error},
           {"joint_error", w.joint_error},
           {"reached", w.reached}};
    o["completion_time"] = w.completion_time ? json(*w.completion_time) : json(nullptr);
    j["waypoints"].push_back(std::move(o));
  }
  j["switches"] = json::array();
  for (const SwitchEvent& s : switches) {
    j["switches"].push_back({{"tick", s.tick},
                             {"to", std::string(glteleop::to_string(s.to))},
                             {"command_jump", s.command_jump},
                             {"mirror_gap", s.mirror_gap}});
  }
  auto events = [](const std::vector<TickEvent>& v) {
    json a = json::array();
    for (const TickEvent& e : v) a.push_back({{"tick", e.tick}, {"what", e.what}});
    return a;
  };
  j["estops"] = events(estops);
  j["safe_holds"] = events(safe_holds);
  j["ik_failures"] = ik_failures;
  j["clamp_events"] = clamp_events;
  j["diagnostics"] = diagnostics;
  return j;
}

RunOutput run(const ScenarioScript& sc) {
  const SlaveModel model = sc.slave_model();
  const KinematicChain& chain = model.chain;
  const int dof = chain.dof();
  const double rate = sc.controller.control_rate_hz;
  const double dt = sc.controller.dt();
  const int ticks = sc.ticks();
  const bool temporal = sc.mode == Decoupling::Temporal;
  const int replica_dof = temporal ? dof : dof - 3;

  for (const ReplicaKey& k : sc.replica) {
    if (k.joints.size() != replica_dof) {
      throw ConfigError("replica event at t=" + std::to_string(k.t) + " has " + std::to_string(k.joints.size()) +
                        " joints; this model and mode need " + std::to_string(replica_dof));
    }
  }
  for (const Waypoint& w : sc.waypoints) {
    if (w.joints && w.joints->size() != dof) {
      throw ConfigError("waypoint '" + w.name + "' has " + std::to_string(w.joints->size()) + " joints for a " +
                        std::to_string(dof) + "-dof model");
    }
  }
  if (sc.mode == Decoupling::Spatial && dof < 4) {
    throw ConfigError("spatial decoupling needs a model with at least 4 joints");
  }

  RunOutput out;
  RunReport& report = out.report;
  report.scenario = sc.name;
  report.ticks = static_cast<std::uint64_t>(ticks);

  std::optional<TemporalController> controller;
  if (temporal) controller.emplace(chain, sc.controller);
  ControllerGate gate(controller ? &*controller : nullptr);

  SlaveState slave = initial_state(model);
  JointVector replica = model.home.head(replica_dof);
  JointVector replica_goal = replica;
  std::size_t next_replica_key = 0;
  GaussianSource noise(sc.noise.seed);

  std::map<int, std::vector<TeleopMode>> pedals_at;
  for (const PedalEvent& p : sc.pedals) pedals_at[event_tick(p.t, rate)].push_back(p.mode);
  std::map<int, double> gripper_at;
  for (const GripperEvent& g : sc.gripper) gripper_at[event_tick(g.t, rate)] = g.value;

  std::vector<WaypointTracker> trackers;
  for (const Waypoint& w : sc.waypoints) {
    WaypointTracker tr{&w, Eigen::Vector3d::Zero(), w.position || w.offset, event_tick(w.t, rate), {}};
    if (w.position) tr.goal_position = *w.position;
    if (w.offset) tr.goal_position = slave.ee_pose.position + *w.offset;
    tr.result.name = w.name;
    tr.result.t = w.t;
    trackers.push_back(std::move(tr));
  }
  std::size_t next_waypoint = 0;
  auto check_waypoints = [&](int k, const SlaveState& st) {
    const double t = k * dt;
    while (next_waypoint < trackers.size()) {
      WaypointTracker& w = trackers[next_waypoint];
      measure(w, st);
      if (w.result.reached && !w.result.completion_time) w.result.completion_time = t;
      if (k < w.tick) break;
      ++next_waypoint;
    }
  };

  session::SessionState sess;
  std::uint64_t master_seq = 0;
  constexpr session::EndpointId kMaster = 1;

  out.log.push_back(json{{"glteleop_log", 1}, {"scenario", sc.to_json()}}.dump());
  TeleopMode mode = TeleopMode::Global;
  out.log.push_back(tick_line(0, mode, replica, slave));
  check_waypoints(0, slave);

  auto add_diagnostic = [&](int k, const std::string& d) {
    constexpr std::size_t kMaxDiagnostics = 200;
    if (report.diagnostics.size() < kMaxDiagnostics) {
      report.diagnostics.push_back("tick " + std::to_string(k) + ": " + d);
    }
  };

  for (int k = 1; k <= ticks; ++k) {
    const double t = k / rate;
    const std::int64_t now_us = std::llround(t * 1e6);
    const bool dropped = std::any_of(sc.dropouts.begin(), sc.dropouts.end(), [&](const Dropout& d) {
      return k >= event_tick(d.t, rate) && k < event_tick(d.t + d.duration, rate);
    });

    // Operator moves the replica toward the newest keyframe unless its
    // motors are mirroring the slave.
    while (next_replica_key < sc.replica.size() && event_tick(sc.replica[next_replica_key].t, rate) <= k) {
      replica_goal = sc.replica[next_replica_key++].joints;
    }
    const bool replica_free = !controller || controller->mode() == TeleopMode::Global;
    if (replica_free) replica = mirror_update(replica, replica_goal, sc.operator_speed, dt);

    std::vector<SlaveCommand> commands;
    bool switched = false;
    double mirror_gap = 0.0;
    if (controller) {
      Pose haptic = haptic_at(sc, t);
      if (sc.noise.sigma > 0.0) {
        for (int a = 0; a < 3; ++a) haptic.position[a] += sc.noise.sigma * noise.next();
      }
      TemporalInputs in{replica, haptic, std::nullopt, std::nullopt};
      if (auto g = gripper_at.find(k); g != gripper_at.end()) in.gripper = g->second;
      mirror_gap = inf_norm(replica - slave.joints);
      TemporalOutput o = controller->step(in, slave, dt);
      commands = std::move(o.commands);
      switched = o.switched;
      mode = o.mode;
      if (o.replica_drive) replica = *o.replica_drive;
      if (switched && mode == TeleopMode::Global) replica_goal = replica;
    } else {
      std::optional<HandTarget> hand;
      if (sc.hand_calibration && !sc.exo.empty()) hand = retarget(exo_at(sc, t), *sc.hand_calibration);
      SpatialOutput o = spatial_step(chain, replica, sc.imu_home, imu_at(sc, t), hand, model.wrist_convention);
      report.clamp_events += o.clamps.size();
      commands.emplace_back(std::move(o.joints));
      if (o.hand) commands.emplace_back(*o.hand);
    }

    // Everything the master sends crosses the wire and the session.
    std::vector<protocol::Payload> payloads;
    if (sess.safe_hold) payloads.emplace_back(protocol::Reset{});
    for (const SlaveCommand& c : commands) payloads.push_back(protocol::to_payload(c));
    if (auto p = pedals_at.find(k); p != pedals_at.end()) {
      for (TeleopMode m : p->second) payloads.emplace_back(protocol::ModeSwitch{m, protocol::SwitchStatus::Request});
    }
    std::vector<session::InboundEvent> inbound;
    if (k == 1) inbound.push_back(session::InboundEvent::connected(kMaster));
    if (!dropped) {
      for (protocol::Payload& p : payloads) {
        protocol::TeleopMessage msg;
        msg.session = sess.session_id;
        msg.arm = 0;
        msg.seq = ++master_seq;
        msg.timestamp_us = now_us;
        msg.payload = std::move(p);
        inbound.push_back(session::InboundEvent::frame(kMaster, protocol::decode(protocol::encode(msg))));
      }
    }
    session::SessionStepResult sr = session::session_step(std::move(sess), inbound, now_us, gate);
    sess = std::move(sr.state);
    for (const std::string& d : sr.diagnostics) add_diagnostic(k, d);

    const SlaveState before = slave;
    if (sr.safe_hold_engaged) slave = engage_safe_hold(slave);
    std::vector<SlaveCommand> routed;
    for (const session::RoutedCommand& rc : sr.commands) {
      std::visit(detail::overloaded{
                     [&](const protocol::Estop&) { slave.estopped = true; },
                     [&](const protocol::Reset&) {
                       if (slave.estopped) {
                         SlaveState fresh = reset(model, slave);
                         fresh.tick = slave.tick;
                         fresh.time = slave.time;
                         slave = fresh;
                       } else {
                         slave = release_safe_hold(slave);
                       }
                     },
                     [&](const auto& p) {
                       if (protocol::is_command(p)) routed.push_back(protocol::to_command(p));
                     },
                 },
                 rc.payload);
    }
    StepResult step_result = step(model, slave, routed, dt);
    slave = std::move(step_result.state);
    for (const std::string& d : step_result.diagnostics) add_diagnostic(k, d);

    if (slave.estopped && !before.estopped) {
      const std::string why = step_result.diagnostics.empty() ? "estop" : step_result.diagnostics.back();
      report.estops.push_back({static_cast<std::uint64_t>(k), why});
    }
    if (slave.safe_hold && !before.safe_hold) {
      report.safe_holds.push_back({static_cast<std::uint64_t>(k), sr.diagnostics.empty() ? "safe-hold" : sr.diagnostics.back()});
    }
    if (slave.ik_failed) ++report.ik_failures;

    const double jump = inf_norm(slave.command - before.command);
    report.max_command_jump = std::max(report.max_command_jump, jump);
    if (switched) {
      report.switches.push_back({static_cast<std::uint64_t>(k), mode, jump, mirror_gap});
      report.max_switch_jump = std::max(report.max_switch_jump, jump);
    }

    out.log.push_back(tick_line(static_cast<std::uint64_t>(k), mode, replica, slave));
    check_waypoints(k, slave);
  }

  for (WaypointTracker& w : trackers) report.waypoints.push_back(w.result);
  report.final_state = slave;
  report.digest = digest_lines(out.log);
  out.log.push_back(json{{"digest", report.digest}, {"ticks", ticks}}.dump());
  return out;
}

std::string digest_lines(const std::vector<std::string>& lines) {
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (!ctx) throw std::runtime_error("digest: cannot allocate context");
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  bool ok = EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) == 1;
  for (const std::string& l : lines) {
    ok = ok && EVP_DigestUpdate(ctx, l.data(), l.size()) == 1 && EVP_DigestUpdate(ctx, "\n", 1) == 1;
  }
  ok = ok && EVP_DigestFinal_ex(ctx, md, &len) == 1;
  EVP_MD_CTX_free(ctx);
  if (!ok) throw std::runtime_error("digest: SHA-256 failed");
  return to_hex(md, len);
}

ReplayVerdict replay(const std::vector<std::string>& lines) {
  ReplayVerdict v;
  if (lines.size() < 3) {
    v.message = "log has " + std::to_string(lines.size()) + " lines; a run writes at least 3";
    return v;
  }
  ScenarioScript sc;
  try {
    const json header = json::parse(lines.front());
    if (!header.is_object() || header.value("glteleop_log", 0) != 1 || !header.contains("scenario")) {
      v.message = "first line is not a log header";
      return v;
    }
    sc = ScenarioScript::from_json_text(header.at("scenario").dump());
  } catch (const json::exception& e) {
    v.message = std::string("header: ") + e.what();
    return v;
  } catch (const ParseError& e) {
    v.message = std::string("header: ") + e.what();
    return v;
  }

  RunOutput fresh;
  try {
    fresh = run(sc);
  } catch (const std::exception& e) {
    v.message = std::string("re-simulation failed: ") + e.what();
    return v;
  }
  if (fresh.log.front() != lines.front()) {
    v.message = "header does not reproduce";
    return v;
  }
  const std::size_t body = fresh.log.size() - 2;  // tick lines
  for (std::size_t i = 1; i <= body; ++i) {
    if (i >= lines.size() - 1 || lines[i] != fresh.log[i]) {
      v.mismatch_tick = i - 1;
      v.message = "tick " + std::to_string(i - 1) + " differs from the re-simulation";
      return v;
    }
  }
  if (lines.size() != fresh.log.size()) {
    v.message = "log has " + std::to_string(lines.size()) + " lines; the re-simulation has " +
                std::to_string(fresh.log.size());
    return v;
  }
  if (lines.back() != fresh.log.back()) {
    v.message = "digest line does not match";
    return v;
  }
  v.ok = true;
  v.message = "replay matches, digest " + fresh.report.digest;
  return v;
}

ReplayVerdict replay_file(const std::string& path) {
  return replay(read_log(path));
}

void write_log(const std::string& path, const std::vector<std::string>& lines) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write log '" + path + "'");
  for (const std::string& l : lines) out << l << '\n';
  if (!out) throw ConfigError("error writing log '" + path + "'");
}

std::vector<std::string> read_log(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open log '" + path + "'");
  std::vector<std::string> lines;
  for (std::string l; std::getline(in, l);) lines.push_back(std::move(l));
  return lines;
}

HandCalibration calibrate_hand(std::istream& in, const HandCalibration& base) {
  std::optional<std::array<double, kExoEncoderCount>> open, closed;
  int line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream ss(line);
    std::string word;
    if (!(ss >> word)) continue;
    if (word != "open" && word != "closed") {
      throw ParseError("line " + std::to_string(line_no) + ": expected 'open' or 'closed', got '" + word + "'",
                       word, line_no);
    }
    std::array<double, kExoEncoderCount> angles{};
    for (double& a : angles) {
      if (!(ss >> a) || !std::isfinite(a)) {
        throw ParseError("line " + std::to_string(line_no) + ": '" + word + "' needs 6 finite encoder angles",
                         word, line_no);
      }
    }
    std::string extra;
    if (ss >> extra) {
      throw ParseError("line " + std::to_string(line_no) + ": unexpected '" + extra + "'", word, line_no);
    }
    (word == "open" ? open : closed) = angles;
  }
  if (!open) throw ParseError("no 'open' pose recorded", "open", line_no);
  if (!closed) throw ParseError("no 'closed' pose recorded", "closed", line_no);
  HandCalibration c = base;
  for (int i = 0; i < kExoEncoderCount; ++i) c.encoders[i] = {(*open)[i], (*closed)[i]};
  c.validate();
  return c;
}

}  // namespace glteleop::harness
