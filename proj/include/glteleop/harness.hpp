#pragma once

#include "glteleop/gl_controller.hpp"
#include "glteleop/hand_retarget.hpp"
#include "glteleop/sim_slave.hpp"

#include <json.hpp>

#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace glteleop::harness {

enum class Decoupling { Temporal, Spatial };

/// Gaussian stylus position noise, one independent sample per axis per tick.
struct NoiseSpec {
  std::uint64_t seed = 0;
  double sigma = 0.0;  // m
};

/// Standard normal samples that are identical on every platform:
/// std::mt19937_64 words turned into uniforms u = ((x >> 11) + 1) * 2^-53
/// in (0, 1], then Box-Muller n = sqrt(-2 ln u1) * cos(2 pi u2).
class GaussianSource {
 public:
  explicit GaussianSource(std::uint64_t seed) : rng_(seed) {}
  double next();

 private:
  std::mt19937_64 rng_;
};

struct HapticKey {
  double t = 0.0;
  Pose pose;
};
struct ReplicaKey {
  double t = 0.0;
  JointVector joints;
};
struct PedalEvent {
  double t = 0.0;
  TeleopMode mode = TeleopMode::Global;
};
struct GripperEvent {
  double t = 0.0;
  double value = 0.0;
};
struct ImuKey {
  double t = 0.0;
  UnitQuaternion forearm;
  UnitQuaternion hand;
};
struct ExoKey {
  double t = 0.0;
  std::array<double, kExoEncoderCount> encoders{};
};
/// No frames reach the session from t for `duration` seconds. If the
/// silence engaged safe-hold, the master sends Reset once it is back.
struct Dropout {
  double t = 0.0;
  double duration = 0.0;
};

struct Waypoint {
  std::string name;
  double t = 0.0;
  std::optional<Eigen::Vector3d> position;
  /// Position relative to the end effector's initial position.
  std::optional<Eigen::Vector3d> offset;
  std::optional<UnitQuaternion> orientation;
  std::optional<JointVector> joints;
  double pos_tol = 1e-3;    // m
  double ang_tol = 1e-2;    // rad
  double joint_tol = 1e-3;  // rad
};

/// A declarative run: robot, controller, master-device timeline and goals.
/// The model, controller and hand calibration are held resolved, so a
/// script serializes into a self-contained document.
struct ScenarioScript {
  std::string name = "scenario";
  nlohmann::json model;
  /// Merged over the model's "ik" block.
  nlohmann::json ik_override = nlohmann::json::object();
  ControllerConfig controller;
  std::optional<HandCalibration> hand_calibration;
  Decoupling mode = Decoupling::Temporal;
  double duration = 0.0;
  /// Joint speed at which the operator moves the replica, rad/s.
  double operator_speed = 0.5;
  /// The operator moves the stylus 1/alpha_l further to cover the same
  /// slave distance; noise is added afterwards.
  bool operator_compensates_scale = false;
  NoiseSpec noise;
  ImuCalibration imu_home;

  std::vector<HapticKey> haptic;
  std::vector<ReplicaKey> replica;
  std::vector<PedalEvent> pedals;
  std::vector<GripperEvent> gripper;
  std::vector<ImuKey> imu;
  std::vector<ExoKey> exo;
  std::vector<Dropout> dropouts;
  std::vector<Waypoint> waypoints;

  /// Parses a scenario document. Relative model / controller / calibration
  /// paths resolve against `base_dir`. Throws ParseError naming the field
  /// and its line.
  static ScenarioScript from_json_text(const std::string& text, const std::string& base_dir = ".");
  static ScenarioScript load(const std::string& path);

  /// Replaces the robot model with the document at `path`.
  void set_model_file(const std::string& path);
  void set_controller_file(const std::string& path);

  nlohmann::json to_json() const;
  SlaveModel slave_model() const;
  int ticks() const;
};

struct WaypointResult {
  std::string name;
  double t = 0.0;
  double position_error = 0.0;  // m, 0 when the waypoint has no position
  double angle_error = 0.0;     // rad
  double joint_error = 0.0;     // rad, infinity norm
  bool reached = false;
  /// First time since the previous waypoint at which the goal was within
  /// tolerance.
  std::optional<double> completion_time;
};

struct SwitchEvent {
  std::uint64_t tick = 0;
  TeleopMode to = TeleopMode::Global;
  /// Change of the slave joint command across the switch tick.
  double command_jump = 0.0;
  /// Replica-to-slave distance when the switch was decided.
  double mirror_gap = 0.0;
};

struct TickEvent {
  std::uint64_t tick = 0;
  std::string what;
};

struct RunReport {
  std::string scenario;
  std::uint64_t ticks = 0;
  std::vector<WaypointResult> waypoints;
  double max_command_jump = 0.0;
  double max_switch_jump = 0.0;
  std::vector<SwitchEvent> switches;
  std::vector<TickEvent> estops;
  std::vector<TickEvent> safe_holds;
  std::uint64_t ik_failures = 0;
  std::uint64_t clamp_events = 0;
  std::vector<std::string> diagnostics;
  std::string digest;
  SlaveState final_state;

  bool passed() const;
  nlohmann::json to_json() const;
};

struct RunOutput {
  RunReport report;
  /// Header line, one line per tick (tick 0 is the initial state) and the
  /// digest line, without trailing newlines.
  std::vector<std::string> log;
};

/// Executes the scenario through controller, wire protocol, session and
/// simulator at the controller tick rate.
RunOutput run(const ScenarioScript& script);

struct ReplayVerdict {
  bool ok = false;
  /// Tick of the first line that differs from the re-simulation.
  std::optional<std::uint64_t> mismatch_tick;
  std::string message;
};

/// Re-simulates the scenario embedded in a log and compares every line.
ReplayVerdict replay(const std::vector<std::string>& log_lines);
ReplayVerdict replay_file(const std::string& path);

void write_log(const std::string& path, const std::vector<std::string>& lines);
std::vector<std::string> read_log(const std::string& path);

/// SHA-256 of the lines, each terminated by '\n', as lowercase hex.
std::string digest_lines(const std::vector<std::string>& lines);

/// Records open and closed encoder poses from lines of the form
/// "open a0 .. a5" and "closed a0 .. a5" (radians; '#' starts a comment).
/// Later lines override earlier ones. Throws ParseError on malformed input
/// and ConfigError when the endpoints do not make a valid calibration.
HandCalibration calibrate_hand(std::istream& in, const HandCalibration& base = {});

}  // namespace glteleop::harness
