// Runs every primary acceptance criterion and prints one PASS/FAIL line each.
// Exit status is the number of failed criteria.

#include "glteleop/errors.hpp"
#include "glteleop/gl_controller.hpp"
#include "glteleop/hand_retarget.hpp"
#include "glteleop/harness.hpp"
#include "glteleop/kinematics.hpp"
#include "glteleop/protocol.hpp"
#include "glteleop/rotation.hpp"
#include "glteleop/session.hpp"
#include "glteleop/sim_slave.hpp"

#include "message_fuzz.hpp"
#include "test_support.hpp"

#include <Eigen/Geometry>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <iostream>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

using namespace glteleop;
using glteleop::testing::model_path;
using glteleop::testing::random_joints;
using glteleop::testing::source_path;
using json = nlohmann::json;

namespace {

constexpr double kPi = std::numbers::pi;

struct Verdict {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      if (pass) detail << "failed: ";
      else detail << "; ";
      detail << what;
      pass = false;
    }
  }
};

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

Eigen::Matrix3d random_matrix(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  return Eigen::Quaterniond(n(rng), n(rng), n(rng), n(rng)).normalized().toRotationMatrix();
}

RotationMatrix random_rotation(std::mt19937_64& rng) {
  return RotationMatrix::unchecked(random_matrix(rng));
}

Eigen::Matrix3d axis_rotation(char axis, double angle) {
  const Eigen::Vector3d v = axis == 'X' ? Eigen::Vector3d::UnitX()
                            : axis == 'Y' ? Eigen::Vector3d::UnitY()
                                          : Eigen::Vector3d::UnitZ();
  return Eigen::AngleAxisd(angle, v).toRotationMatrix();
}

// Intrinsic product built from Eigen angle-axis factors.
Eigen::Matrix3d oracle_euler(const EulerTriple& e) {
  const char* axes = e.convention == EulerConvention::XYZ ? "XYZ" : "XYX";
  return axis_rotation(axes[0], e.a) * axis_rotation(axes[1], e.b) * axis_rotation(axes[2], e.c);
}

void euler_round_trip(Verdict& v) {
  const Stopwatch clock;
  std::mt19937_64 rng(101);
  std::uniform_real_distribution<double> angle(-kPi, kPi);
  double worst = 0.0;
  double worst_oracle = 0.0;
  int gimbal = 0;
  auto check = [&](const Eigen::Matrix3d& m, EulerConvention c) {
    const RotationMatrix r = RotationMatrix::unchecked(m);
    const EulerTriple e = extract_euler(r, c);
    worst = std::max(worst, frobenius_distance(compose_euler(e), r));
    worst_oracle = std::max(worst_oracle, (oracle_euler(e) - m).norm());
  };
  for (const EulerConvention c : {EulerConvention::XYZ, EulerConvention::XYX}) {
    const char first = 'X';
    const char second = 'Y';
    const char third = c == EulerConvention::XYZ ? 'Z' : 'X';
    const std::vector<double> singular =
        c == EulerConvention::XYZ ? std::vector<double>{kPi / 2, -kPi / 2} : std::vector<double>{0.0, kPi};
    for (int i = 0; i < 100000; ++i) {
      if (i % 100 == 0) {
        const double b = singular[static_cast<std::size_t>(i / 100) % 2];
        check(axis_rotation(first, angle(rng)) * axis_rotation(second, b) * axis_rotation(third, angle(rng)), c);
        ++gimbal;
      } else {
        check(random_matrix(rng), c);
      }
    }
  }
  const double elapsed = clock.seconds();
  v.require(worst < 1e-9, "recomposition error " + std::to_string(worst));
  v.require(worst_oracle < 1e-9, "oracle recomposition error " + std::to_string(worst_oracle));
  v.require(elapsed < 10.0, "runtime " + std::to_string(elapsed) + " s");
  v.detail << "2x1e5 rotations (" << gimbal << " gimbal), max Frobenius " << worst << ", oracle " << worst_oracle
           << ", " << elapsed << " s";
}

Eigen::Quaterniond to_eigen(const UnitQuaternion& q) { return {q.w(), q.x(), q.y(), q.z()}; }

void clutch_law(Verdict& v) {
  std::mt19937_64 rng(202);
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto pose = [&] {
    return Pose{{0.3 * n(rng), 0.3 * n(rng), 0.3 * n(rng)}, UnitQuaternion(n(rng), n(rng), n(rng), n(rng))};
  };
  double pos_err = 0.0;
  double ang_err = 0.0;
  double axis_err = 0.0;
  for (int i = 0; i < 10000; ++i) {
    const double alpha_l = i % 10 == 0 ? 1.0 : std::max(unit(rng), 1e-3);
    const double alpha_r = i % 10 == 0 ? 1.0 : std::max(unit(rng), 1e-3);
    const Pose stylus0 = pose();
    const Pose stylus = pose();
    const Pose ee = pose();
    const CartesianTarget t = local_target(engage_local(stylus0, ee), stylus, ScalingFactors(alpha_l, alpha_r));

    const Eigen::Vector3d expected_offset = alpha_l * (stylus.position - stylus0.position);
    pos_err = std::max(pos_err, ((t.pose.position - ee.position) - expected_offset).cwiseAbs().maxCoeff());

    // Stylus displacement and slave displacement, both in their body frames.
    const Eigen::Quaterniond d_in = to_eigen(stylus0.orientation).conjugate() * to_eigen(stylus.orientation);
    const Eigen::Quaterniond d_out = to_eigen(ee.orientation).conjugate() * to_eigen(t.pose.orientation);
    auto angle_of = [](const Eigen::Quaterniond& q) { return 2.0 * std::atan2(q.vec().norm(), std::abs(q.w())); };
    auto axis_of = [](const Eigen::Quaterniond& q) {
      return Eigen::Vector3d((q.w() < 0 ? -1.0 : 1.0) * q.vec().normalized());
    };
    const double theta = angle_of(d_in);
    ang_err = std::max(ang_err, std::abs(angle_of(d_out) - alpha_r * theta));
    if (theta > 1e-6) axis_err = std::max(axis_err, (axis_of(d_out) - axis_of(d_in)).norm());
  }
  int rejected = 0;
  for (const auto& bad : std::vector<std::pair<double, double>>{{0.0, 1.0}, {1.0, 0.0}, {1.5, 1.0}, {1.0, 1.0 + 1e-12}}) {
    try {
      ScalingFactors(bad.first, bad.second);
    } catch (const ConfigError&) {
      ++rejected;
    }
  }
  for (const double bad : {0.0, 1.5}) {
    try {
      scaled_displacement(UnitQuaternion::identity(), UnitQuaternion::identity(), bad);
    } catch (const ConfigError&) {
      ++rejected;
    }
  }
  v.require(pos_err < 1e-12, "position error " + std::to_string(pos_err));
  v.require(ang_err < 1e-12, "angle error " + std::to_string(ang_err));
  v.require(axis_err < 1e-12, "axis error " + std::to_string(axis_err));
  v.require(rejected == 6, "rejected " + std::to_string(rejected) + " of 6 invalid scales");
  v.detail << "1e4 triples, position " << pos_err << ", angle " << ang_err << ", axis " << axis_err
           << ", invalid scales rejected " << rejected << "/6";
}

harness::ScenarioScript switch_scenario(int index) {
  const SlaveModel model = SlaveModel::load(model_path("piper6.json"));
  std::mt19937_64 rng(3000 + static_cast<std::uint64_t>(index));
  std::uniform_real_distribution<double> joint(-0.25, 0.25);
  std::uniform_real_distribution<double> stylus(-0.02, 0.02);
  std::uniform_real_distribution<double> gap(0.4, 0.8);
  const int switches = 3 + index % 4;

  json events = json::array();
  json haptic = {{"p", {0.0, 0.0, 0.0}}, {"q", {1, 0, 0, 0}}};
  events.push_back({{"t", 0.0}, {"haptic", haptic}});
  double t = 0.1;
  TeleopMode mode = TeleopMode::Global;
  for (int s = 0; s < switches; ++s) {
    if (mode == TeleopMode::Global) {
      std::vector<double> goal(model.home.data(), model.home.data() + model.home.size());
      for (double& g : goal) g += joint(rng);
      events.push_back({{"t", t}, {"replica", goal}});
      t += gap(rng);
      events.push_back({{"t", t}, {"pedal", "local"}});
      mode = TeleopMode::Local;
    } else {
      t += 0.1;
      haptic["p"] = {stylus(rng), stylus(rng), stylus(rng)};
      events.push_back({{"t", t}, {"haptic", haptic}});
      t += gap(rng);
      events.push_back({{"t", t}, {"pedal", "global"}});
      mode = TeleopMode::Global;
    }
    t += 0.1;
  }
  json doc = {{"scenario_version", 1},
              {"name", "switch_" + std::to_string(index)},
              {"model", "../models/piper6.json"},
              {"controller", "../configs/controller.json"},
              {"mode", "temporal"},
              {"duration", t + 2.0},
              {"events", events}};
  return harness::ScenarioScript::from_json_text(doc.dump(), source_path("scenarios"));
}

void switch_continuity(Verdict& v) {
  double worst_jump = 0.0;
  double worst_gap = 0.0;
  std::size_t fewest = 1000;
  std::size_t estops = 0;
  int handovers = 0;
  for (int i = 0; i < 50; ++i) {
    const harness::RunReport r = harness::run(switch_scenario(i)).report;
    fewest = std::min(fewest, r.switches.size());
    estops += r.estops.size();
    for (const harness::SwitchEvent& s : r.switches) {
      worst_jump = std::max(worst_jump, s.command_jump);
      if (s.to == TeleopMode::Global) {
        worst_gap = std::max(worst_gap, s.mirror_gap);
        ++handovers;
      }
    }
  }
  v.require(fewest >= 3, "a scenario switched only " + std::to_string(fewest) + " times");
  v.require(worst_jump < 1e-9, "switch jump " + std::to_string(worst_jump));
  v.require(worst_gap < 1e-3, "Local->Global granted at mirror gap " + std::to_string(worst_gap));
  v.require(handovers >= 50, "only " + std::to_string(handovers) + " Local->Global grants");
  v.require(estops == 0, std::to_string(estops) + " e-stops");
  v.detail << "50 scenarios, >= " << fewest << " switches each, max jump " << worst_jump
           << " rad, " << handovers << " Local->Global grants, max mirror gap at grant " << worst_gap << " rad";
}

void wrist_mapping(Verdict& v) {
  std::mt19937_64 rng(404);
  double injection = 0.0;
  double invariance = 0.0;
  double oracle = 0.0;
  for (int i = 0; i < 10000; ++i) {
    const ImuCalibration c{random_rotation(rng), random_rotation(rng)};
    const RotationMatrix s = random_rotation(rng);
    injection = std::max(injection, frobenius_distance(wrist_rotation(c, {c.forearm_home, c.hand_home * s}), s));

    const ImuPair now{random_rotation(rng), random_rotation(rng)};
    const RotationMatrix w = random_rotation(rng);
    const RotationMatrix rs = wrist_rotation(c, now);
    invariance = std::max(invariance, frobenius_distance(
                                          rs, wrist_rotation({w * c.forearm_home, w * c.hand_home},
                                                             {w * now.forearm, w * now.hand})));
    const Eigen::Matrix3d expected = now.forearm.matrix().transpose() * c.forearm_home.matrix() *
                                     c.hand_home.matrix().transpose() * now.hand.matrix();
    oracle = std::max(oracle, (rs.matrix() - expected).norm());
  }

  // Each of the 7 joints is written every tick: proximal from the replica,
  // distal from the wrist angles.
  const KinematicChain chain = KinematicChain::load(model_path("flexiv7.json"));
  std::uniform_real_distribution<double> small(-0.5, 0.5);
  int uncovered = 0;
  for (int i = 0; i < 1000; ++i) {
    JointVector replica(4);
    for (int k = 0; k < 4; ++k) replica[k] = small(rng);
    const EulerTriple e{small(rng), small(rng), small(rng), EulerConvention::XYZ};
    const ImuCalibration home{};
    const ImuPair now{RotationMatrix::identity(), compose_euler(e)};
    const SpatialOutput out = spatial_step(chain, replica, home, now, std::nullopt);
    const JointVector& q = out.joints.joints;
    if (q.size() != 7) {
      ++uncovered;
      continue;
    }
    for (int k = 0; k < 4; ++k) uncovered += q[k] != replica[k];
    uncovered += std::abs(q[4] - e.a) > 1e-9;
    uncovered += std::abs(q[5] - e.b) > 1e-9;
    uncovered += std::abs(q[6] - e.c) > 1e-9;
  }
  v.require(injection < 1e-12, "body-frame injection " + std::to_string(injection));
  v.require(invariance < 1e-12, "world-rotation invariance " + std::to_string(invariance));
  v.require(oracle < 1e-12, "oracle mismatch " + std::to_string(oracle));
  v.require(uncovered == 0, std::to_string(uncovered) + " joints not driven");
  v.detail << "injection " << injection << ", invariance " << invariance << ", oracle " << oracle
           << ", 1000 spatial steps drive all 7 joints";
}

void inverse_kinematics(Verdict& v) {
  for (const char* file : {"piper6.json", "flexiv7.json"}) {
    const KinematicChain chain = KinematicChain::load(model_path(file));
    std::mt19937_64 rng(505);
    std::uniform_real_distribution<double> perturb(-0.3, 0.3);
    int converged = 0;
    int violations = 0;
    for (int i = 0; i < 1000; ++i) {
      const JointVector q = random_joints(chain, rng);
      JointVector seed = q;
      for (int k = 0; k < seed.size(); ++k) seed[k] += perturb(rng);
      const IkSolution s = solve_ik(chain, forward_kinematics(chain, q), chain.clamp(seed));
      violations += !chain.within_limits(s.joints);
      // Residuals are recomputed from forward kinematics rather than trusted.
      const PoseError err = pose_error(forward_kinematics(chain, s.joints), forward_kinematics(chain, q));
      converged += s.converged && err.position < 1e-4 && err.angle < 1e-3;
    }
    v.require(converged >= 990, std::string(file) + " converged " + std::to_string(converged));
    v.require(violations == 0, std::string(file) + " limit violations " + std::to_string(violations));
    v.detail << file << " " << converged << "/1000, " << violations << " violations; ";
  }

  const SlaveModel model = SlaveModel::load(model_path("piper6.json"));
  SlaveState state = initial_state(model);
  const JointVector before = state.joints;
  bool flagged = false;
  bool threw = false;
  try {
    const StepResult r = step(model, state, CartesianTarget{Pose{{5.0, 0.0, 0.0}, UnitQuaternion::identity()}}, 0.01);
    flagged = r.state.ik_failed && !r.diagnostics.empty() && r.state.joints == before &&
              r.state.command == before && !r.state.estopped;
  } catch (const std::exception&) {
    threw = true;
  }
  v.require(flagged && !threw, "unreachable target not held and flagged");
  v.detail << "unreachable target held and flagged";
}

harness::ScenarioScript precision_script(double alpha_l, std::uint64_t seed) {
  harness::ScenarioScript s = harness::ScenarioScript::load(source_path("scenarios/precision_dots.json"));
  s.controller.scale = ScalingFactors(alpha_l, s.controller.scale.rotational());
  s.noise = {seed, 0.002};
  return s;
}

void precision(Verdict& v) {
  const Stopwatch clock;
  double coarse = 0.0;
  double fine = 0.0;
  for (std::uint64_t seed = 1; seed <= 100; ++seed) {
    coarse += harness::run(precision_script(1.0, seed)).report.waypoints.back().position_error;
    fine += harness::run(precision_script(0.2, seed)).report.waypoints.back().position_error;
  }
  const double elapsed = clock.seconds();
  const double ratio = fine / coarse;
  const double relative = std::abs(ratio / 0.2 - 1.0);

  const harness::RunReport shipped = harness::run(harness::ScenarioScript::load(source_path("scenarios/precision_dots.json"))).report;
  const double final_error = shipped.waypoints.back().position_error;

  v.require(relative <= 0.15, "ratio " + std::to_string(ratio));
  v.require(elapsed < 30.0, "runtime " + std::to_string(elapsed) + " s");
  v.require(final_error <= 1e-3 && shipped.passed(), "alpha_l = 0.1 final error " + std::to_string(final_error));
  v.detail << "mean final error " << coarse / 100 * 1e3 << " mm at 1.0, " << fine / 100 * 1e3
           << " mm at 0.2, ratio " << ratio << " (" << relative * 100 << "% off 0.2), " << elapsed
           << " s; alpha_l 0.1 final " << final_error * 1e3 << " mm";
}

void full_range(Verdict& v) {
  const harness::ScenarioScript script = harness::ScenarioScript::load(source_path("scenarios/full_range_flexiv.json"));
  const harness::RunReport r = harness::run(script).report;
  const KinematicChain& chain = script.slave_model().chain;
  JointVector lo = JointVector::Constant(chain.dof(), std::numeric_limits<double>::infinity());
  JointVector hi = -lo;
  for (const harness::Waypoint& w : script.waypoints) {
    if (!w.joints) continue;
    lo = lo.cwiseMin(*w.joints);
    hi = hi.cwiseMax(*w.joints);
  }
  double narrowest = 1.0;
  for (int k = 0; k < chain.dof(); ++k) {
    const Link& l = chain.links()[k];
    narrowest = std::min(narrowest, (hi[k] - lo[k]) / (l.max - l.min));
  }
  bool all_reached = !r.waypoints.empty();
  for (const harness::WaypointResult& w : r.waypoints) all_reached = all_reached && w.reached;
  v.require(narrowest >= 0.95, "coverage " + std::to_string(narrowest));
  v.require(all_reached && r.passed(), "waypoint missed");
  v.detail << chain.dof() << " joints, narrowest waypoint coverage " << narrowest * 100 << "% of range, "
           << r.waypoints.size() << " waypoints reached";
}

void hand_retargeting(Verdict& v) {
  const HandCalibration c = HandCalibration::load(source_path("configs/hand_calibration.json"));
  auto at = [&](double f) {
    ExoskeletonReading r;
    for (int i = 0; i < kExoEncoderCount; ++i) {
      r.encoders[i] = c.encoders[i].open + f * (c.encoders[i].closed - c.encoders[i].open);
    }
    return r;
  };
  int unequal = 0;
  int decreasing = 0;
  double previous = -1.0;
  for (int i = 0; i < 1000; ++i) {
    const HandTarget t = retarget(at(i / 999.0), c);
    for (int ch : {HandTarget::kMiddle, HandTarget::kRing, HandTarget::kPinky}) {
      unequal += t.values[ch] != t.values[HandTarget::kIndex];
    }
    decreasing += t.values[HandTarget::kIndex] < previous;
    previous = t.values[HandTarget::kIndex];
  }
  const HandTarget open = retarget(at(0.0), c);
  const HandTarget closed = retarget(at(1.0), c);
  bool endpoints = true;
  for (int ch = 0; ch < HandTarget::kChannels; ++ch) {
    endpoints = endpoints && open.values[ch] == 0.0 && closed.values[ch] == 1.0;
  }
  v.require(unequal == 0, std::to_string(unequal) + " unequal channels");
  v.require(decreasing == 0, std::to_string(decreasing) + " decreasing steps");
  v.require(endpoints, "endpoints not exactly 0 and 1");
  v.detail << "1000-point sweep: channel mismatches " << unequal << ", decreases " << decreasing
           << ", endpoints exact " << (endpoints ? "yes" : "no");
}

class NoArms : public session::ArmGate {
 public:
  bool has_arm(int arm) const override { return arm == 0; }
  session::GateResult request_mode(int, TeleopMode) override { return session::GateResult::Unchanged; }
  TeleopMode mode(int) const override { return TeleopMode::Global; }
  bool switch_pending(int) const override { return false; }
};

void determinism_and_protocol(Verdict& v) {
  int mismatched = 0;
  int scenarios = 0;
  for (const char* name : {"empty", "precision_dots", "full_range_flexiv", "mode_switch_stress", "hand_sequence", "dropout"}) {
    const harness::ScenarioScript s = harness::ScenarioScript::load(source_path(std::string("scenarios/") + name + ".json"));
    const harness::RunOutput a = harness::run(s);
    const harness::RunOutput b = harness::run(s);
    mismatched += a.report.digest != b.report.digest || a.log != b.log || !harness::replay(a.log).ok;
    ++scenarios;
  }

  glteleop::testing::MessageFuzzer fuzz(909);
  int lossy = 0;
  for (int i = 0; i < 100000; ++i) {
    const protocol::TeleopMessage m = fuzz.next();
    const std::vector<std::uint8_t> bytes = protocol::encode(m);
    const protocol::TeleopMessage back = protocol::decode(bytes);
    lossy += !(back == m) || protocol::encode(back) != bytes;
  }

  // Last frame at t = 0, then silence; the session is stepped at 100 Hz of
  // simulated time.
  NoArms gate;
  session::SessionState state;
  protocol::TeleopMessage hb;
  hb.seq = 1;
  hb.payload = protocol::Heartbeat{};
  const std::vector<session::InboundEvent> first{session::InboundEvent::connected(1),
                                                 session::InboundEvent::frame(1, hb)};
  state = session::session_step(state, first, 0, gate).state;
  std::int64_t engaged_at = -1;
  for (std::int64_t now = 10'000; now <= 1'000'000 && engaged_at < 0; now += 10'000) {
    const session::SessionStepResult r = session::session_step(state, {}, now, gate);
    state = r.state;
    if (r.safe_hold_engaged) engaged_at = now;
  }

  const harness::ScenarioScript dropout = harness::ScenarioScript::load(source_path("scenarios/dropout.json"));
  const harness::RunReport dr = harness::run(dropout).report;
  const double rate = dropout.controller.control_rate_hz;
  const double hold_delay =
      dr.safe_holds.empty() ? INFINITY : static_cast<double>(dr.safe_holds.front().tick) / rate - dropout.dropouts.front().t;

  v.require(mismatched == 0, std::to_string(mismatched) + " scenarios not bit-identical");
  v.require(lossy == 0, std::to_string(lossy) + " lossy round-trips");
  v.require(engaged_at > 0 && engaged_at <= 300'000, "session safe-hold at " + std::to_string(engaged_at) + " us");
  v.require(hold_delay <= 0.3 + 1e-9, "scenario safe-hold after " + std::to_string(hold_delay) + " s");
  v.detail << scenarios << " scenarios bit-identical and replayable, 1e5 fuzzed round-trips lossless " << (lossy == 0 ? "yes" : "no")
           << ", safe-hold " << engaged_at / 1000 << " ms after silence (session), " << hold_delay * 1e3
           << " ms into the dropout scenario";
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<void(Verdict&)>>> criteria{
      {"euler-round-trip", euler_round_trip},
      {"clutch-law", clutch_law},
      {"switch-continuity", switch_continuity},
      {"wrist-mapping", wrist_mapping},
      {"inverse-kinematics", inverse_kinematics},
      {"precision-mechanism", precision},
      {"full-range", full_range},
      {"hand-retargeting", hand_retargeting},
      {"determinism-and-protocol", determinism_and_protocol},
  };
  int failed = 0;
  for (const auto& [name, check] : criteria) {
    Verdict v;
    try {
      check(v);
    } catch (const std::exception& e) {
      v.require(false, std::string("exception: ") + e.what());
    }
    failed += !v.pass;
    std::cout << (v.pass ? "PASS " : "FAIL ") << name << ": " << v.detail.str() << std::endl;
  }
  return failed;
}
