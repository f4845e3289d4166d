#include "glteleop/errors.hpp"
#include "glteleop/harness.hpp"
#include "glteleop/server.hpp"

#include <CLI11.hpp>

#include <csignal>
#include <fstream>
#include <iostream>

using namespace glteleop;

namespace {

constexpr int kPass = 0;
constexpr int kScenarioFailure = 1;
constexpr int kUsageError = 2;

int cmd_run(const std::string& scenario, const std::string& model, const std::string& config,
            const std::string& log, const std::string& report_path) {
  harness::ScenarioScript sc = harness::ScenarioScript::load(scenario);
  if (!model.empty()) sc.set_model_file(model);
  if (!config.empty()) sc.set_controller_file(config);
  const harness::RunOutput out = harness::run(sc);
  if (!log.empty()) harness::write_log(log, out.log);

  const nlohmann::json report = out.report.to_json();
  if (!report_path.empty()) {
    std::ofstream f(report_path);
    if (!f) throw ConfigError("cannot write report '" + report_path + "'");
    f << report.dump(2) << '\n';
  }
  const harness::RunReport& r = out.report;
  std::cout << r.scenario << ": " << r.ticks << " ticks, digest " << r.digest << '\n';
  for (const harness::WaypointResult& w : r.waypoints) {
    std::cout << "  " << (w.reached ? "reached " : "MISSED  ") << w.name << " at t=" << w.t
              << "  pos " << w.position_error << " m  ang " << w.angle_error << " rad  joint "
              << w.joint_error << " rad";
    if (w.completion_time) std::cout << "  first within tolerance at " << *w.completion_time << " s";
    std::cout << '\n';
  }
  std::cout << "  switches " << r.switches.size() << ", max switch jump " << r.max_switch_jump
            << " rad, max command jump " << r.max_command_jump << " rad\n";
  std::cout << "  e-stops " << r.estops.size() << ", safe-holds " << r.safe_holds.size()
            << ", ik failures " << r.ik_failures << ", clamps " << r.clamp_events << '\n';
  for (const harness::TickEvent& e : r.estops) std::cout << "  e-stop at tick " << e.tick << ": " << e.what << '\n';
  std::cout << (r.passed() ? "PASS" : "FAIL") << '\n';
  return r.passed() ? kPass : kScenarioFailure;
}

int cmd_replay(const std::string& log) {
  const harness::ReplayVerdict v = harness::replay_file(log);
  std::cout << (v.ok ? "PASS: " : "FAIL: ") << v.message << '\n';
  return v.ok ? kPass : kScenarioFailure;
}

int cmd_calibrate(const std::string& base, const std::string& output) {
  HandCalibration start;
  if (!base.empty()) start = HandCalibration::load(base);
  std::cerr << "Enter 'open a0 .. a5' with the hand fully open and 'closed a0 .. a5' with it\n"
               "fully closed (encoder angles in radians), then end input.\n";
  const HandCalibration c = harness::calibrate_hand(std::cin, start);
  if (output.empty()) {
    std::cout << c.to_json_text() << '\n';
  } else {
    c.save(output);
    std::cerr << "wrote " << output << '\n';
  }
  return kPass;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Global-local teleoperation: scenario runner, replay, hand calibration and server"};
  app.require_subcommand(1);

  std::string scenario, model, config, log, report;
  CLI::App* run = app.add_subcommand("run", "Run a scenario and report waypoint errors and continuity");
  run->add_option("scenario", scenario, "Scenario file")->required()->check(CLI::ExistingFile);
  run->add_option("--model", model, "Robot model overriding the scenario's")->check(CLI::ExistingFile);
  run->add_option("--config", config, "Controller config overriding the scenario's")->check(CLI::ExistingFile);
  run->add_option("--log", log, "Write the state log here");
  run->add_option("--report", report, "Write the JSON report here");

  std::string replay_log;
  CLI::App* replay = app.add_subcommand("replay", "Re-simulate a log and verify it line by line");
  replay->add_option("log", replay_log, "Log written by run --log")->required()->check(CLI::ExistingFile);

  std::string calib_base, calib_out;
  CLI::App* calibrate = app.add_subcommand("calibrate-hand", "Record open/closed exoskeleton poses from stdin");
  calibrate->add_option("--base", calib_base, "Calibration providing link lengths and output ranges")
      ->check(CLI::ExistingFile);
  calibrate->add_option("-o,--output", calib_out, "Write the calibration file here (default stdout)");

  server::ServerConfig serve_cfg;
  CLI::App* serve = app.add_subcommand("serve", "Start the protocol server and websocket gateway");
  serve->add_option("--port", serve_cfg.tcp_port, "TCP port for framed connections");
  serve->add_option("--ws-port", serve_cfg.ws_port, "Websocket gateway port");
  serve->add_option("--ws-path", serve_cfg.ws_path, "Websocket path");
  serve->add_option("--bind", serve_cfg.bind_address, "Listen address");
  serve->add_option("--temporal-model", serve_cfg.temporal_model, "Arm 0 model (temporal decoupling)")
      ->check(CLI::ExistingFile);
  serve->add_option("--spatial-model", serve_cfg.spatial_model, "Arm 1 model (spatial decoupling)")
      ->check(CLI::ExistingFile);
  serve->add_option("--config", serve_cfg.controller, "Controller config")->check(CLI::ExistingFile);
  serve->add_option("--hand-calibration", serve_cfg.hand_calibration, "Hand calibration for arm 1")
      ->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kPass : kUsageError;
  }

  try {
    if (*run) return cmd_run(scenario, model, config, log, report);
    if (*replay) return cmd_replay(replay_log);
    if (*calibrate) return cmd_calibrate(calib_base, calib_out);
    if (*serve) {
      server::Server srv(serve_cfg);
      srv.start();
      std::cout << "listening: tcp " << srv.tcp_port() << ", websocket " << srv.ws_port() << serve_cfg.ws_path
                << std::endl;
      srv.wait_for_signal();
      return kPass;
    }
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsageError;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsageError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kScenarioFailure;
  }
  return kUsageError;
}
