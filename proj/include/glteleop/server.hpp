#pragma once

#include "glteleop/sim_slave.hpp"

#include <cstdint>
#include <functional>
#include <memory>
#include <string>

namespace glteleop::server {

struct ServerConfig {
  std::string bind_address = "127.0.0.1";
  /// 0 picks a free port.
  std::uint16_t tcp_port = 7700;
  std::uint16_t ws_port = 7701;
  std::string ws_path = "/teleop";

  /// Arm 0 runs temporal decoupling on this model, arm 1 spatial decoupling.
  std::string temporal_model;
  std::string spatial_model;
  std::string controller;
  std::string hand_calibration;

  std::int64_t heartbeat_timeout_us = 300'000;
  /// Every n-th tick broadcasts a StateUpdate per arm.
  int state_every = 1;
  /// Receives one line per notable server event (connections, mode
  /// switches, safe-hold, protocol errors). Defaults to std::clog.
  std::function<void(const std::string&)> log;

  /// Fills empty model and config paths with the shipped files.
  void apply_defaults();
};

/// Session server: framed TCP and a websocket gateway carrying identical
/// frames (one frame per binary websocket message).
///
/// A single routing thread owns the session and the arms and ticks at the
/// controller rate. Connection tasks only decode frames and queue them for
/// the routing thread, which answers through per-connection write queues.
class Server {
 public:
  explicit Server(ServerConfig config);
  ~Server();
  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  /// Binds both listeners and starts the network and routing threads.
  /// Throws ConfigError on bad configuration, std::system_error when a port
  /// cannot be bound.
  void start();
  void stop();

  std::uint16_t tcp_port() const;
  std::uint16_t ws_port() const;

  /// Snapshots published by the routing thread after every tick.
  StateBroadcaster& broadcaster(int arm);

  /// Blocks until SIGINT or SIGTERM, then stops.
  void wait_for_signal();

  struct Impl;

 private:
  std::unique_ptr<Impl> impl_;
};

}  // namespace glteleop::server
