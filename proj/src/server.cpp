#include "glteleop/server.hpp"

#include "glteleop/arm_runtime.hpp"
#include "glteleop/errors.hpp"
#include "glteleop/protocol.hpp"
#include "glteleop/session.hpp"

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>

#include <atomic>
#include <chrono>
#include <csignal>
#include <deque>
#include <iostream>
#include <map>
#include <mutex>
#include <thread>

#ifndef GLTELEOP_DATA_DIR
#define GLTELEOP_DATA_DIR "."
#endif

namespace glteleop::server {

namespace asio = boost::asio;
namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
using tcp = asio::ip::tcp;
using Bytes = std::vector<std::uint8_t>;
using SharedBytes = std::shared_ptr<const Bytes>;

void ServerConfig::apply_defaults() {
  const std::string root = GLTELEOP_DATA_DIR;
  if (temporal_model.empty()) temporal_model = root + "/models/piper6.json";
  if (spatial_model.empty()) spatial_model = root + "/models/flexiv7.json";
  if (controller.empty()) controller = root + "/configs/controller.json";
  if (hand_calibration.empty()) hand_calibration = root + "/configs/hand_calibration.json";
  if (!log) log = [](const std::string& line) { std::clog << line << std::endl; };
}

namespace {

// What connection tasks hand to the routing thread.
struct Inbound {
  session::InboundEvent event;
  /// Set instead of a frame when the bytes could not be decoded.
  std::optional<protocol::Error> error;
};

class Connection : public std::enable_shared_from_this<Connection> {
 public:
  explicit Connection(session::EndpointId id) : id_(id) {}
  virtual ~Connection() = default;
  session::EndpointId id() const { return id_; }
  virtual void start() = 0;
  /// Thread-safe; frames are written in call order.
  virtual void send(SharedBytes frame) = 0;
  virtual void close() = 0;

 private:
  session::EndpointId id_;
};

}  // namespace

struct Server::Impl {
  explicit Impl(ServerConfig c) : config(std::move(c)) {}

  ServerConfig config;
  asio::io_context ioc;
  std::optional<asio::executor_work_guard<asio::io_context::executor_type>> work;
  std::optional<tcp::acceptor> tcp_acceptor;
  std::optional<tcp::acceptor> ws_acceptor;
  std::thread net_thread;
  std::thread routing_thread;
  std::atomic<bool> stopping{false};
  bool started = false;

  std::mutex conn_mutex;
  std::map<session::EndpointId, std::shared_ptr<Connection>> connections;
  std::atomic<session::EndpointId> next_id{1};

  std::mutex inbound_mutex;
  std::vector<Inbound> inbound;

  // Owned by the routing thread once started.
  ArmSet arms;
  session::SessionState session;
  std::vector<std::unique_ptr<StateBroadcaster>> broadcasters;
  double dt = 0.01;

  void log(const std::string& line) {
    if (config.log) config.log(line);
  }

  void push(Inbound in) {
    std::lock_guard lock(inbound_mutex);
    inbound.push_back(std::move(in));
  }

  void connected(const std::shared_ptr<Connection>& c, const std::string& kind) {
    {
      std::lock_guard lock(conn_mutex);
      connections[c->id()] = c;
    }
    log("endpoint " + std::to_string(c->id()) + " connected (" + kind + ")");
    push({session::InboundEvent::connected(c->id()), std::nullopt});
  }

  void disconnected(session::EndpointId id) {
    {
      std::lock_guard lock(conn_mutex);
      if (connections.erase(id) == 0) return;
    }
    log("endpoint " + std::to_string(id) + " disconnected");
    push({session::InboundEvent::disconnected(id), std::nullopt});
  }

  void received(session::EndpointId id, std::string_view body) {
    try {
      push({session::InboundEvent::frame(id, protocol::decode_body(body)), std::nullopt});
    } catch (const NegotiationError& e) {
      push({session::InboundEvent::frame(id, {}), protocol::Error{"version", e.what()}});
    } catch (const ProtocolError& e) {
      push({session::InboundEvent::frame(id, {}), protocol::Error{"protocol", e.what()}});
    }
  }

  void accept_tcp();
  void accept_ws();
  void routing_loop();
  void route_tick(std::int64_t now_us, std::uint64_t tick);
};

namespace {

class TcpConnection : public Connection {
 public:
  TcpConnection(session::EndpointId id, tcp::socket socket, Server::Impl& server)
      : Connection(id), socket_(std::move(socket)), strand_(asio::make_strand(socket_.get_executor())),
        server_(server) {}

  void start() override {
    server_.connected(shared_from_this(), "tcp");
    read();
  }

  void send(SharedBytes frame) override {
    asio::post(strand_, [self = shared(), frame = std::move(frame)]() mutable {
      self->queue_.push_back(std::move(frame));
      if (self->queue_.size() == 1) self->write();
    });
  }

  void close() override {
    asio::post(strand_, [self = shared()] {
      boost::system::error_code ec;
      self->socket_.shutdown(tcp::socket::shutdown_both, ec);
      self->socket_.close(ec);
    });
  }

 private:
  std::shared_ptr<TcpConnection> shared() {
    return std::static_pointer_cast<TcpConnection>(shared_from_this());
  }

  void read() {
    socket_.async_read_some(asio::buffer(buffer_),
                            asio::bind_executor(strand_, [self = shared()](boost::system::error_code ec, std::size_t n) {
                              if (ec) {
                                self->server_.disconnected(self->id());
                                return;
                              }
                              self->reader_.feed(std::span(self->buffer_.data(), n));
                              try {
                                while (auto body = self->reader_.next()) self->server_.received(self->id(), *body);
                              } catch (const FramingError& e) {
                                self->server_.log("endpoint " + std::to_string(self->id()) + ": " + e.what());
                                self->server_.disconnected(self->id());
                                boost::system::error_code ignored;
                                self->socket_.close(ignored);
                                return;
                              }
                              self->read();
                            }));
  }

  void write() {
    asio::async_write(socket_, asio::buffer(*queue_.front()),
                      asio::bind_executor(strand_, [self = shared()](boost::system::error_code ec, std::size_t) {
                        self->queue_.pop_front();
                        if (ec) {
                          self->queue_.clear();
                          return;
                        }
                        if (!self->queue_.empty()) self->write();
                      }));
  }

  tcp::socket socket_;
  asio::strand<tcp::socket::executor_type> strand_;
  Server::Impl& server_;
  protocol::FrameReader reader_;
  std::array<std::uint8_t, 4096> buffer_{};
  std::deque<SharedBytes> queue_;
};

class WsConnection : public Connection {
 public:
  WsConnection(session::EndpointId id, tcp::socket socket, Server::Impl& server)
      : Connection(id), ws_(std::move(socket)), server_(server) {}

  void start() override {
    http::async_read(ws_.next_layer(), buffer_, request_,
                     [self = shared()](boost::system::error_code ec, std::size_t) { self->on_request(ec); });
  }

  void send(SharedBytes frame) override {
    asio::post(ws_.get_executor(), [self = shared(), frame = std::move(frame)]() mutable {
      if (!self->open_) return;
      self->queue_.push_back(std::move(frame));
      if (self->queue_.size() == 1) self->write();
    });
  }

  void close() override {
    asio::post(ws_.get_executor(), [self = shared()] {
      boost::system::error_code ec;
      self->ws_.next_layer().shutdown(tcp::socket::shutdown_both, ec);
      self->ws_.next_layer().close(ec);
    });
  }

 private:
  std::shared_ptr<WsConnection> shared() {
    return std::static_pointer_cast<WsConnection>(shared_from_this());
  }

  void on_request(boost::system::error_code ec) {
    if (ec) return;
    if (!websocket::is_upgrade(request_) || request_.target() != server_.config.ws_path) {
      auto res = std::make_shared<http::response<http::string_body>>(http::status::not_found, request_.version());
      res->set(http::field::content_type, "text/plain");
      res->body() = "websocket endpoint is " + server_.config.ws_path + "\n";
      res->prepare_payload();
      http::async_write(ws_.next_layer(), *res, [self = shared(), res](boost::system::error_code, std::size_t) {
        boost::system::error_code ignored;
        self->ws_.next_layer().shutdown(tcp::socket::shutdown_both, ignored);
      });
      return;
    }
    ws_.binary(true);
    ws_.async_accept(request_, [self = shared()](boost::system::error_code ec) {
      if (ec) return;
      self->open_ = true;
      self->server_.connected(self, "websocket");
      self->read();
    });
  }

  void read() {
    buffer_.clear();
    ws_.async_read(buffer_, [self = shared()](boost::system::error_code ec, std::size_t) {
      if (ec) {
        self->open_ = false;
        self->server_.disconnected(self->id());
        return;
      }
      const auto data = self->buffer_.cdata();
      const std::span<const std::uint8_t> bytes(static_cast<const std::uint8_t*>(data.data()), data.size());
      if (bytes.size() < protocol::kHeaderBytes) {
        self->server_.push({session::InboundEvent::frame(self->id(), {}),
                            protocol::Error{"framing", "websocket message shorter than a frame header"}});
      } else {
        // Message boundaries survive framing errors here, so the
        // connection stays open.
        try {
          protocol::FrameReader r;
          r.feed(bytes);
          auto body = r.next();
          if (!body || r.buffered() != 0) throw FramingError("websocket message must hold exactly one frame");
          self->server_.received(self->id(), *body);
        } catch (const FramingError& e) {
          self->server_.push({session::InboundEvent::frame(self->id(), {}), protocol::Error{"framing", e.what()}});
        }
      }
      self->read();
    });
  }

  void write() {
    ws_.async_write(asio::buffer(*queue_.front()), [self = shared()](boost::system::error_code ec, std::size_t) {
      self->queue_.pop_front();
      if (ec) {
        self->queue_.clear();
        return;
      }
      if (!self->queue_.empty()) self->write();
    });
  }

  websocket::stream<tcp::socket> ws_;
  Server::Impl& server_;
  beast::flat_buffer buffer_;
  http::request<http::string_body> request_;
  std::deque<SharedBytes> queue_;
  bool open_ = false;
};

}  // namespace

void Server::Impl::accept_tcp() {
  tcp_acceptor->async_accept(asio::make_strand(ioc), [this](boost::system::error_code ec, tcp::socket socket) {
    if (ec) return;
    socket.set_option(tcp::no_delay(true));
    std::make_shared<TcpConnection>(next_id++, std::move(socket), *this)->start();
    accept_tcp();
  });
}

void Server::Impl::accept_ws() {
  ws_acceptor->async_accept(asio::make_strand(ioc), [this](boost::system::error_code ec, tcp::socket socket) {
    if (ec) return;
    socket.set_option(tcp::no_delay(true));
    std::make_shared<WsConnection>(next_id++, std::move(socket), *this)->start();
    accept_ws();
  });
}

void Server::Impl::routing_loop() {
  using clock = std::chrono::steady_clock;
  const auto t0 = clock::now();
  const auto period = std::chrono::duration_cast<clock::duration>(std::chrono::duration<double>(dt));
  auto next = t0;
  std::uint64_t tick = 0;
  while (!stopping) {
    next += period;
    std::this_thread::sleep_until(next);
    const auto now_us = std::chrono::duration_cast<std::chrono::microseconds>(clock::now() - t0).count();
    route_tick(now_us, ++tick);
  }
}

void Server::Impl::route_tick(std::int64_t now_us, std::uint64_t tick) {
  std::vector<Inbound> batch;
  {
    std::lock_guard lock(inbound_mutex);
    batch.swap(inbound);
  }

  std::vector<session::Outbound> outbound;
  auto make = [&](int arm, protocol::Payload p) {
    protocol::TeleopMessage m;
    m.session = session.session_id;
    m.arm = arm;
    m.seq = session.next_seq++;
    m.timestamp_us = now_us;
    m.payload = std::move(p);
    return m;
  };

  std::vector<session::InboundEvent> events;
  std::vector<std::pair<session::EndpointId, protocol::Error>> decode_errors;
  for (Inbound& in : batch) {
    if (in.error) {
      log("endpoint " + std::to_string(in.event.endpoint) + ": " + in.error->code + ": " + in.error->text);
      decode_errors.emplace_back(in.event.endpoint, std::move(*in.error));
      continue;
    }
    if (in.event.message) {
      if (const auto* sw = std::get_if<protocol::ModeSwitch>(&in.event.message->payload)) {
        log("endpoint " + std::to_string(in.event.endpoint) + " arm " + std::to_string(in.event.message->arm) +
            ": ModeSwitch request " + std::string(to_string(sw->mode)));
      }
    }
    events.push_back(std::move(in.event));
  }

  session::SessionStepResult sr = session::session_step(std::move(session), events, now_us, arms);
  session = std::move(sr.state);
  for (auto& [ep, err] : decode_errors) outbound.push_back({ep, make(0, std::move(err))});
  for (const std::string& d : sr.diagnostics) log(d);
  if (sr.safe_hold_engaged) {
    for (ArmRuntime& a : arms.arms) a.engage_safe_hold();
  }
  for (const session::RoutedCommand& rc : sr.commands) {
    try {
      arms.arms.at(static_cast<std::size_t>(rc.arm)).apply(rc.payload);
    } catch (const ProtocolError& e) {
      log("endpoint " + std::to_string(rc.from) + " arm " + std::to_string(rc.arm) + ": " + e.what());
      outbound.push_back({rc.from, make(rc.arm, protocol::Error{"protocol", e.what()})});
    }
  }
  for (auto& o : sr.outbound) {
    if (const auto* sw = std::get_if<protocol::ModeSwitch>(&o.message.payload); sw && !o.to) {
      log("arm " + std::to_string(o.message.arm) + ": ModeSwitch granted " + std::string(to_string(sw->mode)));
    }
    outbound.push_back(std::move(o));
  }

  for (std::size_t a = 0; a < arms.arms.size(); ++a) {
    ArmRuntime& arm = arms.arms[a];
    const bool was_estopped = arm.state().estopped;
    for (const std::string& d : arm.tick(dt)) log("arm " + std::to_string(a) + ": " + d);
    if (arm.state().estopped && !was_estopped) log("arm " + std::to_string(a) + ": e-stop latched");
    broadcasters[a]->publish(arm.state());
    if (config.state_every > 0 && tick % static_cast<std::uint64_t>(config.state_every) == 0) {
      outbound.push_back({std::nullopt, make(static_cast<int>(a), arm.state_update())});
    }
  }

  std::vector<std::shared_ptr<Connection>> targets;
  {
    std::lock_guard lock(conn_mutex);
    for (auto& [id, c] : connections) targets.push_back(c);
  }
  for (const session::Outbound& o : outbound) {
    SharedBytes frame;
    try {
      frame = std::make_shared<const Bytes>(protocol::encode(o.message));
    } catch (const std::exception& e) {
      log(std::string("dropping unencodable outbound message: ") + e.what());
      continue;
    }
    for (const auto& c : targets) {
      if (!o.to || *o.to == c->id()) c->send(frame);
    }
  }
}

Server::Server(ServerConfig config) : impl_(std::make_unique<Impl>(std::move(config))) {
  impl_->config.apply_defaults();
}

Server::~Server() {
  stop();
}

void Server::start() {
  Impl& s = *impl_;
  if (s.started) return;
  const ControllerConfig ctl = ControllerConfig::load(s.config.controller);
  s.dt = ctl.dt();
  s.arms.arms.emplace_back(ArmKind::Temporal, SlaveModel::load(s.config.temporal_model), ctl);
  s.arms.arms.emplace_back(ArmKind::Spatial, SlaveModel::load(s.config.spatial_model), ctl,
                           HandCalibration::load(s.config.hand_calibration));
  for (std::size_t i = 0; i < s.arms.arms.size(); ++i) {
    s.broadcasters.push_back(std::make_unique<StateBroadcaster>());
    s.broadcasters.back()->publish(s.arms.arms[i].state());
  }
  s.session.heartbeat_timeout_us = s.config.heartbeat_timeout_us;

  const auto address = asio::ip::make_address(s.config.bind_address);
  s.tcp_acceptor.emplace(s.ioc, tcp::endpoint(address, s.config.tcp_port));
  s.ws_acceptor.emplace(s.ioc, tcp::endpoint(address, s.config.ws_port));
  s.work.emplace(asio::make_work_guard(s.ioc));
  s.accept_tcp();
  s.accept_ws();
  s.net_thread = std::thread([&s] { s.ioc.run(); });
  s.routing_thread = std::thread([&s] { s.routing_loop(); });
  s.started = true;
  s.log("server listening on tcp " + std::to_string(tcp_port()) + ", websocket " + std::to_string(ws_port()) +
        s.config.ws_path);
}

void Server::stop() {
  Impl& s = *impl_;
  if (!s.started) return;
  s.stopping = true;
  if (s.routing_thread.joinable()) s.routing_thread.join();
  asio::post(s.ioc, [&s] {
    boost::system::error_code ec;
    s.tcp_acceptor->close(ec);
    s.ws_acceptor->close(ec);
  });
  {
    std::lock_guard lock(s.conn_mutex);
    for (auto& [id, c] : s.connections) c->close();
  }
  s.work.reset();
  s.ioc.stop();
  if (s.net_thread.joinable()) s.net_thread.join();
  s.started = false;
}

std::uint16_t Server::tcp_port() const {
  return impl_->tcp_acceptor ? impl_->tcp_acceptor->local_endpoint().port() : 0;
}

std::uint16_t Server::ws_port() const {
  return impl_->ws_acceptor ? impl_->ws_acceptor->local_endpoint().port() : 0;
}

StateBroadcaster& Server::broadcaster(int arm) {
  return *impl_->broadcasters.at(static_cast<std::size_t>(arm));
}

void Server::wait_for_signal() {
  asio::io_context sig;
  asio::signal_set signals(sig, SIGINT, SIGTERM);
  signals.async_wait([](boost::system::error_code, int) {});
  sig.run();
  stop();
}

}  // namespace glteleop::server
