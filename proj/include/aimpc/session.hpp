#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "aimpc/protocol.hpp"
#include "aimpc/sim.hpp"

namespace aimpc {

struct SessionConfig {
  Scenario scenario; // nv_policy is forced to "external"
  RunOptions options;
  /// Wall-clock pacing: tick period is sim_dt / speedup. 0 runs unpaced.
  double speedup = 1.0;
  double disconnect_decay = 1.0; // s, pedal ramp to zero after a disconnect
  int preview_stride = 2;        // every n-th planned point goes into plan_preview

  double tick_rate() const { return 1.0 / scenario.sim_dt; }
  void validate() const;
};

/// Builds the per-tick broadcast from a finished record.
protocol::State make_state_message(const TraceRecord& rec, const Scenario& s,
                                   const std::optional<Plan>& plan, int preview_stride);

/// True while the ego is above the nudge threshold, short of the target band,
/// and moving back toward its lane.
bool nudge_flag(const EgoState& ego, double delta = 0.5);

/// Live closed loop with one human driver over TCP, newline-delimited JSON.
/// Threads: plant timeline (run()), planner worker, accept loop, client reader.
class SessionServer {
public:
  explicit SessionServer(SessionConfig cfg);
  ~SessionServer();
  SessionServer(const SessionServer&) = delete;
  SessionServer& operator=(const SessionServer&) = delete;

  /// Binds and starts accepting. Port 0 picks a free port.
  /// Throws std::system_error when the address is unavailable.
  void listen(const std::string& host, int port);
  int port() const { return port_; }

  /// Runs until the scenario ends or stop() is called; returns the trace.
  Trace run();
  /// Safe to call from any thread or a signal-driven flag poller.
  void stop() { stop_ = true; }

  bool client_connected() const { return connected_; }
  long dropped_frames() const { return dropped_; }
  long rejected_clients() const { return rejected_; }
  /// Wall-clock intervals between consecutive broadcasts, s.
  std::vector<double> broadcast_intervals() const;

private:
  void accept_loop();
  void serve_client(int fd);
  void planner_loop();
  void send_line(const std::string& line);
  void effective_control(double t);
  void apply_ready_result();

  SessionConfig cfg_;
  std::shared_ptr<ExternalControl> mailbox_ = std::make_shared<ExternalControl>();
  std::unique_ptr<ClosedLoop> loop_;

  int listen_fd_ = -1;
  int port_ = 0;
  std::atomic<bool> stop_{false};
  std::atomic<bool> connected_{false}; // handshake done
  std::atomic<bool> occupied_{false};  // driver slot taken, handshake may be pending
  std::atomic<long> dropped_{0}, rejected_{0};
  std::mutex client_mu_;
  int client_fd_ = -1;
  std::thread accept_thread_, reader_thread_, planner_thread_;

  // Latest driver input, written by the reader thread.
  std::atomic<double> pedal_{0.0}, steer_{0.0};
  std::atomic<bool> disconnected_{false};
  double decay_start_t_ = 0.0, decay_pedal_ = 0.0, decay_steer_ = 0.0;
  bool decaying_ = false;

  // Planner worker hand-off.
  std::mutex plan_mu_;
  std::condition_variable plan_cv_;
  std::optional<PlanRequest> request_;
  std::optional<MpcStepResult> result_;
  std::optional<std::string> plan_error_;
  bool busy_ = false;
  std::chrono::steady_clock::time_point request_time_;

  mutable std::mutex stats_mu_;
  std::vector<double> intervals_;
};

/// Blocking client used by tests and scripted drivers.
class SessionClient {
public:
  SessionClient() = default;
  ~SessionClient();
  SessionClient(const SessionClient&) = delete;
  SessionClient& operator=(const SessionClient&) = delete;

  /// Throws std::system_error.
  void connect(const std::string& host, int port);
  /// Sends hello and waits for the reply (welcome or error).
  std::optional<protocol::Message> handshake(int version = protocol::kVersion,
                                             std::chrono::milliseconds timeout = std::chrono::seconds(5));
  void send(const protocol::Message& m);
  void send_raw(const std::string& bytes);
  /// Next message, or nullopt on timeout or closed connection.
  std::optional<protocol::Message> read(std::chrono::milliseconds timeout);
  bool closed() const { return closed_; }
  void close();

private:
  int fd_ = -1;
  bool closed_ = false;
  protocol::FrameDecoder decoder_;
  std::vector<protocol::Message> queue_;
};

} // namespace aimpc
