#include "aimpc/session.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <stdexcept>
#include <system_error>

namespace aimpc {

namespace {

using Clock = std::chrono::steady_clock;

[[noreturn]] void throw_errno(const std::string& what) {
  throw std::system_error(errno, std::generic_category(), what);
}

addrinfo* resolve(const std::string& host, int port, bool passive) {
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  if (passive) hints.ai_flags = AI_PASSIVE;
  addrinfo* res = nullptr;
  const std::string service = std::to_string(port);
  const int rc = getaddrinfo(host.empty() ? nullptr : host.c_str(), service.c_str(), &hints, &res);
  if (rc != 0) {
    throw std::system_error(std::make_error_code(std::errc::address_not_available),
                            "resolve " + host + ": " + gai_strerror(rc));
  }
  return res;
}

bool send_all(int fd, const std::string& data, int flags) {
  size_t off = 0;
  while (off < data.size()) {
    const ssize_t n = ::send(fd, data.data() + off, data.size() - off, flags | MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      return false;
    }
    off += static_cast<size_t>(n);
  }
  return true;
}

// Waits up to `ms` for readable data; returns bytes read, 0 on timeout, -1 on close/error.
ssize_t read_some(int fd, char* buf, size_t cap, int ms) {
  pollfd p{fd, POLLIN, 0};
  const int rc = ::poll(&p, 1, ms);
  if (rc == 0) return 0;
  if (rc < 0) return errno == EINTR ? 0 : -1;
  const ssize_t n = ::recv(fd, buf, cap, 0);
  if (n == 0) return -1;
  if (n < 0) return (errno == EINTR || errno == EAGAIN) ? 0 : -1;
  return n;
}

} // namespace

void SessionConfig::validate() const {
  scenario.validate();
  if (!(speedup >= 0.0) || !std::isfinite(speedup)) {
    throw std::invalid_argument("SessionConfig: speedup must be finite and >= 0");
  }
  if (!(disconnect_decay > 0.0)) throw std::invalid_argument("SessionConfig: disconnect_decay must be > 0");
  if (preview_stride < 1) throw std::invalid_argument("SessionConfig: preview_stride must be >= 1");
}

bool nudge_flag(const EgoState& ego, double delta) {
  return ego.l > 1.0 + kNudgeThreshold && ego.l < 2.0 - delta && ego.r_l < 0.0;
}

protocol::State make_state_message(const TraceRecord& rec, const Scenario& s,
                                   const std::optional<Plan>& plan, int preview_stride) {
  protocol::State m;
  m.tick = rec.tick;
  m.sim_time = rec.t;
  m.ego = {rec.ego.s, rec.ego.v, rec.ego.a, rec.ego.l};
  m.nv = {rec.nv.s, rec.nv.v, rec.nv.a};
  m.obstacle_s = s.obstacle_s;
  m.alpha_p = rec.alpha.alpha_p;
  m.alpha_a = rec.alpha.alpha_a;
  if (plan) {
    for (size_t k = 0; k < plan->ego_states.size(); k += preview_stride) {
      m.plan_preview.ego.emplace_back(plan->ego_states[k].s, plan->ego_states[k].l);
    }
    for (size_t k = 0; k < plan->nv_states.size(); k += preview_stride) {
      m.plan_preview.nv.push_back(plan->nv_states[k].s);
    }
  }
  m.planner_status = rec.planner_status;
  m.nudge_flag = nudge_flag(rec.ego);
  return m;
}

// ------------------------------------------------------------------ server

SessionServer::SessionServer(SessionConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.scenario.nv_policy = "external";
  cfg_.validate();
}

SessionServer::~SessionServer() {
  stop_ = true;
  plan_cv_.notify_all();
  if (accept_thread_.joinable()) accept_thread_.join();
  if (reader_thread_.joinable()) reader_thread_.join();
  if (planner_thread_.joinable()) planner_thread_.join();
  if (listen_fd_ >= 0) ::close(listen_fd_);
}

void SessionServer::listen(const std::string& host, int port) {
  if (listen_fd_ >= 0) throw std::logic_error("SessionServer: already listening");
  addrinfo* res = resolve(host, port, true);
  const int fd = ::socket(res->ai_family, res->ai_socktype, res->ai_protocol);
  if (fd < 0) {
    freeaddrinfo(res);
    throw_errno("socket");
  }
  const int one = 1;
  ::setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  if (::bind(fd, res->ai_addr, res->ai_addrlen) < 0 || ::listen(fd, 4) < 0) {
    const int err = errno;
    freeaddrinfo(res);
    ::close(fd);
    throw std::system_error(err, std::generic_category(),
                            "cannot listen on " + host + ":" + std::to_string(port));
  }
  freeaddrinfo(res);
  sockaddr_in bound{};
  socklen_t len = sizeof bound;
  ::getsockname(fd, reinterpret_cast<sockaddr*>(&bound), &len);
  port_ = ntohs(bound.sin_port);
  listen_fd_ = fd;
  accept_thread_ = std::thread([this] { accept_loop(); });
}

void SessionServer::accept_loop() {
  while (!stop_) {
    pollfd p{listen_fd_, POLLIN, 0};
    if (::poll(&p, 1, 50) <= 0) continue;
    const int fd = ::accept(listen_fd_, nullptr, nullptr);
    if (fd < 0) continue;
    if (occupied_) {
      send_all(fd, protocol::encode(protocol::Error{"driver already connected"}) + "\n", 0);
      ::close(fd);
      ++rejected_;
      continue;
    }
    if (reader_thread_.joinable()) reader_thread_.join();
    occupied_ = true;
    reader_thread_ = std::thread([this, fd] { serve_client(fd); });
  }
}

void SessionServer::serve_client(int fd) {
  const int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
  protocol::FrameDecoder decoder;
  char buf[4096];
  bool welcomed = false;
  const auto deadline = Clock::now() + std::chrono::seconds(5);

  while (!stop_) {
    const ssize_t n = read_some(fd, buf, sizeof buf, 50);
    if (n < 0) break;
    if (!welcomed && Clock::now() > deadline) {
      send_all(fd, protocol::encode(protocol::Error{"handshake timeout"}) + "\n", 0);
      break;
    }
    if (n == 0) continue;
    const long before = decoder.dropped();
    auto msgs = decoder.feed(buf, static_cast<size_t>(n));
    dropped_ += decoder.dropped() - before;
    bool refuse = false;
    for (const auto& m : msgs) {
      if (!welcomed) {
        const auto* hello = std::get_if<protocol::Hello>(&m);
        const auto reason = hello ? protocol::check_hello(*hello)
                                  : std::optional<std::string>("expected hello");
        if (reason) {
          send_all(fd, protocol::encode(protocol::Error{*reason}) + "\n", 0);
          refuse = true;
          break;
        }
        pedal_ = 0.0;
        steer_ = 0.0;
        {
          std::lock_guard lk(client_mu_);
          client_fd_ = fd;
          disconnected_ = false;
          connected_ = true;
          send_all(fd, protocol::encode(protocol::Welcome{cfg_.scenario.id, cfg_.tick_rate()}) + "\n", 0);
        }
        welcomed = true;
      } else if (const auto* c = std::get_if<protocol::Control>(&m)) {
        pedal_ = c->pedal;
        steer_ = c->steer;
      }
    }
    if (refuse) break;
  }

  // The slot frees before the disconnect is visible, so a client that
  // reconnects as soon as it sees the drop is not turned away.
  std::lock_guard lk(client_mu_);
  client_fd_ = -1;
  ::close(fd);
  occupied_ = false;
  if (welcomed) {
    connected_ = false;
    disconnected_ = true;
  }
}

void SessionServer::send_line(const std::string& line) {
  std::lock_guard lk(client_mu_);
  if (client_fd_ < 0) return;
  // A slow reader loses frames rather than stalling the plant.
  send_all(client_fd_, line + "\n", MSG_DONTWAIT);
}

void SessionServer::effective_control(double t) {
  double pedal = 0.0, steer = 0.0;
  if (connected_) {
    decaying_ = false;
    pedal = pedal_;
    steer = steer_;
  } else if (disconnected_) {
    if (!decaying_) {
      decaying_ = true;
      decay_start_t_ = t;
      decay_pedal_ = pedal_;
      decay_steer_ = steer_;
    }
    const double f = std::max(0.0, 1.0 - (t - decay_start_t_) / cfg_.disconnect_decay);
    pedal = f * decay_pedal_;
    steer = f * decay_steer_;
  }
  mailbox_->pedal = pedal;
  mailbox_->steer = steer;
}

void SessionServer::planner_loop() {
  std::unique_lock lk(plan_mu_);
  while (true) {
    plan_cv_.wait(lk, [this] { return stop_ || request_.has_value(); });
    if (!request_) return;
    const PlanRequest req = *request_;
    request_.reset();
    lk.unlock();
    std::optional<MpcStepResult> r;
    std::optional<std::string> err;
    try {
      r = loop_->plan(req);
    } catch (const std::exception& e) {
      err = e.what();
    }
    lk.lock();
    result_ = std::move(r);
    plan_error_ = std::move(err);
    busy_ = false;
    plan_cv_.notify_all();
  }
}

void SessionServer::apply_ready_result() {
  std::lock_guard lk(plan_mu_);
  if (result_) {
    loop_->apply_plan(*result_);
    result_.reset();
  } else if (plan_error_) {
    loop_->fail_plan(*plan_error_);
    plan_error_.reset();
  }
}

Trace SessionServer::run() {
  if (loop_) throw std::logic_error("SessionServer: run() called twice");
  RunOptions opts = cfg_.options;
  opts.external = mailbox_;
  loop_ = std::make_unique<ClosedLoop>(cfg_.scenario, opts);
  planner_thread_ = std::thread([this] { planner_loop(); });

  const bool paced = cfg_.speedup > 0.0;
  const auto period = std::chrono::duration_cast<Clock::duration>(
      std::chrono::duration<double>(paced ? cfg_.scenario.sim_dt / cfg_.speedup : 0.0));
  auto next = Clock::now();
  std::optional<Clock::time_point> last_broadcast;
  std::string status;

  while (!stop_ && !loop_->done()) {
    if (paced) {
      std::this_thread::sleep_until(next);
      next += period;
    }
    effective_control(loop_->time());
    const auto req = loop_->begin_tick();
    apply_ready_result();
    if (req) {
      std::unique_lock lk(plan_mu_);
      if (busy_) {
        const double waited = std::chrono::duration<double>(Clock::now() - request_time_).count();
        lk.unlock();
        loop_->apply_miss(waited);
      } else {
        request_ = *req;
        busy_ = true;
        request_time_ = Clock::now();
        plan_cv_.notify_all();
        if (cfg_.scenario.deterministic) {
          plan_cv_.wait(lk, [this] { return !busy_; });
          lk.unlock();
          apply_ready_result();
        }
      }
    }
    const TraceRecord& rec = loop_->finish_tick();
    if (!rec.planner_status.empty()) status = rec.planner_status;

    auto msg = make_state_message(rec, cfg_.scenario, loop_->last_plan(), cfg_.preview_stride);
    msg.planner_status = status;
    send_line(protocol::encode(msg));
    const auto now = Clock::now();
    if (last_broadcast) {
      std::lock_guard lk(stats_mu_);
      intervals_.push_back(std::chrono::duration<double>(now - *last_broadcast).count());
    }
    last_broadcast = now;
  }

  {
    std::lock_guard lk(plan_mu_);
    stop_ = true;
  }
  plan_cv_.notify_all();
  planner_thread_.join();
  return loop_->trace();
}

std::vector<double> SessionServer::broadcast_intervals() const {
  std::lock_guard lk(stats_mu_);
  return intervals_;
}

// ------------------------------------------------------------------ client

SessionClient::~SessionClient() { close(); }

void SessionClient::connect(const std::string& host, int port) {
  addrinfo* res = resolve(host, port, false);
  const int fd = ::socket(res->ai_family, res->ai_socktype, res->ai_protocol);
  if (fd < 0) {
    freeaddrinfo(res);
    throw_errno("socket");
  }
  if (::connect(fd, res->ai_addr, res->ai_addrlen) < 0) {
    const int err = errno;
    freeaddrinfo(res);
    ::close(fd);
    throw std::system_error(err, std::generic_category(), "connect " + host + ":" + std::to_string(port));
  }
  freeaddrinfo(res);
  const int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
  fd_ = fd;
  closed_ = false;
}

std::optional<protocol::Message> SessionClient::handshake(int version, std::chrono::milliseconds timeout) {
  send(protocol::Hello{version});
  return read(timeout);
}

void SessionClient::send(const protocol::Message& m) { send_raw(protocol::encode(m) + "\n"); }

void SessionClient::send_raw(const std::string& bytes) {
  if (fd_ < 0) throw std::logic_error("SessionClient: not connected");
  if (!send_all(fd_, bytes, 0)) closed_ = true;
}

std::optional<protocol::Message> SessionClient::read(std::chrono::milliseconds timeout) {
  const auto deadline = Clock::now() + timeout;
  char buf[8192];
  while (queue_.empty() && !closed_ && fd_ >= 0) {
    const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - Clock::now());
    if (left.count() <= 0) break;
    const ssize_t n = read_some(fd_, buf, sizeof buf, static_cast<int>(left.count()));
    if (n < 0) {
      closed_ = true;
      break;
    }
    for (auto& m : decoder_.feed(buf, static_cast<size_t>(n))) queue_.push_back(std::move(m));
  }
  if (queue_.empty()) return std::nullopt;
  auto m = std::move(queue_.front());
  queue_.erase(queue_.begin());
  return m;
}

void SessionClient::close() {
  if (fd_ >= 0) ::close(fd_);
  fd_ = -1;
  closed_ = true;
}

} // namespace aimpc
