#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

namespace aimpc::protocol {

constexpr int kVersion = 1;

struct Hello {
  int version = kVersion;
  bool operator==(const Hello&) const = default;
};

struct Welcome {
  std::string scenario;
  double tick_rate = 20.0; // Hz
  bool operator==(const Welcome&) const = default;
};

struct Error {
  std::string reason;
  bool operator==(const Error&) const = default;
};

struct Control {
  double pedal = 0.0; // [-1, 1]
  double steer = 0.0; // [-1, 1]
  double client_time = 0.0;
  bool operator==(const Control&) const = default;
};

struct State {
  struct Ego {
    double s = 0, v = 0, a = 0, l = 1;
    bool operator==(const Ego&) const = default;
  };
  struct Nv {
    double s = 0, v = 0, a = 0;
    bool operator==(const Nv&) const = default;
  };
  struct Preview {
    std::vector<std::pair<double, double>> ego; // (s, l)
    std::vector<double> nv;                     // s
    bool operator==(const Preview&) const = default;
  };

  long tick = 0;
  double sim_time = 0.0;
  Ego ego;
  Nv nv;
  double obstacle_s = 0.0;
  double alpha_p = 0.5, alpha_a = 0.5;
  Preview plan_preview;
  std::string planner_status;
  bool nudge_flag = false;
  bool operator==(const State&) const = default;
};

using Message = std::variant<Hello, Welcome, Error, Control, State>;

/// One JSON object, no trailing newline.
std::string encode(const Message& m);
/// nullopt for malformed text, a missing or unknown "type", or missing fields.
/// Unknown fields are ignored. Control values are clamped to [-1, 1].
std::optional<Message> decode(const std::string& line);

/// Splits a byte stream into newline-delimited frames.
class FrameDecoder {
public:
  /// Appends bytes and returns the messages completed by them.
  std::vector<Message> feed(const char* data, std::size_t n);
  std::vector<Message> feed(const std::string& s) { return feed(s.data(), s.size()); }
  long dropped() const { return dropped_; }

private:
  std::string buffer_;
  long dropped_ = 0;
};

/// Reason string when a hello must be refused.
std::optional<std::string> check_hello(const Hello& h);

} // namespace aimpc::protocol
