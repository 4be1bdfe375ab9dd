#include "aimpc/protocol.hpp"

#include <algorithm>

#include "json.hpp"

namespace aimpc::protocol {

using nlohmann::json;

namespace {

struct Encoder {
  json operator()(const Hello& m) const { return {{"type", "hello"}, {"version", m.version}}; }
  json operator()(const Welcome& m) const {
    return {{"type", "welcome"}, {"scenario", m.scenario}, {"tick_rate", m.tick_rate}};
  }
  json operator()(const Error& m) const { return {{"type", "error"}, {"reason", m.reason}}; }
  json operator()(const Control& m) const {
    return {{"type", "control"}, {"pedal", m.pedal}, {"steer", m.steer}, {"client_time", m.client_time}};
  }
  json operator()(const State& m) const {
    json ego_prev = json::array();
    for (const auto& [s, l] : m.plan_preview.ego) ego_prev.push_back({s, l});
    return {{"type", "state"},
            {"tick", m.tick},
            {"sim_time", m.sim_time},
            {"ego", {{"s", m.ego.s}, {"v", m.ego.v}, {"a", m.ego.a}, {"l", m.ego.l}}},
            {"nv", {{"s", m.nv.s}, {"v", m.nv.v}, {"a", m.nv.a}}},
            {"obstacle", {{"s", m.obstacle_s}}},
            {"alpha", {{"p", m.alpha_p}, {"a", m.alpha_a}}},
            {"plan_preview", {{"ego", ego_prev}, {"nv", m.plan_preview.nv}}},
            {"planner_status", m.planner_status},
            {"nudge_flag", m.nudge_flag}};
  }
};

Message decode_state(const json& j) {
  State m;
  m.tick = j.at("tick").get<long>();
  m.sim_time = j.at("sim_time").get<double>();
  const auto& e = j.at("ego");
  m.ego = {e.at("s").get<double>(), e.at("v").get<double>(), e.at("a").get<double>(),
           e.at("l").get<double>()};
  const auto& n = j.at("nv");
  m.nv = {n.at("s").get<double>(), n.at("v").get<double>(), n.at("a").get<double>()};
  m.obstacle_s = j.at("obstacle").at("s").get<double>();
  m.alpha_p = j.at("alpha").at("p").get<double>();
  m.alpha_a = j.at("alpha").at("a").get<double>();
  const auto& pv = j.at("plan_preview");
  for (const auto& pt : pv.at("ego")) m.plan_preview.ego.emplace_back(pt.at(0).get<double>(), pt.at(1).get<double>());
  m.plan_preview.nv = pv.at("nv").get<std::vector<double>>();
  m.planner_status = j.at("planner_status").get<std::string>();
  m.nudge_flag = j.at("nudge_flag").get<bool>();
  return m;
}

} // namespace

std::string encode(const Message& m) { return std::visit(Encoder{}, m).dump(); }

std::optional<Message> decode(const std::string& line) {
  const json j = json::parse(line, nullptr, false);
  if (j.is_discarded() || !j.is_object() || !j.contains("type") || !j["type"].is_string()) {
    return std::nullopt;
  }
  try {
    const auto type = j["type"].get<std::string>();
    if (type == "hello") return Hello{j.at("version").get<int>()};
    if (type == "welcome") return Welcome{j.at("scenario").get<std::string>(), j.at("tick_rate").get<double>()};
    if (type == "error") return Error{j.at("reason").get<std::string>()};
    if (type == "control") {
      Control c;
      c.pedal = std::clamp(j.at("pedal").get<double>(), -1.0, 1.0);
      c.steer = std::clamp(j.at("steer").get<double>(), -1.0, 1.0);
      c.client_time = j.value("client_time", 0.0);
      return c;
    }
    if (type == "state") return decode_state(j);
  } catch (const json::exception&) {
    return std::nullopt;
  }
  return std::nullopt;
}

std::vector<Message> FrameDecoder::feed(const char* data, std::size_t n) {
  buffer_.append(data, n);
  std::vector<Message> out;
  std::size_t start = 0;
  for (std::size_t nl; (nl = buffer_.find('\n', start)) != std::string::npos; start = nl + 1) {
    std::string line = buffer_.substr(start, nl - start);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (auto m = decode(line)) {
      out.push_back(std::move(*m));
    } else {
      ++dropped_;
    }
  }
  buffer_.erase(0, start);
  // A peer that never sends a newline cannot grow the buffer without bound.
  if (buffer_.size() > (1u << 20)) {
    buffer_.clear();
    ++dropped_;
  }
  return out;
}

std::optional<std::string> check_hello(const Hello& h) {
  if (h.version != kVersion) {
    return "unsupported protocol version " + std::to_string(h.version) + ", server speaks " +
           std::to_string(kVersion);
  }
  return std::nullopt;
}

} // namespace aimpc::protocol
