#include <gtest/gtest.h>

#include "aimpc/protocol.hpp"

using namespace aimpc::protocol;

namespace {

State sample_state() {
  State s;
  s.tick = 42;
  s.sim_time = 2.1;
  s.ego = {20.5, 8.25, -0.5, 1.25};
  s.nv = {18.0, 9.5, 0.75};
  s.obstacle_s = 60.0;
  s.alpha_p = 0.8;
  s.alpha_a = 0.2;
  s.plan_preview.ego = {{20.5, 1.25}, {22.0, 1.5}, {23.5, 1.75}};
  s.plan_preview.nv = {18.0, 19.9, 21.8};
  s.planner_status = "optimal";
  s.nudge_flag = true;
  return s;
}

} // namespace

TEST(Protocol, RoundTripAllTypes) {
  const std::vector<Message> msgs = {Hello{1}, Welcome{"sub2", 20.0}, Error{"nope"},
                                     Control{0.25, -0.5, 12.75}, sample_state()};
  for (const auto& m : msgs) {
    const auto line = encode(m);
    EXPECT_EQ(line.find('\n'), std::string::npos);
    const auto back = decode(line);
    ASSERT_TRUE(back.has_value()) << line;
    EXPECT_EQ(*back, m) << line;
  }
}

TEST(Protocol, FieldNamesOnTheWire) {
  const auto line = encode(sample_state());
  for (const char* key : {"\"type\":\"state\"", "\"tick\"", "\"sim_time\"", "\"ego\"", "\"nv\"",
                          "\"obstacle\"", "\"alpha\"", "\"plan_preview\"", "\"planner_status\"",
                          "\"nudge_flag\""}) {
    EXPECT_NE(line.find(key), std::string::npos) << key;
  }
  EXPECT_NE(encode(Control{}).find("\"client_time\""), std::string::npos);
}

TEST(Protocol, UnknownFieldsIgnored) {
  const auto m = decode(R"({"type":"control","pedal":0.5,"steer":0,"client_time":1,"rumble":true})");
  ASSERT_TRUE(m.has_value());
  EXPECT_EQ(std::get<Control>(*m), (Control{0.5, 0.0, 1.0}));
}

TEST(Protocol, ControlClampedServerSide) {
  const auto m = decode(R"({"type":"control","pedal":3.0,"steer":-7,"client_time":0})");
  ASSERT_TRUE(m.has_value());
  EXPECT_EQ(std::get<Control>(*m).pedal, 1.0);
  EXPECT_EQ(std::get<Control>(*m).steer, -1.0);
}

TEST(Protocol, MalformedRejected) {
  for (const char* bad : {"", "{", "[]", "42", R"({"pedal":1})", R"({"type":"warp"})",
                          R"({"type":"control","pedal":"full"})", R"({"type":7})",
                          R"({"type":"hello"})"}) {
    EXPECT_FALSE(decode(bad).has_value()) << bad;
  }
}

TEST(Protocol, FrameDecoderSplitsAndCounts) {
  FrameDecoder d;
  const auto a = encode(Control{0.1, 0.0, 1.0});
  const auto b = encode(Hello{1});
  auto out = d.feed(a.substr(0, 5));
  EXPECT_TRUE(out.empty());
  out = d.feed(a.substr(5) + "\nnot json\r\n\n" + b + "\r\n" + b.substr(0, 3));
  ASSERT_EQ(out.size(), 2u);
  EXPECT_TRUE(std::holds_alternative<Control>(out[0]));
  EXPECT_TRUE(std::holds_alternative<Hello>(out[1]));
  EXPECT_EQ(d.dropped(), 1);
  out = d.feed(b.substr(3) + "\n");
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(d.dropped(), 1);
}

TEST(Protocol, HandshakeVersionCheck) {
  EXPECT_FALSE(check_hello(Hello{kVersion}).has_value());
  const auto reason = check_hello(Hello{kVersion + 1});
  ASSERT_TRUE(reason.has_value());
  EXPECT_NE(reason->find("version"), std::string::npos);
}
