#include "glteleop/errors.hpp"
#include "glteleop/protocol.hpp"

#include "message_fuzz.hpp"

#include <gtest/gtest.h>

#include <cstring>
#include <random>

using namespace glteleop;
using namespace glteleop::protocol;

namespace {

TeleopMessage heartbeat() {
  TeleopMessage m;
  m.session = "default";
  m.arm = 0;
  m.seq = 1;
  m.timestamp_us = 0;
  m.payload = Heartbeat{};
  return m;
}

std::vector<std::uint8_t> frame_of(const std::string& body) {
  std::vector<std::uint8_t> f(4);
  const auto n = static_cast<std::uint32_t>(body.size());
  f[0] = static_cast<std::uint8_t>(n >> 24);
  f[1] = static_cast<std::uint8_t>(n >> 16);
  f[2] = static_cast<std::uint8_t>(n >> 8);
  f[3] = static_cast<std::uint8_t>(n);
  f.insert(f.end(), body.begin(), body.end());
  return f;
}

}  // namespace

TEST(Protocol, HeartbeatRoundTrip) {
  const TeleopMessage m = heartbeat();
  EXPECT_EQ(decode(encode(m)), m);
}

TEST(Protocol, HeartbeatBytes) {
  const std::string body = R"({"arm":0,"kind":"Heartbeat","payload":{},"seq":1,"session":"default","ts":0,"v":1})";
  const std::vector<std::uint8_t> frame = encode(heartbeat());
  EXPECT_EQ(frame, frame_of(body));
  EXPECT_EQ(frame[3], body.size());
  EXPECT_EQ(frame[0], 0);
}

TEST(Protocol, SevenJointValuesRoundTripBitExactly) {
  TeleopMessage m = heartbeat();
  JointVector q(7);
  q << 0.1, -0.2 + 1e-17, 1.0 / 3.0, std::nextafter(1.0, 2.0), 4.9e-324, -0.0, 2.718281828459045;
  m.payload = JointCommand{q};
  const TeleopMessage back = decode(encode(m));
  const JointVector& r = std::get<JointCommand>(back.payload).joints;
  ASSERT_EQ(r.size(), 7);
  for (int i = 0; i < 7; ++i) EXPECT_EQ(std::memcmp(&r[i], &q[i], sizeof(double)), 0) << i;
}

TEST(Protocol, OversizedDeclaredLengthIsFramingError) {
  std::vector<std::uint8_t> f = frame_of("{}");
  const std::uint32_t n = kMaxFrameBytes + 1;
  f[0] = static_cast<std::uint8_t>(n >> 24);
  f[1] = static_cast<std::uint8_t>(n >> 16);
  f[2] = static_cast<std::uint8_t>(n >> 8);
  f[3] = static_cast<std::uint8_t>(n);
  EXPECT_THROW(decode(f), FramingError);
  FrameReader reader;
  reader.feed(f);
  EXPECT_THROW(reader.next(), FramingError);
}

TEST(Protocol, OversizedBodyIsRejectedOnEncode) {
  TeleopMessage m = heartbeat();
  m.payload = Error{"big", std::string(kMaxFrameBytes, 'x')};
  EXPECT_THROW(encode(m), FramingError);
}

TEST(Protocol, TruncatedFrames) {
  const std::vector<std::uint8_t> f = encode(heartbeat());
  EXPECT_THROW(decode(std::span(f).first(2)), FramingError);
  EXPECT_THROW(decode(std::span(f).first(f.size() - 1)), FramingError);
  std::vector<std::uint8_t> extra = f;
  extra.push_back('x');
  EXPECT_THROW(decode(extra), FramingError);
}

TEST(Protocol, UnknownKindCarriesKindString) {
  const std::string body = R"({"arm":0,"kind":"Teleport","payload":{},"seq":1,"session":"s","ts":0,"v":1})";
  try {
    decode(frame_of(body));
    FAIL() << "expected ProtocolError";
  } catch (const ProtocolError& e) {
    EXPECT_EQ(e.kind(), "Teleport");
  }
}

TEST(Protocol, VersionMismatchIsNegotiationError) {
  const std::string body = R"({"arm":0,"kind":"Heartbeat","payload":{},"seq":1,"session":"s","ts":0,"v":2})";
  try {
    decode(frame_of(body));
    FAIL() << "expected NegotiationError";
  } catch (const NegotiationError& e) {
    EXPECT_EQ(e.remote_version(), 2);
  }
}

TEST(Protocol, MalformedBodies) {
  for (const char* body :
       {"", "[]", "not json", R"({"kind":"Heartbeat"})",
        R"({"arm":0,"kind":"JointCommand","payload":{"joints":"x"},"seq":1,"session":"s","ts":0,"v":1})",
        R"({"arm":0,"kind":"GripperCommand","payload":{},"seq":1,"session":"s","ts":0,"v":1})",
        R"({"arm":0,"kind":"HandCommand","payload":{"values":[1,2]},"seq":1,"session":"s","ts":0,"v":1})",
        R"({"arm":0,"kind":"ModeSwitch","payload":{"mode":"sideways"},"seq":1,"session":"s","ts":0,"v":1})",
        R"({"arm":0,"kind":"CartesianCommand","payload":{"pose":{"p":[0,0,0],"q":[0,0,0,0]}},"seq":1,"session":"s","ts":0,"v":1})",
        R"({"arm":0,"kind":"Heartbeat","payload":[],"seq":1,"session":"s","ts":0,"v":1})",
        R"({"arm":0,"kind":"Heartbeat","payload":{},"seq":-1,"session":"s","ts":0,"v":1})"}) {
    EXPECT_THROW(decode(frame_of(body)), ProtocolError) << body;
  }
}

TEST(Protocol, NonFiniteValuesAreRejected) {
  TeleopMessage m = heartbeat();
  m.payload = GripperCommand{NAN};
  EXPECT_THROW(encode(m), ProtocolError);
  m.payload = JointCommand{JointVector::Constant(3, INFINITY)};
  EXPECT_THROW(encode(m), ProtocolError);
}

TEST(Protocol, ModeSwitchDefaultsToRequest) {
  const std::string body =
      R"({"arm":1,"kind":"ModeSwitch","payload":{"mode":"local"},"seq":3,"session":"s","ts":5,"v":1})";
  const TeleopMessage m = decode(frame_of(body));
  const auto& sw = std::get<ModeSwitch>(m.payload);
  EXPECT_EQ(sw.mode, TeleopMode::Local);
  EXPECT_EQ(sw.status, SwitchStatus::Request);
}

TEST(Protocol, FuzzedMessagesRoundTripLosslessly) {
  glteleop::testing::MessageFuzzer fuzz(20240601);
  for (int i = 0; i < 100000; ++i) {
    const TeleopMessage m = fuzz.next();
    const std::vector<std::uint8_t> bytes = encode(m);
    const TeleopMessage back = decode(bytes);
    ASSERT_EQ(back, m) << encode_body(m);
    ASSERT_EQ(encode(back), bytes);
  }
}

TEST(FrameReader, ReassemblesArbitraryChunking) {
  glteleop::testing::MessageFuzzer fuzz(7);
  std::vector<TeleopMessage> sent;
  std::vector<std::uint8_t> stream;
  for (int i = 0; i < 200; ++i) {
    sent.push_back(fuzz.next());
    const auto f = encode(sent.back());
    stream.insert(stream.end(), f.begin(), f.end());
  }
  std::mt19937_64 rng(8);
  std::uniform_int_distribution<std::size_t> chunk(1, 97);
  FrameReader reader;
  std::vector<TeleopMessage> got;
  for (std::size_t pos = 0; pos < stream.size();) {
    const std::size_t n = std::min(chunk(rng), stream.size() - pos);
    reader.feed(std::span(stream).subspan(pos, n));
    pos += n;
    while (auto body = reader.next()) got.push_back(decode_body(*body));
  }
  EXPECT_EQ(reader.buffered(), 0u);
  ASSERT_EQ(got.size(), sent.size());
  for (std::size_t i = 0; i < got.size(); ++i) EXPECT_EQ(got[i], sent[i]);
}

TEST(Commands, PayloadConversions) {
  const SlaveCommand joint = JointTarget{JointVector::Constant(6, 0.25)};
  EXPECT_TRUE(is_command(to_payload(joint)));
  EXPECT_EQ(std::get<JointTarget>(to_command(to_payload(joint))).joints, JointVector::Constant(6, 0.25));
  HandTarget hand;
  hand.values = {0.1, 0.2, 0.3, 0.3, 0.3, 0.3};
  EXPECT_EQ(std::get<HandTarget>(to_command(to_payload(hand))), hand);
  EXPECT_FALSE(is_command(Heartbeat{}));
  EXPECT_THROW(to_command(Estop{}), ProtocolError);
}
