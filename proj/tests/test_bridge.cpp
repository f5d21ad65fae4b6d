#include <gtest/gtest.h>

#include <chrono>

#include "seqopt/agents.hpp"
#include "seqopt/environments.hpp"

using namespace seqopt;

namespace {

BridgeSpec echo(const std::string& mode, int timeout_ms = 2000) {
  BridgeSpec s;
  s.command = {SEQOPT_ECHO_ORACLE, mode};
  s.timeout = std::chrono::milliseconds(timeout_ms);
  s.vocab_size = 10;
  s.prompt_length = 3;
  return s;
}

}  // namespace

TEST(BridgeWire, RequestFormatIsExact) {
  EXPECT_EQ(BridgeEnv::format_request(1, TokenSeq{3, 1, 4}), "{\"id\":1,\"tokens\":[3,1,4]}\n");
  EXPECT_EQ(BridgeEnv::format_request(42, TokenSeq{}), "{\"id\":42,\"tokens\":[]}\n");
}

TEST(BridgeWire, ResponseParsing) {
  EXPECT_EQ(BridgeEnv::parse_response("{\"id\":7,\"reward\":0.25}", 7), 0.25);
  EXPECT_EQ(BridgeEnv::parse_response("{\"id\":7,\"reward\":-1.5e-3,\"extra\":[1]}", 7), -1.5e-3);
  EXPECT_EQ(BridgeEnv::parse_response("{\"reward\":2,\"id\":7}", 7), 2.0);
  EXPECT_THROW(BridgeEnv::parse_response("{\"id\":8,\"reward\":0.25}", 7), EnvironmentError);
  EXPECT_THROW(BridgeEnv::parse_response("{\"id\":7}", 7), EnvironmentError);
  EXPECT_THROW(BridgeEnv::parse_response("{\"id\":7,\"reward\":\"high\"}", 7), EnvironmentError);
  EXPECT_THROW(BridgeEnv::parse_response("{\"id\":-7,\"reward\":1}", 7), EnvironmentError);
  EXPECT_THROW(BridgeEnv::parse_response("reward=1", 7), EnvironmentError);
  EXPECT_THROW(BridgeEnv::parse_response("[1,2]", 7), EnvironmentError);
}

TEST(Bridge, RoundTrip) {
  BridgeEnv env(echo("normal"));
  EXPECT_EQ(bridge_evaluate(env, TokenSeq{3, 1, 4}), 0.3);
  EXPECT_EQ(bridge_evaluate(env, TokenSeq{9, 0, 0}), 0.9);
  EXPECT_EQ(bridge_evaluate(env, TokenSeq{0, 5, 5}), 0.0);
  EXPECT_EQ(env.requests_sent(), 3u);
  EXPECT_THROW(bridge_evaluate(env, TokenSeq{3, 1}), InputError);
  EXPECT_THROW(bridge_evaluate(env, TokenSeq{3, 1, 10}), InputError);
}

TEST(Bridge, UnknownResponseFieldsIgnored) {
  BridgeEnv env(echo("extra"));
  EXPECT_EQ(bridge_evaluate(env, TokenSeq{5, 0, 0}), 0.5);
}

TEST(Bridge, IdMismatchIsEnvironmentError) {
  BridgeEnv env(echo("mismatch"));
  EXPECT_THROW(bridge_evaluate(env, TokenSeq{3, 1, 4}), EnvironmentError);
  EXPECT_THROW(bridge_evaluate(env, TokenSeq{3, 1, 4}), EnvironmentError);
}

TEST(Bridge, MalformedLineIsEnvironmentError) {
  BridgeEnv env(echo("malformed"));
  try {
    bridge_evaluate(env, TokenSeq{3, 1, 4});
    FAIL() << "accepted a malformed line";
  } catch (const EnvironmentError& e) {
    EXPECT_NE(std::string(e.what()).find("malformed"), std::string::npos) << e.what();
  }
}

TEST(Bridge, TimeoutIsEnvironmentError) {
  BridgeEnv env(echo("hang", 200));
  const auto start = std::chrono::steady_clock::now();
  try {
    bridge_evaluate(env, TokenSeq{3, 1, 4});
    FAIL() << "no timeout";
  } catch (const EnvironmentError& e) {
    EXPECT_NE(std::string(e.what()).find("timed out"), std::string::npos) << e.what();
  }
  EXPECT_LT(std::chrono::steady_clock::now() - start, std::chrono::seconds(5));
}

TEST(Bridge, ClosedStreamAbortsTrainingCleanly) {
  BridgeEnv env(echo("close"));
  ModelSpec s;
  s.vocab_size = 10;
  s.embed_dim = 8;
  s.input_dim = 8;
  s.hidden = 16;
  AgentConfig cfg;
  cfg.prompt_length = 3;
  cfg.top_k = 10;
  cfg.batch_episodes = 2;
  AgentState st(QFunctionModel::create(s, 1, 1e-3), cfg);
  // The first iteration's exploratory call succeeds; the greedy evaluation is
  // the second request, which the child never answers.
  try {
    train(st, env, 5);
    FAIL() << "closed stream not reported";
  } catch (const EnvironmentError& e) {
    EXPECT_NE(std::string(e.what()).find("closed"), std::string::npos) << e.what();
  }
  EXPECT_THROW(bridge_evaluate(env, TokenSeq{1, 2, 3}), EnvironmentError);
}

TEST(Bridge, MissingExecutableFailsOnFirstCall) {
  BridgeSpec s = echo("normal");
  s.command = {"/nonexistent/seqopt-oracle"};
  BridgeEnv env(s);
  EXPECT_THROW(bridge_evaluate(env, TokenSeq{1, 2, 3}), EnvironmentError);
}

TEST(Bridge, RejectsBadSpec) {
  BridgeSpec s = echo("normal");
  s.command.clear();
  EXPECT_THROW(BridgeEnv{s}, ConfigError);
  s = echo("normal");
  s.timeout = std::chrono::milliseconds(0);
  EXPECT_THROW(BridgeEnv{s}, ConfigError);
}
