#include <catch2/catch_amalgamated.hpp>

#include <atomic>
#include <chrono>
#include <memory>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>

#include "efx/async_ops.hpp"
#include "efx/effects.hpp"
#include "efx/llm.hpp"
#include "efx/llm_http.hpp"
#include "efx/scheduler.hpp"
#include "efx/trace.hpp"

using namespace efx;

namespace {

struct LLMFixture {
  std::shared_ptr<VirtualClock> clock = std::make_shared<VirtualClock>();
  std::shared_ptr<Scheduler> sched = std::make_shared<Scheduler>(clock);
  HandlerStack::Scope async_scope;
  HandlerStack::Scope llm_scope;

  explicit LLMFixture(std::shared_ptr<LLMBackend> backend,
                      CallMode mode = CallMode::Async) {
    async_scope = HandlerStack::current().push(make_async_handler(sched));
    llm_scope = HandlerStack::current().push(make_llm_handler(backend, mode));
  }
  ~LLMFixture() {
    if (llm_scope.active()) llm_scope.pop();
    if (async_scope.active()) async_scope.pop();
  }
};

const SchemaRef& test_schema() {
  static const SchemaRef schema("TestTopics", {{"topics", FieldType::StringList}},
                                Json{{"topics", {"a"}}});
  return schema;
}

}  // namespace

TEST_CASE("mock backend: exact rule, fallback rule, default, miss") {
  auto backend = std::make_shared<MockBackend>();
  backend->respond("p1", "r1");
  backend->respond_with([](CallKind, const std::string& p, const SchemaRef*)
                            -> std::optional<std::string> {
    if (p.find("topic") != std::string::npos) return "matched";
    return std::nullopt;
  });
  CHECK(backend->call(CallKind::Complete, "p1", nullptr) == "r1");
  CHECK(backend->call(CallKind::Complete, "a topic here", nullptr) == "matched");
  CHECK_THROWS_AS(backend->call(CallKind::Complete, "nothing", nullptr),
                  MockRuleMissing);
  backend->default_response("dflt");
  CHECK(backend->call(CallKind::Complete, "nothing", nullptr) == "dflt");
}

TEST_CASE("complete via mock handler resolves to the canned response") {
  auto backend = std::make_shared<MockBackend>();
  backend->respond("hello", "world");
  LLMFixture fx(backend);
  CHECK(await_as<std::string>(complete_op()("hello")) == "world");
}

TEST_CASE("parse validates against the schema") {
  auto backend = std::make_shared<MockBackend>();
  backend->respond("good", Json{{"topics", {"x", "y"}}}.dump());
  backend->respond("wrong-shape", Json{{"wrong", 1}}.dump());
  backend->respond("not-json", "certainly not json");
  LLMFixture fx(backend);

  Json obj = await_as<Json>(parse_op()("good", test_schema()));
  CHECK(obj.at("topics").size() == 2);
  CHECK_THROWS_AS(perform_await(parse_op()("wrong-shape", test_schema())),
                  SchemaValidationError);
  CHECK_THROWS_AS(perform_await(parse_op()("not-json", test_schema())),
                  SchemaValidationError);
}

TEST_CASE("sync mode returns already-settled futures") {
  auto backend = std::make_shared<MockBackend>(25);
  backend->default_response("r");
  LLMFixture fx(backend, CallMode::Sync);
  auto fut = complete_op()("p");
  CHECK(fut->status == FutureState::Status::Completed);
  CHECK(fx.clock->now_ms() == 25);
}

TEST_CASE("mock latency is simulated on the scheduler clock and overlaps") {
  auto backend = std::make_shared<MockBackend>(100);
  backend->default_response("r");
  LLMFixture fx(backend);
  std::vector<FuturePtr> futs;
  for (int i = 0; i < 8; ++i) futs.push_back(complete_op()("p"));
  for (auto& f : futs) perform_await(f);
  CHECK(fx.clock->now_ms() == 100);  // all eight in one simulated window
}

TEST_CASE("recording handler captures seq, kind, schema_id, latency") {
  auto backend = std::make_shared<MockBackend>(40);
  backend->respond("c1", "r1");
  backend->respond("c2", "r2");
  backend->respond("p1", Json{{"topics", {"t"}}}.dump());
  auto sink = std::make_shared<TraceSink>();
  LLMFixture fx(backend);
  auto rec_scope =
      HandlerStack::current().push(make_recording_handler(sink, fx.clock, "m1"));

  auto f1 = complete_op()("c1");
  auto f2 = parse_op()("p1", test_schema());
  auto f3 = complete_op()("c2");
  perform_await(f1);
  perform_await(f2);
  perform_await(f3);
  rec_scope.pop();

  const Trace& t = sink->trace();
  t.check_well_formed();
  REQUIRE(t.records.size() == 3);
  CHECK(t.records[0].seq == 0);
  CHECK(t.records[1].seq == 1);
  CHECK(t.records[2].seq == 2);
  CHECK(t.records[0].kind == "complete");
  CHECK(t.records[1].kind == "parse");
  CHECK(t.records[1].schema_id == "TestTopics");
  CHECK_FALSE(t.records[0].schema_id.has_value());
  CHECK(t.records[0].response == "r1");
  CHECK(t.records[1].response == Json{{"topics", {"t"}}}.dump());
  for (const auto& r : t.records) {
    CHECK(r.model == "m1");
    CHECK(r.latency_ms == 40.0);  // virtual clock, overlapping calls
  }
}

TEST_CASE("replay serves records in order without a backend") {
  Trace trace;
  trace.records.push_back(
      {0, "complete", "c1", std::nullopt, "r1", "m", 10.0});
  trace.records.push_back(
      {1, "parse", "p1", "TestTopics", Json{{"topics", {"t"}}}.dump(), "m", 5.0});
  auto source = std::make_shared<ReplaySource>(trace);

  auto clock = std::make_shared<VirtualClock>();
  auto sched = std::make_shared<Scheduler>(clock);
  auto a = HandlerStack::current().push(make_async_handler(sched));
  auto r = HandlerStack::current().push(make_replay_handler(source));

  CHECK(await_as<std::string>(complete_op()("c1")) == "r1");
  Json obj = await_as<Json>(parse_op()("p1", test_schema()));
  CHECK(obj.at("topics")[0] == "t");
  // replay does not simulate latency
  CHECK(clock->now_ms() == 0);
  // exhausted
  CHECK_THROWS_AS(perform_await(complete_op()("c1")), ReplayExhausted);
  r.pop();
  a.pop();
}

TEST_CASE("strict replay rejects kind and prompt mismatches") {
  Trace trace;
  trace.records.push_back({0, "complete", "c1", std::nullopt, "r1", "m", 0.0});
  trace.records.push_back({1, "complete", "c2", std::nullopt, "r2", "m", 0.0});
  ReplaySource strict(trace, true);
  CHECK_THROWS_AS(strict.next(CallKind::Parse, "c1"), ReplayMismatch);
  ReplaySource strict2(trace, true);
  CHECK_THROWS_AS(strict2.next(CallKind::Complete, "other"), ReplayMismatch);
  ReplaySource lax(trace, false);
  CHECK(lax.next(CallKind::Parse, "whatever").response == "r1");
}

TEST_CASE("trace JSONL round-trip preserves every record") {
  std::mt19937 rng(20240817);
  auto rand_str = [&rng](int n) {
    std::string s;
    std::uniform_int_distribution<int> d(32, 126);
    for (int i = 0; i < n; ++i) s += static_cast<char>(d(rng));
    s += "\" \\ \n newline-and-quote";
    return s;
  };
  for (int trial = 0; trial < 20; ++trial) {
    Trace t;
    std::uniform_int_distribution<int> len(0, 12);
    int n = len(rng);
    for (int i = 0; i < n; ++i) {
      LLMCallRecord r;
      r.seq = i;
      r.kind = (i % 2 == 0) ? "complete" : "parse";
      if (r.kind == "parse") r.schema_id = rand_str(5);
      r.prompt = rand_str(20);
      r.response = rand_str(30);
      r.model = "m";
      r.latency_ms = static_cast<double>(i) * 1.5;
      t.records.push_back(std::move(r));
    }
    std::istringstream in(t.serialize());
    CHECK(Trace::deserialize(in) == t);
  }
}

TEST_CASE("malformed traces are rejected with a line number") {
  std::istringstream bad_json("{not json\n");
  CHECK_THROWS_AS(Trace::deserialize(bad_json), TraceFormatError);

  std::istringstream missing_key(
      R"({"seq":0,"kind":"complete","prompt":"p","schema_id":null,"response":"r","model":"m"})");
  try {
    Trace::deserialize(missing_key);
    FAIL("expected TraceFormatError");
  } catch (const TraceFormatError& e) {
    CHECK(e.line() == 1);
    CHECK(std::string(e.what()).find("latency_ms") != std::string::npos);
  }

  Trace gap;
  gap.records.push_back({0, "complete", "p", std::nullopt, "r", "m", 0.0});
  gap.records.push_back({2, "complete", "p", std::nullopt, "r", "m", 0.0});
  CHECK_THROWS_AS(gap.check_well_formed(), TraceFormatError);

  Trace badkind;
  badkind.records.push_back({0, "chat", "p", std::nullopt, "r", "m", 0.0});
  CHECK_THROWS_AS(badkind.check_well_formed(), TraceFormatError);

  Trace parse_no_schema;
  parse_no_schema.records.push_back({0, "parse", "p", std::nullopt, "r", "m", 0.0});
  CHECK_THROWS_AS(parse_no_schema.check_well_formed(), TraceFormatError);
}

TEST_CASE("live config requires an API key for non-local endpoints") {
  LiveConfig remote;
  remote.base_url = "https://api.example.com";
  CHECK_THROWS_AS(LiveBackend(remote), ConfigError);
  remote.api_key = "k";
  CHECK_NOTHROW(LiveBackend(remote));
  LiveConfig local;  // default 127.0.0.1, no key needed
  CHECK_NOTHROW(LiveBackend(local));
}

TEST_CASE("live backend request body carries model, message, schema") {
  LiveConfig cfg;
  cfg.model = "test-model";
  LiveBackend backend(cfg);
  Json body = backend.request_body(CallKind::Complete, "hi", nullptr);
  CHECK(body.at("model") == "test-model");
  CHECK(body.at("messages")[0].at("content") == "hi");
  CHECK_FALSE(body.contains("response_format"));
  SchemaRef schema = test_schema();
  Json body2 = backend.request_body(CallKind::Parse, "hi", &schema);
  CHECK(body2.at("response_format").at("json_schema").at("name") == "TestTopics");
}

TEST_CASE("live backend against a local chat-completions stub") {
  httplib::Server server;
  std::atomic<int> hits{0};
  server.Post("/chat/completions", [&hits](const httplib::Request& req,
                                           httplib::Response& res) {
    ++hits;
    Json body = Json::parse(req.body);
    std::string prompt = body.at("messages")[0].at("content");
    std::this_thread::sleep_for(std::chrono::milliseconds(100));
    Json reply{{"choices",
                Json::array({Json{{"message", Json{{"role", "assistant"},
                                                   {"content", "echo: " + prompt}}}}})}};
    res.set_content(reply.dump(), "application/json");
  });
  int port = server.bind_to_any_port("127.0.0.1");
  std::thread server_thread([&server] { server.listen_after_bind(); });
  while (!server.is_running()) std::this_thread::sleep_for(std::chrono::milliseconds(1));

  LiveConfig cfg;
  cfg.base_url = "http://127.0.0.1:" + std::to_string(port);
  auto backend = std::make_shared<LiveBackend>(cfg);

  SECTION("single call returns the message content") {
    CHECK(backend->call(CallKind::Complete, "one", nullptr) == "echo: one");
  }

  SECTION("eight 100 ms calls overlap in flight") {
    auto sched = std::make_shared<Scheduler>();  // wall clock
    auto a = HandlerStack::current().push(make_async_handler(sched));
    auto h = HandlerStack::current().push(make_llm_handler(backend));
    auto t0 = std::chrono::steady_clock::now();
    std::vector<FuturePtr> futs;
    for (int i = 0; i < 8; ++i)
      futs.push_back(complete_op()("p" + std::to_string(i)));
    for (int i = 0; i < 8; ++i)
      CHECK(await_as<std::string>(futs[i]) == "echo: p" + std::to_string(i));
    auto elapsed = std::chrono::duration_cast<std::chrono::milliseconds>(
                       std::chrono::steady_clock::now() - t0)
                       .count();
    CHECK(hits == 8);
    CHECK(elapsed < 700);  // serial would be >= 800
    h.pop();
    a.pop();
  }

  SECTION("HTTP errors become BackendError") {
    LiveConfig bad = cfg;
    bad.base_url = "http://127.0.0.1:1";  // nothing listens here
    bad.timeout_ms = 500;
    LiveBackend broken(bad);
    CHECK_THROWS_AS(broken.call(CallKind::Complete, "x", nullptr), BackendError);
  }

  server.stop();
  server_thread.join();
}
