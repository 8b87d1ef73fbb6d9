#pragma once

// The complete/parse abstract operations and their interchangeable
// handlers: live OpenAI-compatible HTTP backend, deterministic
// latency-simulating mock, trace recorder, and trace replayer. All async
// handlers return futures so independent calls overlap; sync mode awaits
// each call before returning it (the future comes back already settled).

#include <cstdint>
#include <cstdlib>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "efx/async_ops.hpp"
#include "efx/effects.hpp"
#include "efx/schema.hpp"
#include "efx/scheduler.hpp"
#include "efx/trace.hpp"

namespace efx {

class BackendError : public std::runtime_error {
 public:
  explicit BackendError(const std::string& what) : std::runtime_error(what) {}
};

class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

class MockRuleMissing : public std::runtime_error {
 public:
  explicit MockRuleMissing(const std::string& prompt)
      : std::runtime_error("no mock rule matches prompt: " + prompt) {}
};

class ReplayExhausted : public std::runtime_error {
 public:
  explicit ReplayExhausted(std::size_t n)
      : std::runtime_error("replay trace exhausted after " + std::to_string(n) +
                           " records") {}
};

class ReplayMismatch : public std::runtime_error {
 public:
  ReplayMismatch(std::int64_t seq, const std::string& field,
                 const std::string& expected, const std::string& got)
      : std::runtime_error("replay mismatch at seq " + std::to_string(seq) +
                           " on " + field + ": recorded \"" + expected +
                           "\", got \"" + got + "\"") {}
};

enum class CallKind { Complete, Parse };

inline const char* call_kind_name(CallKind k) {
  return k == CallKind::Complete ? "complete" : "parse";
}

enum class CallMode { Async, Sync };

inline const Operation<FuturePtr(std::string)>& complete_op() {
  static const Operation<FuturePtr(std::string)> op("complete");
  return op;
}

inline const Operation<FuturePtr(std::string, SchemaRef)>& parse_op() {
  static const Operation<FuturePtr(std::string, SchemaRef)> op("parse");
  return op;
}

/// Raw text backend; runs inside a scheduled task, so it may sleep
/// (mock) or block off the baton (live HTTP).
struct LLMBackend {
  virtual ~LLMBackend() = default;
  virtual std::string call(CallKind kind, const std::string& prompt,
                           const SchemaRef* schema) = 0;
  virtual std::string model_name() const = 0;
};

class MockBackend : public LLMBackend {
 public:
  using Rule = std::function<std::optional<std::string>(
      CallKind, const std::string&, const SchemaRef*)>;

  explicit MockBackend(std::int64_t latency_ms = 0) : latency_ms_(latency_ms) {}

  MockBackend& respond(std::string prompt, std::string response) {
    exact_.emplace_back(std::move(prompt), std::move(response));
    return *this;
  }
  MockBackend& respond_with(Rule rule) {
    rules_.push_back(std::move(rule));
    return *this;
  }
  MockBackend& default_response(std::string response) {
    default_ = std::move(response);
    return *this;
  }

  std::string call(CallKind kind, const std::string& prompt,
                   const SchemaRef* schema) override {
    if (latency_ms_ > 0) perform_sleep(latency_ms_);
    for (const auto& [p, r] : exact_)
      if (p == prompt) return r;
    for (const auto& rule : rules_)
      if (auto r = rule(kind, prompt, schema)) return *r;
    if (default_) return *default_;
    throw MockRuleMissing(prompt);
  }

  std::string model_name() const override { return "mock"; }

 private:
  std::int64_t latency_ms_;
  std::vector<std::pair<std::string, std::string>> exact_;
  std::vector<Rule> rules_;
  std::optional<std::string> default_;
};

struct LiveConfig {
  std::string base_url = "http://127.0.0.1:8089";
  std::string api_key;
  std::string model = "mock-model";
  double temperature = 0.7;
  std::int64_t timeout_ms = 30000;

  static LiveConfig from_env() {
    LiveConfig c;
    if (const char* v = std::getenv("LLM_BASE_URL")) c.base_url = v;
    if (const char* v = std::getenv("LLM_API_KEY")) c.api_key = v;
    if (const char* v = std::getenv("LLM_MODEL")) c.model = v;
    return c;
  }

  bool is_local() const {
    return base_url.find("127.0.0.1") != std::string::npos ||
           base_url.find("localhost") != std::string::npos;
  }
};

/// OpenAI-compatible chat-completions backend: one POST
/// {base_url}/chat/completions per call, bearer-token auth, single user
/// message. Declared here; the HTTP implementation lives in llm_http.hpp
/// so pure-mock users do not pull in the HTTP stack.
class LiveBackend : public LLMBackend {
 public:
  explicit LiveBackend(LiveConfig cfg) : cfg_(std::move(cfg)) {
    if (!cfg_.is_local() && cfg_.api_key.empty())
      throw ConfigError("LLM_API_KEY is required for non-local endpoint " +
                        cfg_.base_url);
  }

  std::string call(CallKind kind, const std::string& prompt,
                   const SchemaRef* schema) override;

  std::string model_name() const override { return cfg_.model; }

  Json request_body(CallKind kind, const std::string& prompt,
                    const SchemaRef* schema) const {
    Json body{{"model", cfg_.model},
              {"temperature", cfg_.temperature},
              {"messages", Json::array({Json{{"role", "user"},
                                             {"content", prompt}}})}};
    if (kind == CallKind::Parse && schema)
      body["response_format"] = schema->response_format();
    return body;
  }

  const LiveConfig& config() const { return cfg_; }

 private:
  LiveConfig cfg_;
};

namespace detail {

inline Json parse_and_validate(const std::string& raw, const SchemaRef& schema) {
  Json obj;
  try {
    obj = Json::parse(raw);
  } catch (const Json::exception& e) {
    throw SchemaValidationError("output is not valid JSON for schema '" +
                                schema.schema_id + "': " + e.what());
  }
  schema.validate(obj);
  return obj;
}

}  // namespace detail

/// Handler discharging complete/parse against a backend. Each call is
/// scheduled through async_ so multiple requests overlap in flight.
inline HandlerFrame make_llm_handler(std::shared_ptr<LLMBackend> backend,
                                     CallMode mode = CallMode::Async) {
  HandlerFrame frame(mode == CallMode::Async ? "AsyncLLMHandler" : "LLMHandler");
  frame.on(complete_op(),
           std::function<FuturePtr(std::string)>([backend, mode](std::string prompt) {
             FuturePtr fut = perform_async([backend, prompt]() -> std::any {
               return std::any(backend->call(CallKind::Complete, prompt, nullptr));
             });
             if (mode == CallMode::Sync) perform_await(fut);
             return fut;
           }));
  frame.on(parse_op(), std::function<FuturePtr(std::string, SchemaRef)>(
                           [backend, mode](std::string prompt, SchemaRef schema) {
                             FuturePtr fut = perform_async(
                                 [backend, prompt, schema]() -> std::any {
                                   std::string raw = backend->call(
                                       CallKind::Parse, prompt, &schema);
                                   return std::any(detail::parse_and_validate(
                                       raw, schema));
                                 });
                             if (mode == CallMode::Sync) perform_await(fut);
                             return fut;
                           }));
  return frame;
}

/// Accumulates records during a recorded run; seq is assigned at call
/// initiation (in the scheduler context), responses and latencies are
/// filled in when each call settles.
class TraceSink {
 public:
  std::size_t reserve(CallKind kind, const std::string& prompt,
                      std::optional<std::string> schema_id,
                      const std::string& model) {
    LLMCallRecord r;
    r.seq = static_cast<std::int64_t>(trace_.records.size());
    r.kind = call_kind_name(kind);
    r.prompt = prompt;
    r.schema_id = std::move(schema_id);
    r.model = model;
    trace_.records.push_back(std::move(r));
    return static_cast<std::size_t>(trace_.records.back().seq);
  }

  void fill(std::size_t seq, std::string response, double latency_ms) {
    trace_.records.at(seq).response = std::move(response);
    trace_.records.at(seq).latency_ms = latency_ms;
  }

  const Trace& trace() const { return trace_; }

 private:
  Trace trace_;
};

/// Wraps a downstream LLM handler: forwards each call below and appends
/// one record per call with the observed response and latency.
inline HandlerFrame make_recording_handler(std::shared_ptr<TraceSink> sink,
                                           std::shared_ptr<Clock> clock,
                                           std::string model) {
  HandlerFrame frame("RecordLLMHandler");
  frame.on(complete_op(), std::function<FuturePtr(std::string)>(
                              [sink, clock, model](std::string prompt) {
                                std::size_t seq = sink->reserve(
                                    CallKind::Complete, prompt, std::nullopt, model);
                                std::int64_t t0 = clock->now_ms();
                                FuturePtr inner = complete_op()(prompt);
                                return perform_async([sink, clock, seq, t0,
                                                      inner]() -> std::any {
                                  std::any v = perform_await(inner);
                                  sink->fill(seq, std::any_cast<std::string>(v),
                                             static_cast<double>(clock->now_ms() - t0));
                                  return v;
                                });
                              }));
  frame.on(parse_op(),
           std::function<FuturePtr(std::string, SchemaRef)>(
               [sink, clock, model](std::string prompt, SchemaRef schema) {
                 std::size_t seq = sink->reserve(CallKind::Parse, prompt,
                                                 schema.schema_id, model);
                 std::int64_t t0 = clock->now_ms();
                 FuturePtr inner = parse_op()(prompt, schema);
                 return perform_async([sink, clock, seq, t0, inner]() -> std::any {
                   std::any v = perform_await(inner);
                   sink->fill(seq, std::any_cast<Json>(v).dump(),
                              static_cast<double>(clock->now_ms() - t0));
                   return v;
                 });
               }));
  return frame;
}

/// Serves recorded responses in place of live calls. Records are consumed
/// in seq order; strict mode additionally requires kind and prompt
/// equality with the next record.
class ReplaySource {
 public:
  explicit ReplaySource(Trace trace, bool strict = false)
      : trace_(std::move(trace)), strict_(strict) {
    trace_.check_well_formed();
  }

  const LLMCallRecord& next(CallKind kind, const std::string& prompt) {
    if (next_ >= trace_.records.size())
      throw ReplayExhausted(trace_.records.size());
    const LLMCallRecord& r = trace_.records[next_];
    if (strict_) {
      if (r.kind != call_kind_name(kind))
        throw ReplayMismatch(r.seq, "kind", r.kind, call_kind_name(kind));
      if (r.prompt != prompt)
        throw ReplayMismatch(r.seq, "prompt", r.prompt, prompt);
    }
    ++next_;
    return r;
  }

  std::size_t consumed() const { return next_; }

 private:
  Trace trace_;
  bool strict_;
  std::size_t next_ = 0;
};

inline HandlerFrame make_replay_handler(std::shared_ptr<ReplaySource> source) {
  HandlerFrame frame("AsyncReplayLLMHandler");
  frame.on(complete_op(),
           std::function<FuturePtr(std::string)>([source](std::string prompt) {
             try {
               const auto& r = source->next(CallKind::Complete, prompt);
               return make_completed_future(std::any(r.response));
             } catch (...) {
               return make_failed_future(std::current_exception());
             }
           }));
  frame.on(parse_op(), std::function<FuturePtr(std::string, SchemaRef)>(
                           [source](std::string prompt, SchemaRef schema) {
                             try {
                               const auto& r =
                                   source->next(CallKind::Parse, prompt);
                               return make_completed_future(std::any(
                                   detail::parse_and_validate(r.response, schema)));
                             } catch (...) {
                               return make_failed_future(std::current_exception());
                             }
                           }));
  return frame;
}

}  // namespace efx
