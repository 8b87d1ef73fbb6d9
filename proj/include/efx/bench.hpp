#pragma once

// Sync-vs-async benchmarking of the two workflows under a deterministic
// latency-simulating mock. Timing uses the scheduler's virtual clock, so
// reported seconds reflect simulated latency (the quantity the stacks
// differ in) while real runtime stays small and results are reproducible.

#include <algorithm>
#include <cstdint>
#include <memory>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "efx/async_ops.hpp"
#include "efx/effects.hpp"
#include "efx/game24.hpp"
#include "efx/llm.hpp"
#include "efx/workflows.hpp"

namespace efx {

inline LogSink null_sink() {
  return [](const std::string&) {};
}

/// Canned research-topics backend: a fixed topic list for any get_topics
/// prompt and a canned description per topic, each call taking latency_ms.
inline std::shared_ptr<MockBackend> make_research_fixture_backend(
    std::int64_t latency_ms, int n_topics = 8) {
  std::vector<std::string> topics;
  for (int i = 1; i <= n_topics; ++i)
    topics.push_back("topic " + std::to_string(i));
  auto backend = std::make_shared<MockBackend>(latency_ms);
  backend->respond_with([topics](CallKind kind, const std::string& prompt,
                                 const SchemaRef*) -> std::optional<std::string> {
    if (kind == CallKind::Parse &&
        prompt.find("Give a list of topics") != std::string::npos)
      return Json{{"topics", topics}}.dump();
    if (kind == CallKind::Complete &&
        prompt.rfind("Give a short description about the topic ", 0) == 0) {
      std::string topic = prompt.substr(
          std::string("Give a short description about the topic ").size());
      if (!topic.empty() && topic.back() == '.') topic.pop_back();
      return "Description of " + topic + ".";
    }
    return std::nullopt;
  });
  return backend;
}

/// One research_topics run on a fresh virtual-clock scheduler; returns the
/// simulated seconds from first call to drain.
inline double run_research_bench_once(std::int64_t latency_ms, CallMode mode,
                                      int n_topics = 8,
                                      LogSink sink = null_sink()) {
  auto clock = std::make_shared<VirtualClock>();
  auto sched = std::make_shared<Scheduler>(clock);
  auto backend = make_research_fixture_backend(latency_ms, n_topics);
  std::int64_t t0 = clock->now_ms();
  {
    auto s1 = push_handler(make_async_handler(sched));
    auto s2 = push_handler(make_llm_handler(backend, mode));
    auto s3 = push_handler(make_async_seq_handler(sched));
    auto s4 = push_handler(make_research_topics_handler(sink));
    research_topics();
    s4.pop();
    s3.pop();
    s2.pop();
    s1.pop();  // drains the scheduler
  }
  return static_cast<double>(clock->now_ms() - t0) / 1000.0;
}

/// One Tree-of-Thoughts run on a fresh virtual-clock scheduler with the
/// deterministic mock Game-24 handler; returns simulated seconds.
inline double run_tot_bench_once(const std::vector<std::int64_t>& numbers,
                                 std::int64_t latency_ms, CallMode mode,
                                 int n_steps = 4, int n_select = 5,
                                 int n_eval = 3, LogSink sink = null_sink()) {
  auto clock = std::make_shared<VirtualClock>();
  auto sched = std::make_shared<Scheduler>(clock);
  std::int64_t t0 = clock->now_ms();
  {
    auto s1 = push_handler(make_async_handler(sched));
    auto s2 = push_handler(make_mock_game24_handler(numbers, latency_ms, mode));
    tree_of_thoughts(n_steps, n_select, n_eval, sink);
    s2.pop();
    s1.pop();
  }
  return static_cast<double>(clock->now_ms() - t0) / 1000.0;
}

struct BenchRow {
  std::string input;
  double async_s = 0;
  double sync_s = 0;
  double speedup = 0;
};

struct BenchReport {
  std::string workflow;
  std::vector<BenchRow> rows;
  double mean_speedup = 0;
  std::int64_t latency_ms = 0;
  int trials = 0;
  std::uint64_t seed = 0;

  Json to_json() const {
    Json jrows = Json::array();
    for (const auto& r : rows)
      jrows.push_back(Json{{"input", r.input},
                           {"async_s", r.async_s},
                           {"sync_s", r.sync_s},
                           {"speedup", r.speedup}});
    return Json{{"workflow", workflow},
                {"rows", jrows},
                {"mean_speedup", mean_speedup},
                {"meta", Json{{"latency_ms", latency_ms},
                              {"trials", trials},
                              {"seed", seed}}}};
  }

  std::string table() const {
    std::string out = "Input | Async (s) | Sync (s) | Speedup\n";
    char buf[160];
    for (const auto& r : rows) {
      std::snprintf(buf, sizeof(buf), "%s | %.3f | %.3f | %.2fx\n",
                    r.input.c_str(), r.async_s, r.sync_s, r.speedup);
      out += buf;
    }
    std::snprintf(buf, sizeof(buf), "mean speedup: %.2fx\n", mean_speedup);
    out += buf;
    return out;
  }
};

namespace detail {

inline double median(std::vector<double> xs) {
  std::sort(xs.begin(), xs.end());
  std::size_t n = xs.size();
  return n % 2 ? xs[n / 2] : (xs[n / 2 - 1] + xs[n / 2]) / 2.0;
}

inline void finish_report(BenchReport& report) {
  double total = 0;
  for (auto& row : report.rows) {
    row.speedup = row.sync_s > 0 && row.async_s > 0 ? row.sync_s / row.async_s
                                                    : 1.0;
    total += row.speedup;
  }
  report.mean_speedup = report.rows.empty()
                            ? 0
                            : total / static_cast<double>(report.rows.size());
}

}  // namespace detail

inline BenchReport bench_tot(const std::vector<std::vector<std::int64_t>>& inputs,
                             std::int64_t latency_ms, int trials = 3,
                             std::uint64_t seed = 0) {
  BenchReport report{"tot", {}, 0, latency_ms, trials, seed};
  for (const auto& numbers : inputs) {
    std::vector<double> a, s;
    for (int t = 0; t < trials; ++t) {
      a.push_back(run_tot_bench_once(numbers, latency_ms, CallMode::Async));
      s.push_back(run_tot_bench_once(numbers, latency_ms, CallMode::Sync));
    }
    std::vector<Rational> rats;
    for (auto n : numbers) rats.emplace_back(n);
    report.rows.push_back(
        BenchRow{format_numbers(rats), detail::median(a), detail::median(s), 0});
  }
  detail::finish_report(report);
  return report;
}

inline BenchReport bench_research(std::int64_t latency_ms, int trials = 3,
                                  int n_topics = 8, std::uint64_t seed = 0) {
  BenchReport report{"research-topics", {}, 0, latency_ms, trials, seed};
  std::vector<double> a, s;
  for (int t = 0; t < trials; ++t) {
    a.push_back(run_research_bench_once(latency_ms, CallMode::Async, n_topics));
    s.push_back(run_research_bench_once(latency_ms, CallMode::Sync, n_topics));
  }
  report.rows.push_back(BenchRow{std::to_string(n_topics) + " topics",
                                 detail::median(a), detail::median(s), 0});
  detail::finish_report(report);
  return report;
}

/// Validate the first completed state in the frontier; nullopt when no
/// state validates (the caller decides whether that is a failure).
inline std::optional<std::string> extract_solution(
    const std::vector<SolveState>& frontier) {
  for (const SolveState& state : frontier) {
    if (state.remaining.size() != 1 || state.remaining[0] != kTarget24)
      continue;
    try {
      return await_as<std::string>(g24_validate_op()(state));
    } catch (const ValidationFailed&) {
      continue;
    }
  }
  return std::nullopt;
}

}  // namespace efx
