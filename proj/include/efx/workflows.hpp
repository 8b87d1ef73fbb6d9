#pragma once

// The two reference workflows, written purely in terms of abstract
// operations: research_topics (topic fan-out with ordered logging) and
// Tree-of-Thoughts beam search over Game-of-24 states. Also the log
// handlers they compose with.

#include <chrono>
#include <ctime>
#include <functional>
#include <iostream>
#include <stdexcept>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "efx/async_ops.hpp"
#include "efx/effects.hpp"
#include "efx/game24.hpp"
#include "efx/llm.hpp"

namespace efx {

using LogSink = std::function<void(const std::string&)>;

inline LogSink stdout_sink() {
  return [](const std::string& line) { std::cout << line << "\n" << std::flush; };
}

/// log accepts either a ready string or a future that resolves to one.
using LogMsg = std::variant<std::string, FuturePtr>;

inline const Operation<FuturePtr(LogMsg)>& log_op() {
  static const Operation<FuturePtr(LogMsg)> op("log");
  return op;
}
inline const Operation<std::vector<std::string>(std::string)>& get_topics_op() {
  static const Operation<std::vector<std::string>(std::string)> op("get_topics");
  return op;
}
inline const Operation<FuturePtr(std::string)>& get_description_op() {
  static const Operation<FuturePtr(std::string)> op("get_description");
  return op;
}

namespace detail {

inline std::string resolve_log_msg(const LogMsg& msg) {
  if (const auto* s = std::get_if<std::string>(&msg)) return *s;
  std::any v = perform_await(std::get<FuturePtr>(msg));
  if (const auto* s = std::any_cast<std::string>(&v)) return *s;
  return "<non-string value>";
}

}  // namespace detail

/// Prints "[INFO] " + msg immediately. Future arguments are awaited first
/// (requires an await_ handler below in that case).
inline HandlerFrame make_log_handler(LogSink sink = stdout_sink()) {
  HandlerFrame frame("LogHandler");
  frame.on(log_op(), std::function<FuturePtr(LogMsg)>([sink](LogMsg msg) {
             std::string text = detail::resolve_log_msg(msg);
             sink("[INFO] " + text);
             return make_completed_future(std::any(text));
           }));
  return frame;
}

inline std::string default_timestamp() {
  auto now = std::chrono::system_clock::now();
  std::time_t tt = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  localtime_r(&tt, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%d %H:%M:%S", &tm);
  return buf;
}

/// Prints "[DATE] " + timestamp, then re-performs log, which dispatches
/// below this frame. Raises UnhandledOperation if nothing below takes log.
inline HandlerFrame make_log_date_handler(
    LogSink sink = stdout_sink(),
    std::function<std::string()> now_fn = default_timestamp) {
  HandlerFrame frame("LogDateHandler");
  frame.on(log_op(),
           std::function<FuturePtr(LogMsg)>([sink, now_fn](LogMsg msg) {
             sink("[DATE] " + now_fn());
             return log_op()(std::move(msg));
           }));
  return frame;
}

struct TopicReport {
  std::string area;
  std::vector<std::pair<std::string, std::string>> entries;

  bool operator==(const TopicReport& o) const {
    return area == o.area && entries == o.entries;
  }
};

inline const SchemaRef& research_area_schema() {
  static const SchemaRef schema(
      "ResearchArea", {{"topics", FieldType::StringList}},
      Json{{"topics", {"effect handlers", "prompting"}}});
  return schema;
}

inline std::string get_topics_prompt(const std::string& area) {
  return "Give a list of topics in the research area " + area + ".";
}
inline std::string get_description_prompt(const std::string& topic) {
  return "Give a short description about the topic " + topic + ".";
}

/// Application handler for the research-topics workflow: get_topics blocks
/// on a structured parse, get_description returns the unawaited complete
/// future, and log schedules a task whose callback prints to the sink.
inline HandlerFrame make_research_topics_handler(LogSink sink = stdout_sink()) {
  HandlerFrame frame("AsyncResearchTopicsHandler");
  frame.on(get_topics_op(), std::function<std::vector<std::string>(std::string)>(
                                [](std::string area) {
                                  Json obj = await_as<Json>(parse_op()(
                                      get_topics_prompt(area),
                                      research_area_schema()));
                                  return obj.at("topics")
                                      .get<std::vector<std::string>>();
                                }));
  frame.on(get_description_op(),
           std::function<FuturePtr(std::string)>([](std::string topic) {
             return complete_op()(get_description_prompt(topic));
           }));
  frame.on(log_op(), std::function<FuturePtr(LogMsg)>([sink](LogMsg msg) {
             return perform_async(
                 [msg]() -> std::any {
                   return std::any(detail::resolve_log_msg(msg));
                 },
                 [sink](std::any v) {
                   sink(std::any_cast<std::string>(v));
                   return v;
                 });
           }));
  return frame;
}

/// Asks for topics in an area, fans out one description request per topic
/// without waiting, and logs topic/description pairs. Under AsyncSeqHandler
/// the printed lines appear in topic order even though the description
/// calls overlap.
inline TopicReport research_topics(
    const std::string& area = "PL techniques for LLM applications") {
  TopicReport report;
  report.area = area;
  std::vector<std::string> topics = get_topics_op()(area);
  std::vector<FuturePtr> descriptions;
  for (const std::string& topic : topics) {
    log_op()(LogMsg(topic));
    FuturePtr description = get_description_op()(topic);
    log_op()(LogMsg(description));
    descriptions.push_back(description);
  }
  for (std::size_t i = 0; i < topics.size(); ++i)
    report.entries.emplace_back(topics[i],
                                await_as<std::string>(descriptions[i]));
  return report;
}

struct ScoredCandidate {
  SolveState state;
  double score = 0;
  std::size_t submission_index = 0;
};

/// The k highest-score candidates; ties broken by lower submission_index.
inline std::vector<ScoredCandidate> top_k(std::vector<ScoredCandidate> scored,
                                          std::size_t k) {
  std::stable_sort(scored.begin(), scored.end(),
                   [](const ScoredCandidate& a, const ScoredCandidate& b) {
                     if (a.score != b.score) return a.score > b.score;
                     return a.submission_index < b.submission_index;
                   });
  if (scored.size() > k) scored.resize(k);
  return scored;
}

/// Beam search: each step expands every frontier state, flattens the
/// candidates, scores each with n_eval repetitions, and keeps the top
/// n_select. All expand/score futures for a step are issued before any is
/// awaited, so an async handler stack overlaps the underlying calls.
inline std::vector<SolveState> tree_of_thoughts(int n_steps, int n_select,
                                                int n_eval,
                                                LogSink sink = stdout_sink()) {
  if (n_steps < 0 || n_select < 1 || n_eval < 1)
    throw std::invalid_argument(
        "tree_of_thoughts requires n_steps >= 0, n_select >= 1, n_eval >= 1");
  std::vector<SolveState> frontier{g24_init_op()()};
  for (int step = 0; step < n_steps; ++step) {
    std::vector<FuturePtr> expanded;
    for (const SolveState& state : frontier)
      expanded.push_back(g24_expand_op()(state));
    std::vector<SolveState> candidates;
    for (const FuturePtr& f : expanded) {
      auto batch = await_as<std::vector<SolveState>>(f);
      candidates.insert(candidates.end(), batch.begin(), batch.end());
    }
    std::vector<FuturePtr> scores;
    for (const SolveState& cand : candidates)
      scores.push_back(g24_score_op()(cand, n_eval));
    std::vector<ScoredCandidate> scored;
    for (std::size_t i = 0; i < candidates.size(); ++i)
      scored.push_back(
          ScoredCandidate{candidates[i], await_as<double>(scores[i]), i});
    frontier.clear();
    for (auto& sc : top_k(std::move(scored), static_cast<std::size_t>(n_select)))
      frontier.push_back(std::move(sc.state));
  }
  for (const SolveState& state : frontier) sink(format_state(state));
  return frontier;
}

}  // namespace efx
