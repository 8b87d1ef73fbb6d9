// Command-line entry point: run the workflows under selectable handler
// stacks, benchmark sync vs. async, record/replay/inspect traces, and
// drive the calculus interpreter.
//
// Exit codes: 0 success, 1 workflow failure, 2 configuration error,
// 3 no valid solution found (run tot).

#include <cstdint>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "efx/bench.hpp"
#include "efx/calculus.hpp"
#include "efx/effects.hpp"
#include "efx/game24.hpp"
#include "efx/llm.hpp"
#include "efx/llm_http.hpp"
#include "efx/workflows.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitWorkflowFailure = 1;
constexpr int kExitConfigError = 2;
constexpr int kExitNoSolution = 3;

struct StackSpec {
  std::string mode = "async";  // async | sync
  std::string llm = "mock";    // live | mock | replay | record
  std::string inner = "mock";  // backend under the recording handler
  std::string trace_path;
  std::int64_t latency_ms = 0;

  efx::CallMode call_mode() const {
    return mode == "sync" ? efx::CallMode::Sync : efx::CallMode::Async;
  }
};

struct Layers {
  std::shared_ptr<efx::Clock> clock;
  std::shared_ptr<efx::Scheduler> sched;
  std::shared_ptr<efx::TraceSink> sink;  // non-null when recording
  std::vector<efx::HandlerStack::Scope> scopes;

  void pop_all() {
    while (!scopes.empty()) {
      scopes.back().pop();
      scopes.pop_back();
    }
  }
};

std::shared_ptr<efx::LLMBackend> make_backend(const StackSpec& spec,
                                              const std::string& kind) {
  if (kind == "mock") return efx::make_research_fixture_backend(spec.latency_ms);
  if (kind == "live")
    return std::make_shared<efx::LiveBackend>(efx::LiveConfig::from_env());
  throw efx::ConfigError("unknown backend kind: " + kind);
}

/// Scheduler + async handler + the LLM layer selected by the flags.
Layers open_llm_stack(const StackSpec& spec) {
  Layers l;
  if (spec.llm == "live" || (spec.llm == "record" && spec.inner == "live"))
    l.clock = std::make_shared<efx::WallClock>();
  else
    l.clock = std::make_shared<efx::VirtualClock>();
  l.sched = std::make_shared<efx::Scheduler>(l.clock);
  l.scopes.push_back(efx::push_handler(efx::make_async_handler(l.sched)));
  if (spec.llm == "replay") {
    if (spec.trace_path.empty())
      throw efx::ConfigError("--llm replay requires --trace PATH");
    if (!std::ifstream(spec.trace_path))
      throw efx::ConfigError("trace file does not exist: " + spec.trace_path);
    auto source = std::make_shared<efx::ReplaySource>(
        efx::Trace::load(spec.trace_path));
    l.scopes.push_back(efx::push_handler(efx::make_replay_handler(source)));
    if (spec.call_mode() == efx::CallMode::Sync) {
      // Replay futures are settled at return; sync and async coincide.
    }
    return l;
  }
  if (spec.llm == "record") {
    if (spec.trace_path.empty())
      throw efx::ConfigError("--llm record requires --trace PATH");
    auto backend = make_backend(spec, spec.inner);
    l.scopes.push_back(
        efx::push_handler(efx::make_llm_handler(backend, spec.call_mode())));
    l.sink = std::make_shared<efx::TraceSink>();
    l.scopes.push_back(efx::push_handler(
        efx::make_recording_handler(l.sink, l.clock, backend->model_name())));
    return l;
  }
  auto backend = make_backend(spec, spec.llm);
  l.scopes.push_back(
      efx::push_handler(efx::make_llm_handler(backend, spec.call_mode())));
  return l;
}

int run_research(const StackSpec& spec, const std::string& area, bool json) {
  Layers l = open_llm_stack(spec);
  l.scopes.push_back(efx::push_handler(efx::make_async_seq_handler(l.sched)));
  l.scopes.push_back(
      efx::push_handler(efx::make_research_topics_handler(efx::stdout_sink())));
  efx::TopicReport report = efx::research_topics(area);
  l.pop_all();
  if (l.sink) efx::Trace(l.sink->trace()).save(spec.trace_path);
  if (json) {
    efx::Json entries = efx::Json::array();
    for (const auto& [topic, description] : report.entries)
      entries.push_back(efx::Json{{"topic", topic}, {"description", description}});
    std::cout << efx::Json{{"area", report.area}, {"entries", entries}}.dump()
              << "\n";
  }
  return kExitOk;
}

int run_tot(const StackSpec& spec, const std::vector<std::int64_t>& numbers,
            int n_steps, int n_select, int n_eval, bool json) {
  Layers l;
  std::optional<std::string> solution;
  std::vector<efx::SolveState> frontier;
  if (spec.llm == "mock") {
    l.clock = std::make_shared<efx::VirtualClock>();
    l.sched = std::make_shared<efx::Scheduler>(l.clock);
    l.scopes.push_back(efx::push_handler(efx::make_async_handler(l.sched)));
    l.scopes.push_back(efx::push_handler(efx::make_mock_game24_handler(
        numbers, spec.latency_ms, spec.call_mode())));
  } else {
    l = open_llm_stack(spec);
    l.scopes.push_back(efx::push_handler(
        efx::make_llm_game24_handler(numbers, spec.call_mode())));
  }
  frontier = efx::tree_of_thoughts(n_steps, n_select, n_eval,
                                   efx::stdout_sink());
  solution = efx::extract_solution(frontier);
  l.pop_all();
  if (l.sink) efx::Trace(l.sink->trace()).save(spec.trace_path);
  if (json) {
    efx::Json states = efx::Json::array();
    for (const auto& s : frontier) states.push_back(efx::format_state(s));
    std::cout << efx::Json{{"frontier", states},
                           {"solution", solution ? efx::Json(*solution)
                                                 : efx::Json()}}
                     .dump()
              << "\n";
  }
  if (!solution) {
    std::cerr << "no valid solution found\n";
    return kExitNoSolution;
  }
  std::cout << "solution: " << *solution << "\n";
  return kExitOk;
}

int inspect_trace(const std::string& path) {
  efx::Trace trace = efx::Trace::load(path);
  for (const auto& r : trace.records) {
    std::cout << r.seq << " " << r.kind << " model=" << r.model
              << " latency_ms=" << r.latency_ms
              << " schema=" << (r.schema_id ? *r.schema_id : "-")
              << " prompt=" << efx::Json(r.prompt).dump()
              << " response=" << efx::Json(r.response).dump() << "\n";
  }
  std::cout << trace.records.size() << " record(s)\n";
  return kExitOk;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw efx::ConfigError("cannot read file: " + path);
  std::ostringstream oss;
  oss << in.rdbuf();
  return oss.str();
}

int calc_run(const std::string& path, bool multishot, std::size_t step_limit) {
  efx::calc::EvalOptions opt;
  opt.multishot = multishot;
  opt.step_limit = step_limit;
  opt.print_sink = [](const std::string& s) { std::cout << s << "\n"; };
  auto program = efx::calc::parse_program(read_file(path), multishot);
  auto outcome = efx::calc::eval(program, opt);
  std::cout << "=> " << efx::calc::format_value(outcome.value) << "\n";
  return kExitOk;
}

int calc_trace(const std::string& path, bool multishot,
               std::size_t step_limit) {
  efx::calc::EvalOptions opt;
  opt.multishot = multishot;
  opt.step_limit = step_limit;
  opt.print_sink = [](const std::string& s) { std::cout << s << "\n"; };
  auto program = efx::calc::parse_program(read_file(path), multishot);
  auto outcome = efx::calc::trace_steps(program, opt);
  for (const auto& cfg : outcome.configs)
    std::cout << efx::calc::format_config(cfg) << "\n";
  if (outcome.final_kind == efx::calc::StepResult::Kind::Terminal) {
    std::cout << "=> " << efx::calc::format_value(outcome.value) << "\n";
    return kExitOk;
  }
  std::cout << "stuck: "
            << efx::calc::StuckError::describe(outcome.stuck_kind,
                                               outcome.stuck_detail)
            << "\n";
  return kExitWorkflowFailure;
}

std::vector<std::vector<std::int64_t>> parse_inputs(
    const std::vector<std::string>& specs) {
  std::vector<std::vector<std::int64_t>> out;
  for (const auto& s : specs) {
    std::vector<std::int64_t> nums;
    std::stringstream ss(s);
    std::string part;
    while (std::getline(ss, part, ','))
      nums.push_back(std::stoll(part));
    if (nums.size() != 4)
      throw efx::ConfigError("input must be 4 comma-separated numbers: " + s);
    out.push_back(std::move(nums));
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Composable effect handlers for LLM-integrated scripts"};
  app.require_subcommand(1);

  StackSpec spec;
  bool json = false;
  std::uint64_t seed = 0;

  auto add_stack_flags = [&](CLI::App* cmd) {
    cmd->add_option("--mode", spec.mode, "Handler stack mode")
        ->check(CLI::IsMember({"async", "sync"}));
    cmd->add_option("--llm", spec.llm, "LLM layer")
        ->check(CLI::IsMember({"live", "mock", "replay", "record"}));
    cmd->add_option("--inner", spec.inner, "Backend under the recorder")
        ->check(CLI::IsMember({"live", "mock"}));
    cmd->add_option("--trace", spec.trace_path, "Trace file path");
    cmd->add_option("--latency-ms", spec.latency_ms, "Mock latency per call");
    cmd->add_flag("--json", json, "Emit a JSON report");
    cmd->add_option("--seed", seed, "Random seed (recorded in reports)");
  };

  // run research-topics / run tot
  auto* run = app.add_subcommand("run", "Run a workflow");
  run->require_subcommand(1);
  std::string area = "PL techniques for LLM applications";
  auto* run_rt = run->add_subcommand("research-topics");
  add_stack_flags(run_rt);
  run_rt->add_option("--area", area, "Research area");
  std::string tot_input = "4,9,10,13";
  int n_steps = 4, n_select = 5, n_eval = 3;
  auto* run_tot_cmd = run->add_subcommand("tot", "Tree-of-Thoughts Game of 24");
  add_stack_flags(run_tot_cmd);
  run_tot_cmd->add_option("--input", tot_input, "4 comma-separated numbers");
  run_tot_cmd->add_option("--n-steps", n_steps);
  run_tot_cmd->add_option("--n-select", n_select);
  run_tot_cmd->add_option("--n-eval", n_eval);

  // bench tot / bench research-topics
  auto* bench = app.add_subcommand("bench", "Benchmark sync vs. async stacks");
  bench->require_subcommand(1);
  int trials = 3;
  std::int64_t bench_latency = 100;
  std::vector<std::string> bench_inputs = {"4,9,10,13", "2,10,10,13",
                                           "5,6,8,13"};
  auto* bench_tot_cmd = bench->add_subcommand("tot");
  bench_tot_cmd->add_option("--latency-ms", bench_latency);
  bench_tot_cmd->add_option("--trials", trials);
  bench_tot_cmd->add_option("--input", bench_inputs, "Inputs (repeatable)");
  bench_tot_cmd->add_flag("--json", json);
  bench_tot_cmd->add_option("--seed", seed);
  auto* bench_rt_cmd = bench->add_subcommand("research-topics");
  bench_rt_cmd->add_option("--latency-ms", bench_latency);
  bench_rt_cmd->add_option("--trials", trials);
  bench_rt_cmd->add_flag("--json", json);
  bench_rt_cmd->add_option("--seed", seed);

  // trace record / replay / inspect
  auto* trace = app.add_subcommand("trace", "Trace tools");
  trace->require_subcommand(1);
  std::string trace_workflow = "research-topics";
  std::string trace_file;
  auto* tr_record = trace->add_subcommand("record", "Run and record a trace");
  add_stack_flags(tr_record);
  tr_record->add_option("--workflow", trace_workflow)
      ->check(CLI::IsMember({"research-topics"}));
  tr_record->add_option("--area", area);
  auto* tr_replay = trace->add_subcommand("replay", "Run from a trace");
  add_stack_flags(tr_replay);
  tr_replay->add_option("--workflow", trace_workflow)
      ->check(CLI::IsMember({"research-topics"}));
  tr_replay->add_option("--area", area);
  auto* tr_inspect = trace->add_subcommand("inspect", "Pretty-print a trace");
  tr_inspect->add_option("file", trace_file, "Trace file")->required();

  // calc run / trace
  auto* calc = app.add_subcommand("calc", "Calculus interpreter");
  calc->require_subcommand(1);
  std::string calc_file;
  bool multishot = false;
  std::size_t step_limit = 1000000;
  auto* calc_run_cmd = calc->add_subcommand("run", "Evaluate a program");
  calc_run_cmd->add_option("file", calc_file, "Program file (.efc)")->required();
  calc_run_cmd->add_flag("--multishot", multishot);
  calc_run_cmd->add_option("--step-limit", step_limit);
  auto* calc_trace_cmd = calc->add_subcommand("trace", "Print the step trace");
  calc_trace_cmd->add_option("file", calc_file, "Program file (.efc)")
      ->required();
  calc_trace_cmd->add_flag("--multishot", multishot);
  calc_trace_cmd->add_option("--step-limit", step_limit);

  CLI11_PARSE(app, argc, argv);

  try {
    if (run_rt->parsed()) return run_research(spec, area, json);
    if (run_tot_cmd->parsed())
      return run_tot(spec, parse_inputs({tot_input})[0], n_steps, n_select,
                     n_eval, json);
    if (bench_tot_cmd->parsed()) {
      auto report =
          efx::bench_tot(parse_inputs(bench_inputs), bench_latency, trials, seed);
      std::cout << (json ? report.to_json().dump() + "\n" : report.table());
      return kExitOk;
    }
    if (bench_rt_cmd->parsed()) {
      auto report = efx::bench_research(bench_latency, trials, 8, seed);
      std::cout << (json ? report.to_json().dump() + "\n" : report.table());
      return kExitOk;
    }
    if (tr_record->parsed()) {
      spec.llm = "record";
      return run_research(spec, area, json);
    }
    if (tr_replay->parsed()) {
      spec.llm = "replay";
      return run_research(spec, area, json);
    }
    if (tr_inspect->parsed()) return inspect_trace(trace_file);
    if (calc_run_cmd->parsed()) return calc_run(calc_file, multishot, step_limit);
    if (calc_trace_cmd->parsed())
      return calc_trace(calc_file, multishot, step_limit);
  } catch (const efx::ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return kExitConfigError;
  } catch (const efx::TraceFormatError& e) {
    std::cerr << "trace error: " << e.what() << "\n";
    return kExitConfigError;
  } catch (const efx::calc::ParseError& e) {
    std::cerr << e.what() << "\n";
    return kExitConfigError;
  } catch (const std::invalid_argument& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return kExitConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitWorkflowFailure;
  }
  return kExitConfigError;
}
