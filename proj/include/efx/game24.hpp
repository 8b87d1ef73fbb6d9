#pragma once

// Game of 24: partial-solve states, equation bookkeeping, an exhaustive
// brute-force solver (the test oracle), an arithmetic expression checker,
// and the init/expand/score/validate operations with two interchangeable
// handlers: a deterministic latency-simulating mock and an LLM-backed one.

#include <algorithm>
#include <cctype>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "efx/async_ops.hpp"
#include "efx/effects.hpp"
#include "efx/llm.hpp"
#include "efx/rational.hpp"

namespace efx {

class ValidationFailed : public std::runtime_error {
 public:
  explicit ValidationFailed(const std::string& what) : std::runtime_error(what) {}
};

inline const Rational kTarget24(24);

struct SolveState {
  std::vector<std::string> equations;
  std::vector<Rational> remaining;

  bool operator==(const SolveState& o) const {
    return equations == o.equations && remaining == o.remaining;
  }
};

inline std::string format_numbers(const std::vector<Rational>& nums) {
  std::ostringstream oss;
  oss << "[";
  for (std::size_t i = 0; i < nums.size(); ++i) {
    if (i) oss << "; ";
    oss << nums[i].str();
  }
  oss << "]";
  return oss.str();
}

inline std::string format_equations(const std::vector<std::string>& eqs) {
  std::ostringstream oss;
  oss << "[";
  for (std::size_t i = 0; i < eqs.size(); ++i) {
    if (i) oss << "; ";
    oss << eqs[i];
  }
  oss << "]";
  return oss.str();
}

inline std::string format_state(const SolveState& s) {
  return format_equations(s.equations) + " remaining " + format_numbers(s.remaining);
}

struct Equation {
  Rational lhs;
  char op;
  Rational rhs;
  Rational result;

  std::string str() const {
    return lhs.str() + " " + op + " " + rhs.str() + " = " + result.str();
  }
};

inline std::optional<Rational> apply_operator(const Rational& a, char op,
                                              const Rational& b) {
  switch (op) {
    case '+':
      return a + b;
    case '-':
      return a - b;
    case '*':
      return a * b;
    case '/':
      return a.divided_by(b);
    default:
      return std::nullopt;
  }
}

/// Parse "a op b = r" with whitespace-separated tokens.
inline std::optional<Equation> parse_equation(const std::string& text) {
  std::istringstream iss(text);
  std::string ta, top, tb, teq, tr;
  if (!(iss >> ta >> top >> tb >> teq >> tr)) return std::nullopt;
  std::string rest;
  if (iss >> rest) return std::nullopt;
  if (teq != "=" || top.size() != 1) return std::nullopt;
  auto a = Rational::parse(ta);
  auto b = Rational::parse(tb);
  auto r = Rational::parse(tr);
  if (!a || !b || !r) return std::nullopt;
  auto computed = apply_operator(*a, top[0], *b);
  if (!computed || *computed != *r) return std::nullopt;
  return Equation{*a, top[0], *b, *r};
}

/// Consume the equation's two operands from the state's remaining numbers
/// and produce the successor state, or nullopt if the operands are not
/// both available.
inline std::optional<SolveState> apply_equation(const SolveState& state,
                                                const Equation& eq) {
  std::vector<Rational> rem = state.remaining;
  auto take = [&rem](const Rational& v) {
    auto it = std::find(rem.begin(), rem.end(), v);
    if (it == rem.end()) return false;
    rem.erase(it);
    return true;
  };
  if (!take(eq.lhs) || !take(eq.rhs)) return std::nullopt;
  rem.push_back(eq.result);
  SolveState next{state.equations, std::move(rem)};
  next.equations.push_back(eq.str());
  return next;
}

/// Deterministic expansion: every ordered pair of remaining numbers under
/// each operator (division only for nonzero divisors). A state with a
/// single remaining number survives unchanged when it already equals 24
/// (the answer-extraction step keeps solved states in the frontier) and is
/// pruned otherwise.
inline std::vector<SolveState> enumerate_successors(const SolveState& state) {
  if (state.remaining.size() < 2)
    return (state.remaining.size() == 1 && state.remaining[0] == kTarget24)
               ? std::vector<SolveState>{state}
               : std::vector<SolveState>{};
  std::vector<SolveState> out;
  const char ops[] = {'+', '-', '*', '/'};
  for (std::size_t i = 0; i < state.remaining.size(); ++i) {
    for (std::size_t j = 0; j < state.remaining.size(); ++j) {
      if (i == j) continue;
      for (char op : ops) {
        auto r = apply_operator(state.remaining[i], op, state.remaining[j]);
        if (!r) continue;
        Equation eq{state.remaining[i], op, state.remaining[j], *r};
        if (auto next = apply_equation(state, eq)) out.push_back(std::move(*next));
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Brute-force oracle

namespace detail {

struct ExprLeaf {
  Rational value;
  std::string expr;
};

inline std::optional<std::string> brute_solve_impl(std::vector<ExprLeaf> pool) {
  if (pool.size() == 1)
    return pool[0].value == kTarget24 ? std::optional<std::string>(pool[0].expr)
                                      : std::nullopt;
  const char ops[] = {'+', '-', '*', '/'};
  for (std::size_t i = 0; i < pool.size(); ++i) {
    for (std::size_t j = 0; j < pool.size(); ++j) {
      if (i == j) continue;
      for (char op : ops) {
        auto r = apply_operator(pool[i].value, op, pool[j].value);
        if (!r) continue;
        std::vector<ExprLeaf> rest;
        for (std::size_t k = 0; k < pool.size(); ++k)
          if (k != i && k != j) rest.push_back(pool[k]);
        rest.push_back(ExprLeaf{
            *r, "(" + pool[i].expr + " " + op + " " + pool[j].expr + ")"});
        if (auto w = brute_solve_impl(std::move(rest))) return w;
      }
    }
  }
  return std::nullopt;
}

inline std::string canonical_key(std::vector<Rational> nums) {
  std::sort(nums.begin(), nums.end());
  std::string key;
  for (const auto& n : nums) key += n.str() + ",";
  return key;
}

inline std::string strip_outer_parens(std::string s) {
  if (s.size() >= 2 && s.front() == '(' && s.back() == ')') {
    int depth = 0;
    for (std::size_t i = 0; i + 1 < s.size(); ++i) {
      if (s[i] == '(') ++depth;
      if (s[i] == ')') --depth;
      if (depth == 0) return s;  // outer parens close early; keep
    }
    return s.substr(1, s.size() - 2);
  }
  return s;
}

}  // namespace detail

/// Exhaustive search over all pairs/operators with exact rational
/// arithmetic. Returns a witness expression evaluating to 24, or nullopt.
inline std::optional<std::string> brute_solve(const std::vector<Rational>& nums) {
  std::vector<detail::ExprLeaf> pool;
  for (const auto& n : nums) pool.push_back({n, n.str()});
  auto w = detail::brute_solve_impl(std::move(pool));
  if (w) return detail::strip_outer_parens(*w);
  return std::nullopt;
}

/// Memoized solvability check, usable for any remaining-number multiset.
inline bool solvable_24(const std::vector<Rational>& nums) {
  static std::map<std::string, bool> memo;
  std::string key = detail::canonical_key(nums);
  auto it = memo.find(key);
  if (it != memo.end()) return it->second;
  bool ok = brute_solve(nums).has_value();
  memo[key] = ok;
  return ok;
}

// ---------------------------------------------------------------------------
// Arithmetic expression checking

struct ExprResult {
  Rational value;
  std::vector<Rational> leaves;
};

namespace detail {

class ExprParser {
 public:
  explicit ExprParser(const std::string& s) : s_(s) {}

  std::optional<ExprResult> parse() {
    auto v = expr();
    skip_ws();
    if (!v || pos_ != s_.size()) return std::nullopt;
    return ExprResult{*v, leaves_};
  }

 private:
  std::optional<Rational> expr() {
    auto lhs = term();
    if (!lhs) return std::nullopt;
    for (;;) {
      skip_ws();
      if (pos_ < s_.size() && (s_[pos_] == '+' || s_[pos_] == '-')) {
        char op = s_[pos_++];
        auto rhs = term();
        if (!rhs) return std::nullopt;
        lhs = op == '+' ? *lhs + *rhs : *lhs - *rhs;
      } else {
        return lhs;
      }
    }
  }

  std::optional<Rational> term() {
    auto lhs = factor();
    if (!lhs) return std::nullopt;
    for (;;) {
      skip_ws();
      if (pos_ < s_.size() && (s_[pos_] == '*' || s_[pos_] == '/' ||
                               s_[pos_] == 'x')) {
        char op = s_[pos_++];
        auto rhs = factor();
        if (!rhs) return std::nullopt;
        if (op == '/') {
          auto d = lhs->divided_by(*rhs);
          if (!d) return std::nullopt;
          lhs = *d;
        } else {
          lhs = *lhs * *rhs;
        }
      } else {
        return lhs;
      }
    }
  }

  std::optional<Rational> factor() {
    skip_ws();
    if (pos_ < s_.size() && s_[pos_] == '(') {
      ++pos_;
      auto v = expr();
      skip_ws();
      if (!v || pos_ >= s_.size() || s_[pos_] != ')') return std::nullopt;
      ++pos_;
      return v;
    }
    std::size_t start = pos_;
    while (pos_ < s_.size() && std::isdigit(static_cast<unsigned char>(s_[pos_])))
      ++pos_;
    if (pos_ == start) return std::nullopt;
    Rational v(std::stoll(s_.substr(start, pos_ - start)));
    leaves_.push_back(v);
    return v;
  }

  void skip_ws() {
    while (pos_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[pos_])))
      ++pos_;
  }

  const std::string& s_;
  std::size_t pos_ = 0;
  std::vector<Rational> leaves_;
};

}  // namespace detail

inline std::optional<ExprResult> evaluate_expression(const std::string& s) {
  return detail::ExprParser(s).parse();
}

inline bool same_multiset(std::vector<Rational> a, std::vector<Rational> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  return a == b;
}

/// Checks that an expression uses exactly `inputs` and evaluates to 24;
/// throws ValidationFailed otherwise. Accepts an optional trailing "= N"
/// and leading prose (the expression is taken from the first position
/// where the rest of the text parses as arithmetic).
inline std::string check_solution_expression(std::string expr,
                                             const std::vector<Rational>& inputs) {
  if (auto eq = expr.rfind('='); eq != std::string::npos)
    expr = expr.substr(0, eq);
  while (!expr.empty() && std::isspace(static_cast<unsigned char>(expr.back())))
    expr.pop_back();
  std::optional<ExprResult> result;
  for (std::size_t i = 0; i < expr.size() && !result; ++i) {
    char ch = expr[i];
    if (i == 0 || ch == '(' || std::isdigit(static_cast<unsigned char>(ch))) {
      if ((result = evaluate_expression(expr.substr(i)))) expr = expr.substr(i);
    }
  }
  if (!result) throw ValidationFailed("not a valid arithmetic expression: " + expr);
  if (result->value != kTarget24)
    throw ValidationFailed("expression evaluates to " + result->value.str() +
                           ", not 24: " + expr);
  if (!same_multiset(result->leaves, inputs))
    throw ValidationFailed("expression does not use exactly the input numbers " +
                           format_numbers(inputs) + ": " + expr);
  return expr + " = 24";
}

/// Rebuild the single solution expression from a state's equation history.
inline std::string reconstruct_expression(const std::vector<Rational>& inputs,
                                          const std::vector<std::string>& equations) {
  std::vector<detail::ExprLeaf> pool;
  for (const auto& n : inputs) pool.push_back({n, n.str()});
  for (const auto& text : equations) {
    auto eq = parse_equation(text);
    if (!eq) throw ValidationFailed("malformed equation in history: " + text);
    auto take = [&pool](const Rational& v) -> std::optional<std::string> {
      for (std::size_t i = 0; i < pool.size(); ++i) {
        if (pool[i].value == v) {
          std::string e = pool[i].expr;
          pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(i));
          return e;
        }
      }
      return std::nullopt;
    };
    auto ea = take(eq->lhs);
    auto eb = take(eq->rhs);
    if (!ea || !eb)
      throw ValidationFailed("equation operands not available: " + text);
    pool.push_back({eq->result, "(" + *ea + " " + eq->op + " " + *eb + ")"});
  }
  if (pool.size() != 1)
    throw ValidationFailed("equation history does not reduce to one value");
  return detail::strip_outer_parens(pool[0].expr);
}

// ---------------------------------------------------------------------------
// Operations and handlers

inline const Operation<SolveState()>& g24_init_op() {
  static const Operation<SolveState()> op("init");
  return op;
}
inline const Operation<FuturePtr(SolveState)>& g24_expand_op() {
  static const Operation<FuturePtr(SolveState)> op("expand");
  return op;
}
inline const Operation<FuturePtr(SolveState, int)>& g24_score_op() {
  static const Operation<FuturePtr(SolveState, int)> op("score");
  return op;
}
inline const Operation<FuturePtr(SolveState)>& g24_validate_op() {
  static const Operation<FuturePtr(SolveState)> op("validate");
  return op;
}

inline double label_value(const std::string& label) {
  if (label == "sure") return 20.0;
  if (label == "likely") return 1.0;
  return 0.001;  // impossible, and anything unparseable
}

inline SolveState make_initial_state(const std::vector<std::int64_t>& numbers) {
  if (numbers.size() != 4)
    throw std::invalid_argument("Game of 24 needs exactly 4 numbers");
  SolveState s;
  for (auto n : numbers) {
    if (n <= 0) throw std::invalid_argument("Game of 24 numbers must be positive");
    s.remaining.emplace_back(n);
  }
  return s;
}

/// Deterministic handler: expansion enumerates exhaustively, scoring uses
/// the brute-force solvability oracle, validation reconstructs the
/// expression from the equation history. latency_ms simulates one LLM
/// call per operation (and per score repetition).
inline HandlerFrame make_mock_game24_handler(std::vector<std::int64_t> numbers,
                                             std::int64_t latency_ms = 0,
                                             CallMode mode = CallMode::Async) {
  SolveState initial = make_initial_state(numbers);
  std::vector<Rational> inputs = initial.remaining;
  HandlerFrame frame(mode == CallMode::Async ? "AsyncGame24Handler"
                                             : "Game24Handler");
  frame.on(g24_init_op(),
           std::function<SolveState()>([initial] { return initial; }));
  frame.on(g24_expand_op(), std::function<FuturePtr(SolveState)>(
                                [latency_ms, mode](SolveState state) {
                                  FuturePtr fut = spawn_async([state, latency_ms] {
                                    if (latency_ms > 0) perform_sleep(latency_ms);
                                    return enumerate_successors(state);
                                  });
                                  if (mode == CallMode::Sync) perform_await(fut);
                                  return fut;
                                }));
  frame.on(
      g24_score_op(),
      std::function<FuturePtr(SolveState, int)>([latency_ms, mode](SolveState state,
                                                                   int n_eval) {
        auto one_eval = [state, latency_ms] {
          if (latency_ms > 0) perform_sleep(latency_ms);
          bool sure = state.remaining.size() == 1
                          ? state.remaining[0] == kTarget24
                          : solvable_24(state.remaining);
          return label_value(sure ? "sure" : "impossible");
        };
        if (mode == CallMode::Sync) {
          double total = 0;
          for (int i = 0; i < n_eval; ++i) total += await_as<double>(spawn_async(one_eval));
          return make_completed_future(std::any(total));
        }
        std::vector<FuturePtr> evals;
        for (int i = 0; i < n_eval; ++i) evals.push_back(spawn_async(one_eval));
        return spawn_async([evals] {
          double total = 0;
          for (const auto& f : evals) total += await_as<double>(f);
          return total;
        });
      }));
  frame.on(g24_validate_op(),
           std::function<FuturePtr(SolveState)>([inputs, latency_ms,
                                                 mode](SolveState state) {
             FuturePtr fut = spawn_async([inputs, state, latency_ms] {
               if (latency_ms > 0) perform_sleep(latency_ms);
               if (state.remaining.size() != 1 || state.remaining[0] != kTarget24)
                 throw ValidationFailed("state is not a completed solve: " +
                                        format_state(state));
               std::string expr = reconstruct_expression(inputs, state.equations);
               return check_solution_expression(expr, inputs);
             });
             if (mode == CallMode::Sync) perform_await(fut);
             return fut;
           }));
  return frame;
}

// Prompt templates for the LLM-backed handler. Reconstructions of the
// Tree-of-Thoughts setup; configuration, not contract.
inline std::string g24_expand_prompt(const SolveState& s) {
  return "Game of 24. Equations so far: " + format_equations(s.equations) +
         ". Remaining numbers: " + format_numbers(s.remaining) +
         ". Propose possible next equations, each combining exactly two of "
         "the remaining numbers with +, -, * or /.";
}
inline std::string g24_score_prompt(const SolveState& s) {
  return "Game of 24. Classify whether the remaining numbers " +
         format_numbers(s.remaining) +
         " are sure, likely, or impossible to obtain 24.";
}
inline std::string g24_validate_prompt(const std::vector<Rational>& inputs,
                                       const SolveState& s) {
  return "Game of 24 with input numbers " + format_numbers(inputs) +
         ". Equations: " + format_equations(s.equations) +
         ". Validate the solution and extract a single expression that "
         "evaluates to 24.";
}

inline const SchemaRef& g24_equations_schema() {
  static const SchemaRef schema(
      "Game24Equations", {{"equations", FieldType::StringList}},
      Json{{"equations", {"10 - 2 = 8", "13 - 10 = 3"}}});
  return schema;
}
inline const SchemaRef& g24_label_schema() {
  static const SchemaRef schema("Game24Label", {{"label", FieldType::String}},
                                Json{{"label", "sure"}});
  return schema;
}

/// LLM-backed handler: expansion and scoring go through parse, validation
/// through complete. Proposed equations are validated arithmetically
/// against the state before acceptance; invalid proposals are dropped.
inline HandlerFrame make_llm_game24_handler(std::vector<std::int64_t> numbers,
                                            CallMode mode = CallMode::Async) {
  SolveState initial = make_initial_state(numbers);
  std::vector<Rational> inputs = initial.remaining;
  HandlerFrame frame(mode == CallMode::Async ? "AsyncGame24Handler"
                                             : "Game24Handler");
  frame.on(g24_init_op(),
           std::function<SolveState()>([initial] { return initial; }));
  frame.on(g24_expand_op(), std::function<FuturePtr(SolveState)>(
                                [mode](SolveState state) {
                                  if (state.remaining.size() < 2) {
                                    return make_completed_future(
                                        std::any(enumerate_successors(state)));
                                  }
                                  FuturePtr parsed = parse_op()(
                                      g24_expand_prompt(state), g24_equations_schema());
                                  FuturePtr fut = spawn_async([state, parsed] {
                                    Json obj = await_as<Json>(parsed);
                                    std::vector<SolveState> out;
                                    for (const auto& line : obj.at("equations")) {
                                      auto eq = parse_equation(line.get<std::string>());
                                      if (!eq) continue;
                                      if (auto next = apply_equation(state, *eq))
                                        out.push_back(std::move(*next));
                                    }
                                    return out;
                                  });
                                  if (mode == CallMode::Sync) perform_await(fut);
                                  return fut;
                                }));
  frame.on(g24_score_op(),
           std::function<FuturePtr(SolveState, int)>([mode](SolveState state,
                                                            int n_eval) {
             std::vector<FuturePtr> evals;
             for (int i = 0; i < n_eval; ++i)
               evals.push_back(parse_op()(g24_score_prompt(state),
                                          g24_label_schema()));
             FuturePtr fut = spawn_async([evals] {
               double total = 0;
               for (const auto& f : evals) {
                 Json obj = await_as<Json>(f);
                 total += label_value(obj.at("label").get<std::string>());
               }
               return total;
             });
             if (mode == CallMode::Sync) perform_await(fut);
             return fut;
           }));
  frame.on(g24_validate_op(),
           std::function<FuturePtr(SolveState)>([inputs, mode](SolveState state) {
             FuturePtr completed =
                 complete_op()(g24_validate_prompt(inputs, state));
             FuturePtr fut = spawn_async([inputs, completed] {
               std::string text = await_as<std::string>(completed);
               return check_solution_expression(text, inputs);
             });
             if (mode == CallMode::Sync) perform_await(fut);
             return fut;
           }));
  return frame;
}

}  // namespace efx
