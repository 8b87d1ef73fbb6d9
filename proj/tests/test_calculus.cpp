#include <catch2/catch_amalgamated.hpp>

#include <memory>
#include <random>
#include <string>
#include <vector>

#include "efx/calculus.hpp"
#include "efx/effects.hpp"

using namespace efx::calc;

namespace {

struct Collected {
  std::vector<std::string> printed;
  EvalOptions opts(bool multishot = false, std::size_t limit = 100000) {
    EvalOptions o;
    o.multishot = multishot;
    o.step_limit = limit;
    o.print_sink = [this](const std::string& s) { printed.push_back(s); };
    return o;
  }
};

std::vector<std::string> trace_lines(const TraceOutcome& t) {
  std::vector<std::string> out;
  for (const auto& cfg : t.configs) out.push_back(format_config(cfg));
  return out;
}

}  // namespace

TEST_CASE("parser maps the concrete grammar to the expected shapes") {
  auto p1 = parse_program("return true");
  REQUIRE(p1->kind == Comp::Kind::Ret);
  CHECK(p1->val.kind == Value::Kind::Bool);
  CHECK(p1->val.b);

  auto p2 = parse_program("do x <- echo(1) in return x");
  REQUIRE(p2->kind == Comp::Kind::Let);
  CHECK(p2->var == "x");
  CHECK(p2->c1->kind == Comp::Kind::OpCall);
  CHECK(p2->c1->var == "echo");
  CHECK(p2->c1->val.i == 1);
  CHECK(p2->c2->kind == Comp::Kind::Ret);
  CHECK(p2->c2->val.name == "x");

  auto p3 = parse_program(
      "with handler {op(x) -> return x, other(y) -> return 2} handle op(5)");
  REQUIRE(p3->kind == Comp::Kind::With);
  CHECK(p3->handler->clauses.size() == 2);
  CHECK(p3->handler->find("op") != nullptr);
  CHECK(p3->handler->find("missing") == nullptr);

  auto p4 = parse_program("if true then return 1 else return \"s\"");
  CHECK(p4->kind == Comp::Kind::If);
  CHECK(p4->c2->val.kind == Value::Kind::Str);

  auto p5 = parse_program("return -3");
  CHECK(p5->val.i == -3);

  // comments
  auto p6 = parse_program("# leading\nreturn true # trailing");
  CHECK(p6->kind == Comp::Kind::Ret);
}

TEST_CASE("parse errors carry position information") {
  try {
    parse_program("do x <-\n  bogus");
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.line() == 2);
    CHECK(std::string(e.what()).find("2:") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_program("return"), ParseError);
  CHECK_THROWS_AS(parse_program("return true extra"), ParseError);
  CHECK_THROWS_AS(parse_program("with handler {} handle return 1"), ParseError);
  CHECK_THROWS_AS(
      parse_program("with handler {op(x) -> return x, op(y) -> return y} "
                    "handle return 1"),
      ParseError);
  // continuation binders only in multi-shot mode
  CHECK_THROWS_AS(
      parse_program("with handler {op(x, k) -> return x} handle return 1"),
      ParseError);
  CHECK_NOTHROW(
      parse_program("with handler {op(x, k) -> return x} handle return 1",
                    true));
}

TEST_CASE("pretty-print then parse is the identity on a program corpus") {
  std::vector<std::string> corpus = {
      "return true",
      "return false",
      "return 42",
      "return \"a b\"",
      "do x <- return 1 in return x",
      "if true then return 1 else return 2",
      "op(5)",
      "with handler {op(x) -> return x} handle op(5)",
      "with handler {a(x) -> return x, b(y) -> do z <- a(y) in return z} "
      "handle do q <- b(1) in return q",
      "do x <- do y <- return 1 in return y in return x",
  };
  std::mt19937 rng(99);
  // extend to 50 programs by nesting corpus members
  while (corpus.size() < 50) {
    std::uniform_int_distribution<std::size_t> pick(0, 9);
    corpus.push_back("do w <- " + corpus[pick(rng)] + " in " +
                     corpus[pick(rng)]);
  }
  for (const auto& text : corpus) {
    CompPtr once = parse_program(text);
    std::string printed = format_comp(*once);
    CompPtr twice = parse_program(printed);
    INFO(text);
    CHECK(comp_equal(*once, *twice));
    CHECK(format_comp(*twice) == printed);
  }
}

TEST_CASE("golden trace: LetBind in exactly two configurations") {
  Collected out;
  auto t = trace_steps(parse_program("do x <- return 1 in return x"), out.opts());
  CHECK(trace_lines(t) == std::vector<std::string>{
                              "<[]; do x <- return 1 in return x>",
                              "<[]; return 1>"});
  CHECK(t.final_kind == StepResult::Kind::Terminal);
  CHECK(t.value == Value::integer(1));
}

TEST_CASE("golden trace: LetStep reduces inside the bound computation") {
  Collected out;
  auto t = trace_steps(
      parse_program("do x <- do y <- return 1 in return y in return x"),
      out.opts());
  CHECK(trace_lines(t) ==
        std::vector<std::string>{
            "<[]; do x <- do y <- return 1 in return y in return x>",
            "<[]; do x <- return 1 in return x>",
            "<[]; return 1>"});
}

TEST_CASE("golden trace: IfTrue and IfFalse") {
  Collected out;
  auto t = trace_steps(parse_program("if true then return 1 else return 2"),
                       out.opts());
  CHECK(trace_lines(t) == std::vector<std::string>{
                              "<[]; if true then return 1 else return 2>",
                              "<[]; return 1>"});
  auto f = trace_steps(parse_program("if false then return 1 else return 2"),
                       out.opts());
  CHECK(f.value == Value::integer(2));
}

TEST_CASE("golden trace: With, OpHandle, and the residual unwrap") {
  Collected out;
  auto t = trace_steps(
      parse_program(
          "with handler {op(x) -> return x} handle do y <- op(5) in return y"),
      out.opts());
  CHECK(trace_lines(t) ==
        std::vector<std::string>{
            "<[]; with handler {op(x) -> return x} handle do y <- op(5) in "
            "return y>",
            "<[{op}]; do y <- op(5) in return y>",
            "<[]; do y <- return 5 in with handler {op(x) -> return x} handle "
            "return y>",
            "<[]; with handler {op(x) -> return x} handle return 5>",
            "<[]; return 5>"});
  CHECK(t.final_kind == StepResult::Kind::Terminal);
  CHECK(t.value == Value::integer(5));
}

TEST_CASE("golden trace: OpForward re-dispatches below the inner handler") {
  Collected out;
  auto t = trace_steps(
      parse_program("with handler {op(x) -> return true} handle "
                    "with handler {other(x) -> return false} handle "
                    "do y <- op(1) in return y"),
      out.opts());
  // hand-derived: With, With, OpForward, OpHandle, LetBind, push, unwrap
  REQUIRE(t.final_kind == StepResult::Kind::Terminal);
  CHECK(t.value == Value::boolean(true));
  auto lines = trace_lines(t);
  REQUIRE(lines.size() == 8);
  CHECK(lines[2] ==
        "<[{other}, {op}]; do y <- op(1) in return y>");
  CHECK(lines[3] ==
        "<[{op}]; do y <- op(1) in with handler {other(x) -> return false} "
        "handle return y>");
  CHECK(lines[4] ==
        "<[]; do y <- return true in with handler {op(x) -> return true} "
        "handle with handler {other(x) -> return false} handle return y>");
}

TEST_CASE("golden trace: unhandled operation gets stuck") {
  Collected out;
  auto t = trace_steps(parse_program("do x <- fail(1) in return x"), out.opts());
  CHECK(t.final_kind == StepResult::Kind::Stuck);
  CHECK(t.stuck_kind == StuckKind::UnhandledOp);
  CHECK(t.stuck_detail == "fail");
  CHECK(trace_lines(t) ==
        std::vector<std::string>{"<[]; do x <- fail(1) in return x>"});
}

TEST_CASE("stuck on free variables and eval error surfaces") {
  Collected out;
  CHECK_THROWS_AS(eval(parse_program("return x"), out.opts()), StuckError);
  try {
    eval(parse_program("do y <- op(z) in return y"), out.opts());
    FAIL("expected StuckError");
  } catch (const StuckError& e) {
    CHECK(e.kind() == StuckKind::FreeVariable);
    CHECK(e.detail() == "z");
  }
}

TEST_CASE("step limit is enforced") {
  Collected out;
  auto o = out.opts();
  o.step_limit = 2;
  CHECK_THROWS_AS(
      eval(parse_program("do x <- return 1 in do y <- return x in return y"), o),
      StepLimitExceeded);
}

TEST_CASE("builtin print discharges at the empty stack, forwarding past handlers") {
  Collected out;
  auto v = eval(parse_program("do p <- print(\"hi\") in return p"), out.opts());
  CHECK(out.printed == std::vector<std::string>{"hi"});
  CHECK(v.value == Value::str("hi"));

  Collected out2;
  eval(parse_program("with handler {op(x) -> return x} handle "
                     "do p <- print(7) in return p"),
       out2.opts());
  CHECK(out2.printed == std::vector<std::string>{"7"});
}

TEST_CASE("log/date composition in the calculus matches the runtime order") {
  const char* program =
      "with handler {log(m) -> do a <- print(\"[INFO]\") in do b <- print(m) "
      "in return b} handle "
      "with handler {log(m) -> do d <- print(\"[DATE]\") in log(m)} handle "
      "log(\"Hello World!\")";
  Collected out;
  eval(parse_program(program), out.opts());
  CHECK(out.printed ==
        std::vector<std::string>{"[DATE]", "[INFO]", "Hello World!"});
}

TEST_CASE("determinism: identical runs produce identical traces") {
  std::mt19937 rng(2025);
  // random well-scoped generator, depth-bounded
  std::function<std::string(int, std::vector<std::string>&, std::vector<std::string>&)>
      gen = [&](int depth, std::vector<std::string>& bools,
                std::vector<std::string>& ints) -> std::string {
    auto value = [&](bool want_bool) -> std::string {
      std::uniform_int_distribution<int> d(0, 2);
      if (want_bool) {
        if (!bools.empty() && d(rng) == 0)
          return bools[rng() % bools.size()];
        return rng() % 2 ? "true" : "false";
      }
      if (!ints.empty() && d(rng) == 0) return ints[rng() % ints.size()];
      return std::to_string(static_cast<int>(rng() % 10));
    };
    std::uniform_int_distribution<int> pick(0, depth <= 1 ? 0 : 4);
    switch (pick(rng)) {
      default:
      case 0:
        return "return " + value(rng() % 2 == 0);
      case 1: {
        std::string x = "v" + std::to_string(rng() % 1000);
        std::string c1 = gen(depth - 1, bools, ints);
        ints.push_back(x);  // conservatively usable as an int
        std::string c2 = gen(depth - 1, bools, ints);
        ints.pop_back();
        return "do " + x + " <- " + c1 + " in " + c2;
      }
      case 2:
        return "if " + value(true) + " then " + gen(depth - 1, bools, ints) +
               " else " + gen(depth - 1, bools, ints);
      case 3: {
        std::uniform_int_distribution<int> op(1, 3);
        return "op" + std::to_string(op(rng)) + "(" + value(false) + ")";
      }
      case 4: {
        std::uniform_int_distribution<int> op(1, 3);
        std::string o = "op" + std::to_string(op(rng));
        std::string body = gen(depth - 1, bools, ints);
        std::string param = "p" + std::to_string(rng() % 1000);
        ints.push_back(param);
        std::string clause = gen(depth - 1, bools, ints);
        ints.pop_back();
        return "with handler {" + o + "(" + param + ") -> " + clause +
               "} handle " + body;
      }
    }
  };

  int evaluated_ok = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<std::string> bools, ints;
    std::string text = gen(6, bools, ints);
    CompPtr program = parse_program(text);
    Collected a, b;
    auto ta = trace_steps(program, a.opts(false, 5000));
    auto tb = trace_steps(program, b.opts(false, 5000));
    INFO(text);
    REQUIRE(trace_lines(ta) == trace_lines(tb));
    REQUIRE(ta.final_kind == tb.final_kind);
    CHECK(a.printed == b.printed);

    // terminating programs are insensitive to a non-discharging wrapper
    if (ta.final_kind == StepResult::Kind::Terminal) {
      ++evaluated_ok;
      Collected c;
      std::string wrapped =
          "with handler {neverused(q) -> return q} handle " + text;
      auto tw = trace_steps(parse_program(wrapped), c.opts(false, 5000));
      REQUIRE(tw.final_kind == StepResult::Kind::Terminal);
      CHECK(tw.value == ta.value);
      CHECK(c.printed == a.printed);
    }
  }
  CHECK(evaluated_ok > 200);  // the generator produces plenty of terminating runs
}

TEST_CASE("multi-shot: zero-shot clause discards the continuation") {
  Collected out;
  auto v = eval(parse_program("with handler {op(x, k) -> return 9} handle "
                              "do y <- op(1) in do p <- print(y) in return y",
                              true),
                out.opts(true));
  CHECK(v.value == Value::integer(9));
  CHECK(out.printed.empty());  // the continuation never ran
}

TEST_CASE("multi-shot: resuming twice runs the continuation twice") {
  Collected out;
  auto v = eval(parse_program(
                    "with handler {op(x, k) -> do a <- k(1) in do b <- k(2) in "
                    "return b} handle do y <- op(0) in do p <- print(y) in "
                    "return y",
                    true),
                out.opts(true));
  CHECK(out.printed == std::vector<std::string>{"1", "2"});
  CHECK(v.value == Value::integer(2));
}

TEST_CASE("multi-shot: single tail resume agrees with the one-shot handler") {
  Collected a, b;
  auto v1 = eval(parse_program("with handler {op(x) -> return x} handle "
                               "do y <- op(5) in do p <- print(y) in return y"),
                 a.opts());
  auto v2 = eval(parse_program("with handler {op(x, k) -> k(x)} handle "
                               "do y <- op(5) in do p <- print(y) in return y",
                               true),
                 b.opts(true));
  CHECK(v1.value == v2.value);
  CHECK(a.printed == b.printed);
}

TEST_CASE("multi-shot: decide/fail backtracking prints true then false") {
  const char* program = R"(
# nondeterminism via a backtracking handler: fail is invoked when the
# two decisions agree, and the fail handler resumes the second decision
# with false
with handler { decide(x, k) ->
  with handler { fail(y, u) -> k(false) } handle k(true)
} handle
do b1 <- decide(0) in
do b2 <- decide(0) in
if b1 then
  if b2 then fail(0) else do p1 <- print(b1) in do p2 <- print(b2) in return true
else
  if b2 then do p1 <- print(b1) in do p2 <- print(b2) in return true else fail(0)
)";
  Collected out;
  auto v = eval(parse_program(program, true), out.opts(true));
  CHECK(out.printed == std::vector<std::string>{"true", "false"});
  CHECK(v.value == Value::boolean(true));
}

TEST_CASE("calculus and runtime handlers agree on observable output") {
  // the same five programs, hand-translated onto the handler-stack runtime
  using efx::HandlerFrame;
  using efx::Operation;
  using efx::push_handler;

  // 1: info/date logging (see the dedicated test above for the calculus side)
  {
    Collected out;
    eval(parse_program(
             "with handler {log(m) -> do a <- print(\"[INFO]\") in do b <- "
             "print(m) in return b} handle "
             "with handler {log(m) -> do d <- print(\"[DATE]\") in log(m)} "
             "handle log(\"Hi\")"),
         out.opts());

    std::vector<std::string> runtime_lines;
    Operation<std::string(std::string)> log("log");
    HandlerFrame info("info");
    info.on(log, std::function<std::string(std::string)>(
                     [&runtime_lines](std::string m) {
                       runtime_lines.push_back("[INFO]");
                       runtime_lines.push_back(m);
                       return m;
                     }));
    HandlerFrame date("date");
    date.on(log, std::function<std::string(std::string)>(
                     [&runtime_lines, &log](std::string m) {
                       runtime_lines.push_back("[DATE]");
                       return log(m);
                     }));
    auto s1 = push_handler(info);
    auto s2 = push_handler(date);
    log("Hi");
    s2.pop();
    s1.pop();
    CHECK(out.printed == runtime_lines);
  }

  // 2-5: discharge/forward combinations over two ops
  struct Case {
    const char* program;
    bool outer_handles_a, inner_handles_a;
  };
  for (int inner_has_a = 0; inner_has_a <= 1; ++inner_has_a) {
    std::string inner_clause = inner_has_a
                                   ? "a(x) -> do i <- print(\"inner\") in b(x)"
                                   : "c(x) -> return x";
    std::string program =
        "with handler {b(x) -> do o <- print(\"outer\") in return x} handle "
        "with handler {" +
        inner_clause + "} handle do y <- a(3) in do p <- print(y) in return y";
    Collected out;
    bool calculus_stuck = false;
    try {
      eval(parse_program(program), out.opts());
    } catch (const StuckError&) {
      calculus_stuck = true;
    }

    std::vector<std::string> runtime_lines;
    bool runtime_stuck = false;
    Operation<int(int)> op_a("a"), op_b("b");
    HandlerFrame outer("outer");
    outer.on(op_b, std::function<int(int)>([&runtime_lines](int x) {
               runtime_lines.push_back("outer");
               return x;
             }));
    HandlerFrame inner("inner");
    if (inner_has_a)
      inner.on(op_a, std::function<int(int)>([&runtime_lines, &op_b](int x) {
                 runtime_lines.push_back("inner");
                 return op_b(x);
               }));
    auto s1 = push_handler(outer);
    auto s2 = push_handler(inner);
    try {
      int y = op_a(3);
      runtime_lines.push_back(std::to_string(y));
    } catch (const efx::UnhandledOperation&) {
      runtime_stuck = true;
    }
    s2.pop();
    s1.pop();

    CHECK(calculus_stuck == runtime_stuck);
    if (!calculus_stuck) CHECK(out.printed == runtime_lines);
  }
}
