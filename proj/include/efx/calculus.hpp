#pragma once

// Parser and small-step interpreter for a core calculus of effect
// handlers: configurations ⟨H; c⟩ of a handler stack and a computation,
// stepped by the rules LetStep, LetBind, IfTrue/IfFalse, With, OpHandle,
// OpForward, plus a Ret-unwrapping rule for residual `with h handle
// return v` forms. An optional multi-shot mode gives handler clauses an
// explicit, re-invocable continuation binder.

#include <cctype>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace efx::calc {

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, int line, int col)
      : std::runtime_error("parse error at " + std::to_string(line) + ":" +
                           std::to_string(col) + ": " + what),
        line_(line),
        col_(col) {}
  int line() const { return line_; }
  int col() const { return col_; }

 private:
  int line_;
  int col_;
};

class StepLimitExceeded : public std::runtime_error {
 public:
  explicit StepLimitExceeded(std::size_t limit)
      : std::runtime_error("evaluation exceeded the step limit of " +
                           std::to_string(limit)) {}
};

enum class StuckKind { UnhandledOp, FreeVariable, IllTyped };

class StuckError : public std::runtime_error {
 public:
  StuckError(StuckKind kind, const std::string& detail)
      : std::runtime_error("stuck: " + describe(kind, detail)),
        kind_(kind),
        detail_(detail) {}
  StuckKind kind() const { return kind_; }
  const std::string& detail() const { return detail_; }

  static std::string describe(StuckKind kind, const std::string& detail) {
    switch (kind) {
      case StuckKind::UnhandledOp:
        return "unhandled operation '" + detail + "'";
      case StuckKind::FreeVariable:
        return "free variable '" + detail + "'";
      default:
        return "ill-typed form: " + detail;
    }
  }

 private:
  StuckKind kind_;
  std::string detail_;
};

struct Comp;
using CompPtr = std::shared_ptr<const Comp>;
struct HandlerDef;
using HandlerPtr = std::shared_ptr<const HandlerDef>;
struct ContData;
using ContPtr = std::shared_ptr<const ContData>;

struct Value {
  enum class Kind { Var, Bool, Int, Str, Cont };
  Kind kind = Kind::Bool;
  std::string name;  // Var name or Str contents
  bool b = false;
  std::int64_t i = 0;
  ContPtr cont;

  static Value var(std::string n) {
    Value v;
    v.kind = Kind::Var;
    v.name = std::move(n);
    return v;
  }
  static Value boolean(bool b) {
    Value v;
    v.kind = Kind::Bool;
    v.b = b;
    return v;
  }
  static Value integer(std::int64_t i) {
    Value v;
    v.kind = Kind::Int;
    v.i = i;
    return v;
  }
  static Value str(std::string s) {
    Value v;
    v.kind = Kind::Str;
    v.name = std::move(s);
    return v;
  }
  static Value continuation(ContPtr k) {
    Value v;
    v.kind = Kind::Cont;
    v.cont = std::move(k);
    return v;
  }

  bool operator==(const Value& o) const;
};

struct Clause {
  std::string op;
  std::string param;
  std::optional<std::string> kont;  // continuation binder, multi-shot only
  CompPtr body;
};

struct HandlerDef {
  std::vector<Clause> clauses;

  const Clause* find(const std::string& op) const {
    for (const auto& c : clauses)
      if (c.op == op) return &c;
    return nullptr;
  }
};

struct Comp {
  enum class Kind { Ret, Let, If, OpCall, With, Resume };
  Kind kind;
  Value val;         // Ret value / If condition / OpCall, Resume argument
  std::string var;   // Let binder / OpCall operation name
  CompPtr c1, c2;    // Let parts / If branches / With body in c1
  HandlerPtr handler;  // With
  ContPtr cont;        // Resume
};

/// A captured continuation: the rest of the let (`binder`, `body`) plus
/// the discharging handler, re-wrapped around every resume (deep
/// semantics). Immutable, so re-invocable any number of times.
struct ContData {
  std::string binder;
  CompPtr body;
  HandlerPtr handler;
};

inline CompPtr ret(Value v) {
  auto c = std::make_shared<Comp>();
  c->kind = Comp::Kind::Ret;
  c->val = std::move(v);
  return c;
}
inline CompPtr let_(std::string x, CompPtr a, CompPtr b) {
  auto c = std::make_shared<Comp>();
  c->kind = Comp::Kind::Let;
  c->var = std::move(x);
  c->c1 = std::move(a);
  c->c2 = std::move(b);
  return c;
}
inline CompPtr if_(Value v, CompPtr t, CompPtr f) {
  auto c = std::make_shared<Comp>();
  c->kind = Comp::Kind::If;
  c->val = std::move(v);
  c->c1 = std::move(t);
  c->c2 = std::move(f);
  return c;
}
inline CompPtr opcall(std::string op, Value v) {
  auto c = std::make_shared<Comp>();
  c->kind = Comp::Kind::OpCall;
  c->var = std::move(op);
  c->val = std::move(v);
  return c;
}
inline CompPtr with_(HandlerPtr h, CompPtr body) {
  auto c = std::make_shared<Comp>();
  c->kind = Comp::Kind::With;
  c->handler = std::move(h);
  c->c1 = std::move(body);
  return c;
}
inline CompPtr resume(ContPtr k, Value v) {
  auto c = std::make_shared<Comp>();
  c->kind = Comp::Kind::Resume;
  c->cont = std::move(k);
  c->val = std::move(v);
  return c;
}

// ---------------------------------------------------------------------------
// Pretty printing (parse ∘ format is the identity on parsed programs)

inline std::string format_value(const Value& v);
inline std::string format_comp(const Comp& c);

inline std::string format_handler(const HandlerDef& h) {
  std::string out = "handler {";
  for (std::size_t i = 0; i < h.clauses.size(); ++i) {
    const Clause& cl = h.clauses[i];
    if (i) out += ", ";
    out += cl.op + "(" + cl.param;
    if (cl.kont) out += ", " + *cl.kont;
    out += ") -> " + format_comp(*cl.body);
  }
  return out + "}";
}

inline std::string format_value(const Value& v) {
  switch (v.kind) {
    case Value::Kind::Var:
      return v.name;
    case Value::Kind::Bool:
      return v.b ? "true" : "false";
    case Value::Kind::Int:
      return std::to_string(v.i);
    case Value::Kind::Str: {
      std::string out = "\"";
      for (char ch : v.name) {
        if (ch == '"' || ch == '\\') out += '\\';
        if (ch == '\n') {
          out += "\\n";
          continue;
        }
        out += ch;
      }
      return out + "\"";
    }
    case Value::Kind::Cont:
      return "<cont " + v.cont->binder + ">";
  }
  return "?";
}

inline std::string format_comp(const Comp& c) {
  switch (c.kind) {
    case Comp::Kind::Ret:
      return "return " + format_value(c.val);
    case Comp::Kind::Let:
      return "do " + c.var + " <- " + format_comp(*c.c1) + " in " +
             format_comp(*c.c2);
    case Comp::Kind::If:
      return "if " + format_value(c.val) + " then " + format_comp(*c.c1) +
             " else " + format_comp(*c.c2);
    case Comp::Kind::OpCall:
      return c.var + "(" + format_value(c.val) + ")";
    case Comp::Kind::With:
      return "with " + format_handler(*c.handler) + " handle " +
             format_comp(*c.c1);
    case Comp::Kind::Resume:
      return "resume(" + format_value(c.val) + ")";
  }
  return "?";
}

inline bool comp_equal(const Comp& a, const Comp& b);

inline bool handler_equal(const HandlerDef& a, const HandlerDef& b) {
  if (a.clauses.size() != b.clauses.size()) return false;
  for (std::size_t i = 0; i < a.clauses.size(); ++i) {
    const Clause& x = a.clauses[i];
    const Clause& y = b.clauses[i];
    if (x.op != y.op || x.param != y.param || x.kont != y.kont ||
        !comp_equal(*x.body, *y.body))
      return false;
  }
  return true;
}

inline bool Value::operator==(const Value& o) const {
  if (kind != o.kind) return false;
  switch (kind) {
    case Kind::Var:
    case Kind::Str:
      return name == o.name;
    case Kind::Bool:
      return b == o.b;
    case Kind::Int:
      return i == o.i;
    case Kind::Cont:
      return cont->binder == o.cont->binder &&
             comp_equal(*cont->body, *o.cont->body) &&
             handler_equal(*cont->handler, *o.cont->handler);
  }
  return false;
}

inline bool comp_equal(const Comp& a, const Comp& b) {
  if (a.kind != b.kind) return false;
  switch (a.kind) {
    case Comp::Kind::Ret:
      return a.val == b.val;
    case Comp::Kind::Let:
      return a.var == b.var && comp_equal(*a.c1, *b.c1) &&
             comp_equal(*a.c2, *b.c2);
    case Comp::Kind::If:
      return a.val == b.val && comp_equal(*a.c1, *b.c1) &&
             comp_equal(*a.c2, *b.c2);
    case Comp::Kind::OpCall:
      return a.var == b.var && a.val == b.val;
    case Comp::Kind::With:
      return handler_equal(*a.handler, *b.handler) && comp_equal(*a.c1, *b.c1);
    case Comp::Kind::Resume:
      return a.val == b.val && a.cont->binder == b.cont->binder &&
             comp_equal(*a.cont->body, *b.cont->body) &&
             handler_equal(*a.cont->handler, *b.cont->handler);
  }
  return false;
}

// ---------------------------------------------------------------------------
// Parser

namespace detail {

struct Token {
  enum class Kind { Ident, Int, Str, Sym, End };
  Kind kind;
  std::string text;
  std::int64_t i = 0;
  int line = 1;
  int col = 1;
};

class Lexer {
 public:
  explicit Lexer(const std::string& src) : src_(src) { advance(); }

  const Token& peek() const { return tok_; }
  Token take() {
    Token t = tok_;
    advance();
    return t;
  }

 private:
  void advance() {
    skip();
    tok_.line = line_;
    tok_.col = col_;
    if (pos_ >= src_.size()) {
      tok_ = Token{Token::Kind::End, "<end of input>", 0, line_, col_};
      return;
    }
    char ch = src_[pos_];
    if (std::isalpha(static_cast<unsigned char>(ch)) || ch == '_') {
      std::string word;
      while (pos_ < src_.size() &&
             (std::isalnum(static_cast<unsigned char>(src_[pos_])) ||
              src_[pos_] == '_'))
        word += get();
      tok_ = Token{Token::Kind::Ident, word, 0, tok_.line, tok_.col};
      return;
    }
    if (std::isdigit(static_cast<unsigned char>(ch)) ||
        (ch == '-' && pos_ + 1 < src_.size() &&
         std::isdigit(static_cast<unsigned char>(src_[pos_ + 1])))) {
      std::string num;
      num += get();
      while (pos_ < src_.size() &&
             std::isdigit(static_cast<unsigned char>(src_[pos_])))
        num += get();
      tok_ = Token{Token::Kind::Int, num, std::stoll(num), tok_.line, tok_.col};
      return;
    }
    if (ch == '"') {
      get();
      std::string s;
      for (;;) {
        if (pos_ >= src_.size())
          throw ParseError("unterminated string literal", tok_.line, tok_.col);
        char c = get();
        if (c == '"') break;
        if (c == '\\') {
          if (pos_ >= src_.size())
            throw ParseError("unterminated escape", line_, col_);
          char e = get();
          if (e == 'n')
            s += '\n';
          else
            s += e;
        } else {
          s += c;
        }
      }
      tok_ = Token{Token::Kind::Str, s, 0, tok_.line, tok_.col};
      return;
    }
    if (ch == '<' && pos_ + 1 < src_.size() && src_[pos_ + 1] == '-') {
      get();
      get();
      tok_ = Token{Token::Kind::Sym, "<-", 0, tok_.line, tok_.col};
      return;
    }
    if (ch == '-' && pos_ + 1 < src_.size() && src_[pos_ + 1] == '>') {
      get();
      get();
      tok_ = Token{Token::Kind::Sym, "->", 0, tok_.line, tok_.col};
      return;
    }
    if (ch == '(' || ch == ')' || ch == '{' || ch == '}' || ch == ',') {
      tok_ = Token{Token::Kind::Sym, std::string(1, get()), 0, tok_.line,
                   tok_.col};
      return;
    }
    throw ParseError(std::string("unexpected character '") + ch + "'", line_,
                     col_);
  }

  void skip() {
    for (;;) {
      while (pos_ < src_.size() &&
             std::isspace(static_cast<unsigned char>(src_[pos_])))
        get();
      if (pos_ < src_.size() && src_[pos_] == '#') {
        while (pos_ < src_.size() && src_[pos_] != '\n') get();
        continue;
      }
      return;
    }
  }

  char get() {
    char ch = src_[pos_++];
    if (ch == '\n') {
      ++line_;
      col_ = 1;
    } else {
      ++col_;
    }
    return ch;
  }

  const std::string& src_;
  std::size_t pos_ = 0;
  int line_ = 1;
  int col_ = 1;
  Token tok_;
};

inline bool is_keyword(const std::string& w) {
  static const std::set<std::string> kws = {"return", "do",   "in",      "if",
                                            "then",   "else", "with",    "handler",
                                            "handle", "true", "false"};
  return kws.count(w) != 0;
}

class Parser {
 public:
  Parser(const std::string& src, bool multishot)
      : lex_(src), multishot_(multishot) {}

  CompPtr parse_program() {
    CompPtr c = parse_comp();
    expect_end();
    return c;
  }

 private:
  [[noreturn]] void fail(const std::string& expected) {
    const Token& t = lex_.peek();
    throw ParseError("expected " + expected + ", found '" + t.text + "'",
                     t.line, t.col);
  }

  Token expect_sym(const std::string& s) {
    const Token& t = lex_.peek();
    if (t.kind != Token::Kind::Sym || t.text != s) fail("'" + s + "'");
    return lex_.take();
  }

  Token expect_keyword(const std::string& kw) {
    const Token& t = lex_.peek();
    if (t.kind != Token::Kind::Ident || t.text != kw) fail("'" + kw + "'");
    return lex_.take();
  }

  std::string expect_ident() {
    const Token& t = lex_.peek();
    if (t.kind != Token::Kind::Ident || is_keyword(t.text)) fail("identifier");
    return lex_.take().text;
  }

  void expect_end() {
    if (lex_.peek().kind != Token::Kind::End) fail("end of input");
  }

  Value parse_value() {
    const Token& t = lex_.peek();
    if (t.kind == Token::Kind::Int) return Value::integer(lex_.take().i);
    if (t.kind == Token::Kind::Str) return Value::str(lex_.take().text);
    if (t.kind == Token::Kind::Ident) {
      if (t.text == "true") {
        lex_.take();
        return Value::boolean(true);
      }
      if (t.text == "false") {
        lex_.take();
        return Value::boolean(false);
      }
      if (is_keyword(t.text)) fail("a value");
      return Value::var(lex_.take().text);
    }
    fail("a value");
  }

  Clause parse_clause() {
    Clause cl;
    cl.op = expect_ident();
    expect_sym("(");
    cl.param = expect_ident();
    if (lex_.peek().kind == Token::Kind::Sym && lex_.peek().text == ",") {
      const Token& t = lex_.peek();
      if (!multishot_)
        throw ParseError(
            "continuation binders are only legal in multi-shot mode", t.line,
            t.col);
      lex_.take();
      cl.kont = expect_ident();
    }
    expect_sym(")");
    expect_sym("->");
    cl.body = parse_comp();
    return cl;
  }

  HandlerPtr parse_handler() {
    expect_keyword("handler");
    expect_sym("{");
    auto h = std::make_shared<HandlerDef>();
    h->clauses.push_back(parse_clause());
    while (lex_.peek().kind == Token::Kind::Sym && lex_.peek().text == ",") {
      lex_.take();
      h->clauses.push_back(parse_clause());
    }
    for (std::size_t i = 0; i < h->clauses.size(); ++i)
      for (std::size_t j = i + 1; j < h->clauses.size(); ++j)
        if (h->clauses[i].op == h->clauses[j].op)
          throw ParseError("duplicate clause for operation '" +
                               h->clauses[i].op + "'",
                           lex_.peek().line, lex_.peek().col);
    expect_sym("}");
    return h;
  }

  CompPtr parse_comp() {
    const Token& t = lex_.peek();
    if (t.kind != Token::Kind::Ident) fail("a computation");
    if (t.text == "return") {
      lex_.take();
      return ret(parse_value());
    }
    if (t.text == "do") {
      lex_.take();
      std::string x = expect_ident();
      expect_sym("<-");
      CompPtr c1 = parse_comp();
      expect_keyword("in");
      CompPtr c2 = parse_comp();
      return let_(std::move(x), std::move(c1), std::move(c2));
    }
    if (t.text == "if") {
      lex_.take();
      Value v = parse_value();
      expect_keyword("then");
      CompPtr c1 = parse_comp();
      expect_keyword("else");
      CompPtr c2 = parse_comp();
      return if_(std::move(v), std::move(c1), std::move(c2));
    }
    if (t.text == "with") {
      lex_.take();
      HandlerPtr h = parse_handler();
      expect_keyword("handle");
      CompPtr c = parse_comp();
      return with_(std::move(h), std::move(c));
    }
    if (is_keyword(t.text)) fail("a computation");
    std::string op = lex_.take().text;
    expect_sym("(");
    Value v = parse_value();
    expect_sym(")");
    return opcall(std::move(op), std::move(v));
  }

  Lexer lex_;
  bool multishot_;
};

}  // namespace detail

inline CompPtr parse_program(const std::string& text, bool multishot = false) {
  return detail::Parser(text, multishot).parse_program();
}

// ---------------------------------------------------------------------------
// Substitution (capture-avoiding, fresh names from a per-evaluation source)

struct FreshGen {
  std::uint64_t counter = 0;
  std::string fresh(const std::string& hint) {
    return "_" + hint + std::to_string(counter++);
  }
};

namespace detail {

inline void free_vars_comp(const Comp& c, std::set<std::string>& bound,
                           std::set<std::string>& out);

inline void free_vars_value(const Value& v, std::set<std::string>& bound,
                            std::set<std::string>& out) {
  if (v.kind == Value::Kind::Var) {
    if (!bound.count(v.name)) out.insert(v.name);
  } else if (v.kind == Value::Kind::Cont) {
    bool added = bound.insert(v.cont->binder).second;
    free_vars_comp(*v.cont->body, bound, out);
    if (added) bound.erase(v.cont->binder);
    for (const Clause& cl : v.cont->handler->clauses) {
      bool ap = bound.insert(cl.param).second;
      bool ak = cl.kont ? bound.insert(*cl.kont).second : false;
      free_vars_comp(*cl.body, bound, out);
      if (ak) bound.erase(*cl.kont);
      if (ap) bound.erase(cl.param);
    }
  }
}

inline void free_vars_comp(const Comp& c, std::set<std::string>& bound,
                           std::set<std::string>& out) {
  switch (c.kind) {
    case Comp::Kind::Ret:
      free_vars_value(c.val, bound, out);
      return;
    case Comp::Kind::Let: {
      free_vars_comp(*c.c1, bound, out);
      bool added = bound.insert(c.var).second;
      free_vars_comp(*c.c2, bound, out);
      if (added) bound.erase(c.var);
      return;
    }
    case Comp::Kind::If:
      free_vars_value(c.val, bound, out);
      free_vars_comp(*c.c1, bound, out);
      free_vars_comp(*c.c2, bound, out);
      return;
    case Comp::Kind::OpCall:
      free_vars_value(c.val, bound, out);
      return;
    case Comp::Kind::With:
      for (const Clause& cl : c.handler->clauses) {
        bool ap = bound.insert(cl.param).second;
        bool ak = cl.kont ? bound.insert(*cl.kont).second : false;
        free_vars_comp(*cl.body, bound, out);
        if (ak) bound.erase(*cl.kont);
        if (ap) bound.erase(cl.param);
      }
      free_vars_comp(*c.c1, bound, out);
      return;
    case Comp::Kind::Resume: {
      free_vars_value(c.val, bound, out);
      Value k = Value::continuation(c.cont);
      free_vars_value(k, bound, out);
      return;
    }
  }
}

}  // namespace detail

inline std::set<std::string> free_vars(const Comp& c) {
  std::set<std::string> bound, out;
  detail::free_vars_comp(c, bound, out);
  return out;
}

inline std::set<std::string> free_vars(const Value& v) {
  std::set<std::string> bound, out;
  detail::free_vars_value(v, bound, out);
  return out;
}

inline CompPtr subst(const CompPtr& c, const std::string& x, const Value& v,
                     FreshGen& fg);

namespace detail {

inline Value subst_value(const Value& val, const std::string& x, const Value& v,
                         FreshGen& fg) {
  if (val.kind == Value::Kind::Var) return val.name == x ? v : val;
  if (val.kind == Value::Kind::Cont) {
    auto k = std::make_shared<ContData>(*val.cont);
    if (k->binder != x) {
      if (free_vars(v).count(k->binder)) {
        std::string nb = fg.fresh(k->binder);
        k->body = subst(k->body, k->binder, Value::var(nb), fg);
        k->binder = nb;
      }
      k->body = subst(k->body, x, v, fg);
    }
    auto h = std::make_shared<HandlerDef>(*k->handler);
    for (Clause& cl : h->clauses) {
      if (cl.param == x || (cl.kont && *cl.kont == x)) continue;
      const auto fv = free_vars(v);
      if (fv.count(cl.param)) {
        std::string np = fg.fresh(cl.param);
        cl.body = subst(cl.body, cl.param, Value::var(np), fg);
        cl.param = np;
      }
      if (cl.kont && fv.count(*cl.kont)) {
        std::string nk = fg.fresh(*cl.kont);
        cl.body = subst(cl.body, *cl.kont, Value::var(nk), fg);
        cl.kont = nk;
      }
      cl.body = subst(cl.body, x, v, fg);
    }
    k->handler = h;
    return Value::continuation(k);
  }
  return val;
}

inline HandlerPtr subst_handler(const HandlerPtr& h, const std::string& x,
                                const Value& v, FreshGen& fg) {
  auto out = std::make_shared<HandlerDef>(*h);
  for (Clause& cl : out->clauses) {
    if (cl.param == x || (cl.kont && *cl.kont == x)) continue;
    const auto fv = free_vars(v);
    if (fv.count(cl.param)) {
      std::string np = fg.fresh(cl.param);
      cl.body = subst(cl.body, cl.param, Value::var(np), fg);
      cl.param = np;
    }
    if (cl.kont && fv.count(*cl.kont)) {
      std::string nk = fg.fresh(*cl.kont);
      cl.body = subst(cl.body, *cl.kont, Value::var(nk), fg);
      cl.kont = nk;
    }
    cl.body = subst(cl.body, x, v, fg);
  }
  return out;
}

}  // namespace detail

/// [v/x]c. Operation names are a separate namespace and are not
/// substituted, with one exception: an OpCall whose callee names a
/// variable currently bound to a continuation becomes a Resume node.
inline CompPtr subst(const CompPtr& c, const std::string& x, const Value& v,
                     FreshGen& fg) {
  switch (c->kind) {
    case Comp::Kind::Ret:
      return ret(detail::subst_value(c->val, x, v, fg));
    case Comp::Kind::Let: {
      CompPtr c1 = subst(c->c1, x, v, fg);
      if (c->var == x) return let_(c->var, c1, c->c2);
      std::string binder = c->var;
      CompPtr body = c->c2;
      if (free_vars(v).count(binder)) {
        std::string nb = fg.fresh(binder);
        body = subst(body, binder, Value::var(nb), fg);
        binder = nb;
      }
      return let_(binder, c1, subst(body, x, v, fg));
    }
    case Comp::Kind::If:
      return if_(detail::subst_value(c->val, x, v, fg), subst(c->c1, x, v, fg),
                 subst(c->c2, x, v, fg));
    case Comp::Kind::OpCall: {
      Value arg = detail::subst_value(c->val, x, v, fg);
      if (c->var == x && v.kind == Value::Kind::Cont)
        return resume(v.cont, std::move(arg));
      return opcall(c->var, std::move(arg));
    }
    case Comp::Kind::With:
      return with_(detail::subst_handler(c->handler, x, v, fg),
                   subst(c->c1, x, v, fg));
    case Comp::Kind::Resume: {
      Value k = detail::subst_value(Value::continuation(c->cont), x, v, fg);
      return resume(k.cont, detail::subst_value(c->val, x, v, fg));
    }
  }
  return c;
}

// ---------------------------------------------------------------------------
// The step machine

struct Configuration {
  std::vector<HandlerPtr> stack;  // back() is the top (h : H)
  CompPtr comp;
};

inline std::string format_config(const Configuration& cfg) {
  std::string out = "<[";
  // Top-first, mirroring the h : H notation.
  for (std::size_t i = cfg.stack.size(); i-- > 0;) {
    if (i + 1 != cfg.stack.size()) out += ", ";
    out += "{";
    for (std::size_t j = 0; j < cfg.stack[i]->clauses.size(); ++j) {
      if (j) out += ",";
      out += cfg.stack[i]->clauses[j].op;
    }
    out += "}";
  }
  return out + "]; " + format_comp(*cfg.comp) + ">";
}

struct StepResult {
  enum class Kind { Stepped, Terminal, Stuck };
  Kind kind;
  Configuration next;     // Stepped
  Value value;            // Terminal
  StuckKind stuck_kind = StuckKind::UnhandledOp;
  std::string stuck_detail;

  static StepResult stepped(Configuration cfg) {
    return StepResult{Kind::Stepped, std::move(cfg), Value{}, StuckKind::UnhandledOp, ""};
  }
  static StepResult terminal(Value v) {
    return StepResult{Kind::Terminal, {}, std::move(v), StuckKind::UnhandledOp, ""};
  }
  static StepResult stuck(StuckKind k, std::string detail) {
    return StepResult{Kind::Stuck, {}, Value{}, k, std::move(detail)};
  }
};

struct EvalOptions {
  bool multishot = false;
  std::size_t step_limit = 1000000;
  std::function<void(const std::string&)> print_sink;  // builtin print output
};

inline std::string render_for_print(const Value& v) {
  if (v.kind == Value::Kind::Str) return v.name;
  return format_value(v);
}

/// One small step. Exactly one rule applies to any configuration; the
/// Ret-unwrap rule for `with h handle return v` is checked before the
/// generic With push so the residual wrappers introduced by
/// OpHandle/OpForward discharge without leaking handlers.
inline StepResult step(const Configuration& cfg, const EvalOptions& opt,
                       FreshGen& fg) {
  const Comp& c = *cfg.comp;
  switch (c.kind) {
    case Comp::Kind::Ret:
      if (c.val.kind == Value::Kind::Var)
        return StepResult::stuck(StuckKind::FreeVariable, c.val.name);
      return StepResult::terminal(c.val);
    case Comp::Kind::With:
      if (c.c1->kind == Comp::Kind::Ret)  // RetUnwrap
        return StepResult::stepped(Configuration{cfg.stack, c.c1});
      {
        auto stack = cfg.stack;
        stack.push_back(c.handler);
        return StepResult::stepped(Configuration{std::move(stack), c.c1});
      }
    case Comp::Kind::If:
      if (c.val.kind == Value::Kind::Var)
        return StepResult::stuck(StuckKind::FreeVariable, c.val.name);
      if (c.val.kind != Value::Kind::Bool)
        return StepResult::stuck(StuckKind::IllTyped,
                                 "if condition " + format_value(c.val));
      return StepResult::stepped(
          Configuration{cfg.stack, c.val.b ? c.c1 : c.c2});
    case Comp::Kind::OpCall:
    case Comp::Kind::Resume: {
      // Let-normalize so the op rules, which match on `do y = op(v) in c`,
      // always apply.
      std::string y = fg.fresh("v");
      return StepResult::stepped(Configuration{
          cfg.stack, let_(y, cfg.comp, ret(Value::var(y)))});
    }
    case Comp::Kind::Let: {
      const Comp& c1 = *c.c1;
      if (c1.kind == Comp::Kind::Ret) {  // LetBind
        if (c1.val.kind == Value::Kind::Var)
          return StepResult::stuck(StuckKind::FreeVariable, c1.val.name);
        return StepResult::stepped(
            Configuration{cfg.stack, subst(c.c2, c.var, c1.val, fg)});
      }
      if (c1.kind == Comp::Kind::OpCall) {
        if (c1.val.kind == Value::Kind::Var)
          return StepResult::stuck(StuckKind::FreeVariable, c1.val.name);
        if (cfg.stack.empty()) {
          if (c1.var == "print") {  // builtin, handled at the empty stack
            if (opt.print_sink) opt.print_sink(render_for_print(c1.val));
            return StepResult::stepped(
                Configuration{cfg.stack, subst(c.c2, c.var, c1.val, fg)});
          }
          return StepResult::stuck(StuckKind::UnhandledOp, c1.var);
        }
        HandlerPtr h = cfg.stack.back();
        auto popped = cfg.stack;
        popped.pop_back();
        if (const Clause* cl = h->find(c1.var)) {
          if (opt.multishot && cl->kont) {  // OpHandle, explicit continuation
            auto k = std::make_shared<ContData>(ContData{c.var, c.c2, h});
            CompPtr body = subst(cl->body, cl->param, c1.val, fg);
            body = subst(body, *cl->kont, Value::continuation(k), fg);
            return StepResult::stepped(
                Configuration{std::move(popped), std::move(body)});
          }
          // OpHandle, one-shot: run the clause, then re-wrap h around the
          // continuation.
          CompPtr body = subst(cl->body, cl->param, c1.val, fg);
          return StepResult::stepped(Configuration{
              std::move(popped),
              let_(c.var, std::move(body), with_(h, c.c2))});
        }
        // OpForward: re-dispatch against the remaining stack.
        return StepResult::stepped(Configuration{
            std::move(popped), let_(c.var, c.c1, with_(h, c.c2))});
      }
      if (c1.kind == Comp::Kind::Resume) {
        // Deep semantics: resume runs the continuation body under its
        // captured handler.
        if (c1.val.kind == Value::Kind::Var)
          return StepResult::stuck(StuckKind::FreeVariable, c1.val.name);
        const ContData& k = *c1.cont;
        CompPtr body = subst(k.body, k.binder, c1.val, fg);
        return StepResult::stepped(Configuration{
            cfg.stack,
            let_(c.var, with_(k.handler, std::move(body)), c.c2)});
      }
      // LetStep: step inside c1 (the premise may change the stack).
      StepResult inner =
          step(Configuration{cfg.stack, c.c1}, opt, fg);
      if (inner.kind != StepResult::Kind::Stepped) return inner;
      return StepResult::stepped(Configuration{
          std::move(inner.next.stack),
          let_(c.var, inner.next.comp, c.c2)});
    }
  }
  return StepResult::stuck(StuckKind::IllTyped, "unknown form");
}

struct EvalOutcome {
  Value value;
  std::size_t steps = 0;
};

inline EvalOutcome eval(CompPtr program, const EvalOptions& opt = {}) {
  FreshGen fg;
  Configuration cfg{{}, std::move(program)};
  for (std::size_t n = 0; n < opt.step_limit; ++n) {
    StepResult r = step(cfg, opt, fg);
    switch (r.kind) {
      case StepResult::Kind::Terminal:
        return EvalOutcome{std::move(r.value), n};
      case StepResult::Kind::Stuck:
        throw StuckError(r.stuck_kind, r.stuck_detail);
      case StepResult::Kind::Stepped:
        cfg = std::move(r.next);
    }
  }
  throw StepLimitExceeded(opt.step_limit);
}

struct TraceOutcome {
  std::vector<Configuration> configs;  // initial through final
  StepResult::Kind final_kind = StepResult::Kind::Terminal;
  Value value;               // when Terminal
  StuckKind stuck_kind = StuckKind::UnhandledOp;
  std::string stuck_detail;  // when Stuck
};

inline TraceOutcome trace_steps(CompPtr program, const EvalOptions& opt = {}) {
  FreshGen fg;
  TraceOutcome out;
  Configuration cfg{{}, std::move(program)};
  out.configs.push_back(cfg);
  for (std::size_t n = 0; n < opt.step_limit; ++n) {
    StepResult r = step(cfg, opt, fg);
    if (r.kind == StepResult::Kind::Terminal) {
      out.final_kind = r.kind;
      out.value = std::move(r.value);
      return out;
    }
    if (r.kind == StepResult::Kind::Stuck) {
      out.final_kind = r.kind;
      out.stuck_kind = r.stuck_kind;
      out.stuck_detail = std::move(r.stuck_detail);
      return out;
    }
    cfg = std::move(r.next);
    out.configs.push_back(cfg);
  }
  throw StepLimitExceeded(opt.step_limit);
}

}  // namespace efx::calc
