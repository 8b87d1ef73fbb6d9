#pragma once

// Abstract operations and the scoped handler stack that discharges them.
//
// An Operation<R(Args...)> is a named interface point with no behavior of
// its own. Behavior comes from HandlerFrames pushed onto the ambient
// HandlerStack; perform() routes an invocation to the topmost frame whose
// clause map contains the operation. While a clause runs, the dispatch
// cursor is lowered to just below the discharging frame, so nested
// invocations of the same operation dispatch strictly below it.

#include <any>
#include <atomic>
#include <cstdint>
#include <functional>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace efx {

class UnhandledOperation : public std::runtime_error {
 public:
  UnhandledOperation(const std::string& op_name, const std::string& stack_desc)
      : std::runtime_error("unhandled operation '" + op_name +
                           "' (visible stack: " + stack_desc + ")"),
        op_name_(op_name) {}
  const std::string& op_name() const { return op_name_; }

 private:
  std::string op_name_;
};

class OutOfOrderPop : public std::logic_error {
 public:
  explicit OutOfOrderPop(const std::string& what) : std::logic_error(what) {}
};

namespace detail {

struct OpInfo {
  std::uint64_t id;
  std::string name;
};

inline std::uint64_t fresh_op_id() {
  static std::atomic<std::uint64_t> counter{0};
  return ++counter;
}

}  // namespace detail

template <class Sig>
class Operation;

/// A fresh, process-unique operation identity. Copies share the identity;
/// two separately constructed operations never compare equal, even with the
/// same name.
template <class R, class... Args>
class Operation<R(Args...)> {
 public:
  using Clause = std::function<R(Args...)>;

  explicit Operation(std::string name)
      : info_(std::make_shared<const detail::OpInfo>(
            detail::OpInfo{detail::fresh_op_id(), std::move(name)})) {}

  std::uint64_t id() const { return info_->id; }
  const std::string& name() const { return info_->name; }

  bool operator==(const Operation& other) const { return info_ == other.info_; }
  bool operator!=(const Operation& other) const { return !(*this == other); }

  // Perform against the thread-ambient handler stack.
  R operator()(Args... args) const;

 private:
  std::shared_ptr<const detail::OpInfo> info_;
};

/// A bundle of operation clauses plus optional enter/exit lifecycle hooks.
/// Frames are copied (frozen) when pushed; mutating a HandlerFrame after
/// push does not affect the pushed instance.
class HandlerFrame {
 public:
  HandlerFrame() = default;
  explicit HandlerFrame(std::string label) : label_(std::move(label)) {}

  template <class R, class... Args>
  HandlerFrame& on(const Operation<R(Args...)>& op,
                   std::function<R(Args...)> clause) {
    clauses_[op.id()] = Entry{op.name(), std::any(std::move(clause))};
    return *this;
  }

  HandlerFrame& on_enter(std::function<void()> hook) {
    enter_ = std::move(hook);
    return *this;
  }
  HandlerFrame& on_exit(std::function<void()> hook) {
    exit_ = std::move(hook);
    return *this;
  }

  bool discharges(std::uint64_t op_id) const {
    return clauses_.count(op_id) != 0;
  }
  const std::string& label() const { return label_; }

  std::vector<std::string> op_names() const {
    std::vector<std::string> out;
    for (const auto& [id, e] : clauses_) out.push_back(e.op_name);
    return out;
  }

 private:
  friend class HandlerStack;
  struct Entry {
    std::string op_name;
    std::any clause;
  };
  const Entry* find(std::uint64_t op_id) const {
    auto it = clauses_.find(op_id);
    return it == clauses_.end() ? nullptr : &it->second;
  }

  std::string label_;
  std::unordered_map<std::uint64_t, Entry> clauses_;
  std::function<void()> enter_;
  std::function<void()> exit_;
};

using FramePtr = std::shared_ptr<const HandlerFrame>;

/// Immutable view of a stack's frames and dispatch cursor, usable to
/// dispatch later (e.g. from a deferred task body) exactly as the stack
/// looked when the snapshot was taken.
struct DispatchContext {
  std::vector<FramePtr> frames;
  std::size_t cursor = 0;
};

class HandlerStack {
 public:
  HandlerStack() = default;
  explicit HandlerStack(DispatchContext ctx)
      : frames_(std::move(ctx.frames)), cursor_(ctx.cursor) {}

  HandlerStack(const HandlerStack&) = delete;
  HandlerStack& operator=(const HandlerStack&) = delete;

  /// RAII scope token returned by push(). pop() enforces LIFO discipline:
  /// popping a frame that is not the current top throws OutOfOrderPop.
  class Scope {
   public:
    Scope() = default;
    Scope(Scope&& o) noexcept
        : stack_(std::exchange(o.stack_, nullptr)),
          frame_(std::move(o.frame_)) {}
    Scope& operator=(Scope&& o) noexcept {
      if (this != &o) {
        release_quiet();
        stack_ = std::exchange(o.stack_, nullptr);
        frame_ = std::move(o.frame_);
      }
      return *this;
    }
    ~Scope() { release_quiet(); }

    void pop() {
      HandlerStack* s = std::exchange(stack_, nullptr);
      if (s) s->pop_frame(frame_);
    }
    bool active() const { return stack_ != nullptr; }

   private:
    friend class HandlerStack;
    Scope(HandlerStack* s, FramePtr f) : stack_(s), frame_(std::move(f)) {}
    void release_quiet() {
      HandlerStack* s = std::exchange(stack_, nullptr);
      if (!s) return;
      try {
        s->pop_frame(frame_);
      } catch (...) {
        // Destructors must not throw; explicit pop() reports ordering errors.
      }
    }
    HandlerStack* stack_ = nullptr;
    FramePtr frame_;
  };

  /// Push a (copy of a) frame at the current cursor position and run its
  /// enter hook. At top level this is a plain push; inside a clause the
  /// frame becomes the top of the visible sub-stack.
  [[nodiscard]] Scope push(HandlerFrame frame) {
    auto ptr = std::make_shared<const HandlerFrame>(std::move(frame));
    frames_.insert(frames_.begin() + static_cast<std::ptrdiff_t>(cursor_), ptr);
    ++cursor_;
    if (ptr->enter_) ptr->enter_();
    return Scope(this, ptr);
  }

  std::size_t depth() const { return frames_.size(); }
  std::size_t cursor() const { return cursor_; }

  DispatchContext snapshot() const { return DispatchContext{frames_, cursor_}; }

  /// The context as seen at the perform() call site of the currently
  /// running clause, i.e. before dispatch lowered the cursor. Deferred
  /// task bodies dispatch against this.
  DispatchContext snapshot_caller() const {
    std::size_t c = cursor_history_.empty() ? cursor_ : cursor_history_.back();
    return DispatchContext{frames_, c};
  }

  template <class R, class... Args>
  R perform(const Operation<R(Args...)>& op, Args... args) {
    using Clause = std::function<R(Args...)>;
    for (std::size_t i = cursor_; i-- > 0;) {
      const auto* entry = frames_[i]->find(op.id());
      if (!entry) continue;
      const auto& clause = std::any_cast<const Clause&>(entry->clause);
      cursor_history_.push_back(cursor_);
      cursor_ = i;
      struct Restore {
        HandlerStack* s;
        ~Restore() {
          s->cursor_ = s->cursor_history_.back();
          s->cursor_history_.pop_back();
        }
      } restore{this};
      return clause(std::move(args)...);
    }
    throw UnhandledOperation(op.name(), describe());
  }

  std::string describe() const {
    std::ostringstream oss;
    oss << "[";
    for (std::size_t i = 0; i < cursor_; ++i) {
      if (i) oss << ", ";
      oss << (frames_[i]->label().empty() ? "<frame>" : frames_[i]->label());
    }
    oss << "]";
    return oss.str();
  }

  /// Thread-ambient stack. Each thread has its own; task executors install
  /// a stack built from a DispatchContext snapshot for the body's duration.
  static HandlerStack& current() {
    HandlerStack*& p = current_ptr();
    if (!p) {
      thread_local HandlerStack root;
      p = &root;
    }
    return *p;
  }

  class AmbientGuard {
   public:
    explicit AmbientGuard(HandlerStack* s) : prev_(current_ptr()) {
      current_ptr() = s;
    }
    ~AmbientGuard() { current_ptr() = prev_; }
    AmbientGuard(const AmbientGuard&) = delete;
    AmbientGuard& operator=(const AmbientGuard&) = delete;

   private:
    HandlerStack* prev_;
  };

 private:
  static HandlerStack*& current_ptr() {
    thread_local HandlerStack* p = nullptr;
    return p;
  }

  void pop_frame(const FramePtr& frame) {
    if (cursor_ == 0 || frames_[cursor_ - 1] != frame) {
      throw OutOfOrderPop("popping handler frame '" +
                          (frame ? frame->label() : std::string("<null>")) +
                          "' which is not the current top");
    }
    frames_.erase(frames_.begin() + static_cast<std::ptrdiff_t>(cursor_ - 1));
    --cursor_;
    if (frame->exit_) frame->exit_();
  }

  std::vector<FramePtr> frames_;
  std::size_t cursor_ = 0;
  std::vector<std::size_t> cursor_history_;
};

template <class R, class... Args>
R Operation<R(Args...)>::operator()(Args... args) const {
  return HandlerStack::current().perform(*this, std::move(args)...);
}

/// Push onto the thread-ambient stack.
[[nodiscard]] inline HandlerStack::Scope push_handler(HandlerFrame frame) {
  return HandlerStack::current().push(std::move(frame));
}

}  // namespace efx
