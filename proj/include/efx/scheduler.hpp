#pragma once

// Cooperative task scheduler. Tasks are deferred computations that take
// turns on a single logical executor: exactly one task step runs at a
// time, handed a baton by the driving thread (the thread that called
// await() or drain()). Tasks suspend at await/sleep/event waits; blocking
// I/O can be taken off the baton with run_blocking(), so in-flight network
// requests overlap while task steps stay serialized.

#include <algorithm>
#include <any>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <mutex>
#include <queue>
#include <stdexcept>
#include <thread>
#include <utility>
#include <vector>

#include "efx/effects.hpp"

namespace efx {

class SchedulerClosed : public std::runtime_error {
 public:
  SchedulerClosed() : std::runtime_error("scheduler scope has already exited") {}
};

/// Timer source. Wall clock by default; the virtual clock advances only
/// when the scheduler has nothing runnable, making latency-dependent
/// behavior deterministic and fast in tests.
class Clock {
 public:
  virtual ~Clock() = default;
  virtual std::int64_t now_ms() const = 0;
  virtual bool is_virtual() const = 0;
};

class WallClock : public Clock {
 public:
  WallClock() : start_(std::chrono::steady_clock::now()) {}
  std::int64_t now_ms() const override {
    return std::chrono::duration_cast<std::chrono::milliseconds>(
               std::chrono::steady_clock::now() - start_)
        .count();
  }
  bool is_virtual() const override { return false; }

 private:
  std::chrono::steady_clock::time_point start_;
};

class VirtualClock : public Clock {
 public:
  std::int64_t now_ms() const override { return now_; }
  bool is_virtual() const override { return true; }
  void advance_to(std::int64_t t) {
    if (t > now_) now_ = t;
  }

 private:
  std::int64_t now_ = 0;
};

struct FutureState {
  enum class Status { Pending, Completed, Failed };

  std::uint64_t id = 0;  // monotonic per scheduler; doubles as submission order
  Status status = Status::Pending;
  std::any value;
  std::exception_ptr error;
  std::uint64_t completion_seq = 0;
  bool observed = false;  // set once a waiter has consumed the outcome
  std::vector<struct Task*> waiters;
};

using FuturePtr = std::shared_ptr<FutureState>;

/// A future that was never scheduled (e.g. replayed responses). Already
/// completed; await on it returns immediately.
inline FuturePtr make_completed_future(std::any value) {
  auto f = std::make_shared<FutureState>();
  f->status = FutureState::Status::Completed;
  f->value = std::move(value);
  return f;
}

inline FuturePtr make_failed_future(std::exception_ptr err) {
  auto f = std::make_shared<FutureState>();
  f->status = FutureState::Status::Failed;
  f->error = std::move(err);
  return f;
}

struct CompletionEvent {
  bool set = false;
  std::vector<struct Task*> waiters;
};

using EventPtr = std::shared_ptr<CompletionEvent>;

using TaskBody = std::function<std::any()>;
using PostFn = std::function<std::any(std::any)>;

inline PostFn identity_post() {
  return [](std::any v) { return v; };
}

struct Task {
  std::uint64_t id = 0;
  TaskBody body;
  PostFn post;
  DispatchContext ctx;
  FuturePtr future;
  class Scheduler* owner = nullptr;

  std::thread thread;
  bool runnable = false;  // guarded by the scheduler mutex
  bool finished = false;
  std::condition_variable cv;
};

class Scheduler {
 public:
  explicit Scheduler(std::shared_ptr<Clock> clock = std::make_shared<WallClock>())
      : clock_(std::move(clock)) {}

  ~Scheduler() { join_all(); }

  Scheduler(const Scheduler&) = delete;
  Scheduler& operator=(const Scheduler&) = delete;

  const Clock& clock() const { return *clock_; }
  std::int64_t now_ms() const { return clock_->now_ms(); }
  bool closed() const { return closed_; }

  /// Schedule a deferred computation. Returns a Pending future immediately;
  /// when the task later runs to completion with result r, post(r) becomes
  /// the future's value. The body dispatches operations against ctx.
  FuturePtr spawn(TaskBody body, PostFn post, DispatchContext ctx) {
    std::unique_lock<std::mutex> lk(mu_);
    if (closed_) throw SchedulerClosed();
    auto task = std::make_unique<Task>();
    Task* t = task.get();
    t->id = next_id_++;
    t->body = std::move(body);
    t->post = post ? std::move(post) : identity_post();
    t->ctx = std::move(ctx);
    t->owner = this;
    t->future = std::make_shared<FutureState>();
    t->future->id = t->id;
    futures_.push_back(t->future);
    ready_.push_back(t);
    t->thread = std::thread([t] { task_main(t); });
    tasks_.push_back(std::move(task));
    return tasks_.back()->future;
  }

  /// Wait for a future. From the top level this drives the loop until the
  /// future settles; from inside a task it suspends only that task.
  std::any await(const FuturePtr& fut) {
    std::unique_lock<std::mutex> lk(mu_);
    if (Task* me = current_task()) {
      while (fut->status == FutureState::Status::Pending) {
        fut->waiters.push_back(me);
        yield_to_driver(lk, me);
      }
    } else {
      if (closed_ && fut->status == FutureState::Status::Pending)
        throw SchedulerClosed();
      drive(lk, [&] { return fut->status != FutureState::Status::Pending; });
    }
    fut->observed = true;
    if (fut->status == FutureState::Status::Failed)
      std::rethrow_exception(fut->error);
    return fut->value;
  }

  /// Suspend the calling task for at least `ms`; other tasks proceed.
  void sleep_current(std::int64_t ms) {
    std::unique_lock<std::mutex> lk(mu_);
    Task* me = current_task();
    if (!me) throw std::logic_error("sleep_current called outside a task");
    timers_.push(Timer{clock_->now_ms() + ms, timer_seq_++, me});
    yield_to_driver(lk, me);
  }

  EventPtr make_event() { return std::make_shared<CompletionEvent>(); }

  void wait_event(const EventPtr& ev) {
    std::unique_lock<std::mutex> lk(mu_);
    Task* me = current_task();
    if (!me) throw std::logic_error("wait_event called outside a task");
    while (!ev->set) {
      ev->waiters.push_back(me);
      yield_to_driver(lk, me);
    }
  }

  void set_event(const EventPtr& ev) {
    std::unique_lock<std::mutex> lk(mu_);
    ev->set = true;
    for (Task* w : ev->waiters) ready_.push_back(w);
    ev->waiters.clear();
  }

  /// Run blocking I/O off the baton: the executor proceeds with other
  /// tasks while `io` runs on this task's own thread.
  template <class F>
  auto run_blocking(F io) -> decltype(io()) {
    std::unique_lock<std::mutex> lk(mu_);
    Task* me = current_task();
    if (!me) {
      lk.unlock();
      return io();
    }
    ++external_pending_;
    driver_has_control_ = true;
    driver_cv_.notify_one();
    lk.unlock();
    struct Rejoin {
      Scheduler* s;
      Task* t;
      ~Rejoin() {
        std::unique_lock<std::mutex> lk2(s->mu_);
        --s->external_pending_;
        s->ready_.push_back(t);
        s->driver_cv_.notify_one();
        t->cv.wait(lk2, [this] { return t->runnable; });
        t->runnable = false;
      }
    } rejoin{this, me};
    return io();
  }

  /// Run every scheduled task (including tasks spawned during the drain)
  /// to settlement, then close. The first unobserved failure, in
  /// completion order, is re-raised after everything settles.
  void drain() {
    {
      std::unique_lock<std::mutex> lk(mu_);
      drive(lk, [this] { return all_settled(); });
      closed_ = true;
    }
    join_all();
    FuturePtr first_failure;
    for (const auto& f : futures_) {
      if (f->status == FutureState::Status::Failed && !f->observed &&
          (!first_failure || f->completion_seq < first_failure->completion_seq)) {
        first_failure = f;
      }
    }
    if (first_failure) {
      first_failure->observed = true;
      std::rethrow_exception(first_failure->error);
    }
  }

  static Scheduler* current() {
    Task* t = current_task();
    return t ? t->owner : nullptr;
  }

 private:
  struct Timer {
    std::int64_t deadline;
    std::uint64_t seq;
    Task* task;
    bool operator>(const Timer& o) const {
      return std::tie(deadline, seq) > std::tie(o.deadline, o.seq);
    }
  };

  static Task*& current_task_ref() {
    thread_local Task* t = nullptr;
    return t;
  }
  static Task* current_task() { return current_task_ref(); }

  static void task_main(Task* t) {
    Scheduler* s = t->owner;
    {
      std::unique_lock<std::mutex> lk(s->mu_);
      t->cv.wait(lk, [t] { return t->runnable; });
      t->runnable = false;
    }
    current_task_ref() = t;
    HandlerStack stack(t->ctx);
    HandlerStack::AmbientGuard guard(&stack);
    std::any result;
    std::exception_ptr err;
    try {
      result = t->body();
      result = t->post(std::move(result));
    } catch (...) {
      err = std::current_exception();
    }
    std::unique_lock<std::mutex> lk(s->mu_);
    auto& f = t->future;
    f->completion_seq = ++s->completion_counter_;
    if (err) {
      f->status = FutureState::Status::Failed;
      f->error = err;
    } else {
      f->status = FutureState::Status::Completed;
      f->value = std::move(result);
    }
    for (Task* w : f->waiters) s->ready_.push_back(w);
    f->waiters.clear();
    t->finished = true;
    s->driver_has_control_ = true;
    s->driver_cv_.notify_one();
  }

  void yield_to_driver(std::unique_lock<std::mutex>& lk, Task* me) {
    driver_has_control_ = true;
    driver_cv_.notify_one();
    me->cv.wait(lk, [me] { return me->runnable; });
    me->runnable = false;
  }

  void resume_task(std::unique_lock<std::mutex>& lk, Task* t) {
    driver_has_control_ = false;
    t->runnable = true;
    t->cv.notify_one();
    driver_cv_.wait(lk, [this] { return driver_has_control_; });
  }

  void fire_due_timers() {
    std::int64_t now = clock_->now_ms();
    while (!timers_.empty() && timers_.top().deadline <= now) {
      ready_.push_back(timers_.top().task);
      timers_.pop();
    }
  }

  // Driver loop; runs on the (single) non-task thread that requested work.
  void drive(std::unique_lock<std::mutex>& lk, std::function<bool()> done) {
    if (current_task()) throw std::logic_error("drive() called from a task");
    for (;;) {
      fire_due_timers();
      if (done()) return;
      if (!ready_.empty()) {
        Task* t = ready_.front();
        ready_.pop_front();
        resume_task(lk, t);
        continue;
      }
      if (!timers_.empty()) {
        if (clock_->is_virtual()) {
          static_cast<VirtualClock*>(clock_.get())
              ->advance_to(timers_.top().deadline);
        } else {
          std::int64_t wait = timers_.top().deadline - clock_->now_ms();
          if (wait > 0)
            driver_cv_.wait_for(lk, std::chrono::milliseconds(wait));
        }
        continue;
      }
      if (external_pending_ > 0) {
        driver_cv_.wait(lk);
        continue;
      }
      throw std::runtime_error(
          "scheduler stalled: pending work cannot make progress");
    }
  }

  bool all_settled() const {
    for (std::size_t i = first_unsettled_; i < futures_.size(); ++i) {
      if (futures_[i]->status == FutureState::Status::Pending) {
        const_cast<Scheduler*>(this)->first_unsettled_ = i;
        return false;
      }
    }
    const_cast<Scheduler*>(this)->first_unsettled_ = futures_.size();
    return true;
  }

  void join_all() {
    for (auto& t : tasks_) {
      if (t->thread.joinable()) t->thread.join();
    }
  }

  std::shared_ptr<Clock> clock_;
  std::mutex mu_;
  std::condition_variable driver_cv_;
  bool driver_has_control_ = true;
  bool closed_ = false;

  std::uint64_t next_id_ = 1;
  std::uint64_t timer_seq_ = 0;
  std::uint64_t completion_counter_ = 0;
  std::deque<Task*> ready_;
  std::priority_queue<Timer, std::vector<Timer>, std::greater<Timer>> timers_;
  std::vector<std::unique_ptr<Task>> tasks_;
  std::vector<FuturePtr> futures_;
  std::size_t first_unsettled_ = 0;
  int external_pending_ = 0;
};

}  // namespace efx
