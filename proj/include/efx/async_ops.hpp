#pragma once

// The async_/await_/sleep_for abstract operations and the handlers that
// discharge them. AsyncHandler owns a Scheduler and drains it on scope
// exit; AsyncSeqHandler refines async_ so callbacks run in submission
// order regardless of task completion order.

#include <any>
#include <cstdint>
#include <memory>
#include <utility>

#include "efx/effects.hpp"
#include "efx/scheduler.hpp"

namespace efx {

inline const Operation<FuturePtr(TaskBody, PostFn)>& async_op() {
  static const Operation<FuturePtr(TaskBody, PostFn)> op("async_");
  return op;
}

inline const Operation<std::any(FuturePtr)>& await_op() {
  static const Operation<std::any(FuturePtr)> op("await_");
  return op;
}

inline const Operation<void(std::int64_t)>& sleep_op() {
  static const Operation<void(std::int64_t)> op("sleep_for");
  return op;
}

inline FuturePtr perform_async(TaskBody body, PostFn post = identity_post()) {
  return async_op()(std::move(body), std::move(post));
}

inline std::any perform_await(FuturePtr fut) { return await_op()(std::move(fut)); }

template <class T>
T await_as(FuturePtr fut) {
  return std::any_cast<T>(perform_await(std::move(fut)));
}

inline void perform_sleep(std::int64_t ms) { sleep_op()(ms); }

/// Schedule a typed computation; the future's payload is std::any(T).
template <class F>
FuturePtr spawn_async(F&& fn, PostFn post = identity_post()) {
  return perform_async(
      [f = std::forward<F>(fn)]() -> std::any { return std::any(f()); },
      std::move(post));
}

/// Handler for async_/await_/sleep_for, backed by the given scheduler.
/// Scope exit drains: every scheduled task (transitively) settles before
/// the frame pops. Task bodies dispatch against the stack as it looked at
/// the async_ call site.
inline HandlerFrame make_async_handler(std::shared_ptr<Scheduler> sched) {
  HandlerFrame frame("AsyncHandler");
  frame.on(async_op(), std::function<FuturePtr(TaskBody, PostFn)>(
                           [sched](TaskBody body, PostFn post) {
                             return sched->spawn(
                                 std::move(body), std::move(post),
                                 HandlerStack::current().snapshot_caller());
                           }));
  frame.on(await_op(), std::function<std::any(FuturePtr)>(
                           [sched](FuturePtr fut) { return sched->await(fut); }));
  frame.on(sleep_op(), std::function<void(std::int64_t)>(
                           [sched](std::int64_t ms) { sched->sleep_current(ms); }));
  frame.on_exit([sched] { sched->drain(); });
  return frame;
}

/// Refinement of async_: each scheduled task's callback waits on the
/// previous task's completion event before running, then signals its own,
/// so post_fn side effects appear in submission order. The initial event
/// starts set, so the first callback never waits. Requires an AsyncHandler
/// frame below.
inline HandlerFrame make_async_seq_handler(std::shared_ptr<Scheduler> sched) {
  struct State {
    EventPtr prev;
  };
  auto state = std::make_shared<State>();
  HandlerFrame frame("AsyncSeqHandler");
  frame.on_enter([sched, state] {
    state->prev = sched->make_event();
    sched->set_event(state->prev);
  });
  frame.on(async_op(),
           std::function<FuturePtr(TaskBody, PostFn)>(
               [sched, state](TaskBody body, PostFn post) {
                 EventPtr prev = state->prev;
                 EventPtr next = sched->make_event();
                 state->prev = next;
                 TaskBody chained = [sched, prev, next, body = std::move(body),
                                     post = std::move(post)]() -> std::any {
                   std::any result = body();
                   sched->wait_event(prev);
                   result = post(std::move(result));
                   sched->set_event(next);
                   return result;
                 };
                 return async_op()(std::move(chained), identity_post());
               }));
  return frame;
}

}  // namespace efx
