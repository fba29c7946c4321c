// Copyright 2024 The Converge Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "converge/simkernel.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

namespace converge::sim {

EventId Engine::schedule(TimedEvent event) {
  if (!std::isfinite(event.fire_at)) {
    throw CausalityError("event time must be finite");
  }
  if (event.fire_at < now_) {
    throw CausalityError("event '" + event.label + "' scheduled at " +
                         std::to_string(event.fire_at) + " before now=" + std::to_string(now_));
  }
  const EventId id = next_seq_++;
  heap_.push_back(Slot{event.fire_at, id, std::move(event.label), std::move(event.action)});
  std::push_heap(heap_.begin(), heap_.end(), Later{});
  return id;
}

EventId Engine::schedule(SimTime fire_at, std::function<void()> action, std::string label) {
  return schedule(TimedEvent{fire_at, std::move(label), std::move(action)});
}

EventId Engine::schedule_after(SimTime delay, std::function<void()> action, std::string label) {
  if (delay < 0.0) throw CausalityError("negative delay");
  return schedule(TimedEvent{now_ + delay, std::move(label), std::move(action)});
}

void Engine::dispatch_top() {
  std::pop_heap(heap_.begin(), heap_.end(), Later{});
  Slot slot = std::move(heap_.back());
  heap_.pop_back();
  now_ = slot.fire_at;
  if (tracing_) trace_.push_back(TraceEntry{slot.fire_at, slot.seq, slot.label});
  ++dispatched_;
  if (slot.action) slot.action();
}

std::size_t Engine::run_until(SimTime t_end) {
  if (t_end < now_) throw CausalityError("run_until target precedes current time");
  stop_requested_ = false;
  std::size_t count = 0;
  while (!heap_.empty() && heap_.front().fire_at <= t_end && !stop_requested_) {
    dispatch_top();
    ++count;
  }
  if (!stop_requested_) now_ = t_end;
  return count;
}

std::size_t Engine::run() {
  stop_requested_ = false;
  std::size_t count = 0;
  while (!heap_.empty() && !stop_requested_) {
    dispatch_top();
    ++count;
  }
  return count;
}

}  // namespace converge::sim
