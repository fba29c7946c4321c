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

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace converge::sim {

/// Virtual time in seconds. Never coupled to the wall clock.
using SimTime = double;

using EventId = std::uint64_t;

class CausalityError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// A unit of work to run at `fire_at`. The label is what ends up in the
/// trace, so it should identify the event well enough to diff two runs.
struct TimedEvent {
  SimTime fire_at = 0.0;
  std::string label;
  std::function<void()> action;
};

struct TraceEntry {
  SimTime fire_at;
  std::uint64_t seq;
  std::string label;

  bool operator==(const TraceEntry&) const = default;
};

// Single-threaded discrete-event engine. Events are totally ordered by
// (fire_at, seq); seq is the insertion counter, so ties dispatch FIFO.
class Engine {
 public:
  Engine() = default;
  Engine(const Engine&) = delete;
  Engine& operator=(const Engine&) = delete;

  SimTime now() const { return now_; }
  std::size_t pending() const { return heap_.size(); }
  std::size_t dispatched() const { return dispatched_; }

  EventId schedule(TimedEvent event);
  EventId schedule(SimTime fire_at, std::function<void()> action, std::string label = {});
  EventId schedule_after(SimTime delay, std::function<void()> action, std::string label = {});

  /// Dispatches every event with fire_at <= t_end, including events scheduled
  /// by handlers along the way, then advances the clock to t_end.
  std::size_t run_until(SimTime t_end);

  /// Drains the queue (or stops early after request_stop()).
  std::size_t run();

  /// Makes the current run()/run_until() return after the in-flight event.
  void request_stop() { stop_requested_ = true; }

  void set_tracing(bool on) { tracing_ = on; }
  const std::vector<TraceEntry>& trace() const { return trace_; }

 private:
  struct Slot {
    SimTime fire_at;
    std::uint64_t seq;
    std::string label;
    std::function<void()> action;
  };
  struct Later {
    bool operator()(const Slot& a, const Slot& b) const {
      if (a.fire_at != b.fire_at) return a.fire_at > b.fire_at;
      return a.seq > b.seq;
    }
  };

  void dispatch_top();

  SimTime now_ = 0.0;
  std::uint64_t next_seq_ = 1;
  std::size_t dispatched_ = 0;
  bool stop_requested_ = false;
  bool tracing_ = false;
  std::vector<Slot> heap_;
  std::vector<TraceEntry> trace_;
};

}  // namespace converge::sim
