#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mbs/engine.hpp"

namespace mbs {

/// Virtual-time costs. Per-byte and per-sample rates scale with micro-batch size; the latency and
/// launch terms are paid once per transfer and once per forward/backward regardless of size.
struct CostModel {
  double transfer_seconds_per_byte = 0.0;
  double forward_seconds_per_sample = 0.0;
  double backward_seconds_per_sample = 0.0;
  double update_seconds = 0.0;
  double transfer_latency_seconds = 0.0;
  double compute_launch_seconds = 0.0;

  void validate() const;
  double transfer(std::size_t samples, std::uint64_t bytes_per_sample) const;
  double forward(std::size_t samples) const;
  double backward(std::size_t samples) const;

  friend bool operator==(const CostModel&, const CostModel&) = default;
};

enum class EventKind { transfer, forward, backward, update };
std::string to_string(EventKind kind);

struct StreamEvent {
  EventKind kind = EventKind::transfer;
  std::size_t index = 0;  // micro-batch index; 0 for the update
  double start = 0.0;
  double end = 0.0;
};

struct StreamSchedule {
  std::vector<StreamEvent> events;
  double makespan = 0.0;
  bool overlap_enabled = false;
};

/// overlap=false: transfer, forward, backward per micro-batch in sequence, then the update.
/// overlap=true: double buffering; transfer k+1 runs on the copy channel while micro-batch k
/// computes, with at most two micro-batches resident (transfer k waits for backward k-2).
StreamSchedule simulate_stream(const MicroBatchPlan& plan, const CostModel& cost, std::uint64_t bytes_per_sample,
                               bool overlap);

/// Empty string when the schedule honors every structural invariant, else a description of the first violation.
std::string check_schedule(const StreamSchedule& schedule, std::size_t n_s_mu);

/// The no-MBS path: one transfer of the whole mini-batch, one forward, one backward, one update.
StreamSchedule simulate_baseline(std::size_t n_b, const CostModel& cost, std::uint64_t bytes_per_sample);

struct OverheadReport {
  double mbs_makespan = 0.0;
  bool baseline_failed = false;
  std::optional<double> baseline_makespan;
  std::optional<double> absolute_overhead;
  std::optional<double> percent_overhead;
};

/// Overhead of MBS relative to the baseline; nullopt baseline means it did not fit ("Failed").
OverheadReport overhead_report(double mbs_makespan, std::optional<double> baseline_makespan);
OverheadReport overhead_report(const StreamSchedule& mbs, const std::optional<StreamSchedule>& baseline);

/// Write the schedule as CSV: event,kind,index,start,end.
std::string schedule_csv(const StreamSchedule& schedule);

}  // namespace mbs
