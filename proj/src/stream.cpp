#include "mbs/stream.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "mbs/errors.hpp"
#include "mbs/format.hpp"

namespace mbs {

void CostModel::validate() const {
  for (double v : {transfer_seconds_per_byte, forward_seconds_per_sample, backward_seconds_per_sample, update_seconds,
                   transfer_latency_seconds, compute_launch_seconds}) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw ArgumentError("cost model entries must be finite and non-negative");
  }
}

double CostModel::transfer(std::size_t samples, std::uint64_t bytes_per_sample) const {
  return transfer_latency_seconds +
         static_cast<double>(samples) * static_cast<double>(bytes_per_sample) * transfer_seconds_per_byte;
}

double CostModel::forward(std::size_t samples) const {
  return compute_launch_seconds + static_cast<double>(samples) * forward_seconds_per_sample;
}

double CostModel::backward(std::size_t samples) const {
  return compute_launch_seconds + static_cast<double>(samples) * backward_seconds_per_sample;
}

std::string to_string(EventKind kind) {
  switch (kind) {
    case EventKind::transfer: return "transfer";
    case EventKind::forward: return "forward";
    case EventKind::backward: return "backward";
    case EventKind::update: return "update";
  }
  return "?";
}

StreamSchedule simulate_stream(const MicroBatchPlan& plan, const CostModel& cost, std::uint64_t bytes_per_sample,
                               bool overlap) {
  plan.validate();
  cost.validate();
  StreamSchedule s;
  s.overlap_enabled = overlap;
  double channel_free = 0.0;
  double compute_free = 0.0;
  std::vector<double> backward_end(plan.n_s_mu, 0.0);

  for (std::size_t k = 0; k < plan.n_s_mu; ++k) {
    const std::size_t n = plan.sizes[k];
    double t_start = overlap ? channel_free : compute_free;
    if (overlap && k >= 2) t_start = std::max(t_start, backward_end[k - 2]);
    const double t_end = t_start + cost.transfer(n, bytes_per_sample);
    channel_free = t_end;

    const double f_start = std::max(t_end, compute_free);
    const double f_end = f_start + cost.forward(n);
    const double b_end = f_end + cost.backward(n);
    compute_free = b_end;
    backward_end[k] = b_end;

    s.events.push_back({EventKind::transfer, k, t_start, t_end});
    s.events.push_back({EventKind::forward, k, f_start, f_end});
    s.events.push_back({EventKind::backward, k, f_end, b_end});
  }
  s.events.push_back({EventKind::update, 0, compute_free, compute_free + cost.update_seconds});
  s.makespan = compute_free + cost.update_seconds;
  // Events are emitted per micro-batch; order them by start time for readers (stable keeps ties in plan order).
  std::stable_sort(s.events.begin(), s.events.end(),
                   [](const StreamEvent& a, const StreamEvent& b) { return a.start < b.start; });
  return s;
}

std::string check_schedule(const StreamSchedule& schedule, std::size_t n_s_mu) {
  std::vector<const StreamEvent*> transfers, compute;
  const StreamEvent* update = nullptr;
  std::vector<double> transfer_end(n_s_mu, -1.0), backward_end(n_s_mu, -1.0);
  for (const StreamEvent& e : schedule.events) {
    if (e.end < e.start) return "event ends before it starts";
    if (e.kind == EventKind::update) {
      if (update) return "more than one update";
      update = &e;
      continue;
    }
    if (e.index >= n_s_mu) return "micro-batch index out of range";
    if (e.kind == EventKind::transfer) {
      transfers.push_back(&e);
      transfer_end[e.index] = e.end;
    } else {
      compute.push_back(&e);
      if (e.kind == EventKind::backward) backward_end[e.index] = e.end;
    }
  }
  if (!update) return "missing update";
  auto overlapping = [](std::vector<const StreamEvent*> v) {
    std::sort(v.begin(), v.end(), [](const StreamEvent* a, const StreamEvent* b) { return a->start < b->start; });
    for (std::size_t i = 1; i < v.size(); ++i) {
      if (v[i]->start < v[i - 1]->end) return true;
    }
    return false;
  };
  if (overlapping(transfers)) return "transfers overlap on the copy channel";
  std::vector<const StreamEvent*> compute_and_update = compute;
  compute_and_update.push_back(update);
  if (overlapping(compute_and_update)) return "compute events overlap";
  for (const StreamEvent* e : compute) {
    if (transfer_end[e->index] < 0.0 || e->start < transfer_end[e->index]) return "compute precedes its transfer";
  }
  for (double b : backward_end) {
    if (b < 0.0) return "missing backward";
    if (update->start < b) return "update starts before the last backward ends";
  }
  double last_end = 0.0;
  for (const StreamEvent& e : schedule.events) last_end = std::max(last_end, e.end);
  if (last_end != update->end) return "update is not the last event";
  if (schedule.makespan != last_end) return "makespan differs from the last event end";
  return {};
}

StreamSchedule simulate_baseline(std::size_t n_b, const CostModel& cost, std::uint64_t bytes_per_sample) {
  return simulate_stream(plan_split(n_b, n_b), cost, bytes_per_sample, false);
}

OverheadReport overhead_report(double mbs_makespan, std::optional<double> baseline_makespan) {
  OverheadReport r;
  r.mbs_makespan = mbs_makespan;
  if (!baseline_makespan) {
    r.baseline_failed = true;
    return r;
  }
  r.baseline_makespan = baseline_makespan;
  r.absolute_overhead = mbs_makespan - *baseline_makespan;
  if (*baseline_makespan > 0.0) {
    r.percent_overhead = 100.0 * (*r.absolute_overhead) / *baseline_makespan;
  } else if (*r.absolute_overhead == 0.0) {
    r.percent_overhead = 0.0;
  }
  return r;
}

OverheadReport overhead_report(const StreamSchedule& mbs, const std::optional<StreamSchedule>& baseline) {
  return overhead_report(mbs.makespan, baseline ? std::optional<double>(baseline->makespan) : std::nullopt);
}

std::string schedule_csv(const StreamSchedule& schedule) {
  std::ostringstream os;
  os << "event,kind,index,start,end\n";
  for (std::size_t i = 0; i < schedule.events.size(); ++i) {
    const StreamEvent& e = schedule.events[i];
    os << i << ',' << to_string(e.kind) << ',' << e.index << ',' << format_g17(e.start) << ',' << format_g17(e.end)
       << '\n';
  }
  return os.str();
}

}  // namespace mbs
