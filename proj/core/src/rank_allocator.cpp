// SPDX-License-Identifier: Apache-2.0
#include "hyperadapt/rank_allocator.hpp"

#include <algorithm>
#include <cmath>
#include <tuple>

#include "hyperadapt/errors.hpp"

namespace hyperadapt {

bool should_prune(long step, const PruneSchedule& sched) {
  if (!sched.enabled || sched.delta_t == 0) return false;
  if (step <= sched.start_step || step > sched.end_step) return false;
  return (step - sched.start_step) % static_cast<long>(sched.delta_t) == 0;
}

std::vector<ImportanceRecord> collect_scores(const std::vector<LambdaObservation>& observations) {
  std::vector<const LambdaObservation*> sorted;
  for (const auto& o : observations) sorted.push_back(&o);
  std::stable_sort(sorted.begin(), sorted.end(),
                   [](const auto* a, const auto* b) { return a->adapter_id < b->adapter_id; });

  std::vector<ImportanceRecord> records;
  for (const auto* o : sorted) {
    if (!o->grad) throw ContractError("no singular-value gradient recorded for adapter " + o->adapter_id);
    if (o->grad->size() != o->sigma.size() || o->mask.size() != o->sigma.size()) {
      throw DimensionError("sigma, gradient and mask lengths differ for adapter " + o->adapter_id);
    }
    for (std::size_t j = 0; j < o->sigma.size(); ++j) {
      if (!o->mask[j]) continue;
      const double s = o->sigma[j];
      const double g = (*o->grad)[j];
      records.push_back({o->adapter_id, j, s, g, std::abs(s * g)});
    }
  }
  return records;
}

std::vector<PruneTarget> select_prune(const std::vector<ImportanceRecord>& records, std::size_t k) {
  std::vector<const ImportanceRecord*> order;
  order.reserve(records.size());
  for (const auto& r : records) order.push_back(&r);
  const std::size_t take = std::min(k, order.size());
  auto less = [](const ImportanceRecord* a, const ImportanceRecord* b) {
    return std::tie(a->score, a->adapter_id, a->index) < std::tie(b->score, b->adapter_id, b->index);
  };
  std::partial_sort(order.begin(), order.begin() + static_cast<long>(take), order.end(), less);
  std::vector<PruneTarget> out;
  out.reserve(take);
  for (std::size_t i = 0; i < take; ++i) out.push_back({order[i]->adapter_id, order[i]->index, order[i]->score});
  std::sort(out.begin(), out.end(), [](const PruneTarget& a, const PruneTarget& b) {
    return std::tie(a.adapter_id, a.index) < std::tie(b.adapter_id, b.index);
  });
  return out;
}

void apply_prune(std::vector<SvdAdapter>& adapters, const std::vector<PruneTarget>& selection, bool zero_lambda) {
  for (const auto& t : selection) {
    auto it = std::find_if(adapters.begin(), adapters.end(), [&](const SvdAdapter& a) { return a.id() == t.adapter_id; });
    if (it == adapters.end()) throw ContractError("prune target names unknown adapter " + t.adapter_id);
    it->prune(t.index);
    if (zero_lambda) it->factors().lambda.mutable_values()[t.index] = 0.0;
  }
}

std::size_t total_effective_rank(const std::vector<SvdAdapter>& adapters) {
  std::size_t n = 0;
  for (const auto& a : adapters) n += a.effective_rank();
  return n;
}

std::size_t prune_budget(const PruneSchedule& sched, std::size_t live, bool* clamped) {
  const std::size_t room = live > sched.target_rank ? live - sched.target_rank : 0;
  const std::size_t budget = std::min(sched.k, room);
  if (clamped) *clamped = budget < sched.k;
  return budget;
}

nlohmann::json prune_event_json(const PruneEvent& ev) {
  nlohmann::json pruned = nlohmann::json::array();
  for (const auto& t : ev.pruned) pruned.push_back({t.adapter_id, t.index, t.score});
  return {{"step", ev.step}, {"pruned", pruned}, {"remaining_rank", ev.remaining_rank}};
}

}  // namespace hyperadapt
