#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

#include "teshu/core.hpp"

namespace teshu {

/// Rotating-ring pairing: at `step`, sender `i` targets receiver (i + step) mod m.
inline std::size_t ring_schedule(std::size_t step, std::size_t sender_index, std::size_t m) {
  if (m == 0 || step >= m) throw InvalidArgument("ring_schedule: step must be in [0, m)");
  return (sender_index + step) % m;
}

/// Order in which receiver `receiver_index` meets the senders, step by step.
inline std::vector<std::size_t> ring_receive_order(std::size_t receiver_index, std::size_t senders, std::size_t m) {
  std::vector<std::size_t> order;
  for (std::size_t step = 0; step < m; ++step)
    for (std::size_t i = 0; i < senders; ++i)
      if (ring_schedule(step, i, m) == receiver_index) order.push_back(i);
  return order;
}

struct BruckRound {
  std::size_t offset;  // 2^k
  std::size_t bit;     // k
  /// Blocks whose destination index, relative to the current holder, has bit k set move this round.
  bool moves(std::size_t relative_index) const { return (relative_index >> bit) & 1U; }
};

/// ceil(log2 n) rounds; round k forwards to (i + 2^k) mod n and receives from (i - 2^k) mod n.
inline std::vector<BruckRound> bruck_schedule(std::size_t n) {
  if (n == 0) throw InvalidArgument("bruck_schedule: n must be >= 1");
  std::vector<BruckRound> rounds;
  for (std::size_t k = 0; (std::size_t{1} << k) < n; ++k) rounds.push_back({std::size_t{1} << k, k});
  return rounds;
}

// Contiguous groups over the ordered sender list. Sizes above n clamp to n.
inline std::size_t resolve_group_size(std::optional<std::size_t> requested, std::size_t n) {
  if (n == 0) return 1;
  std::size_t g = requested.value_or(static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(n)))));
  if (g == 0) throw InvalidArgument("group size must be >= 1");
  return std::min(g, n);
}

inline std::vector<WorkerList> make_groups(const WorkerList& workers, std::size_t group_size) {
  std::vector<WorkerList> groups;
  for (std::size_t i = 0; i < workers.size(); i += group_size)
    groups.emplace_back(workers.begin() + static_cast<std::ptrdiff_t>(i),
                        workers.begin() + static_cast<std::ptrdiff_t>(std::min(workers.size(), i + group_size)));
  return groups;
}

/// Destinations handled by the member at `rank` of a group of `group_len` workers.
inline WorkerList slice_for_rank(const WorkerList& dsts, std::size_t rank, std::size_t group_len) {
  WorkerList out;
  for (std::size_t t = 0; t < dsts.size(); ++t)
    if (t % group_len == rank) out.push_back(dsts[t]);
  return out;
}

}  // namespace teshu
