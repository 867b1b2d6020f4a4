#ifndef GALLOP_TESTS_ORACLES_HPP
#define GALLOP_TESTS_ORACLES_HPP

#include <algorithm>
#include <cstdint>
#include <cstddef>
#include <numeric>
#include <vector>

// Brute-force references shared by the unit tests and the acceptance suite.
namespace gallop::testing {

// Sweep every observed score as a threshold; keep the largest one that still
// admits at least 95% of the ID scores.
inline double sweep_fpr95(const std::vector<double>& id, const std::vector<double>& ood) {
  std::vector<double> candidates = id;
  candidates.insert(candidates.end(), ood.begin(), ood.end());
  bool found = false;
  double best = 0.0;
  for (double t : candidates) {
    std::size_t hits = 0;
    for (double s : id) hits += s >= t;
    if (100 * hits >= 95 * id.size() && (!found || t > best)) {
      best = t;
      found = true;
    }
  }
  std::size_t fp = 0;
  for (double s : ood) fp += s >= best;
  return double(fp) / double(ood.size());
}

inline double pair_count_auroc(const std::vector<double>& id, const std::vector<double>& ood) {
  double wins = 0.0;
  for (double a : id) {
    for (double b : ood) {
      if (a > b) wins += 1.0;
      else if (a == b) wins += 0.5;
    }
  }
  return wins / (double(id.size()) * double(ood.size()));
}

// Sort-and-pick: stable descending sort keeps lower indices first on ties.
inline std::vector<std::uint32_t> sorted_topk(const std::vector<double>& s, std::size_t k) {
  std::vector<std::uint32_t> idx(s.size());
  std::iota(idx.begin(), idx.end(), 0u);
  std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return s[a] > s[b]; });
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace gallop::testing

#endif  // GALLOP_TESTS_ORACLES_HPP
