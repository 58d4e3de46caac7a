#include "d3/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "d3/rng.hpp"

namespace d3::metrics {

namespace {

// Groups in first-appearance order, each with its member generators in
// first-appearance order, each with its sample indices in input order.
struct GroupIndex {
  struct Member {
    std::string generator_id;
    std::vector<std::size_t> indices;
  };
  struct Group {
    std::string name;
    Domain domain = Domain::ood;
    std::vector<Member> members;
  };
  std::vector<Group> groups;
};

GroupIndex index_groups(const std::vector<ScoredSample>& samples) {
  GroupIndex gi;
  std::map<std::string, std::size_t> group_pos;
  std::map<std::pair<std::string, std::string>, std::size_t> member_pos;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    if (!std::isfinite(s.probability)) throw InvalidInput("non-finite probability");
    const std::string& group = s.architecture_group.empty() ? s.generator_id : s.architecture_group;
    auto [git, gnew] = group_pos.try_emplace(group, gi.groups.size());
    if (gnew) gi.groups.push_back({group, Domain::ood, {}});
    auto& g = gi.groups[git->second];
    if (s.domain == Domain::id) g.domain = Domain::id;
    auto [mit, mnew] = member_pos.try_emplace({group, s.generator_id}, g.members.size());
    if (mnew) g.members.push_back({s.generator_id, {}});
    g.members[mit->second].indices.push_back(i);
  }
  return gi;
}

std::optional<double> mean_of(const std::vector<double>& v) {
  if (v.empty()) return std::nullopt;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

AccuracyReport mean_accuracy(const std::vector<ScoredSample>& samples) {
  AccuracyReport report;
  const auto gi = index_groups(samples);
  std::vector<double> id, ood, total;
  for (const auto& g : gi.groups) {
    std::vector<double> member_acc;
    for (const auto& m : g.members) {
      if (m.indices.empty()) throw InvalidInput("empty generator group: " + m.generator_id);
      std::size_t correct = 0;
      for (auto i : m.indices) {
        const int predicted = samples[i].probability > kThreshold ? 1 : 0;
        correct += predicted == samples[i].label;
      }
      const double acc = static_cast<double>(correct) / static_cast<double>(m.indices.size());
      report.per_generator[m.generator_id] = acc;
      member_acc.push_back(acc);
    }
    const double merged = *mean_of(member_acc);
    report.merged[g.name] = merged;
    (g.domain == Domain::id ? id : ood).push_back(merged);
    total.push_back(merged);
  }
  report.id_mean = mean_of(id);
  report.ood_mean = mean_of(ood);
  report.total_mean = mean_of(total);
  return report;
}

double average_precision(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size()) throw InvalidInput("scores and labels differ in length");
  const auto positives = std::count(labels.begin(), labels.end(), 1);
  if (positives == 0 || positives == static_cast<long>(labels.size()))
    throw InvalidInput("average precision needs at least one positive and one negative");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  double sum = 0.0;
  std::size_t hits = 0;
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    if (labels[order[rank]] == 1) {
      ++hits;
      sum += static_cast<double>(hits) / static_cast<double>(rank + 1);
    }
  }
  return sum / static_cast<double>(positives);
}

double average_precision(const std::vector<ScoredSample>& samples) {
  std::vector<double> scores;
  std::vector<int> labels;
  for (const auto& s : samples) {
    scores.push_back(s.probability);
    labels.push_back(s.label);
  }
  return average_precision(scores, labels);
}

ResampledPools resample_pools(const std::vector<ScoredSample>& samples, std::uint64_t resample_seed) {
  const auto gi = index_groups(samples);
  Rng rng = derive_stream(resample_seed, "global-ap");

  auto upsample = [&rng](std::vector<std::size_t>& pool, std::size_t target) {
    const std::size_t n = pool.size();
    if (n == 0) throw InvalidInput("empty generator group");
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    for (std::size_t k = n; k < target; ++k) pool.push_back(pool[pick(rng)]);
  };

  // Step 1: balance members within each architecture group, then merge.
  std::vector<std::vector<std::size_t>> merged(gi.groups.size());
  for (std::size_t g = 0; g < gi.groups.size(); ++g) {
    std::size_t target = 0;
    for (const auto& m : gi.groups[g].members) target = std::max(target, m.indices.size());
    for (const auto& m : gi.groups[g].members) {
      std::vector<std::size_t> pool = m.indices;
      upsample(pool, target);
      merged[g].insert(merged[g].end(), pool.begin(), pool.end());
    }
  }
  // Step 2: balance merged groups across the whole test set.
  std::size_t target = 0;
  for (const auto& m : merged) target = std::max(target, m.size());
  for (auto& m : merged) upsample(m, target);

  ResampledPools pools;
  for (std::size_t g = 0; g < gi.groups.size(); ++g) {
    auto& dst = gi.groups[g].domain == Domain::id ? pools.id : pools.ood;
    dst.insert(dst.end(), merged[g].begin(), merged[g].end());
    pools.total.insert(pools.total.end(), merged[g].begin(), merged[g].end());
  }
  return pools;
}

GlobalAp global_ap(const std::vector<ScoredSample>& samples, std::uint64_t resample_seed) {
  const auto pools = resample_pools(samples, resample_seed);
  auto ap_of = [&](const std::vector<std::size_t>& pool) -> std::optional<double> {
    std::vector<double> scores;
    std::vector<int> labels;
    for (auto i : pool) {
      scores.push_back(samples[i].probability);
      labels.push_back(samples[i].label);
    }
    const auto pos = std::count(labels.begin(), labels.end(), 1);
    if (pos == 0 || pos == static_cast<long>(labels.size())) return std::nullopt;
    return average_precision(scores, labels);
  };
  return {ap_of(pools.id), ap_of(pools.ood), ap_of(pools.total)};
}

EvalReport evaluate(const std::vector<ScoredSample>& samples, std::uint64_t resample_seed) {
  EvalReport r;
  r.accuracy = mean_accuracy(samples);
  r.ap = global_ap(samples, resample_seed);
  r.resample_seed = resample_seed;
  return r;
}

RobustnessGrid robustness_grid(
    const std::function<double(const std::optional<Degradation>&)>& evaluate_under,
    const std::vector<double>& blur_sigmas, const std::vector<int>& jpeg_qualities) {
  RobustnessGrid grid;
  grid.clean_total_mean_acc = evaluate_under(std::nullopt);
  for (double sigma : blur_sigmas) {
    if (sigma < 0) throw InvalidInput("blur sigma must be >= 0");
    Degradation d{Degradation::Kind::blur, sigma};
    grid.blur.push_back({d, sigma == 0.0 ? grid.clean_total_mean_acc : evaluate_under(d)});
  }
  for (int q : jpeg_qualities) {
    if (q < 1 || q > 100) throw InvalidInput("jpeg quality must lie in [1, 100]");
    Degradation d{Degradation::Kind::jpeg, static_cast<double>(q)};
    grid.jpeg.push_back({d, evaluate_under(d)});
  }
  return grid;
}

std::string robustness_csv(const RobustnessGrid& grid) {
  std::ostringstream os;
  os.precision(17);
  os << "perturbation,value,total_mean_acc\n";
  for (const auto& c : grid.blur) os << "blur_sigma," << c.degradation.value << "," << c.total_mean_acc << "\n";
  for (const auto& c : grid.jpeg) os << "jpeg_quality," << c.degradation.value << "," << c.total_mean_acc << "\n";
  return os.str();
}

}  // namespace d3::metrics
