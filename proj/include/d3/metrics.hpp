#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "d3/image.hpp"

namespace d3::metrics {

enum class Domain { id, ood };

struct ScoredSample {
  double probability = 0.5;
  int label = 0;  // 0 = real, 1 = fake
  std::string generator_id;
  std::string architecture_group;
  Domain domain = Domain::id;
};

inline constexpr double kThreshold = 0.5;

struct AccuracyReport {
  std::map<std::string, double> per_generator;
  /// After averaging the generators of one architecture group.
  std::map<std::string, double> merged;
  std::optional<double> id_mean;
  std::optional<double> ood_mean;
  std::optional<double> total_mean;
};

struct GlobalAp {
  std::optional<double> id_ap;
  std::optional<double> ood_ap;
  std::optional<double> total_ap;
};

struct EvalReport {
  AccuracyReport accuracy;
  GlobalAp ap;
  double threshold = kThreshold;
  std::uint64_t resample_seed = 0;
};

/// Predict fake iff probability > 0.5; average per generator, then per architecture
/// group, then unweighted over groups in ID, OOD and Total. A group belongs to ID
/// when any of its samples is ID.
AccuracyReport mean_accuracy(const std::vector<ScoredSample>& samples);

/// Mean over positives of the precision at each positive's rank. Ranking is by
/// descending score, ties broken by ascending input position.
double average_precision(const std::vector<double>& scores, const std::vector<int>& labels);
double average_precision(const std::vector<ScoredSample>& samples);

/// Global AP: upsample generators within each architecture group (with replacement)
/// to the largest member, merge, upsample merged groups to the largest group, then
/// compute AP over the ID, OOD and Total pools. Pools lacking either class yield nullopt.
GlobalAp global_ap(const std::vector<ScoredSample>& samples, std::uint64_t resample_seed);

/// The resampled pool (as input indices, in pool order) for one domain filter.
struct ResampledPools {
  std::vector<std::size_t> id, ood, total;
};
ResampledPools resample_pools(const std::vector<ScoredSample>& samples, std::uint64_t resample_seed);

EvalReport evaluate(const std::vector<ScoredSample>& samples, std::uint64_t resample_seed);

/// One single-degradation setting of the robustness sweep.
struct Degradation {
  enum class Kind { blur, jpeg } kind = Kind::blur;
  double value = 0.0;  // sigma, or quality
};

struct RobustnessCell {
  Degradation degradation;
  double total_mean_acc = 0.0;
};

struct RobustnessGrid {
  std::vector<RobustnessCell> blur;
  std::vector<RobustnessCell> jpeg;
  double clean_total_mean_acc = 0.0;
};

inline const std::vector<double> kDefaultBlurSigmas{0.0, 0.5, 1.0, 1.5, 2.0};
inline const std::vector<int> kDefaultJpegQualities{30, 40, 50, 60, 70, 80, 90, 100};

/// Evaluates total mean accuracy under each degradation. `evaluate_under(nullopt)`
/// is the clean evaluation; sigma 0 is the identity and reuses the clean value.
RobustnessGrid robustness_grid(
    const std::function<double(const std::optional<Degradation>&)>& evaluate_under,
    const std::vector<double>& blur_sigmas, const std::vector<int>& jpeg_qualities);

/// CSV with columns perturbation,value,total_mean_acc.
std::string robustness_csv(const RobustnessGrid& grid);

}  // namespace d3::metrics
