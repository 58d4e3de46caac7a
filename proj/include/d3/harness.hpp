#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "d3/backbone.hpp"
#include "d3/checkpoint.hpp"
#include "d3/head.hpp"
#include "d3/imagekit.hpp"
#include "d3/metrics.hpp"
#include "d3/synthbench.hpp"
#include "d3/train.hpp"

namespace d3::harness {

inline constexpr const char* kCodeVersion = "d3-1.0.0";

enum class ExperimentKind {
  synth,
  train_eval,
  eval,
  scale_sweep,
  disruption_ablation,
  patch_size_ablation,
  head_ablation,
  branch_ablation,
  robustness,
  occlusion,
  report,
};

std::string to_string(ExperimentKind kind);
ExperimentKind experiment_from_string(const std::string& s);

struct OcclusionSettings {
  int window = 28;
  int stride = 14;
  int fill = imagekit::kMidGray;
  int samples = 4;
  /// Generator whose fake test images are mapped; empty picks the first train generator.
  std::string generator_id;
};

struct ExperimentConfig {
  ExperimentKind kind = ExperimentKind::train_eval;
  /// JSONL manifest; when empty the default benchmark is built from `master_seed` and
  /// `samples_per_generator_per_class`.
  std::string manifest_path;
  std::uint64_t master_seed = 2024;
  int samples_per_generator_per_class = 200;

  backbone::BackboneSpec backbone;
  /// D3EB file with precomputed pairs, used when backbone.kind is file.
  std::string embeddings_path;
  imagekit::DisruptionSpec disruption;
  imagekit::AugmentationPolicy augmentation;
  head::HeadKind head_kind = head::HeadKind::self_attention;
  head::BranchMode branch_mode = head::BranchMode::dual;
  head::TrainConfig train;

  std::uint64_t seed = 0;
  std::uint64_t resample_seed = 0;
  std::string out_dir = "out";
  /// Checkpoint consumed by eval, robust and occlude (default: out_dir/checkpoints/head.d3ck).
  std::string checkpoint_path;

  int sweep_orders = 3;
  std::vector<int> sweep_sizes{1, 2, 4, 8};
  std::vector<int> patch_sizes{1, 14, 28, 56, 112, 224};
  std::vector<double> blur_sigmas = metrics::kDefaultBlurSigmas;
  std::vector<int> jpeg_qualities = metrics::kDefaultJpegQualities;
  OcclusionSettings occlusion;
  /// synth: also write every image as PNG next to the manifest.
  bool write_images = false;

  ExperimentConfig();
  void validate() const;
};

/// Strict parser: unknown keys and wrong types are InvalidInput.
ExperimentConfig parse_config(const std::string& json_text);
ExperimentConfig load_config(const std::filesystem::path& path);
/// Canonical JSON with every field spelled out.
std::string config_to_json(const ExperimentConfig& cfg);
/// FNV-1a of the canonical JSON, ignoring the experiment kind and output locations.
std::string config_hash(const ExperimentConfig& cfg);

synthbench::Manifest resolve_manifest(const ExperimentConfig& cfg);

/// One realization of the disrupted branch: which disruption, driven by which seed.
struct View {
  imagekit::DisruptionSpec disruption;
  std::uint64_t seed = 0;
  std::uint64_t hash() const;
};

/// Materializes images and caches embeddings for every (record, epoch, degradation, view)
/// requested. Augmentation streams depend on the benchmark master seed, the sample and
/// the epoch only, so e_o is shared by every run and every disruption variant. Evaluation
/// disruptions depend on the master seed and the sample, so test views are shared by all seeds.
class Workbench {
 public:
  Workbench(synthbench::Manifest manifest, const ExperimentConfig& cfg);
  ~Workbench();
  Workbench(const Workbench&) = delete;
  Workbench& operator=(const Workbench&) = delete;

  const synthbench::Manifest& manifest() const { return manifest_; }
  const backbone::ToyBackbone& backbone() const;
  bool has_images() const { return backbone_ != nullptr; }
  std::uint64_t backbone_hash() const;

  /// Indices of records of the given generators and split, in manifest order.
  std::vector<std::size_t> records(const std::vector<std::string>& generators, synthbench::Split split) const;
  /// Test records of every generator outside the benchmark's train subset.
  std::vector<std::size_t> ood_test_records() const;

  /// Memoize materialized images for the workbench lifetime.
  void keep_images(bool on) { keep_images_ = on; }
  Image image(std::size_t record);

  void prepare_train(const std::vector<std::size_t>& records, int epochs, const std::vector<View>& views);
  void prepare_eval(const std::vector<std::size_t>& records, const std::vector<View>& views,
                    const std::vector<std::optional<metrics::Degradation>>& degradations = {std::nullopt});

  backbone::EmbeddingPair train_pair(std::size_t record, int epoch, const View& view);
  backbone::EmbeddingPair eval_pair(std::size_t record, const View& view,
                                    const std::optional<metrics::Degradation>& degradation = std::nullopt);

  std::size_t cached_embeddings() const { return cache_.size(); }

 private:
  struct Key {
    std::uint32_t record;
    std::int32_t epoch;  // -1 on the evaluation path
    std::uint64_t degradation;
    std::uint64_t view;  // 0 for e_o
    auto operator<=>(const Key&) const = default;
  };
  std::uint64_t view_key(const View& v, int epoch) const;
  bool cached(std::size_t record, int epoch, const std::vector<View>& views, std::uint64_t degradation) const;
  void fill(std::size_t record, int epoch, const std::vector<View>& views,
            const std::optional<metrics::Degradation>& degradation, const Image& source);
  backbone::EmbeddingPair assemble(std::size_t record, const Key& original, const Key& disrupted) const;

  synthbench::Manifest manifest_;
  imagekit::AugmentationPolicy augmentation_;
  std::unique_ptr<backbone::ToyBackbone> backbone_;
  std::map<std::string, backbone::EmbeddingPair> file_pairs_;
  std::map<Key, backbone::Embedding> cache_;
  std::map<std::size_t, Image> images_;
  bool keep_images_ = false;
};

struct RunSpec {
  std::string label;
  head::HeadKind head_kind = head::HeadKind::self_attention;
  head::BranchMode branches = head::BranchMode::dual;
  imagekit::DisruptionSpec disruption;
  std::uint64_t seed = 0;
  std::vector<std::string> train_generators;
  /// Generators scored as ID; empty means all train generators.
  std::vector<std::string> id_eval_generators;

  View view() const;
};

struct RunResult {
  RunSpec spec;
  head::TrainResult training;  // params rounded to checkpoint precision
  metrics::EvalReport report;
  std::set<std::string> generators_seen;  // every generator that fed a training batch
};

/// Train one head from scratch and score it on the test split.
RunResult train_and_evaluate(Workbench& wb, const ExperimentConfig& cfg, const RunSpec& spec);

/// Test-split scores for ID (`id_generators`) and all OOD generators.
std::vector<metrics::ScoredSample> score_test(Workbench& wb, const head::HeadParams<double>& params,
                                              const View& view, const std::vector<std::string>& id_generators,
                                              const std::optional<metrics::Degradation>& degradation = std::nullopt);

RunSpec default_run(const Workbench& wb, const ExperimentConfig& cfg);
/// fc_only head on e_o alone, all else as `default_run`.
RunSpec baseline_run(const Workbench& wb, const ExperimentConfig& cfg);

struct SweepResult {
  std::vector<std::vector<std::string>> orders;
  std::vector<int> sizes;
  std::vector<std::vector<RunResult>> runs;  // [order][size]
  std::vector<double> id_curve, ood_curve;   // mean over orders per size
};
SweepResult run_scale_sweep(Workbench& wb, const ExperimentConfig& cfg);

struct AblationResult {
  ExperimentKind kind;
  std::vector<RunResult> rows;
};
AblationResult run_disruption_ablation(Workbench& wb, const ExperimentConfig& cfg);
AblationResult run_patch_size_ablation(Workbench& wb, const ExperimentConfig& cfg);
AblationResult run_head_ablation(Workbench& wb, const ExperimentConfig& cfg);
/// Groups 1-6: {fc, SA} x {e_o}, {fc, SA} x {e_o, e_s}, SA x {e_o, e_o}, SA x {e_s, e_s}.
AblationResult run_branch_ablation(Workbench& wb, const ExperimentConfig& cfg);

metrics::RobustnessGrid run_robustness(Workbench& wb, const ExperimentConfig& cfg,
                                       const head::HeadParams<double>& params);

struct OcclusionMap {
  std::string sample_id;
  int rows = 0, cols = 0;
  int window = 0, stride = 0;
  double baseline_probability = 0.0;
  std::vector<double> drop;  // row-major, baseline minus occluded probability

  GrayImage heatmap() const;
};
OcclusionMap occlusion_map(const backbone::ToyBackbone& backbone, const head::HeadParams<double>& params,
                           const Image& img, const View& view, const std::string& sample_id,
                           int window, int stride, std::uint8_t fill);

/// Everything a subcommand writes under its output directory.
struct Artifacts {
  std::string report_json;
  std::map<std::string, std::string> tables;  // file name -> CSV
  std::map<std::string, GrayImage> maps;      // file name -> heatmap
  std::map<std::string, std::pair<head::HeadParams<double>, std::string>> checkpoints;
  std::map<std::string, std::string> files;  // other relative paths -> contents
};

/// Runs the experiment named by cfg.kind.
Artifacts run_experiment(const ExperimentConfig& cfg);
void write_artifacts(const Artifacts& artifacts, const std::filesystem::path& out_dir);

}  // namespace d3::harness
