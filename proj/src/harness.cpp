#include "d3/harness.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "json.hpp"

namespace d3::harness {

using nlohmann::json;

namespace {

const std::map<ExperimentKind, std::string>& kind_names() {
  static const std::map<ExperimentKind, std::string> names{
      {ExperimentKind::synth, "synth"},
      {ExperimentKind::train_eval, "train_eval"},
      {ExperimentKind::eval, "eval"},
      {ExperimentKind::scale_sweep, "scale_sweep"},
      {ExperimentKind::disruption_ablation, "disruption_ablation"},
      {ExperimentKind::patch_size_ablation, "patch_size_ablation"},
      {ExperimentKind::head_ablation, "head_ablation"},
      {ExperimentKind::branch_ablation, "branch_ablation"},
      {ExperimentKind::robustness, "robustness"},
      {ExperimentKind::occlusion, "occlusion"},
      {ExperimentKind::report, "report"},
  };
  return names;
}

std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw InvalidInput("cannot read " + path.string());
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

// ---------------------------------------------------------------------------
// Config JSON

json disruption_to_json(const imagekit::DisruptionSpec& d) {
  return {{"kind", imagekit::to_string(d.kind)},
          {"patch_size", d.patch_size},
          {"rotation_range_deg", d.rotation_range_deg}};
}

// Reads `key` into `out` when present; wrong types surface as InvalidInput.
template <typename T>
void take(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw InvalidInput(std::string("config field '") + key + "' has the wrong type");
  }
}

void reject_unknown(const json& j, std::initializer_list<const char*> known, const std::string& where) {
  if (!j.is_object()) throw InvalidInput("config section '" + where + "' must be an object");
  for (const auto& [k, _] : j.items()) {
    if (std::none_of(known.begin(), known.end(), [&](const char* n) { return k == n; }))
      throw InvalidInput("unknown config key '" + (where.empty() ? k : where + "." + k) + "'");
  }
}

imagekit::DisruptionSpec disruption_from_json(const json& j, imagekit::DisruptionSpec d) {
  reject_unknown(j, {"kind", "patch_size", "rotation_range_deg"}, "disruption");
  std::string kind = imagekit::to_string(d.kind);
  take(j, "kind", kind);
  d.kind = imagekit::disruption_from_string(kind);
  take(j, "patch_size", d.patch_size);
  take(j, "rotation_range_deg", d.rotation_range_deg);
  return d;
}

json config_json(const ExperimentConfig& c) {
  const auto& a = c.augmentation;
  const auto& b = c.backbone;
  const auto& t = c.train;
  return {
      {"experiment", to_string(c.kind)},
      {"manifest_path", c.manifest_path},
      {"benchmark", {{"master_seed", c.master_seed}, {"samples_per_generator_per_class", c.samples_per_generator_per_class}}},
      {"backbone",
       {{"kind", b.kind == backbone::BackboneKind::toy ? "toy" : "file"},
        {"toy_patch_size", b.toy_patch_size},
        {"out_dim", b.out_dim},
        {"weights_seed", b.weights_seed},
        {"highpass_gain", b.highpass_gain},
        {"position_scale", b.position_scale},
        {"hflip_invariant", b.hflip_invariant},
        {"embeddings_path", c.embeddings_path}}},
      {"disruption", disruption_to_json(c.disruption)},
      {"augmentation",
       {{"blur_prob", a.blur_prob},
        {"blur_sigma_range", a.blur_sigma_range},
        {"jpeg_prob", a.jpeg_prob},
        {"jpeg_quality_range", a.jpeg_quality_range},
        {"resize_to", a.resize_to},
        {"crop_to", a.crop_to},
        {"crop_mode", a.crop_mode == imagekit::CropMode::random ? "random" : "center"}}},
      {"head", {{"kind", head::to_string(c.head_kind)}, {"branches", head::to_string(c.branch_mode)}}},
      {"train",
       {{"learning_rate", t.adam.learning_rate},
        {"weight_decay", t.adam.weight_decay},
        {"batch_size", t.batch_size},
        {"epochs", t.epochs},
        {"adam_beta1", t.adam.beta1},
        {"adam_beta2", t.adam.beta2},
        {"adam_eps", t.adam.epsilon}}},
      {"seed", c.seed},
      {"resample_seed", c.resample_seed},
      {"out_dir", c.out_dir},
      {"checkpoint_path", c.checkpoint_path},
      {"scale_sweep", {{"orders", c.sweep_orders}, {"sizes", c.sweep_sizes}}},
      {"patch_sizes", c.patch_sizes},
      {"robustness", {{"blur_sigmas", c.blur_sigmas}, {"jpeg_qualities", c.jpeg_qualities}}},
      {"occlusion",
       {{"window", c.occlusion.window},
        {"stride", c.occlusion.stride},
        {"fill", c.occlusion.fill},
        {"samples", c.occlusion.samples},
        {"generator_id", c.occlusion.generator_id}}},
      {"write_images", c.write_images},
  };
}

json provenance(const ExperimentConfig& cfg) {
  return {{"config_hash", config_hash(cfg)}, {"seed", cfg.seed}, {"code_version", kCodeVersion}};
}

}  // namespace

std::string to_string(ExperimentKind kind) { return kind_names().at(kind); }

ExperimentKind experiment_from_string(const std::string& s) {
  for (const auto& [k, n] : kind_names())
    if (n == s) return k;
  throw InvalidInput("unknown experiment kind: " + s);
}

ExperimentConfig::ExperimentConfig() {
  train.batch_size = 64;
  train.adam.learning_rate = 1e-3;
  // Synthetic images are already 224 px; upscaling to 256 moves the planted frequencies.
  augmentation.resize_to = 224;
}

void ExperimentConfig::validate() const {
  backbone.validate();
  disruption.validate();
  augmentation.validate();
  train.validate();
  if (manifest_path.empty() && samples_per_generator_per_class < 2)
    throw InvalidInput("samples_per_generator_per_class must be >= 2");
  if (backbone.kind == backbone::BackboneKind::file && embeddings_path.empty())
    throw InvalidInput("backbone kind 'file' requires backbone.embeddings_path");
  if (sweep_orders < 1) throw InvalidInput("scale_sweep.orders must be >= 1");
  if (sweep_sizes.empty()) throw InvalidInput("scale_sweep.sizes must not be empty");
  for (int s : sweep_sizes)
    if (s < 1) throw InvalidInput("scale_sweep.sizes entries must be >= 1");
  for (int p : patch_sizes)
    if (p < 1) throw InvalidInput("patch sizes must be >= 1");
  for (double s : blur_sigmas)
    if (!(s >= 0)) throw InvalidInput("blur sigmas must be >= 0");
  for (int q : jpeg_qualities)
    if (q < 1 || q > 100) throw InvalidInput("jpeg qualities must lie in [1, 100]");
  if (occlusion.window < 1 || occlusion.stride < 1) throw InvalidInput("occlusion window and stride must be >= 1");
  if (occlusion.fill < 0 || occlusion.fill > 255) throw InvalidInput("occlusion fill must lie in [0, 255]");
  if (occlusion.samples < 1) throw InvalidInput("occlusion.samples must be >= 1");
  if (out_dir.empty()) throw InvalidInput("out_dir must not be empty");
}

ExperimentConfig parse_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw InvalidInput(std::string("config is not valid JSON: ") + e.what());
  }
  reject_unknown(j,
                 {"experiment", "manifest_path", "benchmark", "backbone", "disruption", "augmentation", "head",
                  "train", "seed", "resample_seed", "out_dir", "checkpoint_path", "scale_sweep", "patch_sizes",
                  "robustness", "occlusion", "write_images"},
                 "");
  ExperimentConfig c;
  if (j.contains("experiment")) c.kind = experiment_from_string(j["experiment"].get<std::string>());
  take(j, "manifest_path", c.manifest_path);
  if (j.contains("benchmark")) {
    const auto& b = j["benchmark"];
    reject_unknown(b, {"master_seed", "samples_per_generator_per_class"}, "benchmark");
    take(b, "master_seed", c.master_seed);
    take(b, "samples_per_generator_per_class", c.samples_per_generator_per_class);
  }
  if (j.contains("backbone")) {
    const auto& b = j["backbone"];
    reject_unknown(b,
                   {"kind", "toy_patch_size", "out_dim", "weights_seed", "highpass_gain", "position_scale",
                    "hflip_invariant", "embeddings_path"},
                   "backbone");
    std::string kind = "toy";
    take(b, "kind", kind);
    if (kind != "toy" && kind != "file") throw InvalidInput("backbone.kind must be 'toy' or 'file'");
    c.backbone.kind = kind == "toy" ? backbone::BackboneKind::toy : backbone::BackboneKind::file;
    take(b, "toy_patch_size", c.backbone.toy_patch_size);
    take(b, "out_dim", c.backbone.out_dim);
    take(b, "weights_seed", c.backbone.weights_seed);
    take(b, "highpass_gain", c.backbone.highpass_gain);
    take(b, "position_scale", c.backbone.position_scale);
    take(b, "hflip_invariant", c.backbone.hflip_invariant);
    take(b, "embeddings_path", c.embeddings_path);
  }
  if (j.contains("disruption")) c.disruption = disruption_from_json(j["disruption"], c.disruption);
  if (j.contains("augmentation")) {
    const auto& a = j["augmentation"];
    reject_unknown(a,
                   {"blur_prob", "blur_sigma_range", "jpeg_prob", "jpeg_quality_range", "resize_to", "crop_to",
                    "crop_mode"},
                   "augmentation");
    take(a, "blur_prob", c.augmentation.blur_prob);
    take(a, "blur_sigma_range", c.augmentation.blur_sigma_range);
    take(a, "jpeg_prob", c.augmentation.jpeg_prob);
    take(a, "jpeg_quality_range", c.augmentation.jpeg_quality_range);
    take(a, "resize_to", c.augmentation.resize_to);
    take(a, "crop_to", c.augmentation.crop_to);
    std::string mode = "random";
    take(a, "crop_mode", mode);
    if (mode != "random" && mode != "center") throw InvalidInput("augmentation.crop_mode must be random or center");
    c.augmentation.crop_mode = mode == "random" ? imagekit::CropMode::random : imagekit::CropMode::center;
  }
  if (j.contains("head")) {
    const auto& h = j["head"];
    reject_unknown(h, {"kind", "branches"}, "head");
    if (h.contains("kind")) c.head_kind = head::head_kind_from_string(h["kind"].get<std::string>());
    if (h.contains("branches")) c.branch_mode = head::branch_mode_from_string(h["branches"].get<std::string>());
  }
  if (j.contains("train")) {
    const auto& t = j["train"];
    reject_unknown(t, {"learning_rate", "weight_decay", "batch_size", "epochs", "adam_beta1", "adam_beta2", "adam_eps"},
                   "train");
    take(t, "learning_rate", c.train.adam.learning_rate);
    take(t, "weight_decay", c.train.adam.weight_decay);
    take(t, "batch_size", c.train.batch_size);
    take(t, "epochs", c.train.epochs);
    take(t, "adam_beta1", c.train.adam.beta1);
    take(t, "adam_beta2", c.train.adam.beta2);
    take(t, "adam_eps", c.train.adam.epsilon);
  }
  take(j, "seed", c.seed);
  take(j, "resample_seed", c.resample_seed);
  take(j, "out_dir", c.out_dir);
  take(j, "checkpoint_path", c.checkpoint_path);
  if (j.contains("scale_sweep")) {
    const auto& s = j["scale_sweep"];
    reject_unknown(s, {"orders", "sizes"}, "scale_sweep");
    take(s, "orders", c.sweep_orders);
    take(s, "sizes", c.sweep_sizes);
  }
  take(j, "patch_sizes", c.patch_sizes);
  if (j.contains("robustness")) {
    const auto& r = j["robustness"];
    reject_unknown(r, {"blur_sigmas", "jpeg_qualities"}, "robustness");
    take(r, "blur_sigmas", c.blur_sigmas);
    take(r, "jpeg_qualities", c.jpeg_qualities);
  }
  if (j.contains("occlusion")) {
    const auto& o = j["occlusion"];
    reject_unknown(o, {"window", "stride", "fill", "samples", "generator_id"}, "occlusion");
    take(o, "window", c.occlusion.window);
    take(o, "stride", c.occlusion.stride);
    take(o, "fill", c.occlusion.fill);
    take(o, "samples", c.occlusion.samples);
    take(o, "generator_id", c.occlusion.generator_id);
  }
  take(j, "write_images", c.write_images);
  try {
    c.validate();
  } catch (const std::out_of_range& e) {
    throw InvalidInput(e.what());
  }
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) { return parse_config(read_text(path)); }

std::string config_to_json(const ExperimentConfig& cfg) { return config_json(cfg).dump(2); }

std::string config_hash(const ExperimentConfig& cfg) {
  json j = config_json(cfg);
  j.erase("experiment");
  j.erase("out_dir");
  j.erase("checkpoint_path");
  return hex64(fnv1a(j.dump()));
}

synthbench::Manifest resolve_manifest(const ExperimentConfig& cfg) {
  synthbench::Manifest m;
  if (!cfg.manifest_path.empty()) {
    m = synthbench::load_manifest(cfg.manifest_path);
  } else {
    m = synthbench::build_manifest(
        synthbench::default_benchmark(cfg.master_seed, cfg.samples_per_generator_per_class));
  }
  m.validate();
  return m;
}

// ---------------------------------------------------------------------------
// Workbench

std::uint64_t View::hash() const {
  if (disruption.kind == imagekit::DisruptionKind::identity) return 0;
  return fnv1a(disruption.key() + "#" + std::to_string(seed)) | 1u;
}

namespace {

std::uint64_t degradation_hash(const std::optional<metrics::Degradation>& d) {
  if (!d) return 0;
  if (d->kind == metrics::Degradation::Kind::blur && d->value == 0.0) return 0;
  std::ostringstream os;
  os.precision(17);
  os << (d->kind == metrics::Degradation::Kind::blur ? "blur/" : "jpeg/") << d->value;
  return fnv1a(os.str()) | 1u;
}

Image degrade(const Image& img, const std::optional<metrics::Degradation>& d) {
  if (!d) return img;
  if (d->kind == metrics::Degradation::Kind::blur) return imagekit::gaussian_blur(img, d->value);
  return imagekit::jpeg_roundtrip(img, static_cast<int>(d->value));
}

}  // namespace

Workbench::Workbench(synthbench::Manifest manifest, const ExperimentConfig& cfg)
    : manifest_(std::move(manifest)), augmentation_(cfg.augmentation) {
  if (cfg.backbone.kind == backbone::BackboneKind::toy) {
    backbone_ = std::make_unique<backbone::ToyBackbone>(cfg.backbone);
  } else {
    for (auto& p : backbone::load_embeddings(cfg.embeddings_path)) {
      if (p.original.size() != cfg.backbone.out_dim)
        throw InvalidInput("embedding file dimension " + std::to_string(p.original.size()) +
                           " does not match backbone.out_dim");
      const std::string id = p.sample_id;
      file_pairs_.emplace(id, std::move(p));
    }
    for (const auto& r : manifest_.records)
      if (!file_pairs_.count(r.sample_id)) throw InvalidInput("embedding file lacks sample " + r.sample_id);
  }
}

Workbench::~Workbench() = default;

const backbone::ToyBackbone& Workbench::backbone() const {
  if (!backbone_) throw InvalidInput("this experiment needs images; backbone kind 'file' has none");
  return *backbone_;
}

std::uint64_t Workbench::backbone_hash() const { return backbone_ ? backbone_->weights_hash() : 0; }

std::vector<std::size_t> Workbench::records(const std::vector<std::string>& generators,
                                            synthbench::Split split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < manifest_.records.size(); ++i) {
    const auto& r = manifest_.records[i];
    if (r.split == split && std::find(generators.begin(), generators.end(), r.generator_id) != generators.end())
      out.push_back(i);
  }
  return out;
}

std::vector<std::size_t> Workbench::ood_test_records() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < manifest_.records.size(); ++i) {
    const auto& r = manifest_.records[i];
    if (r.split == synthbench::Split::test && !manifest_.benchmark.is_train_generator(r.generator_id))
      out.push_back(i);
  }
  return out;
}

Image Workbench::image(std::size_t record) {
  if (auto it = images_.find(record); it != images_.end()) return it->second;
  Image img = synthbench::materialize(manifest_, manifest_.records.at(record));
  if (keep_images_) images_.emplace(record, img);
  return img;
}

// Test-time disruptions are fixed by the benchmark, so every training seed sees the same eval views.
std::uint64_t Workbench::view_key(const View& v, int epoch) const {
  return epoch >= 0 ? v.hash() : View{v.disruption, manifest_.benchmark.master_seed}.hash();
}

bool Workbench::cached(std::size_t record, int epoch, const std::vector<View>& views,
                       std::uint64_t degradation) const {
  const auto r32 = static_cast<std::uint32_t>(record);
  if (!cache_.count({r32, epoch, degradation, 0})) return false;
  for (const auto& v : views)
    if (!cache_.count({r32, epoch, degradation, view_key(v, epoch)})) return false;
  return true;
}

void Workbench::fill(std::size_t record, int epoch, const std::vector<View>& views,
                     const std::optional<metrics::Degradation>& degradation, const Image& source) {
  const auto& rec = manifest_.records.at(record);
  const auto r32 = static_cast<std::uint32_t>(record);
  const std::uint64_t dh = epoch < 0 ? degradation_hash(degradation) : 0;
  const auto& bb = backbone();
  Image x;
  if (epoch >= 0) {
    Rng aug = derive_stream(manifest_.benchmark.master_seed, "aug/" + rec.sample_id + "/" + std::to_string(epoch));
    x = imagekit::apply_augmentation(source, augmentation_, aug);
  } else {
    x = imagekit::eval_resize(dh == 0 ? source : degrade(source, degradation), augmentation_);
  }
  auto [it, fresh] = cache_.try_emplace(Key{r32, epoch, dh, 0});
  if (fresh) it->second = bb.embed(x);
  const backbone::Embedding e_o = it->second;
  for (const auto& v : views) {
    const Key ks{r32, epoch, dh, view_key(v, epoch)};
    if (ks.view == 0 || cache_.count(ks)) continue;
    Rng rng = epoch >= 0 ? derive_stream(v.seed, "disrupt/" + rec.sample_id + "/" + std::to_string(epoch))
                         : derive_stream(manifest_.benchmark.master_seed, "eval-disrupt/" + rec.sample_id);
    const Image d = imagekit::apply_disruption(x, v.disruption, rng);
    cache_.emplace(ks, d == x ? e_o : bb.embed(d));
  }
}

void Workbench::prepare_train(const std::vector<std::size_t>& records, int epochs, const std::vector<View>& views) {
  if (!backbone_) return;
  for (auto r : records) {
    std::optional<Image> src;
    for (int e = 0; e < epochs; ++e) {
      if (cached(r, e, views, 0)) continue;
      if (!src) src = image(r);
      fill(r, e, views, std::nullopt, *src);
    }
  }
}

void Workbench::prepare_eval(const std::vector<std::size_t>& records, const std::vector<View>& views,
                             const std::vector<std::optional<metrics::Degradation>>& degradations) {
  if (!backbone_) return;
  for (auto r : records) {
    std::optional<Image> src;
    for (const auto& d : degradations) {
      if (cached(r, -1, views, degradation_hash(d))) continue;
      if (!src) src = image(r);
      fill(r, -1, views, d, *src);
    }
  }
}

backbone::EmbeddingPair Workbench::assemble(std::size_t record, const Key& original, const Key& disrupted) const {
  const auto& rec = manifest_.records[record];
  backbone::EmbeddingPair p;
  p.sample_id = rec.sample_id;
  p.generator_id = rec.generator_id;
  p.label = rec.label;
  p.original = cache_.at(original);
  p.disrupted = disrupted.view == 0 ? p.original : cache_.at(disrupted);
  return p;
}

backbone::EmbeddingPair Workbench::train_pair(std::size_t record, int epoch, const View& view) {
  if (!backbone_) return file_pairs_.at(manifest_.records.at(record).sample_id);
  if (!cached(record, epoch, {view}, 0)) fill(record, epoch, {view}, std::nullopt, image(record));
  const auto r32 = static_cast<std::uint32_t>(record);
  return assemble(record, {r32, epoch, 0, 0}, {r32, epoch, 0, view.hash()});
}

backbone::EmbeddingPair Workbench::eval_pair(std::size_t record, const View& view,
                                             const std::optional<metrics::Degradation>& degradation) {
  if (!backbone_) {
    if (degradation_hash(degradation) != 0) throw InvalidInput("degradations need images; backbone kind 'file' has none");
    return file_pairs_.at(manifest_.records.at(record).sample_id);
  }
  prepare_eval({record}, {view}, {degradation});
  const auto r32 = static_cast<std::uint32_t>(record);
  const auto dh = degradation_hash(degradation);
  return assemble(record, {r32, -1, dh, 0}, {r32, -1, dh, view_key(view, -1)});
}

// ---------------------------------------------------------------------------
// Runs

View RunSpec::view() const {
  View v{disruption, seed};
  if (branches == head::BranchMode::original_only || branches == head::BranchMode::original_original)
    v.disruption.kind = imagekit::DisruptionKind::identity;
  return v;
}

std::vector<metrics::ScoredSample> score_test(Workbench& wb, const head::HeadParams<double>& params,
                                              const View& view, const std::vector<std::string>& id_generators,
                                              const std::optional<metrics::Degradation>& degradation) {
  std::vector<std::size_t> recs = wb.records(id_generators, synthbench::Split::test);
  const auto ood = wb.ood_test_records();
  recs.insert(recs.end(), ood.begin(), ood.end());
  std::sort(recs.begin(), recs.end());
  wb.prepare_eval(recs, {view}, {degradation});
  std::vector<metrics::ScoredSample> out;
  out.reserve(recs.size());
  head::ForwardCache<double> cache;
  for (auto r : recs) {
    const auto pair = wb.eval_pair(r, view, degradation);
    const auto& rec = wb.manifest().records[r];
    const double p = head::forward(params, head::make_tokens<double>(pair, params.branches), cache).probability;
    const bool is_id = wb.manifest().benchmark.is_train_generator(rec.generator_id);
    out.push_back({p, static_cast<int>(rec.label), rec.generator_id, rec.architecture_group,
                   is_id ? metrics::Domain::id : metrics::Domain::ood});
  }
  return out;
}

RunResult train_and_evaluate(Workbench& wb, const ExperimentConfig& cfg, const RunSpec& spec) {
  if (spec.train_generators.empty()) throw InvalidInput("a run needs at least one train generator");
  const auto& bench = wb.manifest().benchmark;
  for (const auto& g : spec.train_generators)
    if (!bench.is_train_generator(g)) throw InvalidInput("generator " + g + " is not in the train subset");

  const View view = spec.view();
  const auto train_recs = wb.records(spec.train_generators, synthbench::Split::train);
  const auto val_recs = wb.records(spec.train_generators, synthbench::Split::val);
  wb.prepare_train(train_recs, cfg.train.epochs, {view});
  wb.prepare_eval(val_recs, {view});

  RunResult result;
  result.spec = spec;
  head::TrainingSet data;
  for (auto r : train_recs) data.train_labels.push_back(wb.manifest().records[r].label);
  data.train_pair = [&](std::size_t i, int epoch) {
    auto pair = wb.train_pair(train_recs[i], epoch, view);
    result.generators_seen.insert(pair.generator_id);
    return pair;
  };
  for (auto r : val_recs) {
    data.val_pairs.push_back(wb.eval_pair(r, view));
    data.val_groups.push_back(wb.manifest().records[r].architecture_group);
  }
  head::TrainConfig tc = cfg.train;
  tc.seed = spec.seed;
  result.training = head::train(spec.head_kind, spec.branches, wb.backbone().dim(), data, tc);
  result.training.params = head::round_to_storage(result.training.params);
  for (const auto& g : result.generators_seen)
    if (!bench.is_train_generator(g))
      throw std::runtime_error("out-of-domain generator " + g + " leaked into training");

  const auto& id_gens = spec.id_eval_generators.empty() ? spec.train_generators : spec.id_eval_generators;
  const auto scored = score_test(wb, result.training.params, view, id_gens);
  result.report = metrics::evaluate(scored, cfg.resample_seed);
  return result;
}

RunSpec default_run(const Workbench& wb, const ExperimentConfig& cfg) {
  RunSpec s;
  s.label = head::to_string(cfg.head_kind) + "/" + head::to_string(cfg.branch_mode);
  s.head_kind = cfg.head_kind;
  s.branches = cfg.branch_mode;
  s.disruption = cfg.disruption;
  s.seed = cfg.seed;
  s.train_generators = wb.manifest().benchmark.train_subset;
  return s;
}

RunSpec baseline_run(const Workbench& wb, const ExperimentConfig& cfg) {
  RunSpec s = default_run(wb, cfg);
  s.label = "baseline";
  s.head_kind = head::HeadKind::fc_only;
  s.branches = head::BranchMode::original_only;
  return s;
}

namespace {

// Embeds every view of every run in one pass so each image is synthesized once.
void prepare_runs(Workbench& wb, const ExperimentConfig& cfg, const std::vector<RunSpec>& runs) {
  std::vector<View> views;
  std::set<std::uint64_t> seen;
  std::set<std::string> gens;
  for (const auto& r : runs) {
    if (seen.insert(r.view().hash()).second) views.push_back(r.view());
    gens.insert(r.train_generators.begin(), r.train_generators.end());
    gens.insert(r.id_eval_generators.begin(), r.id_eval_generators.end());
  }
  const std::vector<std::string> gv(gens.begin(), gens.end());
  wb.prepare_train(wb.records(gv, synthbench::Split::train), cfg.train.epochs, views);
  auto eval_recs = wb.records(gv, synthbench::Split::val);
  const auto test = wb.records(gv, synthbench::Split::test);
  const auto ood = wb.ood_test_records();
  eval_recs.insert(eval_recs.end(), test.begin(), test.end());
  eval_recs.insert(eval_recs.end(), ood.begin(), ood.end());
  std::sort(eval_recs.begin(), eval_recs.end());
  wb.prepare_eval(eval_recs, views);
}

AblationResult run_all(Workbench& wb, const ExperimentConfig& cfg, ExperimentKind kind,
                       const std::vector<RunSpec>& runs) {
  prepare_runs(wb, cfg, runs);
  AblationResult out{kind, {}};
  for (const auto& r : runs) out.rows.push_back(train_and_evaluate(wb, cfg, r));
  return out;
}

}  // namespace

SweepResult run_scale_sweep(Workbench& wb, const ExperimentConfig& cfg) {
  const auto& pool = wb.manifest().benchmark.train_subset;
  const int largest = *std::max_element(cfg.sweep_sizes.begin(), cfg.sweep_sizes.end());
  if (static_cast<int>(pool.size()) < largest)
    throw InvalidInput("scale sweep needs " + std::to_string(largest) + " train generators, manifest has " +
                       std::to_string(pool.size()));
  SweepResult sweep;
  sweep.sizes = cfg.sweep_sizes;
  std::vector<RunSpec> specs;
  for (int o = 0; o < cfg.sweep_orders; ++o) {
    std::vector<std::string> order = pool;
    Rng rng = derive_stream(cfg.seed, "sweep-order/" + std::to_string(o));
    std::shuffle(order.begin(), order.end(), rng);
    sweep.orders.push_back(order);
    for (int size : cfg.sweep_sizes) {
      RunSpec s = default_run(wb, cfg);
      s.label = "order" + std::to_string(o) + "/k" + std::to_string(size);
      s.train_generators.assign(order.begin(), order.begin() + size);
      s.id_eval_generators = {order.front()};
      specs.push_back(s);
    }
  }
  prepare_runs(wb, cfg, specs);
  std::size_t next = 0;
  sweep.runs.resize(cfg.sweep_orders);
  for (int o = 0; o < cfg.sweep_orders; ++o)
    for (std::size_t k = 0; k < cfg.sweep_sizes.size(); ++k)
      sweep.runs[o].push_back(train_and_evaluate(wb, cfg, specs[next++]));
  for (std::size_t k = 0; k < cfg.sweep_sizes.size(); ++k) {
    double id = 0.0, ood = 0.0;
    for (int o = 0; o < cfg.sweep_orders; ++o) {
      id += sweep.runs[o][k].report.accuracy.id_mean.value_or(0.0);
      ood += sweep.runs[o][k].report.accuracy.ood_mean.value_or(0.0);
    }
    sweep.id_curve.push_back(id / cfg.sweep_orders);
    sweep.ood_curve.push_back(ood / cfg.sweep_orders);
  }
  return sweep;
}

AblationResult run_disruption_ablation(Workbench& wb, const ExperimentConfig& cfg) {
  std::vector<RunSpec> runs;
  for (auto kind : {imagekit::DisruptionKind::horizontal_flip, imagekit::DisruptionKind::vertical_flip,
                    imagekit::DisruptionKind::random_rotation, imagekit::DisruptionKind::patch_shuffle}) {
    RunSpec s = default_run(wb, cfg);
    s.branches = head::BranchMode::dual;
    s.disruption.kind = kind;
    s.label = imagekit::to_string(kind);
    runs.push_back(s);
  }
  return run_all(wb, cfg, ExperimentKind::disruption_ablation, runs);
}

AblationResult run_patch_size_ablation(Workbench& wb, const ExperimentConfig& cfg) {
  const int size = wb.manifest().benchmark.image_size;
  std::vector<RunSpec> runs;
  for (int p : cfg.patch_sizes) {
    if (size % p != 0)
      throw InvalidInput("patch size " + std::to_string(p) + " does not divide image size " + std::to_string(size));
    RunSpec s = default_run(wb, cfg);
    s.branches = head::BranchMode::dual;
    s.disruption.kind = imagekit::DisruptionKind::patch_shuffle;
    s.disruption.patch_size = p;
    s.label = "patch" + std::to_string(p);
    runs.push_back(s);
  }
  return run_all(wb, cfg, ExperimentKind::patch_size_ablation, runs);
}

AblationResult run_head_ablation(Workbench& wb, const ExperimentConfig& cfg) {
  std::vector<RunSpec> runs;
  for (auto kind : {head::HeadKind::fc_only, head::HeadKind::mlp, head::HeadKind::self_attention,
                    head::HeadKind::transformer2}) {
    RunSpec s = default_run(wb, cfg);
    s.head_kind = kind;
    s.branches = head::BranchMode::dual;
    s.label = head::to_string(kind);
    runs.push_back(s);
  }
  return run_all(wb, cfg, ExperimentKind::head_ablation, runs);
}

AblationResult run_branch_ablation(Workbench& wb, const ExperimentConfig& cfg) {
  using head::BranchMode;
  using head::HeadKind;
  const std::vector<std::pair<HeadKind, BranchMode>> groups{
      {HeadKind::fc_only, BranchMode::original_only},        {HeadKind::self_attention, BranchMode::original_only},
      {HeadKind::fc_only, BranchMode::dual},                 {HeadKind::self_attention, BranchMode::dual},
      {HeadKind::self_attention, BranchMode::original_original}, {HeadKind::self_attention, BranchMode::shuffled_shuffled},
  };
  std::vector<RunSpec> runs;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    RunSpec s = default_run(wb, cfg);
    s.head_kind = groups[g].first;
    s.branches = groups[g].second;
    s.label = "group" + std::to_string(g + 1);
    runs.push_back(s);
  }
  return run_all(wb, cfg, ExperimentKind::branch_ablation, runs);
}

metrics::RobustnessGrid run_robustness(Workbench& wb, const ExperimentConfig& cfg,
                                       const head::HeadParams<double>& params) {
  RunSpec spec = default_run(wb, cfg);
  spec.head_kind = params.kind;
  spec.branches = params.branches;
  const View view = spec.view();
  const auto& ids = spec.train_generators;

  std::vector<std::optional<metrics::Degradation>> all{std::nullopt};
  for (double s : cfg.blur_sigmas)
    if (s != 0.0) all.push_back(metrics::Degradation{metrics::Degradation::Kind::blur, s});
  for (int q : cfg.jpeg_qualities)
    all.push_back(metrics::Degradation{metrics::Degradation::Kind::jpeg, static_cast<double>(q)});
  auto recs = wb.records(ids, synthbench::Split::test);
  const auto ood = wb.ood_test_records();
  recs.insert(recs.end(), ood.begin(), ood.end());
  std::sort(recs.begin(), recs.end());
  wb.prepare_eval(recs, {view}, all);

  return metrics::robustness_grid(
      [&](const std::optional<metrics::Degradation>& d) {
        return *metrics::mean_accuracy(score_test(wb, params, view, ids, d)).total_mean;
      },
      cfg.blur_sigmas, cfg.jpeg_qualities);
}

// ---------------------------------------------------------------------------
// Occlusion

GrayImage OcclusionMap::heatmap() const {
  GrayImage g{cols, rows, std::vector<std::uint8_t>(drop.size(), 0)};
  if (drop.empty()) return g;
  const auto [lo, hi] = std::minmax_element(drop.begin(), drop.end());
  if (*hi > *lo)
    for (std::size_t i = 0; i < drop.size(); ++i) g.data[i] = quantize(255.0 * (drop[i] - *lo) / (*hi - *lo));
  return g;
}

OcclusionMap occlusion_map(const backbone::ToyBackbone& backbone, const head::HeadParams<double>& params,
                           const Image& img, const View& view, const std::string& sample_id, int window,
                           int stride, std::uint8_t fill) {
  if (window > img.width() || window > img.height()) throw InvalidInput("occlusion window exceeds the image");
  if (window < 1 || stride < 1) throw InvalidInput("occlusion window and stride must be >= 1");
  auto probability = [&](const Image& x) {
    Rng rng = derive_stream(view.seed, "eval-disrupt/" + sample_id);
    auto pair = backbone::embed_pair(backbone, x, view.disruption, rng);
    return head::forward(params, pair).probability;
  };
  OcclusionMap m;
  m.sample_id = sample_id;
  m.window = window;
  m.stride = stride;
  m.cols = (img.width() - window) / stride + 1;
  m.rows = (img.height() - window) / stride + 1;
  m.baseline_probability = probability(img);
  for (int r = 0; r < m.rows; ++r)
    for (int c = 0; c < m.cols; ++c)
      m.drop.push_back(m.baseline_probability -
                       probability(imagekit::occlude(img, c * stride, r * stride, window, window, fill)));
  return m;
}

// ---------------------------------------------------------------------------
// Reports

namespace {

json opt(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

json report_json(const metrics::EvalReport& r) {
  return {{"per_generator_accuracy", r.accuracy.per_generator},
          {"merged_generator_accuracy", r.accuracy.merged},
          {"id_mean_acc", opt(r.accuracy.id_mean)},
          {"ood_mean_acc", opt(r.accuracy.ood_mean)},
          {"total_mean_acc", opt(r.accuracy.total_mean)},
          {"id_ap", opt(r.ap.id_ap)},
          {"ood_ap", opt(r.ap.ood_ap)},
          {"total_ap", opt(r.ap.total_ap)},
          {"threshold", r.threshold},
          {"resample_seed", r.resample_seed}};
}

json run_json(const RunResult& r) {
  json log = json::array();
  for (const auto& e : r.training.log)
    log.push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"val_loss", e.val_loss},
                   {"val_mean_acc", e.val_mean_acc}});
  return {{"label", r.spec.label},
          {"head_kind", head::to_string(r.spec.head_kind)},
          {"branches", head::to_string(r.spec.branches)},
          {"disruption", disruption_to_json(r.spec.disruption)},
          {"seed", r.spec.seed},
          {"train_generators", r.spec.train_generators},
          {"id_eval_generators", r.spec.id_eval_generators.empty() ? r.spec.train_generators : r.spec.id_eval_generators},
          {"generators_seen_in_training", r.generators_seen},
          {"best_epoch", r.training.best_epoch},
          {"training_log", log},
          {"eval", report_json(r.report)}};
}

std::string fmt(const std::optional<double>& v) {
  if (!v) return "";
  std::ostringstream os;
  os.precision(17);
  os << *v;
  return os.str();
}

std::string summary_csv(const std::vector<RunResult>& rows) {
  std::ostringstream os;
  os << "label,head_kind,branches,disruption,id_mean_acc,ood_mean_acc,total_mean_acc,id_ap,ood_ap,total_ap\n";
  for (const auto& r : rows) {
    const auto& a = r.report.accuracy;
    const auto& p = r.report.ap;
    os << r.spec.label << "," << head::to_string(r.spec.head_kind) << "," << head::to_string(r.spec.branches) << ","
       << r.spec.disruption.key() << "," << fmt(a.id_mean) << "," << fmt(a.ood_mean) << "," << fmt(a.total_mean)
       << "," << fmt(p.id_ap) << "," << fmt(p.ood_ap) << "," << fmt(p.total_ap) << "\n";
  }
  return os.str();
}

std::string per_generator_csv(const RunResult& r) {
  std::ostringstream os;
  os.precision(17);
  os << "generator_id,accuracy\n";
  for (const auto& [g, a] : r.report.accuracy.per_generator) os << g << "," << a << "\n";
  return os.str();
}

json envelope(const ExperimentConfig& cfg, const Workbench* wb) {
  json j = {{"experiment", to_string(cfg.kind)}, {"provenance", provenance(cfg)}, {"config", config_json(cfg)}};
  j["config"].erase("out_dir");
  j["config"].erase("checkpoint_path");
  if (wb) j["backbone_weights_hash"] = hex64(wb->backbone_hash());
  return j;
}

std::string checkpoint_provenance(const ExperimentConfig& cfg, const RunResult& r) {
  json j = {{"provenance", provenance(cfg)},
            {"run", r.spec.label},
            {"train",
             {{"learning_rate", cfg.train.adam.learning_rate},
              {"weight_decay", cfg.train.adam.weight_decay},
              {"batch_size", cfg.train.batch_size},
              {"epochs", cfg.train.epochs},
              {"adam_beta1", cfg.train.adam.beta1},
              {"adam_beta2", cfg.train.adam.beta2},
              {"adam_eps", cfg.train.adam.epsilon},
              {"seed", r.spec.seed}}},
            {"disruption", disruption_to_json(r.spec.disruption)},
            {"master_seed", cfg.master_seed},
            {"best_epoch", r.training.best_epoch}};
  return j.dump();
}

std::string file_safe(std::string s) {
  for (char& c : s)
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '-' && c != '_' && c != '.') c = '_';
  return s;
}

std::filesystem::path checkpoint_location(const ExperimentConfig& cfg) {
  if (!cfg.checkpoint_path.empty()) return cfg.checkpoint_path;
  return std::filesystem::path(cfg.out_dir) / "checkpoints" / "head.d3ck";
}

head::Checkpoint load_or_train(Workbench& wb, const ExperimentConfig& cfg, json& out, Artifacts& art) {
  const auto path = checkpoint_location(cfg);
  if (std::filesystem::exists(path)) {
    auto ck = head::load_checkpoint(path);
    out["checkpoint"] = {{"source", "loaded"}, {"provenance", json::parse(ck.provenance_json)}};
    return ck;
  }
  if (!cfg.checkpoint_path.empty()) throw InvalidInput("checkpoint not found: " + cfg.checkpoint_path);
  const auto run = train_and_evaluate(wb, cfg, default_run(wb, cfg));
  head::Checkpoint ck{run.training.params, checkpoint_provenance(cfg, run)};
  art.checkpoints["head.d3ck"] = {ck.params, ck.provenance_json};
  out["checkpoint"] = {{"source", "trained"}, {"provenance", json::parse(ck.provenance_json)}};
  return ck;
}

Artifacts synth_artifacts(const ExperimentConfig& cfg) {
  Artifacts art;
  const auto manifest = resolve_manifest(cfg);
  synthbench::Manifest written = manifest;
  if (cfg.write_images) {
    for (auto& r : written.records) {
      const std::string rel = "images/" + file_safe(r.sample_id) + ".png";
      art.files[rel] = "";  // placeholder; the PNG is written below
      r.path = rel;
    }
  }
  art.files["manifest.jsonl"] = synthbench::manifest_to_jsonl(written);
  std::map<std::string, std::array<int, 3>> counts;
  for (const auto& r : manifest.records) counts[r.generator_id][static_cast<int>(r.split)]++;
  std::ostringstream csv;
  csv << "generator_id,train,val,test\n";
  for (const auto& [g, c] : counts) csv << g << "," << c[0] << "," << c[1] << "," << c[2] << "\n";
  art.tables["splits.csv"] = csv.str();
  json j = envelope(cfg, nullptr);
  j["records"] = manifest.records.size();
  j["generators"] = manifest.benchmark.generators.size();
  j["train_subset"] = manifest.benchmark.train_subset;
  j["manifest_sha"] = hex64(fnv1a(art.files["manifest.jsonl"]));
  art.report_json = j.dump(2);
  return art;
}

}  // namespace

Artifacts run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  if (cfg.kind == ExperimentKind::synth) {
    Artifacts art = synth_artifacts(cfg);
    if (cfg.write_images) {
      const auto manifest = resolve_manifest(cfg);
      std::filesystem::create_directories(std::filesystem::path(cfg.out_dir) / "images");
      for (const auto& r : manifest.records) {
        const std::string rel = "images/" + file_safe(r.sample_id) + ".png";
        write_png(synthbench::materialize(manifest, r), std::filesystem::path(cfg.out_dir) / rel);
        art.files.erase(rel);
      }
    }
    return art;
  }
  if (cfg.kind == ExperimentKind::report) {
    Artifacts art;
    json j = envelope(cfg, nullptr);
    json runs = json::object();
    std::ostringstream csv;
    csv << "experiment,report,config_hash\n";
    std::vector<std::filesystem::path> found;
    if (std::filesystem::exists(cfg.out_dir))
      for (const auto& e : std::filesystem::recursive_directory_iterator(cfg.out_dir))
        if (e.path().filename() == "report.json" && e.path().parent_path() != std::filesystem::path(cfg.out_dir))
          found.push_back(e.path());
    std::sort(found.begin(), found.end());
    for (const auto& p : found) {
      const json r = json::parse(read_text(p));
      const auto rel = std::filesystem::relative(p, cfg.out_dir).generic_string();
      runs[rel] = {{"experiment", r.value("experiment", "")}, {"provenance", r.value("provenance", json::object())}};
      if (r.contains("headline")) runs[rel]["headline"] = r["headline"];
      csv << r.value("experiment", "") << "," << rel << ","
          << r.value("provenance", json::object()).value("config_hash", "") << "\n";
    }
    j["reports"] = runs;
    art.tables["reports.csv"] = csv.str();
    art.report_json = j.dump(2);
    return art;
  }

  Workbench wb(resolve_manifest(cfg), cfg);
  Artifacts art;
  json j = envelope(cfg, &wb);

  switch (cfg.kind) {
    case ExperimentKind::train_eval: {
      const auto run = train_and_evaluate(wb, cfg, default_run(wb, cfg));
      j["run"] = run_json(run);
      j["headline"] = {{"id_mean_acc", opt(run.report.accuracy.id_mean)},
                       {"ood_mean_acc", opt(run.report.accuracy.ood_mean)},
                       {"total_mean_acc", opt(run.report.accuracy.total_mean)}};
      art.checkpoints["head.d3ck"] = {run.training.params, checkpoint_provenance(cfg, run)};
      art.tables["summary.csv"] = summary_csv({run});
      art.tables["per_generator.csv"] = per_generator_csv(run);
      break;
    }
    case ExperimentKind::eval: {
      const auto path = checkpoint_location(cfg);
      if (!std::filesystem::exists(path)) throw InvalidInput("checkpoint not found: " + path.string());
      const auto ck = head::load_checkpoint(path);
      const json prov = json::parse(ck.provenance_json);
      RunSpec spec = default_run(wb, cfg);
      spec.head_kind = ck.params.kind;
      spec.branches = ck.params.branches;
      const auto scored = score_test(wb, ck.params, spec.view(), spec.train_generators);
      RunResult r;
      r.spec = spec;
      r.report = metrics::evaluate(scored, cfg.resample_seed);
      j["checkpoint"] = {{"provenance", prov},
                         {"config_hash_matches", prov.at("provenance").at("config_hash") == config_hash(cfg)}};
      j["eval"] = report_json(r.report);
      j["headline"] = {{"id_mean_acc", opt(r.report.accuracy.id_mean)},
                       {"ood_mean_acc", opt(r.report.accuracy.ood_mean)},
                       {"total_mean_acc", opt(r.report.accuracy.total_mean)}};
      art.tables["per_generator.csv"] = per_generator_csv(r);
      break;
    }
    case ExperimentKind::scale_sweep: {
      const auto sweep = run_scale_sweep(wb, cfg);
      json runs = json::array();
      std::ostringstream csv, curve;
      csv.precision(17);
      curve.precision(17);
      csv << "order,size,first_generator,id_mean_acc,ood_mean_acc\n";
      for (std::size_t o = 0; o < sweep.runs.size(); ++o)
        for (std::size_t k = 0; k < sweep.sizes.size(); ++k) {
          const auto& r = sweep.runs[o][k];
          runs.push_back(run_json(r));
          csv << o << "," << sweep.sizes[k] << "," << sweep.orders[o].front() << ","
              << fmt(r.report.accuracy.id_mean) << "," << fmt(r.report.accuracy.ood_mean) << "\n";
        }
      curve << "size,id_mean_acc,ood_mean_acc\n";
      for (std::size_t k = 0; k < sweep.sizes.size(); ++k)
        curve << sweep.sizes[k] << "," << sweep.id_curve[k] << "," << sweep.ood_curve[k] << "\n";
      j["orders"] = sweep.orders;
      j["sizes"] = sweep.sizes;
      j["runs"] = runs;
      j["id_curve"] = sweep.id_curve;
      j["ood_curve"] = sweep.ood_curve;
      j["headline"] = {{"id_curve", sweep.id_curve}, {"ood_curve", sweep.ood_curve}};
      art.tables["scale_sweep_runs.csv"] = csv.str();
      art.tables["scale_sweep_curve.csv"] = curve.str();
      break;
    }
    case ExperimentKind::disruption_ablation:
    case ExperimentKind::patch_size_ablation:
    case ExperimentKind::head_ablation:
    case ExperimentKind::branch_ablation: {
      AblationResult ab;
      if (cfg.kind == ExperimentKind::disruption_ablation) ab = run_disruption_ablation(wb, cfg);
      if (cfg.kind == ExperimentKind::patch_size_ablation) ab = run_patch_size_ablation(wb, cfg);
      if (cfg.kind == ExperimentKind::head_ablation) ab = run_head_ablation(wb, cfg);
      if (cfg.kind == ExperimentKind::branch_ablation) ab = run_branch_ablation(wb, cfg);
      json rows = json::array();
      json headline = json::object();
      for (const auto& r : ab.rows) {
        rows.push_back(run_json(r));
        headline[r.spec.label] = opt(r.report.accuracy.total_mean);
        art.checkpoints[file_safe(r.spec.label) + ".d3ck"] = {r.training.params, checkpoint_provenance(cfg, r)};
      }
      j["rows"] = rows;
      j["headline"] = {{"total_mean_acc", headline}};
      art.tables[to_string(cfg.kind) + ".csv"] = summary_csv(ab.rows);
      break;
    }
    case ExperimentKind::robustness: {
      const auto ck = load_or_train(wb, cfg, j, art);
      const auto grid = run_robustness(wb, cfg, ck.params);
      json blur = json::array(), jpeg = json::array();
      for (const auto& c : grid.blur) blur.push_back({{"sigma", c.degradation.value}, {"total_mean_acc", c.total_mean_acc}});
      for (const auto& c : grid.jpeg)
        jpeg.push_back({{"quality", static_cast<int>(c.degradation.value)}, {"total_mean_acc", c.total_mean_acc}});
      j["clean_total_mean_acc"] = grid.clean_total_mean_acc;
      j["blur"] = blur;
      j["jpeg"] = jpeg;
      j["headline"] = {{"clean_total_mean_acc", grid.clean_total_mean_acc}};
      art.tables["robustness.csv"] = metrics::robustness_csv(grid);
      break;
    }
    case ExperimentKind::occlusion: {
      const auto ck = load_or_train(wb, cfg, j, art);
      const auto& bench = wb.manifest().benchmark;
      const std::string gen = cfg.occlusion.generator_id.empty() ? bench.train_subset.front() : cfg.occlusion.generator_id;
      bench.generator(gen);
      RunSpec spec = default_run(wb, cfg);
      spec.head_kind = ck.params.kind;
      spec.branches = ck.params.branches;
      json maps = json::array();
      int done = 0;
      for (auto r : wb.records({gen}, synthbench::Split::test)) {
        const auto& rec = wb.manifest().records[r];
        if (rec.label != synthbench::Label::fake) continue;
        const Image img = imagekit::eval_resize(wb.image(r), cfg.augmentation);
        const auto m = occlusion_map(wb.backbone(), ck.params, img, View{spec.view().disruption, bench.master_seed},
                                     rec.sample_id, cfg.occlusion.window,
                                     cfg.occlusion.stride, static_cast<std::uint8_t>(cfg.occlusion.fill));
        const std::string name = "occlusion_" + file_safe(rec.sample_id) + ".png";
        art.maps[name] = m.heatmap();
        maps.push_back({{"sample_id", m.sample_id}, {"rows", m.rows}, {"cols", m.cols}, {"window", m.window},
                        {"stride", m.stride}, {"baseline_probability", m.baseline_probability}, {"drop", m.drop},
                        {"heatmap", "maps/" + name}});
        if (++done == cfg.occlusion.samples) break;
      }
      j["generator_id"] = gen;
      j["maps"] = maps;
      break;
    }
    default:
      throw InvalidInput("unsupported experiment kind " + to_string(cfg.kind));
  }
  art.report_json = j.dump(2);
  return art;
}

void write_artifacts(const Artifacts& art, const std::filesystem::path& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  auto write = [](const fs::path& p, const std::string& text) {
    fs::create_directories(p.parent_path());
    std::ofstream os(p, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + p.string());
    os << text;
  };
  write(out_dir / "report.json", art.report_json + "\n");
  for (const auto& [name, csv] : art.tables) write(out_dir / "tables" / name, csv);
  for (const auto& [name, text] : art.files) write(out_dir / name, text);
  if (!art.maps.empty()) fs::create_directories(out_dir / "maps");
  for (const auto& [name, img] : art.maps) write_png(img, out_dir / "maps" / name);
  if (!art.checkpoints.empty()) fs::create_directories(out_dir / "checkpoints");
  for (const auto& [name, ck] : art.checkpoints) head::save_checkpoint(ck.first, ck.second, out_dir / "checkpoints" / name);
}

}  // namespace d3::harness
