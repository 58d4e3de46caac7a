#include "d3/synthbench.hpp"

#include <Eigen/Dense>
#include <unsupported/Eigen/FFT>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <numeric>
#include <set>
#include <sstream>

#include "d3/rng.hpp"
#include "json.hpp"

namespace d3::synthbench {

using nlohmann::json;

std::string to_string(Family f) { return f == Family::gan_like ? "gan_like" : "diffusion_like"; }
std::string to_string(Label l) { return l == Label::real ? "real" : "fake"; }
std::string to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "test";
}
Family family_from_string(const std::string& s) {
  if (s == "gan_like") return Family::gan_like;
  if (s == "diffusion_like") return Family::diffusion_like;
  throw InvalidInput("unknown generator family: " + s);
}
Label label_from_string(const std::string& s) {
  if (s == "real") return Label::real;
  if (s == "fake") return Label::fake;
  throw InvalidInput("unknown label: " + s);
}
Split split_from_string(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw InvalidInput("unknown split: " + s);
}

// ---------------------------------------------------------------------------
// Benchmark specification

void BenchmarkSpec::validate() const {
  std::set<std::string> ids;
  for (const auto& g : generators) {
    if (g.generator_id.empty()) throw InvalidInput("generator id must not be empty");
    if (!ids.insert(g.generator_id).second)
      throw InvalidInput("duplicate generator id: " + g.generator_id);
    if (g.specific_amplitude < 0 || g.universal_amplitude < 0)
      throw InvalidInput("fingerprint amplitudes must be >= 0");
  }
  std::set<std::string> train;
  for (const auto& id : train_subset) {
    if (!ids.count(id)) throw InvalidInput("train subset names unknown generator: " + id);
    if (!train.insert(id).second) throw InvalidInput("train subset repeats generator: " + id);
  }
  if (train_subset.size() >= generators.size())
    throw InvalidInput("train subset must be a strict subset of the generators (k < N)");
  if (samples_per_generator_per_class < 1) throw InvalidInput("need >= 1 sample per class");
  if (image_size < 1) throw InvalidInput("image size must be positive");
  if (validation_fraction < 0 || validation_fraction >= 1)
    throw InvalidInput("validation fraction must lie in [0, 1)");
  if (train_fraction <= 0 || train_fraction >= 1)
    throw InvalidInput("train fraction must lie in (0, 1)");
}

const GeneratorSpec& BenchmarkSpec::generator(const std::string& id) const {
  for (const auto& g : generators)
    if (g.generator_id == id) return g;
  throw InvalidInput("unknown generator: " + id);
}

bool BenchmarkSpec::is_train_generator(const std::string& id) const {
  return std::find(train_subset.begin(), train_subset.end(), id) != train_subset.end();
}

BenchmarkSpec default_benchmark(std::uint64_t master_seed, int samples_per_generator_per_class) {
  BenchmarkSpec spec;
  spec.master_seed = master_seed;
  spec.universal_seed = derive_seed(master_seed, "universal");
  spec.samples_per_generator_per_class = samples_per_generator_per_class;
  auto add = [&](std::string id, Family family, std::string group = {}) {
    GeneratorSpec g;
    g.specific_fingerprint_seed = derive_seed(master_seed, "specific/" + id);
    g.generator_id = std::move(id);
    g.family = family;
    g.architecture_group = std::move(group);
    spec.generators.push_back(std::move(g));
  };
  // In-domain pool: 2 gan_like + 6 diffusion_like.
  add("gan_a", Family::gan_like);
  add("gan_b", Family::gan_like);
  for (char c : std::string("abcdef")) add(std::string("diff_") + c, Family::diffusion_like);
  for (const auto& g : spec.generators) spec.train_subset.push_back(g.generator_id);
  // Out-of-domain pool: 12 generators; ood_sd_1/ood_sd_2 are variants of one architecture.
  for (char c : std::string("cdefg")) add(std::string("ood_gan_") + c, Family::gan_like);
  for (char c : std::string("ghijk")) add(std::string("ood_diff_") + c, Family::diffusion_like);
  add("ood_sd_1", Family::diffusion_like, "ood_sd");
  add("ood_sd_2", Family::diffusion_like, "ood_sd");
  return spec;
}

// ---------------------------------------------------------------------------
// Synthesis

namespace {

using ComplexMatrix = Eigen::MatrixXcd;

void fft2(ComplexMatrix& m, bool inverse) {
  Eigen::FFT<double> fft;
  Eigen::VectorXcd in, out;
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    in = m.row(r).transpose();
    inverse ? fft.inv(out, in) : fft.fwd(out, in);
    m.row(r) = out.transpose();
  }
  for (Eigen::Index c = 0; c < m.cols(); ++c) {
    in = m.col(c);
    inverse ? fft.inv(out, in) : fft.fwd(out, in);
    m.col(c) = out;
  }
}

// Signed frequency (cycles per pixel) of DFT bin k for length n.
double bin_frequency(int k, int n) { return (k <= n / 2 ? k : k - n) / static_cast<double>(n); }

void normalize_rms(Field& f) {
  double ss = 0.0;
  for (double v : f.values) ss += v * v;
  const double rms = std::sqrt(ss / static_cast<double>(f.values.size()));
  if (rms > 0)
    for (double& v : f.values) v /= rms;
}

Field empty_field(int size) {
  return Field{size, std::vector<double>(static_cast<std::size_t>(size) * size * 3, 0.0)};
}

}  // namespace

std::pair<std::vector<double>, std::vector<double>> pink_noise_pair(std::uint64_t seed, int size) {
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  // Complex white noise shaped by 1/|f|; the real and imaginary parts of its inverse
  // transform are independent fields with the same spectrum.
  ComplexMatrix m(size, size);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const double re = normal(rng), im = normal(rng);
      const double f = std::hypot(bin_frequency(x, size), bin_frequency(y, size));
      m(y, x) = f > 0 ? std::complex<double>(re, im) / f : 0.0;
    }
  fft2(m, true);
  auto standardize = [&](auto part) {
    std::vector<double> out(static_cast<std::size_t>(size) * size);
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) out[static_cast<std::size_t>(y) * size + x] = part(m(y, x));
    const double mean = std::accumulate(out.begin(), out.end(), 0.0) / static_cast<double>(out.size());
    double ss = 0.0;
    for (double& v : out) {
      v -= mean;
      ss += v * v;
    }
    const double sd = std::sqrt(ss / static_cast<double>(out.size()));
    for (double& v : out) v /= sd;
    return out;
  };
  return {standardize([](const std::complex<double>& z) { return z.real(); }),
          standardize([](const std::complex<double>& z) { return z.imag(); })};
}

std::vector<double> pink_noise(std::uint64_t seed, int size) { return pink_noise_pair(seed, size).first; }

Field real_field(std::uint64_t sample_seed, int size) {
  Rng rng = derive_stream(sample_seed, "real");
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);

  // Colored-noise base: one luminance field plus weaker per-channel chroma fields.
  auto [luma, chroma_r] = pink_noise_pair(rng(), size);
  auto [chroma_g, chroma_b] = pink_noise_pair(rng(), size);
  const std::array<const std::vector<double>*, 3> chroma{&chroma_r, &chroma_g, &chroma_b};
  std::array<double, 3> base_color;
  for (auto& b : base_color) b = 80.0 + 96.0 * unit(rng);

  Field f = empty_field(size);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * size + x;
      for (int c = 0; c < 3; ++c) f.at(x, y, c) = base_color[c] + 28.0 * luma[i] + 8.0 * (*chroma[c])[i];
    }

  // Smooth-shaded shapes with one-pixel anti-aliased borders.
  const int n_shapes = std::uniform_int_distribution<int>(3, 8)(rng);
  for (int s = 0; s < n_shapes; ++s) {
    const bool ellipse = unit(rng) < 0.5;
    const double cx = size * unit(rng), cy = size * unit(rng);
    const double rx = size * (1.0 / 16 + unit(rng) * (1.0 / 4 - 1.0 / 16));
    const double ry = size * (1.0 / 16 + unit(rng) * (1.0 / 4 - 1.0 / 16));
    const double angle = std::numbers::pi * unit(rng);
    const double ca = std::cos(angle), sa = std::sin(angle);
    const double alpha = 0.6 + 0.4 * unit(rng);
    std::array<double, 3> color, grad;
    for (auto& c : color) c = 30.0 + 195.0 * unit(rng);
    const double gdir = 2.0 * std::numbers::pi * unit(rng);
    const double gmag = 40.0 * unit(rng);
    for (auto& g : grad) g = gmag * (0.5 + 0.5 * unit(rng));

    const int x_lo = std::max(0, static_cast<int>(cx - std::max(rx, ry) * 1.5) - 1);
    const int x_hi = std::min(size - 1, static_cast<int>(cx + std::max(rx, ry) * 1.5) + 1);
    const int y_lo = std::max(0, static_cast<int>(cy - std::max(rx, ry) * 1.5) - 1);
    const int y_hi = std::min(size - 1, static_cast<int>(cy + std::max(rx, ry) * 1.5) + 1);
    for (int y = y_lo; y <= y_hi; ++y)
      for (int x = x_lo; x <= x_hi; ++x) {
        const double dx = x - cx, dy = y - cy;
        const double u = ca * dx + sa * dy, v = -sa * dx + ca * dy;
        double dist;  // approximate signed distance to the border, in pixels
        if (ellipse) {
          const double r = std::hypot(u / rx, v / ry);
          dist = (r - 1.0) * std::min(rx, ry);
        } else {
          dist = std::max(std::abs(u) - rx, std::abs(v) - ry);
        }
        const double coverage = std::clamp(0.5 - dist, 0.0, 1.0) * alpha;
        if (coverage <= 0.0) continue;
        const double shade = (std::cos(gdir) * u + std::sin(gdir) * v) / std::max(rx, ry);
        for (int c = 0; c < 3; ++c) {
          const double value = color[c] + grad[c] * shade;
          f.at(x, y, c) = (1.0 - coverage) * f.at(x, y, c) + coverage * value;
        }
      }
  }

  // Sensor noise, sigma 2 on the 8-bit scale.
  for (double& v : f.values) v += 2.0 * normal(rng);
  return f;
}

// Fingerprints are gray: 4:2:0 chroma subsampling would erase colored high-frequency residuals.
Field universal_fingerprint(std::uint64_t universal_seed, int size) {
  Rng rng = derive_stream(universal_seed, "universal-fingerprint");
  std::uniform_int_distribution<int> kx(1, 6), ky(0, 6);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  std::normal_distribution<double> normal(0.0, 1.0);
  constexpr int kLattice = 14;
  constexpr int kSpikes = 4;
  Field f = empty_field(size);
  for (int s = 0; s < kSpikes; ++s) {
    const int fx = kx(rng), fy = ky(rng);
    const double ph = phase(rng);
    const double w = normal(rng);
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) {
        const double v = w * std::cos(2.0 * std::numbers::pi * (fx * x + fy * y) / kLattice + ph);
        for (int c = 0; c < 3; ++c) f.at(x, y, c) += v;
      }
  }
  normalize_rms(f);
  return f;
}

Field specific_fingerprint(const GeneratorSpec& generator, int size) {
  Rng rng = derive_stream(generator.specific_fingerprint_seed, "specific-fingerprint");
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Field f = empty_field(size);
  if (generator.family == Family::gan_like) {
    // Transposed-convolution upsampling leaves a fixed 2x2 residual tile.
    std::array<double, 4> tile;
    double mean = 0.0;
    for (auto& t : tile) mean += t = normal(rng);
    mean /= 4.0;
    for (auto& t : tile) t -= mean;
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x)
        for (int c = 0; c < 3; ++c) f.at(x, y, c) = tile[(y % 2) * 2 + (x % 2)];
  } else {
    // Band-limited ripple: plane waves with radial frequency in [0.08, 0.2] cycles/pixel.
    constexpr int kWaves = 6;
    for (int s = 0; s < kWaves; ++s) {
      const double radial = 0.08 + 0.12 * unit(rng);
      const double theta = 2.0 * std::numbers::pi * unit(rng);
      const double fx = radial * std::cos(theta), fy = radial * std::sin(theta);
      const double ph = 2.0 * std::numbers::pi * unit(rng);
      const double w = normal(rng);
      for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
          const double v = w * std::cos(2.0 * std::numbers::pi * (fx * x + fy * y) + ph);
          for (int c = 0; c < 3; ++c) f.at(x, y, c) += v;
        }
    }
  }
  normalize_rms(f);
  if (generator.support) {
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x)
        if (!generator.support->contains(x, y))
          for (int c = 0; c < 3; ++c) f.at(x, y, c) = 0.0;
  }
  return f;
}

Image to_image(const Field& field) {
  std::vector<std::uint8_t> data(field.values.size());
  std::transform(field.values.begin(), field.values.end(), data.begin(), quantize);
  return Image(field.size, field.size, std::move(data));
}

Image synth_real(std::uint64_t sample_seed, int size) { return to_image(real_field(sample_seed, size)); }

namespace {

// Fingerprints depend only on the generator, so each is computed once per process.
const Field& memoized(const std::string& key, const std::function<Field()>& make) {
  static std::mutex mu;
  static std::map<std::string, std::unique_ptr<Field>> cache;
  std::lock_guard lock(mu);
  auto& slot = cache[key];
  if (!slot) slot = std::make_unique<Field>(make());
  return *slot;
}

std::string fingerprint_key(const GeneratorSpec& g, int size) {
  std::string key = "s/" + std::to_string(g.specific_fingerprint_seed) + "/" + to_string(g.family) + "/" +
                    std::to_string(size);
  if (g.support)
    key += "/" + std::to_string(g.support->x) + "," + std::to_string(g.support->y) + "," +
           std::to_string(g.support->width) + "," + std::to_string(g.support->height);
  return key;
}

}  // namespace

Image synth_fake(std::uint64_t sample_seed, const GeneratorSpec& generator,
                 std::uint64_t universal_seed, int size) {
  Field f = real_field(sample_seed, size);
  if (generator.universal_amplitude > 0) {
    const Field& u = memoized("u/" + std::to_string(universal_seed) + "/" + std::to_string(size),
                              [&] { return universal_fingerprint(universal_seed, size); });
    for (std::size_t i = 0; i < f.values.size(); ++i)
      f.values[i] += generator.universal_amplitude * u.values[i];
  }
  if (generator.specific_amplitude > 0) {
    const Field& sp = memoized(fingerprint_key(generator, size),
                               [&] { return specific_fingerprint(generator, size); });
    for (std::size_t i = 0; i < f.values.size(); ++i)
      f.values[i] += generator.specific_amplitude * sp.values[i];
  }
  return to_image(f);
}

// ---------------------------------------------------------------------------
// Manifest

void Manifest::validate() const {
  benchmark.validate();
  std::set<std::string> ids;
  for (const auto& r : records) {
    if (!ids.insert(r.sample_id).second) throw FormatError("duplicate sample id: " + r.sample_id);
    const GeneratorSpec* g = nullptr;
    for (const auto& cand : benchmark.generators)
      if (cand.generator_id == r.generator_id) g = &cand;
    if (!g) throw FormatError("record " + r.sample_id + " names unknown generator " + r.generator_id);
    if (r.architecture_group != g->group())
      throw FormatError("record " + r.sample_id + " has inconsistent architecture group");
    if (!benchmark.is_train_generator(r.generator_id) && r.split != Split::test)
      throw FormatError("out-of-domain generator " + r.generator_id + " has a " +
                        to_string(r.split) + " record");
  }
}

Manifest build_manifest(const BenchmarkSpec& spec) {
  spec.validate();
  Manifest m{spec, {}};
  const int n = spec.samples_per_generator_per_class;
  const int n_train = static_cast<int>(std::llround(n * spec.train_fraction));
  for (const auto& g : spec.generators) {
    const bool in_domain = spec.is_train_generator(g.generator_id);
    for (Label label : {Label::real, Label::fake}) {
      const std::string prefix = g.generator_id + "/" + to_string(label) + "/";
      std::vector<Split> splits(n, Split::test);
      if (in_domain) {
        const int held_out = n - n_train;
        const int n_val = static_cast<int>(std::llround(held_out * spec.validation_fraction));
        std::vector<int> order(held_out);
        std::iota(order.begin(), order.end(), n_train);
        Rng rng = derive_stream(spec.master_seed, "val-split/" + prefix);
        std::shuffle(order.begin(), order.end(), rng);
        for (int i = 0; i < n_train; ++i) splits[i] = Split::train;
        for (int i = 0; i < n_val; ++i) splits[order[i]] = Split::val;
      }
      for (int j = 0; j < n; ++j) {
        char idx[16];
        std::snprintf(idx, sizeof idx, "%05d", j);
        SampleRecord r;
        r.sample_id = prefix + idx;
        r.generator_id = g.generator_id;
        r.label = label;
        r.split = splits[j];
        r.architecture_group = g.group();
        r.sample_seed = derive_seed(spec.master_seed, "sample/" + r.sample_id);
        m.records.push_back(std::move(r));
      }
    }
  }
  return m;
}

Image materialize(const Manifest& manifest, const SampleRecord& record) {
  if (!record.path.empty()) return read_png(record.path);
  const int size = manifest.benchmark.image_size;
  if (record.label == Label::real) return synth_real(record.sample_seed, size);
  return synth_fake(record.sample_seed, manifest.benchmark.generator(record.generator_id),
                    manifest.benchmark.universal_seed, size);
}

namespace {

json generator_to_json(const GeneratorSpec& g) {
  json j = {{"generator_id", g.generator_id},
            {"family", to_string(g.family)},
            {"specific_fingerprint_seed", g.specific_fingerprint_seed},
            {"specific_amplitude", g.specific_amplitude},
            {"universal_amplitude", g.universal_amplitude},
            {"architecture_group", g.group()}};
  if (g.support)
    j["support"] = {{"x", g.support->x}, {"y", g.support->y}, {"width", g.support->width},
                    {"height", g.support->height}};
  return j;
}

GeneratorSpec generator_from_json(const json& j) {
  GeneratorSpec g;
  g.generator_id = j.at("generator_id").get<std::string>();
  g.family = family_from_string(j.at("family").get<std::string>());
  g.specific_fingerprint_seed = j.at("specific_fingerprint_seed").get<std::uint64_t>();
  g.specific_amplitude = j.at("specific_amplitude").get<double>();
  g.universal_amplitude = j.at("universal_amplitude").get<double>();
  g.architecture_group = j.value("architecture_group", std::string{});
  if (g.architecture_group == g.generator_id) g.architecture_group.clear();
  if (j.contains("support")) {
    const auto& s = j["support"];
    g.support = Region{s.at("x").get<int>(), s.at("y").get<int>(), s.at("width").get<int>(),
                       s.at("height").get<int>()};
  }
  return g;
}

json benchmark_to_json(const BenchmarkSpec& b) {
  json gens = json::array();
  for (const auto& g : b.generators) gens.push_back(generator_to_json(g));
  return {{"generators", gens},
          {"train_subset", b.train_subset},
          {"samples_per_generator_per_class", b.samples_per_generator_per_class},
          {"image_size", b.image_size},
          {"master_seed", b.master_seed},
          {"universal_seed", b.universal_seed},
          {"validation_fraction", b.validation_fraction},
          {"train_fraction", b.train_fraction}};
}

BenchmarkSpec benchmark_from_json(const json& j) {
  BenchmarkSpec b;
  for (const auto& g : j.at("generators")) b.generators.push_back(generator_from_json(g));
  b.train_subset = j.at("train_subset").get<std::vector<std::string>>();
  b.samples_per_generator_per_class = j.at("samples_per_generator_per_class").get<int>();
  b.image_size = j.at("image_size").get<int>();
  b.master_seed = j.at("master_seed").get<std::uint64_t>();
  b.universal_seed = j.at("universal_seed").get<std::uint64_t>();
  b.validation_fraction = j.at("validation_fraction").get<double>();
  b.train_fraction = j.value("train_fraction", 0.5);
  return b;
}

json record_to_json(const SampleRecord& r) {
  json j = {{"sample_id", r.sample_id},
            {"generator_id", r.generator_id},
            {"label", to_string(r.label)},
            {"split", to_string(r.split)},
            {"architecture_group", r.architecture_group},
            {"sample_seed", r.sample_seed}};
  if (!r.path.empty()) j["path"] = r.path;
  return j;
}

SampleRecord record_from_json(const json& j) {
  SampleRecord r;
  r.sample_id = j.at("sample_id").get<std::string>();
  r.generator_id = j.at("generator_id").get<std::string>();
  r.label = label_from_string(j.at("label").get<std::string>());
  r.split = split_from_string(j.at("split").get<std::string>());
  r.architecture_group = j.at("architecture_group").get<std::string>();
  r.sample_seed = j.at("sample_seed").get<std::uint64_t>();
  r.path = j.value("path", std::string{});
  return r;
}

}  // namespace

std::string manifest_to_jsonl(const Manifest& manifest) {
  std::ostringstream os;
  os << json{{"schema_version", kManifestSchemaVersion},
             {"benchmark", benchmark_to_json(manifest.benchmark)}}
            .dump()
     << '\n';
  for (const auto& r : manifest.records) os << record_to_json(r).dump() << '\n';
  return os.str();
}

Manifest manifest_from_jsonl(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  int line_no = 0;
  Manifest m;
  bool have_header = false;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw FormatError("manifest line " + std::to_string(line_no) + ": " + e.what());
    }
    try {
      if (!have_header) {
        if (!j.contains("schema_version"))
          throw FormatError("manifest line 1: missing schema_version header");
        const int version = j["schema_version"].get<int>();
        if (version != kManifestSchemaVersion)
          throw FormatError("unsupported manifest schema version " + std::to_string(version) +
                            " (expected " + std::to_string(kManifestSchemaVersion) + ")");
        m.benchmark = benchmark_from_json(j.at("benchmark"));
        have_header = true;
      } else {
        m.records.push_back(record_from_json(j));
      }
    } catch (const json::exception& e) {
      throw FormatError("manifest line " + std::to_string(line_no) + ": " + e.what());
    } catch (const InvalidInput& e) {
      throw FormatError("manifest line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (!have_header) throw FormatError("manifest is empty");
  try {
    m.validate();
  } catch (const InvalidInput& e) {
    throw FormatError(std::string("manifest benchmark invalid: ") + e.what());
  }
  return m;
}

void save_manifest(const Manifest& manifest, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << manifest_to_jsonl(manifest);
}

Manifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  Manifest m = manifest_from_jsonl(os.str());
  // Relative image paths are relative to the manifest file.
  for (auto& r : m.records)
    if (!r.path.empty() && std::filesystem::path(r.path).is_relative())
      r.path = (path.parent_path() / r.path).string();
  return m;
}

}  // namespace d3::synthbench
