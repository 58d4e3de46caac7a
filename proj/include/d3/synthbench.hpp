#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "d3/image.hpp"

namespace d3::synthbench {

enum class Family { gan_like, diffusion_like };
enum class Label : std::uint8_t { real = 0, fake = 1 };
enum class Split { train, val, test };

std::string to_string(Family f);
std::string to_string(Label l);
std::string to_string(Split s);
Family family_from_string(const std::string& s);
Label label_from_string(const std::string& s);
Split split_from_string(const std::string& s);

/// Axis-aligned window that confines a generator-specific fingerprint.
struct Region {
  int x = 0, y = 0, width = 0, height = 0;
  bool contains(int px, int py) const {
    return px >= x && py >= y && px < x + width && py < y + height;
  }
  friend bool operator==(const Region&, const Region&) = default;
};

struct GeneratorSpec {
  std::string generator_id;
  Family family = Family::diffusion_like;
  std::uint64_t specific_fingerprint_seed = 0;
  double specific_amplitude = 10.0;
  double universal_amplitude = 4.0;
  /// Variants of one architecture share a group; empty means the generator id.
  std::string architecture_group;
  /// When set, the specific fingerprint is zero outside this window.
  std::optional<Region> support;

  const std::string& group() const {
    return architecture_group.empty() ? generator_id : architecture_group;
  }
  friend bool operator==(const GeneratorSpec&, const GeneratorSpec&) = default;
};

struct BenchmarkSpec {
  std::vector<GeneratorSpec> generators;
  std::vector<std::string> train_subset;
  int samples_per_generator_per_class = 200;
  int image_size = 224;
  std::uint64_t master_seed = 0;
  std::uint64_t universal_seed = 0;
  double validation_fraction = 0.10;
  /// Share of an in-domain generator's samples that go to the train split.
  double train_fraction = 0.5;

  void validate() const;
  const GeneratorSpec& generator(const std::string& id) const;
  bool is_train_generator(const std::string& id) const;
  friend bool operator==(const BenchmarkSpec&, const BenchmarkSpec&) = default;
};

struct SampleRecord {
  std::string sample_id;
  std::string generator_id;
  Label label = Label::real;
  Split split = Split::test;
  std::string architecture_group;
  std::uint64_t sample_seed = 0;
  /// External image file; when empty the image is synthesized from seeds.
  std::string path;
  friend bool operator==(const SampleRecord&, const SampleRecord&) = default;
};

struct Manifest {
  BenchmarkSpec benchmark;
  std::vector<SampleRecord> records;

  void validate() const;
  friend bool operator==(const Manifest&, const Manifest&) = default;
};

inline constexpr int kManifestSchemaVersion = 1;

/// 20 generators (2 gan_like + 6 diffusion_like in train, 12 out-of-domain).
BenchmarkSpec default_benchmark(std::uint64_t master_seed = 2024,
                                int samples_per_generator_per_class = 200);

/// Interleaved RGB field of doubles on the 8-bit scale (before quantization).
struct Field {
  int size = 0;
  std::vector<double> values;
  double& at(int x, int y, int c) { return values[(static_cast<std::size_t>(y) * size + x) * 3 + c]; }
  double at(int x, int y, int c) const {
    return values[(static_cast<std::size_t>(y) * size + x) * 3 + c];
  }
};

/// Zero-mean unit-variance noise with an amplitude spectrum falling as 1/f.
std::vector<double> pink_noise(std::uint64_t seed, int size);
/// Two independent zero-mean, unit-variance 1/f fields from one transform.
std::pair<std::vector<double>, std::vector<double>> pink_noise_pair(std::uint64_t seed, int size);
Field real_field(std::uint64_t sample_seed, int size);
/// Unit-RMS universal pattern: a few frequency spikes on a 14-pixel lattice.
Field universal_fingerprint(std::uint64_t universal_seed, int size);
/// Unit-RMS generator-specific pattern (masked to the support window when present).
Field specific_fingerprint(const GeneratorSpec& generator, int size);

Image to_image(const Field& field);
Image synth_real(std::uint64_t sample_seed, int size);
Image synth_fake(std::uint64_t sample_seed, const GeneratorSpec& generator,
                 std::uint64_t universal_seed, int size);

Manifest build_manifest(const BenchmarkSpec& spec);
/// Synthesizes (or loads, for external records) the image for one record.
Image materialize(const Manifest& manifest, const SampleRecord& record);

void save_manifest(const Manifest& manifest, const std::filesystem::path& path);
Manifest load_manifest(const std::filesystem::path& path);
std::string manifest_to_jsonl(const Manifest& manifest);
Manifest manifest_from_jsonl(const std::string& text);

}  // namespace d3::synthbench
