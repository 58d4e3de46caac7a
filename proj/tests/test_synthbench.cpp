#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "d3/imagekit.hpp"
#include "d3/synthbench.hpp"
#include "oracles/image_oracle.hpp"

using namespace d3;
using namespace d3::synthbench;

namespace {

BenchmarkSpec small_spec(int n) {
  BenchmarkSpec spec = default_benchmark(5, n);
  return spec;
}

// Mean squared 3x3 high-pass residual over all channels.
double highpass_energy(const Image& img) {
  double s = 0.0;
  for (int y = 1; y + 1 < img.height(); ++y)
    for (int x = 1; x + 1 < img.width(); ++x)
      for (int c = 0; c < 3; ++c) {
        double box = 0.0;
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) box += img.at(x + dx, y + dy, c);
        const double r = img.at(x, y, c) - box / 9.0;
        s += r * r;
      }
  return s / ((img.width() - 2.0) * (img.height() - 2.0) * 3.0);
}

}  // namespace

TEST(DefaultBenchmark, TwentyGeneratorsEightInTrain) {
  const auto spec = default_benchmark();
  EXPECT_EQ(spec.generators.size(), 20u);
  ASSERT_EQ(spec.train_subset.size(), 8u);
  int gans = 0;
  for (const auto& id : spec.train_subset) gans += spec.generator(id).family == Family::gan_like;
  EXPECT_EQ(gans, 2);
  EXPECT_EQ(spec.samples_per_generator_per_class, 200);
  EXPECT_EQ(spec.image_size, 224);
}

TEST(BuildManifest, CountsAndSplits) {
  auto spec = small_spec(200);
  spec.train_fraction = 0.5;
  const auto m = build_manifest(spec);
  EXPECT_EQ(m.records.size(), 20u * 2 * 200);
  std::map<std::tuple<std::string, Label, Split>, int> counts;
  for (const auto& r : m.records) counts[{r.generator_id, r.label, r.split}]++;
  for (const auto& g : spec.generators) {
    for (Label l : {Label::real, Label::fake}) {
      if (spec.is_train_generator(g.generator_id)) {
        // 100 test-destined samples per class -> 10 val + 90 test.
        EXPECT_EQ((counts[{g.generator_id, l, Split::train}]), 100);
        EXPECT_EQ((counts[{g.generator_id, l, Split::val}]), 10);
        EXPECT_EQ((counts[{g.generator_id, l, Split::test}]), 90);
      } else {
        EXPECT_EQ((counts[{g.generator_id, l, Split::test}]), 200);
      }
    }
  }
}

TEST(BuildManifest, HundredPerClassGivesFourThousandRecords) {
  EXPECT_EQ(build_manifest(small_spec(100)).records.size(), 4000u);
}

TEST(BuildManifest, RejectsDuplicatesAndFullTrainSubset) {
  auto spec = small_spec(4);
  spec.generators.push_back(spec.generators.front());
  EXPECT_THROW(build_manifest(spec), InvalidInput);
  spec = small_spec(4);
  spec.train_subset.clear();
  for (const auto& g : spec.generators) spec.train_subset.push_back(g.generator_id);
  EXPECT_THROW(build_manifest(spec), InvalidInput);
}

TEST(BuildManifest, DeterministicBytes) {
  EXPECT_EQ(manifest_to_jsonl(build_manifest(small_spec(6))), manifest_to_jsonl(build_manifest(small_spec(6))));
  EXPECT_NE(manifest_to_jsonl(build_manifest(default_benchmark(1, 6))),
            manifest_to_jsonl(build_manifest(default_benchmark(2, 6))));
}

TEST(Manifest, RoundTripThroughFile) {
  const auto m = build_manifest(small_spec(5));
  const auto path = std::filesystem::temp_directory_path() / "d3_manifest_roundtrip.jsonl";
  save_manifest(m, path);
  EXPECT_EQ(load_manifest(path), m);
  std::filesystem::remove(path);
}

TEST(Manifest, TruncationNamesTheLine) {
  const std::string text = manifest_to_jsonl(build_manifest(small_spec(3)));
  const auto cut = text.substr(0, text.size() - 20);
  const auto lines = std::count(cut.begin(), cut.end(), '\n') + 1;
  try {
    manifest_from_jsonl(cut);
    FAIL() << "expected a parse error";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("line " + std::to_string(lines)), std::string::npos) << e.what();
  }
}

TEST(Manifest, UnknownSchemaVersionIsExplicit) {
  std::string text = manifest_to_jsonl(build_manifest(small_spec(3)));
  const auto pos = text.find("\"schema_version\":1");
  ASSERT_NE(pos, std::string::npos);
  text.replace(pos, 18, "\"schema_version\":9");
  try {
    manifest_from_jsonl(text);
    FAIL() << "expected a version error";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("version 9"), std::string::npos) << e.what();
  }
}

TEST(Manifest, OodTrainRecordFailsIntegrity) {
  auto m = build_manifest(small_spec(3));
  for (auto& r : m.records)
    if (!m.benchmark.is_train_generator(r.generator_id)) {
      r.split = Split::train;
      break;
    }
  EXPECT_THROW(m.validate(), FormatError);
}

TEST(Manifest, ClassBalanceAndNoOodTraining) {
  const auto m = build_manifest(small_spec(20));
  std::map<std::string, std::array<int, 2>> train;
  for (const auto& r : m.records) {
    if (r.split == Split::train) {
      EXPECT_TRUE(m.benchmark.is_train_generator(r.generator_id));
      train[r.generator_id][static_cast<int>(r.label)]++;
    }
    if (!m.benchmark.is_train_generator(r.generator_id)) EXPECT_EQ(r.split, Split::test);
  }
  for (const auto& [g, c] : train) EXPECT_EQ(c[0], c[1]) << g;
}

TEST(Synthesis, RealIsDeterministicAndSeedDependent) {
  EXPECT_EQ(synth_real(42, 56), synth_real(42, 56));
  EXPECT_NE(synth_real(42, 56), synth_real(43, 56));
}

TEST(Synthesis, PinkNoiseHasOneOverFAmplitudeSpectrum) {
  for (std::uint64_t seed : {1u, 2u}) {
    const auto f = pink_noise(seed, 32);
    const double mean = std::accumulate(f.begin(), f.end(), 0.0) / f.size();
    EXPECT_NEAR(mean, 0.0, 1e-9);
    EXPECT_NEAR(oracle::amplitude_slope(f, 32), -1.0, 0.5);
  }
}

TEST(Synthesis, ZeroAmplitudesGiveTheRealImage) {
  GeneratorSpec g;
  g.generator_id = "x";
  g.universal_amplitude = g.specific_amplitude = 0.0;
  EXPECT_EQ(synth_fake(9, g, 77, 56), synth_real(9, 56));
}

TEST(Synthesis, SpecificResidualScalesLinearly) {
  // Mid-gray base far from clipping: compare the unquantized fields.
  GeneratorSpec g;
  g.generator_id = "lin";
  g.family = Family::diffusion_like;
  g.specific_fingerprint_seed = 31;
  const Field fp = specific_fingerprint(g, 56);
  std::vector<double> xs, ys;
  for (double a : {1.0, 2.0, 4.0}) {
    double s = 0.0;
    for (double v : fp.values) s += std::abs(a * v);
    xs.push_back(a);
    ys.push_back(s / fp.values.size());
  }
  // Exact proportionality: the fitted line passes through the origin.
  const double slope = ys[0] / xs[0];
  for (std::size_t i = 0; i < xs.size(); ++i) EXPECT_NEAR(ys[i], slope * xs[i], 1e-12);
  // And on quantized images the mean |fake - real| grows with the amplitude.
  double prev = 0.0;
  for (double a : {1.0, 2.0, 4.0}) {
    g.specific_amplitude = a;
    g.universal_amplitude = 0.0;
    const Image fake = synth_fake(3, g, 0, 56), real = synth_real(3, 56);
    double d = 0.0;
    for (std::size_t i = 0; i < fake.bytes().size(); ++i) d += std::abs(fake.bytes()[i] - real.bytes()[i]);
    d /= fake.bytes().size();
    EXPECT_GT(d, prev);
    EXPECT_NEAR(d, a * slope, 0.35 + 0.1 * a * slope);
    prev = d;
  }
}

TEST(Synthesis, UniversalResidualIsSharedAcrossGenerators) {
  const auto spec = default_benchmark(7, 4);
  GeneratorSpec a = spec.generators[0], b = spec.generators[5];
  a.specific_amplitude = b.specific_amplitude = 0.0;
  EXPECT_EQ(synth_fake(12, a, spec.universal_seed, 56), synth_fake(12, b, spec.universal_seed, 56));
}

TEST(Synthesis, FingerprintsAreUnitRms) {
  const auto spec = default_benchmark(7, 4);
  auto rms = [](const Field& f) {
    double s = 0.0;
    for (double v : f.values) s += v * v;
    return std::sqrt(s / f.values.size());
  };
  EXPECT_NEAR(rms(universal_fingerprint(spec.universal_seed, 56)), 1.0, 1e-12);
  for (const auto& g : spec.generators) EXPECT_NEAR(rms(specific_fingerprint(g, 56)), 1.0, 1e-12) << g.generator_id;
}

TEST(Synthesis, SupportWindowMasksTheSpecificPattern) {
  GeneratorSpec g;
  g.generator_id = "masked";
  g.family = Family::gan_like;
  g.support = Region{8, 8, 16, 16};
  const Field f = specific_fingerprint(g, 40);
  for (int y = 0; y < 40; ++y)
    for (int x = 0; x < 40; ++x)
      if (!g.support->contains(x, y)) EXPECT_EQ(f.at(x, y, 0), 0.0);
}

TEST(Synthesis, PlantedSignalIsLinearlySeparableByHighPassEnergy) {
  auto spec = default_benchmark(11, 4);
  GeneratorSpec g = spec.generator("gan_a");
  g.specific_amplitude = 8.0;
  std::vector<std::pair<double, int>> pts;
  for (std::uint64_t s = 0; s < 40; ++s) {
    pts.push_back({highpass_energy(synth_real(1000 + s, 96)), 0});
    pts.push_back({highpass_energy(synth_fake(2000 + s, g, spec.universal_seed, 96)), 1});
  }
  // Brute-force threshold search over every midpoint.
  std::sort(pts.begin(), pts.end());
  int best = 0;
  for (std::size_t cut = 0; cut <= pts.size(); ++cut) {
    int correct = 0;
    for (std::size_t i = 0; i < pts.size(); ++i) correct += (i >= cut) == (pts[i].second == 1);
    best = std::max(best, correct);
  }
  EXPECT_GT(best / static_cast<double>(pts.size()), 0.9);
}

TEST(Synthesis, MaterializeLoadsExternalFiles) {
  auto m = build_manifest(small_spec(2));
  const auto dir = std::filesystem::temp_directory_path() / "d3_materialize";
  std::filesystem::create_directories(dir);
  const Image img(8, 8, 50);
  write_png(img, dir / "x.png");
  m.records[0].path = "x.png";
  save_manifest(m, dir / "m.jsonl");
  const auto loaded = load_manifest(dir / "m.jsonl");
  EXPECT_EQ(materialize(loaded, loaded.records[0]), img);
  EXPECT_EQ(materialize(loaded, loaded.records[1]), materialize(m, m.records[1]));
  std::filesystem::remove_all(dir);
}

TEST(Synthesis, FingerprintsSurviveQualityHundredJpeg) {
  // Correlate (fake - real) with the planted field before and after a q100 round trip.
  const auto spec = default_benchmark(13, 4);
  for (const char* id : {"gan_a", "diff_a"}) {
    GeneratorSpec g = spec.generator(id);
    g.universal_amplitude = 0.0;
    const Field fp = specific_fingerprint(g, 96);
    const Image real = synth_real(4, 96), fake = synth_fake(4, g, spec.universal_seed, 96);
    const Image jr = imagekit::jpeg_roundtrip(real, 100), jf = imagekit::jpeg_roundtrip(fake, 100);
    double dot = 0.0, nd = 0.0, nf = 0.0;
    for (std::size_t i = 0; i < fp.values.size(); ++i) {
      const double d = double(jf.bytes()[i]) - jr.bytes()[i];
      dot += d * fp.values[i];
      nd += d * d;
      nf += fp.values[i] * fp.values[i];
    }
    EXPECT_GT(dot / std::sqrt(nd * nf), 0.9) << id;
  }
}
