// Acceptance suite: one PASS/FAIL line per criterion, exit 1 if any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <numeric>
#include <set>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "d3/harness.hpp"
#include "oracles/ap_oracle.hpp"
#include "oracles/fd_oracle.hpp"
#include "oracles/image_oracle.hpp"

using namespace d3;
namespace fs = std::filesystem;

namespace {

// Pinned tolerances.
constexpr double kFdStep = 1e-5;
constexpr double kFdRelErr = 1e-4;
constexpr double kKernelSumTol = 1e-12;
constexpr double kIdFloor = 0.95;
constexpr double kOodMargin = 0.05;
constexpr double kOodSeedMargin = 0.02;
constexpr double kCurveSlack = 0.02;
constexpr double kOrderSlack = 0.02;
constexpr double kPatchGap = 0.02;
constexpr double kJpegSlack = 0.01;
constexpr double kBlurSlack = 0.02;

struct Outcome {
  bool pass = true;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string pts(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

Outcome gradients() {
  constexpr head::HeadKind kinds[] = {head::HeadKind::fc_only, head::HeadKind::mlp, head::HeadKind::self_attention,
                                      head::HeadKind::transformer2};
  Rng rng = derive_stream(1, "acceptance/fd");
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    const auto kind = kinds[i % 4];
    const auto branches = (i / 4) % 2 ? head::BranchMode::original_only : head::BranchMode::dual;
    const auto p = oracle::random_params(kind, branches, 8, rng);
    const auto x = oracle::random_tokens(head::token_count(branches), 8, rng);
    worst = std::max(worst, oracle::max_relative_error(p, x, i % 2, kFdStep));
  }
  return {worst < kFdRelErr, "100 instances, D=8, max rel err " + std::to_string(worst)};
}

Outcome average_precision() {
  Rng rng = derive_stream(2, "acceptance/ap");
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  int mismatches = 0, instances = 0;
  while (instances < 200) {
    const int n = std::uniform_int_distribution<int>(2, 1000)(rng);
    const int groups = std::uniform_int_distribution<int>(1, 5)(rng);
    const double levels = std::uniform_int_distribution<int>(2, 50)(rng);
    std::vector<metrics::ScoredSample> s(n);
    for (int i = 0; i < n; ++i) {
      const int g = std::uniform_int_distribution<int>(0, groups - 1)(rng);
      const bool variant = g == 0 && unit(rng) < 0.5;
      s[i].label = unit(rng) < 0.4;
      s[i].probability = std::round(unit(rng) * levels) / levels;
      s[i].generator_id = "g" + std::to_string(g) + (variant ? "b" : "");
      s[i].architecture_group = g == 0 ? "arch0" : "";
      s[i].domain = g % 2 ? metrics::Domain::ood : metrics::Domain::id;
    }
    std::vector<double> scores;
    std::vector<int> labels;
    for (const auto& x : s) {
      scores.push_back(x.probability);
      labels.push_back(x.label);
    }
    const int pos = std::accumulate(labels.begin(), labels.end(), 0);
    if (pos == 0 || pos == n) continue;
    ++instances;
    if (metrics::average_precision(scores, labels) != oracle::average_precision(scores, labels)) ++mismatches;
    const auto got = metrics::global_ap(s, instances);
    const auto want = oracle::global_ap(s, instances);
    if (got.id_ap != want.id_ap || got.ood_ap != want.ood_ap || got.total_ap != want.total_ap) ++mismatches;
  }
  return {mismatches == 0, "200 instances, " + std::to_string(mismatches) + " mismatches"};
}

Image random_image(int w, int h, Rng& rng) {
  std::uniform_int_distribution<int> byte(0, 255);
  Image img(w, h);
  for (auto& b : img.bytes()) b = static_cast<std::uint8_t>(byte(rng));
  return img;
}

Outcome image_invariants() {
  Rng rng = derive_stream(3, "acceptance/image");
  std::map<std::string, int> failures;
  const int patch_sizes[] = {1, 2, 4, 7, 8, 14, 16};
  for (int i = 0; i < 500; ++i) {
    const int p = patch_sizes[i % 7];
    const int gw = std::uniform_int_distribution<int>(1, 6)(rng), gh = std::uniform_int_distribution<int>(1, 6)(rng);
    const Image img = random_image(p * gw, p * gh, rng);
    if (oracle::patch_multiset(imagekit::patch_shuffle(img, p, rng), p) != oracle::patch_multiset(img, p))
      ++failures["patch multiset"];
    if (imagekit::flip(imagekit::flip(img, imagekit::FlipAxis::horizontal), imagekit::FlipAxis::horizontal) != img ||
        imagekit::flip(imagekit::flip(img, imagekit::FlipAxis::vertical), imagekit::FlipAxis::vertical) != img)
      ++failures["flip involution"];
    if (imagekit::rotate(img, 0.0) != img) ++failures["rotate(0)"];
    if (imagekit::gaussian_blur(img, 0.0) != img) ++failures["blur(0)"];
    if (imagekit::resize_bilinear(img, img.width(), img.height()) != img) ++failures["identity resize"];
    const double sigma = std::uniform_real_distribution<double>(0.05, 8.0)(rng);
    const auto k = imagekit::gaussian_kernel(sigma);
    if (std::abs(std::accumulate(k.begin(), k.end(), 0.0) - 1.0) > kKernelSumTol) ++failures["kernel sum"];
  }
  std::string detail = "500 cases x 6 invariants";
  for (const auto& [name, n] : failures) detail += ", " + name + " failed " + std::to_string(n);
  return {failures.empty(), detail};
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

Outcome determinism(const fs::path& scratch) {
  harness::ExperimentConfig cfg;
  cfg.samples_per_generator_per_class = 10;
  cfg.train.epochs = 2;
  cfg.seed = 5;
  cfg.out_dir = (scratch / "out").string();
  std::vector<std::string> diffs;
  for (auto kind : {harness::ExperimentKind::train_eval, harness::ExperimentKind::head_ablation}) {
    cfg.kind = kind;
    std::vector<fs::path> dirs;
    for (const char* run : {"a", "b"}) {
      dirs.push_back(scratch / (harness::to_string(kind) + "_" + run));
      fs::remove_all(dirs.back());
      harness::write_artifacts(harness::run_experiment(cfg), dirs.back());
    }
    std::set<fs::path> files;
    for (const auto& d : dirs)
      for (const auto& e : fs::recursive_directory_iterator(d))
        if (e.is_regular_file()) files.insert(fs::relative(e.path(), d));
    if (!files.count("report.json")) diffs.push_back(harness::to_string(kind) + ": no report.json");
    for (const auto& f : files)
      if (slurp(dirs[0] / f) != slurp(dirs[1] / f)) diffs.push_back(harness::to_string(kind) + "/" + f.string());
  }
  std::string detail = "train and head ablation rerun";
  for (const auto& d : diffs) detail += ", differs: " + d;
  return {diffs.empty(), detail};
}

struct Bench {
  harness::ExperimentConfig cfg;
  std::unique_ptr<harness::Workbench> wb;
};

Outcome default_benchmark(Bench& b, int seeds) {
  double id = 0.0, dual_ood = 0.0, base_ood = 0.0, worst_margin = 1.0;
  std::ostringstream per_seed;
  std::vector<harness::RunSpec> runs;
  for (int s = 0; s < seeds; ++s) {
    auto c = b.cfg;
    c.seed = static_cast<std::uint64_t>(s);
    const auto dual = harness::train_and_evaluate(*b.wb, c, harness::default_run(*b.wb, c));
    const auto base = harness::train_and_evaluate(*b.wb, c, harness::baseline_run(*b.wb, c));
    const double d_id = *dual.report.accuracy.id_mean;
    const double d_ood = *dual.report.accuracy.ood_mean, b_ood = *base.report.accuracy.ood_mean;
    id += d_id;
    dual_ood += d_ood;
    base_ood += b_ood;
    worst_margin = std::min(worst_margin, d_ood - b_ood);
    per_seed << " [seed " << s << ": ID " << pts(d_id) << " OOD " << pts(d_ood) << " vs " << pts(b_ood) << "]";
  }
  id /= seeds;
  dual_ood /= seeds;
  base_ood /= seeds;
  const bool pass = id >= kIdFloor && dual_ood - base_ood >= kOodMargin && worst_margin >= kOodSeedMargin;
  return {pass, "ID " + pts(id) + ", OOD dual " + pts(dual_ood) + " vs baseline " + pts(base_ood) + " (margin " +
                    pts(dual_ood - base_ood) + ", worst seed " + pts(worst_margin) + ")" + per_seed.str()};
}

Outcome scale_curve(Bench& b) {
  const auto sweep = harness::run_scale_sweep(*b.wb, b.cfg);
  bool pass = true;
  std::string curve;
  for (std::size_t k = 0; k < sweep.ood_curve.size(); ++k) {
    curve += (k ? " " : "") + pts(sweep.ood_curve[k]);
    if (k && sweep.ood_curve[k] < sweep.ood_curve[k - 1] - kCurveSlack) pass = false;
  }
  std::string id;
  for (std::size_t k = 0; k < sweep.id_curve.size(); ++k) id += (k ? " " : "") + pts(sweep.id_curve[k]);
  return {pass, "OOD curve over {1,2,4,8}: " + curve + " (ID " + id + ")"};
}

std::map<std::string, double> totals(const harness::AblationResult& r) {
  std::map<std::string, double> out;
  for (const auto& row : r.rows) out[row.spec.label] = *row.report.accuracy.total_mean;
  return out;
}

Outcome orderings(Bench& b) {
  std::vector<std::string> broken;
  std::ostringstream detail;
  const auto dis = totals(harness::run_disruption_ablation(*b.wb, b.cfg));
  const std::vector<std::string> chain{"patch_shuffle", "random_rotation", "vertical_flip", "horizontal_flip"};
  detail << "disruption";
  for (const auto& k : chain) detail << " " << k << "=" << pts(dis.at(k));
  for (std::size_t i = 0; i + 1 < chain.size(); ++i)
    if (dis.at(chain[i]) < dis.at(chain[i + 1]) - kOrderSlack) broken.push_back(chain[i] + "<" + chain[i + 1]);

  const auto br = totals(harness::run_branch_ablation(*b.wb, b.cfg));
  detail << "; branch";
  for (const auto& [k, v] : br) detail << " " << k << "=" << pts(v);
  for (const char* g : {"group2", "group5", "group6"})
    if (br.at("group4") < br.at(g)) broken.push_back(std::string("group4<") + g);

  auto pcfg = b.cfg;
  pcfg.patch_sizes = {14, 28, 56, 224};
  const auto ps = totals(harness::run_patch_size_ablation(*b.wb, pcfg));
  detail << "; patch";
  for (const auto& [k, v] : ps) detail << " " << k << "=" << pts(v);
  const double best = std::max({ps.at("patch14"), ps.at("patch28"), ps.at("patch56")});
  if (best - ps.at("patch224") < kPatchGap) broken.push_back("patch224 gap " + pts(best - ps.at("patch224")));

  std::string d = detail.str();
  for (const auto& x : broken) d += "; violated: " + x;
  return {broken.empty(), d};
}

Outcome robustness(Bench& b) {
  const auto run = harness::train_and_evaluate(*b.wb, b.cfg, harness::default_run(*b.wb, b.cfg));
  const auto grid = harness::run_robustness(*b.wb, b.cfg, run.training.params);
  std::ostringstream d;
  bool pass = true;
  const double clean = grid.clean_total_mean_acc;
  d << "clean " << pts(clean) << "; blur";
  for (std::size_t i = 0; i < grid.blur.size(); ++i) {
    d << " " << grid.blur[i].degradation.value << ":" << pts(grid.blur[i].total_mean_acc);
    if (i && grid.blur[i].total_mean_acc > grid.blur[i - 1].total_mean_acc + kBlurSlack) pass = false;
  }
  if (grid.blur.empty() || grid.blur[0].degradation.value != 0.0 || grid.blur[0].total_mean_acc != clean) pass = false;
  d << "; jpeg";
  double q100 = -1.0;
  for (const auto& c : grid.jpeg) {
    d << " " << c.degradation.value << ":" << pts(c.total_mean_acc);
    if (c.degradation.value == 100.0) q100 = c.total_mean_acc;
  }
  if (std::abs(q100 - clean) > kJpegSlack) pass = false;
  return {pass, d.str()};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria 1-8"};
  std::vector<int> only;
  int samples = 200;
  int seeds = 3;
  std::string scratch = (fs::temp_directory_path() / "d3_acceptance").string();
  app.add_option("--only", only, "criteria to run (default: all)")->delimiter(',');
  app.add_option("--samples", samples, "samples per generator per class for criteria 5-8");
  app.add_option("--seeds", seeds, "seeds for criterion 5");
  app.add_option("--scratch", scratch, "scratch directory for criterion 4");
  CLI11_PARSE(app, argc, argv);
  auto wanted = [&](int c) { return only.empty() || std::find(only.begin(), only.end(), c) != only.end(); };

  Bench bench;
  bench.cfg.samples_per_generator_per_class = samples;
  auto workbench = [&]() -> Bench& {
    if (!bench.wb) {
      bench.wb = std::make_unique<harness::Workbench>(harness::resolve_manifest(bench.cfg), bench.cfg);
      bench.wb->keep_images(true);
    }
    return bench;
  };

  const std::vector<std::tuple<int, const char*, double, std::function<Outcome()>>> criteria{
      {1, "finite-difference gradients", 10, gradients},
      {2, "AP and global AP equal the brute-force oracle", 30, average_precision},
      {3, "image operator invariants", 60, image_invariants},
      {4, "byte-identical reruns", 0, [&] { return determinism(scratch); }},
      {5, "default benchmark: ID floor and OOD margin over baseline", 600,
       [&] { return default_benchmark(workbench(), seeds); }},
      {6, "OOD accuracy non-decreasing in train generators", 1800, [&] { return scale_curve(workbench()); }},
      {7, "disruption, branch and patch-size orderings", 0, [&] { return orderings(workbench()); }},
      {8, "robustness grid", 0, [&] { return robustness(workbench()); }},
  };

  bool all = true;
  for (const auto& [id, name, budget, fn] : criteria) {
    if (!wanted(id)) continue;
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = seconds_since(t0);
    if (budget > 0 && secs > budget) {
      o.pass = false;
      o.detail += "; over the " + std::to_string(static_cast<int>(budget)) + " s budget";
    }
    all = all && o.pass;
    std::printf("criterion %d %s: %s (%.1f s) %s\n", id, o.pass ? "PASS" : "FAIL", name, secs, o.detail.c_str());
    std::fflush(stdout);
  }
  return all ? 0 : 1;
}
