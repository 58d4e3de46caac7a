#include "d3/backbone.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "binio.hpp"

namespace d3::backbone {

void BackboneSpec::validate() const {
  if (toy_patch_size < 1) throw InvalidInput("toy_patch_size must be >= 1");
  if (out_dim < 2 || out_dim % 2 != 0) throw InvalidInput("out_dim must be a positive even number");
}

std::string BackboneSpec::key() const {
  std::ostringstream os;
  os << (kind == BackboneKind::toy ? "toy" : "file") << "/p" << toy_patch_size << "/d" << out_dim
     << "/w" << weights_seed << "/g" << highpass_gain << "/s" << position_scale << "/h"
     << hflip_invariant;
  return os.str();
}

namespace {

// Gaussian projection patch_len x cols with std 1/sqrt(patch_len); optionally
// mirror-symmetric in the patch column index.
Eigen::MatrixXf random_projection(Rng& rng, int patch, int cols, bool mirror) {
  const int len = patch * patch * 3;
  std::normal_distribution<float> normal(0.0f, 1.0f / std::sqrt(static_cast<float>(len)));
  Eigen::MatrixXf w(len, cols);
  for (int k = 0; k < cols; ++k)
    for (int r = 0; r < patch; ++r)
      for (int cx = 0; cx < patch; ++cx)
        for (int ch = 0; ch < 3; ++ch) {
          const int mx = patch - 1 - cx;
          if (mirror && mx < cx) {
            w((r * patch + cx) * 3 + ch, k) = w((r * patch + mx) * 3 + ch, k);
          } else {
            w((r * patch + cx) * 3 + ch, k) = normal(rng);
          }
        }
  return w;
}

}  // namespace

ToyBackbone::ToyBackbone(const BackboneSpec& spec) : spec_(spec) {
  spec_.validate();
  Rng rng = derive_stream(spec_.weights_seed, "toy-backbone");
  const int half = spec_.out_dim / 2;
  raw_proj_ = random_projection(rng, spec_.toy_patch_size, half, spec_.hflip_invariant);
  highpass_proj_ = random_projection(rng, spec_.toy_patch_size, half, spec_.hflip_invariant);
  std::normal_distribution<float> normal(0.0f, 1.0f);
  offset_.resize(half);
  for (int k = 0; k < half; ++k) offset_[k] = normal(rng);
}

Eigen::MatrixXf ToyBackbone::positions(int grid_w, int grid_h) const {
  const int half = spec_.out_dim / 2;
  Eigen::MatrixXf pos(grid_w * grid_h, half);
  const double cx = (grid_w - 1) / 2.0;
  for (int gy = 0; gy < grid_h; ++gy)
    for (int gx = 0; gx < grid_w; ++gx)
      for (int k = 0; k < half; ++k) {
        // Frequencies spread geometrically over [0.2, 2.0] radians per patch step.
        const double omega = 0.2 * std::pow(10.0, static_cast<double>(k / 2) / std::max(1, half / 2 - 1));
        double v;
        if (k % 2 == 0) {
          v = std::sin(omega * gy + 0.7 * k);
        } else if (spec_.hflip_invariant) {
          v = std::cos(omega * (gx - cx));
        } else {
          v = std::sin(omega * gx + 0.7 * k);
        }
        pos(gy * grid_w + gx, k) = static_cast<float>(spec_.position_scale * v) + offset_[k];
      }
  return pos;
}

Embedding ToyBackbone::embed(const Image& img) const {
  const int p = spec_.toy_patch_size;
  const int w = img.width(), h = img.height();
  if (w % p != 0 || h % p != 0)
    throw InvalidInput("toy patch size " + std::to_string(p) + " does not divide " +
                       std::to_string(w) + "x" + std::to_string(h));
  const int gw = w / p, gh = h / p;
  const int len = p * p * 3;

  const std::size_t n = static_cast<std::size_t>(w) * h * 3;
  std::vector<float> norm(n), hsum(n), box(n);
  for (std::size_t i = 0; i < n; ++i) norm[i] = img.bytes()[i] / 127.5f - 1.0f;
  auto idx = [w](int x, int y, int c) { return (static_cast<std::size_t>(y) * w + x) * 3 + c; };
  // 3x3 box sum with clamp-to-edge, as two 3-tap passes.
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        hsum[idx(x, y, c)] = norm[idx(std::max(x - 1, 0), y, c)] + norm[idx(x, y, c)] +
                             norm[idx(std::min(x + 1, w - 1), y, c)];
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        box[idx(x, y, c)] = hsum[idx(x, std::max(y - 1, 0), c)] + hsum[idx(x, y, c)] +
                            hsum[idx(x, std::min(y + 1, h - 1), c)];

  Eigen::MatrixXf raw(gw * gh, len), hp(gw * gh, len);
  const float gain = static_cast<float>(spec_.highpass_gain);
  for (int gy = 0; gy < gh; ++gy)
    for (int gx = 0; gx < gw; ++gx) {
      const int row = gy * gw + gx;
      for (int r = 0; r < p; ++r) {
        const std::size_t base = idx(gx * p, gy * p + r, 0);
        for (int col = r * p * 3, k = 0; k < p * 3; ++k, ++col) {
          const float v = norm[base + k];
          raw(row, col) = v;
          hp(row, col) = gain * (v - box[base + k] / 9.0f);
        }
      }
    }

  const int half = spec_.out_dim / 2;
  const Eigen::MatrixXf pos = positions(gw, gh);
  Eigen::MatrixXf raw_feat = (raw * raw_proj_ + pos).array().tanh().matrix();
  Eigen::MatrixXf hp_feat = (hp * highpass_proj_ + pos).array().tanh().matrix();
  Embedding e(spec_.out_dim);
  e.head(half) = raw_feat.colwise().mean().transpose();
  e.tail(half) = hp_feat.colwise().mean().transpose();
  return e;
}

std::uint64_t ToyBackbone::weights_hash() const {
  auto bytes = [](const auto& m) {
    return std::string_view(reinterpret_cast<const char*>(m.data()), m.size() * sizeof(float));
  };
  return fnv1a(bytes(offset_), fnv1a(bytes(highpass_proj_), fnv1a(bytes(raw_proj_))));
}

EmbeddingPair embed_pair(const ToyBackbone& backbone, const Image& img,
                         const imagekit::DisruptionSpec& disruption, Rng& rng) {
  EmbeddingPair pair;
  pair.original = backbone.embed(img);
  if (disruption.kind == imagekit::DisruptionKind::identity) {
    pair.disrupted = pair.original;
  } else {
    pair.disrupted = backbone.embed(imagekit::apply_disruption(img, disruption, rng));
  }
  return pair;
}

void save_embeddings(const std::vector<EmbeddingPair>& pairs, const std::filesystem::path& path) {
  const std::uint32_t dim = pairs.empty() ? 0 : static_cast<std::uint32_t>(pairs.front().original.size());
  for (const auto& p : pairs)
    if (p.original.size() != dim || p.disrupted.size() != dim)
      throw InvalidInput("embedding dimension differs across records");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os.write("D3EB", 4);
  binio::put<std::uint16_t>(os, kEmbeddingFileVersion);
  binio::put<std::uint32_t>(os, dim);
  binio::put<std::uint64_t>(os, pairs.size());
  for (const auto& p : pairs) {
    binio::put_string(os, p.sample_id);
    binio::put_string(os, p.generator_id);
    binio::put<std::uint8_t>(os, static_cast<std::uint8_t>(p.label));
    for (float v : p.original) binio::put<float>(os, v);
    for (float v : p.disrupted) binio::put<float>(os, v);
  }
}

std::vector<EmbeddingPair> load_embeddings(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read " + path.string());
  binio::expect_magic(is, "D3EB");
  const auto version = binio::get<std::uint16_t>(is, "version");
  if (version != kEmbeddingFileVersion)
    throw FormatError("unsupported embedding file version " + std::to_string(version));
  const auto dim = binio::get<std::uint32_t>(is, "dim");
  const auto count = binio::get<std::uint64_t>(is, "count");
  std::vector<EmbeddingPair> pairs;
  for (std::uint64_t i = 0; i < count; ++i) {
    EmbeddingPair p;
    p.sample_id = binio::get_string(is, "sample_id");
    p.generator_id = binio::get_string(is, "generator_id");
    const auto label = binio::get<std::uint8_t>(is, "label");
    if (label > 1) throw FormatError("invalid label byte in record " + std::to_string(i));
    p.label = static_cast<synthbench::Label>(label);
    p.original.resize(dim);
    p.disrupted.resize(dim);
    for (std::uint32_t k = 0; k < dim; ++k) p.original[k] = binio::get<float>(is, "embedding");
    for (std::uint32_t k = 0; k < dim; ++k) p.disrupted[k] = binio::get<float>(is, "embedding");
    if (!p.original.allFinite() || !p.disrupted.allFinite())
      throw FormatError("non-finite embedding in record " + std::to_string(i));
    pairs.push_back(std::move(p));
  }
  if (is.peek() != std::char_traits<char>::eof())
    throw FormatError("count field disagrees with records present (trailing data)");
  return pairs;
}

}  // namespace d3::backbone
