#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "d3/image.hpp"
#include "d3/imagekit.hpp"
#include "d3/rng.hpp"
#include "d3/synthbench.hpp"

namespace d3::backbone {

using Embedding = Eigen::VectorXf;

struct EmbeddingPair {
  std::string sample_id;
  std::string generator_id;
  synthbench::Label label = synthbench::Label::real;
  Embedding original;   // e_o
  Embedding disrupted;  // e_s
};

enum class BackboneKind { toy, file };

struct BackboneSpec {
  BackboneKind kind = BackboneKind::toy;
  int toy_patch_size = 14;
  int out_dim = 64;
  std::uint64_t weights_seed = 7;
  /// Scale applied to the high-pass residual before projection.
  double highpass_gain = 8.0;
  /// Amplitude of the sinusoidal positional vector added to both branches' pre-activations.
  double position_scale = 1.0;
  /// Mirror-symmetric weights and positions, so embed(hflip(x)) == embed(x).
  bool hflip_invariant = true;

  void validate() const;
  std::string key() const;
};

/// Frozen random-feature embedder standing in for a pretrained vision backbone.
///
/// Each toy_patch_size x toy_patch_size patch contributes two projections:
/// raw normalized pixels (plus a fixed positional vector) and the high-pass
/// residual (pixel minus its 3x3 box mean). Both pass through tanh and are
/// mean-pooled over patches; the halves are concatenated.
class ToyBackbone {
 public:
  explicit ToyBackbone(const BackboneSpec& spec);

  const BackboneSpec& spec() const { return spec_; }
  int dim() const { return spec_.out_dim; }

  Embedding embed(const Image& img) const;

  /// Hash of every frozen weight; unchanged for the lifetime of the object.
  std::uint64_t weights_hash() const;

 private:
  Eigen::MatrixXf positions(int grid_w, int grid_h) const;

  BackboneSpec spec_;
  Eigen::MatrixXf raw_proj_;       // patch_len x out_dim/2
  Eigen::MatrixXf highpass_proj_;  // patch_len x out_dim/2
  Eigen::RowVectorXf offset_;      // constant part of the positional vector, out_dim/2
};

EmbeddingPair embed_pair(const ToyBackbone& backbone, const Image& img,
                         const imagekit::DisruptionSpec& disruption, Rng& rng);

/// Binary "D3EB" embedding file, little-endian, version 1.
void save_embeddings(const std::vector<EmbeddingPair>& pairs, const std::filesystem::path& path);
std::vector<EmbeddingPair> load_embeddings(const std::filesystem::path& path);

inline constexpr std::uint16_t kEmbeddingFileVersion = 1;

}  // namespace d3::backbone
