#pragma once

#include <array>
#include <string>
#include <vector>

#include "d3/image.hpp"
#include "d3/rng.hpp"

namespace d3::imagekit {

enum class DisruptionKind { identity, patch_shuffle, horizontal_flip, vertical_flip, random_rotation };

std::string to_string(DisruptionKind kind);
DisruptionKind disruption_from_string(const std::string& name);

struct DisruptionSpec {
  DisruptionKind kind = DisruptionKind::patch_shuffle;
  int patch_size = 14;
  std::array<double, 2> rotation_range_deg{0.0, 180.0};

  /// Throws InvalidInput on a malformed spec (rotation range outside [0, 360), patch < 1).
  void validate() const;
  /// Stable textual key, used for caching and provenance.
  std::string key() const;
};

enum class CropMode { random, center };

struct AugmentationPolicy {
  double blur_prob = 0.5;
  std::array<double, 2> blur_sigma_range{0.0, 3.0};
  double jpeg_prob = 0.5;
  std::array<int, 2> jpeg_quality_range{30, 100};
  int resize_to = 256;
  int crop_to = 224;
  CropMode crop_mode = CropMode::random;

  void validate() const;
};

enum class FlipAxis { horizontal, vertical };

inline constexpr std::uint8_t kMidGray = 128;

Image patch_shuffle(const Image& img, int patch_size, Rng& rng);
Image flip(const Image& img, FlipAxis axis);
/// Rotation about the image center, bilinear, counter-clockwise for positive angles.
Image rotate(const Image& img, double angle_deg, std::uint8_t fill = kMidGray);

/// Normalized discrete Gaussian taps for radius ceil(3 sigma); {1.0} for sigma = 0.
std::vector<double> gaussian_kernel(double sigma);
Image gaussian_blur(const Image& img, double sigma);
Image jpeg_roundtrip(const Image& img, int quality);

/// Bilinear resize with half-pixel centers (every output is a convex combination of inputs).
Image resize_bilinear(const Image& img, int width, int height);
Image crop(const Image& img, int x0, int y0, int width, int height);
/// Training path: resize to a resize_to square, then crop a crop_to square per crop_mode.
Image resize_and_crop(const Image& img, const AugmentationPolicy& policy, Rng& rng);
/// Evaluation path: direct resize to crop_to, no augmentation.
Image eval_resize(const Image& img, const AugmentationPolicy& policy);

/// resize_and_crop, then blur with blur_prob, then JPEG with jpeg_prob.
Image apply_augmentation(const Image& img, const AugmentationPolicy& policy, Rng& rng);

/// Applies a disruption; identity returns a copy.
Image apply_disruption(const Image& img, const DisruptionSpec& spec, Rng& rng);

/// Overwrites a window with a constant fill (used by occlusion maps).
Image occlude(const Image& img, int x0, int y0, int width, int height,
              std::uint8_t fill = kMidGray);

}  // namespace d3::imagekit
