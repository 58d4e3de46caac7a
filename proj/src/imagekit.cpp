#include "d3/imagekit.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>

namespace d3::imagekit {

std::string to_string(DisruptionKind kind) {
  switch (kind) {
    case DisruptionKind::identity: return "identity";
    case DisruptionKind::patch_shuffle: return "patch_shuffle";
    case DisruptionKind::horizontal_flip: return "horizontal_flip";
    case DisruptionKind::vertical_flip: return "vertical_flip";
    case DisruptionKind::random_rotation: return "random_rotation";
  }
  return "identity";
}

DisruptionKind disruption_from_string(const std::string& name) {
  for (auto k : {DisruptionKind::identity, DisruptionKind::patch_shuffle,
                 DisruptionKind::horizontal_flip, DisruptionKind::vertical_flip,
                 DisruptionKind::random_rotation}) {
    if (to_string(k) == name) return k;
  }
  throw InvalidInput("unknown disruption kind: " + name);
}

void DisruptionSpec::validate() const {
  if (kind == DisruptionKind::patch_shuffle && patch_size < 1)
    throw InvalidInput("patch_size must be >= 1");
  if (kind == DisruptionKind::random_rotation) {
    const auto [lo, hi] = rotation_range_deg;
    if (!(lo >= 0.0 && hi < 360.0 && lo <= hi))
      throw InvalidInput("rotation range must be an interval inside [0, 360)");
  }
}

std::string DisruptionSpec::key() const {
  std::ostringstream os;
  os << to_string(kind);
  if (kind == DisruptionKind::patch_shuffle) os << ":" << patch_size;
  if (kind == DisruptionKind::random_rotation)
    os << ":" << rotation_range_deg[0] << "-" << rotation_range_deg[1];
  return os.str();
}

void AugmentationPolicy::validate() const {
  auto prob_ok = [](double p) { return p >= 0.0 && p <= 1.0; };
  if (!prob_ok(blur_prob) || !prob_ok(jpeg_prob))
    throw InvalidInput("augmentation probabilities must lie in [0, 1]");
  if (blur_sigma_range[0] < 0.0 || blur_sigma_range[0] > blur_sigma_range[1])
    throw InvalidInput("blur sigma range must be a non-negative interval");
  if (jpeg_quality_range[0] < 1 || jpeg_quality_range[1] > 100 ||
      jpeg_quality_range[0] > jpeg_quality_range[1])
    throw InvalidInput("jpeg quality range must lie in [1, 100]");
  if (crop_to < 1 || crop_to > resize_to) throw InvalidInput("crop_to must be in [1, resize_to]");
}

Image patch_shuffle(const Image& img, int patch_size, Rng& rng) {
  if (patch_size < 1 || img.width() % patch_size != 0 || img.height() % patch_size != 0)
    throw InvalidInput("patch size " + std::to_string(patch_size) + " does not divide " +
                       std::to_string(img.width()) + "x" + std::to_string(img.height()));
  const int gw = img.width() / patch_size;
  const int gh = img.height() / patch_size;
  std::vector<int> perm(static_cast<std::size_t>(gw) * gh);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);

  Image out(img.width(), img.height());
  const std::size_t row_bytes = static_cast<std::size_t>(patch_size) * Image::kChannels;
  for (int dst = 0; dst < gw * gh; ++dst) {
    const int src = perm[dst];
    const int sx = (src % gw) * patch_size, sy = (src / gw) * patch_size;
    const int dx = (dst % gw) * patch_size, dy = (dst / gw) * patch_size;
    for (int r = 0; r < patch_size; ++r) {
      std::copy_n(img.bytes().data() + img.index(sx, sy + r), row_bytes, out.bytes().data() + out.index(dx, dy + r));
    }
  }
  return out;
}

Image flip(const Image& img, FlipAxis axis) {
  Image out(img.width(), img.height());
  const int w = img.width(), h = img.height();
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const int sx = axis == FlipAxis::horizontal ? w - 1 - x : x;
      const int sy = axis == FlipAxis::vertical ? h - 1 - y : y;
      for (int c = 0; c < 3; ++c) out.at(x, y, c) = img.at(sx, sy, c);
    }
  return out;
}

namespace {

double snap(double v) {
  const double r = std::round(v);
  return std::abs(v - r) < 1e-9 ? r : v;
}

// Bilinear sample at (sx, sy), which must lie inside [0, w-1] x [0, h-1].
double sample_bilinear(const Image& img, double sx, double sy, int c) {
  const int x0 = static_cast<int>(std::floor(sx));
  const int y0 = static_cast<int>(std::floor(sy));
  const int x1 = std::min(x0 + 1, img.width() - 1);
  const int y1 = std::min(y0 + 1, img.height() - 1);
  const double tx = sx - x0, ty = sy - y0;
  const double top = (1.0 - tx) * img.at(x0, y0, c) + tx * img.at(x1, y0, c);
  const double bot = (1.0 - tx) * img.at(x0, y1, c) + tx * img.at(x1, y1, c);
  return (1.0 - ty) * top + ty * bot;
}

}  // namespace

Image rotate(const Image& img, double angle_deg, std::uint8_t fill) {
  if (angle_deg == 0.0) return img;
  const int w = img.width(), h = img.height();
  const double theta = angle_deg * std::numbers::pi / 180.0;
  const double cs = std::cos(theta), sn = std::sin(theta);
  const double cx = (w - 1) / 2.0, cy = (h - 1) / 2.0;
  Image out(w, h, fill);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double dx = x - cx, dy = y - cy;
      const double sx = snap(cs * dx + sn * dy + cx);
      const double sy = snap(-sn * dx + cs * dy + cy);
      if (sx < 0.0 || sy < 0.0 || sx > w - 1 || sy > h - 1) continue;
      for (int c = 0; c < 3; ++c) out.at(x, y, c) = quantize(sample_bilinear(img, sx, sy, c));
    }
  return out;
}

std::vector<double> gaussian_kernel(double sigma) {
  if (!(sigma >= 0.0)) throw InvalidInput("blur sigma must be >= 0");
  if (sigma == 0.0) return {1.0};
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> taps(2 * radius + 1);
  for (int i = -radius; i <= radius; ++i)
    taps[i + radius] = std::exp(-0.5 * (i * i) / (sigma * sigma));
  const double sum = std::accumulate(taps.begin(), taps.end(), 0.0);
  for (auto& t : taps) t /= sum;
  return taps;
}

Image gaussian_blur(const Image& img, double sigma) {
  const auto taps = gaussian_kernel(sigma);
  if (taps.size() == 1) return img;
  const int radius = static_cast<int>(taps.size() / 2);
  const int w = img.width(), h = img.height();
  const int n_taps = static_cast<int>(taps.size());

  // Horizontal pass over a clamp-padded row, vertical pass over clamp-indexed rows.
  std::vector<double> tmp(static_cast<std::size_t>(w) * h * 3);
  std::vector<double> row(static_cast<std::size_t>(w + 2 * radius) * 3);
  for (int y = 0; y < h; ++y) {
    for (int x = -radius; x < w + radius; ++x) {
      const int sx = std::clamp(x, 0, w - 1);
      for (int c = 0; c < 3; ++c) row[static_cast<std::size_t>(x + radius) * 3 + c] = img.at(sx, y, c);
    }
    double* dst = tmp.data() + static_cast<std::size_t>(y) * w * 3;
    for (int i = 0; i < w * 3; ++i) {
      double acc = 0.0;
      const double* src = row.data() + i;
      for (int k = 0; k < n_taps; ++k) acc += taps[k] * src[k * 3];
      dst[i] = acc;
    }
  }
  Image out(w, h);
  std::vector<const double*> rows(n_taps);
  std::uint8_t* px = out.bytes().data();
  for (int y = 0; y < h; ++y) {
    for (int k = 0; k < n_taps; ++k)
      rows[k] = tmp.data() + static_cast<std::size_t>(std::clamp(y + k - radius, 0, h - 1)) * w * 3;
    for (int i = 0; i < w * 3; ++i) {
      double acc = 0.0;
      for (int k = 0; k < n_taps; ++k) acc += taps[k] * rows[k][i];
      *px++ = quantize(acc);
    }
  }
  return out;
}

Image jpeg_roundtrip(const Image& img, int quality) {
  return decode_jpeg(encode_jpeg(img, quality));
}

Image resize_bilinear(const Image& img, int width, int height) {
  if (width <= 0 || height <= 0) throw InvalidInput("resize target must be positive");
  if (width == img.width() && height == img.height()) return img;
  struct Tap {
    int i0, i1;
    double t;
  };
  auto taps = [](int out_len, int in_len) {
    const double scale = static_cast<double>(in_len) / out_len;
    std::vector<Tap> v(out_len);
    for (int o = 0; o < out_len; ++o) {
      const double s = std::clamp((o + 0.5) * scale - 0.5, 0.0, in_len - 1.0);
      const int i0 = static_cast<int>(std::floor(s));
      v[o] = {i0, std::min(i0 + 1, in_len - 1), s - i0};
    }
    return v;
  };
  const auto tx = taps(width, img.width());
  const auto ty = taps(height, img.height());
  Image out(width, height);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      for (int c = 0; c < 3; ++c) {
        const auto& a = tx[x];
        const auto& b = ty[y];
        const double top = (1.0 - a.t) * img.at(a.i0, b.i0, c) + a.t * img.at(a.i1, b.i0, c);
        const double bot = (1.0 - a.t) * img.at(a.i0, b.i1, c) + a.t * img.at(a.i1, b.i1, c);
        out.at(x, y, c) = quantize((1.0 - b.t) * top + b.t * bot);
      }
  return out;
}

Image crop(const Image& img, int x0, int y0, int width, int height) {
  if (x0 < 0 || y0 < 0 || width <= 0 || height <= 0 || x0 + width > img.width() ||
      y0 + height > img.height())
    throw InvalidInput("crop window outside image");
  Image out(width, height);
  for (int y = 0; y < height; ++y)
    std::copy_n(img.bytes().data() + img.index(x0, y0 + y), static_cast<std::size_t>(width) * 3,
                out.bytes().data() + out.index(0, y));
  return out;
}

Image resize_and_crop(const Image& img, const AugmentationPolicy& policy, Rng& rng) {
  const Image resized = resize_bilinear(img, policy.resize_to, policy.resize_to);
  const int slack = policy.resize_to - policy.crop_to;
  int x0 = slack / 2, y0 = slack / 2;
  if (policy.crop_mode == CropMode::random) {
    std::uniform_int_distribution<int> offset(0, slack);
    x0 = offset(rng);
    y0 = offset(rng);
  }
  return crop(resized, x0, y0, policy.crop_to, policy.crop_to);
}

Image eval_resize(const Image& img, const AugmentationPolicy& policy) {
  return resize_bilinear(img, policy.crop_to, policy.crop_to);
}

Image apply_augmentation(const Image& img, const AugmentationPolicy& policy, Rng& rng) {
  Image out = resize_and_crop(img, policy, rng);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  if (unit(rng) < policy.blur_prob) {
    const auto [lo, hi] = policy.blur_sigma_range;
    out = gaussian_blur(out, lo + (hi - lo) * unit(rng));
  }
  if (unit(rng) < policy.jpeg_prob) {
    std::uniform_int_distribution<int> quality(policy.jpeg_quality_range[0],
                                               policy.jpeg_quality_range[1]);
    out = jpeg_roundtrip(out, quality(rng));
  }
  return out;
}

Image apply_disruption(const Image& img, const DisruptionSpec& spec, Rng& rng) {
  switch (spec.kind) {
    case DisruptionKind::identity: return img;
    case DisruptionKind::patch_shuffle: return patch_shuffle(img, spec.patch_size, rng);
    case DisruptionKind::horizontal_flip: return flip(img, FlipAxis::horizontal);
    case DisruptionKind::vertical_flip: return flip(img, FlipAxis::vertical);
    case DisruptionKind::random_rotation: {
      std::uniform_real_distribution<double> unit(0.0, 1.0);
      const auto [lo, hi] = spec.rotation_range_deg;
      return rotate(img, lo + (hi - lo) * unit(rng));
    }
  }
  return img;
}

Image occlude(const Image& img, int x0, int y0, int width, int height, std::uint8_t fill) {
  Image out = img;
  const int x1 = std::min(img.width(), x0 + width), y1 = std::min(img.height(), y0 + height);
  for (int y = std::max(0, y0); y < y1; ++y)
    for (int x = std::max(0, x0); x < x1; ++x)
      for (int c = 0; c < 3; ++c) out.at(x, y, c) = fill;
  return out;
}

}  // namespace d3::imagekit
