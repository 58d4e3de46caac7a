#pragma once

// Loop-level re-implementation of every head's forward pass on plain vectors.

#include <cmath>
#include <string>
#include <vector>

#include "d3/head.hpp"

namespace oracle {

using Mat = std::vector<std::vector<double>>;

struct Weights {
  const d3::head::HeadParams<double>& p;
  Mat m(const std::string& name) const {
    const auto& b = p.layout.find(name);
    Mat out(b.rows, std::vector<double>(b.cols));
    for (int r = 0; r < b.rows; ++r)
      for (int c = 0; c < b.cols; ++c) out[r][c] = p.values[b.offset + r * b.cols + c];
    return out;
  }
  std::vector<double> v(const std::string& name) const {
    const auto& b = p.layout.find(name);
    std::vector<double> out(static_cast<std::size_t>(b.rows) * b.cols);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = p.values[b.offset + static_cast<Eigen::Index>(i)];
    return out;
  }
};

inline Mat matmul(const Mat& a, const Mat& b) {
  Mat out(a.size(), std::vector<double>(b[0].size(), 0.0));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t k = 0; k < b.size(); ++k)
      for (std::size_t j = 0; j < b[0].size(); ++j) out[i][j] += a[i][k] * b[k][j];
  return out;
}

inline Mat add_bias(Mat x, const std::vector<double>& b) {
  for (auto& row : x)
    for (std::size_t j = 0; j < row.size(); ++j) row[j] += b[j];
  return x;
}

inline std::vector<double> softmax(std::vector<double> s) {
  double mx = s[0];
  for (double v : s) mx = std::max(mx, v);
  double z = 0.0;
  for (double& v : s) z += (v = std::exp(v - mx));
  for (double& v : s) v /= z;
  return s;
}

// Attention of q (T x dh) over k, v with the given scale.
inline Mat attend(const Mat& q, const Mat& k, const Mat& v, double scale) {
  Mat out(q.size(), std::vector<double>(v[0].size(), 0.0));
  for (std::size_t i = 0; i < q.size(); ++i) {
    std::vector<double> s(k.size());
    for (std::size_t j = 0; j < k.size(); ++j) {
      double dot = 0.0;
      for (std::size_t c = 0; c < q[i].size(); ++c) dot += q[i][c] * k[j][c];
      s[j] = dot * scale;
    }
    s = softmax(s);
    for (std::size_t j = 0; j < k.size(); ++j)
      for (std::size_t c = 0; c < v[j].size(); ++c) out[i][c] += s[j] * v[j][c];
  }
  return out;
}

inline Mat layer_norm(const Mat& x, const std::vector<double>& g, const std::vector<double>& b) {
  Mat out = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double n = static_cast<double>(x[i].size());
    double mu = 0.0, var = 0.0;
    for (double v : x[i]) mu += v;
    mu /= n;
    for (double v : x[i]) var += (v - mu) * (v - mu);
    var /= n;
    for (std::size_t j = 0; j < x[i].size(); ++j)
      out[i][j] = (x[i][j] - mu) / std::sqrt(var + d3::head::kLayerNormEps) * g[j] + b[j];
  }
  return out;
}

inline Mat columns(const Mat& x, std::size_t from, std::size_t count) {
  Mat out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i].assign(x[i].begin() + from, x[i].begin() + from + count);
  return out;
}

inline double dot_flat(const Mat& x, const std::vector<double>& w) {
  double s = 0.0;
  std::size_t k = 0;
  for (const auto& row : x)
    for (double v : row) s += v * w[k++];
  return s;
}

/// Logit of the head on a T x D token stack.
inline double head_logit(const d3::head::HeadParams<double>& p, const Mat& tokens) {
  using d3::head::HeadKind;
  const Weights w{p};
  const std::size_t d = tokens[0].size();
  switch (p.kind) {
    case HeadKind::fc_only:
      return dot_flat(tokens, w.v("w_fc")) + w.v("b_fc")[0];
    case HeadKind::self_attention: {
      const Mat q = matmul(tokens, w.m("W_q")), k = matmul(tokens, w.m("W_k")), v = matmul(tokens, w.m("W_v"));
      const Mat fused = matmul(attend(q, k, v, 1.0 / std::sqrt(static_cast<double>(d))), w.m("W_o"));
      return dot_flat(fused, w.v("w_fc")) + w.v("b_fc")[0];
    }
    case HeadKind::mlp: {
      Mat flat(1);
      for (const auto& row : tokens) flat[0].insert(flat[0].end(), row.begin(), row.end());
      Mat h = add_bias(matmul(flat, w.m("W_1")), w.v("b_1"));
      for (double& v : h[0]) v = std::max(v, 0.0);
      return dot_flat(h, w.v("w_out")) + w.v("b_out")[0];
    }
    case HeadKind::transformer2: {
      const std::size_t heads = d3::head::kTransformerHeads, dh = d / heads;
      Mat x = tokens;
      for (int l = 0; l < d3::head::kTransformerLayers; ++l) {
        const std::string pre = "l" + std::to_string(l) + ".";
        const Mat n1 = layer_norm(x, w.v(pre + "ln1.g"), w.v(pre + "ln1.b"));
        const Mat q = add_bias(matmul(n1, w.m(pre + "W_q")), w.v(pre + "b_q"));
        const Mat k = add_bias(matmul(n1, w.m(pre + "W_k")), w.v(pre + "b_k"));
        const Mat v = add_bias(matmul(n1, w.m(pre + "W_v")), w.v(pre + "b_v"));
        Mat cat(x.size());
        for (std::size_t h = 0; h < heads; ++h) {
          const Mat o = attend(columns(q, h * dh, dh), columns(k, h * dh, dh), columns(v, h * dh, dh),
                               1.0 / std::sqrt(static_cast<double>(dh)));
          for (std::size_t i = 0; i < x.size(); ++i) cat[i].insert(cat[i].end(), o[i].begin(), o[i].end());
        }
        const Mat attn_out = add_bias(matmul(cat, w.m(pre + "W_o")), w.v(pre + "b_o"));
        for (std::size_t i = 0; i < x.size(); ++i)
          for (std::size_t j = 0; j < d; ++j) x[i][j] += attn_out[i][j];
        Mat f = add_bias(matmul(layer_norm(x, w.v(pre + "ln2.g"), w.v(pre + "ln2.b")), w.m(pre + "W_ff1")),
                         w.v(pre + "b_ff1"));
        for (auto& row : f)
          for (double& v : row) v = 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0)));
        const Mat f2 = add_bias(matmul(f, w.m(pre + "W_ff2")), w.v(pre + "b_ff2"));
        for (std::size_t i = 0; i < x.size(); ++i)
          for (std::size_t j = 0; j < d; ++j) x[i][j] += f2[i][j];
      }
      return dot_flat(layer_norm(x, w.v("lnf.g"), w.v("lnf.b")), w.v("w_fc")) + w.v("b_fc")[0];
    }
  }
  return 0.0;
}

}  // namespace oracle
