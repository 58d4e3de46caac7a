#pragma once

// Trainable discrepancy heads: token stack -> (attention | MLP | transformer) -> linear
// classifier, with exact analytic gradients of the binary cross-entropy loss.

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <algorithm>
#include <stdexcept>
#include <string>
#include <vector>

#include "d3/backbone.hpp"
#include "d3/image.hpp"
#include "d3/rng.hpp"

namespace d3::head {

enum class HeadKind : std::uint8_t { fc_only = 0, mlp = 1, self_attention = 2, transformer2 = 3 };

/// Which embeddings feed the token stack.
enum class BranchMode : std::uint8_t {
  dual = 0,               // [e_o, e_s]
  original_only = 1,      // [e_o]      (single-branch linear probe when paired with fc_only)
  original_original = 2,  // [e_o, e_o]
  shuffled_shuffled = 3,  // [e_s, e_s]
};

std::string to_string(HeadKind kind);
std::string to_string(BranchMode mode);
HeadKind head_kind_from_string(const std::string& s);
BranchMode branch_mode_from_string(const std::string& s);

inline int token_count(BranchMode mode) { return mode == BranchMode::original_only ? 1 : 2; }

inline constexpr int kTransformerHeads = 4;
inline constexpr int kTransformerLayers = 2;
inline constexpr double kLayerNormEps = 1e-5;
inline constexpr double kProbClamp = 1e-7;

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

struct ParamBlock {
  std::string name;
  int rows;
  int cols;
  Eigen::Index offset;
};

/// Ordered list of named weight blocks packed row-major into one flat vector.
class Layout {
 public:
  Layout() = default;
  Layout(HeadKind kind, int dim, int tokens);

  const std::vector<ParamBlock>& blocks() const { return blocks_; }
  Eigen::Index size() const { return size_; }
  const ParamBlock& find(const std::string& name) const;

 private:
  void add(std::string name, int rows, int cols);
  std::vector<ParamBlock> blocks_;
  Eigen::Index size_ = 0;
};

/// Weights of one head, stored as a flat vector with a named layout.
template <typename Scalar>
struct HeadParams {
  HeadKind kind = HeadKind::self_attention;
  BranchMode branches = BranchMode::dual;
  int dim = 0;
  Layout layout;
  Vector<Scalar> values;

  HeadParams() = default;
  HeadParams(HeadKind k, BranchMode b, int d)
      : kind(k), branches(b), dim(d), layout(k, d, token_count(b)),
        values(Vector<Scalar>::Zero(layout.size())) {}

  int tokens() const { return token_count(branches); }

  Eigen::Map<RowMatrix<Scalar>> mat(const std::string& name) {
    const auto& b = layout.find(name);
    return {values.data() + b.offset, b.rows, b.cols};
  }
  Eigen::Map<const RowMatrix<Scalar>> mat(const std::string& name) const {
    const auto& b = layout.find(name);
    return {values.data() + b.offset, b.rows, b.cols};
  }
  Eigen::Map<Vector<Scalar>> vec(const std::string& name) {
    const auto& b = layout.find(name);
    return {values.data() + b.offset, static_cast<Eigen::Index>(b.rows) * b.cols};
  }
  Eigen::Map<const Vector<Scalar>> vec(const std::string& name) const {
    const auto& b = layout.find(name);
    return {values.data() + b.offset, static_cast<Eigen::Index>(b.rows) * b.cols};
  }

  template <typename Other>
  HeadParams<Other> cast() const {
    HeadParams<Other> out;
    out.kind = kind;
    out.branches = branches;
    out.dim = dim;
    out.layout = layout;
    out.values = values.template cast<Other>();
    return out;
  }
};

/// Gradient with the same layout as the parameters it belongs to.
template <typename Scalar>
using HeadGrad = HeadParams<Scalar>;

/// Scaled-Gaussian projections (std 1/sqrt(fan_in)), unit LayerNorm gains, zero classifier.
template <typename Scalar>
HeadParams<Scalar> init_params(HeadKind kind, BranchMode branches, int dim, Rng& rng) {
  HeadParams<Scalar> p(kind, branches, dim);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (const auto& b : p.layout.blocks()) {
    auto v = p.values.segment(b.offset, static_cast<Eigen::Index>(b.rows) * b.cols);
    const std::string& n = b.name;
    const bool is_gain = n.size() >= 2 && n.compare(n.size() - 2, 2, ".g") == 0;
    const bool is_bias = n.rfind("b_", 0) == 0 || (n.size() >= 2 && n.compare(n.size() - 2, 2, ".b") == 0) ||
                         n.find(".b_") != std::string::npos;
    const bool is_classifier = n == "w_fc" || n == "b_fc" || n == "w_out" || n == "b_out";
    if (is_gain) {
      v.setOnes();
    } else if (is_bias || is_classifier) {
      v.setZero();
    } else {
      const double sd = 1.0 / std::sqrt(static_cast<double>(b.rows));
      for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = static_cast<Scalar>(sd * normal(rng));
    }
  }
  return p;
}

/// Token stack: one row per branch embedding.
template <typename Scalar>
RowMatrix<Scalar> make_tokens(const backbone::EmbeddingPair& pair, BranchMode mode) {
  const auto d = pair.original.size();
  if (pair.disrupted.size() != d) throw InvalidInput("embedding pair dimensions differ");
  if (!pair.original.allFinite() || !pair.disrupted.allFinite())
    throw InvalidInput("non-finite embedding");
  RowMatrix<Scalar> x(token_count(mode), d);
  const auto e_o = pair.original.cast<Scalar>();
  const auto e_s = pair.disrupted.cast<Scalar>();
  switch (mode) {
    case BranchMode::dual: x.row(0) = e_o.transpose(); x.row(1) = e_s.transpose(); break;
    case BranchMode::original_only: x.row(0) = e_o.transpose(); break;
    case BranchMode::original_original: x.row(0) = e_o.transpose(); x.row(1) = e_o.transpose(); break;
    case BranchMode::shuffled_shuffled: x.row(0) = e_s.transpose(); x.row(1) = e_s.transpose(); break;
  }
  return x;
}

template <typename Scalar>
Scalar sigmoid(Scalar z) {
  return z >= 0 ? Scalar(1) / (Scalar(1) + std::exp(-z)) : std::exp(z) / (Scalar(1) + std::exp(z));
}

/// Binary cross-entropy with the probability clamped to [eps, 1 - eps].
template <typename Scalar>
Scalar bce_loss(Scalar probability, int label) {
  const Scalar eps = static_cast<Scalar>(kProbClamp);
  const Scalar p = std::clamp(probability, eps, Scalar(1) - eps);
  return label == 1 ? -std::log(p) : -std::log(Scalar(1) - p);
}

namespace detail {

template <typename Scalar>
void softmax_rows(RowMatrix<Scalar>& s) {
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    s.row(i).array() -= s.row(i).maxCoeff();
    s.row(i) = s.row(i).array().exp().matrix();
    s.row(i) /= s.row(i).sum();
  }
}

// dS from dA through a row-wise softmax whose output is A.
template <typename Scalar>
RowMatrix<Scalar> softmax_rows_backward(const RowMatrix<Scalar>& a, const RowMatrix<Scalar>& da) {
  RowMatrix<Scalar> ds = a.cwiseProduct(da);
  const Vector<Scalar> row_dot = ds.rowwise().sum();
  ds -= (a.array().colwise() * row_dot.array()).matrix();
  return ds;
}

template <typename Scalar>
struct LayerNormCache {
  RowMatrix<Scalar> xhat;
  Vector<Scalar> rstd;
};

template <typename Scalar, typename G, typename B>
RowMatrix<Scalar> layer_norm(const RowMatrix<Scalar>& x, const G& gain, const B& bias,
                             LayerNormCache<Scalar>& cache) {
  const auto cols = static_cast<Scalar>(x.cols());
  cache.xhat.resize(x.rows(), x.cols());
  cache.rstd.resize(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const Scalar mu = x.row(i).sum() / cols;
    const auto centered = (x.row(i).array() - mu).matrix();
    const Scalar var = centered.squaredNorm() / cols;
    cache.rstd[i] = Scalar(1) / std::sqrt(var + static_cast<Scalar>(kLayerNormEps));
    cache.xhat.row(i) = centered * cache.rstd[i];
  }
  RowMatrix<Scalar> y = cache.xhat.array().rowwise() * gain.transpose().array();
  y.rowwise() += bias.transpose();
  return y;
}

template <typename Scalar, typename G, typename DG, typename DB>
RowMatrix<Scalar> layer_norm_backward(const RowMatrix<Scalar>& dy, const LayerNormCache<Scalar>& cache,
                                      const G& gain, DG&& dgain, DB&& dbias) {
  const auto cols = static_cast<Scalar>(dy.cols());
  dgain += dy.cwiseProduct(cache.xhat).colwise().sum().transpose();
  dbias += dy.colwise().sum().transpose();
  RowMatrix<Scalar> dx(dy.rows(), dy.cols());
  for (Eigen::Index i = 0; i < dy.rows(); ++i) {
    const Vector<Scalar> dxhat = dy.row(i).transpose().cwiseProduct(gain);
    const Scalar mean_d = dxhat.sum() / cols;
    const Scalar mean_dx = dxhat.dot(cache.xhat.row(i).transpose()) / cols;
    dx.row(i) = cache.rstd[i] *
                (dxhat.array() - mean_d - cache.xhat.row(i).transpose().array() * mean_dx).matrix().transpose();
  }
  return dx;
}

template <typename Scalar>
Scalar gelu(Scalar x) {
  return Scalar(0.5) * x * (Scalar(1) + std::erf(x / std::sqrt(Scalar(2))));
}

template <typename Scalar>
Scalar gelu_grad(Scalar x) {
  const Scalar pdf = std::exp(Scalar(-0.5) * x * x) / std::sqrt(Scalar(2) * std::numbers::pi_v<Scalar>);
  return Scalar(0.5) * (Scalar(1) + std::erf(x / std::sqrt(Scalar(2)))) + x * pdf;
}

template <typename Scalar>
Eigen::Map<const Vector<Scalar>> flatten(const RowMatrix<Scalar>& m) {
  return {m.data(), m.size()};
}

}  // namespace detail

/// Intermediate activations kept for the backward pass.
template <typename Scalar>
struct ForwardCache {
  RowMatrix<Scalar> tokens;
  RowMatrix<Scalar> fused;  // E, as a T x D matrix (row-major flattening is the 2D vector)
  Scalar logit = 0;
  Scalar probability = 0;

  // self_attention
  RowMatrix<Scalar> q, k, v, attn, attended;
  // mlp
  Vector<Scalar> pre_act;

  // transformer2, per layer
  struct Layer {
    RowMatrix<Scalar> x_in, n1, q, k, v, hcat, x_mid, n2, f1, g;
    std::vector<RowMatrix<Scalar>> attn;
    detail::LayerNormCache<Scalar> ln1, ln2;
  };
  std::vector<Layer> layers;
  detail::LayerNormCache<Scalar> ln_final;
};

template <typename Scalar>
struct Output {
  Scalar logit;
  Scalar probability;
};

namespace detail {

template <typename Scalar>
RowMatrix<Scalar> transformer_layer(const HeadParams<Scalar>& p, int l, const RowMatrix<Scalar>& x,
                                    typename ForwardCache<Scalar>::Layer& c) {
  const std::string pre = "l" + std::to_string(l) + ".";
  const int d = p.dim;
  const int dh = d / kTransformerHeads;
  c.x_in = x;
  c.n1 = layer_norm<Scalar>(x, p.vec(pre + "ln1.g"), p.vec(pre + "ln1.b"), c.ln1);
  c.q = c.n1 * p.mat(pre + "W_q");
  c.q.rowwise() += p.vec(pre + "b_q").transpose();
  c.k = c.n1 * p.mat(pre + "W_k");
  c.k.rowwise() += p.vec(pre + "b_k").transpose();
  c.v = c.n1 * p.mat(pre + "W_v");
  c.v.rowwise() += p.vec(pre + "b_v").transpose();
  c.hcat.resize(x.rows(), d);
  c.attn.assign(kTransformerHeads, RowMatrix<Scalar>());
  const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(dh));
  for (int h = 0; h < kTransformerHeads; ++h) {
    RowMatrix<Scalar> s = c.q.middleCols(h * dh, dh) * c.k.middleCols(h * dh, dh).transpose() * scale;
    softmax_rows(s);
    c.hcat.middleCols(h * dh, dh) = s * c.v.middleCols(h * dh, dh);
    c.attn[h] = std::move(s);
  }
  RowMatrix<Scalar> o = c.hcat * p.mat(pre + "W_o");
  o.rowwise() += p.vec(pre + "b_o").transpose();
  c.x_mid = x + o;
  c.n2 = layer_norm<Scalar>(c.x_mid, p.vec(pre + "ln2.g"), p.vec(pre + "ln2.b"), c.ln2);
  c.f1 = c.n2 * p.mat(pre + "W_ff1");
  c.f1.rowwise() += p.vec(pre + "b_ff1").transpose();
  c.g = c.f1.unaryExpr([](Scalar z) { return gelu(z); });
  RowMatrix<Scalar> f2 = c.g * p.mat(pre + "W_ff2");
  f2.rowwise() += p.vec(pre + "b_ff2").transpose();
  return c.x_mid + f2;
}

template <typename Scalar>
RowMatrix<Scalar> transformer_layer_backward(const HeadParams<Scalar>& p, int l,
                                             const typename ForwardCache<Scalar>::Layer& c,
                                             const RowMatrix<Scalar>& dout, HeadGrad<Scalar>& g) {
  const std::string pre = "l" + std::to_string(l) + ".";
  const int d = p.dim;
  const int dh = d / kTransformerHeads;
  // x_out = x_mid + FF(LN2(x_mid))
  g.mat(pre + "W_ff2") += c.g.transpose() * dout;
  g.vec(pre + "b_ff2") += dout.colwise().sum().transpose();
  RowMatrix<Scalar> dg = dout * p.mat(pre + "W_ff2").transpose();
  RowMatrix<Scalar> df1 = dg.cwiseProduct(c.f1.unaryExpr([](Scalar z) { return gelu_grad(z); }));
  g.mat(pre + "W_ff1") += c.n2.transpose() * df1;
  g.vec(pre + "b_ff1") += df1.colwise().sum().transpose();
  RowMatrix<Scalar> dn2 = df1 * p.mat(pre + "W_ff1").transpose();
  RowMatrix<Scalar> dx_mid =
      dout + layer_norm_backward<Scalar>(dn2, c.ln2, p.vec(pre + "ln2.g"), g.vec(pre + "ln2.g"),
                                         g.vec(pre + "ln2.b"));
  // x_mid = x_in + MHA(LN1(x_in))
  g.mat(pre + "W_o") += c.hcat.transpose() * dx_mid;
  g.vec(pre + "b_o") += dx_mid.colwise().sum().transpose();
  RowMatrix<Scalar> dhcat = dx_mid * p.mat(pre + "W_o").transpose();
  RowMatrix<Scalar> dq(c.q.rows(), d), dk(c.k.rows(), d), dv(c.v.rows(), d);
  const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(dh));
  for (int h = 0; h < kTransformerHeads; ++h) {
    const auto& a = c.attn[h];
    const RowMatrix<Scalar> dh_h = dhcat.middleCols(h * dh, dh);
    const RowMatrix<Scalar> da = dh_h * c.v.middleCols(h * dh, dh).transpose();
    dv.middleCols(h * dh, dh) = a.transpose() * dh_h;
    const RowMatrix<Scalar> ds = softmax_rows_backward<Scalar>(a, da) * scale;
    dq.middleCols(h * dh, dh) = ds * c.k.middleCols(h * dh, dh);
    dk.middleCols(h * dh, dh) = ds.transpose() * c.q.middleCols(h * dh, dh);
  }
  g.mat(pre + "W_q") += c.n1.transpose() * dq;
  g.mat(pre + "W_k") += c.n1.transpose() * dk;
  g.mat(pre + "W_v") += c.n1.transpose() * dv;
  g.vec(pre + "b_q") += dq.colwise().sum().transpose();
  g.vec(pre + "b_k") += dk.colwise().sum().transpose();
  g.vec(pre + "b_v") += dv.colwise().sum().transpose();
  RowMatrix<Scalar> dn1 = dq * p.mat(pre + "W_q").transpose() + dk * p.mat(pre + "W_k").transpose() +
                          dv * p.mat(pre + "W_v").transpose();
  return dx_mid + layer_norm_backward<Scalar>(dn1, c.ln1, p.vec(pre + "ln1.g"), g.vec(pre + "ln1.g"),
                                              g.vec(pre + "ln1.b"));
}

}  // namespace detail

/// Forward pass from a token stack (T x D), filling the cache for backward.
template <typename Scalar>
Output<Scalar> forward(const HeadParams<Scalar>& p, const RowMatrix<Scalar>& tokens,
                       ForwardCache<Scalar>& c) {
  if (tokens.cols() != p.dim || tokens.rows() != p.tokens())
    throw InvalidInput("token stack shape does not match head parameters");
  if (!tokens.allFinite()) throw InvalidInput("non-finite embedding");
  c.tokens = tokens;
  switch (p.kind) {
    case HeadKind::fc_only: {
      c.fused = tokens;
      c.logit = p.vec("w_fc").dot(detail::flatten(c.fused)) + p.vec("b_fc")[0];
      break;
    }
    case HeadKind::self_attention: {
      c.q = tokens * p.mat("W_q");
      c.k = tokens * p.mat("W_k");
      c.v = tokens * p.mat("W_v");
      c.attn = c.q * c.k.transpose() / std::sqrt(static_cast<Scalar>(p.dim));
      detail::softmax_rows(c.attn);
      c.attended = c.attn * c.v;
      c.fused = c.attended * p.mat("W_o");
      c.logit = p.vec("w_fc").dot(detail::flatten(c.fused)) + p.vec("b_fc")[0];
      break;
    }
    case HeadKind::mlp: {
      c.fused = tokens;
      c.pre_act = (detail::flatten(c.fused).transpose() * p.mat("W_1")).transpose() + p.vec("b_1");
      c.logit = p.vec("w_out").dot(c.pre_act.cwiseMax(Scalar(0))) + p.vec("b_out")[0];
      break;
    }
    case HeadKind::transformer2: {
      c.layers.resize(kTransformerLayers);
      RowMatrix<Scalar> x = tokens;
      for (int l = 0; l < kTransformerLayers; ++l) x = detail::transformer_layer(p, l, x, c.layers[l]);
      c.fused = detail::layer_norm<Scalar>(x, p.vec("lnf.g"), p.vec("lnf.b"), c.ln_final);
      c.logit = p.vec("w_fc").dot(detail::flatten(c.fused)) + p.vec("b_fc")[0];
      break;
    }
  }
  c.probability = sigmoid(c.logit);
  return {c.logit, c.probability};
}

template <typename Scalar>
Output<Scalar> forward(const HeadParams<Scalar>& p, const backbone::EmbeddingPair& pair) {
  ForwardCache<Scalar> c;
  return forward(p, make_tokens<Scalar>(pair, p.branches), c);
}

/// Accumulates d(loss)/d(params) into g given d(loss)/d(logit).
template <typename Scalar>
void backward(const HeadParams<Scalar>& p, const ForwardCache<Scalar>& c, Scalar dlogit, HeadGrad<Scalar>& g) {
  const int d = p.dim;
  const int t = p.tokens();
  auto unflatten = [&](const auto& v) {
    return RowMatrix<Scalar>(Eigen::Map<const RowMatrix<Scalar>>(v.data(), t, d));
  };
  switch (p.kind) {
    case HeadKind::fc_only: {
      g.vec("w_fc") += dlogit * detail::flatten(c.fused);
      g.vec("b_fc")[0] += dlogit;
      break;
    }
    case HeadKind::self_attention: {
      g.vec("w_fc") += dlogit * detail::flatten(c.fused);
      g.vec("b_fc")[0] += dlogit;
      const Vector<Scalar> d_e = dlogit * p.vec("w_fc");
      const RowMatrix<Scalar> d_out = unflatten(d_e);
      g.mat("W_o") += c.attended.transpose() * d_out;
      const RowMatrix<Scalar> d_att = d_out * p.mat("W_o").transpose();
      const RowMatrix<Scalar> d_a = d_att * c.v.transpose();
      const RowMatrix<Scalar> d_v = c.attn.transpose() * d_att;
      const RowMatrix<Scalar> d_s =
          detail::softmax_rows_backward<Scalar>(c.attn, d_a) / std::sqrt(static_cast<Scalar>(d));
      const RowMatrix<Scalar> d_q = d_s * c.k;
      const RowMatrix<Scalar> d_k = d_s.transpose() * c.q;
      g.mat("W_q") += c.tokens.transpose() * d_q;
      g.mat("W_k") += c.tokens.transpose() * d_k;
      g.mat("W_v") += c.tokens.transpose() * d_v;
      break;
    }
    case HeadKind::mlp: {
      const Vector<Scalar> hidden = c.pre_act.cwiseMax(Scalar(0));
      g.vec("w_out") += dlogit * hidden;
      g.vec("b_out")[0] += dlogit;
      const Vector<Scalar> d_pre =
          (dlogit * p.vec("w_out")).cwiseProduct((c.pre_act.array() > Scalar(0)).template cast<Scalar>().matrix());
      g.mat("W_1") += detail::flatten(c.fused) * d_pre.transpose();
      g.vec("b_1") += d_pre;
      break;
    }
    case HeadKind::transformer2: {
      g.vec("w_fc") += dlogit * detail::flatten(c.fused);
      g.vec("b_fc")[0] += dlogit;
      const Vector<Scalar> d_e = dlogit * p.vec("w_fc");
      RowMatrix<Scalar> dx = detail::layer_norm_backward<Scalar>(unflatten(d_e), c.ln_final, p.vec("lnf.g"),
                                                                  g.vec("lnf.g"), g.vec("lnf.b"));
      for (int l = kTransformerLayers - 1; l >= 0; --l)
        dx = detail::transformer_layer_backward(p, l, c.layers[l], dx, g);
      break;
    }
  }
}

/// Per-sample loss and gradient; returns the clamped BCE loss.
template <typename Scalar>
Scalar loss_and_gradient(const HeadParams<Scalar>& p, const RowMatrix<Scalar>& tokens, int label,
                         HeadGrad<Scalar>& g) {
  ForwardCache<Scalar> c;
  const auto out = forward(p, tokens, c);
  // d/dlogit of BCE through the sigmoid is (p - y); finite even at the clamp boundary.
  backward(p, c, out.probability - static_cast<Scalar>(label), g);
  return bce_loss(out.probability, label);
}

template <typename Scalar>
Scalar loss(const HeadParams<Scalar>& p, const RowMatrix<Scalar>& tokens, int label) {
  ForwardCache<Scalar> c;
  return bce_loss(forward(p, tokens, c).probability, label);
}

/// Order-preserving batched forward; returns fake probabilities.
template <typename Scalar>
std::vector<Scalar> predict_batch(const HeadParams<Scalar>& p, const std::vector<backbone::EmbeddingPair>& pairs) {
  std::vector<Scalar> out;
  out.reserve(pairs.size());
  ForwardCache<Scalar> c;
  for (const auto& pair : pairs) {
    if (pair.original.size() != p.dim) throw InvalidInput("embedding dimension does not match head");
    out.push_back(forward(p, make_tokens<Scalar>(pair, p.branches), c).probability);
  }
  return out;
}

}  // namespace d3::head
