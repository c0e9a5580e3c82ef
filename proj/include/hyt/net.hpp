#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "json.hpp"

#include "hyt/codec.hpp"
#include "hyt/error.hpp"
#include "hyt/random.hpp"

namespace hyt {

// Decoder-only transformer: learned absolute positions, pre-norm residual
// blocks (LayerNorm, causal multi-head attention, GELU MLP), final norm and
// an output projection that is optionally tied to the token embedding.
struct NetConfig {
  int vocab_size = 0;
  int d_model = 128;
  int n_heads = 4;
  int n_layers = 4;
  int context_len = 256;
  double init_scale = 0.02;
  std::uint64_t seed = 0;
  bool tied_output = false;

  int head_dim() const { return d_model / n_heads; }
  int mlp_dim() const { return 4 * d_model; }

  void validate() const {
    if (vocab_size < 2) throw ConfigError("vocab_size must be >= 2");
    if (d_model < 1 || n_heads < 1 || n_layers < 1 || context_len < 1) {
      throw ConfigError("network dimensions must be positive");
    }
    if (d_model % n_heads != 0) {
      throw ConfigError("d_model (" + std::to_string(d_model) + ") must be divisible by n_heads (" +
                        std::to_string(n_heads) + ")");
    }
    if (!(init_scale >= 0.0) || !std::isfinite(init_scale)) {
      throw ConfigError("init_scale must be finite and nonnegative");
    }
  }

  nlohmann::json to_json() const {
    return {{"vocab_size", vocab_size}, {"d_model", d_model},       {"n_heads", n_heads},
            {"n_layers", n_layers},     {"context_len", context_len}, {"init_scale", init_scale},
            {"seed", seed},             {"tied_output", tied_output}};
  }

  static NetConfig from_json(const nlohmann::json& j) {
    NetConfig c;
    c.vocab_size = j.value("vocab_size", c.vocab_size);
    c.d_model = j.value("d_model", c.d_model);
    c.n_heads = j.value("n_heads", c.n_heads);
    c.n_layers = j.value("n_layers", c.n_layers);
    c.context_len = j.value("context_len", c.context_len);
    c.init_scale = j.value("init_scale", c.init_scale);
    c.seed = j.value("seed", c.seed);
    c.tied_output = j.value("tied_output", c.tied_output);
    return c;
  }

  friend bool operator==(const NetConfig&, const NetConfig&) = default;
};

struct TensorRef {
  std::size_t offset = 0;
  int rows = 0;
  int cols = 0;
  std::size_t size() const { return static_cast<std::size_t>(rows) * cols; }
};

struct LayerRefs {
  TensorRef ln1_g, ln1_b, wqkv, bqkv, wo, bo, ln2_g, ln2_b, w1, b1, w2, b2;
};

// Offsets of every tensor inside one flat parameter vector.
struct ParamLayout {
  TensorRef tok_emb, pos_emb, lnf_g, lnf_b, head_w, head_b;
  std::vector<LayerRefs> layers;
  std::vector<std::pair<std::string, TensorRef>> named;
  std::size_t total = 0;

  ParamLayout() = default;
  explicit ParamLayout(const NetConfig& c) {
    const int d = c.d_model;
    tok_emb = add("tok_emb", c.vocab_size, d);
    pos_emb = add("pos_emb", c.context_len, d);
    for (int l = 0; l < c.n_layers; ++l) {
      const std::string p = "layer" + std::to_string(l) + ".";
      LayerRefs r;
      r.ln1_g = add(p + "ln1.g", 1, d);
      r.ln1_b = add(p + "ln1.b", 1, d);
      r.wqkv = add(p + "attn.wqkv", d, 3 * d);
      r.bqkv = add(p + "attn.bqkv", 1, 3 * d);
      r.wo = add(p + "attn.wo", d, d);
      r.bo = add(p + "attn.bo", 1, d);
      r.ln2_g = add(p + "ln2.g", 1, d);
      r.ln2_b = add(p + "ln2.b", 1, d);
      r.w1 = add(p + "mlp.w1", d, c.mlp_dim());
      r.b1 = add(p + "mlp.b1", 1, c.mlp_dim());
      r.w2 = add(p + "mlp.w2", c.mlp_dim(), d);
      r.b2 = add(p + "mlp.b2", 1, d);
      layers.push_back(r);
    }
    lnf_g = add("lnf.g", 1, d);
    lnf_b = add("lnf.b", 1, d);
    if (!c.tied_output) head_w = add("head.w", d, c.vocab_size);
    head_b = add("head.b", 1, c.vocab_size);
  }

 private:
  TensorRef add(std::string name, int rows, int cols) {
    TensorRef r{total, rows, cols};
    total += r.size();
    named.emplace_back(std::move(name), r);
    return r;
  }
};

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using RowVec = Eigen::Matrix<T, 1, Eigen::Dynamic>;
template <typename T>
using MatMap = Eigen::Map<Mat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const Mat<T>>;

// Accumulator type for reductions (norm statistics, softmax sums, loss).
template <typename T>
using Wide = std::conditional_t<std::is_same_v<T, float>, double, long double>;

// Fixed alignment keeps vectorized reductions bitwise reproducible.
template <typename T>
using AlignedVector = std::vector<T, Eigen::aligned_allocator<T>>;

template <typename T>
struct Parameters {
  NetConfig cfg;
  ParamLayout layout;
  AlignedVector<T> data;

  Parameters() = default;
  explicit Parameters(const NetConfig& c) : cfg(c), layout(c), data(layout.total, T(0)) {}

  MatMap<T> operator[](const TensorRef& r) { return MatMap<T>(data.data() + r.offset, r.rows, r.cols); }
  ConstMatMap<T> operator[](const TensorRef& r) const {
    return ConstMatMap<T>(data.data() + r.offset, r.rows, r.cols);
  }

  bool all_finite() const {
    for (T v : data) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }
};

template <typename To, typename From>
Parameters<To> cast_parameters(const Parameters<From>& p) {
  Parameters<To> out(p.cfg);
  for (std::size_t i = 0; i < p.data.size(); ++i) out.data[i] = static_cast<To>(p.data[i]);
  return out;
}

// Seeded Gaussian init; norm gains start at 1. Residual output projections
// are scaled down by sqrt(2 * n_layers).
template <typename T = float>
Parameters<T> init(const NetConfig& cfg) {
  cfg.validate();
  Parameters<T> p(cfg);
  Rng rng(mix_seed(cfg.seed, 0x6e6574));
  auto fill = [&](const TensorRef& r, double scale) {
    for (std::size_t i = 0; i < r.size(); ++i) {
      p.data[r.offset + i] = static_cast<T>(scale * standard_normal(rng));
    }
  };
  const double s = cfg.init_scale;
  const double resid = s / std::sqrt(2.0 * cfg.n_layers);
  fill(p.layout.tok_emb, s);
  fill(p.layout.pos_emb, s);
  for (const auto& l : p.layout.layers) {
    p[l.ln1_g].setConstant(T(1));
    p[l.ln2_g].setConstant(T(1));
    fill(l.wqkv, s);
    fill(l.wo, resid);
    fill(l.w1, s);
    fill(l.w2, resid);
  }
  p[p.layout.lnf_g].setConstant(T(1));
  if (!cfg.tied_output) fill(p.layout.head_w, s);
  return p;
}

namespace detail {

inline constexpr double kNormEps = 1e-5;

template <typename T>
T gelu(T u) {
  constexpr T c = T(0.7978845608028654);  // sqrt(2/pi)
  return T(0.5) * u * (T(1) + std::tanh(c * (u + T(0.044715) * u * u * u)));
}

template <typename T>
T gelu_grad(T u) {
  constexpr T c = T(0.7978845608028654);
  const T t = std::tanh(c * (u + T(0.044715) * u * u * u));
  return T(0.5) * (T(1) + t) + T(0.5) * u * (T(1) - t * t) * c * (T(1) + T(3 * 0.044715) * u * u);
}

// Row-wise LayerNorm. Writes the normalized input (xhat) and inverse std so
// the backward pass can reuse them.
template <typename T>
void layer_norm(const Mat<T>& x, const ConstMatMap<T>& g, const ConstMatMap<T>& b, Mat<T>& y,
                Mat<T>* xhat, std::vector<T>* rstd) {
  using W = Wide<T>;
  const Eigen::Index n = x.rows(), d = x.cols();
  y.resize(n, d);
  if (xhat) xhat->resize(n, d);
  if (rstd) rstd->resize(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    W mean = 0;
    for (Eigen::Index j = 0; j < d; ++j) mean += x(i, j);
    mean /= d;
    W var = 0;
    for (Eigen::Index j = 0; j < d; ++j) {
      const W c = x(i, j) - mean;
      var += c * c;
    }
    var /= d;
    const W r = W(1) / std::sqrt(var + W(kNormEps));
    for (Eigen::Index j = 0; j < d; ++j) {
      const T xh = static_cast<T>((x(i, j) - mean) * r);
      if (xhat) (*xhat)(i, j) = xh;
      y(i, j) = xh * g(0, j) + b(0, j);
    }
    if (rstd) (*rstd)[static_cast<std::size_t>(i)] = static_cast<T>(r);
  }
}

template <typename T>
void layer_norm_backward(const Mat<T>& dy, const Mat<T>& xhat, const std::vector<T>& rstd,
                         const ConstMatMap<T>& g, MatMap<T> dg, MatMap<T> db, Mat<T>& dx_accum) {
  using W = Wide<T>;
  const Eigen::Index n = dy.rows(), d = dy.cols();
  db.noalias() += dy.colwise().sum();
  dg.noalias() += dy.cwiseProduct(xhat).colwise().sum();
  std::vector<T> dxhat(static_cast<std::size_t>(d));
  for (Eigen::Index i = 0; i < n; ++i) {
    W m1 = 0, m2 = 0;
    for (Eigen::Index j = 0; j < d; ++j) {
      const T v = dy(i, j) * g(0, j);
      dxhat[static_cast<std::size_t>(j)] = v;
      m1 += v;
      m2 += W(v) * xhat(i, j);
    }
    m1 /= d;
    m2 /= d;
    const W r = rstd[static_cast<std::size_t>(i)];
    for (Eigen::Index j = 0; j < d; ++j) {
      dx_accum(i, j) += static_cast<T>(r * (dxhat[static_cast<std::size_t>(j)] - m1 - xhat(i, j) * m2));
    }
  }
}

// In-place softmax over the first `valid` entries of a row; entries past it
// are zeroed (causal mask).
template <typename T, typename Row>
void masked_softmax_row(Row&& row, Eigen::Index valid) {
  using W = Wide<T>;
  T mx = row(0);
  for (Eigen::Index j = 1; j < valid; ++j) mx = std::max(mx, row(j));
  W sum = 0;
  for (Eigen::Index j = 0; j < valid; ++j) {
    const T e = std::exp(row(j) - mx);
    row(j) = e;
    sum += e;
  }
  const T inv = static_cast<T>(W(1) / sum);
  for (Eigen::Index j = 0; j < valid; ++j) row(j) *= inv;
  for (Eigen::Index j = valid; j < row.size(); ++j) row(j) = T(0);
}

template <typename T>
void check_finite(const Mat<T>& m, const std::string& where) {
  if (!m.allFinite()) throw NumericError("non-finite activation in " + where);
}

}  // namespace detail

// One teacher-forced sequence: labels[i] is the token predicted at position
// i; only positions with mask[i] set contribute to the loss.
struct LabeledSequence {
  Tokens tokens;
  Tokens labels;
  std::vector<std::uint8_t> mask;
};

// input ++ target, shifted by one. The final target token is only ever a
// label, never an input.
inline LabeledSequence to_labeled(const TokenSample& s) {
  if (s.input.empty() || s.target.empty()) throw UsageError("sample needs input and target tokens");
  if (s.loss_mask.size() != s.target.size()) throw IntegrityError("loss mask length mismatch");
  LabeledSequence out;
  Tokens full = s.input;
  full.insert(full.end(), s.target.begin(), s.target.end());
  out.tokens.assign(full.begin(), full.end() - 1);
  out.labels.assign(full.begin() + 1, full.end());
  out.mask.assign(out.tokens.size(), 0);
  for (std::size_t k = 0; k < s.target.size(); ++k) out.mask[s.input.size() - 1 + k] = s.loss_mask[k];
  return out;
}

template <typename T>
struct LossResult {
  double loss = 0.0;                   // mean over sequences of per-sequence mean NLL
  std::vector<double> per_sequence;
  Parameters<T> grad;                  // empty unless requested
};

// Batched training forward/backward over concatenated sequences.
template <typename T>
class TrainingPass {
 public:
  TrainingPass(const Parameters<T>& p, std::span<const LabeledSequence> batch) : p_(p), batch_(batch) {
    if (batch.empty()) throw UsageError("empty batch");
    const auto& cfg = p.cfg;
    for (const auto& s : batch) {
      if (s.tokens.empty()) throw UsageError("empty sequence");
      if (static_cast<int>(s.tokens.size()) > cfg.context_len) {
        throw LengthError("sequence of length " + std::to_string(s.tokens.size()) +
                          " exceeds context_len " + std::to_string(cfg.context_len));
      }
      if (s.labels.size() != s.tokens.size() || s.mask.size() != s.tokens.size()) {
        throw IntegrityError("labels/mask length mismatch");
      }
      std::size_t active = 0;
      for (auto m : s.mask) active += m != 0;
      if (active == 0) throw UsageError("loss mask selects no positions");
      offsets_.push_back(total_);
      total_ += static_cast<Eigen::Index>(s.tokens.size());
    }
  }

  LossResult<T> run(bool with_grad) {
    forward();
    return loss_and_backward(with_grad);
  }

 private:
  struct LayerCache {
    Mat<T> x_in, xhat1, h1, qkv, att, x_mid, xhat2, h2, u, g;
    std::vector<T> rstd1, rstd2;
    std::vector<Mat<T>> probs;  // [sequence * n_heads + head]
  };

  void forward() {
    const auto& cfg = p_.cfg;
    const auto& L = p_.layout;
    const int d = cfg.d_model, H = cfg.n_heads, hd = cfg.head_dim();
    const T scale = T(1) / std::sqrt(T(hd));
    Mat<T> x(total_, d);
    const auto tok = p_[L.tok_emb];
    const auto pos = p_[L.pos_emb];
    for (std::size_t s = 0; s < batch_.size(); ++s) {
      const auto& toks = batch_[s].tokens;
      for (std::size_t i = 0; i < toks.size(); ++i) {
        if (toks[i] < 0 || toks[i] >= cfg.vocab_size) throw RangeError("token id out of range");
        x.row(offsets_[s] + static_cast<Eigen::Index>(i)) = tok.row(toks[i]) + pos.row(static_cast<Eigen::Index>(i));
      }
    }
    cache_.assign(L.layers.size(), {});
    for (std::size_t l = 0; l < L.layers.size(); ++l) {
      const auto& r = L.layers[l];
      auto& c = cache_[l];
      c.x_in = x;
      detail::layer_norm<T>(x, p_[r.ln1_g], p_[r.ln1_b], c.h1, &c.xhat1, &c.rstd1);
      c.qkv.noalias() = c.h1 * p_[r.wqkv];
      c.qkv.rowwise() += p_[r.bqkv].row(0);
      c.att.setZero(total_, d);
      c.probs.resize(batch_.size() * static_cast<std::size_t>(H));
      for (std::size_t s = 0; s < batch_.size(); ++s) {
        const Eigen::Index o = offsets_[s];
        const Eigen::Index n = static_cast<Eigen::Index>(batch_[s].tokens.size());
        for (int h = 0; h < H; ++h) {
          auto q = c.qkv.block(o, h * hd, n, hd);
          auto k = c.qkv.block(o, d + h * hd, n, hd);
          auto v = c.qkv.block(o, 2 * d + h * hd, n, hd);
          Mat<T>& P = c.probs[s * H + static_cast<std::size_t>(h)];
          P.noalias() = (q * k.transpose()) * scale;
          for (Eigen::Index i = 0; i < n; ++i) detail::masked_softmax_row<T>(P.row(i), i + 1);
          c.att.block(o, h * hd, n, hd).noalias() = P * v;
        }
      }
      x.noalias() += c.att * p_[r.wo];
      x.rowwise() += p_[r.bo].row(0);
      detail::check_finite(x, "layer " + std::to_string(l) + " attention");
      c.x_mid = x;
      detail::layer_norm<T>(x, p_[r.ln2_g], p_[r.ln2_b], c.h2, &c.xhat2, &c.rstd2);
      c.u.noalias() = c.h2 * p_[r.w1];
      c.u.rowwise() += p_[r.b1].row(0);
      c.g = c.u.unaryExpr([](T v) { return detail::gelu(v); });
      x.noalias() += c.g * p_[r.w2];
      x.rowwise() += p_[r.b2].row(0);
      detail::check_finite(x, "layer " + std::to_string(l) + " mlp");
    }
    x_final_ = std::move(x);
  }

  LossResult<T> loss_and_backward(bool with_grad) {
    using W = Wide<T>;
    const auto& cfg = p_.cfg;
    const auto& L = p_.layout;
    const int d = cfg.d_model, V = cfg.vocab_size;

    // Only labelled rows need logits.
    std::vector<Eigen::Index> rows;
    std::vector<TokenId> labels;
    std::vector<T> weights;
    LossResult<T> out;
    out.per_sequence.assign(batch_.size(), 0.0);
    for (std::size_t s = 0; s < batch_.size(); ++s) {
      const auto& seq = batch_[s];
      std::size_t active = 0;
      for (auto m : seq.mask) active += m != 0;
      const T w = T(1) / (static_cast<T>(active) * static_cast<T>(batch_.size()));
      for (std::size_t i = 0; i < seq.tokens.size(); ++i) {
        if (!seq.mask[i]) continue;
        if (seq.labels[i] < 0 || seq.labels[i] >= V) throw RangeError("label out of range");
        rows.push_back(offsets_[s] + static_cast<Eigen::Index>(i));
        labels.push_back(seq.labels[i]);
        weights.push_back(w);
      }
    }
    const Eigen::Index R = static_cast<Eigen::Index>(rows.size());
    Mat<T> xr(R, d);
    for (Eigen::Index i = 0; i < R; ++i) xr.row(i) = x_final_.row(rows[static_cast<std::size_t>(i)]);
    Mat<T> hf, xhatf;
    std::vector<T> rstdf;
    detail::layer_norm<T>(xr, p_[L.lnf_g], p_[L.lnf_b], hf, &xhatf, &rstdf);
    Mat<T> logits;
    if (cfg.tied_output) {
      logits.noalias() = hf * p_[L.tok_emb].transpose();
    } else {
      logits.noalias() = hf * p_[L.head_w];
    }
    logits.rowwise() += p_[L.head_b].row(0);
    detail::check_finite(logits, "output logits");

    // Log-softmax NLL; logits become dlogits in place.
    std::size_t seq_index = 0;
    std::vector<W> seq_loss(batch_.size(), W(0));
    for (Eigen::Index i = 0; i < R; ++i) {
      while (seq_index + 1 < batch_.size() && rows[static_cast<std::size_t>(i)] >= offsets_[seq_index + 1]) ++seq_index;
      auto row = logits.row(i);
      const T mx = row.maxCoeff();
      W sum = 0;
      for (Eigen::Index j = 0; j < V; ++j) sum += std::exp(W(row(j) - mx));
      const W lse = W(mx) + std::log(sum);
      const TokenId y = labels[static_cast<std::size_t>(i)];
      const T w = weights[static_cast<std::size_t>(i)];
      // Per-sequence mean: w * batch_size is 1/active.
      seq_loss[seq_index] += (lse - W(row(y))) * W(w) * W(batch_.size());
      if (with_grad) {
        for (Eigen::Index j = 0; j < V; ++j) row(j) = static_cast<T>(std::exp(W(row(j)) - lse)) * w;
        row(y) -= w;
      }
    }
    W total = 0;
    for (std::size_t s = 0; s < batch_.size(); ++s) {
      out.per_sequence[s] = static_cast<double>(seq_loss[s]);
      total += seq_loss[s];
    }
    out.loss = static_cast<double>(total / W(batch_.size()));
    if (!std::isfinite(out.loss)) throw NumericError("non-finite loss");
    if (!with_grad) return out;

    out.grad = Parameters<T>(cfg);
    Parameters<T>& G = out.grad;
    G[L.head_b].noalias() += logits.colwise().sum();
    Mat<T> dhf;
    if (cfg.tied_output) {
      G[L.tok_emb].noalias() += logits.transpose() * hf;
      dhf.noalias() = logits * p_[L.tok_emb];
    } else {
      G[L.head_w].noalias() += hf.transpose() * logits;
      dhf.noalias() = logits * p_[L.head_w].transpose();
    }
    Mat<T> dxr = Mat<T>::Zero(R, d);
    detail::layer_norm_backward<T>(dhf, xhatf, rstdf, p_[L.lnf_g], G[L.lnf_g], G[L.lnf_b], dxr);
    Mat<T> dx = Mat<T>::Zero(total_, d);
    for (Eigen::Index i = 0; i < R; ++i) dx.row(rows[static_cast<std::size_t>(i)]) += dxr.row(i);

    const int H = cfg.n_heads, hd = cfg.head_dim();
    const T scale = T(1) / std::sqrt(T(hd));
    for (std::size_t li = L.layers.size(); li-- > 0;) {
      const auto& r = L.layers[li];
      auto& c = cache_[li];
      // MLP branch.
      G[r.b2].noalias() += dx.colwise().sum();
      G[r.w2].noalias() += c.g.transpose() * dx;
      Mat<T> du = dx * p_[r.w2].transpose();
      du = du.cwiseProduct(c.u.unaryExpr([](T v) { return detail::gelu_grad(v); }));
      G[r.b1].noalias() += du.colwise().sum();
      G[r.w1].noalias() += c.h2.transpose() * du;
      Mat<T> dh2 = du * p_[r.w1].transpose();
      detail::layer_norm_backward<T>(dh2, c.xhat2, c.rstd2, p_[r.ln2_g], G[r.ln2_g], G[r.ln2_b], dx);
      // Attention branch.
      G[r.bo].noalias() += dx.colwise().sum();
      G[r.wo].noalias() += c.att.transpose() * dx;
      Mat<T> datt = dx * p_[r.wo].transpose();
      Mat<T> dqkv = Mat<T>::Zero(total_, 3 * d);
      for (std::size_t s = 0; s < batch_.size(); ++s) {
        const Eigen::Index o = offsets_[s];
        const Eigen::Index n = static_cast<Eigen::Index>(batch_[s].tokens.size());
        for (int h = 0; h < H; ++h) {
          const Mat<T>& P = c.probs[s * H + static_cast<std::size_t>(h)];
          auto q = c.qkv.block(o, h * hd, n, hd);
          auto k = c.qkv.block(o, d + h * hd, n, hd);
          auto v = c.qkv.block(o, 2 * d + h * hd, n, hd);
          auto dO = datt.block(o, h * hd, n, hd);
          Mat<T> dP = dO * v.transpose();
          dqkv.block(o, 2 * d + h * hd, n, hd).noalias() = P.transpose() * dO;
          Mat<T> dS(n, n);
          for (Eigen::Index i = 0; i < n; ++i) {
            Wide<T> dot = 0;
            for (Eigen::Index j = 0; j <= i; ++j) dot += Wide<T>(dP(i, j)) * P(i, j);
            const T dt = static_cast<T>(dot);
            for (Eigen::Index j = 0; j < n; ++j) dS(i, j) = j <= i ? P(i, j) * (dP(i, j) - dt) * scale : T(0);
          }
          dqkv.block(o, h * hd, n, hd).noalias() = dS * k;
          dqkv.block(o, d + h * hd, n, hd).noalias() = dS.transpose() * q;
        }
      }
      G[r.bqkv].noalias() += dqkv.colwise().sum();
      G[r.wqkv].noalias() += c.h1.transpose() * dqkv;
      Mat<T> dh1 = dqkv * p_[r.wqkv].transpose();
      detail::layer_norm_backward<T>(dh1, c.xhat1, c.rstd1, p_[r.ln1_g], G[r.ln1_g], G[r.ln1_b], dx);
    }
    auto dtok = G[L.tok_emb];
    auto dpos = G[L.pos_emb];
    for (std::size_t s = 0; s < batch_.size(); ++s) {
      const auto& toks = batch_[s].tokens;
      for (std::size_t i = 0; i < toks.size(); ++i) {
        const Eigen::Index row = offsets_[s] + static_cast<Eigen::Index>(i);
        dtok.row(toks[i]) += dx.row(row);
        dpos.row(static_cast<Eigen::Index>(i)) += dx.row(row);
      }
    }
    for (const auto& [name, ref] : L.named) {
      if (!G[ref].allFinite()) throw NumericError("non-finite gradient in " + name);
    }
    return out;
  }

  const Parameters<T>& p_;
  std::span<const LabeledSequence> batch_;
  std::vector<Eigen::Index> offsets_;
  Eigen::Index total_ = 0;
  std::vector<LayerCache> cache_;
  Mat<T> x_final_;
};

inline std::vector<LabeledSequence> to_labeled(std::span<const TokenSample> samples) {
  std::vector<LabeledSequence> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(to_labeled(s));
  return out;
}

template <typename T>
double loss(const Parameters<T>& p, const LabeledSequence& seq) {
  return TrainingPass<T>(p, std::span(&seq, 1)).run(false).loss;
}

template <typename T>
double loss(const Parameters<T>& p, const TokenSample& sample) {
  return loss(p, to_labeled(sample));
}

template <typename T>
LossResult<T> loss_and_grad(const Parameters<T>& p, std::span<const LabeledSequence> batch) {
  return TrainingPass<T>(p, batch).run(true);
}

template <typename T>
LossResult<T> batch_loss(const Parameters<T>& p, std::span<const LabeledSequence> batch) {
  return TrainingPass<T>(p, batch).run(false);
}

template <typename T>
LossResult<T> grad(const Parameters<T>& p, std::span<const TokenSample> samples) {
  const auto seqs = to_labeled(samples);
  return loss_and_grad(p, std::span<const LabeledSequence>(seqs));
}

// Inference with a key/value cache. Feeding a block of tokens runs them
// through the network at once (prefill); single tokens extend the cache.
template <typename T>
class Decoder {
 public:
  explicit Decoder(const Parameters<T>& p) : p_(p) {
    const int C = p.cfg.context_len, d = p.cfg.d_model;
    keys_.assign(p.layout.layers.size(), Mat<T>(C, d));
    values_.assign(p.layout.layers.size(), Mat<T>(C, d));
  }

  int length() const { return length_; }

  // Appends tokens and returns logits for every appended position.
  Mat<T> feed(std::span<const TokenId> tokens) {
    const auto& cfg = p_.cfg;
    const auto& L = p_.layout;
    const int d = cfg.d_model, H = cfg.n_heads, hd = cfg.head_dim();
    const Eigen::Index m = static_cast<Eigen::Index>(tokens.size());
    if (m == 0) throw UsageError("nothing to feed");
    if (length_ + m > cfg.context_len) {
      throw LengthError("sequence of length " + std::to_string(length_ + m) + " exceeds context_len " +
                        std::to_string(cfg.context_len));
    }
    const T scale = T(1) / std::sqrt(T(hd));
    Mat<T> x(m, d);
    for (Eigen::Index i = 0; i < m; ++i) {
      const TokenId t = tokens[static_cast<std::size_t>(i)];
      if (t < 0 || t >= cfg.vocab_size) throw RangeError("token id out of range");
      x.row(i) = p_[L.tok_emb].row(t) + p_[L.pos_emb].row(length_ + i);
    }
    Mat<T> h, qkv, att(m, d), u;
    for (std::size_t l = 0; l < L.layers.size(); ++l) {
      const auto& r = L.layers[l];
      detail::layer_norm<T>(x, p_[r.ln1_g], p_[r.ln1_b], h, nullptr, nullptr);
      qkv.noalias() = h * p_[r.wqkv];
      qkv.rowwise() += p_[r.bqkv].row(0);
      keys_[l].middleRows(length_, m) = qkv.middleCols(d, d);
      values_[l].middleRows(length_, m) = qkv.middleCols(2 * d, d);
      const Eigen::Index n = length_ + m;
      for (int hh = 0; hh < H; ++hh) {
        auto q = qkv.block(0, hh * hd, m, hd);
        auto k = keys_[l].block(0, hh * hd, n, hd);
        auto v = values_[l].block(0, hh * hd, n, hd);
        Mat<T> P = (q * k.transpose()) * scale;
        for (Eigen::Index i = 0; i < m; ++i) detail::masked_softmax_row<T>(P.row(i), length_ + i + 1);
        att.block(0, hh * hd, m, hd).noalias() = P * v;
      }
      x.noalias() += att * p_[r.wo];
      x.rowwise() += p_[r.bo].row(0);
      detail::layer_norm<T>(x, p_[r.ln2_g], p_[r.ln2_b], h, nullptr, nullptr);
      u.noalias() = h * p_[r.w1];
      u.rowwise() += p_[r.b1].row(0);
      u = u.unaryExpr([](T v) { return detail::gelu(v); });
      x.noalias() += u * p_[r.w2];
      x.rowwise() += p_[r.b2].row(0);
    }
    detail::layer_norm<T>(x, p_[L.lnf_g], p_[L.lnf_b], h, nullptr, nullptr);
    Mat<T> logits;
    if (cfg.tied_output) {
      logits.noalias() = h * p_[L.tok_emb].transpose();
    } else {
      logits.noalias() = h * p_[L.head_w];
    }
    logits.rowwise() += p_[L.head_b].row(0);
    length_ += static_cast<int>(m);
    last_ = logits.row(m - 1);
    return logits;
  }

  const RowVec<T>& last_logits() const { return last_; }

  // Greedy (temperature 0, ties to the lowest id) or temperature sampling.
  TokenId pick(double temperature, Rng* rng) const {
    if (temperature <= 0.0) {
      Eigen::Index best = 0;
      for (Eigen::Index j = 1; j < last_.size(); ++j) {
        if (last_(j) > last_(best)) best = j;
      }
      return static_cast<TokenId>(best);
    }
    if (!rng) throw UsageError("sampling with temperature > 0 needs an rng");
    const double mx = static_cast<double>(last_.maxCoeff());
    std::vector<double> w(static_cast<std::size_t>(last_.size()));
    double sum = 0.0;
    for (std::size_t j = 0; j < w.size(); ++j) {
      w[j] = std::exp((static_cast<double>(last_(static_cast<Eigen::Index>(j))) - mx) / temperature);
      sum += w[j];
    }
    double u = uniform01(*rng) * sum;
    for (std::size_t j = 0; j < w.size(); ++j) {
      u -= w[j];
      if (u < 0.0) return static_cast<TokenId>(j);
    }
    return static_cast<TokenId>(w.size() - 1);
  }

  // Generates until a stop token (included in the output) or max_new tokens.
  Tokens generate(std::span<const TokenId> stop_set, int max_new, double temperature, Rng* rng = nullptr) {
    Tokens out;
    if (length_ == 0) throw UsageError("generation needs a non-empty prefix");
    while (static_cast<int>(out.size()) < max_new) {
      const TokenId t = pick(temperature, rng);
      out.push_back(t);
      if (std::find(stop_set.begin(), stop_set.end(), t) != stop_set.end()) break;
      if (static_cast<int>(out.size()) == max_new) break;
      if (length_ >= p_.cfg.context_len) break;
      feed(std::span(&out.back(), 1));
    }
    return out;
  }

 private:
  const Parameters<T>& p_;
  std::vector<Mat<T>> keys_, values_;
  int length_ = 0;
  RowVec<T> last_;
};

// Logits for every position of a sequence.
template <typename T>
Mat<T> forward(const Parameters<T>& p, std::span<const TokenId> tokens) {
  Decoder<T> dec(p);
  return dec.feed(tokens);
}

template <typename T>
Tokens decode(const Parameters<T>& p, std::span<const TokenId> prefix, std::span<const TokenId> stop_set,
              int max_new, double temperature, Rng* rng = nullptr) {
  if (prefix.empty()) throw UsageError("decode needs a non-empty prefix");
  if (max_new <= 0) return {};
  Decoder<T> dec(p);
  dec.feed(prefix);
  return dec.generate(stop_set, max_new, temperature, rng);
}

}  // namespace hyt
