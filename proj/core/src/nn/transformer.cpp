#include "opsdl/nn/transformer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_map>

#include "opsdl/error.hpp"

// Pre-norm decoder-only transformer with hand-written backward pass.
//
// Every reduction whose result feeds a row t is accumulated in an order that
// depends only on positions <= t. That keeps row t bitwise identical no matter
// how many tokens follow it, which the causality and score/forward
// consistency guarantees rely on. Matrix products are written in axpy form
// (loop over the reduction index outermost) so the compiler can vectorize
// across the output dimension without reassociating sums.

namespace opsdl::nn {
namespace {

constexpr double kRmsEps = 1e-5;

struct Offsets {
  struct Layer {
    std::size_t norm1, wq, bq, wk, bk, wv, bv, wo, bo, norm2, w1, b1, w2, b2;
  };
  std::size_t tok_emb = 0;
  std::size_t pos_emb = 0;
  bool learned_pos = false;
  std::vector<Layer> layers;
  std::size_t final_norm = 0, head_w = 0, head_b = 0;
};

Offsets make_offsets(const ModelState& state) {
  std::unordered_map<std::string, std::size_t> at;
  for (const auto& p : state.layout) at.emplace(p.name, p.offset);
  auto get = [&](const std::string& n) {
    auto it = at.find(n);
    if (it == at.end()) throw ShapeError("parameter table is missing '" + n + "'");
    return it->second;
  };
  Offsets o;
  o.tok_emb = get("tok_emb");
  o.learned_pos = state.config.pos_encoding == PosEncoding::learned_absolute;
  if (o.learned_pos) o.pos_emb = get("pos_emb");
  for (std::size_t l = 0; l < state.config.n_layers; ++l) {
    const std::string p = "layers." + std::to_string(l) + ".";
    o.layers.push_back({get(p + "norm1.weight"), get(p + "attn.wq"), get(p + "attn.bq"),
                        get(p + "attn.wk"), get(p + "attn.bk"), get(p + "attn.wv"),
                        get(p + "attn.bv"), get(p + "attn.wo"), get(p + "attn.bo"),
                        get(p + "norm2.weight"), get(p + "mlp.w1"), get(p + "mlp.b1"),
                        get(p + "mlp.w2"), get(p + "mlp.b2")});
  }
  o.final_norm = get("final_norm.weight");
  o.head_w = get("lm_head.weight");
  o.head_b = get("lm_head.bias");
  return o;
}

// ---------------------------------------------------------------------------
// dense kernels, row-major

// Y[T×out] = X[T×in]·W[in×out] + b
template <class S>
void linear(const S* x, const S* w, const S* b, S* y, std::size_t rows, std::size_t in,
            std::size_t out) {
  for (std::size_t t = 0; t < rows; ++t) {
    S* yt = y + t * out;
    const S* xt = x + t * in;
    if (b) {
      std::copy(b, b + out, yt);
    } else {
      std::fill(yt, yt + out, S(0));
    }
    for (std::size_t k = 0; k < in; ++k) {
      const S a = xt[k];
      const S* wk = w + k * out;
      for (std::size_t j = 0; j < out; ++j) yt[j] += a * wk[j];
    }
  }
}

template <class S>
std::vector<S> transpose(const S* w, std::size_t in, std::size_t out) {
  std::vector<S> t(in * out);
  for (std::size_t k = 0; k < in; ++k)
    for (std::size_t j = 0; j < out; ++j) t[j * in + k] = w[k * out + j];
  return t;
}

// Backward of linear: dX += dY·Wᵀ, dW += Xᵀ·dY, db += Σ dY.
template <class S>
void linear_backward(const S* x, const S* w, const S* dy, S* dx, S* dw, S* db, std::size_t rows,
                     std::size_t in, std::size_t out) {
  if (dx) {
    const auto wt = transpose(w, in, out);
    for (std::size_t t = 0; t < rows; ++t) {
      const S* dyt = dy + t * out;
      S* dxt = dx + t * in;
      for (std::size_t j = 0; j < out; ++j) {
        const S g = dyt[j];
        if (g == S(0)) continue;
        const S* wj = wt.data() + j * in;
        for (std::size_t k = 0; k < in; ++k) dxt[k] += g * wj[k];
      }
    }
  }
  for (std::size_t t = 0; t < rows; ++t) {
    const S* xt = x + t * in;
    const S* dyt = dy + t * out;
    for (std::size_t k = 0; k < in; ++k) {
      const S a = xt[k];
      S* dwk = dw + k * out;
      for (std::size_t j = 0; j < out; ++j) dwk[j] += a * dyt[j];
    }
    if (db)
      for (std::size_t j = 0; j < out; ++j) db[j] += dyt[j];
  }
}

template <class S>
void rmsnorm(const S* x, const S* gain, S* y, S* rstd, std::size_t rows, std::size_t d) {
  for (std::size_t t = 0; t < rows; ++t) {
    const S* xt = x + t * d;
    S ss = 0;
    for (std::size_t i = 0; i < d; ++i) ss += xt[i] * xt[i];
    const S r = S(1) / std::sqrt(ss / static_cast<S>(d) + static_cast<S>(kRmsEps));
    rstd[t] = r;
    S* yt = y + t * d;
    for (std::size_t i = 0; i < d; ++i) yt[i] = xt[i] * r * gain[i];
  }
}

template <class S>
void rmsnorm_backward(const S* x, const S* gain, const S* rstd, const S* dy, S* dx, S* dgain,
                      std::size_t rows, std::size_t d) {
  for (std::size_t t = 0; t < rows; ++t) {
    const S* xt = x + t * d;
    const S* dyt = dy + t * d;
    const S r = rstd[t];
    S dot = 0;
    for (std::size_t i = 0; i < d; ++i) {
      dot += dyt[i] * gain[i] * xt[i];
      dgain[i] += dyt[i] * xt[i] * r;
    }
    const S c = dot * r * r * r / static_cast<S>(d);
    S* dxt = dx + t * d;
    for (std::size_t i = 0; i < d; ++i) dxt[i] += dyt[i] * gain[i] * r - xt[i] * c;
  }
}

template <class S>
S gelu(S x) {
  constexpr S k = static_cast<S>(0.7978845608028654);  // sqrt(2/pi)
  return S(0.5) * x * (S(1) + std::tanh(k * (x + S(0.044715) * x * x * x)));
}

template <class S>
S gelu_grad(S x) {
  constexpr S k = static_cast<S>(0.7978845608028654);
  const S u = k * (x + S(0.044715) * x * x * x);
  const S th = std::tanh(u);
  const S du = k * (S(1) + S(3) * S(0.044715) * x * x);
  return S(0.5) * (S(1) + th) + S(0.5) * x * (S(1) - th * th) * du;
}

// ---------------------------------------------------------------------------

template <class S>
struct LayerActs {
  std::vector<S> x;        // residual input  [T×d]
  std::vector<S> n1, r1;   // normed input, inverse rms
  std::vector<S> q, k, v;  // projections, q/k rotated [T×d]
  std::vector<S> probs;    // [H×T×T], row t valid on [0, t]
  std::vector<S> ao;       // concatenated head outputs [T×d]
  std::vector<S> xm;       // residual after attention
  std::vector<S> n2, r2;
  std::vector<S> h, g;     // MLP pre/post activation [T×F]
};

template <class S>
class Engine {
 public:
  explicit Engine(const ModelState& state)
      : cfg_(state.config), off_(make_offsets(state)) {
    if constexpr (std::is_same_v<S, double>) {
      p_ = state.params.data();
    } else {
      owned_.assign(state.params.begin(), state.params.end());
      p_ = owned_.data();
    }
  }

  // Runs the network; returns logits for `rows` (row-major R×V).
  void forward(std::span<const TokenId> tokens, std::span<const std::size_t> rows) {
    const std::size_t T = tokens.size();
    const std::size_t d = cfg_.d_model;
    T_ = T;
    tokens_.assign(tokens.begin(), tokens.end());
    rows_.assign(rows.begin(), rows.end());
    if (cfg_.pos_encoding == PosEncoding::rotary) build_rope(T);

    acts_.assign(cfg_.n_layers, {});
    std::vector<S> x(T * d);
    for (std::size_t t = 0; t < T; ++t) {
      const S* e = p_ + off_.tok_emb + static_cast<std::size_t>(tokens[t]) * d;
      std::copy(e, e + d, x.begin() + t * d);
      if (off_.learned_pos) {
        const S* pe = p_ + off_.pos_emb + t * d;
        for (std::size_t i = 0; i < d; ++i) x[t * d + i] += pe[i];
      }
    }
    for (std::size_t l = 0; l < cfg_.n_layers; ++l) x = layer_forward(l, std::move(x));

    xf_ = std::move(x);
    nf_.assign(T * d, S(0));
    rf_.assign(T, S(0));
    rmsnorm(xf_.data(), p_ + off_.final_norm, nf_.data(), rf_.data(), T, d);

    const std::size_t V = cfg_.vocab_size;
    logits_.assign(rows_.size() * V, S(0));
    for (std::size_t r = 0; r < rows_.size(); ++r)
      linear(nf_.data() + rows_[r] * d, p_ + off_.head_w, p_ + off_.head_b,
             logits_.data() + r * V, 1, d, V);
  }

  const std::vector<S>& logits() const { return logits_; }

  // dlogits is R×V, matching the rows passed to forward(). Adds the parameter
  // gradient into grad (flat, congruent with params).
  void backward(const std::vector<S>& dlogits, std::vector<S>& grad) const {
    const std::size_t T = T_;
    const std::size_t d = cfg_.d_model;
    const std::size_t V = cfg_.vocab_size;

    std::vector<S> dnf(T * d, S(0));
    for (std::size_t r = 0; r < rows_.size(); ++r)
      linear_backward(nf_.data() + rows_[r] * d, p_ + off_.head_w, dlogits.data() + r * V,
                      dnf.data() + rows_[r] * d, grad.data() + off_.head_w,
                      grad.data() + off_.head_b, 1, d, V);
    std::vector<S> dx(T * d, S(0));
    rmsnorm_backward(xf_.data(), p_ + off_.final_norm, rf_.data(), dnf.data(), dx.data(),
                     grad.data() + off_.final_norm, T, d);

    for (std::size_t l = cfg_.n_layers; l-- > 0;) dx = layer_backward(l, std::move(dx), grad);

    for (std::size_t t = 0; t < T; ++t) {
      S* ge = grad.data() + off_.tok_emb + static_cast<std::size_t>(tokens_[t]) * d;
      for (std::size_t i = 0; i < d; ++i) ge[i] += dx[t * d + i];
      if (off_.learned_pos) {
        S* gp = grad.data() + off_.pos_emb + t * d;
        for (std::size_t i = 0; i < d; ++i) gp[i] += dx[t * d + i];
      }
    }
  }

 private:
  void build_rope(std::size_t T) {
    const std::size_t half = cfg_.head_dim() / 2;
    cos_.assign(T * half, S(0));
    sin_.assign(T * half, S(0));
    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t i = 0; i < half; ++i) {
        const double freq =
            std::pow(cfg_.rope_base, -2.0 * static_cast<double>(i) / static_cast<double>(2 * half));
        const double angle = static_cast<double>(t) * freq;
        cos_[t * half + i] = static_cast<S>(std::cos(angle));
        sin_[t * half + i] = static_cast<S>(std::sin(angle));
      }
    }
  }

  // Rotates each head's (2i, 2i+1) pairs by ±angle(t, i) in place.
  void rotate(std::vector<S>& a, bool inverse) const {
    const std::size_t d = cfg_.d_model;
    const std::size_t hd = cfg_.head_dim();
    const std::size_t half = hd / 2;
    for (std::size_t t = 0; t < T_; ++t) {
      const S* c = cos_.data() + t * half;
      const S* s = sin_.data() + t * half;
      for (std::size_t h = 0; h < cfg_.n_heads; ++h) {
        S* row = a.data() + t * d + h * hd;
        for (std::size_t i = 0; i < half; ++i) {
          const S x0 = row[2 * i];
          const S x1 = row[2 * i + 1];
          const S sn = inverse ? -s[i] : s[i];
          row[2 * i] = x0 * c[i] - x1 * sn;
          row[2 * i + 1] = x0 * sn + x1 * c[i];
        }
      }
    }
  }

  std::vector<S> layer_forward(std::size_t l, std::vector<S> x) {
    const auto& o = off_.layers[l];
    auto& a = acts_[l];
    const std::size_t T = T_, d = cfg_.d_model, F = cfg_.d_ff;
    const std::size_t H = cfg_.n_heads, hd = cfg_.head_dim();

    a.x = std::move(x);
    a.n1.assign(T * d, S(0));
    a.r1.assign(T, S(0));
    rmsnorm(a.x.data(), p_ + o.norm1, a.n1.data(), a.r1.data(), T, d);

    a.q.assign(T * d, S(0));
    a.k.assign(T * d, S(0));
    a.v.assign(T * d, S(0));
    linear(a.n1.data(), p_ + o.wq, p_ + o.bq, a.q.data(), T, d, d);
    linear(a.n1.data(), p_ + o.wk, p_ + o.bk, a.k.data(), T, d, d);
    linear(a.n1.data(), p_ + o.wv, p_ + o.bv, a.v.data(), T, d, d);
    if (cfg_.pos_encoding == PosEncoding::rotary) {
      rotate(a.q, false);
      rotate(a.k, false);
    }

    const S scale = S(1) / std::sqrt(static_cast<S>(hd));
    a.probs.assign(H * T * T, S(0));
    a.ao.assign(T * d, S(0));
    std::vector<S> kt(hd * T);
    for (std::size_t h = 0; h < H; ++h) {
      for (std::size_t u = 0; u < T; ++u)
        for (std::size_t i = 0; i < hd; ++i) kt[i * T + u] = a.k[u * d + h * hd + i];
      for (std::size_t t = 0; t < T; ++t) {
        S* p = a.probs.data() + (h * T + t) * T;
        const S* qt = a.q.data() + t * d + h * hd;
        for (std::size_t i = 0; i < hd; ++i) {
          const S qi = qt[i] * scale;
          const S* kr = kt.data() + i * T;
          for (std::size_t u = 0; u <= t; ++u) p[u] += qi * kr[u];
        }
        S mx = p[0];
        for (std::size_t u = 1; u <= t; ++u) mx = std::max(mx, p[u]);
        S sum = 0;
        for (std::size_t u = 0; u <= t; ++u) {
          p[u] = std::exp(p[u] - mx);
          sum += p[u];
        }
        const S inv = S(1) / sum;
        for (std::size_t u = 0; u <= t; ++u) p[u] *= inv;
        S* out = a.ao.data() + t * d + h * hd;
        for (std::size_t u = 0; u <= t; ++u) {
          const S w = p[u];
          const S* vu = a.v.data() + u * d + h * hd;
          for (std::size_t i = 0; i < hd; ++i) out[i] += w * vu[i];
        }
      }
    }

    a.xm.assign(T * d, S(0));
    linear(a.ao.data(), p_ + o.wo, p_ + o.bo, a.xm.data(), T, d, d);
    for (std::size_t i = 0; i < T * d; ++i) a.xm[i] += a.x[i];

    a.n2.assign(T * d, S(0));
    a.r2.assign(T, S(0));
    rmsnorm(a.xm.data(), p_ + o.norm2, a.n2.data(), a.r2.data(), T, d);
    a.h.assign(T * F, S(0));
    linear(a.n2.data(), p_ + o.w1, p_ + o.b1, a.h.data(), T, d, F);
    a.g.resize(T * F);
    for (std::size_t i = 0; i < T * F; ++i) a.g[i] = gelu(a.h[i]);

    std::vector<S> y(T * d, S(0));
    linear(a.g.data(), p_ + o.w2, p_ + o.b2, y.data(), T, F, d);
    for (std::size_t i = 0; i < T * d; ++i) y[i] += a.xm[i];
    return y;
  }

  std::vector<S> layer_backward(std::size_t l, std::vector<S> dy, std::vector<S>& grad) const {
    const auto& o = off_.layers[l];
    const auto& a = acts_[l];
    const std::size_t T = T_, d = cfg_.d_model, F = cfg_.d_ff;
    const std::size_t H = cfg_.n_heads, hd = cfg_.head_dim();
    S* G = grad.data();

    // MLP branch
    std::vector<S> dg(T * F, S(0));
    linear_backward(a.g.data(), p_ + o.w2, dy.data(), dg.data(), G + o.w2, G + o.b2, T, F, d);
    for (std::size_t i = 0; i < T * F; ++i) dg[i] *= gelu_grad(a.h[i]);
    std::vector<S> dn2(T * d, S(0));
    linear_backward(a.n2.data(), p_ + o.w1, dg.data(), dn2.data(), G + o.w1, G + o.b1, T, d, F);
    std::vector<S> dxm = std::move(dy);
    rmsnorm_backward(a.xm.data(), p_ + o.norm2, a.r2.data(), dn2.data(), dxm.data(), G + o.norm2,
                     T, d);

    // attention output projection
    std::vector<S> dao(T * d, S(0));
    linear_backward(a.ao.data(), p_ + o.wo, dxm.data(), dao.data(), G + o.wo, G + o.bo, T, d, d);

    const S scale = S(1) / std::sqrt(static_cast<S>(hd));
    std::vector<S> dq(T * d, S(0)), dk(T * d, S(0)), dv(T * d, S(0));
    std::vector<S> vt(hd * T), dp(T);
    for (std::size_t h = 0; h < H; ++h) {
      for (std::size_t u = 0; u < T; ++u)
        for (std::size_t i = 0; i < hd; ++i) vt[i * T + u] = a.v[u * d + h * hd + i];
      for (std::size_t t = 0; t < T; ++t) {
        const S* p = a.probs.data() + (h * T + t) * T;
        const S* dot = dao.data() + t * d + h * hd;
        std::fill(dp.begin(), dp.begin() + static_cast<std::ptrdiff_t>(t + 1), S(0));
        for (std::size_t i = 0; i < hd; ++i) {
          const S g = dot[i];
          const S* vr = vt.data() + i * T;
          for (std::size_t u = 0; u <= t; ++u) dp[u] += g * vr[u];
        }
        for (std::size_t u = 0; u <= t; ++u) {
          S* dvu = dv.data() + u * d + h * hd;
          const S w = p[u];
          for (std::size_t i = 0; i < hd; ++i) dvu[i] += w * dot[i];
        }
        S pdp = 0;
        for (std::size_t u = 0; u <= t; ++u) pdp += p[u] * dp[u];
        const S* qt = a.q.data() + t * d + h * hd;
        S* dqt = dq.data() + t * d + h * hd;
        for (std::size_t u = 0; u <= t; ++u) {
          const S ds = p[u] * (dp[u] - pdp) * scale;
          if (ds == S(0)) continue;
          const S* ku = a.k.data() + u * d + h * hd;
          S* dku = dk.data() + u * d + h * hd;
          for (std::size_t i = 0; i < hd; ++i) {
            dqt[i] += ds * ku[i];
            dku[i] += ds * qt[i];
          }
        }
      }
    }
    if (cfg_.pos_encoding == PosEncoding::rotary) {
      rotate(dq, true);
      rotate(dk, true);
    }

    std::vector<S> dn1(T * d, S(0));
    linear_backward(a.n1.data(), p_ + o.wq, dq.data(), dn1.data(), G + o.wq, G + o.bq, T, d, d);
    linear_backward(a.n1.data(), p_ + o.wk, dk.data(), dn1.data(), G + o.wk, G + o.bk, T, d, d);
    linear_backward(a.n1.data(), p_ + o.wv, dv.data(), dn1.data(), G + o.wv, G + o.bv, T, d, d);
    std::vector<S> dx = std::move(dxm);
    rmsnorm_backward(a.x.data(), p_ + o.norm1, a.r1.data(), dn1.data(), dx.data(), G + o.norm1, T,
                     d);
    return dx;
  }

  const ModelConfig& cfg_;
  Offsets off_;
  std::vector<S> owned_;
  const S* p_ = nullptr;

  std::size_t T_ = 0;
  std::vector<TokenId> tokens_;
  std::vector<std::size_t> rows_;
  std::vector<S> cos_, sin_;
  std::vector<LayerActs<S>> acts_;
  std::vector<S> xf_, nf_, rf_, logits_;
};

void check_tokens(const ModelState& state, std::span<const TokenId> tokens) {
  if (tokens.empty()) throw LengthError("forward pass needs at least one token", 1);
  if (tokens.size() > state.config.max_seq_len)
    throw LengthError("sequence of " + std::to_string(tokens.size()) + " tokens is too long",
                      state.config.max_seq_len);
  for (TokenId id : tokens) {
    if (id < 0 || static_cast<std::size_t>(id) >= state.config.vocab_size)
      throw DataError("token id " + std::to_string(id) + " outside vocabulary of " +
                      std::to_string(state.config.vocab_size));
  }
}

template <class S>
LogProbRow log_softmax_row(const S* logits, std::size_t V) {
  LogProbRow row(V);
  double mx = static_cast<double>(logits[0]);
  for (std::size_t i = 1; i < V; ++i) mx = std::max(mx, static_cast<double>(logits[i]));
  double sum = 0.0;
  for (std::size_t i = 0; i < V; ++i) sum += std::exp(static_cast<double>(logits[i]) - mx);
  const double lse = mx + std::log(sum);
  for (std::size_t i = 0; i < V; ++i) row[i] = static_cast<double>(logits[i]) - lse;
  return row;
}

template <class S>
std::vector<LogProbRow> rows_impl(const ModelState& state, std::span<const TokenId> tokens,
                                  std::span<const std::size_t> rows) {
  Engine<S> engine(state);
  engine.forward(tokens, rows);
  const std::size_t V = state.config.vocab_size;
  std::vector<LogProbRow> out;
  out.reserve(rows.size());
  for (std::size_t r = 0; r < rows.size(); ++r)
    out.push_back(log_softmax_row(engine.logits().data() + r * V, V));
  return out;
}

std::vector<std::size_t> response_rows(std::size_t context_len, std::size_t response_len) {
  std::vector<std::size_t> rows(response_len);
  std::iota(rows.begin(), rows.end(), context_len - 1);
  return rows;
}

std::vector<TokenId> concat(std::span<const TokenId> a, std::span<const TokenId> b) {
  std::vector<TokenId> out;
  out.reserve(a.size() + b.size());
  out.insert(out.end(), a.begin(), a.end());
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

void check_score_inputs(const ModelState& state, std::span<const TokenId> context,
                        std::span<const TokenId> response) {
  if (context.empty()) throw LengthError("context must hold at least one token", 1);
  if (response.empty()) throw LengthError("response must hold at least one token", 1);
  if (context.size() + response.size() > state.config.max_seq_len)
    throw LengthError("context+response of " + std::to_string(context.size() + response.size()) +
                          " tokens is too long",
                      state.config.max_seq_len);
}

template <class S>
double accumulate_impl(const ModelState& state, std::span<const TokenId> context,
                       std::span<const TokenId> response, std::span<const double> weights,
                       double scale, std::span<double> grad) {
  const auto tokens = concat(context, response);
  check_tokens(state, tokens);
  const auto rows = response_rows(context.size(), response.size());
  Engine<S> engine(state);
  engine.forward(tokens, rows);

  const std::size_t V = state.config.vocab_size;
  std::vector<S> dlogits(rows.size() * V, S(0));
  double loss = 0.0;
  bool any = false;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto row = log_softmax_row(engine.logits().data() + r * V, V);
    const auto y = static_cast<std::size_t>(response[r]);
    const double w = weights[r] * scale;
    loss -= weights[r] * row[y];
    if (w == 0.0) continue;
    any = true;
    // d(−w·log softmax_y)/dlogits = w·(softmax − onehot_y)
    for (std::size_t i = 0; i < V; ++i) dlogits[r * V + i] = static_cast<S>(w * std::exp(row[i]));
    dlogits[r * V + y] -= static_cast<S>(w);
  }
  if (any) {
    std::vector<S> g(state.params.size(), S(0));
    engine.backward(dlogits, g);
    for (std::size_t i = 0; i < g.size(); ++i) grad[i] += static_cast<double>(g[i]);
  }
  return loss * scale;
}

}  // namespace

std::vector<LogProbRow> forward_logprob_rows(const ModelState& state,
                                             std::span<const TokenId> tokens,
                                             std::span<const std::size_t> rows) {
  check_tokens(state, tokens);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= tokens.size() || (i > 0 && rows[i] <= rows[i - 1]))
      throw ShapeError("requested rows must be ascending and inside the sequence");
  }
  if (state.config.dtype == DType::f32) return rows_impl<float>(state, tokens, rows);
  return rows_impl<double>(state, tokens, rows);
}

std::vector<LogProbRow> forward_logprobs(const ModelState& state,
                                         std::span<const TokenId> tokens) {
  std::vector<std::size_t> rows(tokens.size());
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  return forward_logprob_rows(state, tokens, rows);
}

std::vector<double> score_response(const ModelState& state, std::span<const TokenId> context,
                                   std::span<const TokenId> response) {
  check_score_inputs(state, context, response);
  const auto tokens = concat(context, response);
  const auto rows = response_rows(context.size(), response.size());
  const auto lp = forward_logprob_rows(state, tokens, rows);
  std::vector<double> out(response.size());
  for (std::size_t t = 0; t < response.size(); ++t)
    out[t] = lp[t][static_cast<std::size_t>(response[t])];
  return out;
}

double accumulate_weighted_nll_grad(const ModelState& state, std::span<const TokenId> context,
                                    std::span<const TokenId> response,
                                    std::span<const double> weights, double scale,
                                    std::span<double> grad) {
  check_score_inputs(state, context, response);
  if (weights.size() != response.size())
    throw ShapeError("weights has " + std::to_string(weights.size()) + " entries for a response of " +
                     std::to_string(response.size()));
  if (grad.size() != state.params.size())
    throw ShapeError("gradient buffer is not congruent with the parameters");
  for (double w : weights)
    if (!std::isfinite(w)) throw NumericError("non-finite token weight");
  if (state.config.dtype == DType::f32)
    return accumulate_impl<float>(state, context, response, weights, scale, grad);
  return accumulate_impl<double>(state, context, response, weights, scale, grad);
}

LossGrad weighted_nll_grad(const ModelState& state, std::span<const TokenId> context,
                           std::span<const TokenId> response, std::span<const double> weights) {
  LossGrad out;
  out.grad.assign(state.params.size(), 0.0);
  out.loss = accumulate_weighted_nll_grad(state, context, response, weights, 1.0, out.grad);
  return out;
}

}  // namespace opsdl::nn
