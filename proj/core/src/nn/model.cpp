#include "opsdl/nn/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>

#include "opsdl/error.hpp"
#include "opsdl/rng.hpp"

namespace opsdl::nn {

std::string to_string(PosEncoding p) {
  return p == PosEncoding::rotary ? "rotary" : "learned-absolute";
}

std::string to_string(DType d) { return d == DType::f32 ? "f32" : "f64"; }

PosEncoding parse_pos_encoding(const std::string& s) {
  if (s == "rotary") return PosEncoding::rotary;
  if (s == "learned-absolute") return PosEncoding::learned_absolute;
  throw ConfigError("unknown pos_encoding '" + s + "'");
}

DType parse_dtype(const std::string& s) {
  if (s == "f32") return DType::f32;
  if (s == "f64") return DType::f64;
  throw ConfigError("unknown dtype '" + s + "'");
}

void ModelConfig::validate() const {
  if (vocab_size < 2) throw ConfigError("vocab_size must be >= 2");
  if (max_seq_len < 2) throw ConfigError("max_seq_len must be >= 2");
  if (n_layers == 0) throw ConfigError("n_layers must be > 0");
  if (d_model == 0) throw ConfigError("d_model must be > 0");
  if (n_heads == 0) throw ConfigError("n_heads must be > 0");
  if (d_ff == 0) throw ConfigError("d_ff must be > 0");
  if (d_model % n_heads != 0) throw ConfigError("d_model not divisible by n_heads");
  if (pos_encoding == PosEncoding::rotary && head_dim() % 2 != 0)
    throw ConfigError("rotary positions need an even head dimension");
  if (!(rope_base > 1.0)) throw ConfigError("rope_base must be > 1");
  if (!(init_std > 0.0) || !std::isfinite(init_std)) throw ConfigError("init_std must be > 0");
}

namespace {

class LayoutBuilder {
 public:
  void add(std::string name, std::vector<std::size_t> shape) {
    std::size_t size = 1;
    for (auto s : shape) size *= s;
    layout_.push_back({std::move(name), std::move(shape), offset_, size});
    offset_ += size;
  }
  std::vector<ParamInfo> take() { return std::move(layout_); }

 private:
  std::vector<ParamInfo> layout_;
  std::size_t offset_ = 0;
};

bool is_norm_gain(const std::string& name) {
  return name.ends_with("norm.weight") || name.ends_with("norm1.weight") ||
         name.ends_with("norm2.weight");
}

bool is_bias(const std::string& name) {
  return name.ends_with(".bias") || name.ends_with(".bq") || name.ends_with(".bk") ||
         name.ends_with(".bv") || name.ends_with(".bo") || name.ends_with(".b1") ||
         name.ends_with(".b2");
}

}  // namespace

std::vector<ParamInfo> param_layout(const ModelConfig& c) {
  const std::size_t d = c.d_model;
  LayoutBuilder b;
  b.add("tok_emb", {c.vocab_size, d});
  if (c.pos_encoding == PosEncoding::learned_absolute) b.add("pos_emb", {c.max_seq_len, d});
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    const std::string p = "layers." + std::to_string(l) + ".";
    b.add(p + "norm1.weight", {d});
    b.add(p + "attn.wq", {d, d});
    b.add(p + "attn.bq", {d});
    b.add(p + "attn.wk", {d, d});
    b.add(p + "attn.bk", {d});
    b.add(p + "attn.wv", {d, d});
    b.add(p + "attn.bv", {d});
    b.add(p + "attn.wo", {d, d});
    b.add(p + "attn.bo", {d});
    b.add(p + "norm2.weight", {d});
    b.add(p + "mlp.w1", {d, c.d_ff});
    b.add(p + "mlp.b1", {c.d_ff});
    b.add(p + "mlp.w2", {c.d_ff, d});
    b.add(p + "mlp.b2", {d});
  }
  b.add("final_norm.weight", {d});
  b.add("lm_head.weight", {d, c.vocab_size});
  b.add("lm_head.bias", {c.vocab_size});
  return b.take();
}

std::size_t param_count(const ModelConfig& config) {
  const auto layout = param_layout(config);
  return layout.back().offset + layout.back().size;
}

const ParamInfo& ModelState::info(const std::string& name) const {
  auto it = std::find_if(layout.begin(), layout.end(),
                         [&](const ParamInfo& p) { return p.name == name; });
  if (it == layout.end()) throw ShapeError("no parameter tensor named '" + name + "'");
  return *it;
}

std::span<double> ModelState::tensor(const std::string& name) {
  const auto& p = info(name);
  return std::span<double>(params).subspan(p.offset, p.size);
}

std::span<const double> ModelState::tensor(const std::string& name) const {
  const auto& p = info(name);
  return std::span<const double>(params).subspan(p.offset, p.size);
}

const std::string& ModelState::name_of(std::size_t flat_index) const {
  auto it = std::upper_bound(layout.begin(), layout.end(), flat_index,
                             [](std::size_t i, const ParamInfo& p) { return i < p.offset; });
  if (it == layout.begin() || flat_index >= params.size())
    throw ShapeError("flat index " + std::to_string(flat_index) + " out of range");
  return std::prev(it)->name;
}

void ModelState::reset_optimizer() {
  std::fill(m.begin(), m.end(), 0.0);
  std::fill(v.begin(), v.end(), 0.0);
  step = 0;
}

bool ModelState::operator==(const ModelState& o) const {
  if (!(config == o.config) || step != o.step || layout.size() != o.layout.size()) return false;
  for (std::size_t i = 0; i < layout.size(); ++i) {
    if (layout[i].name != o.layout[i].name || layout[i].shape != o.layout[i].shape) return false;
  }
  // Bitwise comparison, so NaN payloads and signed zeros count.
  auto same = [](const std::vector<double>& a, const std::vector<double>& b) {
    return a.size() == b.size() &&
           std::equal(a.begin(), a.end(), b.begin(), [](double x, double y) {
             return std::bit_cast<std::uint64_t>(x) == std::bit_cast<std::uint64_t>(y);
           });
  };
  return same(params, o.params) && same(m, o.m) && same(v, o.v);
}

ModelState init_model(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  ModelState s;
  s.config = config;
  s.layout = param_layout(config);
  const std::size_t n = s.layout.back().offset + s.layout.back().size;
  s.params.assign(n, 0.0);
  s.m.assign(n, 0.0);
  s.v.assign(n, 0.0);

  Rng rng(derive_seed(seed, "init"));
  // Residual-branch output projections are scaled down with depth.
  const double resid_scale = 1.0 / std::sqrt(2.0 * static_cast<double>(config.n_layers));
  for (const auto& p : s.layout) {
    auto t = std::span<double>(s.params).subspan(p.offset, p.size);
    if (is_norm_gain(p.name)) {
      std::fill(t.begin(), t.end(), 1.0);
    } else if (is_bias(p.name)) {
      std::fill(t.begin(), t.end(), 0.0);
    } else {
      double std = config.init_std;
      if (p.name.ends_with("attn.wo") || p.name.ends_with("mlp.w2")) std *= resid_scale;
      for (auto& x : t) x = std * rng.normal();
    }
  }
  return s;
}

}  // namespace opsdl::nn
