#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace opsdl::nn {

using TokenId = std::int32_t;
using TokenSeq = std::vector<TokenId>;

enum class PosEncoding { learned_absolute, rotary };
enum class DType { f32, f64 };

std::string to_string(PosEncoding p);
std::string to_string(DType d);
PosEncoding parse_pos_encoding(const std::string& s);
DType parse_dtype(const std::string& s);

struct ModelConfig {
  std::size_t vocab_size = 0;
  std::size_t n_layers = 1;
  std::size_t d_model = 16;
  std::size_t n_heads = 2;
  std::size_t d_ff = 32;
  std::size_t max_seq_len = 64;
  PosEncoding pos_encoding = PosEncoding::rotary;
  DType dtype = DType::f64;
  double rope_base = 10000.0;
  double init_std = 0.02;

  // Throws ConfigError naming the first violated constraint.
  void validate() const;
  std::size_t head_dim() const { return d_model / n_heads; }
  bool operator==(const ModelConfig&) const = default;
};

// One named tensor inside the flat parameter array.
struct ParamInfo {
  std::string name;
  std::vector<std::size_t> shape;
  std::size_t offset = 0;
  std::size_t size = 0;
};

// Stable name/shape/offset table for a config. Ordering is total and fixed.
std::vector<ParamInfo> param_layout(const ModelConfig& config);
std::size_t param_count(const ModelConfig& config);

// θ plus Adam moments. Parameters are held in f64; an f32 config only changes
// the precision the forward/backward kernels run in.
struct ModelState {
  ModelConfig config;
  std::vector<ParamInfo> layout;
  std::vector<double> params;
  std::vector<double> m;  // first moment
  std::vector<double> v;  // second moment
  std::uint64_t step = 0;

  const ParamInfo& info(const std::string& name) const;
  std::span<double> tensor(const std::string& name);
  std::span<const double> tensor(const std::string& name) const;
  // Name of the tensor holding flat index i.
  const std::string& name_of(std::size_t flat_index) const;

  // Zero the optimizer moments and step counter, keeping θ.
  void reset_optimizer();

  bool operator==(const ModelState&) const;
};

ModelState init_model(const ModelConfig& config, std::uint64_t seed);

}  // namespace opsdl::nn
