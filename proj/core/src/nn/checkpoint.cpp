#include "opsdl/nn/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "json.hpp"

#include "opsdl/error.hpp"

namespace opsdl::nn {
namespace {

constexpr char kMagic[8] = {'O', 'P', 'S', 'D', 'L', 'C', 'K', '1'};

void put_u64(std::ostream& out, std::uint64_t x) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(x >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t get_u64(std::istream& in) {
  unsigned char b[8];
  if (!in.read(reinterpret_cast<char*>(b), 8)) throw IoError("truncated checkpoint");
  std::uint64_t x = 0;
  for (int i = 0; i < 8; ++i) x |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return x;
}

void put_array(std::ostream& out, const std::vector<double>& a) {
  for (double x : a) put_u64(out, std::bit_cast<std::uint64_t>(x));
}

std::vector<double> get_array(std::istream& in, std::size_t n) {
  std::vector<double> a(n);
  for (auto& x : a) x = std::bit_cast<double>(get_u64(in));
  return a;
}

}  // namespace

void save_checkpoint(const ModelState& state, std::ostream& out) {
  const auto& c = state.config;
  nlohmann::json h;
  h["format_version"] = kCheckpointVersion;
  h["config"] = {{"vocab_size", c.vocab_size},   {"n_layers", c.n_layers},
                 {"d_model", c.d_model},         {"n_heads", c.n_heads},
                 {"d_ff", c.d_ff},               {"max_seq_len", c.max_seq_len},
                 {"pos_encoding", to_string(c.pos_encoding)},
                 {"rope_base", c.rope_base},     {"init_std", c.init_std}};
  h["dtype"] = to_string(c.dtype);
  h["step"] = state.step;
  h["storage"] = "f64-le";
  auto& table = h["params"] = nlohmann::json::array();
  for (const auto& p : state.layout) table.push_back({{"name", p.name}, {"shape", p.shape}});
  const std::string header = h.dump();

  out.write(kMagic, sizeof kMagic);
  put_u64(out, header.size());
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  put_array(out, state.params);
  put_array(out, state.m);
  put_array(out, state.v);
  if (!out) throw IoError("failed writing checkpoint");
}

ModelState load_checkpoint(std::istream& in) {
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0)
    throw IoError("not an OPSDL checkpoint (bad magic)");
  const std::uint64_t len = get_u64(in);
  if (len > (1u << 26)) throw IoError("checkpoint header too large");
  std::string header(len, '\0');
  if (!in.read(header.data(), static_cast<std::streamsize>(len)))
    throw IoError("truncated checkpoint header");

  nlohmann::json h;
  try {
    h = nlohmann::json::parse(header);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("corrupt checkpoint header: ") + e.what());
  }
  if (h.value("format_version", 0) != kCheckpointVersion)
    throw IoError("unsupported checkpoint version");

  ModelState s;
  try {
    const auto& j = h.at("config");
    auto& c = s.config;
    c.vocab_size = j.at("vocab_size").get<std::size_t>();
    c.n_layers = j.at("n_layers").get<std::size_t>();
    c.d_model = j.at("d_model").get<std::size_t>();
    c.n_heads = j.at("n_heads").get<std::size_t>();
    c.d_ff = j.at("d_ff").get<std::size_t>();
    c.max_seq_len = j.at("max_seq_len").get<std::size_t>();
    c.pos_encoding = parse_pos_encoding(j.at("pos_encoding").get<std::string>());
    c.rope_base = j.at("rope_base").get<double>();
    c.init_std = j.at("init_std").get<double>();
    c.dtype = parse_dtype(h.at("dtype").get<std::string>());
    s.step = h.at("step").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("checkpoint header: ") + e.what());
  }
  s.config.validate();
  s.layout = param_layout(s.config);

  const auto& table = h.at("params");
  if (table.size() != s.layout.size()) throw IoError("checkpoint parameter table mismatch");
  for (std::size_t i = 0; i < table.size(); ++i) {
    if (table[i].at("name").get<std::string>() != s.layout[i].name ||
        table[i].at("shape").get<std::vector<std::size_t>>() != s.layout[i].shape)
      throw IoError("checkpoint tensor '" + s.layout[i].name + "' does not match its config");
  }
  const std::size_t n = s.layout.back().offset + s.layout.back().size;
  s.params = get_array(in, n);
  s.m = get_array(in, n);
  s.v = get_array(in, n);
  return s;
}

void save_checkpoint(const ModelState& state, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  save_checkpoint(state, out);
}

ModelState load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path.string() + "'");
  try {
    return load_checkpoint(in);
  } catch (const IoError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

}  // namespace opsdl::nn
