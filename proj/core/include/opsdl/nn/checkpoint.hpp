#pragma once

#include <filesystem>
#include <iosfwd>

#include "opsdl/nn/model.hpp"

namespace opsdl::nn {

inline constexpr int kCheckpointVersion = 1;

// Layout: magic "OPSDLCK1", u64 header length, JSON header (config, dtype,
// version, step, name/shape table), then params, m, v as little-endian f64.
void save_checkpoint(const ModelState& state, std::ostream& out);
ModelState load_checkpoint(std::istream& in);

void save_checkpoint(const ModelState& state, const std::filesystem::path& path);
ModelState load_checkpoint(const std::filesystem::path& path);

}  // namespace opsdl::nn
