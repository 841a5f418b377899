#pragma once

#include <filesystem>
#include <string>

#include "rvsl/net.hpp"

namespace rvsl::net {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Little-endian binary image of every parameter (including batch-norm
/// running statistics) plus one "meta.net_config" record that lets a reader
/// rebuild the architecture before filling it.
std::string serialize(const ModuleSet& models);
ModuleSet deserialize(const std::string& bytes);

void save_checkpoint(const std::filesystem::path& path, const ModuleSet& models);
ModuleSet load_checkpoint(const std::filesystem::path& path);

}  // namespace rvsl::net
