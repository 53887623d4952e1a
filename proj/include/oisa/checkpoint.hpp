#pragma once

#include "oisa/nn.hpp"

#include <json.hpp>

#include <filesystem>

namespace oisa {

inline constexpr int kCheckpointVersion = 1;

// Layout: magic line, version line, one JSON config line, tensor count, then
// per tensor a "name rows cols" line followed by raw little-endian doubles.
void save_checkpoint(const std::filesystem::path& path, const nlohmann::json& config, const nn::ParamStore& params);
nlohmann::json read_checkpoint_config(const std::filesystem::path& path);
// Loads tensors into an already-constructed store; names and shapes must match.
nlohmann::json load_checkpoint(const std::filesystem::path& path, nn::ParamStore& params);

}  // namespace oisa
