#pragma once

// Versioned single-file parameter archives: magic, JSON header, raw float64 payload.

#include <filesystem>
#include <optional>

#include <nlohmann/json.hpp>

#include "siammask/model.hpp"

namespace siammask {

inline constexpr int kCheckpointVersion = 1;

/// `extra` is stored verbatim in the header (epoch, loss, config hash, ...).
void save_checkpoint(const std::filesystem::path& path, const SiamMaskModel& model,
                     const nlohmann::json& extra = nlohmann::json::object());

struct LoadedCheckpoint {
  SiamMaskModel model;
  nlohmann::json extra;
};

/// Throws ConfigError on a bad magic/version, a truncated payload, a parameter-set
/// mismatch, or when `expected` is given and differs from the stored config.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path,
                                 const std::optional<ModelConfig>& expected = std::nullopt);

}  // namespace siammask
