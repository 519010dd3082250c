#pragma once

#include <json.hpp>

#include <filesystem>

#include "gdistill/trainer.hpp"

namespace gdistill {

/// A checkpoint directory holds `scene.ply` and `state.json`.
inline constexpr const char* kCheckpointFormat = "gdistill-checkpoint-v1";

struct Checkpoint {
    TrainState state;
    nlohmann::json config;
};

/// Writes into a sibling temp directory and renames it over `dir`, so a
/// crash leaves either the old or the new checkpoint. Throws IoError.
void save_checkpoint(const std::filesystem::path& dir, const TrainState& state, const nlohmann::json& config);

/// Throws IoError for missing, truncated or inconsistent checkpoints.
Checkpoint load_checkpoint(const std::filesystem::path& dir);

} // namespace gdistill
