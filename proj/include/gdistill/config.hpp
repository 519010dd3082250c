#pragma once

#include <json.hpp>

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "gdistill/density_control.hpp"
#include "gdistill/diffusion_math.hpp"
#include "gdistill/rasterizer.hpp"
#include "gdistill/scene.hpp"
#include "gdistill/trainer.hpp"
#include "gdistill/views.hpp"

namespace gdistill {

enum class ProviderKind { Remote, Oracle, Null };

struct GuidanceConfig {
    ProviderKind provider = ProviderKind::Remote;
    std::string endpoint = "http://127.0.0.1:8765";
    std::int64_t timeout_ms = 30000;
    int retries = 2;
    std::string prompt = "a DSLR photo of a corgi";
};

/// The whole training configuration; one JSON document.
///
///   seed, scene{...}, raster{...}, diffusion{schedule, weighting},
///   guidance{provider, endpoint, timeout_ms, retries, prompt},
///   oracle{...}, cameras{...}, density{...},
///   trainer{stage1{...}, stage2{...}, checkpoint_interval, visualization_interval}
struct EngineConfig {
    std::uint64_t seed = 0;
    SceneInitOptions scene;
    RasterSettings raster;
    NoiseSchedule schedule;
    SdsWeights weights;
    GuidanceConfig guidance;
    OracleSetupConfig oracle;
    CameraSamplerConfig cameras;
    DensityControlConfig density;
    StageConfig stage1 = StageConfig::stage1_defaults();
    StageConfig stage2 = StageConfig::stage2_defaults();
    std::int64_t checkpoint_interval = 1000;
    std::int64_t visualization_interval = 0;

    void validate() const;
    nlohmann::json to_json() const;
    /// Strict: unknown keys anywhere raise ConfigError naming the valid ones.
    static EngineConfig from_json(const nlohmann::json& j);

    std::vector<StageConfig> stages() const;
};

/// Every settable dotted key (leaves of the default configuration).
std::vector<std::string> config_keys();

/// Applies `key=value` overrides to a configuration document. Values are
/// parsed as JSON and fall back to plain strings. Unknown keys raise
/// ConfigError listing every valid key.
void apply_overrides(nlohmann::json& doc, const std::vector<std::string>& overrides);

/// Reads a JSON file (ConfigError naming the path when missing or invalid),
/// applies overrides and validates.
EngineConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});

/// Stable 64-bit FNV-1a hash of the canonical JSON form, as 16 hex digits.
std::string config_hash(const nlohmann::json& doc);

std::string to_string(ProviderKind kind);

} // namespace gdistill
