#include "gdistill/config.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <fstream>
#include <sstream>

#include "gdistill/errors.hpp"
#include "json_util.hpp"

namespace gdistill {
namespace {

void flatten(const nlohmann::json& j, const std::string& prefix, std::vector<std::string>& out) {
    if (j.is_object()) {
        for (const auto& [k, v] : j.items()) flatten(v, prefix.empty() ? k : prefix + "." + k, out);
    } else {
        out.push_back(prefix);
    }
}

ProviderKind parse_provider(const std::string& s) {
    if (s == "remote") return ProviderKind::Remote;
    if (s == "oracle") return ProviderKind::Oracle;
    if (s == "null") return ProviderKind::Null;
    throw ConfigError(fmt::format("unknown guidance provider '{}' (valid: remote, oracle, null)", s));
}

const nlohmann::json& section(const nlohmann::json& j, const char* key) {
    static const nlohmann::json empty = nlohmann::json::object();
    const auto it = j.find(key);
    return it == j.end() ? empty : *it;
}

SceneInitOptions scene_from_json(const nlohmann::json& j) {
    const std::string sec = "scene";
    detail::reject_unknown_keys(j, {"n_points", "radius", "opacity_max", "opacity_min"}, sec);
    SceneInitOptions s;
    detail::read_optional(j, "n_points", s.n_points, sec);
    detail::read_optional(j, "radius", s.radius, sec);
    detail::read_optional(j, "opacity_max", s.opacity_max, sec);
    detail::read_optional(j, "opacity_min", s.opacity_min, sec);
    return s;
}

RasterSettings raster_from_json(const nlohmann::json& j) {
    const std::string sec = "raster";
    detail::reject_unknown_keys(j, {"low_pass", "support_sigma", "alpha_max", "transmittance_min", "tile_size"}, sec);
    RasterSettings r;
    detail::read_optional(j, "low_pass", r.low_pass, sec);
    detail::read_optional(j, "support_sigma", r.support_sigma, sec);
    detail::read_optional(j, "alpha_max", r.alpha_max, sec);
    detail::read_optional(j, "transmittance_min", r.transmittance_min, sec);
    detail::read_optional(j, "tile_size", r.tile_size, sec);
    return r;
}

} // namespace

std::string to_string(ProviderKind kind) {
    switch (kind) {
    case ProviderKind::Remote: return "remote";
    case ProviderKind::Oracle: return "oracle";
    case ProviderKind::Null: return "null";
    }
    return "remote";
}

void EngineConfig::validate() const {
    if (scene.n_points < 1) throw ConfigError("scene.n_points must be >= 1");
    if (!(scene.radius > 0.0)) throw ConfigError("scene.radius must be > 0");
    if (!(scene.opacity_min > 0.0 && scene.opacity_min <= scene.opacity_max && scene.opacity_max < 1.0)) {
        throw ConfigError("scene: need 0 < opacity_min <= opacity_max < 1");
    }
    if (!(raster.low_pass >= 0.0)) throw ConfigError("raster.low_pass must be >= 0");
    if (!(raster.support_sigma > 0.0)) throw ConfigError("raster.support_sigma must be > 0");
    if (!(raster.alpha_max > 0.0 && raster.alpha_max < 1.0)) throw ConfigError("raster.alpha_max must lie in (0, 1)");
    if (!(raster.transmittance_min > 0.0 && raster.transmittance_min < 1.0)) {
        throw ConfigError("raster.transmittance_min must lie in (0, 1)");
    }
    if (raster.tile_size < 1) throw ConfigError("raster.tile_size must be >= 1");
    if (guidance.timeout_ms < 1) throw ConfigError("guidance.timeout_ms must be >= 1");
    if (guidance.retries < 0) throw ConfigError("guidance.retries must be >= 0");
    if (checkpoint_interval < 0) throw ConfigError("trainer.checkpoint_interval must be >= 0");
    if (visualization_interval < 0) throw ConfigError("trainer.visualization_interval must be >= 0");
    oracle.validate();
    cameras.validate();
    density.validate();
    stage1.validate();
    stage2.validate();
    if (guidance.provider == ProviderKind::Oracle) {
        for (const StageConfig& s : stages()) {
            if (s.resolution != oracle.resolution) {
                throw ConfigError(fmt::format("{}.resolution {} differs from oracle.resolution {}", s.name,
                                              s.resolution, oracle.resolution));
            }
        }
    }
}

std::vector<StageConfig> EngineConfig::stages() const {
    std::vector<StageConfig> out;
    if (stage1.enabled) out.push_back(stage1);
    if (stage2.enabled) out.push_back(stage2);
    return out;
}

nlohmann::json EngineConfig::to_json() const {
    return {{"seed", seed},
            {"scene",
             {{"n_points", scene.n_points},
              {"radius", scene.radius},
              {"opacity_max", scene.opacity_max},
              {"opacity_min", scene.opacity_min}}},
            {"raster",
             {{"low_pass", raster.low_pass},
              {"support_sigma", raster.support_sigma},
              {"alpha_max", raster.alpha_max},
              {"transmittance_min", raster.transmittance_min},
              {"tile_size", raster.tile_size}}},
            {"diffusion", {{"schedule", schedule.to_json()}, {"weighting", weights.name()}}},
            {"guidance",
             {{"provider", to_string(guidance.provider)},
              {"endpoint", guidance.endpoint},
              {"timeout_ms", guidance.timeout_ms},
              {"retries", guidance.retries},
              {"prompt", guidance.prompt}}},
            {"oracle", oracle.to_json()},
            {"cameras", cameras.to_json()},
            {"density", density.to_json()},
            {"trainer",
             {{"stage1", stage1.to_json()},
              {"stage2", stage2.to_json()},
              {"checkpoint_interval", checkpoint_interval},
              {"visualization_interval", visualization_interval}}}};
}

EngineConfig EngineConfig::from_json(const nlohmann::json& j) {
    detail::reject_unknown_keys(
        j, {"seed", "scene", "raster", "diffusion", "guidance", "oracle", "cameras", "density", "trainer"}, "config");
    EngineConfig c;
    detail::read_optional(j, "seed", c.seed, "config");
    c.scene = scene_from_json(section(j, "scene"));
    c.raster = raster_from_json(section(j, "raster"));

    const auto& diff = section(j, "diffusion");
    detail::reject_unknown_keys(diff, {"schedule", "weighting"}, "diffusion");
    if (diff.contains("schedule")) {
        nlohmann::json merged = c.schedule.to_json();
        detail::reject_unknown_keys(diff.at("schedule"), {"T", "beta_start", "beta_end", "kind"}, "diffusion.schedule");
        merged.update(diff.at("schedule"));
        c.schedule = NoiseSchedule::from_json(merged);
    }
    std::string weighting = c.weights.name();
    detail::read_optional(diff, "weighting", weighting, "diffusion");
    c.weights = SdsWeights::parse(weighting);

    const auto& g = section(j, "guidance");
    detail::reject_unknown_keys(g, {"provider", "endpoint", "timeout_ms", "retries", "prompt"}, "guidance");
    std::string provider = to_string(c.guidance.provider);
    detail::read_optional(g, "provider", provider, "guidance");
    c.guidance.provider = parse_provider(provider);
    detail::read_optional(g, "endpoint", c.guidance.endpoint, "guidance");
    detail::read_optional(g, "timeout_ms", c.guidance.timeout_ms, "guidance");
    detail::read_optional(g, "retries", c.guidance.retries, "guidance");
    detail::read_optional(g, "prompt", c.guidance.prompt, "guidance");

    c.oracle = OracleSetupConfig::from_json(section(j, "oracle"));
    c.cameras = CameraSamplerConfig::from_json(section(j, "cameras"));
    c.density = DensityControlConfig::from_json(section(j, "density"));

    const auto& t = section(j, "trainer");
    detail::reject_unknown_keys(t, {"stage1", "stage2", "checkpoint_interval", "visualization_interval"}, "trainer");
    c.stage1 = StageConfig::from_json(section(t, "stage1"), StageConfig::stage1_defaults());
    c.stage2 = StageConfig::from_json(section(t, "stage2"), StageConfig::stage2_defaults());
    detail::read_optional(t, "checkpoint_interval", c.checkpoint_interval, "trainer");
    detail::read_optional(t, "visualization_interval", c.visualization_interval, "trainer");
    c.validate();
    return c;
}

std::vector<std::string> config_keys() {
    std::vector<std::string> keys;
    flatten(EngineConfig{}.to_json(), "", keys);
    std::sort(keys.begin(), keys.end());
    return keys;
}

void apply_overrides(nlohmann::json& doc, const std::vector<std::string>& overrides) {
    if (!doc.is_object()) throw ConfigError("configuration must be a JSON object");
    const std::vector<std::string> keys = config_keys();
    for (const std::string& ov : overrides) {
        const auto eq = ov.find('=');
        if (eq == std::string::npos || eq == 0) {
            throw ConfigError(fmt::format("override '{}' must look like key=value", ov));
        }
        const std::string key = ov.substr(0, eq);
        const std::string raw = ov.substr(eq + 1);
        if (!std::binary_search(keys.begin(), keys.end(), key)) {
            std::string valid;
            for (const auto& k : keys) valid += "\n  " + k;
            throw ConfigError(fmt::format("unknown configuration key '{}'. Valid keys:{}", key, valid));
        }
        nlohmann::json value = nlohmann::json::parse(raw, nullptr, false);
        if (value.is_discarded()) value = raw;

        nlohmann::json* node = &doc;
        std::size_t start = 0;
        while (true) {
            const auto dot = key.find('.', start);
            const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
            if (dot == std::string::npos) {
                (*node)[part] = value;
                break;
            }
            nlohmann::json& child = (*node)[part];
            if (child.is_null()) child = nlohmann::json::object();
            if (!child.is_object()) throw ConfigError(fmt::format("'{}' is not a section", key.substr(0, dot)));
            node = &child;
            start = dot + 1;
        }
    }
}

EngineConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError(fmt::format("cannot read config file '{}'", path.string()));
    std::stringstream buf;
    buf << in.rdbuf();
    nlohmann::json doc = nlohmann::json::parse(buf.str(), nullptr, false, /*ignore_comments=*/true);
    if (doc.is_discarded()) throw ConfigError(fmt::format("config file '{}' is not valid JSON", path.string()));
    apply_overrides(doc, overrides);
    return EngineConfig::from_json(doc);
}

std::string config_hash(const nlohmann::json& doc) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : doc.dump()) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return fmt::format("{:016x}", h);
}

} // namespace gdistill
