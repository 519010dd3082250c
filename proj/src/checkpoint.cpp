#include "gdistill/checkpoint.hpp"

#include <fmt/format.h>

#include <fstream>
#include <sstream>
#include <system_error>

#include "gdistill/errors.hpp"
#include "gdistill/ply.hpp"

namespace fs = std::filesystem;

namespace gdistill {

void save_checkpoint(const fs::path& dir, const TrainState& state, const nlohmann::json& config) {
    const fs::path tmp = dir.string() + ".tmp";
    const fs::path old = dir.string() + ".old";
    std::error_code ec;
    fs::remove_all(tmp, ec);
    if (!fs::create_directories(tmp, ec) && ec) {
        throw IoError(fmt::format("cannot create {}: {}", tmp.string(), ec.message()));
    }
    export_ply(state.scene, tmp / "scene.ply");

    const nlohmann::json doc = {{"format", kCheckpointFormat},
                                {"stage", state.stage},
                                {"iteration", state.iteration},
                                {"skipped_steps", state.skipped_steps},
                                {"n", state.scene.size()},
                                {"rng", state.rng.save_state()},
                                {"optimizer", state.optimizer.to_json()},
                                {"grad_stats", state.stats.to_json()},
                                {"config", config}};
    {
        std::ofstream out(tmp / "state.json", std::ios::binary);
        out << doc.dump();
        out.flush();
        if (!out) throw IoError(fmt::format("cannot write {}", (tmp / "state.json").string()));
    }

    fs::remove_all(old, ec);
    if (fs::exists(dir)) {
        fs::rename(dir, old, ec);
        if (ec) throw IoError(fmt::format("cannot move aside {}: {}", dir.string(), ec.message()));
    }
    fs::rename(tmp, dir, ec);
    if (ec) throw IoError(fmt::format("cannot move {} into place: {}", tmp.string(), ec.message()));
    fs::remove_all(old, ec);
}

Checkpoint load_checkpoint(const fs::path& dir) {
    const fs::path state_path = dir / "state.json";
    std::ifstream in(state_path, std::ios::binary);
    if (!in) throw IoError(fmt::format("checkpoint {} has no readable state.json", dir.string()));
    std::stringstream buf;
    buf << in.rdbuf();
    const auto doc = nlohmann::json::parse(buf.str(), nullptr, false);
    if (doc.is_discarded() || !doc.is_object()) throw IoError(fmt::format("{} is not valid JSON", state_path.string()));

    Checkpoint cp;
    try {
        if (doc.at("format").get<std::string>() != kCheckpointFormat) {
            throw IoError(fmt::format("{}: unknown checkpoint format", state_path.string()));
        }
        cp.state.scene = import_ply(dir / "scene.ply");
        cp.state.stage = doc.at("stage").get<int>();
        cp.state.iteration = doc.at("iteration").get<std::int64_t>();
        cp.state.skipped_steps = doc.at("skipped_steps").get<std::int64_t>();
        cp.state.rng.load_state(doc.at("rng").get<std::string>());
        cp.state.optimizer = SceneOptimizer::from_json(doc.at("optimizer"));
        cp.state.stats = GradStats::from_json(doc.at("grad_stats"));
        cp.config = doc.at("config");
        if (doc.at("n").get<std::size_t>() != cp.state.scene.size()) {
            throw IoError(fmt::format("{}: primitive count disagrees with scene.ply", state_path.string()));
        }
    } catch (const nlohmann::json::exception& e) {
        throw IoError(fmt::format("{}: {}", state_path.string(), e.what()));
    } catch (const InvalidParameter& e) {
        throw IoError(fmt::format("{}: {}", state_path.string(), e.what()));
    }
    if (cp.state.optimizer.size() != cp.state.scene.size() || cp.state.stats.size() != cp.state.scene.size()) {
        throw IoError(fmt::format("{}: optimizer/statistics do not match the scene", dir.string()));
    }
    if (cp.state.stage < 0 || cp.state.iteration < 0) throw IoError(fmt::format("{}: negative counters", dir.string()));
    return cp;
}

} // namespace gdistill
