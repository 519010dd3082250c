#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "gdistill/density_control.hpp"

namespace gdistill::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitGuidance = 3;
inline constexpr int kExitCheckpoint = 4;
inline constexpr int kExitInterrupted = 130;

/// Entry point shared by the `gdistill` binary and the tests. `args`
/// excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Set by SIGINT/SIGTERM while `train` runs; the loop checkpoints and stops.
std::atomic<bool>& interrupt_flag();

/// `<root>/<hash>-<YYYYmmdd-HHMMSS>[-k]`, created fresh.
std::filesystem::path make_run_dir(const std::filesystem::path& root, const std::string& hash);

struct InspectReport {
    std::string text;
    std::vector<std::string> violations;
    std::vector<std::string> malformed;
    std::size_t event_count = 0;
};

/// Reads an events log (and optionally a metrics log) and checks the density
/// events against the schedule in `config`. `total_iterations` bounds the
/// expected densify grid; when absent it is inferred from the logs.
/// Malformed lines are reported with their line number, never thrown.
InspectReport inspect_logs(const std::filesystem::path& events, const std::optional<std::filesystem::path>& metrics,
                           const DensityControlConfig& config,
                           std::optional<std::int64_t> total_iterations = std::nullopt);

} // namespace gdistill::cli
