#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "tensorpool/workloads.hpp"

namespace tensorpool {

/// One swept parameter. Names starting with "config." override cluster
/// config keys; any other name sets a (dotted) key of the workload.
struct SweepAxis {
    std::string name;
    std::vector<nlohmann::json> values;
};

struct SweepSpec {
    nlohmann::json workload;
    nlohmann::json config = nlohmann::json::object();  ///< overrides applied before the axes
    std::vector<SweepAxis> axes;
    std::uint32_t repetitions = 1;
    std::uint64_t seed = 1;

    static SweepSpec from_json(const nlohmann::json& j);
    static SweepSpec load(const std::string& path);
    nlohmann::json to_json() const;
};

struct SweepPoint {
    std::vector<nlohmann::json> axis_values;
    std::uint32_t repetition = 0;
    std::uint64_t seed = 0;
    nlohmann::json config;    ///< full cluster config document
    nlohmann::json workload;  ///< full workload document
};

/// Cartesian product, first axis outermost, repetitions innermost.
std::vector<SweepPoint> expand_sweep(const SweepSpec& spec, const nlohmann::json& base_config);

struct SweepResult {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
    bool complete = true;
    std::string failure;   ///< why the sweep stopped early
    int exit_code = 0;     ///< 0, or the simulate exit code of the failing point
};

/// Worker count for sweeps: TENSORPOOL_SIM_THREADS when set, else the
/// hardware concurrency, never more than `points`.
unsigned sweep_threads(std::size_t points);

/// Runs every point (possibly in parallel) and tabulates them in expansion
/// order. Rows stop at the first point that fails or throws.
SweepResult run_sweep(const SweepSpec& spec, const nlohmann::json& base_config, unsigned threads = 0);

/// Writes the table; an incomplete table ends with a "# incomplete" line.
void write_sweep_csv(const SweepResult& r, std::ostream& os);

/// Exit code the CLI uses for an exception escaping a simulation.
int exit_code_for(const std::exception& e);

}  // namespace tensorpool
