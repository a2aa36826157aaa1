#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "tensorpool/cluster.hpp"

namespace tensorpool {

inline constexpr const char* kReportSchemaVersion = "1.0.0";

struct EngineMetrics {
    std::string name;
    std::string kind;  ///< "te", "pe" or "dma"
    std::uint64_t busy_cycles = 0;
    std::uint64_t stall_cycles = 0;
    std::uint64_t idle_cycles = 0;
    double utilization = 0.0;
};

struct VerificationResult {
    bool pass = true;
    std::uint64_t checked = 0;
    std::uint64_t mismatches = 0;
    double max_abs_error = 0.0;
    std::string detail;
};

struct MetricsReport {
    std::string workload;
    nlohmann::json spec;
    Cycle total_cycles = 0;
    std::vector<EngineMetrics> engines;
    std::uint64_t macs = 0;
    double macs_per_cycle = 0.0;
    double te_utilization = 0.0;
    InterconnectCounters interconnect;
    std::uint64_t bank_accesses = 0;
    std::uint64_t bank_conflicts = 0;
    std::uint64_t dma_bytes = 0;
    std::uint64_t dma_busy_cycles = 0;
    VerificationResult verification;
    /// Workload-specific scalars (speedup, sequential runtime, IPC, ...).
    std::map<std::string, double> scalars;
    /// Structured extras such as task timelines; omitted when null.
    nlohmann::json details;

    bool valid() const { return verification.pass; }
    nlohmann::json to_json() const;
    /// Scalar view for sweep tables; keys sorted.
    std::map<std::string, double> flatten() const;
};

/// Fills the engine, interconnect and DMA sections from a finished cluster.
/// `te_start` and `te_end` bound the window used for per-engine accounting.
void collect_cluster_metrics(Cluster& c, Cycle start, Cycle end, MetricsReport& r);

/// Checks a report document against the in-repo schema rules. Returns an
/// empty string when valid, otherwise the first violation.
std::string validate_report_json(const nlohmann::json& doc, const nlohmann::json& schema);

}  // namespace tensorpool
