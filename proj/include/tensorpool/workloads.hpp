#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "tensorpool/cluster.hpp"
#include "tensorpool/oracles.hpp"
#include "tensorpool/report.hpp"

namespace tensorpool {

// ---------------------------------------------------------------- placement

/// Bump allocator over L1, aligned to the tile rotation so that the local
/// access pattern and group-local layouts line up with tile boundaries.
class L1Allocator {
public:
    explicit L1Allocator(const ClusterConfig& cfg, Addr start = 0);
    Addr alloc(std::uint64_t bytes);
    Addr used() const { return next_; }

private:
    std::uint64_t align_;
    std::uint64_t limit_;
    Addr next_;
};

/// Layout that keeps every group's rows inside that group's tiles: group g
/// owns rows [g*rows_per_group, (g+1)*rows_per_group). Only valid when a row
/// fits one group's share of a tile rotation.
RowLayout group_local_layout(std::uint32_t rows_per_group, std::uint32_t row_bytes, const ClusterConfig& cfg);
bool group_local_feasible(std::uint32_t row_bytes, const ClusterConfig& cfg);
/// Bytes spanned by `rows` rows of a layout.
std::uint64_t layout_bytes(const RowLayout& l, std::uint32_t rows, std::uint32_t row_bytes);

Matrix read_matrix(const BankArray& l1, Addr base, const RowLayout& l, std::uint32_t rows, std::uint32_t cols);
/// Rounds to FP16 and stores; returns the stored values.
Matrix write_matrix(BankArray& l1, Addr base, const RowLayout& l, const Matrix& m);
/// Seeded uniform values in [lo, hi), rounded to FP16.
Matrix random_matrix(std::uint32_t rows, std::uint32_t cols, std::uint64_t seed, double lo, double hi);

struct GemmOperands {
    std::uint32_t m = 0, n = 0, k = 0;
    Addr x = 0, w = 0, y = 0, z = 0;
    RowLayout x_layout, w_layout, y_layout, z_layout;
};

struct TeJob {
    std::uint32_t te = 0;
    TeConfigRegs regs;
    std::uint32_t row_lo = 0, row_hi = 0, col_lo = 0, col_hi = 0;
};

/// How an m x n output is split over engines: 32-row blocks first, then
/// column ranges when there are fewer row blocks than engines.
struct PartitionPlan {
    std::uint32_t row_parts = 1;
    std::uint32_t col_parts = 1;
    std::vector<std::uint32_t> row_bounds;  ///< row_parts + 1 entries
    std::vector<std::uint32_t> col_bounds;  ///< col_parts + 1 entries
    /// Rows owned by the engines of one group, or 0 if groups do not own
    /// contiguous row ranges.
    std::uint32_t rows_per_group = 0;
};

PartitionPlan plan_partition(std::uint32_t m, std::uint32_t n, std::uint32_t engines, const ClusterConfig& cfg);

/// One TE job per engine of the plan. With `interleave`, engines sharing a
/// column range start at staggered W columns and loop back.
std::vector<TeJob> partition_gemm(const GemmOperands& op, const PartitionPlan& plan, bool interleave,
                                  const ClusterConfig& cfg);

// ---------------------------------------------------------------- GEMM

enum class ParallelMode { SingleTe, IndependentPerTe, RowPartitioned };

std::string to_string(ParallelMode m);
ParallelMode parse_parallel_mode(const std::string& s);

struct GemmSpec {
    std::uint32_t m = 64, n = 64, k = 64;
    ParallelMode mode = ParallelMode::SingleTe;
    bool interleave_w = true;
    bool group_local = true;
    std::uint64_t seed = 1;
    bool verify = true;
    bool compute_speedup = false;
    std::uint32_t beat_jitter = 0;
    std::optional<Addr> x_base, w_base, y_base;

    nlohmann::json to_json() const;
    static GemmSpec from_json(const nlohmann::json& j);
};

struct RunOptions {
    ClusterOptions cluster;
    bool trace = false;
    /// Receives the finished cluster (traces, dumps) before it is destroyed.
    std::function<void(Cluster&)> inspect;
};

/// Runs the GEMM and verifies Z against the FP64 oracle. Throws ConfigError
/// when the operands do not fit L1.
MetricsReport run_gemm(const GemmSpec& spec, const ClusterConfig& cfg, const RunOptions& opt = {});

// ---------------------------------------------------------------- scheduling

class DependencyError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class EngineKind { Te, Pe, Dma };

struct Task {
    std::string name;
    EngineKind kind = EngineKind::Te;
    std::vector<std::size_t> deps;
    std::vector<TeJob> te_jobs;
    std::string kernel;  ///< recipe name for PE tasks
    std::uint64_t elements = 0;
    std::vector<OperandRegion> operands;
    std::function<void(Cluster&)> apply;  ///< PE functional effect
    std::vector<DmaJob> dma_jobs;
    /// Address ranges for hazard checks between concurrently running tasks.
    std::vector<OperandRegion> reads, writes;
    std::uint64_t macs = 0;
};

struct TaskTiming {
    std::string name;
    EngineKind kind = EngineKind::Te;
    Cycle start = 0;
    Cycle end = 0;
};

enum class ScheduleMode { Sequential, Concurrent };

std::string to_string(ScheduleMode m);

/// Executes a static task graph on the cluster. Sequential mode adds an
/// edge from every task to the next one in insertion order; concurrent mode
/// only honours declared edges and engine availability. TE completion is
/// signalled by interrupt, DMA completion by polling; both cost one cycle.
class TaskGraph {
public:
    std::size_t add(Task t);
    const std::vector<Task>& tasks() const { return tasks_; }
    std::vector<TaskTiming> run(Cluster& c, ScheduleMode mode, const KernelLibrary& kernels) const;

private:
    std::vector<Task> tasks_;
};

// ---------------------------------------------------------------- fused blocks

enum class FusedBlock { FcSoftmax, DwsepConv, Mha };

std::string to_string(FusedBlock b);
FusedBlock parse_fused_block(const std::string& s);

struct FusedBlockSpec {
    FusedBlock block = FusedBlock::FcSoftmax;
    ScheduleMode mode = ScheduleMode::Concurrent;
    bool double_buffer = true;
    std::uint32_t iterations = 4;
    // fc_softmax
    std::uint32_t fc_rows = 512, fc_in = 512, fc_out = 512;
    // dwsep_conv
    std::uint32_t conv_height = 16, conv_width = 32, conv_channels = 512;
    // mha
    std::uint32_t mha_seq = 128, mha_dim = 512, mha_heads = 4;
    std::uint64_t seed = 1;
    bool verify = true;
    /// Also run the other schedule and report the runtime reduction and
    /// whether both produced the same output bytes.
    bool compare_modes = false;

    nlohmann::json to_json() const;
    static FusedBlockSpec from_json(const nlohmann::json& j);
};

/// Runs one fused block. The report carries the final output bytes' hash in
/// `scalars["output_hash"]` so that modes can be compared bit for bit.
MetricsReport run_fused_block(const FusedBlockSpec& spec, const ClusterConfig& cfg, const KernelLibrary& kernels,
                              const RunOptions& opt = {});

// ---------------------------------------------------------------- PE kernels

struct PeKernelSpec {
    std::string kernel = "relu";
    std::uint64_t elements = 65536;
    std::uint32_t pes = 0;  ///< 0 means every PE
    std::uint64_t seed = 1;

    nlohmann::json to_json() const;
    static PeKernelSpec from_json(const nlohmann::json& j);
};

/// Runs a PE recipe standalone; the report's scalars hold runtime and IPC.
MetricsReport run_pe_kernel(const PeKernelSpec& spec, const ClusterConfig& cfg, const KernelLibrary& kernels,
                            const RunOptions& opt = {});

// ---------------------------------------------------------------- dispatch

/// Dispatches a workload document on its "type" field: gemm, fused or pe_kernel.
MetricsReport run_workload(const nlohmann::json& workload, const ClusterConfig& cfg, const KernelLibrary& kernels,
                           const RunOptions& opt = {});

}  // namespace tensorpool
