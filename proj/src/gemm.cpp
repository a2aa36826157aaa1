#include <algorithm>
#include <cmath>
#include <tuple>

#include "tensorpool/fp16.hpp"
#include "tensorpool/workloads.hpp"

namespace tensorpool {

using nlohmann::json;

L1Allocator::L1Allocator(const ClusterConfig& cfg, Addr start)
    : align_(std::uint64_t{cfg.tile_interleave_bytes()} * cfg.num_tiles()), limit_(cfg.l1_bytes()), next_(start) {}

Addr L1Allocator::alloc(std::uint64_t bytes) {
    const Addr base = (next_ + align_ - 1) / align_ * align_;
    if (base + bytes > limit_) {
        throw ConfigError("operands need " + std::to_string(base + bytes) + " B of L1 but only "
                          + std::to_string(limit_) + " B exist");
    }
    next_ = base + bytes;
    return base;
}

bool group_local_feasible(std::uint32_t row_bytes, const ClusterConfig& cfg) {
    return row_bytes > 0 && row_bytes <= cfg.tiles_per_group() * cfg.tile_interleave_bytes();
}

RowLayout group_local_layout(std::uint32_t rows_per_group, std::uint32_t row_bytes, const ClusterConfig& cfg) {
    if (!group_local_feasible(row_bytes, cfg)) throw ConfigError("row too wide for a group-local layout");
    RowLayout l;
    l.row_stride = std::uint64_t{cfg.tile_interleave_bytes()} * cfg.num_tiles();
    l.rows_per_block = rows_per_group;
    l.block_stride = std::uint64_t{cfg.tiles_per_group()} * cfg.tile_interleave_bytes();
    return l;
}

std::uint64_t layout_bytes(const RowLayout& l, std::uint32_t rows, std::uint32_t row_bytes) {
    if (rows == 0) return 0;
    Addr last = l.row_addr(0, rows - 1);
    if (l.rows_per_block > 0 && rows > l.rows_per_block) last = std::max(last, l.row_addr(0, l.rows_per_block - 1));
    return last + row_bytes;
}

Matrix read_matrix(const BankArray& l1, Addr base, const RowLayout& l, std::uint32_t rows, std::uint32_t cols) {
    Matrix m(rows, cols);
    for (std::uint32_t r = 0; r < rows; ++r) {
        const Addr row = l.row_addr(base, r);
        for (std::uint32_t c = 0; c < cols; ++c) m.at(r, c) = half_to_float(l1.peek_half(row + 2ull * c));
    }
    return m;
}

Matrix write_matrix(BankArray& l1, Addr base, const RowLayout& l, const Matrix& m) {
    Matrix stored(m.rows, m.cols);
    for (std::uint32_t r = 0; r < m.rows; ++r) {
        const Addr row = l.row_addr(base, r);
        for (std::uint32_t c = 0; c < m.cols; ++c) {
            const std::uint16_t h = float_to_half(static_cast<float>(m.at(r, c)));
            l1.poke_half(row + 2ull * c, h);
            stored.at(r, c) = half_to_float(h);
        }
    }
    return stored;
}

namespace {

std::uint64_t splitmix(std::uint64_t& s) {
    std::uint64_t z = (s += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

RowLayout dense(std::uint32_t cols) { return RowLayout{2ull * cols, 0, 0}; }

RowLayout or_dense(const RowLayout& l, std::uint32_t cols) { return l.row_stride == 0 ? dense(cols) : l; }

/// Base and layout of the sub-matrix starting at row `lo` with `count` rows.
std::pair<Addr, RowLayout> sub_rows(Addr base, const RowLayout& l, std::uint32_t lo, std::uint32_t count) {
    if (l.rows_per_block == 0) return {base + lo * l.row_stride, l};
    if (lo % l.rows_per_block == 0) return {l.row_addr(base, lo), l};
    if (lo / l.rows_per_block == (lo + count - 1) / l.rows_per_block) {
        return {l.row_addr(base, lo), RowLayout{l.row_stride, 0, 0}};
    }
    throw std::logic_error("row range straddles a layout block");
}

std::vector<std::uint32_t> even_bounds(std::uint32_t tiles, std::uint32_t parts, std::uint32_t unit) {
    std::vector<std::uint32_t> b(parts + 1);
    for (std::uint32_t i = 0; i <= parts; ++i) b[i] = static_cast<std::uint32_t>(std::uint64_t{i} * tiles / parts) * unit;
    return b;
}

}  // namespace

Matrix random_matrix(std::uint32_t rows, std::uint32_t cols, std::uint64_t seed, double lo, double hi) {
    Matrix m(rows, cols);
    std::uint64_t s = seed;
    for (double& v : m.v) {
        const double u = static_cast<double>(splitmix(s) >> 11) * 0x1.0p-53;
        v = half_to_float(float_to_half(static_cast<float>(lo + u * (hi - lo))));
    }
    return m;
}

PartitionPlan plan_partition(std::uint32_t m, std::uint32_t n, std::uint32_t engines, const ClusterConfig& cfg) {
    const std::uint32_t unit = cfg.te_rows;
    const std::uint32_t tcols = cfg.te_tile_cols();
    if (m == 0 || n == 0 || m % unit != 0 || n % tcols != 0 || engines == 0) {
        throw ConfigError("partition needs m a multiple of " + std::to_string(unit) + " and n a multiple of "
                          + std::to_string(tcols));
    }
    PartitionPlan p;
    const std::uint32_t row_blocks = m / unit;
    const std::uint32_t col_tiles = n / tcols;
    if (row_blocks >= engines) {
        p.row_parts = engines;
        p.col_parts = 1;
    } else {
        p.row_parts = row_blocks;
        p.col_parts = std::min(engines / row_blocks, col_tiles);
    }
    p.row_bounds = even_bounds(row_blocks, p.row_parts, unit);
    p.col_bounds = even_bounds(col_tiles, p.col_parts, tcols);

    const std::uint32_t per_group = cfg.num_tes() / cfg.groups;
    const bool whole_pool = engines == cfg.num_tes() && p.row_parts * p.col_parts == engines;
    if (whole_pool && p.col_parts == 1 && row_blocks % engines == 0) {
        p.rows_per_group = per_group * (m / engines);
    } else if (whole_pool && p.col_parts <= per_group && per_group % p.col_parts == 0) {
        p.rows_per_group = per_group / p.col_parts * unit;
    }
    return p;
}

std::vector<TeJob> partition_gemm(const GemmOperands& op, const PartitionPlan& plan, bool interleave,
                                  const ClusterConfig& cfg) {
    const RowLayout xl = or_dense(op.x_layout, op.k);
    const RowLayout wl = or_dense(op.w_layout, op.n);
    const RowLayout yl = or_dense(op.y_layout, op.n);
    const RowLayout zl = or_dense(op.z_layout, op.n);
    const std::uint32_t tcols = cfg.te_tile_cols();
    std::vector<TeJob> jobs;
    for (std::uint32_t r = 0; r < plan.row_parts; ++r) {
        for (std::uint32_t c = 0; c < plan.col_parts; ++c) {
            TeJob j;
            j.te = r * plan.col_parts + c;
            j.row_lo = plan.row_bounds[r];
            j.row_hi = plan.row_bounds[r + 1];
            j.col_lo = plan.col_bounds[c];
            j.col_hi = plan.col_bounds[c + 1];
            const std::uint32_t rows = j.row_hi - j.row_lo;
            const std::uint32_t cols = j.col_hi - j.col_lo;
            TeConfigRegs& g = j.regs;
            g.m = rows;
            g.n = cols;
            g.k = op.k;
            std::tie(g.x_base, g.x_layout) = sub_rows(op.x, xl, j.row_lo, rows);
            g.w_base = op.w + 2ull * j.col_lo;
            g.w_layout = wl;
            std::tie(g.y_base, g.y_layout) = sub_rows(op.y, yl, j.row_lo, rows);
            g.y_base += 2ull * j.col_lo;
            std::tie(g.z_base, g.z_layout) = sub_rows(op.z, zl, j.row_lo, rows);
            g.z_base += 2ull * j.col_lo;
            // Engines sharing a column range start at evenly spread columns.
            g.w_col_start = interleave ? static_cast<std::uint32_t>(std::uint64_t{r} * cols / plan.row_parts) / tcols * tcols
                                       : 0;
            g.loopback = true;
            jobs.push_back(j);
        }
    }
    return jobs;
}

std::string to_string(ParallelMode m) {
    switch (m) {
        case ParallelMode::SingleTe: return "single_te";
        case ParallelMode::IndependentPerTe: return "independent_per_te";
        case ParallelMode::RowPartitioned: return "row_partitioned_16te";
    }
    return "?";
}

ParallelMode parse_parallel_mode(const std::string& s) {
    if (s == "single_te") return ParallelMode::SingleTe;
    if (s == "independent_per_te") return ParallelMode::IndependentPerTe;
    if (s == "row_partitioned_16te" || s == "row_partitioned") return ParallelMode::RowPartitioned;
    throw ConfigError("unknown parallel_mode: " + s);
}

json GemmSpec::to_json() const {
    json j{{"type", "gemm"},           {"m", m},
           {"n", n},                   {"k", k},
           {"parallel_mode", to_string(mode)},
           {"interleave_w", interleave_w},
           {"group_local", group_local},
           {"seed", seed},
           {"verify", verify},
           {"compute_speedup", compute_speedup},
           {"beat_jitter", beat_jitter}};
    json p = json::object();
    if (x_base) p["x"] = *x_base;
    if (w_base) p["w"] = *w_base;
    if (y_base) p["y"] = *y_base;
    j["placement"] = p;
    return j;
}

GemmSpec GemmSpec::from_json(const json& j) {
    GemmSpec s;
    try {
        if (j.contains("size")) s.m = s.n = s.k = j.at("size").get<std::uint32_t>();
        s.m = j.value("m", s.m);
        s.n = j.value("n", s.n);
        s.k = j.value("k", s.k);
        s.mode = parse_parallel_mode(j.value("parallel_mode", to_string(s.mode)));
        s.interleave_w = j.value("interleave_w", s.interleave_w);
        s.group_local = j.value("group_local", s.group_local);
        s.seed = j.value("seed", s.seed);
        s.verify = j.value("verify", s.verify);
        s.compute_speedup = j.value("compute_speedup", s.compute_speedup);
        s.beat_jitter = j.value("beat_jitter", s.beat_jitter);
        if (j.contains("placement")) {
            const json& p = j.at("placement");
            if (p.contains("x")) s.x_base = p.at("x").get<Addr>();
            if (p.contains("w")) s.w_base = p.at("w").get<Addr>();
            if (p.contains("y")) s.y_base = p.at("y").get<Addr>();
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("bad gemm spec: ") + e.what());
    }
    return s;
}

namespace {

struct GemmInstance {
    GemmOperands op;
    Matrix x, w, y;
    std::vector<TeJob> jobs;
};

}  // namespace

MetricsReport run_gemm(const GemmSpec& spec, const ClusterConfig& cfg, const RunOptions& opt) {
    cfg.validate();
    if (spec.m == 0 || spec.n == 0 || spec.k == 0 || spec.m % cfg.te_rows != 0 || spec.n % cfg.te_tile_cols() != 0
        || spec.k % cfg.wide_beats() != 0) {
        throw ConfigError("gemm dimensions must be positive multiples of the engine tile");
    }
    Cluster c(cfg, opt.cluster);
    if (opt.trace) c.net().enable_trace(true);
    if (spec.beat_jitter > 0) c.net().set_beat_jitter(spec.beat_jitter, spec.seed ^ 0x5eedull);

    L1Allocator alloc(cfg);
    std::vector<GemmInstance> inst;
    auto place = [&](GemmInstance& g, bool group_local, std::uint32_t rows_per_group) {
        GemmOperands& op = g.op;
        op.m = spec.m;
        op.n = spec.n;
        op.k = spec.k;
        op.x_layout = dense(spec.k);
        op.w_layout = dense(spec.n);
        op.y_layout = dense(spec.n);
        if (group_local) {
            op.x_layout = group_local_layout(rows_per_group, 2 * spec.k, cfg);
            op.y_layout = group_local_layout(rows_per_group, 2 * spec.n, cfg);
        }
        op.z_layout = op.y_layout;
        op.x = spec.x_base && inst.size() == 1 ? *spec.x_base : alloc.alloc(layout_bytes(op.x_layout, spec.m, 2 * spec.k));
        op.w = spec.w_base && inst.size() == 1 ? *spec.w_base : alloc.alloc(layout_bytes(op.w_layout, spec.k, 2 * spec.n));
        op.y = spec.y_base && inst.size() == 1 ? *spec.y_base : alloc.alloc(layout_bytes(op.y_layout, spec.m, 2 * spec.n));
        op.z = op.y;
    };

    const std::uint32_t tes = cfg.num_tes();
    if (spec.mode == ParallelMode::RowPartitioned) {
        const PartitionPlan plan = plan_partition(spec.m, spec.n, tes, cfg);
        const bool gl = spec.group_local && plan.rows_per_group > 0 && group_local_feasible(2 * spec.k, cfg)
            && group_local_feasible(2 * spec.n, cfg);
        inst.emplace_back();
        place(inst.back(), gl, plan.rows_per_group);
        inst.back().jobs = partition_gemm(inst.back().op, plan, spec.interleave_w, cfg);
    } else {
        const std::uint32_t count = spec.mode == ParallelMode::SingleTe ? 1 : tes;
        inst.resize(count);
        for (std::uint32_t i = 0; i < count; ++i) {
            place(inst[i], false, 0);
            const PartitionPlan whole{1, 1, {0, spec.m}, {0, spec.n}, 0};
            inst[i].jobs = partition_gemm(inst[i].op, whole, false, cfg);
            inst[i].jobs[0].te = i;
        }
    }

    for (std::size_t i = 0; i < inst.size(); ++i) {
        GemmInstance& g = inst[i];
        const std::uint64_t s = spec.seed * 1000003ull + i * 7919ull;
        g.x = write_matrix(c.l1(), g.op.x, g.op.x_layout, random_matrix(spec.m, spec.k, s + 1, -1.0, 1.0));
        g.w = write_matrix(c.l1(), g.op.w, g.op.w_layout, random_matrix(spec.k, spec.n, s + 2, -1.0, 1.0));
        g.y = write_matrix(c.l1(), g.op.y, g.op.y_layout, random_matrix(spec.m, spec.n, s + 3, -1.0, 1.0));
    }

    std::vector<std::uint32_t> used;
    for (const GemmInstance& g : inst) {
        for (const TeJob& j : g.jobs) {
            const std::uint32_t pe = te_tile(j.te, cfg) * cfg.pes_per_tile;
            if (c.program_te(j.te, j.regs, pe) != TeProgramResult::Accepted) throw ProgramError("TE busy at start");
            used.push_back(j.te);
        }
    }
    c.run_until([&] {
        return std::all_of(used.begin(), used.end(), [&](std::uint32_t t) { return c.te(t).interrupt_pending(); });
    });
    Cycle total = 0;
    for (const std::uint32_t t : used) {
        total = std::max(total, c.te(t).metrics().end_cycle);
        c.te(t).acknowledge_interrupt();
    }

    MetricsReport r;
    r.workload = "gemm";
    r.spec = spec.to_json();
    collect_cluster_metrics(c, 0, total, r);
    r.te_utilization = total == 0 ? 0.0
                                  : static_cast<double>(r.macs)
            / (static_cast<double>(used.size()) * cfg.te_macs_per_cycle() * static_cast<double>(total));
    r.scalars["tes_used"] = static_cast<double>(used.size());
    r.scalars["utilization"] = r.te_utilization;
    double min_u = 1.0, max_u = 0.0;
    for (const std::uint32_t t : used) {
        const double u = c.te(t).metrics().utilization();
        min_u = std::min(min_u, u);
        max_u = std::max(max_u, u);
    }
    r.scalars["te_utilization_min"] = min_u;
    r.scalars["te_utilization_max"] = max_u;

    if (spec.verify) {
        for (const GemmInstance& g : inst) {
            const Matrix got = read_matrix(c.l1(), g.op.z, g.op.z_layout, spec.m, spec.n);
            const Comparison cmp = compare(oracle_gemm(g.x, g.w, g.y), got);
            r.verification.checked += cmp.checked;
            r.verification.mismatches += cmp.mismatches;
            r.verification.max_abs_error = std::max(r.verification.max_abs_error, cmp.max_abs_error);
        }
        r.verification.pass = r.verification.mismatches == 0;
        r.verification.detail = r.verification.pass ? "Z matches FP64 oracle" : "Z differs from FP64 oracle";
    } else {
        r.verification.detail = "not requested";
    }
    if (opt.inspect) opt.inspect(c);

    if (spec.compute_speedup && spec.mode != ParallelMode::SingleTe) {
        GemmSpec base = spec;
        base.mode = ParallelMode::SingleTe;
        base.verify = false;
        base.compute_speedup = false;
        base.x_base.reset();
        base.w_base.reset();
        base.y_base.reset();
        const MetricsReport single = run_gemm(base, cfg);
        const double serial = static_cast<double>(single.total_cycles) * static_cast<double>(inst.size());
        r.scalars["single_te_cycles"] = static_cast<double>(single.total_cycles);
        r.scalars["speedup"] = serial / static_cast<double>(total);
    }
    return r;
}

}  // namespace tensorpool
