#include <algorithm>

#include "tensorpool/workloads.hpp"

namespace tensorpool {

std::string to_string(ScheduleMode m) { return m == ScheduleMode::Sequential ? "sequential" : "concurrent"; }

std::size_t TaskGraph::add(Task t) {
    for (const std::size_t d : t.deps) {
        if (d >= tasks_.size()) throw std::logic_error("task '" + t.name + "' depends on a later task");
    }
    tasks_.push_back(std::move(t));
    return tasks_.size() - 1;
}

namespace {

bool overlaps(const std::vector<OperandRegion>& a, const std::vector<OperandRegion>& b) {
    for (const OperandRegion& x : a) {
        for (const OperandRegion& y : b) {
            if (x.base < y.base + y.bytes && y.base < x.base + x.bytes) return true;
        }
    }
    return false;
}

enum class State { Pending, Running, Done };

}  // namespace

std::vector<TaskTiming> TaskGraph::run(Cluster& c, ScheduleMode mode, const KernelLibrary& kernels) const {
    const ClusterConfig& cfg = c.config();
    const std::size_t n = tasks_.size();
    std::vector<State> state(n, State::Pending);
    std::vector<TaskTiming> timing(n);
    std::vector<std::vector<DmaHandle>> dma(n);
    std::vector<KernelHandle> kernel(n, 0);
    std::vector<bool> te_claimed(cfg.num_tes(), false);
    bool pes_claimed = false;
    std::size_t done = 0;

    std::vector<std::uint32_t> all_pes(cfg.num_pes());
    for (std::uint32_t p = 0; p < cfg.num_pes(); ++p) all_pes[p] = p;

    auto deps_met = [&](std::size_t i) {
        if (mode == ScheduleMode::Sequential && i > 0 && state[i - 1] != State::Done) return false;
        return std::all_of(tasks_[i].deps.begin(), tasks_[i].deps.end(),
                           [&](std::size_t d) { return state[d] == State::Done; });
    };
    auto resources_free = [&](const Task& t) {
        if (t.kind == EngineKind::Pe) return !pes_claimed;
        if (t.kind == EngineKind::Te) {
            return std::none_of(t.te_jobs.begin(), t.te_jobs.end(), [&](const TeJob& j) { return te_claimed[j.te]; });
        }
        return true;
    };
    auto finished = [&](std::size_t i) {
        const Task& t = tasks_[i];
        switch (t.kind) {
            case EngineKind::Te:
                return std::all_of(t.te_jobs.begin(), t.te_jobs.end(),
                                   [&](const TeJob& j) { return c.te(j.te).interrupt_pending(); });
            case EngineKind::Pe: return c.pes().done(kernel[i]);
            case EngineKind::Dma:
                return std::all_of(dma[i].begin(), dma[i].end(),
                                   [&](DmaHandle h) { return c.dma().status(h) == DmaStatus::Done; });
        }
        return false;
    };

    auto start = [&](std::size_t i) {
        const Task& t = tasks_[i];
        // Independent check of the graph: nothing running may touch what this
        // task writes, nor write what it reads.
        for (std::size_t u = 0; u < n; ++u) {
            if (state[u] != State::Running) continue;
            const Task& o = tasks_[u];
            if (overlaps(t.writes, o.reads) || overlaps(t.writes, o.writes) || overlaps(t.reads, o.writes)) {
                throw DependencyError("task '" + t.name + "' would race with running task '" + o.name + "'");
            }
        }
        timing[i].name = t.name;
        timing[i].kind = t.kind;
        timing[i].start = c.now();
        switch (t.kind) {
            case EngineKind::Te:
                for (const TeJob& j : t.te_jobs) {
                    const std::uint32_t pe = te_tile(j.te, cfg) * cfg.pes_per_tile;
                    if (c.program_te(j.te, j.regs, pe) != TeProgramResult::Accepted) {
                        throw ProgramError("TE " + std::to_string(j.te) + " busy when starting '" + t.name + "'");
                    }
                    te_claimed[j.te] = true;
                }
                break;
            case EngineKind::Pe: {
                KernelLaunch l;
                l.recipe = &kernels.get(t.kernel);
                l.pes = all_pes;
                l.elements = t.elements;
                l.operands = t.operands;
                if (t.apply) l.apply = [&c, f = t.apply] { f(c); };
                l.seed = i + 1;
                kernel[i] = c.pes().launch(std::move(l), c.now());
                pes_claimed = true;
                break;
            }
            case EngineKind::Dma:
                for (const DmaJob& j : t.dma_jobs) {
                    const DmaHandle h = c.dma().program(j, c.now());
                    if (c.dma().status(h) == DmaStatus::Fault) throw AddressFault("DMA fault in '" + t.name + "'");
                    dma[i].push_back(h);
                }
                break;
        }
        state[i] = State::Running;
    };

    auto complete = [&](std::size_t i) {
        const Task& t = tasks_[i];
        switch (t.kind) {
            case EngineKind::Te: {
                Cycle end = 0;
                for (const TeJob& j : t.te_jobs) {
                    end = std::max(end, c.te(j.te).metrics().end_cycle);
                    c.te(j.te).acknowledge_interrupt();
                    te_claimed[j.te] = false;
                }
                timing[i].end = end;
                break;
            }
            case EngineKind::Pe:
                timing[i].end = c.pes().metrics(kernel[i]).end;
                pes_claimed = false;
                break;
            case EngineKind::Dma: {
                Cycle end = timing[i].start;
                for (const DmaHandle h : dma[i]) end = std::max(end, c.dma().completion_cycle(h));
                timing[i].end = end;
                break;
            }
        }
        state[i] = State::Done;
        ++done;
    };

    while (done < n) {
        for (std::size_t i = 0; i < n; ++i) {
            if (state[i] == State::Pending && deps_met(i) && resources_free(tasks_[i])) start(i);
        }
        const bool any_running = std::any_of(state.begin(), state.end(), [](State s) { return s == State::Running; });
        if (!any_running) throw DependencyError("task graph cannot make progress");
        // Completion is observed one cycle after it happens (interrupt or poll).
        c.run_until([&] {
            for (std::size_t i = 0; i < n; ++i) {
                if (state[i] == State::Running && finished(i)) return true;
            }
            return false;
        });
        c.step();
        for (std::size_t i = 0; i < n; ++i) {
            if (state[i] == State::Running && finished(i)) complete(i);
        }
    }
    return timing;
}

}  // namespace tensorpool
