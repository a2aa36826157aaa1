#include "tensorpool/processing_element.hpp"

#include <algorithm>
#include <bit>
#include <cmath>

namespace tensorpool {

AccessPattern parse_pattern(const std::string& s) {
    if (s == "local") return AccessPattern::Local;
    if (s == "sequential") return AccessPattern::Sequential;
    if (s == "strided") return AccessPattern::Strided;
    if (s == "indexed") return AccessPattern::Indexed;
    throw ConfigError("unknown access pattern: " + s);
}

std::string to_string(AccessPattern p) {
    switch (p) {
        case AccessPattern::Local: return "local";
        case AccessPattern::Sequential: return "sequential";
        case AccessPattern::Strided: return "strided";
        case AccessPattern::Indexed: return "indexed";
    }
    return "?";
}

namespace {

nlohmann::json access_to_json(const std::vector<AccessSpec>& v) {
    nlohmann::json out = nlohmann::json::array();
    for (const AccessSpec& a : v) {
        out.push_back({{"count", a.count}, {"pattern", to_string(a.pattern)}, {"operand", a.operand},
                       {"stride_bytes", a.stride_bytes}});
    }
    return out;
}

std::vector<AccessSpec> access_from_json(const nlohmann::json& j) {
    std::vector<AccessSpec> out;
    for (const auto& e : j) {
        AccessSpec a;
        a.count = e.value("count", 1u);
        a.pattern = parse_pattern(e.value("pattern", std::string("local")));
        a.operand = e.value("operand", 0u);
        a.stride_bytes = e.value("stride_bytes", 4u);
        if (a.stride_bytes == 0 || a.stride_bytes % 4 != 0) throw ConfigError("access stride must be a positive multiple of 4");
        out.push_back(a);
    }
    return out;
}

AccessSpec acc(std::uint32_t count, AccessPattern p, std::uint32_t operand = 0, std::uint32_t stride = 4) {
    return AccessSpec{count, p, operand, stride};
}

PassRecipe pass(std::vector<AccessSpec> loads, std::uint32_t ops, std::uint32_t raw, std::vector<AccessSpec> stores,
                bool barrier = false) {
    PassRecipe p;
    p.loads = std::move(loads);
    p.compute_ops = ops;
    p.raw_stalls = raw;
    p.stores = std::move(stores);
    p.barrier_after = barrier;
    return p;
}

// splitmix64, used for the indexed access pattern
std::uint64_t next_random(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

}  // namespace

nlohmann::json KernelRecipe::to_json() const {
    nlohmann::json passes_j = nlohmann::json::array();
    for (const PassRecipe& p : passes) {
        passes_j.push_back({{"loads", access_to_json(p.loads)},
                            {"compute_ops", p.compute_ops},
                            {"raw_stalls", p.raw_stalls},
                            {"stores", access_to_json(p.stores)},
                            {"item_scale", p.item_scale},
                            {"barrier_after", p.barrier_after}});
    }
    return {{"elements_per_item", elements_per_item}, {"setup_ops", setup_ops}, {"passes", passes_j}};
}

KernelRecipe KernelRecipe::from_json(const std::string& name, const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("kernel recipe '" + name + "' must be an object");
    KernelRecipe r;
    r.name = name;
    try {
        r.elements_per_item = j.value("elements_per_item", 1u);
        r.setup_ops = j.value("setup_ops", 0u);
        for (const auto& pj : j.at("passes")) {
            PassRecipe p;
            p.loads = access_from_json(pj.value("loads", nlohmann::json::array()));
            p.compute_ops = pj.value("compute_ops", 0u);
            p.raw_stalls = pj.value("raw_stalls", 0u);
            p.stores = access_from_json(pj.value("stores", nlohmann::json::array()));
            p.item_scale = pj.value("item_scale", 1.0);
            p.barrier_after = pj.value("barrier_after", false);
            if (p.item_scale < 0) throw ConfigError("item_scale must be non-negative");
            r.passes.push_back(std::move(p));
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("kernel recipe '" + name + "': " + e.what());
    }
    if (r.elements_per_item == 0) throw ConfigError("elements_per_item must be at least 1");
    if (r.passes.empty()) throw ConfigError("kernel recipe '" + name + "' has no passes");
    return r;
}

KernelLibrary KernelLibrary::defaults() {
    using P = AccessPattern;
    KernelLibrary lib;
    auto add = [&](std::string name, std::uint32_t epi, std::uint32_t setup, std::vector<PassRecipe> passes) {
        KernelRecipe r;
        r.name = std::move(name);
        r.elements_per_item = epi;
        r.setup_ops = setup;
        r.passes = std::move(passes);
        lib.set(std::move(r));
    };
    // Operand 0 is the input, operand 1 the output unless noted.
    add("relu", 2, 4, {pass({acc(1, P::Local)}, 1, 0, {acc(1, P::Local, 1)})});
    add("batchnorm", 2, 8, {pass({acc(1, P::Local)}, 2, 0, {acc(1, P::Local, 1)})});
    // Row statistics, then normalise, scale, shift and clamp.
    add("layernorm", 2, 12,
        {pass({acc(1, P::Local)}, 2, 0, {}, true), pass({acc(1, P::Local)}, 4, 1, {acc(1, P::Local, 1)})});
    add("layernorm_relu", 2, 12,
        {pass({acc(1, P::Local)}, 2, 0, {}, true), pass({acc(1, P::Local)}, 5, 1, {acc(1, P::Local, 1)})});
    // Max, exponentiate and sum, normalise.
    add("softmax", 2, 12,
        {pass({acc(1, P::Local)}, 1, 0, {}, true), pass({acc(1, P::Local)}, 9, 2, {acc(1, P::Local, 1)}, true),
         pass({acc(1, P::Local, 1)}, 1, 0, {acc(1, P::Local, 1)})});
    // One output word (two channels) needs nine neighbour words; the centre is
    // local, the rest sit one pixel or one frame row away.
    add("dwconv3x3", 2, 24,
        {pass({acc(1, P::Local), acc(2, P::Strided, 0, 1024), acc(6, P::Indexed)}, 11, 0, {acc(1, P::Local, 1)})});
    // Two source rows per packed output word.
    add("transpose", 2, 8, {pass({acc(2, P::Indexed)}, 2, 0, {acc(1, P::Local, 1)})});
    // Least-squares channel estimate per resource element and antenna pair;
    // operand 1 holds the pilot symbols.
    add("che", 4, 64, {pass({acc(4, P::Local), acc(1, P::Indexed, 1)}, 14, 4, {acc(4, P::Local, 2)})});
    // 8x8 MMSE per resource element: Gram matrix, Cholesky, two solves.
    add("mmse", 1, 128,
        {pass({acc(64, P::Local), acc(8, P::Local), acc(2, P::Indexed, 1)}, 1480, 980, {acc(8, P::Local, 2)})});
    // Radix-4 butterflies, one stage per pass.
    std::vector<PassRecipe> fft;
    for (int stage = 0; stage < 6; ++stage) {
        fft.push_back(pass({acc(3, P::Local), acc(1, P::Strided, 0, 4096)}, 20, 6,
                           {acc(3, P::Local), acc(1, P::Strided, 0, 4096)}, true));
    }
    add("cfft", 1, 48, std::move(fft));
    return lib;
}

KernelLibrary KernelLibrary::from_json(const nlohmann::json& doc) {
    KernelLibrary lib = defaults();
    if (!doc.is_object() || !doc.contains("kernels")) return lib;
    const auto& kj = doc.at("kernels");
    if (!kj.is_object()) throw ConfigError("'kernels' must be an object");
    for (const auto& [name, rj] : kj.items()) lib.set(KernelRecipe::from_json(name, rj));
    return lib;
}

const KernelRecipe& KernelLibrary::get(const std::string& name) const {
    auto it = recipes_.find(name);
    if (it == recipes_.end()) throw ConfigError("unknown kernel recipe: " + name);
    return it->second;
}

std::uint32_t barrier_cost(std::uint32_t pes, const ClusterConfig& cfg) {
    if (pes <= 1) return 0;
    return static_cast<std::uint32_t>(std::bit_width(pes - 1)) * cfg.latency_remote_group;
}

PeArray::PeArray(const ClusterConfig& cfg, Interconnect& net)
    : cfg_(cfg), net_(net), agents_(cfg.num_pes()), totals_(cfg.num_pes()), control_(cfg.num_pes(), 0) {}

KernelHandle PeArray::launch(KernelLaunch launch, Cycle now) {
    if (launch.recipe == nullptr) throw ProgramError("kernel launch without a recipe");
    if (launch.pes.empty()) throw ProgramError("kernel launch on an empty PE set");
    for (const std::uint32_t pe : launch.pes) {
        if (pe >= agents_.size()) throw ProgramError("PE index out of range");
        if (agents_[pe].kernel >= 0) throw ProgramError("PE is already running a kernel");
    }
    for (const OperandRegion& o : launch.operands) {
        if (o.bytes < 4 || o.base % 4 != 0 || o.base + o.bytes > cfg_.l1_bytes()) {
            throw AddressFault("kernel operand outside L1");
        }
    }
    const KernelRecipe& r = *launch.recipe;
    for (const PassRecipe& p : r.passes) {
        for (const auto* list : {&p.loads, &p.stores}) {
            for (const AccessSpec& a : *list) {
                if (a.operand >= launch.operands.size()) throw AddressFault("recipe refers to a missing operand");
            }
        }
    }

    Kernel k;
    const std::uint64_t items = (launch.elements + r.elements_per_item - 1) / r.elements_per_item;
    for (const PassRecipe& p : r.passes) {
        std::vector<Op> ops;
        for (std::uint32_t i = 0; i < p.loads.size(); ++i) {
            if (p.loads[i].count) ops.push_back({OpKind::Load, i, p.loads[i].count});
        }
        if (p.compute_ops) ops.push_back({OpKind::Compute, 0, p.compute_ops});
        if (p.raw_stalls) ops.push_back({OpKind::Raw, 0, p.raw_stalls});
        for (std::uint32_t i = 0; i < p.stores.size(); ++i) {
            if (p.stores[i].count) ops.push_back({OpKind::Store, i, p.stores[i].count});
        }
        k.ops.push_back(std::move(ops));
        k.pass_items.push_back(static_cast<std::uint64_t>(std::ceil(static_cast<double>(items) * p.item_scale)));
    }
    k.remaining = static_cast<std::uint32_t>(launch.pes.size());
    k.metrics.name = r.name;
    k.metrics.start = now;
    k.metrics.pes = static_cast<std::uint32_t>(launch.pes.size());
    k.launch = std::move(launch);
    const KernelHandle h = static_cast<KernelHandle>(kernels_.size());
    kernels_.push_back(std::move(k));
    Kernel& kk = kernels_.back();

    for (std::uint32_t rank = 0; rank < kk.launch.pes.size(); ++rank) {
        const std::uint32_t pe = kk.launch.pes[rank];
        Agent& a = agents_[pe];
        a = Agent{};
        a.kernel = static_cast<int>(h);
        a.rank = rank;
        a.cur.start = now;
        a.rng = kk.launch.seed * 0x100000001b3ull + pe;
        begin_pass(pe, kk);
        schedule(pe, now);
    }
    ++running_;
    return h;
}

void PeArray::schedule(std::uint32_t pe, Cycle when) { wake_.emplace(when, pe); }

void PeArray::begin_pass(std::uint32_t pe, Kernel& k) {
    Agent& a = agents_[pe];
    const std::uint64_t total = k.pass_items[a.pass];
    const std::uint64_t n = k.launch.pes.size();
    a.item = total * a.rank / n;
    a.item_end = total * (a.rank + 1) / n;
    a.op = 0;
    a.sub = 0;
}

Addr PeArray::access_addr(std::uint32_t pe, const Kernel& k, const AccessSpec& s, std::uint64_t idx) {
    const OperandRegion& o = k.launch.operands[s.operand];
    Agent& a = agents_[pe];
    const std::uint64_t words = o.bytes / 4;
    const std::uint64_t pes = k.launch.pes.size();
    const std::uint64_t chunk_words = std::max<std::uint64_t>(1, words / pes);
    const Addr chunk_base = o.base + (a.rank * chunk_words % words) * 4;
    switch (s.pattern) {
        case AccessPattern::Local: {
            const std::uint64_t span = std::uint64_t{cfg_.tile_interleave_bytes()} * cfg_.num_tiles();
            const std::uint64_t tile_words = cfg_.banks_per_tile;
            const std::uint64_t local = o.bytes / span * tile_words;
            if (local == 0) break;  // too small to have a slice in every tile
            const std::uint32_t tile = pe / cfg_.pes_per_tile;
            const std::uint64_t share = local / cfg_.pes_per_tile;
            const std::uint64_t w = ((pe % cfg_.pes_per_tile) * share + idx) % local;
            const Addr aligned = o.base - o.base % span;
            Addr addr = aligned + (w / tile_words) * span + Addr{tile} * cfg_.tile_interleave_bytes() + (w % tile_words) * 4;
            if (addr < o.base || addr >= o.base + o.bytes) addr = o.base + (addr - aligned) % o.bytes;
            return addr;
        }
        case AccessPattern::Sequential:
            break;
        case AccessPattern::Strided:
            return o.base + ((chunk_base - o.base) + idx * s.stride_bytes) % (words * 4);
        case AccessPattern::Indexed:
            return o.base + (next_random(a.rng) % words) * 4;
    }
    return o.base + ((chunk_base - o.base) + (idx % chunk_words) * 4) % (words * 4);
}

void PeArray::end_pass(std::uint32_t pe, Kernel& k, Cycle now) {
    Agent& a = agents_[pe];
    const bool barrier = k.launch.recipe->passes[a.pass].barrier_after;
    if (barrier) {
        a.barrier_arrival = now;
        k.max_arrival = std::max(k.max_arrival, now);
        k.waiting.push_back(pe);
        if (++k.arrived < k.launch.pes.size()) return;
        const Cycle release = k.max_arrival + barrier_cost(static_cast<std::uint32_t>(k.launch.pes.size()), cfg_);
        for (const std::uint32_t w : k.waiting) {
            Agent& wa = agents_[w];
            wa.cur.barrier_stalls += release - wa.barrier_arrival;
            ++wa.pass;
            if (wa.pass == k.ops.size()) {
                finish_pe(w, k, release);
            } else {
                begin_pass(w, k);
                schedule(w, release);
            }
        }
        k.waiting.clear();
        k.arrived = 0;
        k.max_arrival = 0;
        return;
    }
    ++a.pass;
    if (a.pass == k.ops.size()) {
        finish_pe(pe, k, now);
    } else {
        begin_pass(pe, k);
        schedule(pe, now);
    }
}

void PeArray::finish_pe(std::uint32_t pe, Kernel& k, Cycle now) {
    Agent& a = agents_[pe];
    a.cur.end = now;
    PeCounters& t = totals_[pe];
    t.instructions += a.cur.instructions;
    t.load_stalls += a.cur.load_stalls;
    t.raw_stalls += a.cur.raw_stalls;
    t.barrier_stalls += a.cur.barrier_stalls;
    t.loads += a.cur.loads;
    t.stores += a.cur.stores;
    t.end = now;
    KernelMetrics& m = k.metrics;
    m.instructions += a.cur.instructions;
    m.load_stalls += a.cur.load_stalls;
    m.raw_stalls += a.cur.raw_stalls;
    m.barrier_stalls += a.cur.barrier_stalls;
    m.stalls = m.load_stalls + m.raw_stalls + m.barrier_stalls;
    m.end = std::max(m.end, now);
    if (a.cur.instructions + a.cur.stalls() != a.cur.elapsed()) {
        throw std::logic_error("PE counters do not add up to elapsed cycles");
    }
    a.kernel = -1;
    if (--k.remaining == 0) {
        k.finished = true;
        --running_;
        if (k.launch.apply) k.launch.apply();
    }
}

void PeArray::execute(std::uint32_t pe, Cycle now) {
    Agent& a = agents_[pe];
    Kernel& k = kernels_[a.kernel];
    last_progress_ = now;
    if (!a.setup_done) {
        a.setup_done = true;
        const std::uint32_t setup = k.launch.recipe->setup_ops;
        if (setup) {
            a.cur.instructions += setup;
            schedule(pe, now + setup);
            return;
        }
    }
    if (a.item >= a.item_end) {
        end_pass(pe, k, now);
        return;
    }
    const std::vector<Op>& ops = k.ops[a.pass];
    const Op& op = ops[a.op];
    const PassRecipe& pr = k.launch.recipe->passes[a.pass];
    auto advance = [&](std::uint32_t consumed) {
        a.sub += consumed;
        if (a.sub >= op.count) {
            a.sub = 0;
            if (++a.op == ops.size()) {
                a.op = 0;
                ++a.item;
            }
        }
    };
    const std::uint64_t local_item = a.item - (k.pass_items[a.pass] * a.rank / k.launch.pes.size());
    switch (op.kind) {
        case OpKind::Compute:
            a.cur.instructions += op.count;
            advance(op.count);
            schedule(pe, now + op.count);
            return;
        case OpKind::Raw:
            a.cur.raw_stalls += op.count;
            advance(op.count);
            schedule(pe, now + op.count);
            return;
        case OpKind::Load:
        case OpKind::Store: {
            const bool load = op.kind == OpKind::Load;
            const AccessSpec& s = load ? pr.loads[op.spec] : pr.stores[op.spec];
            // Timing only: functional effects are applied by the kernel's
            // apply hook when the last PE finishes.
            MemoryTransaction txn;
            txn.kind = load ? TxnKind::NarrowRead : TxnKind::NarrowWrite;
            txn.base_addr = access_addr(pe, k, s, local_item * s.count + a.sub);
            txn.initiator = cfg_.num_tes() + pe;
            txn.timing_only = true;
            ++a.cur.instructions;
            Cycle next = now + 1;
            const TxnTiming t = net_.issue(txn, pe / cfg_.pes_per_tile, now);
            if (load) {
                next = std::max(next, t.complete);
                a.cur.load_stalls += next - now - 1;
                ++a.cur.loads;
            } else {
                ++a.cur.stores;
            }
            advance(1);
            schedule(pe, next);
            return;
        }
    }
}

void PeArray::step(Cycle now) {
    if (wake_.empty() || wake_.begin()->first > now) return;
    std::vector<std::uint32_t> due;
    while (!wake_.empty() && wake_.begin()->first <= now) {
        due.push_back(wake_.begin()->second);
        wake_.erase(wake_.begin());
    }
    // Round-robin: the PE served first rotates every cycle.
    const std::uint32_t n = static_cast<std::uint32_t>(agents_.size());
    const std::uint32_t first = static_cast<std::uint32_t>(now % n);
    std::sort(due.begin(), due.end(), [&](std::uint32_t x, std::uint32_t y) {
        return (x + n - first) % n < (y + n - first) % n;
    });
    for (const std::uint32_t pe : due) execute(pe, now);
}

}  // namespace tensorpool
