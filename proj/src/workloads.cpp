#include <algorithm>

#include "tensorpool/fp16.hpp"
#include "tensorpool/workloads.hpp"

namespace tensorpool {

using nlohmann::json;

json PeKernelSpec::to_json() const {
    return json{{"type", "pe_kernel"}, {"kernel", kernel}, {"elements", elements}, {"pes", pes}, {"seed", seed}};
}

PeKernelSpec PeKernelSpec::from_json(const json& j) {
    PeKernelSpec s;
    try {
        s.kernel = j.value("kernel", s.kernel);
        s.elements = j.value("elements", s.elements);
        s.pes = j.value("pes", s.pes);
        s.seed = j.value("seed", s.seed);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("bad pe_kernel spec: ") + e.what());
    }
    if (s.elements == 0) throw ConfigError("pe_kernel needs elements > 0");
    return s;
}

MetricsReport run_pe_kernel(const PeKernelSpec& spec, const ClusterConfig& cfg, const KernelLibrary& kernels,
                            const RunOptions& opt) {
    cfg.validate();
    const KernelRecipe& recipe = kernels.get(spec.kernel);
    const std::uint32_t pes = spec.pes == 0 ? cfg.num_pes() : spec.pes;
    if (pes > cfg.num_pes()) throw ConfigError("pe_kernel asks for more PEs than exist");

    Cluster c(cfg, opt.cluster);
    if (opt.trace) c.net().enable_trace(true);
    std::uint32_t operands = 1;
    for (const PassRecipe& p : recipe.passes) {
        for (const auto* list : {&p.loads, &p.stores}) {
            for (const AccessSpec& a : *list) operands = std::max(operands, a.operand + 1);
        }
    }
    // Every operand holds one FP16 value per element.
    L1Allocator alloc(cfg);
    KernelLaunch l;
    l.recipe = &recipe;
    for (std::uint32_t p = 0; p < pes; ++p) l.pes.push_back(p);
    l.elements = spec.elements;
    l.seed = spec.seed;
    const std::uint64_t bytes = std::max<std::uint64_t>(4, (spec.elements * 2 + 3) / 4 * 4);
    for (std::uint32_t i = 0; i < operands; ++i) l.operands.push_back({alloc.alloc(bytes), bytes});

    // relu is checked functionally; the other recipes model cost only.
    Matrix input;
    const bool functional = spec.kernel == "relu" && operands >= 2;
    const OperandRegion in = l.operands[0];
    const OperandRegion outr = l.operands[std::min<std::uint32_t>(1, operands - 1)];
    if (functional) {
        input = random_matrix(1, static_cast<std::uint32_t>(spec.elements), spec.seed, -1.0, 1.0);
        input = write_matrix(c.l1(), in.base, RowLayout{bytes, 0, 0}, input);
        l.apply = [&c, in, outr, n = spec.elements] {
            for (std::uint64_t i = 0; i < n; ++i) {
                const float v = half_to_float(c.l1().peek_half(in.base + 2 * i));
                c.l1().poke_half(outr.base + 2 * i, float_to_half(std::max(0.0f, v)));
            }
        };
    }

    const KernelHandle h = c.pes().launch(std::move(l), c.now());
    c.run_until([&] { return c.pes().done(h); });
    const KernelMetrics& km = c.pes().metrics(h);

    MetricsReport r;
    r.workload = "pe_kernel";
    r.spec = spec.to_json();
    collect_cluster_metrics(c, km.start, km.end, r);
    r.scalars["runtime_cycles"] = static_cast<double>(km.runtime());
    r.scalars["ipc"] = km.ipc();
    r.scalars["instructions"] = static_cast<double>(km.instructions);
    r.scalars["load_stalls"] = static_cast<double>(km.load_stalls);
    r.scalars["raw_stalls"] = static_cast<double>(km.raw_stalls);
    r.scalars["barrier_stalls"] = static_cast<double>(km.barrier_stalls);
    r.scalars["pes"] = static_cast<double>(km.pes);

    if (functional) {
        Matrix ref = input;
        for (double& v : ref.v) v = std::max(0.0, v);
        const Matrix got = read_matrix(c.l1(), outr.base, RowLayout{bytes, 0, 0}, 1,
                                       static_cast<std::uint32_t>(spec.elements));
        const Comparison cmp = compare(ref, got, 0.0, 0.0);
        r.verification.checked = cmp.checked;
        r.verification.mismatches = cmp.mismatches;
        r.verification.max_abs_error = cmp.max_abs_error;
        r.verification.pass = cmp.pass();
        r.verification.detail = cmp.pass() ? "output matches reference" : "output differs from reference";
    } else {
        r.verification.detail = "timing-only recipe";
    }
    if (opt.inspect) opt.inspect(c);
    return r;
}

MetricsReport run_workload(const json& workload, const ClusterConfig& cfg, const KernelLibrary& kernels,
                           const RunOptions& opt) {
    if (!workload.is_object() || !workload.contains("type")) throw ConfigError("workload needs a \"type\" field");
    const std::string type = workload.at("type").get<std::string>();
    if (type == "gemm") return run_gemm(GemmSpec::from_json(workload), cfg, opt);
    if (type == "fused") return run_fused_block(FusedBlockSpec::from_json(workload), cfg, kernels, opt);
    if (type == "pe_kernel") return run_pe_kernel(PeKernelSpec::from_json(workload), cfg, kernels, opt);
    throw ConfigError("unknown workload type: " + type);
}

}  // namespace tensorpool
