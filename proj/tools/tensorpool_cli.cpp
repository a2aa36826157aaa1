#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "tensorpool/analytics.hpp"
#include "tensorpool/sweep.hpp"
#include "tensorpool/workloads.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace tensorpool;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitVerify = 3;

json read_json(const std::string& path, const char* what) {
    std::ifstream in(path);
    if (!in) throw ConfigError(std::string("cannot open ") + what + " '" + path + "'");
    try {
        json doc;
        in >> doc;
        return doc;
    } catch (const json::exception& e) {
        throw ConfigError(std::string(what) + " parse error in '" + path + "': " + e.what());
    }
}

json config_doc(const std::string& path) { return path.empty() ? json::object() : read_json(path, "config"); }

void write_file(const fs::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write '" + p.string() + "'");
    out << text;
}

// Wall-clock facts go to a sidecar so report payloads stay reproducible.
void sidecar(const fs::path& dir, const std::string& cmd, double seconds, int code) {
    const std::time_t now = std::time(nullptr);
    std::ofstream log(dir / "run.log", std::ios::app);
    log << std::put_time(std::gmtime(&now), "%Y-%m-%dT%H:%M:%SZ") << ' ' << cmd << " wall_s=" << seconds
        << " exit=" << code << '\n';
}

struct Options {
    std::string config;
    std::string workload;
    std::string sweep;
    std::string out_dir = ".";
    std::string convention = "macs";
    bool trace = false;
    bool channel = false;
    bool json_only = false;
    bool dump_l1 = false;
    std::int64_t seed = -1;
};

int simulate(const Options& o) {
    const json cdoc = config_doc(o.config);
    const ClusterConfig cfg = ClusterConfig::from_json(cdoc);
    const KernelLibrary kernels = KernelLibrary::from_json(cdoc);
    json wdoc = read_json(o.workload, "workload");
    if (o.seed >= 0) wdoc["seed"] = o.seed;

    fs::create_directories(o.out_dir);
    const fs::path dir(o.out_dir);
    RunOptions ro;
    ro.trace = o.trace;
    ro.inspect = [&](Cluster& c) {
        if (o.trace) {
            std::ofstream t(dir / "trace.csv");
            c.net().write_trace_csv(t);
        }
        if (o.dump_l1) {
            std::ofstream d(dir / "l1.bin", std::ios::binary);
            c.l1().dump(d);
        }
    };
    const MetricsReport r = run_workload(wdoc, cfg, kernels, ro);
    write_file(dir / "report.json", r.to_json().dump(2) + "\n");

    std::cout << r.workload << ": " << r.total_cycles << " cycles, TE utilization " << std::fixed
              << std::setprecision(4) << r.te_utilization << ", verification "
              << (r.verification.pass ? "pass" : "FAIL") << '\n';
    for (const auto& [k, v] : r.scalars) std::cout << "  " << k << " = " << v << '\n';
    if (!r.verification.pass) {
        std::cerr << "verification failed: " << r.verification.detail << '\n';
        return kExitVerify;
    }
    return 0;
}

int sweep(const Options& o) {
    const SweepSpec spec = SweepSpec::load(o.sweep);
    const json cdoc = config_doc(o.config);
    ClusterConfig::from_json(cdoc);
    const SweepResult res = run_sweep(spec, cdoc);
    fs::create_directories(o.out_dir);
    const fs::path csv = fs::path(o.out_dir) / "sweep.csv";
    std::ostringstream os;
    write_sweep_csv(res, os);
    write_file(csv, os.str());
    std::cout << "wrote " << res.rows.size() << " rows to " << csv.string() << '\n';
    if (!res.complete) {
        std::cerr << "sweep incomplete: " << res.failure << '\n';
        return res.exit_code;
    }
    return 0;
}

void print_balance(const BalanceReport& b) {
    std::cout << "  wk = " << b.wk << " MACs, q_m = " << b.q_m << " B\n"
              << "  t_compute = " << b.t_compute << " cycles (pi = " << b.pi << "), t_transfer = " << b.t_transfer
              << " cycles (beta = " << b.beta << " B/cycle)\n"
              << "  intensity " << b.operational_intensity << " MACs/B vs threshold " << b.threshold << " -> "
              << (b.holds ? "holds" : "does not hold") << '\n';
}

int analyze(const Options& o) {
    const ClusterConfig cfg = ClusterConfig::from_json(config_doc(o.config));
    const Convention conv = parse_convention(o.convention);
    const json doc = analysis_report(cfg, conv, o.channel);
    if (o.out_dir != ".") {
        fs::create_directories(o.out_dir);
        write_file(fs::path(o.out_dir) / "analysis.json", doc.dump(2) + "\n");
    }
    if (o.json_only) {
        std::cout << doc.dump(2) << '\n';
        return 0;
    }
    std::cout << std::setprecision(6);
    const BalanceReport l2 = l2_balance(512, cfg, conv);
    std::cout << "L2 balance, n = 512, " << to_string(conv) << " convention"
              << (conv == Convention::Flops ? " (t_compute = n^3 / " + std::to_string(static_cast<int>(l2.pi)) + ")"
                                            : std::string{})
              << '\n';
    print_balance(l2);
    if (const auto n = l2_balance_crossover(cfg, conv)) std::cout << "  holds from n = " << *n << '\n';
    std::cout << "L1 tile balance, n = 16\n";
    print_balance(l1_tile_balance(16, cfg));
    std::cout << "  asymptotic intensity " << l1_tile_asymptotic_intensity(cfg) << " MACs/B\n";
    const RemoteBandwidthModel m = remote_balance(cfg);
    std::cout << "Remote balance\n"
              << "  p_loc = " << m.p_loc << ", p_rem = " << m.p_rem << ", p_star = " << m.p_star << '\n'
              << "  beta_port = " << m.beta_port << ", beta_star = " << m.beta_star << ", beta = " << m.beta
              << " B/cycle\n"
              << "  pi_TE/beta = " << m.required_intensity << " MACs/B vs " << m.available_intensity << " -> "
              << (m.memory_bound ? "memory-bound" : "not memory-bound") << '\n';
    const BisectionWires w = compute_bisection_wires(cfg);
    std::cout << "Bisection wires N = " << w.n << "  [" << w.formula << "]\n";
    if (o.channel && doc.contains("channel_area")) {
        const json& a = doc["channel_area"];
        const json& meas = doc["measured_channel"];
        std::cout << "Channel area (L fitted to " << meas["a_2d_mm2"].get<double>() << " mm^2 2D channel)\n"
                  << "  L = " << a["group_side_mm"].get<double>() << " mm, w_2d = " << a["w_2d_mm"].get<double>()
                  << " mm\n"
                  << "  A_2D = " << a["a_2d_mm2"].get<double>() << " mm^2, A_3D = " << a["a_3d_mm2"].get<double>()
                  << " mm^2, reduction = " << 100.0 * a["reduction"].get<double>() << " %\n"
                  << "  measured reduction = " << 100.0 * meas["reduction"].get<double>() << " %\n"
                  << "  printed form (no n_metal divisor): reduction = "
                  << 100.0 * doc["channel_area_printed_form"]["reduction"].get<double>() << " %\n";
    }
    return 0;
}

int dump_config(const Options& o) {
    const json cdoc = config_doc(o.config);
    json out = ClusterConfig::from_json(cdoc).to_json();
    json kernels = json::object();
    const KernelLibrary lib = KernelLibrary::from_json(cdoc);
    for (const auto& [name, recipe] : lib.all()) kernels[name] = recipe.to_json();
    out["kernels"] = kernels;
    std::cout << out.dump(2) << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Cycle-level model of a shared-L1 cluster with tensor engines"};
    app.require_subcommand(1);
    Options o;

    auto* sim = app.add_subcommand("simulate", "Run one workload and write report.json");
    sim->add_option("--config", o.config, "Cluster config JSON (defaults when omitted)");
    sim->add_option("--workload", o.workload, "Workload JSON")->required();
    sim->add_flag("--trace", o.trace, "Also write trace.csv");
    sim->add_flag("--dump-l1", o.dump_l1, "Also write l1.bin, the final L1 image");
    sim->add_option("--seed", o.seed, "Override the workload seed");
    sim->add_option("--out-dir", o.out_dir, "Output directory");

    auto* sw = app.add_subcommand("sweep", "Run a sweep and write sweep.csv");
    sw->add_option("--sweep", o.sweep, "Sweep spec JSON")->required();
    sw->add_option("--config", o.config, "Base cluster config JSON");
    sw->add_option("--out-dir", o.out_dir, "Output directory");

    auto* an = app.add_subcommand("analyze", "Closed-form balance and channel-area analysis");
    an->add_option("--config", o.config, "Cluster config JSON");
    an->add_option("--convention", o.convention, "Compute convention for the L2 balance")
        ->check(CLI::IsMember({"macs", "flops"}));
    an->add_flag("--channel", o.channel, "Include the 2D/3D channel-area model");
    an->add_flag("--json", o.json_only, "Print JSON only");
    an->add_option("--out-dir", o.out_dir, "Also write analysis.json here");

    auto* dc = app.add_subcommand("dump-config", "Print the resolved config and kernel recipes");
    dc->add_option("--config", o.config, "Cluster config JSON");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitConfig;
    }

    const auto t0 = std::chrono::steady_clock::now();
    int code = 0;
    try {
        if (*sim) code = simulate(o);
        else if (*sw) code = sweep(o);
        else if (*an) code = analyze(o);
        else code = dump_config(o);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        code = exit_code_for(e);
    }
    if (*sim || *sw) {
        const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::error_code ec;
        if (fs::is_directory(o.out_dir, ec)) sidecar(o.out_dir, *sim ? "simulate" : "sweep", s, code);
    }
    return code;
}
