#include "tensorpool/sweep.hpp"

#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <thread>

namespace tensorpool {

using nlohmann::json;

SweepSpec SweepSpec::from_json(const json& j) {
    if (!j.is_object()) throw ConfigError("sweep spec must be a JSON object");
    SweepSpec s;
    if (!j.contains("workload") || !j.at("workload").is_object()) throw ConfigError("sweep spec needs a workload object");
    s.workload = j.at("workload");
    if (j.contains("config")) {
        if (!j.at("config").is_object()) throw ConfigError("sweep 'config' must be an object");
        s.config = j.at("config");
    }
    if (!j.contains("axes") || !j.at("axes").is_array() || j.at("axes").empty()) {
        throw ConfigError("sweep spec needs a non-empty 'axes' array");
    }
    std::set<std::string> names;
    for (const json& a : j.at("axes")) {
        SweepAxis axis;
        if (!a.is_object() || !a.contains("name") || !a.at("name").is_string() || !a.contains("values")
            || !a.at("values").is_array()) {
            throw ConfigError("each sweep axis needs a string 'name' and a 'values' array");
        }
        axis.name = a.at("name").get<std::string>();
        if (axis.name.empty() || !names.insert(axis.name).second) throw ConfigError("sweep axis names must be unique");
        for (const json& v : a.at("values")) axis.values.push_back(v);
        s.axes.push_back(std::move(axis));
    }
    try {
        s.repetitions = j.value("repetitions", s.repetitions);
        s.seed = j.value("seed", s.seed);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("bad sweep spec: ") + e.what());
    }
    if (s.repetitions == 0) throw ConfigError("sweep repetitions must be >= 1");
    return s;
}

SweepSpec SweepSpec::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open sweep file '" + path + "'");
    json doc;
    try {
        in >> doc;
    } catch (const json::exception& e) {
        throw ConfigError("sweep parse error in '" + path + "': " + e.what());
    }
    return from_json(doc);
}

json SweepSpec::to_json() const {
    json axes_json = json::array();
    for (const SweepAxis& a : axes) axes_json.push_back({{"name", a.name}, {"values", a.values}});
    return json{{"workload", workload}, {"config", config}, {"axes", axes_json}, {"repetitions", repetitions},
                {"seed", seed}};
}

namespace {

void set_dotted(json& doc, const std::string& path, const json& value) {
    json* node = &doc;
    std::size_t from = 0;
    for (;;) {
        const std::size_t dot = path.find('.', from);
        const std::string key = path.substr(from, dot == std::string::npos ? std::string::npos : dot - from);
        if (key.empty()) throw ConfigError("bad sweep axis name '" + path + "'");
        if (dot == std::string::npos) {
            (*node)[key] = value;
            return;
        }
        node = &(*node)[key];
        if (!node->is_object() && !node->is_null()) throw ConfigError("sweep axis '" + path + "' descends into a value");
        from = dot + 1;
    }
}

std::string cell(const json& v) {
    if (v.is_string()) return v.get<std::string>();
    return v.dump();
}

std::string cell(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

}  // namespace

std::vector<SweepPoint> expand_sweep(const SweepSpec& spec, const json& base_config) {
    std::vector<SweepPoint> points;
    for (const SweepAxis& a : spec.axes) {
        if (a.values.empty()) return points;
    }
    json config = base_config.is_null() ? json::object() : base_config;
    config.merge_patch(spec.config);

    std::vector<std::size_t> idx(spec.axes.size(), 0);
    for (;;) {
        for (std::uint32_t rep = 0; rep < spec.repetitions; ++rep) {
            SweepPoint p;
            p.config = config;
            p.workload = spec.workload;
            for (std::size_t a = 0; a < spec.axes.size(); ++a) {
                const std::string& name = spec.axes[a].name;
                const json& v = spec.axes[a].values[idx[a]];
                p.axis_values.push_back(v);
                if (name.rfind("config.", 0) == 0) set_dotted(p.config, name.substr(7), v);
                else set_dotted(p.workload, name, v);
            }
            p.repetition = rep;
            p.seed = spec.seed + rep;
            p.workload["seed"] = p.seed;
            points.push_back(std::move(p));
        }
        // Odometer, last axis fastest.
        std::size_t a = spec.axes.size();
        while (a > 0) {
            --a;
            if (++idx[a] < spec.axes[a].values.size()) break;
            idx[a] = 0;
            if (a == 0) return points;
        }
    }
}

unsigned sweep_threads(std::size_t points) {
    unsigned n = std::max(1u, std::thread::hardware_concurrency());
    if (const char* env = std::getenv("TENSORPOOL_SIM_THREADS")) {
        const long v = std::strtol(env, nullptr, 10);
        if (v > 0) n = static_cast<unsigned>(v);
    }
    return static_cast<unsigned>(std::max<std::size_t>(1, std::min<std::size_t>(n, points)));
}

int exit_code_for(const std::exception& e) {
    if (dynamic_cast<const DeadlockError*>(&e) || dynamic_cast<const DependencyError*>(&e)) return 4;
    if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const ProgramError*>(&e)) return 2;
    return 1;
}

SweepResult run_sweep(const SweepSpec& spec, const json& base_config, unsigned threads) {
    const std::vector<SweepPoint> points = expand_sweep(spec, base_config);
    struct Outcome {
        std::optional<std::map<std::string, double>> metrics;
        bool pass = false;
        std::string error;
        int code = 0;
    };
    std::vector<Outcome> out(points.size());
    std::atomic<std::size_t> next{0};
    // Points after a known failure are not needed for the table.
    std::atomic<std::size_t> first_fail{points.size()};

    auto worker = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= points.size() || i > first_fail.load()) return;
            Outcome& o = out[i];
            try {
                const ClusterConfig cfg = ClusterConfig::from_json(points[i].config);
                const KernelLibrary lib = KernelLibrary::from_json(points[i].config);
                const MetricsReport r = run_workload(points[i].workload, cfg, lib);
                o.metrics = r.flatten();
                o.pass = r.valid();
                if (!o.pass) {
                    o.error = "verification failed: " + r.verification.detail;
                    o.code = 3;
                }
            } catch (const std::exception& e) {
                o.error = e.what();
                o.code = exit_code_for(e);
            }
            if (!o.pass) {
                std::size_t cur = first_fail.load();
                while (i < cur && !first_fail.compare_exchange_weak(cur, i)) {
                }
            }
        }
    };
    if (threads == 0) threads = sweep_threads(points.size());
    std::vector<std::thread> pool;
    for (unsigned t = 1; t < threads; ++t) pool.emplace_back(worker);
    worker();
    for (std::thread& t : pool) t.join();

    SweepResult res;
    const std::size_t stop = first_fail.load();
    std::set<std::string> keys;
    for (std::size_t i = 0; i < stop; ++i) {
        for (const auto& [k, v] : *out[i].metrics) keys.insert(k);
    }
    for (const SweepAxis& a : spec.axes) res.header.push_back(a.name);
    res.header.push_back("repetition");
    res.header.push_back("seed");
    res.header.insert(res.header.end(), keys.begin(), keys.end());
    for (std::size_t i = 0; i < stop; ++i) {
        std::vector<std::string> row;
        for (const json& v : points[i].axis_values) row.push_back(cell(v));
        row.push_back(std::to_string(points[i].repetition));
        row.push_back(std::to_string(points[i].seed));
        for (const std::string& k : keys) {
            const auto it = out[i].metrics->find(k);
            row.push_back(it == out[i].metrics->end() ? std::string{} : cell(it->second));
        }
        res.rows.push_back(std::move(row));
    }
    if (stop < points.size()) {
        res.complete = false;
        res.exit_code = out[stop].code == 0 ? 1 : out[stop].code;
        res.failure = "point " + std::to_string(stop) + " failed: " + out[stop].error;
    }
    return res;
}

void write_sweep_csv(const SweepResult& r, std::ostream& os) {
    auto line = [&](const std::vector<std::string>& cells) {
        for (std::size_t i = 0; i < cells.size(); ++i) {
            if (i) os << ',';
            const std::string& c = cells[i];
            if (c.find_first_of(",\"\n") != std::string::npos) {
                os << '"';
                for (const char ch : c) os << (ch == '"' ? "\"\"" : std::string(1, ch));
                os << '"';
            } else {
                os << c;
            }
        }
        os << '\n';
    };
    line(r.header);
    for (const auto& row : r.rows) line(row);
    if (!r.complete) os << "# incomplete: " << r.failure << '\n';
}

}  // namespace tensorpool
