#include "tensorpool/report.hpp"

#include <algorithm>
#include <cmath>

namespace tensorpool {

using nlohmann::json;

json MetricsReport::to_json() const {
    json j;
    j["schema_version"] = kReportSchemaVersion;
    j["workload"] = workload;
    j["spec"] = spec.is_null() ? json::object() : spec;
    j["total_cycles"] = total_cycles;
    j["macs"] = macs;
    j["macs_per_cycle"] = macs_per_cycle;
    j["te_utilization"] = te_utilization;
    json engines_json = json::array();
    for (const EngineMetrics& e : engines) {
        engines_json.push_back({{"name", e.name},
                                {"kind", e.kind},
                                {"busy_cycles", e.busy_cycles},
                                {"stall_cycles", e.stall_cycles},
                                {"idle_cycles", e.idle_cycles},
                                {"utilization", e.utilization}});
    }
    j["engines"] = engines_json;
    j["interconnect"] = {{"local_grants", interconnect.local_grants},
                         {"subgroup_grants", interconnect.subgroup_grants},
                         {"group_grants", interconnect.group_grants},
                         {"bursts", interconnect.bursts},
                         {"narrow_reads", interconnect.narrow_reads},
                         {"narrow_writes", interconnect.narrow_writes},
                         {"wide_writes", interconnect.wide_writes},
                         {"write_request_slots", interconnect.write_request_slots},
                         {"response_handshakes", interconnect.response_handshakes},
                         {"bank_accesses", bank_accesses},
                         {"bank_conflicts", bank_conflicts}};
    j["dma"] = {{"bytes", dma_bytes}, {"busy_cycles", dma_busy_cycles}};
    j["verification"] = {{"status", verification.pass ? "pass" : "fail"},
                         {"checked", verification.checked},
                         {"mismatches", verification.mismatches},
                         {"max_abs_error", verification.max_abs_error},
                         {"detail", verification.detail}};
    j["valid"] = valid();
    json s = json::object();
    for (const auto& [k, v] : scalars) s[k] = v;
    j["scalars"] = s;
    if (!details.is_null()) j["details"] = details;
    return j;
}

std::map<std::string, double> MetricsReport::flatten() const {
    std::map<std::string, double> f;
    f["total_cycles"] = static_cast<double>(total_cycles);
    f["macs"] = static_cast<double>(macs);
    f["macs_per_cycle"] = macs_per_cycle;
    f["te_utilization"] = te_utilization;
    f["verification_pass"] = verification.pass ? 1.0 : 0.0;
    f["mismatches"] = static_cast<double>(verification.mismatches);
    f["max_abs_error"] = verification.max_abs_error;
    f["ic.local_grants"] = static_cast<double>(interconnect.local_grants);
    f["ic.subgroup_grants"] = static_cast<double>(interconnect.subgroup_grants);
    f["ic.group_grants"] = static_cast<double>(interconnect.group_grants);
    f["ic.bursts"] = static_cast<double>(interconnect.bursts);
    f["ic.bank_conflicts"] = static_cast<double>(bank_conflicts);
    f["dma_bytes"] = static_cast<double>(dma_bytes);
    for (const auto& [k, v] : scalars) f[k] = v;
    return f;
}

namespace {

EngineMetrics make_engine(std::string name, std::string kind, std::uint64_t busy, std::uint64_t stall,
                          std::uint64_t total) {
    EngineMetrics e;
    e.name = std::move(name);
    e.kind = std::move(kind);
    e.busy_cycles = std::min(busy, total);
    e.stall_cycles = std::min(stall, total - e.busy_cycles);
    e.idle_cycles = total - e.busy_cycles - e.stall_cycles;
    e.utilization = total == 0 ? 0.0 : static_cast<double>(e.busy_cycles) / static_cast<double>(total);
    return e;
}

}  // namespace

void collect_cluster_metrics(Cluster& c, Cycle start, Cycle end, MetricsReport& r) {
    const Cycle total = end > start ? end - start : 0;
    r.total_cycles = total;
    r.engines.clear();
    std::uint64_t macs = 0;
    for (std::uint32_t i = 0; i < c.num_tes(); ++i) {
        const TeTotals& t = c.te(i).totals();
        if (t.jobs == 0) continue;
        macs += t.macs;
        r.engines.push_back(make_engine("te" + std::to_string(i), "te", t.active_cycles,
                                        t.busy_cycles - std::min(t.busy_cycles, t.active_cycles), total));
    }
    const ClusterConfig& cfg = c.config();
    std::uint64_t instr = 0, stalls = 0;
    for (std::uint32_t p = 0; p < cfg.num_pes(); ++p) {
        instr += c.pes().counters(p).instructions + c.pes().control_instructions(p);
        stalls += c.pes().counters(p).stalls();
    }
    r.engines.push_back(make_engine("pe_array", "pe", instr / cfg.num_pes(), stalls / cfg.num_pes(), total));
    r.engines.push_back(make_engine("dma", "dma", c.dma().busy_cycles(), 0, total));

    if (r.macs == 0) r.macs = macs;
    r.macs_per_cycle = total == 0 ? 0.0 : static_cast<double>(r.macs) / static_cast<double>(total);
    r.interconnect = c.net().counters();
    r.bank_accesses = c.l1().accesses();
    r.bank_conflicts = c.l1().conflicts();
    r.dma_bytes = c.dma().bytes_moved();
    r.dma_busy_cycles = c.dma().busy_cycles();
}

namespace {

std::string check(const json& v, const json& schema, const std::string& path) {
    if (schema.contains("type")) {
        const std::string t = schema["type"];
        bool ok = false;
        if (t == "object") ok = v.is_object();
        else if (t == "array") ok = v.is_array();
        else if (t == "string") ok = v.is_string();
        else if (t == "boolean") ok = v.is_boolean();
        else if (t == "integer") ok = v.is_number_integer();
        else if (t == "number") ok = v.is_number();
        if (!ok) return path + ": expected " + t;
    }
    if (schema.contains("const") && v != schema["const"]) return path + ": value differs from const";
    if (schema.contains("enum")) {
        const auto& e = schema["enum"];
        if (std::find(e.begin(), e.end(), v) == e.end()) return path + ": value not in enum";
    }
    if (v.is_number()) {
        const double d = v.get<double>();
        if (schema.contains("minimum") && d < schema["minimum"].get<double>()) return path + ": below minimum";
        if (schema.contains("maximum") && d > schema["maximum"].get<double>()) return path + ": above maximum";
    }
    if (v.is_object()) {
        if (schema.contains("required")) {
            for (const auto& k : schema["required"]) {
                if (!v.contains(k.get<std::string>())) return path + ": missing " + k.get<std::string>();
            }
        }
        if (schema.contains("properties")) {
            for (const auto& [k, sub] : schema["properties"].items()) {
                if (!v.contains(k)) continue;
                std::string err = check(v[k], sub, path + "." + k);
                if (!err.empty()) return err;
            }
        }
        if (schema.contains("additionalProperties") && schema["additionalProperties"] == false) {
            for (const auto& [k, sub] : v.items()) {
                if (!schema.contains("properties") || !schema["properties"].contains(k)) {
                    return path + ": unexpected key " + k;
                }
            }
        }
        if (schema.contains("additionalProperties") && schema["additionalProperties"].is_object()) {
            for (const auto& [k, sub] : v.items()) {
                if (schema.contains("properties") && schema["properties"].contains(k)) continue;
                std::string err = check(sub, schema["additionalProperties"], path + "." + k);
                if (!err.empty()) return err;
            }
        }
    }
    if (v.is_array() && schema.contains("items")) {
        for (std::size_t i = 0; i < v.size(); ++i) {
            std::string err = check(v[i], schema["items"], path + "[" + std::to_string(i) + "]");
            if (!err.empty()) return err;
        }
    }
    return {};
}

}  // namespace

std::string validate_report_json(const json& doc, const json& schema) {
    if (schema.contains("properties") && schema["properties"].contains("schema_version")) {
        const auto& sv = schema["properties"]["schema_version"];
        if (sv.contains("const") && doc.value("schema_version", std::string{}) != sv["const"].get<std::string>()) {
            return "$.schema_version: version mismatch";
        }
    }
    std::string err = check(doc, schema, "$");
    if (!err.empty()) return err;
    for (const auto& e : doc.value("engines", json::array())) {
        const std::uint64_t sum = e.value("busy_cycles", 0ull) + e.value("stall_cycles", 0ull)
            + e.value("idle_cycles", 0ull);
        if (sum != doc.value("total_cycles", 0ull)) return "$.engines: busy + stall + idle != total_cycles";
    }
    return {};
}

}  // namespace tensorpool
