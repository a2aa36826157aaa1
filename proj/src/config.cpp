#include "tensorpool/config.hpp"

#include <fstream>
#include <sstream>

namespace tensorpool {

namespace {

// Single source of truth for the JSON field list.
template <typename Fn>
void for_each_field(ClusterConfig& c, Fn&& fn) {
    fn("tiles_per_subgroup", c.tiles_per_subgroup);
    fn("subgroups_per_group", c.subgroups_per_group);
    fn("groups", c.groups);
    fn("pes_per_tile", c.pes_per_tile);
    fn("banks_per_tile", c.banks_per_tile);
    fn("bank_bytes", c.bank_bytes);
    fn("te_tiles_per_subgroup", c.te_tiles_per_subgroup);
    fn("te_rows", c.te_rows);
    fn("te_cols", c.te_cols);
    fn("te_pipeline", c.te_pipeline);
    fn("wide_port_bits", c.wide_port_bits);
    fn("response_group_K", c.response_group_K);
    fn("request_widen_J", c.request_widen_J);
    fn("rob_depth", c.rob_depth);
    fn("z_fifo_depth", c.z_fifo_depth);
    fn("latency_local", c.latency_local);
    fn("latency_subgroup", c.latency_subgroup);
    fn("latency_group", c.latency_group);
    fn("latency_remote_group", c.latency_remote_group);
    fn("arbiter_subgroup_ports", c.arbiter_subgroup_ports);
    fn("arbiter_group_ports", c.arbiter_group_ports);
    fn("l2_bw_bytes_per_cycle_per_subgroup", c.l2_bw_bytes_per_cycle_per_subgroup);
    fn("l2_latency", c.l2_latency);
    fn("element_bytes", c.element_bytes);
}

bool is_pow2(std::uint32_t v) { return v != 0 && (v & (v - 1)) == 0; }

}  // namespace

void ClusterConfig::validate() const {
    auto self = *this;
    for_each_field(self, [](const char* name, std::uint32_t v) {
        if (v == 0) throw ConfigError(std::string("config field '") + name + "' must be >= 1");
    });
    if (!(latency_local <= latency_subgroup && latency_subgroup <= latency_group
          && latency_group <= latency_remote_group)) {
        throw ConfigError("latencies must satisfy local <= subgroup <= group <= remote_group");
    }
    if (wide_port_bits != te_cols * (te_pipeline + 1) * 16) {
        throw ConfigError("wide_port_bits must equal te_cols * (te_pipeline + 1) * 16");
    }
    if (wide_port_bits % 32 != 0 || wide_beats() > 16) {
        throw ConfigError("wide port must carry between 1 and 16 32-bit beats");
    }
    if (!is_pow2(banks_per_tile) || !is_pow2(wide_beats()) || banks_per_tile < wide_beats()) {
        throw ConfigError("banks_per_tile must be a power of two no smaller than the wide beat count");
    }
    if (wide_beats() % response_group_K != 0) {
        throw ConfigError("response_group_K must divide the wide beat count");
    }
    if (wide_beats() % request_widen_J != 0) {
        throw ConfigError("request_widen_J must divide the wide beat count");
    }
    if (bank_bytes % 4 != 0) throw ConfigError("bank_bytes must be a multiple of 4");
    if (te_tiles_per_subgroup > tiles_per_subgroup) {
        throw ConfigError("te_tiles_per_subgroup exceeds tiles_per_subgroup");
    }
    if (arbiter_subgroup_ports != subgroups_per_group) {
        throw ConfigError("arbiter_subgroup_ports must equal subgroups_per_group");
    }
    if (groups > 1 && arbiter_group_ports != groups - 1) {
        throw ConfigError("arbiter_group_ports must equal groups - 1");
    }
    if (element_bytes != 2) throw ConfigError("only FP16 elements (element_bytes = 2) are modeled");
}

nlohmann::json ClusterConfig::to_json() const {
    nlohmann::json j = nlohmann::json::object();
    auto self = *this;
    for_each_field(self, [&](const char* name, std::uint32_t v) { j[name] = v; });
    return j;
}

ClusterConfig ClusterConfig::from_json(const nlohmann::json& doc) {
    if (!doc.is_object()) throw ConfigError("config document must be a JSON object");
    ClusterConfig cfg;
    for_each_field(cfg, [&](const char* name, std::uint32_t& field) {
        auto it = doc.find(name);
        if (it == doc.end()) return;
        if (!it->is_number_unsigned() && !(it->is_number_integer() && it->get<long long>() >= 0)) {
            throw ConfigError(std::string("config field '") + name + "' must be a non-negative integer");
        }
        field = it->get<std::uint32_t>();
    });
    for (const auto& [key, value] : doc.items()) {
        if (key == "kernels") continue;
        bool known = false;
        for_each_field(cfg, [&](const char* name, std::uint32_t&) { known = known || key == name; });
        if (!known) throw ConfigError("unknown config key '" + key + "'");
    }
    cfg.validate();
    return cfg;
}

ClusterConfig ClusterConfig::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config parse error in '" + path + "': " + e.what());
    }
    return from_json(doc);
}

BankCoordinate address_to_bank(Addr addr, const ClusterConfig& cfg) {
    if (addr >= cfg.l1_bytes()) {
        std::ostringstream os;
        os << "address 0x" << std::hex << addr << " outside L1 (" << std::dec << cfg.l1_bytes() << " bytes)";
        throw AddressFault(os.str());
    }
    if (addr % 4 != 0) throw AlignmentFault("L1 addresses must be word aligned");
    const Addr word = addr / 4;
    const std::uint32_t tile = tile_of(addr, cfg);
    BankCoordinate c;
    c.bank = static_cast<std::uint32_t>(word % cfg.banks_per_tile);
    c.tile = tile % cfg.tiles_per_subgroup;
    c.subgroup = (tile / cfg.tiles_per_subgroup) % cfg.subgroups_per_group;
    c.group = tile / cfg.tiles_per_group();
    c.word_offset = static_cast<std::uint32_t>(addr / (Addr{cfg.tile_interleave_bytes()} * cfg.num_tiles()));
    return c;
}

Addr bank_to_address(const BankCoordinate& c, const ClusterConfig& cfg) {
    const Addr row_bytes = Addr{cfg.tile_interleave_bytes()} * cfg.num_tiles();
    return Addr{c.word_offset} * row_bytes + Addr{global_tile(c, cfg)} * cfg.tile_interleave_bytes()
        + Addr{c.bank} * 4;
}

std::uint32_t access_latency(std::uint32_t src_tile, std::uint32_t dst_tile, const ClusterConfig& cfg) {
    if (src_tile == dst_tile) return cfg.latency_local;
    if (subgroup_of_tile(src_tile, cfg) == subgroup_of_tile(dst_tile, cfg)) return cfg.latency_subgroup;
    if (group_of_tile(src_tile, cfg) == group_of_tile(dst_tile, cfg)) return cfg.latency_group;
    return cfg.latency_remote_group;
}

}  // namespace tensorpool
