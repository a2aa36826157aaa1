#include <catch_amalgamated.hpp>

#include <set>
#include <sstream>

#include "tensorpool/interconnect.hpp"

using namespace tensorpool;

namespace {

MemoryTransaction narrow_read(Addr a) {
    MemoryTransaction t;
    t.kind = TxnKind::NarrowRead;
    t.base_addr = a;
    return t;
}

MemoryTransaction wide(TxnKind k, Addr a) {
    MemoryTransaction t;
    t.kind = k;
    t.base_addr = a;
    t.beats = 16;
    return t;
}

}  // namespace

TEST_CASE("burst grouper compresses only wide reads") {
    const ClusterConfig cfg;
    const MemoryTransaction h = burst_group(wide(TxnKind::WideRead, 192), cfg);
    CHECK(h.kind == TxnKind::BurstReadHeader);
    CHECK(h.base_addr == 192);
    CHECK(h.beats == 16);
    CHECK(burst_group(narrow_read(8), cfg).kind == TxnKind::NarrowRead);
    CHECK(burst_group(wide(TxnKind::WideWrite, 64), cfg).kind == TxnKind::WideWrite);
    CHECK_THROWS_AS(burst_group(wide(TxnKind::WideRead, 4), cfg), AlignmentFault);
}

TEST_CASE("burst distributor covers one tile, one request per bank") {
    const ClusterConfig cfg;
    const auto reqs = burst_distribute(burst_group(wide(TxnKind::WideRead, 0), cfg), cfg);
    REQUIRE(reqs.size() == 16);
    std::set<std::uint32_t> banks;
    for (std::uint32_t b = 0; b < 16; ++b) {
        CHECK(reqs[b].addr == 4u * b);
        CHECK(reqs[b].beat == b);
        CHECK(tile_of(reqs[b].addr, cfg) == 0);
        banks.insert(reqs[b].global_bank);
    }
    CHECK(banks.size() == 16);
}

TEST_CASE("request slots and response handshakes follow J and K") {
    ClusterConfig cfg;
    CHECK(request_slots(TxnKind::WideWrite, cfg) == 8);
    CHECK(request_slots(TxnKind::BurstReadHeader, cfg) == 1);
    CHECK(response_handshakes(16, cfg) == 4);
    cfg.request_widen_J = 1;
    cfg.response_group_K = 1;
    CHECK(request_slots(TxnKind::WideWrite, cfg) == 16);
    CHECK(response_handshakes(16, cfg) == 16);
}

TEST_CASE("port routing") {
    const ClusterConfig cfg;
    CHECK(route_ports(0, 0, cfg).cls == PortClass::Local);
    const PortRoute sg = route_ports(0, 5, cfg);
    CHECK(sg.cls == PortClass::Subgroup);
    CHECK(sg.latency == 5);
    const PortRoute same_sg = route_ports(0, 2, cfg);
    CHECK(same_sg.latency == 3);
    const PortRoute g = route_ports(0, 40, cfg);
    CHECK(g.cls == PortClass::Group);
    CHECK(g.latency == 9);
    CHECK(g.out_port != route_ports(0, 20, cfg).out_port);
}

TEST_CASE("uncontended round trip grows by twice the one-way latency step") {
    const ClusterConfig cfg;
    std::vector<Cycle> rt;
    for (std::uint32_t dst : {0u, 1u, 4u, 16u}) {
        BankArray banks(cfg);
        Interconnect net(cfg, banks);
        MemoryTransaction t = narrow_read(Addr{dst} * 128);
        rt.push_back(net.issue(t, 0, 0).complete);
    }
    CHECK(rt[0] == 1);
    CHECK(rt[2] - rt[1] == 2 * (cfg.latency_group - cfg.latency_subgroup));
    CHECK(rt[3] - rt[2] == 2 * (cfg.latency_remote_group - cfg.latency_group));
}

TEST_CASE("wide write then burst read returns the same beats in order") {
    const ClusterConfig cfg;
    BankArray banks(cfg);
    Interconnect net(cfg, banks);
    net.record_responses(true);
    MemoryTransaction w = wide(TxnKind::WideWrite, 16 * 128 + 64);
    for (std::uint32_t b = 0; b < 16; ++b) w.data[b] = 0xabc00000u + b;
    const TxnTiming wt = net.issue(w, 0, 0);
    MemoryTransaction r = wide(TxnKind::WideRead, 16 * 128 + 64);
    r.tag = 7;
    const TxnTiming rt = net.issue(r, 0, wt.complete);
    for (std::uint32_t b = 0; b < 16; ++b) CHECK(r.data[b] == 0xabc00000u + b);
    REQUIRE(net.responses().size() == 4);
    for (std::uint32_t i = 0; i < 4; ++i) {
        CHECK(net.responses()[i].tag == 7);
        CHECK(net.responses()[i].first_beat == 4 * i);
        CHECK(net.responses()[i].beat_count == 4);
        if (i) CHECK(net.responses()[i].cycle > net.responses()[i - 1].cycle);
    }
    CHECK(rt.complete == net.responses().back().cycle);
    CHECK(net.counters().write_request_slots == 8);
    CHECK(net.counters().bursts == 1);
}

TEST_CASE("bank conflicts serialise and hold the inbound port") {
    const ClusterConfig cfg;
    const Addr x = 16 * 128;      // tile 16 (group 1), bank 0
    const Addr y = 16 * 128 + 4;  // same tile, bank 1

    BankArray alone_banks(cfg);
    Interconnect alone(cfg, alone_banks);
    MemoryTransaction ty = narrow_read(y);
    const Cycle alone_slot = alone.issue(ty, 1, 0).bank_first;

    BankArray banks(cfg);
    Interconnect net(cfg, banks);
    std::vector<Cycle> slots;
    for (std::uint32_t src : {32u, 48u, 0u}) {
        MemoryTransaction t = narrow_read(x);
        slots.push_back(net.issue(t, src, 0).bank_first);
    }
    CHECK(slots[0] == 9);
    CHECK(slots[1] == 10);
    CHECK(slots[2] == 11);
    // Tile 1 shares tile 0's inbound port at tile 16; its request to an idle
    // bank waits until the blocked request ahead of it has been served.
    MemoryTransaction t = narrow_read(y);
    const TxnTiming blocked = net.issue(t, 1, 0);
    CHECK(alone_slot == 9);
    CHECK(blocked.bank_first == 12);
    CHECK(banks.conflicts() == 2);
    // Its source port is held until the request could leave.
    CHECK(blocked.accepted == 12 - cfg.latency_remote_group + 1);
}

TEST_CASE("a request waiting on a busy bank frees its source port") {
    const ClusterConfig cfg;
    BankArray banks(cfg);
    Interconnect net(cfg, banks);
    const Addr x = 16 * 128;
    for (std::uint32_t src : {32u, 48u}) {
        MemoryTransaction t = narrow_read(x);
        net.issue(t, src, 0);
    }
    MemoryTransaction t = narrow_read(x);
    const TxnTiming a = net.issue(t, 0, 0);
    CHECK(a.bank_first == 11);
    CHECK(a.accepted == 1);
}

TEST_CASE("trace CSV is sorted and has the documented header") {
    const ClusterConfig cfg;
    BankArray banks(cfg);
    Interconnect net(cfg, banks);
    net.enable_trace(true);
    for (std::uint32_t i = 0; i < 8; ++i) {
        MemoryTransaction t = wide(TxnKind::WideRead, Addr{i} * 64 * 37 % (1 << 16) / 64 * 64);
        net.issue(t, i, i);
    }
    std::ostringstream os;
    net.write_trace_csv(os);
    std::istringstream in(os.str());
    std::string line;
    std::getline(in, line);
    CHECK(line == "cycle,txn_tag,kind,src,dst,event");
    Cycle prev = 0;
    int rows = 0;
    while (std::getline(in, line)) {
        const Cycle c = std::stoull(line.substr(0, line.find(',')));
        CHECK(c >= prev);
        prev = c;
        ++rows;
    }
    CHECK(rows >= 8 * 4);
}

TEST_CASE("malformed transactions fault") {
    const ClusterConfig cfg;
    BankArray banks(cfg);
    Interconnect net(cfg, banks);
    MemoryTransaction odd = narrow_read(2);
    CHECK_THROWS_AS(net.issue(odd, 0, 0), AlignmentFault);
    MemoryTransaction far = narrow_read(cfg.l1_bytes());
    CHECK_THROWS_AS(net.issue(far, 0, 0), AddressFault);
    MemoryTransaction three = narrow_read(0);
    three.beats = 3;
    CHECK_THROWS_AS(net.issue(three, 0, 0), AlignmentFault);
}
