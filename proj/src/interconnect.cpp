#include "tensorpool/interconnect.hpp"

#include <algorithm>
#include <map>
#include <ostream>

namespace tensorpool {

std::string_view to_string(TxnKind k) {
    switch (k) {
        case TxnKind::NarrowRead: return "narrow-read";
        case TxnKind::NarrowWrite: return "narrow-write";
        case TxnKind::WideRead: return "wide-read";
        case TxnKind::WideWrite: return "wide-write";
        case TxnKind::BurstReadHeader: return "burst-read-header";
    }
    return "?";
}

namespace {

std::string_view to_string(TraceEvent e) {
    switch (e) {
        case TraceEvent::Issue: return "issue";
        case TraceEvent::ArbGrant: return "arb_grant";
        case TraceEvent::BankAccess: return "bank_access";
        case TraceEvent::RespCommit: return "resp_commit";
    }
    return "?";
}

}  // namespace

MemoryTransaction burst_group(const MemoryTransaction& txn, const ClusterConfig& cfg) {
    if (txn.kind != TxnKind::WideRead) return txn;
    if (txn.base_addr % cfg.wide_bytes() != 0) throw AlignmentFault("wide read must be aligned to the wide port width");
    MemoryTransaction header = txn;
    header.kind = TxnKind::BurstReadHeader;
    header.beats = cfg.wide_beats();
    return header;
}

std::vector<NarrowRequest> burst_distribute(const MemoryTransaction& header, const ClusterConfig& cfg) {
    std::vector<NarrowRequest> out;
    out.reserve(header.beats);
    for (std::uint32_t i = 0; i < header.beats; ++i) {
        const Addr a = header.base_addr + 4 * Addr{i};
        out.push_back({a, global_bank_of(a, cfg), i});
    }
    return out;
}

std::uint32_t request_slots(TxnKind kind, const ClusterConfig& cfg) {
    return kind == TxnKind::WideWrite ? cfg.wide_beats() / cfg.request_widen_J : 1;
}

PortRoute route_ports(std::uint32_t src_tile, std::uint32_t dst_tile, const ClusterConfig& cfg) {
    PortRoute r;
    r.latency = access_latency(src_tile, dst_tile, cfg);
    if (src_tile == dst_tile) return r;
    const std::uint32_t gs = group_of_tile(src_tile, cfg);
    const std::uint32_t gd = group_of_tile(dst_tile, cfg);
    if (gs == gd) {
        r.cls = PortClass::Subgroup;
        r.out_port = subgroup_of_tile(dst_tile, cfg) % cfg.subgroups_per_group;
        r.in_port = subgroup_of_tile(src_tile, cfg) % cfg.subgroups_per_group;
    } else {
        r.cls = PortClass::Group;
        r.out_port = cfg.arbiter_subgroup_ports + (gd + cfg.groups - gs - 1) % cfg.groups;
        r.in_port = cfg.arbiter_subgroup_ports + (gs + cfg.groups - gd - 1) % cfg.groups;
    }
    return r;
}

Interconnect::Interconnect(const ClusterConfig& cfg, BankArray& banks) : cfg_(cfg), banks_(banks) {
    const std::uint32_t ports = cfg.arbiter_subgroup_ports + cfg.arbiter_group_ports;
    tiles_.resize(cfg.num_tiles());
    for (auto& t : tiles_) {
        t.out_req.resize(ports);
        t.out_resp.resize(ports);
        t.in_req.resize(ports);
        t.in_resp.resize(ports);
    }
}

void Interconnect::set_beat_jitter(std::uint32_t max_extra, std::uint64_t seed) {
    jitter_max_ = max_extra;
    jitter_rng_.seed(seed);
}

void Interconnect::log(Cycle c, std::uint64_t id, TxnKind k, std::uint32_t src, std::uint32_t dst, TraceEvent e) {
    if (trace_on_) trace_.push_back({c, id, k, src, dst, e});
}

TxnTiming Interconnect::issue(MemoryTransaction& txn, std::uint32_t src_tile, Cycle now) {
    if (txn.beats != 1 && txn.beats != cfg_.wide_beats()) throw AlignmentFault("transactions carry 1 or a full wide beat set");
    if (txn.base_addr % 4 != 0) throw AlignmentFault("transactions must be word aligned");
    if (txn.base_addr + 4 * Addr{txn.beats} > cfg_.l1_bytes()) throw AddressFault("transaction outside L1");
    const bool wide = txn.kind == TxnKind::WideRead || txn.kind == TxnKind::WideWrite;
    if (wide && txn.base_addr % cfg_.wide_bytes() != 0) throw AlignmentFault("wide transactions must be port aligned");

    txn.issue_cycle = now;
    const MemoryTransaction routed = burst_group(txn, cfg_);
    const std::uint32_t dst_tile = tile_of(routed.base_addr, cfg_);
    const PortRoute route = route_ports(src_tile, dst_tile, cfg_);
    const bool read = is_read(routed.kind);

    TxnTiming t;
    t.id = next_id_++;
    t.issue = now;
    log(now, t.id, routed.kind, src_tile, dst_tile, TraceEvent::Issue);

    switch (routed.kind) {
        case TxnKind::NarrowRead: ++counters_.narrow_reads; break;
        case TxnKind::NarrowWrite: ++counters_.narrow_writes; break;
        case TxnKind::BurstReadHeader: ++counters_.bursts; break;
        case TxnKind::WideWrite: ++counters_.wide_writes; break;
        case TxnKind::WideRead: break;
    }

    const std::vector<NarrowRequest> reqs = routed.kind == TxnKind::BurstReadHeader
        ? burst_distribute(routed, cfg_)
        : std::vector<NarrowRequest>{};
    auto beat_addr = [&](std::uint32_t b) { return routed.base_addr + 4 * Addr{b}; };
    const std::uint32_t beats = routed.beats;

    // Request path: when does each beat reach its bank's doorstep?
    std::array<Cycle, 16> at_bank{};
    const std::uint32_t slots = request_slots(routed.kind, cfg_);
    counters_.write_request_slots += routed.kind == TxnKind::WideWrite || routed.kind == TxnKind::NarrowWrite ? slots : 0;
    if (route.cls == PortClass::Local) {
        ++counters_.local_grants;
        t.grant = now;
        t.accepted = now + 1;
        at_bank.fill(now);
    } else {
        TilePorts& src = tiles_[src_tile];
        TilePorts& dst = tiles_[dst_tile];
        const std::uint32_t beats_per_slot = (beats + slots - 1) / slots;
        Cycle prev_out = 0;
        Cycle prev_in = 0;
        for (std::uint32_t s = 0; s < slots; ++s) {
            SlotCalendar& out = src.out_req[route.out_port];
            Cycle g = out.first_free(std::max(now, s ? prev_out + 1 : now), now);
            // The inbound spill register holds the request until the last
            // of its beats has been accepted by a bank, so a conflicting
            // request blocks the port for everything queued behind it.
            const std::uint32_t b0 = s * beats_per_slot;
            const std::uint32_t b1 = std::min(beats, (s + 1) * beats_per_slot);
            // Likewise the outbound port stays occupied until the request
            // can move on, so a stalled request also holds its source.
            SlotCalendar& port = dst.in_req[route.in_port];
            Cycle arrive = port.first_free(std::max(g + route.latency, s ? prev_in + 1 : 0), now);
            for (;;) {
                Cycle release = arrive;
                for (std::uint32_t b = b0; b < b1; ++b) {
                    const Addr a = reqs.empty() ? beat_addr(b) : reqs[b].addr;
                    release = std::max(release, banks_.probe(a, arrive, now));
                }
                const Cycle depart = arrive - route.latency;
                if (!out.range_free(g, depart)) {
                    g = out.first_free(g + 1, now);
                    arrive = port.first_free(std::max(arrive, g + route.latency), now);
                    continue;
                }
                if (port.range_free(arrive, release)) {
                    port.claim(arrive, release, now);
                    out.claim(g, depart, now);
                    prev_out = depart;
                    break;
                }
                arrive = port.first_free(arrive + 1, now);
            }
            if (s == 0) t.grant = g;
            log(g, t.id, routed.kind, src_tile, dst_tile, TraceEvent::ArbGrant);
            t.accepted = prev_out + 1;
            prev_in = arrive;
            for (std::uint32_t b = b0; b < b1; ++b) at_bank[b] = arrive;
        }
        (route.cls == PortClass::Subgroup ? counters_.subgroup_grants : counters_.group_grants) += slots;
    }

    // Bank accesses (the burst distributor issues all beats on arrival).
    std::array<Cycle, 16> ready{};
    t.bank_first = ~Cycle{0};
    for (std::uint32_t b = 0; b < beats; ++b) {
        const Addr a = reqs.empty() ? beat_addr(b) : reqs[b].addr;
        const Cycle slot = banks_.access(a, !read, txn.data[b], at_bank[b], now, !txn.timing_only);
        log(slot, t.id, routed.kind, src_tile, dst_tile, TraceEvent::BankAccess);
        t.bank_first = std::min(t.bank_first, slot);
        t.bank_last = std::max(t.bank_last, slot);
        ready[b] = slot + 1;
    }

    if (!read) {
        // Posted write: completion marks the data as visible in the banks.
        t.complete = t.bank_last + 1;
        for (std::uint32_t b = 0; b < beats; ++b) t.beat_arrival[b] = ready[b];
        log(t.complete, t.id, routed.kind, src_tile, dst_tile, TraceEvent::RespCommit);
        return t;
    }

    // Response path, grouped K beats per handshake, beats in order.
    if (route.cls == PortClass::Local) {
        // The local crossbar returns the whole response in one handshake.
        const Cycle all = *std::max_element(ready.begin(), ready.begin() + beats) + (cfg_.latency_local - 1);
        Cycle deliver = all;
        if (beats > 1) deliver = tiles_[src_tile].local_resp.reserve(all, now);
        ++counters_.response_handshakes;
        for (std::uint32_t b = 0; b < beats; ++b) t.beat_arrival[b] = deliver;
        if (record_responses_) responses_.push_back({txn.tag, 0, beats, deliver});
    } else {
        TilePorts& src = tiles_[src_tile];
        TilePorts& dst = tiles_[dst_tile];
        const std::uint32_t k = cfg_.response_group_K;
        Cycle prev_send = 0;
        Cycle prev_recv = 0;
        for (std::uint32_t g0 = 0; g0 < beats; g0 += k) {
            const std::uint32_t g1 = std::min(beats, g0 + k);
            Cycle data_ready = *std::max_element(ready.begin() + g0, ready.begin() + g1);
            if (g0) data_ready = std::max(data_ready, prev_send + 1);
            // A handshake holds the sending port until the receiving side
            // accepts it (depth-1 stages, valid/ready).
            SlotCalendar& sport = dst.in_resp[route.in_port];
            SlotCalendar& rport = src.out_resp[route.out_port];
            Cycle send = sport.first_free(data_ready, now);
            Cycle recv = 0;
            for (;;) {
                Cycle recv_at = send + route.latency;
                if (g0) recv_at = std::max(recv_at, prev_recv + 1);
                recv = rport.first_free(recv_at, now);
                const Cycle hold_end = send + (recv - recv_at);
                if (sport.range_free(send, hold_end)) {
                    sport.claim(send, hold_end, now);
                    rport.claim(recv, recv, now);
                    break;
                }
                send = sport.first_free(send + 1, now);
            }
            prev_send = send;
            prev_recv = recv;
            ++counters_.response_handshakes;
            for (std::uint32_t b = g0; b < g1; ++b) t.beat_arrival[b] = recv;
            if (record_responses_) responses_.push_back({txn.tag, g0, g1 - g0, recv});
        }
    }
    if (jitter_max_ > 0) {
        std::uniform_int_distribution<std::uint32_t> extra(0, jitter_max_);
        for (std::uint32_t b = 0; b < beats; ++b) t.beat_arrival[b] += extra(jitter_rng_);
    }
    t.complete = *std::max_element(t.beat_arrival.begin(), t.beat_arrival.begin() + beats);
    log(t.complete, t.id, routed.kind, src_tile, dst_tile, TraceEvent::RespCommit);
    return t;
}

void Interconnect::write_trace_csv(std::ostream& os) const {
    std::vector<std::size_t> order(trace_.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return trace_[a].cycle < trace_[b].cycle; });
    os << "cycle,txn_tag,kind,src,dst,event\n";
    for (const std::size_t i : order) {
        const TraceRecord& r = trace_[i];
        os << r.cycle << ',' << r.txn << ',' << to_string(r.kind) << ',' << r.src << ',' << r.dst << ','
           << to_string(r.event) << '\n';
    }
}

std::uint32_t Interconnect::max_grants_per_tile_cycle() const {
    std::map<std::pair<Cycle, std::uint32_t>, std::uint32_t> counts;
    std::uint32_t best = 0;
    for (const TraceRecord& r : trace_) {
        if (r.event != TraceEvent::ArbGrant) continue;
        best = std::max(best, ++counts[{r.cycle, r.src}]);
    }
    return best;
}

}  // namespace tensorpool
