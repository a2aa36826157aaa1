#include <algorithm>
#include <cmath>

#include "tensorpool/fp16.hpp"
#include "tensorpool/workloads.hpp"

namespace tensorpool {

using nlohmann::json;

std::string to_string(FusedBlock b) {
    switch (b) {
        case FusedBlock::FcSoftmax: return "fc_softmax";
        case FusedBlock::DwsepConv: return "dwsep_conv";
        case FusedBlock::Mha: return "mha";
    }
    return "?";
}

FusedBlock parse_fused_block(const std::string& s) {
    if (s == "fc_softmax") return FusedBlock::FcSoftmax;
    if (s == "dwsep_conv") return FusedBlock::DwsepConv;
    if (s == "mha") return FusedBlock::Mha;
    throw ConfigError("unknown fused block: " + s);
}

json FusedBlockSpec::to_json() const {
    return json{{"type", "fused"},
                {"block", to_string(block)},
                {"mode", to_string(mode)},
                {"buffering", double_buffer ? "double" : "single"},
                {"iterations", iterations},
                {"fc", {{"rows", fc_rows}, {"in", fc_in}, {"out", fc_out}}},
                {"conv", {{"height", conv_height}, {"width", conv_width}, {"channels", conv_channels}}},
                {"mha", {{"seq", mha_seq}, {"dim", mha_dim}, {"heads", mha_heads}}},
                {"seed", seed},
                {"verify", verify},
                {"compare_modes", compare_modes}};
}

FusedBlockSpec FusedBlockSpec::from_json(const json& j) {
    FusedBlockSpec s;
    try {
        s.block = parse_fused_block(j.at("block").get<std::string>());
        const std::string mode = j.value("mode", std::string("concurrent"));
        if (mode == "sequential") s.mode = ScheduleMode::Sequential;
        else if (mode == "concurrent") s.mode = ScheduleMode::Concurrent;
        else throw ConfigError("unknown schedule mode: " + mode);
        const std::string buf = j.value("buffering", std::string("double"));
        if (buf != "single" && buf != "double") throw ConfigError("buffering must be single or double");
        s.double_buffer = buf == "double";
        s.iterations = j.value("iterations", s.iterations);
        if (j.contains("fc")) {
            const json& f = j.at("fc");
            s.fc_rows = f.value("rows", s.fc_rows);
            s.fc_in = f.value("in", s.fc_in);
            s.fc_out = f.value("out", s.fc_out);
        }
        if (j.contains("conv")) {
            const json& c = j.at("conv");
            s.conv_height = c.value("height", s.conv_height);
            s.conv_width = c.value("width", s.conv_width);
            s.conv_channels = c.value("channels", s.conv_channels);
        }
        if (j.contains("mha")) {
            const json& m = j.at("mha");
            s.mha_seq = m.value("seq", s.mha_seq);
            s.mha_dim = m.value("dim", s.mha_dim);
            s.mha_heads = m.value("heads", s.mha_heads);
        }
        s.seed = j.value("seed", s.seed);
        s.verify = j.value("verify", s.verify);
        s.compare_modes = j.value("compare_modes", s.compare_modes);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("bad fused block spec: ") + e.what());
    }
    if (s.iterations == 0) throw ConfigError("iterations must be positive");
    return s;
}

namespace {

/// A matrix held in L1.
struct Region {
    Addr base = 0;
    RowLayout layout;
    std::uint32_t rows = 0;
    std::uint32_t cols = 0;
    std::uint64_t bytes = 0;

    OperandRegion op() const { return {base, bytes}; }
    /// Bounding range of rows [lo, hi).
    OperandRegion rows_op(std::uint32_t lo, std::uint32_t hi) const {
        if (layout.rows_per_block != 0) return op();
        return {layout.row_addr(base, lo), std::uint64_t{hi - lo} * layout.row_stride};
    }
};

Region alloc_region(L1Allocator& a, std::uint32_t rows, std::uint32_t cols, const RowLayout* layout = nullptr) {
    Region r;
    r.rows = rows;
    r.cols = cols;
    r.layout = layout ? *layout : RowLayout{2ull * cols, 0, 0};
    r.bytes = layout_bytes(r.layout, rows, 2 * cols);
    r.base = a.alloc(r.bytes);
    return r;
}

class L2Heap {
public:
    Addr alloc(std::uint64_t bytes) {
        const Addr a = next_;
        next_ += (bytes + 4095) / 4096 * 4096;
        return a;
    }

private:
    Addr next_ = 0x10000;
};

Matrix put_l2(L2Memory& l2, Addr addr, const Matrix& m) {
    Matrix stored(m.rows, m.cols);
    for (std::size_t i = 0; i < m.v.size(); ++i) {
        const std::uint16_t h = float_to_half(static_cast<float>(m.v[i]));
        l2.poke_half(addr + 2 * i, h);
        stored.v[i] = half_to_float(h);
    }
    return stored;
}

Matrix get_l2(const L2Memory& l2, Addr addr, std::uint32_t rows, std::uint32_t cols) {
    Matrix m(rows, cols);
    for (std::size_t i = 0; i < m.v.size(); ++i) m.v[i] = half_to_float(l2.peek_half(addr + 2 * i));
    return m;
}

/// Jobs moving rows [l1_row, l1_row + rows) of `reg` from or to a dense L2 matrix at `l2`.
std::vector<DmaJob> dma_rows(DmaDirection dir, Addr l2, const Region& reg, std::uint32_t l1_row, std::uint32_t rows) {
    const std::uint64_t row_bytes = 2ull * reg.cols;
    std::vector<DmaJob> jobs;
    if (reg.layout.rows_per_block == 0 && reg.layout.row_stride == row_bytes) {
        jobs.push_back({dir, l2, reg.layout.row_addr(reg.base, l1_row), rows * row_bytes, true});
        return jobs;
    }
    for (std::uint32_t r = 0; r < rows; ++r) {
        jobs.push_back({dir, l2 + r * row_bytes, reg.layout.row_addr(reg.base, l1_row + r), row_bytes, true});
    }
    return jobs;
}

void append(std::vector<DmaJob>& a, const std::vector<DmaJob>& b) { a.insert(a.end(), b.begin(), b.end()); }

void put_rows(Matrix& dst, std::uint32_t lo, const Matrix& src) {
    std::copy(src.v.begin(), src.v.end(), dst.v.begin() + std::size_t{lo} * dst.cols);
}

Matrix block(const Matrix& m, std::uint32_t r0, std::uint32_t c0, std::uint32_t rows, std::uint32_t cols) {
    Matrix out(rows, cols);
    for (std::uint32_t r = 0; r < rows; ++r) {
        for (std::uint32_t c = 0; c < cols; ++c) out.at(r, c) = m.at(r0 + r, c0 + c);
    }
    return out;
}

Matrix transpose(const Matrix& m) {
    Matrix t(m.cols, m.rows);
    for (std::uint32_t r = 0; r < m.rows; ++r) {
        for (std::uint32_t c = 0; c < m.cols; ++c) t.at(c, r) = m.at(r, c);
    }
    return t;
}

Matrix replicate_row(const Matrix& row, std::uint32_t rows) {
    Matrix out(rows, row.cols);
    for (std::uint32_t r = 0; r < rows; ++r) std::copy(row.v.begin(), row.v.end(), out.v.begin() + std::size_t{r} * row.cols);
    return out;
}

// PE functional kernels: FP16 in and out, float arithmetic in a fixed order.

void pe_softmax(BankArray& l1, const Region& in, const Region& out, float scale) {
    std::vector<float> v(in.cols);
    for (std::uint32_t r = 0; r < in.rows; ++r) {
        const Addr src = in.layout.row_addr(in.base, r);
        for (std::uint32_t c = 0; c < in.cols; ++c) v[c] = scale * half_to_float(l1.peek_half(src + 2ull * c));
        const float mx = *std::max_element(v.begin(), v.end());
        float sum = 0.0f;
        for (float& x : v) {
            x = std::exp(x - mx);
            sum += x;
        }
        const Addr dst = out.layout.row_addr(out.base, r);
        for (std::uint32_t c = 0; c < in.cols; ++c) l1.poke_half(dst + 2ull * c, float_to_half(v[c] / sum));
    }
}

void pe_layernorm_relu(BankArray& l1, const Region& in, const Region& out, const Region& gb, float eps) {
    std::vector<float> v(in.cols);
    for (std::uint32_t r = 0; r < in.rows; ++r) {
        const Addr src = in.layout.row_addr(in.base, r);
        float mean = 0.0f;
        for (std::uint32_t c = 0; c < in.cols; ++c) {
            v[c] = half_to_float(l1.peek_half(src + 2ull * c));
            mean += v[c];
        }
        mean /= static_cast<float>(in.cols);
        float var = 0.0f;
        for (const float x : v) var += (x - mean) * (x - mean);
        var /= static_cast<float>(in.cols);
        const float inv = 1.0f / std::sqrt(var + eps);
        const Addr dst = out.layout.row_addr(out.base, r);
        for (std::uint32_t c = 0; c < in.cols; ++c) {
            const float g = half_to_float(l1.peek_half(gb.base + 2ull * c));
            const float b = half_to_float(l1.peek_half(gb.layout.row_addr(gb.base, 1) + 2ull * c));
            l1.poke_half(dst + 2ull * c, float_to_half(std::max(0.0f, (v[c] - mean) * inv * g + b)));
        }
    }
}

/// Output pixels [p0, p0 + out.rows) of a 3x3 depthwise convolution over the
/// resident frame `in` (pixels x channels) with zero padding.
void pe_depthwise(BankArray& l1, const Region& in, std::uint32_t height, std::uint32_t width, const Region& k9,
                  std::uint32_t p0, const Region& out) {
    const std::uint32_t ch = in.cols;
    for (std::uint32_t i = 0; i < out.rows; ++i) {
        const std::uint32_t p = p0 + i;
        const int y = static_cast<int>(p / width), x = static_cast<int>(p % width);
        const Addr dst = out.layout.row_addr(out.base, i);
        for (std::uint32_t c = 0; c < ch; ++c) {
            float acc = 0.0f;
            for (int dy = -1; dy <= 1; ++dy) {
                for (int dx = -1; dx <= 1; ++dx) {
                    const int yy = y + dy, xx = x + dx;
                    if (yy < 0 || xx < 0 || yy >= static_cast<int>(height) || xx >= static_cast<int>(width)) continue;
                    const std::uint32_t q = static_cast<std::uint32_t>(yy) * width + static_cast<std::uint32_t>(xx);
                    const std::uint32_t tap = static_cast<std::uint32_t>((dy + 1) * 3 + (dx + 1));
                    const float a = half_to_float(l1.peek_half(in.layout.row_addr(in.base, q) + 2ull * c));
                    const float w = half_to_float(l1.peek_half(k9.layout.row_addr(k9.base, tap) + 2ull * c));
                    acc += a * w;
                }
            }
            l1.poke_half(dst + 2ull * c, float_to_half(acc));
        }
    }
}

std::uint64_t fnv1a(const L2Memory& l2, Addr addr, std::uint64_t bytes) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (std::uint64_t i = 0; i < bytes; ++i) {
        h ^= l2.read_byte(addr + i);
        h *= 0x100000001b3ull;
    }
    return h;
}

/// Collects stage-wise comparisons into one verdict.
struct Checker {
    VerificationResult v;
    std::vector<std::string> failed;

    void add(const std::string& stage, const Comparison& c) {
        v.checked += c.checked;
        v.mismatches += c.mismatches;
        v.max_abs_error = std::max(v.max_abs_error, c.max_abs_error);
        if (!c.pass()) failed.push_back(stage);
    }
    VerificationResult finish() {
        v.pass = failed.empty();
        if (v.pass) {
            v.detail = "all stages match their oracles";
        } else {
            v.detail = "mismatch in";
            for (const std::string& s : failed) v.detail += " " + s;
        }
        return v;
    }
};

Comparison exact(const Matrix& ref, const Matrix& got) { return compare(ref, got, 0.0, 0.0); }

/// Everything a block builder produces besides the graph itself.
struct Built {
    TaskGraph graph;
    Addr out_l2 = 0;
    std::uint64_t out_bytes = 0;
    std::function<void(Cluster&, Checker&)> verify;
};

GemmOperands gemm_op(const Region& x, const Region& w, const Region& y, const Region& z, std::uint32_t m,
                     std::uint32_t n, std::uint32_t k) {
    GemmOperands op;
    op.m = m;
    op.n = n;
    op.k = k;
    op.x = x.base;
    op.w = w.base;
    op.y = y.base;
    op.z = z.base;
    op.x_layout = x.layout;
    op.w_layout = w.layout;
    op.y_layout = y.layout;
    op.z_layout = z.layout;
    return op;
}

std::uint64_t gemm_macs(const std::vector<TeJob>& jobs) {
    std::uint64_t m = 0;
    for (const TeJob& j : jobs) m += std::uint64_t{j.regs.m} * j.regs.n * j.regs.k;
    return m;
}

// ------------------------------------------------------------------ FC + softmax

Built build_fc(const FusedBlockSpec& s, Cluster& c) {
    const ClusterConfig& cfg = c.config();
    if (s.fc_rows % s.iterations != 0) throw ConfigError("fc rows must split evenly over iterations");
    const std::uint32_t rpi = s.fc_rows / s.iterations;
    const std::uint32_t nb = s.double_buffer ? 2 : 1;
    const PartitionPlan plan = plan_partition(rpi, s.fc_out, cfg.num_tes(), cfg);
    // Dense rows: with one row per tile rotation, group-local rows would put
    // every row of an X chunk on the same banks.
    const RowLayout xl{2ull * s.fc_in, 0, 0};
    const RowLayout zl{2ull * s.fc_out, 0, 0};

    L1Allocator a(cfg);
    const Region w = alloc_region(a, s.fc_in, s.fc_out);
    const Region bias = alloc_region(a, rpi, s.fc_out, &zl);
    std::vector<Region> xbuf, zbuf, sbuf;
    for (std::uint32_t b = 0; b < nb; ++b) {
        xbuf.push_back(alloc_region(a, rpi, s.fc_in, &xl));
        zbuf.push_back(alloc_region(a, rpi, s.fc_out, &zl));
        sbuf.push_back(alloc_region(a, rpi, s.fc_out));
    }

    L2Heap h2;
    const Addr x2 = h2.alloc(2ull * s.fc_rows * s.fc_in);
    const Addr w2 = h2.alloc(2ull * s.fc_in * s.fc_out);
    const Addr b2 = h2.alloc(2ull * rpi * s.fc_out);
    const Addr o2 = h2.alloc(2ull * s.fc_rows * s.fc_out);
    const double ws = 1.0 / std::sqrt(static_cast<double>(s.fc_in));
    const Matrix x = put_l2(c.l2(), x2, random_matrix(s.fc_rows, s.fc_in, s.seed * 31 + 1, -1.0, 1.0));
    const Matrix wm = put_l2(c.l2(), w2, random_matrix(s.fc_in, s.fc_out, s.seed * 31 + 2, -2.0 * ws, 2.0 * ws));
    const Matrix brow = random_matrix(1, s.fc_out, s.seed * 31 + 3, -0.5, 0.5);
    put_l2(c.l2(), b2, replicate_row(brow, rpi));

    auto zcap = std::make_shared<Matrix>(s.fc_rows, s.fc_out);
    auto scap = std::make_shared<Matrix>(s.fc_rows, s.fc_out);

    Built out;
    TaskGraph& g = out.graph;
    Task tw;
    tw.name = "dma_w";
    tw.kind = EngineKind::Dma;
    tw.dma_jobs = dma_rows(DmaDirection::L2ToL1, w2, w, 0, s.fc_in);
    append(tw.dma_jobs, dma_rows(DmaDirection::L2ToL1, b2, bias, 0, rpi));
    tw.writes = {w.op(), bias.op()};
    const std::size_t t_w = g.add(tw);

    std::vector<std::size_t> gemm_t, soft_t, out_t;
    for (std::uint32_t i = 0; i < s.iterations; ++i) {
        const std::uint32_t b = i % nb;
        const std::uint32_t row0 = i * rpi;

        Task dx;
        dx.name = "dma_x[" + std::to_string(i) + "]";
        dx.kind = EngineKind::Dma;
        dx.dma_jobs = dma_rows(DmaDirection::L2ToL1, x2 + 2ull * row0 * s.fc_in, xbuf[b], 0, rpi);
        dx.writes = {xbuf[b].op()};
        if (i >= nb) dx.deps.push_back(gemm_t[i - nb]);
        const std::size_t t_x = g.add(dx);

        Task gm;
        gm.name = "gemm[" + std::to_string(i) + "]";
        gm.kind = EngineKind::Te;
        gm.te_jobs = partition_gemm(gemm_op(xbuf[b], w, bias, zbuf[b], rpi, s.fc_out, s.fc_in), plan, true, cfg);
        gm.macs = gemm_macs(gm.te_jobs);
        gm.reads = {xbuf[b].op(), w.op(), bias.op()};
        gm.writes = {zbuf[b].op()};
        gm.deps = {t_w, t_x};
        if (i >= nb) gm.deps.push_back(soft_t[i - nb]);
        gemm_t.push_back(g.add(gm));

        Task sm;
        sm.name = "softmax[" + std::to_string(i) + "]";
        sm.kind = EngineKind::Pe;
        sm.kernel = "softmax";
        sm.elements = std::uint64_t{rpi} * s.fc_out;
        sm.operands = {zbuf[b].op(), sbuf[b].op()};
        sm.reads = {zbuf[b].op()};
        sm.writes = {sbuf[b].op()};
        sm.deps = {gemm_t.back()};
        if (i >= nb) sm.deps.push_back(out_t[i - nb]);
        sm.apply = [zr = zbuf[b], sr = sbuf[b], row0, zcap, scap](Cluster& cl) {
            put_rows(*zcap, row0, read_matrix(cl.l1(), zr.base, zr.layout, zr.rows, zr.cols));
            pe_softmax(cl.l1(), zr, sr, 1.0f);
            put_rows(*scap, row0, read_matrix(cl.l1(), sr.base, sr.layout, sr.rows, sr.cols));
        };
        soft_t.push_back(g.add(sm));

        Task dout;
        dout.name = "dma_out[" + std::to_string(i) + "]";
        dout.kind = EngineKind::Dma;
        dout.dma_jobs = dma_rows(DmaDirection::L1ToL2, o2 + 2ull * row0 * s.fc_out, sbuf[b], 0, rpi);
        dout.reads = {sbuf[b].op()};
        dout.deps = {soft_t.back()};
        out_t.push_back(g.add(dout));
    }

    out.out_l2 = o2;
    out.out_bytes = 2ull * s.fc_rows * s.fc_out;
    out.verify = [=, rows = s.fc_rows, cols = s.fc_out](Cluster& cl, Checker& chk) {
        chk.add("fc", compare(oracle_gemm(x, wm, replicate_row(brow, rows)), *zcap));
        chk.add("softmax", compare(oracle_softmax(*zcap), *scap));
        chk.add("output", exact(*scap, get_l2(cl.l2(), o2, rows, cols)));
    };
    return out;
}

// ------------------------------------------------------------------ depthwise-separable conv

Built build_conv(const FusedBlockSpec& s, Cluster& c) {
    const ClusterConfig& cfg = c.config();
    const std::uint32_t H = s.conv_height, W = s.conv_width, C = s.conv_channels;
    if (H % s.iterations != 0) throw ConfigError("frame rows must split evenly over iterations");
    const std::uint32_t fr = H / s.iterations;  // frame rows per iteration
    const std::uint32_t ppi = fr * W;           // pixels per iteration
    const std::uint32_t P = H * W;
    const std::uint32_t nb = s.double_buffer ? 2 : 1;
    const PartitionPlan plan = plan_partition(ppi, C, cfg.num_tes(), cfg);
    const RowLayout rl{2ull * C, 0, 0};

    L1Allocator a(cfg);
    const Region in = alloc_region(a, P, C);
    const Region k9 = alloc_region(a, 9, C);
    const Region pw = alloc_region(a, C, C);
    const Region bias = alloc_region(a, ppi, C, &rl);
    const Region gb = alloc_region(a, 2, C);
    std::vector<Region> dbuf, pbuf, obuf;
    for (std::uint32_t b = 0; b < nb; ++b) {
        dbuf.push_back(alloc_region(a, ppi, C, &rl));
        pbuf.push_back(alloc_region(a, ppi, C, &rl));
        obuf.push_back(alloc_region(a, ppi, C));
    }

    L2Heap h2;
    const Addr in2 = h2.alloc(2ull * P * C);
    const Addr k2 = h2.alloc(2ull * 9 * C);
    const Addr pw2 = h2.alloc(2ull * C * C);
    const Addr b2 = h2.alloc(2ull * ppi * C);
    const Addr gb2 = h2.alloc(4ull * C);
    const Addr o2 = h2.alloc(2ull * P * C);
    const double ws = 1.0 / std::sqrt(static_cast<double>(C));
    const Matrix xin = put_l2(c.l2(), in2, random_matrix(P, C, s.seed * 37 + 1, -1.0, 1.0));
    const Matrix kern = put_l2(c.l2(), k2, random_matrix(9, C, s.seed * 37 + 2, -0.5, 0.5));
    const Matrix pwm = put_l2(c.l2(), pw2, random_matrix(C, C, s.seed * 37 + 3, -2.0 * ws, 2.0 * ws));
    const Matrix brow = random_matrix(1, C, s.seed * 37 + 4, -0.25, 0.25);
    put_l2(c.l2(), b2, replicate_row(brow, ppi));
    Matrix gbm(2, C);
    const Matrix gam = random_matrix(1, C, s.seed * 37 + 5, 0.5, 1.5);
    const Matrix bet = random_matrix(1, C, s.seed * 37 + 6, -0.5, 0.5);
    put_rows(gbm, 0, gam);
    put_rows(gbm, 1, bet);
    put_l2(c.l2(), gb2, gbm);
    constexpr float kEps = 1e-5f;

    auto dcap = std::make_shared<Matrix>(P, C);
    auto pcap = std::make_shared<Matrix>(P, C);
    auto ocap = std::make_shared<Matrix>(P, C);

    Built out;
    TaskGraph& g = out.graph;
    Task tw;
    tw.name = "dma_w";
    tw.kind = EngineKind::Dma;
    tw.dma_jobs = dma_rows(DmaDirection::L2ToL1, k2, k9, 0, 9);
    append(tw.dma_jobs, dma_rows(DmaDirection::L2ToL1, pw2, pw, 0, C));
    append(tw.dma_jobs, dma_rows(DmaDirection::L2ToL1, b2, bias, 0, ppi));
    append(tw.dma_jobs, dma_rows(DmaDirection::L2ToL1, gb2, gb, 0, 2));
    tw.writes = {k9.op(), pw.op(), bias.op(), gb.op()};
    const std::size_t t_w = g.add(tw);

    std::vector<std::size_t> in_t(s.iterations), dw_t, pw_t, ln_t, out_t;
    auto add_in = [&](std::uint32_t i) {
        Task t;
        t.name = "dma_in[" + std::to_string(i) + "]";
        t.kind = EngineKind::Dma;
        t.dma_jobs = dma_rows(DmaDirection::L2ToL1, in2 + 2ull * i * ppi * C, in, i * ppi, ppi);
        t.writes = {in.rows_op(i * ppi, (i + 1) * ppi)};
        in_t[i] = g.add(t);
    };
    add_in(0);
    for (std::uint32_t i = 0; i < s.iterations; ++i) {
        const std::uint32_t b = i % nb;
        const std::uint32_t p0 = i * ppi;
        if (i + 1 < s.iterations) add_in(i + 1);

        Task dw;
        dw.name = "dw[" + std::to_string(i) + "]";
        dw.kind = EngineKind::Pe;
        dw.kernel = "dwconv3x3";
        dw.elements = std::uint64_t{ppi} * C;
        dw.operands = {in.op(), dbuf[b].op(), k9.op()};
        const std::uint32_t lo = p0 >= W ? p0 - W : 0;
        const std::uint32_t hi = std::min(P, p0 + ppi + W);
        dw.reads = {in.rows_op(lo, hi), k9.op()};
        dw.writes = {dbuf[b].op()};
        dw.deps = {t_w, in_t[i]};
        if (i > 0) dw.deps.push_back(in_t[i - 1]);
        if (i + 1 < s.iterations) dw.deps.push_back(in_t[i + 1]);
        if (i >= nb) dw.deps.push_back(pw_t[i - nb]);
        dw.apply = [in, k9, dr = dbuf[b], p0, H, W, dcap](Cluster& cl) {
            pe_depthwise(cl.l1(), in, H, W, k9, p0, dr);
            put_rows(*dcap, p0, read_matrix(cl.l1(), dr.base, dr.layout, dr.rows, dr.cols));
        };
        dw_t.push_back(g.add(dw));

        Task gm;
        gm.name = "pw[" + std::to_string(i) + "]";
        gm.kind = EngineKind::Te;
        gm.te_jobs = partition_gemm(gemm_op(dbuf[b], pw, bias, pbuf[b], ppi, C, C), plan, true, cfg);
        gm.macs = gemm_macs(gm.te_jobs);
        gm.reads = {dbuf[b].op(), pw.op(), bias.op()};
        gm.writes = {pbuf[b].op()};
        gm.deps = {dw_t.back(), t_w};
        if (i >= nb) gm.deps.push_back(ln_t[i - nb]);
        pw_t.push_back(g.add(gm));

        Task ln;
        ln.name = "ln[" + std::to_string(i) + "]";
        ln.kind = EngineKind::Pe;
        ln.kernel = "layernorm_relu";
        ln.elements = std::uint64_t{ppi} * C;
        ln.operands = {pbuf[b].op(), obuf[b].op()};
        ln.reads = {pbuf[b].op(), gb.op()};
        ln.writes = {obuf[b].op()};
        ln.deps = {pw_t.back()};
        if (i >= nb) ln.deps.push_back(out_t[i - nb]);
        ln.apply = [pr = pbuf[b], orr = obuf[b], gb, p0, pcap, ocap, kEps](Cluster& cl) {
            put_rows(*pcap, p0, read_matrix(cl.l1(), pr.base, pr.layout, pr.rows, pr.cols));
            pe_layernorm_relu(cl.l1(), pr, orr, gb, kEps);
            put_rows(*ocap, p0, read_matrix(cl.l1(), orr.base, orr.layout, orr.rows, orr.cols));
        };
        ln_t.push_back(g.add(ln));

        Task dout;
        dout.name = "dma_out[" + std::to_string(i) + "]";
        dout.kind = EngineKind::Dma;
        dout.dma_jobs = dma_rows(DmaDirection::L1ToL2, o2 + 2ull * p0 * C, obuf[b], 0, ppi);
        dout.reads = {obuf[b].op()};
        dout.deps = {ln_t.back()};
        out_t.push_back(g.add(dout));
    }

    out.out_l2 = o2;
    out.out_bytes = 2ull * P * C;
    out.verify = [=](Cluster& cl, Checker& chk) {
        chk.add("depthwise", compare(oracle_depthwise(xin, H, W, kern), *dcap));
        chk.add("pointwise", compare(oracle_gemm(*dcap, pwm, replicate_row(brow, P)), *pcap));
        std::vector<double> gv(gam.v), bv(bet.v);
        chk.add("layernorm_relu", compare(oracle_layernorm(*pcap, gv, bv, kEps, true), *ocap));
        chk.add("output", exact(*ocap, get_l2(cl.l2(), o2, P, C)));
    };
    return out;
}

// ------------------------------------------------------------------ multi-head attention

Built build_mha(const FusedBlockSpec& s, Cluster& c) {
    const ClusterConfig& cfg = c.config();
    const std::uint32_t S = s.mha_seq, D = s.mha_dim, H = s.mha_heads;
    if (H == 0 || D % H != 0) throw ConfigError("model dimension must split evenly over heads");
    const std::uint32_t dh = D / H;
    const std::uint32_t tes = cfg.num_tes();
    if (tes % H != 0) throw ConfigError("heads must split the engines evenly");
    const std::uint32_t per_head = tes / H;

    L1Allocator a(cfg);
    const Region x = alloc_region(a, S, D);
    const Region wq = alloc_region(a, D, D), wk = alloc_region(a, D, D), wv = alloc_region(a, D, D),
                 wo = alloc_region(a, D, D);
    const Region q = alloc_region(a, S, D), k = alloc_region(a, S, D), v = alloc_region(a, S, D);
    const Region kt = alloc_region(a, H * dh, S);  // head h: rows [h*dh, (h+1)*dh)
    const Region att = alloc_region(a, H * S, S);  // head h: rows [h*S, (h+1)*S)
    const Region o = alloc_region(a, S, D);
    const Region zero = alloc_region(a, S, D);
    const Region res = alloc_region(a, S, D);

    L2Heap h2;
    const Addr x2 = h2.alloc(2ull * S * D);
    const Addr wq2 = h2.alloc(2ull * D * D), wk2 = h2.alloc(2ull * D * D), wv2 = h2.alloc(2ull * D * D),
               wo2 = h2.alloc(2ull * D * D);
    const Addr o2 = h2.alloc(2ull * S * D);
    const double ws = 1.0 / std::sqrt(static_cast<double>(D));
    const Matrix xm = put_l2(c.l2(), x2, random_matrix(S, D, s.seed * 41 + 1, -1.0, 1.0));
    const Matrix wqm = put_l2(c.l2(), wq2, random_matrix(D, D, s.seed * 41 + 2, -2.0 * ws, 2.0 * ws));
    const Matrix wkm = put_l2(c.l2(), wk2, random_matrix(D, D, s.seed * 41 + 3, -2.0 * ws, 2.0 * ws));
    const Matrix wvm = put_l2(c.l2(), wv2, random_matrix(D, D, s.seed * 41 + 4, -2.0 * ws, 2.0 * ws));
    const Matrix wom = put_l2(c.l2(), wo2, random_matrix(D, D, s.seed * 41 + 5, -2.0 * ws, 2.0 * ws));
    const float scale = 1.0f / std::sqrt(static_cast<float>(dh));

    auto acap_in = std::make_shared<Matrix>(H * S, S);
    auto acap_out = std::make_shared<Matrix>(H * S, S);

    const PartitionPlan proj = plan_partition(S, D, tes, cfg);
    auto projection = [&](const std::string& name, const Region& in, const Region& w, const Region& dst) {
        Task t;
        t.name = name;
        t.kind = EngineKind::Te;
        t.te_jobs = partition_gemm(gemm_op(in, w, zero, dst, S, D, D), proj, true, cfg);
        t.macs = gemm_macs(t.te_jobs);
        t.reads = {in.op(), w.op(), zero.op()};
        t.writes = {dst.op()};
        return t;
    };
    auto load = [&](const std::string& name, std::vector<std::pair<Addr, Region>> items) {
        Task t;
        t.name = name;
        t.kind = EngineKind::Dma;
        for (const auto& [l2a, reg] : items) {
            append(t.dma_jobs, dma_rows(DmaDirection::L2ToL1, l2a, reg, 0, reg.rows));
            t.writes.push_back(reg.op());
        }
        return t;
    };
    // Per-head GEMMs on column slices of the projections.
    auto head_gemm = [&](const std::string& name, auto&& operands) {
        Task t;
        t.name = name;
        t.kind = EngineKind::Te;
        for (std::uint32_t h = 0; h < H; ++h) {
            const GemmOperands op = operands(h);
            const PartitionPlan plan = plan_partition(op.m, op.n, per_head, cfg);
            for (TeJob j : partition_gemm(op, plan, true, cfg)) {
                j.te += h * per_head;
                t.te_jobs.push_back(j);
            }
        }
        t.macs = gemm_macs(t.te_jobs);
        return t;
    };
    const RowLayout wide{2ull * D, 0, 0}, square{2ull * S, 0, 0};

    Built out;
    TaskGraph& g = out.graph;
    const std::size_t t_x = g.add(load("dma_x", {{x2, x}, {wk2, wk}}));
    Task pk = projection("proj_k", x, wk, k);
    pk.deps = {t_x};
    const std::size_t t_pk = g.add(pk);

    Task tr;
    tr.name = "transpose_k";
    tr.kind = EngineKind::Pe;
    tr.kernel = "transpose";
    tr.elements = std::uint64_t{S} * D;
    tr.operands = {k.op(), kt.op()};
    tr.reads = {k.op()};
    tr.writes = {kt.op()};
    tr.deps = {t_pk};
    tr.apply = [k, kt, S, dh, H](Cluster& cl) {
        for (std::uint32_t h = 0; h < H; ++h) {
            for (std::uint32_t d = 0; d < dh; ++d) {
                for (std::uint32_t r = 0; r < S; ++r) {
                    const std::uint16_t val = cl.l1().peek_half(k.layout.row_addr(k.base, r) + 2ull * (h * dh + d));
                    cl.l1().poke_half(kt.layout.row_addr(kt.base, h * dh + d) + 2ull * r, val);
                }
            }
        }
    };
    const std::size_t t_tr = g.add(tr);

    const std::size_t t_wq = g.add(load("dma_wq", {{wq2, wq}}));
    Task pq = projection("proj_q", x, wq, q);
    pq.deps = {t_x, t_wq};
    const std::size_t t_pq = g.add(pq);
    const std::size_t t_wv = g.add(load("dma_wv", {{wv2, wv}}));
    Task pv = projection("proj_v", x, wv, v);
    pv.deps = {t_x, t_wv};
    const std::size_t t_pv = g.add(pv);

    Task qk = head_gemm("qk", [&](std::uint32_t h) {
        GemmOperands op;
        op.m = S;
        op.n = S;
        op.k = dh;
        op.x = q.base + 2ull * h * dh;
        op.x_layout = wide;
        op.w = kt.layout.row_addr(kt.base, h * dh);
        op.w_layout = square;
        op.y = zero.base;
        op.y_layout = wide;
        op.z = att.layout.row_addr(att.base, h * S);
        op.z_layout = square;
        return op;
    });
    qk.reads = {q.op(), kt.op(), zero.op()};
    qk.writes = {att.op()};
    qk.deps = {t_tr, t_pq};
    const std::size_t t_qk = g.add(qk);

    Task sm;
    sm.name = "softmax";
    sm.kind = EngineKind::Pe;
    sm.kernel = "softmax";
    sm.elements = std::uint64_t{H} * S * S;
    sm.operands = {att.op(), att.op()};
    sm.reads = {att.op()};
    sm.writes = {att.op()};
    sm.deps = {t_qk};
    sm.apply = [att, scale, acap_in, acap_out](Cluster& cl) {
        *acap_in = read_matrix(cl.l1(), att.base, att.layout, att.rows, att.cols);
        pe_softmax(cl.l1(), att, att, scale);
        *acap_out = read_matrix(cl.l1(), att.base, att.layout, att.rows, att.cols);
    };
    const std::size_t t_sm = g.add(sm);

    Task sv = head_gemm("sv", [&](std::uint32_t h) {
        GemmOperands op;
        op.m = S;
        op.n = dh;
        op.k = S;
        op.x = att.layout.row_addr(att.base, h * S);
        op.x_layout = square;
        op.w = v.base + 2ull * h * dh;
        op.w_layout = wide;
        op.y = zero.base;
        op.y_layout = wide;
        op.z = o.base + 2ull * h * dh;
        op.z_layout = wide;
        return op;
    });
    sv.reads = {att.op(), v.op(), zero.op()};
    sv.writes = {o.op()};
    sv.deps = {t_sm, t_pv};
    const std::size_t t_sv = g.add(sv);

    const std::size_t t_wo = g.add(load("dma_wo", {{wo2, wo}}));
    Task po = projection("proj_o", o, wo, res);
    po.deps = {t_sv, t_wo};
    const std::size_t t_po = g.add(po);

    Task dout;
    dout.name = "dma_out";
    dout.kind = EngineKind::Dma;
    dout.dma_jobs = dma_rows(DmaDirection::L1ToL2, o2, res, 0, S);
    dout.reads = {res.op()};
    dout.deps = {t_po};
    g.add(dout);

    out.out_l2 = o2;
    out.out_bytes = 2ull * S * D;
    out.verify = [=](Cluster& cl, Checker& chk) {
        BankArray& l1 = cl.l1();
        const Matrix zs(S, D);
        const Matrix qm = read_matrix(l1, q.base, q.layout, S, D);
        const Matrix km = read_matrix(l1, k.base, k.layout, S, D);
        const Matrix vm = read_matrix(l1, v.base, v.layout, S, D);
        chk.add("proj_q", compare(oracle_gemm(xm, wqm, zs), qm));
        chk.add("proj_k", compare(oracle_gemm(xm, wkm, zs), km));
        chk.add("proj_v", compare(oracle_gemm(xm, wvm, zs), vm));
        const Matrix ktm = read_matrix(l1, kt.base, kt.layout, H * dh, S);
        Matrix kt_ref(H * dh, S);
        for (std::uint32_t h = 0; h < H; ++h) put_rows(kt_ref, h * dh, transpose(block(km, 0, h * dh, S, dh)));
        chk.add("transpose_k", exact(kt_ref, ktm));
        const Matrix om = read_matrix(l1, o.base, o.layout, S, D);
        const Matrix zss(S, S), zsd(S, dh);
        for (std::uint32_t h = 0; h < H; ++h) {
            const Matrix scores = oracle_gemm(block(qm, 0, h * dh, S, dh), block(ktm, h * dh, 0, dh, S), zss);
            chk.add("qk", compare(scores, block(*acap_in, h * S, 0, S, S)));
            const Matrix pv = oracle_gemm(block(*acap_out, h * S, 0, S, S), block(vm, 0, h * dh, S, dh), zsd);
            chk.add("sv", compare(pv, block(om, 0, h * dh, S, dh)));
        }
        chk.add("softmax", compare(oracle_softmax(*acap_in, scale), *acap_out));
        const Matrix resm = read_matrix(l1, res.base, res.layout, S, D);
        chk.add("proj_o", compare(oracle_gemm(om, wom, zs), resm));
        chk.add("output", exact(resm, get_l2(cl.l2(), o2, S, D)));
    };
    return out;
}

struct BlockRun {
    MetricsReport report;
    std::uint64_t hash = 0;
};

BlockRun run_once(const FusedBlockSpec& spec, const ClusterConfig& cfg, const KernelLibrary& kernels,
                  const RunOptions& opt) {
    Cluster c(cfg, opt.cluster);
    if (opt.trace) c.net().enable_trace(true);
    Built b;
    switch (spec.block) {
        case FusedBlock::FcSoftmax: b = build_fc(spec, c); break;
        case FusedBlock::DwsepConv: b = build_conv(spec, c); break;
        case FusedBlock::Mha: b = build_mha(spec, c); break;
    }
    const std::vector<TaskTiming> timing = b.graph.run(c, spec.mode, kernels);

    BlockRun out;
    MetricsReport& r = out.report;
    r.workload = "fused_" + to_string(spec.block);
    r.spec = spec.to_json();
    Cycle total = 0;
    for (const TaskTiming& t : timing) total = std::max(total, t.end);
    collect_cluster_metrics(c, 0, total, r);
    r.te_utilization = total == 0 ? 0.0
                                  : static_cast<double>(r.macs)
            / (static_cast<double>(cfg.num_tes()) * cfg.te_macs_per_cycle() * static_cast<double>(total));

    // Busy fraction per engine class: union of task intervals.
    json tl = json::array();
    for (const EngineKind kind : {EngineKind::Te, EngineKind::Pe, EngineKind::Dma}) {
        std::vector<std::pair<Cycle, Cycle>> iv;
        for (const TaskTiming& t : timing) {
            if (t.kind == kind) iv.emplace_back(t.start, t.end);
        }
        std::sort(iv.begin(), iv.end());
        Cycle covered = 0, cur_s = 0, cur_e = 0;
        bool open = false;
        for (const auto& [s0, e0] : iv) {
            if (open && s0 <= cur_e) {
                cur_e = std::max(cur_e, e0);
                continue;
            }
            if (open) covered += cur_e - cur_s;
            cur_s = s0;
            cur_e = e0;
            open = true;
        }
        if (open) covered += cur_e - cur_s;
        const std::string key = kind == EngineKind::Te ? "te" : kind == EngineKind::Pe ? "pe" : "dma";
        r.scalars[key + "_busy_fraction"] = total == 0 ? 0.0 : static_cast<double>(covered) / static_cast<double>(total);
    }
    for (const TaskTiming& t : timing) {
        const std::string engine = t.kind == EngineKind::Te ? "te" : t.kind == EngineKind::Pe ? "pe" : "dma";
        tl.push_back({{"task", t.name}, {"engine", engine}, {"start", t.start}, {"end", t.end}});
    }
    r.details = {{"timeline", tl}};

    if (spec.verify) {
        Checker chk;
        b.verify(c, chk);
        r.verification = chk.finish();
    } else {
        r.verification.detail = "not requested";
    }
    out.hash = fnv1a(c.l2(), b.out_l2, b.out_bytes);
    r.scalars["output_hash"] = static_cast<double>(out.hash & ((1ull << 48) - 1));
    if (opt.inspect) opt.inspect(c);
    return out;
}

}  // namespace

MetricsReport run_fused_block(const FusedBlockSpec& spec, const ClusterConfig& cfg, const KernelLibrary& kernels,
                              const RunOptions& opt) {
    cfg.validate();
    BlockRun main = run_once(spec, cfg, kernels, opt);
    MetricsReport& r = main.report;
    r.scalars["runtime_cycles"] = static_cast<double>(r.total_cycles);
    if (spec.compare_modes) {
        FusedBlockSpec other = spec;
        other.mode = spec.mode == ScheduleMode::Concurrent ? ScheduleMode::Sequential : ScheduleMode::Concurrent;
        other.compare_modes = false;
        RunOptions plain;
        plain.cluster = opt.cluster;
        const BlockRun alt = run_once(other, cfg, kernels, plain);
        const bool conc_main = spec.mode == ScheduleMode::Concurrent;
        const double conc = static_cast<double>(conc_main ? r.total_cycles : alt.report.total_cycles);
        const double seq = static_cast<double>(conc_main ? alt.report.total_cycles : r.total_cycles);
        r.scalars["concurrent_cycles"] = conc;
        r.scalars["sequential_cycles"] = seq;
        r.scalars["runtime_reduction"] = seq == 0 ? 0.0 : 1.0 - conc / seq;
        r.scalars["concurrent_te_utilization"] = conc_main ? r.te_utilization : alt.report.te_utilization;
        r.scalars["sequential_te_utilization"] = conc_main ? alt.report.te_utilization : r.te_utilization;
        const bool same = alt.hash == main.hash;
        r.scalars["outputs_identical"] = same ? 1.0 : 0.0;
        if (!alt.report.verification.pass) {
            r.verification.pass = false;
            r.verification.detail += "; other schedule: " + alt.report.verification.detail;
        }
        if (!same) {
            r.verification.pass = false;
            r.verification.detail += "; schedules produced different output bytes";
        }
    }
    return r;
}

}  // namespace tensorpool
