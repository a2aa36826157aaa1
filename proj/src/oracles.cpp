#include "tensorpool/oracles.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace tensorpool {

Matrix oracle_gemm(const Matrix& x, const Matrix& w, const Matrix& y) {
    if (x.cols != w.rows || y.rows != x.rows || y.cols != w.cols) throw std::invalid_argument("GEMM shape mismatch");
    Matrix z = y;
    for (std::uint32_t i = 0; i < x.rows; ++i) {
        double* zr = &z.v[std::size_t{i} * z.cols];
        for (std::uint32_t k = 0; k < x.cols; ++k) {
            const double a = x.at(i, k);
            const double* wr = &w.v[std::size_t{k} * w.cols];
            for (std::uint32_t j = 0; j < w.cols; ++j) zr[j] += a * wr[j];
        }
    }
    return z;
}

Matrix oracle_softmax(const Matrix& in, double scale) {
    Matrix out(in.rows, in.cols);
    for (std::uint32_t i = 0; i < in.rows; ++i) {
        double mx = -INFINITY;
        for (std::uint32_t j = 0; j < in.cols; ++j) mx = std::max(mx, scale * in.at(i, j));
        double sum = 0.0;
        for (std::uint32_t j = 0; j < in.cols; ++j) sum += std::exp(scale * in.at(i, j) - mx);
        for (std::uint32_t j = 0; j < in.cols; ++j) out.at(i, j) = std::exp(scale * in.at(i, j) - mx) / sum;
    }
    return out;
}

Matrix oracle_layernorm(const Matrix& in, const std::vector<double>& gamma, const std::vector<double>& beta,
                        double eps, bool relu) {
    Matrix out(in.rows, in.cols);
    for (std::uint32_t i = 0; i < in.rows; ++i) {
        double mean = 0.0;
        for (std::uint32_t j = 0; j < in.cols; ++j) mean += in.at(i, j);
        mean /= in.cols;
        double var = 0.0;
        for (std::uint32_t j = 0; j < in.cols; ++j) var += (in.at(i, j) - mean) * (in.at(i, j) - mean);
        var /= in.cols;
        const double inv = 1.0 / std::sqrt(var + eps);
        for (std::uint32_t j = 0; j < in.cols; ++j) {
            double v = (in.at(i, j) - mean) * inv * gamma[j] + beta[j];
            if (relu) v = std::max(v, 0.0);
            out.at(i, j) = v;
        }
    }
    return out;
}

Matrix oracle_depthwise(const Matrix& in, std::uint32_t height, std::uint32_t width, const Matrix& kernel) {
    if (in.rows != height * width || kernel.rows != 9 || kernel.cols != in.cols) {
        throw std::invalid_argument("depthwise shape mismatch");
    }
    Matrix out(in.rows, in.cols);
    for (std::uint32_t h = 0; h < height; ++h) {
        for (std::uint32_t w = 0; w < width; ++w) {
            for (std::uint32_t c = 0; c < in.cols; ++c) {
                double s = 0.0;
                for (int dy = -1; dy <= 1; ++dy) {
                    for (int dx = -1; dx <= 1; ++dx) {
                        const int hh = static_cast<int>(h) + dy;
                        const int ww = static_cast<int>(w) + dx;
                        if (hh < 0 || ww < 0 || hh >= static_cast<int>(height) || ww >= static_cast<int>(width)) continue;
                        s += in.at(static_cast<std::uint32_t>(hh) * width + static_cast<std::uint32_t>(ww), c)
                            * kernel.at(static_cast<std::uint32_t>((dy + 1) * 3 + dx + 1), c);
                    }
                }
                out.at(h * width + w, c) = s;
            }
        }
    }
    return out;
}

Matrix oracle_conv(const Matrix& in, std::uint32_t height, std::uint32_t width, const Matrix& dw_kernel,
                   const Matrix& pw, const Matrix& bias, const std::vector<double>& gamma,
                   const std::vector<double>& beta, double eps) {
    const Matrix d = oracle_depthwise(in, height, width, dw_kernel);
    const Matrix p = oracle_gemm(d, pw, bias);
    return oracle_layernorm(p, gamma, beta, eps, true);
}

Matrix oracle_mha(const Matrix& x, const Matrix& wq, const Matrix& wk, const Matrix& wv, const Matrix& wo,
                  std::uint32_t heads) {
    const Matrix zero(x.rows, wq.cols);
    const Matrix q = oracle_gemm(x, wq, zero);
    const Matrix k = oracle_gemm(x, wk, zero);
    const Matrix v = oracle_gemm(x, wv, zero);
    const std::uint32_t dh = wq.cols / heads;
    Matrix o(x.rows, wq.cols);
    for (std::uint32_t h = 0; h < heads; ++h) {
        Matrix s(x.rows, x.rows);
        for (std::uint32_t i = 0; i < x.rows; ++i) {
            for (std::uint32_t j = 0; j < x.rows; ++j) {
                double acc = 0.0;
                for (std::uint32_t d = 0; d < dh; ++d) acc += q.at(i, h * dh + d) * k.at(j, h * dh + d);
                s.at(i, j) = acc;
            }
        }
        const Matrix p = oracle_softmax(s, 1.0 / std::sqrt(static_cast<double>(dh)));
        for (std::uint32_t i = 0; i < x.rows; ++i) {
            for (std::uint32_t d = 0; d < dh; ++d) {
                double acc = 0.0;
                for (std::uint32_t j = 0; j < x.rows; ++j) acc += p.at(i, j) * v.at(j, h * dh + d);
                o.at(i, h * dh + d) = acc;
            }
        }
    }
    return oracle_gemm(o, wo, Matrix(x.rows, wo.cols));
}

Comparison compare(const Matrix& ref, const Matrix& got, double rel, double abs) {
    if (ref.rows != got.rows || ref.cols != got.cols) throw std::invalid_argument("compare shape mismatch");
    Comparison c;
    for (std::size_t i = 0; i < ref.v.size(); ++i) {
        const double e = std::fabs(got.v[i] - ref.v[i]);
        c.max_abs_error = std::max(c.max_abs_error, e);
        if (!(e <= std::max(rel * std::fabs(ref.v[i]), abs))) ++c.mismatches;
        ++c.checked;
    }
    return c;
}

}  // namespace tensorpool
