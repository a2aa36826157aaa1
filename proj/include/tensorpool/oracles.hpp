#pragma once

#include <cstdint>
#include <vector>

namespace tensorpool {

/// Dense row-major matrix in double precision.
struct Matrix {
    std::uint32_t rows = 0;
    std::uint32_t cols = 0;
    std::vector<double> v;

    Matrix() = default;
    Matrix(std::uint32_t r, std::uint32_t c) : rows(r), cols(c), v(std::size_t{r} * c, 0.0) {}
    double& at(std::uint32_t r, std::uint32_t c) { return v[std::size_t{r} * cols + c]; }
    double at(std::uint32_t r, std::uint32_t c) const { return v[std::size_t{r} * cols + c]; }
};

/// y + x * w
Matrix oracle_gemm(const Matrix& x, const Matrix& w, const Matrix& y);
/// Row-wise softmax of scale * in.
Matrix oracle_softmax(const Matrix& in, double scale = 1.0);
/// Row-wise layer normalisation with per-column gamma/beta, optionally clamped at 0.
Matrix oracle_layernorm(const Matrix& in, const std::vector<double>& gamma, const std::vector<double>& beta,
                        double eps, bool relu);
/// 3x3 depthwise convolution, zero padding. `in` is (height*width) x channels,
/// `kernel` is 9 x channels with rows ordered (dy, dx).
Matrix oracle_depthwise(const Matrix& in, std::uint32_t height, std::uint32_t width, const Matrix& kernel);
/// Depthwise 3x3, pointwise GEMM with bias rows, layer norm and ReLU.
Matrix oracle_conv(const Matrix& in, std::uint32_t height, std::uint32_t width, const Matrix& dw_kernel,
                   const Matrix& pw, const Matrix& bias, const std::vector<double>& gamma,
                   const std::vector<double>& beta, double eps);
/// Multi-head attention with zero biases and softmax scale 1/sqrt(head_dim).
Matrix oracle_mha(const Matrix& x, const Matrix& wq, const Matrix& wk, const Matrix& wv, const Matrix& wo,
                  std::uint32_t heads);

struct Comparison {
    std::uint64_t checked = 0;
    std::uint64_t mismatches = 0;
    double max_abs_error = 0.0;
    bool pass() const { return mismatches == 0; }
};

/// Element-wise |got - ref| <= max(rel * |ref|, abs).
Comparison compare(const Matrix& ref, const Matrix& got, double rel = 1e-2, double abs = 1e-3);

}  // namespace tensorpool
