// SPDX-License-Identifier: Apache-2.0
#include "lgd/tensor.hpp"

#include <cmath>
#include <string>

#include "lgd/errors.hpp"

namespace lgd::nn {

Tensor2::Tensor2(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Tensor2::Tensor2(std::size_t rows, std::size_t cols, std::vector<double> values)
    : rows_(rows), cols_(cols), data_(std::move(values)) {
    if (data_.size() != rows_ * cols_) {
        throw DimensionError("Tensor2: " + std::to_string(data_.size()) + " values for a " +
                             std::to_string(rows_) + "x" + std::to_string(cols_) + " tensor");
    }
}

Tensor2 Tensor2::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r == 0 ? 0 : rows.begin()->size();
    std::vector<double> values;
    values.reserve(r * c);
    for (const auto& row : rows) {
        if (row.size() != c) throw DimensionError("Tensor2::from_rows: ragged rows");
        values.insert(values.end(), row.begin(), row.end());
    }
    return Tensor2(r, c, std::move(values));
}

Tensor2 Tensor2::row_vector(std::span<const double> values) {
    return Tensor2(1, values.size(), std::vector<double>(values.begin(), values.end()));
}

bool Tensor2::all_finite() const noexcept {
    for (double v : data_) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

Tensor2 Tensor2::gather_rows(std::span<const std::size_t> indices) const {
    Tensor2 out(indices.size(), cols_);
    for (std::size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] >= rows_) throw DimensionError("Tensor2::gather_rows: row index out of range");
        auto src = row(indices[i]);
        std::copy(src.begin(), src.end(), out.row(i).begin());
    }
    return out;
}

void require_same_shape(const Tensor2& a, const Tensor2& b, const char* what) {
    if (!a.same_shape(b)) {
        throw DimensionError(std::string(what) + ": shape " + std::to_string(a.rows()) + "x" +
                             std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                             std::to_string(b.cols()));
    }
}

namespace {

// out += a * b for a (n x k) and b (k x m); four output rows share each load of a b row.
void gemm_accumulate(const double* a, const double* b, double* out, std::size_t n, std::size_t k, std::size_t m) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const double* a0 = a + i * k;
        double* o0 = out + i * m;
        double* o1 = o0 + m;
        double* o2 = o1 + m;
        double* o3 = o2 + m;
        for (std::size_t p = 0; p < k; ++p) {
            const double v0 = a0[p], v1 = a0[k + p], v2 = a0[2 * k + p], v3 = a0[3 * k + p];
            const double* brow = b + p * m;
            for (std::size_t j = 0; j < m; ++j) {
                const double bv = brow[j];
                o0[j] += v0 * bv;
                o1[j] += v1 * bv;
                o2[j] += v2 * bv;
                o3[j] += v3 * bv;
            }
        }
    }
    for (; i < n; ++i) {
        double* orow = out + i * m;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = a[i * k + p];
            const double* brow = b + p * m;
            for (std::size_t j = 0; j < m; ++j) orow[j] += av * brow[j];
        }
    }
}

}  // namespace

Tensor2 matmul(const Tensor2& a, const Tensor2& b) {
    if (a.cols() != b.rows()) throw DimensionError("matmul: inner dimensions differ");
    Tensor2 out(a.rows(), b.cols());
    gemm_accumulate(a.values().data(), b.values().data(), out.values().data(), a.rows(), a.cols(), b.cols());
    return out;
}

Tensor2 matmul_transposed_b(const Tensor2& a, const Tensor2& b) {
    if (a.cols() != b.cols()) throw DimensionError("matmul_transposed_b: column counts differ");
    Tensor2 bt(b.cols(), b.rows());
    for (std::size_t p = 0; p < b.rows(); ++p)
        for (std::size_t j = 0; j < b.cols(); ++j) bt(j, p) = b(p, j);
    return matmul(a, bt);
}

void accumulate_transposed_a(const Tensor2& a, const Tensor2& b, Tensor2& out) {
    if (a.rows() != b.rows() || out.rows() != a.cols() || out.cols() != b.cols()) {
        throw DimensionError("accumulate_transposed_a: shape mismatch");
    }
    const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
    for (std::size_t i = 0; i < n; ++i) {
        const double* arow = a.row(i).data();
        const double* brow = b.row(i).data();
        for (std::size_t p = 0; p < k; ++p) {
            const double av = arow[p];
            if (av == 0.0) continue;
            double* orow = out.row(p).data();
            for (std::size_t j = 0; j < m; ++j) orow[j] += av * brow[j];
        }
    }
}

void axpy(double alpha, const Tensor2& x, Tensor2& y) {
    require_same_shape(x, y, "axpy");
    auto xs = x.values();
    auto ys = y.values();
    for (std::size_t i = 0; i < xs.size(); ++i) ys[i] += alpha * xs[i];
}

double dot(std::span<const double> a, std::span<const double> b) noexcept {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double l2_norm(std::span<const double> v) noexcept { return std::sqrt(dot(v, v)); }

}  // namespace lgd::nn
