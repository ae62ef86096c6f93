// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

namespace lgd::nn {

/// Dense row-major matrix of doubles. Rows are samples, columns are features.
class Tensor2 {
public:
    Tensor2() = default;
    Tensor2(std::size_t rows, std::size_t cols, double fill = 0.0);
    Tensor2(std::size_t rows, std::size_t cols, std::vector<double> values);

    static Tensor2 from_rows(std::initializer_list<std::initializer_list<double>> rows);
    static Tensor2 row_vector(std::span<const double> values);

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const noexcept { return {data_.data() + r * cols_, cols_}; }

    std::span<double> values() noexcept { return data_; }
    std::span<const double> values() const noexcept { return data_; }
    std::vector<double>& storage() noexcept { return data_; }

    bool all_finite() const noexcept;
    bool same_shape(const Tensor2& other) const noexcept {
        return rows_ == other.rows_ && cols_ == other.cols_;
    }

    /// Copy of the selected rows, in the given order.
    Tensor2 gather_rows(std::span<const std::size_t> indices) const;

    friend bool operator==(const Tensor2& a, const Tensor2& b) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

/// a (n x k) * b (k x m).
Tensor2 matmul(const Tensor2& a, const Tensor2& b);
/// a (n x m) * b^T where b is (k x m); result n x k.
Tensor2 matmul_transposed_b(const Tensor2& a, const Tensor2& b);
/// a^T * b where a is (n x k), b is (n x m); result k x m, accumulated into out.
void accumulate_transposed_a(const Tensor2& a, const Tensor2& b, Tensor2& out);

/// y += alpha * x, shapes must match.
void axpy(double alpha, const Tensor2& x, Tensor2& y);

double dot(std::span<const double> a, std::span<const double> b) noexcept;
double l2_norm(std::span<const double> v) noexcept;

void require_same_shape(const Tensor2& a, const Tensor2& b, const char* what);

}  // namespace lgd::nn
