#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "fewshot/rng.hpp"

namespace fewshot {

// Dense row-major matrix of doubles.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
    Matrix(std::initializer_list<std::initializer_list<double>> rows);

    static Matrix identity(std::size_t n);

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }
    std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

    std::string shape_string() const;
    bool same_shape(const Matrix& other) const noexcept {
        return rows_ == other.rows_ && cols_ == other.cols_;
    }
    bool all_finite() const noexcept;

    friend bool operator==(const Matrix&, const Matrix&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

Matrix matmul(const Matrix& a, const Matrix& b);
// aᵀ·b without materializing the transpose.
Matrix matmul_tn(const Matrix& a, const Matrix& b);
// a·bᵀ without materializing the transpose.
Matrix matmul_nt(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& a);

// Stacks rows of the given matrices (all with equal column counts).
Matrix vstack(std::span<const Matrix* const> parts);

// Solves (aᵀa) x = aᵀ for x, i.e. the Moore-Penrose pseudo-inverse of a
// full-column-rank matrix. Returns a cols×rows matrix.
Matrix pseudo_inverse(const Matrix& a);

double max_abs_diff(const Matrix& a, const Matrix& b);

// Entries i.i.d. uniform on [-1/sqrt(cols), 1/sqrt(cols)]: the default
// linear-layer initialization with fan_in = cols (weight laid out out×in).
Matrix kaiming_uniform_init(std::size_t rows, std::size_t cols, Rng& rng);

// Central-difference gradient of loss_fn at `at`, one entry at a time.
// Throws NumericError naming the perturbed entry on a non-finite evaluation.
Matrix finite_diff_grad(const std::function<double(const Matrix&)>& loss_fn, const Matrix& at, double h);

}  // namespace fewshot
