#include "fewshot/linalg.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>

#include "fewshot/errors.hpp"

namespace fewshot {
namespace {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMajor>;
using MutMap = Eigen::Map<RowMajor>;

ConstMap view(const Matrix& m) { return ConstMap(m.data().data(), Eigen::Index(m.rows()), Eigen::Index(m.cols())); }
MutMap view(Matrix& m) { return MutMap(m.data().data(), Eigen::Index(m.rows()), Eigen::Index(m.cols())); }

[[noreturn]] void shape_mismatch(const char* op, const Matrix& a, const Matrix& b) {
    throw UsageError(std::string(op) + ": shape mismatch " + a.shape_string() + " vs " + b.shape_string());
}

}  // namespace

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows * cols) {
        throw UsageError("Matrix: data length " + std::to_string(data_.size()) + " does not match " +
                         std::to_string(rows) + "x" + std::to_string(cols));
    }
}

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows) {
    rows_ = rows.size();
    cols_ = rows_ == 0 ? 0 : rows.begin()->size();
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
        if (r.size() != cols_) throw UsageError("Matrix: ragged initializer");
        data_.insert(data_.end(), r.begin(), r.end());
    }
}

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

std::string Matrix::shape_string() const {
    return "(" + std::to_string(rows_) + "x" + std::to_string(cols_) + ")";
}

bool Matrix::all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) shape_mismatch("matmul", a, b);
    Matrix out(a.rows(), b.cols());
    if (out.empty() || a.cols() == 0) return out;
    view(out).noalias() = view(a) * view(b);
    return out;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows()) shape_mismatch("matmul_tn", a, b);
    Matrix out(a.cols(), b.cols());
    if (out.empty() || a.rows() == 0) return out;
    view(out).noalias() = view(a).transpose() * view(b);
    return out;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.cols()) shape_mismatch("matmul_nt", a, b);
    Matrix out(a.rows(), b.rows());
    if (out.empty() || a.cols() == 0) return out;
    view(out).noalias() = view(a) * view(b).transpose();
    return out;
}

Matrix transpose(const Matrix& a) {
    Matrix out(a.cols(), a.rows());
    for (std::size_t r = 0; r < a.rows(); ++r)
        for (std::size_t c = 0; c < a.cols(); ++c) out(c, r) = a(r, c);
    return out;
}

Matrix vstack(std::span<const Matrix* const> parts) {
    std::size_t rows = 0;
    std::size_t cols = parts.empty() ? 0 : parts.front()->cols();
    for (const Matrix* p : parts) {
        if (p->cols() != cols) shape_mismatch("vstack", *parts.front(), *p);
        rows += p->rows();
    }
    std::vector<double> data;
    data.reserve(rows * cols);
    for (const Matrix* p : parts) data.insert(data.end(), p->data().begin(), p->data().end());
    return Matrix(rows, cols, std::move(data));
}

Matrix pseudo_inverse(const Matrix& a) {
    if (a.rows() < a.cols()) throw UsageError("pseudo_inverse: needs rows >= cols, got " + a.shape_string());
    const RowMajor gram = view(a).transpose() * view(a);
    Eigen::LDLT<Eigen::MatrixXd> ldlt(gram);
    if (ldlt.info() != Eigen::Success) throw NumericError("pseudo_inverse: Gram matrix factorization failed");
    Matrix out(a.cols(), a.rows());
    view(out) = ldlt.solve(Eigen::MatrixXd(view(a).transpose()));
    if (!out.all_finite()) throw NumericError("pseudo_inverse: matrix is rank deficient");
    return out;
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b)) shape_mismatch("max_abs_diff", a, b);
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a.data()[i] - b.data()[i]));
    return worst;
}

Matrix kaiming_uniform_init(std::size_t rows, std::size_t cols, Rng& rng) {
    if (rows == 0 || cols == 0) throw UsageError("kaiming_uniform_init: dimensions must be positive");
    const double bound = 1.0 / std::sqrt(static_cast<double>(cols));
    Matrix out(rows, cols);
    for (double& v : out.data()) v = rng.uniform(-bound, bound);
    return out;
}

Matrix finite_diff_grad(const std::function<double(const Matrix&)>& loss_fn, const Matrix& at, double h) {
    if (!(h > 0.0)) throw UsageError("finite_diff_grad: step must be positive");
    Matrix grad(at.rows(), at.cols());
    Matrix probe = at;
    for (std::size_t r = 0; r < at.rows(); ++r) {
        for (std::size_t c = 0; c < at.cols(); ++c) {
            const double orig = probe(r, c);
            probe(r, c) = orig + h;
            const double up = loss_fn(probe);
            probe(r, c) = orig - h;
            const double down = loss_fn(probe);
            probe(r, c) = orig;
            if (!std::isfinite(up) || !std::isfinite(down)) {
                throw NumericError("finite_diff_grad: non-finite loss when perturbing entry (" + std::to_string(r) +
                                   ", " + std::to_string(c) + ")");
            }
            grad(r, c) = (up - down) / (2.0 * h);
        }
    }
    return grad;
}

}  // namespace fewshot
