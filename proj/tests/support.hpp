#pragma once

#include <cmath>
#include <filesystem>
#include <string>

#include "fewshot/dataset.hpp"
#include "fewshot/linalg.hpp"
#include "fewshot/model.hpp"
#include "fewshot/rng.hpp"

namespace fewshot::testing {

// Plain triple loop, independent of the library's GEMM.
inline Matrix naive_matmul(const Matrix& a, const Matrix& b) {
    Matrix out(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < b.cols(); ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
            out(i, j) = s;
        }
    return out;
}

inline Matrix random_matrix(std::size_t rows, std::size_t cols, Rng& rng, double scale = 1.0) {
    Matrix m(rows, cols);
    for (double& v : m.data()) v = rng.normal(0.0, scale);
    return m;
}

inline SyntheticSpec small_spec(std::size_t classes = 5) {
    SyntheticSpec s;
    s.num_classes = classes;
    s.d_img = 24;
    s.d_txt = 16;
    s.d_joint = 12;
    s.n_train = 8;
    s.n_support = 4;
    s.n_query = 4;
    return s;
}

inline EmbeddingDataset small_dataset(std::uint64_t seed = 1, std::size_t classes = 5) {
    Rng rng(seed);
    return gen_synthetic(small_spec(classes), rng);
}

// Largest elementwise |a - b| / max(|a|, |b|, floor).
inline double max_rel_error(const Matrix& a, const Matrix& b, double floor = 1e-7) {
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double x = a.data()[i], y = b.data()[i];
        const double denom = std::max({std::abs(x), std::abs(y), floor});
        worst = std::max(worst, std::abs(x - y) / denom);
    }
    return worst;
}

// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("fewshot_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace fewshot::testing
