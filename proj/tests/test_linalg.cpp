#include <doctest.h>

#include <set>
#include <vector>

#include "fewshot/errors.hpp"
#include "fewshot/linalg.hpp"
#include "support.hpp"

using namespace fewshot;
using fewshot::testing::naive_matmul;
using fewshot::testing::random_matrix;

TEST_SUITE("linalg") {
    TEST_CASE("matmul by identity returns the operand") {
        Rng rng(3);
        const Matrix a = random_matrix(2, 5, rng);
        CHECK(matmul(Matrix::identity(2), a) == a);
    }

    TEST_CASE("matmul hand expansion") {
        const Matrix a{{1, 2}, {3, 4}};
        const Matrix b{{1}, {1}};
        CHECK(matmul(a, b) == Matrix{{3}, {7}});
    }

    TEST_CASE("matmul agrees with the triple-loop oracle") {
        Rng rng(11);
        const Matrix a = random_matrix(8, 16, rng);
        const Matrix b = random_matrix(16, 4, rng);
        CHECK(max_abs_diff(matmul(a, b), naive_matmul(a, b)) < 1e-12);
        CHECK(max_abs_diff(matmul_tn(transpose(a), b), naive_matmul(a, b)) < 1e-12);
        CHECK(max_abs_diff(matmul_nt(a, transpose(b)), naive_matmul(a, b)) < 1e-12);
    }

    TEST_CASE("matmul dimension mismatch names both shapes") {
        const Matrix a(2, 3), b(4, 2);
        try {
            (void)matmul(a, b);
            FAIL("expected UsageError");
        } catch (const UsageError& e) {
            const std::string msg = e.what();
            CHECK(msg.find("(2x3)") != std::string::npos);
            CHECK(msg.find("(4x2)") != std::string::npos);
        }
    }

    TEST_CASE("matmul is associative on random conformable triples") {
        Rng rng(5);
        for (int trial = 0; trial < 25; ++trial) {
            const std::size_t p = 1 + rng.index(9), q = 1 + rng.index(9), r = 1 + rng.index(9), s = 1 + rng.index(9);
            const Matrix a = random_matrix(p, q, rng), b = random_matrix(q, r, rng), c = random_matrix(r, s, rng);
            const Matrix left = matmul(matmul(a, b), c);
            const Matrix right = matmul(a, matmul(b, c));
            double scale = 0.0;
            for (double v : left.data()) scale = std::max(scale, std::abs(v));
            CHECK(max_abs_diff(left, right) <= 1e-9 * std::max(scale, 1.0));
        }
    }

    TEST_CASE("kaiming init respects the 1/sqrt(fan_in) bound") {
        Rng rng(7);
        const Matrix w = kaiming_uniform_init(4, 100, rng);
        for (double v : w.data()) {
            CHECK(v >= -0.1);
            CHECK(v <= 0.1);
        }
    }

    TEST_CASE("kaiming init sample mean is within three standard errors of zero") {
        Rng rng(99);
        const Matrix w = kaiming_uniform_init(512, 768, rng);
        double sum = 0.0;
        for (double v : w.data()) sum += v;
        const double n = static_cast<double>(w.size());
        const double sigma = (1.0 / std::sqrt(768.0)) / std::sqrt(3.0);
        CHECK(std::abs(sum / n) < 3.0 * sigma / std::sqrt(n));
    }

    TEST_CASE("kaiming init is deterministic per seed") {
        Rng a(42), b(42), c(43);
        const Matrix wa = kaiming_uniform_init(6, 9, a);
        CHECK(wa == kaiming_uniform_init(6, 9, b));
        CHECK_FALSE(wa == kaiming_uniform_init(6, 9, c));
    }

    TEST_CASE("finite differences of x^2 and of a constant") {
        const auto square = [](const Matrix& m) {
            double s = 0.0;
            for (double v : m.data()) s += v * v;
            return s;
        };
        const Matrix g = finite_diff_grad(square, Matrix{{3.0}}, 1e-5);
        CHECK(g(0, 0) == doctest::Approx(6.0).epsilon(1e-6));
        const Matrix z = finite_diff_grad([](const Matrix&) { return 2.5; }, Matrix(3, 2, 1.0), 1e-5);
        CHECK(z == Matrix(3, 2));
    }

    TEST_CASE("finite differences report the entry that produced a non-finite loss") {
        const auto bad = [](const Matrix& m) { return m(1, 0) > 0.5 ? std::nan("") : 0.0; };
        Matrix at(2, 2);
        at(1, 0) = 0.5;
        CHECK_THROWS_WITH_AS(finite_diff_grad(bad, at, 1e-3), doctest::Contains("entry (1, 0)"), NumericError);
        CHECK_THROWS_AS(finite_diff_grad(bad, at, 0.0), UsageError);
    }

    TEST_CASE("pseudo-inverse of a tall full-rank matrix is a left inverse") {
        Rng rng(8);
        const Matrix a = random_matrix(10, 4, rng);
        const Matrix pinv = pseudo_inverse(a);
        CHECK(max_abs_diff(matmul(pinv, a), Matrix::identity(4)) < 1e-10);
    }

    TEST_CASE("rng streams are reproducible and child streams are distinct") {
        Rng a(5), b(5);
        for (int i = 0; i < 64; ++i) CHECK(a.next_u64() == b.next_u64());

        std::set<std::vector<std::uint64_t>> prefixes;
        for (std::uint64_t i = 0; i < 1000; ++i) {
            Rng child = Rng::child(1234, i * 7919);
            std::vector<std::uint64_t> prefix(64);
            for (auto& v : prefix) v = child.next_u64();
            prefixes.insert(prefix);
        }
        CHECK(prefixes.size() >= 999);

        Rng parent(77);
        const Rng before = parent.child(3);
        (void)parent.next_u64();
        Rng after = parent.child(3);
        Rng before_copy = before;
        CHECK(before_copy.next_u64() == after.next_u64());
    }

    TEST_CASE("rng uniform index covers its range") {
        Rng rng(1);
        std::vector<int> counts(7, 0);
        for (int i = 0; i < 7000; ++i) ++counts[rng.index(7)];
        for (int c : counts) CHECK(c > 800);
    }
}
