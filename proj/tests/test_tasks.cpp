#include <doctest.h>

#include <map>
#include <set>

#include "fewshot/errors.hpp"
#include "fewshot/tasks.hpp"
#include "support.hpp"

using namespace fewshot;
using fewshot::testing::small_dataset;

namespace {

std::size_t choose(std::size_t n, std::size_t k) {
    std::size_t r = 1;
    for (std::size_t i = 1; i <= k; ++i) r = r * (n - k + i) / i;
    return r;
}

}  // namespace

TEST_SUITE("tasks") {
    TEST_CASE("required_tasks matches the published task counts") {
        CHECK(required_tasks(10, 5) == 10);
        CHECK(required_tasks(9, 4) == 12);
        CHECK(required_tasks(10, 2) == 31);
        CHECK(required_tasks(9, 2) == 27);
        CHECK(required_tasks(10, 8) == 4);
        CHECK(required_tasks(10, 4) == 14);
        for (std::size_t k = 2; k < 12; ++k) CHECK(required_tasks(k, k) == 1);
    }

    TEST_CASE("required_tasks rejects N > M and bad probabilities") {
        CHECK_THROWS_AS(required_tasks(5, 6), UsageError);
        CHECK_THROWS_AS(required_tasks(5, 1), UsageError);
        CHECK_THROWS_AS(required_tasks(5, 2, 0.0), UsageError);
        CHECK_THROWS_AS(required_tasks(5, 2, 1.0), UsageError);
    }

    TEST_CASE("sampled tasks hold N distinct in-range indices") {
        Rng rng(1);
        const auto tasks = sample_tasks(3, {2, 5}, rng);
        CHECK(tasks.size() == 5);
        for (const Task& t : tasks) {
            REQUIRE(t.class_indices.size() == 2);
            CHECK(t.class_indices[0] != t.class_indices[1]);
            for (std::size_t c : t.class_indices) CHECK(c < 3);
        }
    }

    TEST_CASE("sample_tasks is deterministic per seed") {
        Rng a(9), b(9);
        CHECK(sample_tasks(10, {4, 12}, a) == sample_tasks(10, {4, 12}, b));
    }

    TEST_CASE("every pair of 5 classes appears with frequency 0.1") {
        Rng rng(31);
        std::map<std::vector<std::size_t>, int> counts;
        const int draws = 20000;
        for (const Task& t : sample_tasks(5, {2, draws}, rng)) ++counts[t.class_indices];
        CHECK(counts.size() == 10);
        for (const auto& [pair, n] : counts) CHECK(std::abs(n / double(draws) - 0.1) <= 0.01);
    }

    TEST_CASE("subset frequencies pass a chi-square uniformity test") {
        // Upper 1% points of chi-square for df = C(M,N) - 1.
        const std::map<std::size_t, double> critical = {{9, 21.666}, {14, 29.141}, {19, 36.191}, {5, 15.086}};
        struct Grid {
            std::size_t m, n;
        };
        for (const Grid g : {Grid{5, 2}, Grid{6, 3}, Grid{6, 2}, Grid{4, 2}}) {
            Rng rng(1000 + g.m * 10 + g.n);
            const std::size_t draws = 30000;
            std::map<std::vector<std::size_t>, double> counts;
            for (const Task& t : sample_tasks(g.m, {g.n, draws}, rng)) counts[t.class_indices] += 1;
            const std::size_t cells = choose(g.m, g.n);
            REQUIRE(counts.size() == cells);
            const double expected = double(draws) / double(cells);
            double chi2 = 0.0;
            for (const auto& [k, n] : counts) chi2 += (n - expected) * (n - expected) / expected;
            CHECK(chi2 < critical.at(cells - 1));
        }
    }

    TEST_CASE("each class is missed with probability (1 - N/M)^T") {
        const std::size_t m = 10, n = 4, t = required_tasks(m, n);
        Rng rng(77);
        const int trials = 20000;
        int missed_zero = 0;
        for (int i = 0; i < trials; ++i) {
            bool seen = false;
            for (const Task& task : sample_tasks(m, {n, t}, rng))
                for (std::size_t c : task.class_indices) seen |= c == 0;
            missed_zero += !seen;
        }
        const double p = std::pow(1.0 - double(n) / double(m), double(t));
        const double se = std::sqrt(p * (1 - p) / trials);
        CHECK(std::abs(missed_zero / double(trials) - p) < 4 * se + 1e-4);
        CHECK(p <= 0.001);
    }

    TEST_CASE("meta-test episode takes support and query partitions") {
        const EmbeddingDataset ds = small_dataset(2, 5);
        Task task{{0, 2, 4}, SplitSource::support_query};
        const Episode ep = materialize_episode(ds, task);
        CHECK(ep.support.images.rows() == 3 * ds.support_per_class());
        CHECK(ep.query.images.rows() == 3 * ds.query_per_class());
        CHECK(ep.support.texts.rows() == 3);
        CHECK(ep.support.images.row(0)[0] == ds.classes[0].support(0, 0));
        CHECK(ep.query.images.row(ds.query_per_class())[3] == ds.classes[2].query(0, 3));
    }

    TEST_CASE("M=10 dataset with N=5 yields 50 support and 50 query rows") {
        SyntheticSpec s = fewshot::testing::small_spec(10);
        s.n_support = 10;
        s.n_query = 10;
        Rng rng(1);
        const EmbeddingDataset ds = gen_synthetic(s, rng);
        Rng trng(2);
        const Task task = sample_tasks(10, {5, 1}, trng, SplitSource::support_query).front();
        const Episode ep = materialize_episode(ds, task);
        CHECK(ep.support.images.rows() == 50);
        CHECK(ep.query.images.rows() == 50);
    }

    TEST_CASE("support and query never share a row") {
        const EmbeddingDataset ds = small_dataset(3, 4);
        for (SplitSource src : {SplitSource::train, SplitSource::support_query}) {
            const Episode ep = materialize_episode(ds, Task{{0, 1, 3}, src});
            std::set<std::vector<double>> support_rows;
            for (std::size_t r = 0; r < ep.support.images.rows(); ++r)
                support_rows.emplace(ep.support.images.row(r).begin(), ep.support.images.row(r).end());
            for (std::size_t r = 0; r < ep.query.images.rows(); ++r) {
                const std::vector<double> row(ep.query.images.row(r).begin(), ep.query.images.row(r).end());
                CHECK(support_rows.count(row) == 0);
            }
        }
    }

    TEST_CASE("labels are remapped in class_indices order") {
        SyntheticSpec s = fewshot::testing::small_spec(10);
        Rng rng(4);
        const EmbeddingDataset ds = gen_synthetic(s, rng);
        const Episode ep = materialize_episode(ds, Task{{7, 2, 9}, SplitSource::support_query});
        std::set<std::size_t> labels(ep.query.labels.begin(), ep.query.labels.end());
        CHECK(labels == std::set<std::size_t>{0, 1, 2});
        CHECK(ep.query.labels.front() == 0);
        CHECK(ep.query.images.row(0)[0] == ds.classes[7].query(0, 0));
        CHECK(ep.query.texts.row(1)[0] == ds.classes[2].text_embedding[0]);
        const Batch b = task_batch(ds, Task{{7, 2, 9}, SplitSource::train});
        CHECK(b.labels.back() == 2);
        CHECK(b.images.rows() == 3 * ds.train_per_class());
    }

    TEST_CASE("train episodes split each class 50/50 by default") {
        const EmbeddingDataset ds = small_dataset(5, 3);
        const Episode ep = materialize_episode(ds, Task{{0, 1}, SplitSource::train});
        CHECK(ep.support.images.rows() == 2 * 4);
        CHECK(ep.query.images.rows() == 2 * 4);
        CHECK(ep.query.images.row(0)[0] == ds.classes[0].train(4, 0));
    }

    TEST_CASE("too-small partitions and bad tasks are rejected") {
        SyntheticSpec s = fewshot::testing::small_spec(3);
        s.n_train = 1;
        Rng rng(6);
        const EmbeddingDataset ds = gen_synthetic(s, rng);
        CHECK_THROWS_AS(materialize_episode(ds, Task{{0, 1}, SplitSource::train}), UsageError);
        CHECK_THROWS_AS(materialize_episode(ds, Task{{0, 0}, SplitSource::support_query}), UsageError);
        CHECK_THROWS_AS(materialize_episode(ds, Task{{0, 5}, SplitSource::support_query}), UsageError);
        Rng r(1);
        CHECK_THROWS_AS(sample_tasks(3, {4, 1}, r), UsageError);
        CHECK_THROWS_AS(sample_tasks(3, {2, 0}, r), UsageError);
    }
}
