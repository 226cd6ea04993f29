#include <doctest.h>

#include <fstream>
#include <numeric>

#include "fewshot/dataset.hpp"
#include "fewshot/errors.hpp"
#include "support.hpp"

using namespace fewshot;
using fewshot::testing::small_dataset;
using fewshot::testing::small_spec;
using fewshot::testing::temp_dir;

namespace {

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Exact two-sided binomial p-value (sum of outcomes no more likely than k).
double binomial_two_sided_p(std::size_t k, std::size_t n, double p) {
    std::vector<double> pmf(n + 1);
    for (std::size_t i = 0; i <= n; ++i) {
        pmf[i] = std::exp(std::lgamma(n + 1.0) - std::lgamma(i + 1.0) - std::lgamma(n - i + 1.0) + i * std::log(p) +
                          (n - i) * std::log1p(-p));
    }
    double total = 0.0;
    for (double q : pmf)
        if (q <= pmf[k] * (1 + 1e-9)) total += q;
    return std::min(1.0, total);
}

// Class predicted by the spurious one-hot block: argmax over the last M coordinates.
std::size_t stump(std::span<const double> row, std::size_t m) {
    const auto block = row.subspan(row.size() - m);
    return static_cast<std::size_t>(std::max_element(block.begin(), block.end()) - block.begin());
}

}  // namespace

TEST_SUITE("dataset") {
    TEST_CASE("write then read restores the dataset") {
        const auto dir = temp_dir("roundtrip");
        const EmbeddingDataset ds = small_dataset(3);
        write_dataset(ds, dir / "a.femb");
        CHECK(read_dataset(dir / "a.femb") == ds);
    }

    TEST_CASE("rewriting a dataset produces byte-identical files") {
        const auto dir = temp_dir("rewrite");
        const EmbeddingDataset ds = small_dataset(4);
        write_dataset(ds, dir / "a.femb");
        write_dataset(read_dataset(dir / "a.femb"), dir / "b.femb");
        CHECK(read_bytes(dir / "a.femb") == read_bytes(dir / "b.femb"));
    }

    TEST_CASE("round trip holds over random shapes, counts and projection presence") {
        Rng rng(2718);
        for (int trial = 0; trial < 20; ++trial) {
            SyntheticSpec s;
            s.num_classes = 2 + rng.index(6);
            s.d_joint = 1 + static_cast<std::uint32_t>(rng.index(6));
            s.d_img = s.d_joint + s.num_classes + static_cast<std::uint32_t>(rng.index(5));
            s.d_txt = s.d_joint + static_cast<std::uint32_t>(rng.index(4));
            s.n_train = 1 + rng.index(5);
            s.n_support = 1 + rng.index(3);
            s.n_query = 1 + rng.index(3);
            s.spurious = rng.index(2) == 1;
            Rng gen = rng.child(trial);
            EmbeddingDataset ds = gen_synthetic(s, gen);
            if (rng.index(2) == 0) ds.pretrained.reset();
            const EmbeddingDataset back = decode_dataset(encode_dataset(ds));
            CHECK(back == ds);
            // Partitions stay disjoint: every split keeps its own row count.
            for (std::size_t c = 0; c < ds.num_classes(); ++c) {
                CHECK(back.classes[c].train.rows() == s.n_train);
                CHECK(back.classes[c].support.rows() == s.n_support);
                CHECK(back.classes[c].query.rows() == s.n_query);
            }
        }
    }

    TEST_CASE("absent projection is encoded as a zero flag byte") {
        EmbeddingDataset ds = small_dataset(5, 2);
        ds.pretrained.reset();
        const auto bytes = encode_dataset(ds);
        // magic(4) + version, d_img, d_txt, d_joint, M (5 x u32) -> flag at offset 24.
        CHECK(bytes[24] == 0);
        CHECK(decode_dataset(bytes) == ds);
    }

    TEST_CASE("header layout is little-endian") {
        const EmbeddingDataset ds = small_dataset(5, 2);
        const auto bytes = encode_dataset(ds);
        CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "FEMB");
        CHECK(bytes[4] == 1);
        CHECK(bytes[5] == 0);
        CHECK(bytes[8] == ds.d_img);
        CHECK(bytes[20] == 2);
        CHECK(bytes[24] == 1);
    }

    TEST_CASE("unknown version is rejected") {
        auto bytes = encode_dataset(small_dataset(6, 2));
        bytes[4] = 99;
        CHECK_THROWS_AS(decode_dataset(bytes), VersionError);
    }

    TEST_CASE("bad magic is a format error") {
        auto bytes = encode_dataset(small_dataset(6, 2));
        bytes[0] = 'X';
        CHECK_THROWS_AS(decode_dataset(bytes), FormatError);
    }

    TEST_CASE("file truncated mid-class is a corruption error with an offset") {
        const auto bytes = encode_dataset(small_dataset(7, 3));
        const std::span<const std::uint8_t> cut(bytes.data(), bytes.size() - 37);
        try {
            (void)decode_dataset(cut);
            FAIL("expected CorruptionError");
        } catch (const CorruptionError& e) {
            CHECK(e.offset() > 0);
            CHECK(e.offset() <= cut.size());
        }
    }

    TEST_CASE("trailing garbage is rejected") {
        auto bytes = encode_dataset(small_dataset(7, 3));
        bytes.push_back(0);
        CHECK_THROWS_AS(decode_dataset(bytes), FormatError);
    }

    TEST_CASE("validation names the class and field") {
        EmbeddingDataset ds = small_dataset(8, 3);
        ds.classes[1].text_embedding.pop_back();
        CHECK_THROWS_WITH_AS(ds.validate(), doctest::Contains("class_01' text_embedding"), ValidationError);
        ds = small_dataset(8, 3);
        ds.classes[2].name = ds.classes[0].name;
        CHECK_THROWS_AS(ds.validate(), ValidationError);
        ds = small_dataset(8, 3);
        ds.classes.resize(1);
        CHECK_THROWS_AS(ds.validate(), ValidationError);
    }

    TEST_CASE("minimal two-class dataset parses") {
        const auto dir = temp_dir("minimal");
        const EmbeddingDataset ds = small_dataset(9, 2);
        write_dataset(ds, dir / "m.femb");
        CHECK(read_dataset(dir / "m.femb").num_classes() == 2);
    }

    TEST_CASE("missing file is an I/O error carrying the path") {
        CHECK_THROWS_WITH_AS(read_dataset("/nonexistent/x.femb"), doctest::Contains("/nonexistent/x.femb"), IoError);
    }

    TEST_CASE("fill_prompt substitutes exactly one placeholder") {
        CHECK(fill_prompt("A photo of {label}.", "baltimore oriole") == "A photo of baltimore oriole.");
        CHECK(fill_prompt("{label}", "x") == "x");
        CHECK_THROWS_AS(fill_prompt("no placeholder", "x"), UsageError);
        CHECK_THROWS_AS(fill_prompt("{label} and {label}", "x"), UsageError);
    }

    TEST_CASE("synthetic defaults follow the 60/10/10 per-class split") {
        const SyntheticSpec s;
        CHECK(s.num_classes == 10);
        CHECK(s.n_train == 60);
        CHECK(s.n_support == 10);
        CHECK(s.n_query == 10);
        CHECK(s.d_img == 768);
        CHECK(s.d_txt == 512);
        CHECK(s.d_joint == 512);
    }

    TEST_CASE("synthetic generation is deterministic and rejects bad specs") {
        Rng a(10), b(10);
        CHECK(gen_synthetic(small_spec(), a) == gen_synthetic(small_spec(), b));
        SyntheticSpec s = small_spec();
        s.sigma_within = 0.0;
        Rng r(1);
        CHECK_THROWS_AS(gen_synthetic(s, r), UsageError);
        s = small_spec();
        s.num_classes = 1;
        CHECK_THROWS_AS(gen_synthetic(s, r), UsageError);
    }

    TEST_CASE("sigma_between = 0 without spurious block warns but succeeds") {
        SyntheticSpec s = small_spec();
        s.sigma_between = 0.0;
        Rng r(2);
        std::vector<std::string> warnings;
        const EmbeddingDataset ds = gen_synthetic(s, r, &warnings);
        CHECK(warnings.size() == 1);
        CHECK(ds.num_classes() == 5);
    }

    TEST_CASE("spurious block is perfect on train and chance on query") {
        SyntheticSpec s = small_spec(10);
        s.d_img = 40;
        s.n_train = 60;
        s.n_support = 10;
        s.n_query = 10;
        s.spurious = true;
        Rng r(2024);
        const EmbeddingDataset ds = gen_synthetic(s, r);
        std::size_t train_hits = 0, train_total = 0, query_hits = 0, query_total = 0;
        for (std::size_t c = 0; c < ds.num_classes(); ++c) {
            for (std::size_t i = 0; i < ds.classes[c].train.rows(); ++i, ++train_total)
                train_hits += stump(ds.classes[c].train.row(i), 10) == c;
            for (std::size_t i = 0; i < ds.classes[c].query.rows(); ++i, ++query_total)
                query_hits += stump(ds.classes[c].query.row(i), 10) == c;
        }
        CHECK(train_hits == train_total);
        CHECK(binomial_two_sided_p(query_hits, query_total, 0.1) > 0.01);
        // The pretrained head ignores the spurious block.
        for (std::size_t r_ = 30; r_ < 40; ++r_)
            for (double v : ds.pretrained->image.row(r_)) CHECK(v == 0.0);
    }

    TEST_CASE("CSV directory import builds a validated dataset") {
        const auto dir = temp_dir("import");
        auto write = [&](const std::string& name, const std::string& body) {
            std::ofstream(dir / name) << body;
        };
        write("t0.csv", "1,0\n");
        write("t1.csv", "0,1\n");
        write("a_train.csv", "# comment\n1,2,3\n4,5,6\n");
        write("a_sup.csv", "1,1,1\n");
        write("a_q.csv", "2,2,2\n");
        write("b_train.csv", "0.5,0.25,0\n-1,-2,-3\n");
        write("b_sup.csv", "3,3,3\n");
        write("b_q.csv", "4,4,4\n");
        write("wi.csv", "1,0\n0,1\n0,0\n");
        write("wt.csv", "1,0\n0,1\n");
        write("manifest.json", R"({
            "d_img": 3, "d_txt": 2, "d_joint": 2,
            "prompt_template": "An image of {label}.",
            "projection": {"image": "wi.csv", "text": "wt.csv"},
            "classes": [
              {"name": "a", "text": "t0.csv", "train": "a_train.csv", "support": "a_sup.csv", "query": "a_q.csv"},
              {"name": "b", "text": "t1.csv", "train": "b_train.csv", "support": "b_sup.csv", "query": "b_q.csv"}
            ]})");
        const EmbeddingDataset ds = import_csv_directory(dir);
        CHECK(ds.num_classes() == 2);
        CHECK(ds.classes[1].train(1, 2) == -3.0);
        CHECK(ds.classes[0].text_embedding == std::vector<double>{1.0, 0.0});
        CHECK(ds.pretrained->image(1, 1) == 1.0);
        CHECK(decode_dataset(encode_dataset(ds)) == ds);

        write("b_q.csv", "4,4\n");
        CHECK_THROWS_AS(import_csv_directory(dir), ValidationError);
        write("b_q.csv", "4,x,4\n");
        CHECK_THROWS_AS(import_csv_directory(dir), FormatError);
    }
}
