#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fewshot/linalg.hpp"
#include "fewshot/rng.hpp"

namespace fewshot {

// One class: its label, the text embedding of its filled prompt, and three
// disjoint sets of image embeddings (one row per sample, d_img columns).
struct ClassRecord {
    std::string name;
    std::vector<double> text_embedding;
    Matrix train;
    Matrix support;
    Matrix query;

    friend bool operator==(const ClassRecord&, const ClassRecord&) = default;
};

// The pretrained (zero-shot) projection head.
struct ProjectionPair {
    Matrix image;  // d_img x d_joint
    Matrix text;   // d_txt x d_joint

    friend bool operator==(const ProjectionPair&, const ProjectionPair&) = default;
};

struct EmbeddingDataset {
    std::uint32_t d_img = 768;
    std::uint32_t d_txt = 512;
    std::uint32_t d_joint = 512;
    std::vector<ClassRecord> classes;
    std::optional<ProjectionPair> pretrained;
    std::string prompt_template = "A photo of {label}.";

    std::size_t num_classes() const noexcept { return classes.size(); }
    std::size_t train_per_class() const { return classes.front().train.rows(); }
    std::size_t support_per_class() const { return classes.front().support.rows(); }
    std::size_t query_per_class() const { return classes.front().query.rows(); }

    // Throws ValidationError naming the offending class and field.
    void validate() const;

    friend bool operator==(const EmbeddingDataset&, const EmbeddingDataset&) = default;
};

inline constexpr std::uint32_t kDatasetVersion = 1;

std::vector<std::uint8_t> encode_dataset(const EmbeddingDataset& ds);
EmbeddingDataset decode_dataset(std::span<const std::uint8_t> bytes);

EmbeddingDataset read_dataset(const std::filesystem::path& path);
// Writes to a sibling temporary file and renames it into place.
void write_dataset(const EmbeddingDataset& ds, const std::filesystem::path& path);

// Substitutes the single `{label}` placeholder. Throws UsageError otherwise.
std::string fill_prompt(std::string_view tmpl, std::string_view label);

struct SyntheticSpec {
    std::size_t num_classes = 10;
    std::uint32_t d_img = 768;
    std::uint32_t d_txt = 512;
    std::uint32_t d_joint = 512;
    std::size_t n_train = 60;
    std::size_t n_support = 10;
    std::size_t n_query = 10;
    double sigma_between = 1.0;
    double sigma_within = 1.0;
    // Relative Gaussian perturbation of the pretrained head, so that zero-shot
    // is a meaningful but imperfect baseline. 0 gives the exact inverse.
    double projection_noise = 0.0;
    // When set, the last `num_classes` image coordinates carry a one-hot class
    // code of height `spurious_strength`: the true class in the train split,
    // a uniformly random class in the support and query splits.
    bool spurious = false;
    double spurious_strength = 10.0;
    std::string prompt_template = "A photo of {label}.";
};

// Gaussian-cluster dataset. Image embeddings are A·(mu_c + eps), text
// embeddings B·mu_c, and the pretrained head is the pseudo-inverse pair of
// (A, B). All values are rounded to float so the dataset survives a FEWEMB
// round trip unchanged. Warnings (degenerate specs) are appended to `warnings`.
EmbeddingDataset gen_synthetic(const SyntheticSpec& spec, Rng& rng, std::vector<std::string>* warnings = nullptr);

// Reads a directory holding `manifest.json` and plain CSV matrices; see README.
EmbeddingDataset import_csv_directory(const std::filesystem::path& dir);

}  // namespace fewshot
