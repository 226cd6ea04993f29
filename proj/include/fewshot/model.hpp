#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "fewshot/linalg.hpp"
#include "fewshot/rng.hpp"

namespace fewshot {

struct EmbeddingDataset;

// B image embeddings with labels in [0, N), scored against N candidate texts.
struct Batch {
    Matrix images;                    // B x d_img
    std::vector<std::size_t> labels;  // B entries
    Matrix texts;                     // N x d_txt

    void validate() const;
};

// Bias-free image and text projections into a shared joint space.
struct ProjectionModel {
    Matrix image_proj;  // d_img x d_joint
    Matrix text_proj;   // d_txt x d_joint
    double scale = 1.0;
    bool normalize = false;

    std::size_t d_img() const noexcept { return image_proj.rows(); }
    std::size_t d_txt() const noexcept { return text_proj.rows(); }
    std::size_t d_joint() const noexcept { return image_proj.cols(); }
    bool all_finite() const noexcept { return image_proj.all_finite() && text_proj.all_finite(); }

    void validate() const;

    // Fresh projections, each drawn as a (d_joint x d_in) Kaiming-uniform
    // weight and transposed, so the bound is 1/sqrt(d_in).
    static ProjectionModel kaiming(std::size_t d_img, std::size_t d_txt, std::size_t d_joint, Rng& rng);
    // The dataset's pretrained head. Throws ConfigError when absent.
    static ProjectionModel from_pretrained(const EmbeddingDataset& ds);

    friend bool operator==(const ProjectionModel&, const ProjectionModel&) = default;
};

struct Gradients {
    Matrix image_proj;
    Matrix text_proj;
};

struct LossAndGrads {
    double loss = 0.0;
    Gradients grads;
};

// scale · P'·Q'ᵀ with P = images·W_img, Q = texts·W_txt (rows unit-normalized
// when model.normalize).
Matrix logits(const ProjectionModel& model, const Batch& batch);
// Mean image-to-text softmax cross-entropy.
double loss(const ProjectionModel& model, const Batch& batch);
Gradients grads(const ProjectionModel& model, const Batch& batch);
LossAndGrads loss_and_grads(const ProjectionModel& model, const Batch& batch);
// Row-wise argmax of the logits; ties go to the lowest class index.
std::vector<std::size_t> predict(const ProjectionModel& model, const Batch& batch);
double accuracy(const ProjectionModel& model, const Batch& batch);

std::vector<std::size_t> argmax_rows(const Matrix& scores);

// FPRJ v1 checkpoint container (little-endian): "FPRJ", u32 version, u32 d_img,
// u32 d_txt, u32 d_joint, f64 scale, u8 normalize, then W_img and W_txt as f32
// row-major.
inline constexpr std::uint32_t kCheckpointVersion = 1;
void write_checkpoint(const ProjectionModel& model, const std::filesystem::path& path);
ProjectionModel read_checkpoint(const std::filesystem::path& path);

}  // namespace fewshot
