#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fewshot/dataset.hpp"
#include "fewshot/model.hpp"
#include "fewshot/rng.hpp"
#include "fewshot/tasks.hpp"

namespace fewshot {

struct AdamHyper {
    double lr = 1e-6;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Moments for a fixed list of parameter tensors; allocated on the first step.
struct AdamState {
    AdamHyper hyper;
    std::uint64_t t = 0;
    std::vector<Matrix> m;
    std::vector<Matrix> v;
};

// Bias-corrected Adam without weight decay:
//   m ← β1 m + (1-β1) g,  v ← β2 v + (1-β2) g²
//   θ ← θ - lr · m̂ / (sqrt(v̂) + eps),  m̂ = m/(1-β1^t), v̂ = v/(1-β2^t)
void adam_step(std::span<Matrix* const> params, std::span<const Matrix* const> grads, AdamState& state);
void adam_step(ProjectionModel& model, const Gradients& g, AdamState& state);

enum class Algorithm { zeroshot, classical, mamf, fomaml };

std::string_view algorithm_name(Algorithm a);
Algorithm parse_algorithm(std::string_view name);

struct TrainPlan {
    Algorithm algorithm = Algorithm::classical;
    TaskConfig tasks;  // ignored by classical and zeroshot
    std::size_t epochs_per_task = 50;
    double lr = 1e-6;
    std::size_t inner_steps = 1;  // fomaml
    double inner_lr = 1e-6;       // fomaml
    double support_fraction = 0.5;  // fomaml train-episode split
    std::size_t minibatch = 0;      // 0 = full task batch
    bool reset_adam_per_task = false;  // mamf ablation
    bool resample_each_pass = true;    // fomaml: fresh task sequence per pass
    double scale = 1.0;
    bool normalize = false;
    std::uint64_t seed = 0;

    // Defaults per algorithm: classical 50 epochs; mamf 10 epochs per task;
    // fomaml 10 passes, one inner step at inner_lr 1e-6.
    static TrainPlan defaults(Algorithm a);
    void validate(std::size_t num_classes) const;
};

struct TrainLogEntry {
    std::uint64_t step = 0;  // 1-based Adam step
    std::size_t task_id = 0;
    double loss = 0.0;  // loss on the batch that produced the step, before the update
};

struct TrainResult {
    ProjectionModel model;
    std::vector<TrainLogEntry> log;
    std::uint64_t adam_steps = 0;
};

// Adam steps a plan takes on `ds`, computed from the plan alone.
std::uint64_t expected_adam_steps(const EmbeddingDataset& ds, const TrainPlan& plan);

// Fixed stream indices under the plan's seed.
inline constexpr std::uint64_t kInitStream = 0;
inline constexpr std::uint64_t kTaskStream = 1;
inline constexpr std::uint64_t kBatchStream = 2;

TrainResult train_classical(const EmbeddingDataset& ds, const TrainPlan& plan, const Rng& rng);
TrainResult train_mamf(const EmbeddingDataset& ds, const TrainPlan& plan, const Rng& rng);
TrainResult train_fomaml(const EmbeddingDataset& ds, const TrainPlan& plan, const Rng& rng);
// Dispatches on plan.algorithm with Rng(plan.seed). zeroshot returns the
// pretrained head untouched.
TrainResult train(const EmbeddingDataset& ds, const TrainPlan& plan);

// First-order meta-gradient of one episode: take `inner_steps` plain gradient
// steps on the support loss from a copy of `model`, then return the query
// loss and its gradient at the adapted parameters.
LossAndGrads fomaml_outer_gradient(const ProjectionModel& model, const Episode& episode, std::size_t inner_steps,
                                   double inner_lr);

// Full-batch Adam fine-tuning on one batch, `epochs` steps, fresh state.
// Returns the number of steps taken.
std::uint64_t fine_tune(ProjectionModel& model, const Batch& batch, std::size_t epochs, double lr);

}  // namespace fewshot
