#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include "fewshot/dataset.hpp"
#include "fewshot/model.hpp"
#include "fewshot/tasks.hpp"
#include "fewshot/train.hpp"

namespace fewshot {

struct MetaTestPlan {
    TaskConfig tasks;
    double adapt_lr = 1e-7;
    std::size_t adapt_epochs = 5;
    std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};
    std::size_t jobs = 1;

    void validate(std::size_t num_classes) const;
};

struct SeedResult {
    std::uint64_t seed = 0;
    std::vector<double> task_accuracy;
    double mean = 0.0;
    std::uint64_t adaptation_steps = 0;
};

struct EvalReport {
    std::string dataset = "dataset";
    std::string split = "test";
    std::string algorithm;
    TaskConfig config;
    std::vector<SeedResult> seeds;
    double mean = 0.0;
    double std = 0.0;  // population std of the per-seed means
    double zero_shot_mean = std::numeric_limits<double>::quiet_NaN();

    std::uint64_t adaptation_steps() const;
};

// Meta-test tasks for a seed come from this stream of Rng(seed), so every
// algorithm evaluated under the same seed sees the same tasks.
inline constexpr std::uint64_t kMetaTestStream = 3;

// One seed: sample T tasks from the support/query partitions; for each task
// copy the model, optionally fine-tune it on the support set, and score it
// on the query set.
SeedResult meta_test_seed(const ProjectionModel& model, const EmbeddingDataset& ds, const MetaTestPlan& plan,
                          std::uint64_t seed, bool adapt);

// Sets mean and std from the per-seed results.
void aggregate(EvalReport& report);

// The same model evaluated under every seed. When `algorithm` is
// "zeroshot" the given model is ignored and the pretrained head is scored
// without adaptation.
EvalReport meta_test(const ProjectionModel& model, const EmbeddingDataset& ds, const MetaTestPlan& plan,
                     const std::string& algorithm);
EvalReport meta_test_zeroshot(const EmbeddingDataset& ds, const MetaTestPlan& plan);

// Trains a fresh model per seed (train_plan.seed = seed) and meta-tests it
// under that seed.
EvalReport evaluate_algorithm(const EmbeddingDataset& ds, const TrainPlan& train_plan, const MetaTestPlan& plan);

struct SweepOptions {
    std::vector<Algorithm> algorithms = {Algorithm::zeroshot, Algorithm::classical, Algorithm::mamf,
                                         Algorithm::fomaml};
    std::vector<std::size_t> n_values;  // empty: 2..M-1
    std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};
    double adapt_lr = 1e-7;
    std::size_t adapt_epochs = 5;
    // Per-algorithm training settings; tasks and seed are filled in by the sweep.
    TrainPlan classical = TrainPlan::defaults(Algorithm::classical);
    TrainPlan mamf = TrainPlan::defaults(Algorithm::mamf);
    TrainPlan fomaml = TrainPlan::defaults(Algorithm::fomaml);
    std::size_t jobs = 1;
    std::string dataset_name = "dataset";
    std::string split = "test";
};

// For each N, T = required_tasks(M, N); every non-zeroshot algorithm is
// trained with that (N, T) (classical always uses the single M-way task)
// and meta-tested with it. Reports come out in (N, algorithm) order and carry
// the zero-shot mean of their configuration when a pretrained head exists.
std::vector<EvalReport> sweep(const EmbeddingDataset& ds, const SweepOptions& options);

}  // namespace fewshot
