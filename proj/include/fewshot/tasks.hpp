#pragma once

#include <cstddef>
#include <vector>

#include "fewshot/dataset.hpp"
#include "fewshot/model.hpp"
#include "fewshot/rng.hpp"

namespace fewshot {

// An N-way, T-task sampling configuration.
struct TaskConfig {
    std::size_t n_way = 2;
    std::size_t n_tasks = 1;

    void validate(std::size_t num_classes) const;
    friend bool operator==(const TaskConfig&, const TaskConfig&) = default;
};

enum class SplitSource {
    train,          // per-class train partition
    support_query,  // per-class support and query partitions (meta-testing)
};

struct Task {
    std::vector<std::size_t> class_indices;
    SplitSource source = SplitSource::train;

    friend bool operator==(const Task&, const Task&) = default;
};

struct Episode {
    Task task;
    Batch support;
    Batch query;
};

// Number of uniformly sampled N-way tasks needed so that any fixed class is
// missed with probability at most p_fail: round(ln p_fail / ln(1 - N/M)),
// at least 1, and exactly 1 when N == M.
std::size_t required_tasks(std::size_t num_classes, std::size_t n_way, double p_fail = 0.001);

// T independent tasks, each a uniformly random N-subset of {0..M-1}. Class
// indices within a task are sorted ascending.
std::vector<Task> sample_tasks(std::size_t num_classes, const TaskConfig& config, Rng& rng,
                               SplitSource source = SplitSource::train);

// All train rows of the task's classes, labels remapped to 0..N-1 in
// class_indices order. Used by classical fine-tuning and MAMF.
Batch task_batch(const EmbeddingDataset& ds, const Task& task);

// Support/query episode. For SplitSource::support_query the dataset's
// support and query partitions are used; for SplitSource::train each class's
// train partition is split in order, the first round(support_fraction * S)
// rows going to the support set.
Episode materialize_episode(const EmbeddingDataset& ds, const Task& task, double support_fraction = 0.5);

}  // namespace fewshot
