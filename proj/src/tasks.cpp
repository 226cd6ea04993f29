#include "fewshot/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fewshot/errors.hpp"

namespace fewshot {
namespace {

void check_task(const EmbeddingDataset& ds, const Task& task) {
    const std::size_t m = ds.num_classes();
    if (task.class_indices.size() < 2) throw UsageError("task: needs at least 2 classes");
    std::vector<std::size_t> sorted = task.class_indices;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
        throw UsageError("task: duplicate class index");
    if (sorted.back() >= m) {
        throw UsageError("task: class index " + std::to_string(sorted.back()) + " out of range for " +
                         std::to_string(m) + " classes");
    }
}

Matrix task_texts(const EmbeddingDataset& ds, const Task& task) {
    Matrix texts(task.class_indices.size(), ds.d_txt);
    for (std::size_t k = 0; k < task.class_indices.size(); ++k) {
        const auto& t = ds.classes[task.class_indices[k]].text_embedding;
        std::copy(t.begin(), t.end(), texts.row(k).begin());
    }
    return texts;
}

// Rows [begin, end) of each selected class's partition, stacked in task order.
template <typename Pick>
Batch gather(const EmbeddingDataset& ds, const Task& task, Pick pick, std::size_t begin, std::size_t end,
             const Matrix& texts) {
    const std::size_t per_class = end - begin;
    Batch b;
    b.images = Matrix(per_class * task.class_indices.size(), ds.d_img);
    b.labels.reserve(b.images.rows());
    std::size_t out_row = 0;
    for (std::size_t k = 0; k < task.class_indices.size(); ++k) {
        const Matrix& part = pick(ds.classes[task.class_indices[k]]);
        for (std::size_t r = begin; r < end; ++r, ++out_row) {
            std::copy(part.row(r).begin(), part.row(r).end(), b.images.row(out_row).begin());
            b.labels.push_back(k);
        }
    }
    b.texts = texts;
    return b;
}

}  // namespace

void TaskConfig::validate(std::size_t num_classes) const {
    if (n_way < 2) throw UsageError("task config: N must be at least 2, got " + std::to_string(n_way));
    if (n_way > num_classes) {
        throw UsageError("task config: N = " + std::to_string(n_way) + " exceeds the number of classes M = " +
                         std::to_string(num_classes));
    }
    if (n_tasks < 1) throw UsageError("task config: T must be at least 1");
}

std::size_t required_tasks(std::size_t num_classes, std::size_t n_way, double p_fail) {
    if (n_way < 2 || n_way > num_classes) {
        throw UsageError("required_tasks: need 2 <= N <= M, got N = " + std::to_string(n_way) +
                         ", M = " + std::to_string(num_classes));
    }
    if (!(p_fail > 0.0 && p_fail < 1.0)) throw UsageError("required_tasks: p_fail must lie in (0, 1)");
    if (n_way == num_classes) return 1;
    const double miss = 1.0 - static_cast<double>(n_way) / static_cast<double>(num_classes);
    const double t = std::log(p_fail) / std::log(miss);
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(t)));
}

std::vector<Task> sample_tasks(std::size_t num_classes, const TaskConfig& config, Rng& rng, SplitSource source) {
    config.validate(num_classes);
    std::vector<Task> tasks;
    tasks.reserve(config.n_tasks);
    std::vector<std::size_t> pool(num_classes);
    for (std::size_t t = 0; t < config.n_tasks; ++t) {
        std::iota(pool.begin(), pool.end(), std::size_t{0});
        // Partial Fisher-Yates: the first N slots are a uniform N-subset.
        for (std::size_t i = 0; i < config.n_way; ++i) {
            const std::size_t j = i + rng.index(num_classes - i);
            std::swap(pool[i], pool[j]);
        }
        Task task;
        task.class_indices.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(config.n_way));
        std::sort(task.class_indices.begin(), task.class_indices.end());
        task.source = source;
        tasks.push_back(std::move(task));
    }
    return tasks;
}

Batch task_batch(const EmbeddingDataset& ds, const Task& task) {
    check_task(ds, task);
    return gather(
        ds, task, [](const ClassRecord& c) -> const Matrix& { return c.train; }, 0, ds.train_per_class(),
        task_texts(ds, task));
}

Episode materialize_episode(const EmbeddingDataset& ds, const Task& task, double support_fraction) {
    check_task(ds, task);
    const Matrix texts = task_texts(ds, task);
    Episode ep;
    ep.task = task;
    if (task.source == SplitSource::support_query) {
        const std::size_t n_support = ds.support_per_class();
        const std::size_t n_query = ds.query_per_class();
        if (n_support == 0 || n_query == 0) {
            throw UsageError("materialize_episode: support/query partitions are empty (" + std::to_string(n_support) +
                             " support, " + std::to_string(n_query) + " query per class)");
        }
        ep.support = gather(
            ds, task, [](const ClassRecord& c) -> const Matrix& { return c.support; }, 0, n_support, texts);
        ep.query = gather(
            ds, task, [](const ClassRecord& c) -> const Matrix& { return c.query; }, 0, n_query, texts);
        return ep;
    }
    if (!(support_fraction > 0.0 && support_fraction < 1.0))
        throw UsageError("materialize_episode: support fraction must lie in (0, 1)");
    const std::size_t n_train = ds.train_per_class();
    const auto n_support = static_cast<std::size_t>(std::llround(support_fraction * static_cast<double>(n_train)));
    if (n_support == 0 || n_support >= n_train) {
        throw UsageError("materialize_episode: train partition of " + std::to_string(n_train) +
                         " rows per class is too small for a support fraction of " + std::to_string(support_fraction));
    }
    auto pick_train = [](const ClassRecord& c) -> const Matrix& { return c.train; };
    ep.support = gather(ds, task, pick_train, 0, n_support, texts);
    ep.query = gather(ds, task, pick_train, n_support, n_train, texts);
    return ep;
}

}  // namespace fewshot
