#include "fewshot/meta_eval.hpp"

#include <cmath>
#include <map>
#include <optional>

#include "fewshot/errors.hpp"
#include "parallel.hpp"

namespace fewshot {

void MetaTestPlan::validate(std::size_t num_classes) const {
    tasks.validate(num_classes);
    if (!(adapt_lr > 0.0)) throw UsageError("meta-test plan: adapt_lr must be positive");
    if (seeds.empty()) throw UsageError("meta-test plan: at least one seed is required");
}

std::uint64_t EvalReport::adaptation_steps() const {
    std::uint64_t total = 0;
    for (const SeedResult& s : seeds) total += s.adaptation_steps;
    return total;
}

SeedResult meta_test_seed(const ProjectionModel& model, const EmbeddingDataset& ds, const MetaTestPlan& plan,
                          std::uint64_t seed, bool adapt) {
    plan.validate(ds.num_classes());
    Rng rng = Rng::child(seed, kMetaTestStream);
    const std::vector<Task> tasks = sample_tasks(ds.num_classes(), plan.tasks, rng, SplitSource::support_query);
    SeedResult result;
    result.seed = seed;
    for (const Task& task : tasks) {
        const Episode ep = materialize_episode(ds, task);
        if (adapt) {
            ProjectionModel local = model;
            result.adaptation_steps += fine_tune(local, ep.support, plan.adapt_epochs, plan.adapt_lr);
            result.task_accuracy.push_back(accuracy(local, ep.query));
        } else {
            result.task_accuracy.push_back(accuracy(model, ep.query));
        }
    }
    double sum = 0.0;
    for (double a : result.task_accuracy) sum += a;
    result.mean = sum / static_cast<double>(result.task_accuracy.size());
    return result;
}

void aggregate(EvalReport& report) {
    if (report.seeds.empty()) throw UsageError("aggregate: report has no seeds");
    double sum = 0.0;
    for (const SeedResult& s : report.seeds) sum += s.mean;
    const double n = static_cast<double>(report.seeds.size());
    report.mean = sum / n;
    double sq = 0.0;
    for (const SeedResult& s : report.seeds) sq += (s.mean - report.mean) * (s.mean - report.mean);
    report.std = std::sqrt(sq / n);
}

EvalReport meta_test_zeroshot(const EmbeddingDataset& ds, const MetaTestPlan& plan) {
    const ProjectionModel head = ProjectionModel::from_pretrained(ds);
    plan.validate(ds.num_classes());
    EvalReport report;
    report.algorithm = std::string(algorithm_name(Algorithm::zeroshot));
    report.config = plan.tasks;
    report.seeds.resize(plan.seeds.size());
    detail::parallel_for(plan.seeds.size(), plan.jobs,
                         [&](std::size_t i) { report.seeds[i] = meta_test_seed(head, ds, plan, plan.seeds[i], false); });
    aggregate(report);
    report.zero_shot_mean = report.mean;
    return report;
}

EvalReport meta_test(const ProjectionModel& model, const EmbeddingDataset& ds, const MetaTestPlan& plan,
                     const std::string& algorithm) {
    if (algorithm == algorithm_name(Algorithm::zeroshot)) return meta_test_zeroshot(ds, plan);
    model.validate();
    if (model.d_img() != ds.d_img || model.d_txt() != ds.d_txt) {
        throw UsageError("model dimensions (" + std::to_string(model.d_img()) + ", " + std::to_string(model.d_txt()) +
                         ") do not match dataset (" + std::to_string(ds.d_img) + ", " + std::to_string(ds.d_txt) + ")");
    }
    plan.validate(ds.num_classes());
    EvalReport report;
    report.algorithm = algorithm;
    report.config = plan.tasks;
    report.seeds.resize(plan.seeds.size());
    detail::parallel_for(plan.seeds.size(), plan.jobs,
                         [&](std::size_t i) { report.seeds[i] = meta_test_seed(model, ds, plan, plan.seeds[i], true); });
    aggregate(report);
    return report;
}

EvalReport evaluate_algorithm(const EmbeddingDataset& ds, const TrainPlan& train_plan, const MetaTestPlan& plan) {
    if (train_plan.algorithm == Algorithm::zeroshot) return meta_test_zeroshot(ds, plan);
    plan.validate(ds.num_classes());
    EvalReport report;
    report.algorithm = std::string(algorithm_name(train_plan.algorithm));
    report.config = plan.tasks;
    report.seeds.resize(plan.seeds.size());
    detail::parallel_for(plan.seeds.size(), plan.jobs, [&](std::size_t i) {
        TrainPlan p = train_plan;
        p.seed = plan.seeds[i];
        const TrainResult trained = train(ds, p);
        report.seeds[i] = meta_test_seed(trained.model, ds, plan, plan.seeds[i], true);
    });
    aggregate(report);
    return report;
}

std::vector<EvalReport> sweep(const EmbeddingDataset& ds, const SweepOptions& options) {
    const std::size_t m = ds.num_classes();
    std::vector<std::size_t> n_values = options.n_values;
    if (n_values.empty())
        for (std::size_t n = 2; n < m; ++n) n_values.push_back(n);
    if (n_values.empty()) throw UsageError("sweep: no N values (dataset has " + std::to_string(m) + " classes)");
    for (std::size_t n : n_values) {
        if (n < 2 || n > m) throw UsageError("sweep: N = " + std::to_string(n) + " outside [2, " + std::to_string(m) + "]");
    }
    if (options.seeds.empty()) throw UsageError("sweep: at least one seed is required");
    if (options.algorithms.empty()) throw UsageError("sweep: no algorithms");
    const bool has_head = ds.pretrained.has_value();
    bool wants_zeroshot = false;
    for (Algorithm a : options.algorithms) wants_zeroshot |= a == Algorithm::zeroshot;
    if (wants_zeroshot && !has_head) throw ConfigError("sweep: zeroshot requested but the dataset has no pretrained projection");

    auto plan_for = [&](Algorithm a, std::size_t n, std::uint64_t seed) {
        TrainPlan p = a == Algorithm::classical ? options.classical : a == Algorithm::mamf ? options.mamf : options.fomaml;
        p.algorithm = a;
        p.tasks = {n, required_tasks(m, n)};
        p.seed = seed;
        return p;
    };
    auto test_plan = [&](std::size_t n) {
        MetaTestPlan p;
        p.tasks = {n, required_tasks(m, n)};
        p.adapt_lr = options.adapt_lr;
        p.adapt_epochs = options.adapt_epochs;
        p.seeds = options.seeds;
        return p;
    };

    // Classical training does not depend on N; train it once per seed.
    bool wants_classical = false;
    for (Algorithm a : options.algorithms) wants_classical |= a == Algorithm::classical;
    std::vector<ProjectionModel> classical_models(wants_classical ? options.seeds.size() : 0);
    detail::parallel_for(classical_models.size(), options.jobs, [&](std::size_t i) {
        classical_models[i] = train(ds, plan_for(Algorithm::classical, m, options.seeds[i])).model;
    });

    // Every (N, algorithm, seed) is an independent unit, plus zero-shot per (N, seed).
    struct Unit {
        std::size_t n_index;
        std::size_t alg_index;  // index into options.algorithms, or npos for the zero-shot reference
        std::size_t seed_index;
    };
    constexpr std::size_t kReference = static_cast<std::size_t>(-1);
    std::vector<Unit> units;
    for (std::size_t ni = 0; ni < n_values.size(); ++ni) {
        if (has_head)
            for (std::size_t si = 0; si < options.seeds.size(); ++si) units.push_back({ni, kReference, si});
        for (std::size_t ai = 0; ai < options.algorithms.size(); ++ai) {
            if (options.algorithms[ai] == Algorithm::zeroshot) continue;
            for (std::size_t si = 0; si < options.seeds.size(); ++si) units.push_back({ni, ai, si});
        }
    }
    std::vector<SeedResult> results(units.size());
    detail::parallel_for(units.size(), options.jobs, [&](std::size_t u) {
        const Unit& unit = units[u];
        const std::size_t n = n_values[unit.n_index];
        const std::uint64_t seed = options.seeds[unit.seed_index];
        const MetaTestPlan plan = test_plan(n);
        if (unit.alg_index == kReference) {
            results[u] = meta_test_seed(ProjectionModel::from_pretrained(ds), ds, plan, seed, false);
            return;
        }
        const Algorithm a = options.algorithms[unit.alg_index];
        if (a == Algorithm::classical) {
            results[u] = meta_test_seed(classical_models[unit.seed_index], ds, plan, seed, true);
        } else {
            const TrainResult trained = train(ds, plan_for(a, n, seed));
            results[u] = meta_test_seed(trained.model, ds, plan, seed, true);
        }
    });

    // Fold in unit order.
    std::vector<EvalReport> reports;
    std::map<std::pair<std::size_t, std::size_t>, EvalReport> by_key;
    for (std::size_t u = 0; u < units.size(); ++u) {
        EvalReport& r = by_key[{units[u].n_index, units[u].alg_index}];
        r.seeds.push_back(std::move(results[u]));
    }
    for (std::size_t ni = 0; ni < n_values.size(); ++ni) {
        const std::size_t n = n_values[ni];
        double zs_mean = std::numeric_limits<double>::quiet_NaN();
        std::optional<EvalReport> reference;
        if (has_head) {
            reference = std::move(by_key[{ni, kReference}]);
            aggregate(*reference);
            zs_mean = reference->mean;
        }
        for (std::size_t ai = 0; ai < options.algorithms.size(); ++ai) {
            const Algorithm a = options.algorithms[ai];
            EvalReport r = a == Algorithm::zeroshot ? *reference : std::move(by_key[{ni, ai}]);
            r.algorithm = std::string(algorithm_name(a));
            r.dataset = options.dataset_name;
            r.split = options.split;
            r.config = {n, required_tasks(m, n)};
            aggregate(r);
            r.zero_shot_mean = zs_mean;
            reports.push_back(std::move(r));
        }
    }
    return reports;
}

}  // namespace fewshot
