#include "fewshot/train.hpp"

#include <cmath>
#include <numeric>

#include "fewshot/errors.hpp"

namespace fewshot {
namespace {

void check_finite(const ProjectionModel& model, std::uint64_t step) {
    if (!model.all_finite()) {
        throw NumericError("non-finite parameters after Adam step " + std::to_string(step));
    }
}

Batch select_rows(const Batch& full, std::span<const std::size_t> rows) {
    Batch b;
    b.images = Matrix(rows.size(), full.images.cols());
    b.labels.reserve(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto src = full.images.row(rows[i]);
        std::copy(src.begin(), src.end(), b.images.row(i).begin());
        b.labels.push_back(full.labels[rows[i]]);
    }
    b.texts = full.texts;
    return b;
}

std::uint64_t steps_per_epoch(std::size_t rows, std::size_t minibatch) {
    if (minibatch == 0 || minibatch >= rows) return 1;
    return (rows + minibatch - 1) / minibatch;
}

// Shared driver for classical and MAMF: `epochs` passes over one task batch.
class EpochRunner {
public:
    EpochRunner(ProjectionModel& model, const TrainPlan& plan, Rng batch_rng, TrainResult& result)
        : model_(model), plan_(plan), batch_rng_(std::move(batch_rng)), result_(result) {
        state_.hyper.lr = plan.lr;
    }

    void reset_optimizer() {
        state_ = AdamState{};
        state_.hyper.lr = plan_.lr;
    }

    void run(const Batch& batch, std::size_t task_id) {
        const std::size_t rows = batch.images.rows();
        const bool full = plan_.minibatch == 0 || plan_.minibatch >= rows;
        std::vector<std::size_t> order(rows);
        for (std::size_t epoch = 0; epoch < plan_.epochs_per_task; ++epoch) {
            if (full) {
                step(batch, task_id);
                continue;
            }
            std::iota(order.begin(), order.end(), std::size_t{0});
            for (std::size_t i = rows; i > 1; --i) std::swap(order[i - 1], order[batch_rng_.index(i)]);
            for (std::size_t begin = 0; begin < rows; begin += plan_.minibatch) {
                const std::size_t end = std::min(rows, begin + plan_.minibatch);
                step(select_rows(batch, std::span(order).subspan(begin, end - begin)), task_id);
            }
        }
    }

private:
    void step(const Batch& batch, std::size_t task_id) {
        const LossAndGrads lg = loss_and_grads(model_, batch);
        adam_step(model_, lg.grads, state_);
        ++result_.adam_steps;
        check_finite(model_, result_.adam_steps);
        result_.log.push_back({result_.adam_steps, task_id, lg.loss});
    }

    ProjectionModel& model_;
    const TrainPlan& plan_;
    Rng batch_rng_;
    TrainResult& result_;
    AdamState state_;
};

ProjectionModel init_model(const EmbeddingDataset& ds, const TrainPlan& plan, const Rng& rng) {
    Rng init_rng = rng.child(kInitStream);
    ProjectionModel model = ProjectionModel::kaiming(ds.d_img, ds.d_txt, ds.d_joint, init_rng);
    model.scale = plan.scale;
    model.normalize = plan.normalize;
    return model;
}

void require_algorithm(const TrainPlan& plan, Algorithm expected) {
    if (plan.algorithm != expected) {
        throw UsageError("plan is for " + std::string(algorithm_name(plan.algorithm)) + ", expected " +
                         std::string(algorithm_name(expected)));
    }
}

}  // namespace

void adam_step(std::span<Matrix* const> params, std::span<const Matrix* const> grads, AdamState& state) {
    if (params.size() != grads.size()) throw UsageError("adam_step: parameter and gradient counts differ");
    if (state.m.empty()) {
        for (const Matrix* p : params) {
            state.m.emplace_back(p->rows(), p->cols());
            state.v.emplace_back(p->rows(), p->cols());
        }
    }
    if (state.m.size() != params.size()) throw UsageError("adam_step: state holds a different parameter count");
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (!params[i]->same_shape(*grads[i]) || !params[i]->same_shape(state.m[i])) {
            throw UsageError("adam_step: shape mismatch for parameter " + std::to_string(i) + ": " +
                             params[i]->shape_string() + " vs gradient " + grads[i]->shape_string());
        }
    }
    ++state.t;
    const AdamHyper& h = state.hyper;
    const double t = static_cast<double>(state.t);
    const double bias1 = 1.0 - std::pow(h.beta1, t);
    const double bias2 = 1.0 - std::pow(h.beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto p = params[i]->data();
        const auto g = grads[i]->data();
        auto m = state.m[i].data();
        auto v = state.v[i].data();
        for (std::size_t k = 0; k < p.size(); ++k) {
            m[k] = h.beta1 * m[k] + (1.0 - h.beta1) * g[k];
            v[k] = h.beta2 * v[k] + (1.0 - h.beta2) * g[k] * g[k];
            const double m_hat = m[k] / bias1;
            const double v_hat = v[k] / bias2;
            p[k] -= h.lr * m_hat / (std::sqrt(v_hat) + h.eps);
        }
    }
}

void adam_step(ProjectionModel& model, const Gradients& g, AdamState& state) {
    Matrix* params[] = {&model.image_proj, &model.text_proj};
    const Matrix* grads[] = {&g.image_proj, &g.text_proj};
    adam_step(params, grads, state);
}

std::string_view algorithm_name(Algorithm a) {
    switch (a) {
        case Algorithm::zeroshot: return "zeroshot";
        case Algorithm::classical: return "classical";
        case Algorithm::mamf: return "mamf";
        case Algorithm::fomaml: return "fomaml";
    }
    return "unknown";
}

Algorithm parse_algorithm(std::string_view name) {
    for (Algorithm a : {Algorithm::zeroshot, Algorithm::classical, Algorithm::mamf, Algorithm::fomaml})
        if (algorithm_name(a) == name) return a;
    throw UsageError("unknown algorithm '" + std::string(name) + "' (expected zeroshot, classical, mamf or fomaml)");
}

TrainPlan TrainPlan::defaults(Algorithm a) {
    TrainPlan p;
    p.algorithm = a;
    switch (a) {
        case Algorithm::zeroshot: p.epochs_per_task = 0; break;
        case Algorithm::classical: p.epochs_per_task = 50; break;
        case Algorithm::mamf: p.epochs_per_task = 10; break;
        case Algorithm::fomaml:
            p.epochs_per_task = 10;
            p.inner_steps = 1;
            p.inner_lr = 1e-6;
            break;
    }
    return p;
}

void TrainPlan::validate(std::size_t num_classes) const {
    if (!(lr > 0.0)) throw UsageError("train plan: lr must be positive");
    if (!(scale > 0.0)) throw UsageError("train plan: scale must be positive");
    if (algorithm == Algorithm::mamf || algorithm == Algorithm::fomaml) tasks.validate(num_classes);
    if (algorithm == Algorithm::fomaml) {
        if (!(inner_lr > 0.0)) throw UsageError("train plan: inner_lr must be positive");
        if (!(support_fraction > 0.0 && support_fraction < 1.0))
            throw UsageError("train plan: support fraction must lie in (0, 1)");
    }
}

std::uint64_t expected_adam_steps(const EmbeddingDataset& ds, const TrainPlan& plan) {
    const std::size_t per_class = ds.train_per_class();
    switch (plan.algorithm) {
        case Algorithm::zeroshot: return 0;
        case Algorithm::classical:
            return plan.epochs_per_task * steps_per_epoch(ds.num_classes() * per_class, plan.minibatch);
        case Algorithm::mamf:
            return plan.tasks.n_tasks * plan.epochs_per_task *
                   steps_per_epoch(plan.tasks.n_way * per_class, plan.minibatch);
        case Algorithm::fomaml: return plan.tasks.n_tasks * plan.epochs_per_task;
    }
    return 0;
}

TrainResult train_classical(const EmbeddingDataset& ds, const TrainPlan& plan, const Rng& rng) {
    require_algorithm(plan, Algorithm::classical);
    plan.validate(ds.num_classes());
    TrainResult result;
    result.model = init_model(ds, plan, rng);
    Task all;
    all.class_indices.resize(ds.num_classes());
    std::iota(all.class_indices.begin(), all.class_indices.end(), std::size_t{0});
    EpochRunner runner(result.model, plan, rng.child(kBatchStream), result);
    runner.run(task_batch(ds, all), 0);
    return result;
}

TrainResult train_mamf(const EmbeddingDataset& ds, const TrainPlan& plan, const Rng& rng) {
    require_algorithm(plan, Algorithm::mamf);
    plan.validate(ds.num_classes());
    TrainResult result;
    result.model = init_model(ds, plan, rng);
    Rng task_rng = rng.child(kTaskStream);
    const std::vector<Task> tasks = sample_tasks(ds.num_classes(), plan.tasks, task_rng, SplitSource::train);
    EpochRunner runner(result.model, plan, rng.child(kBatchStream), result);
    for (std::size_t i = 0; i < tasks.size(); ++i) {
        if (plan.reset_adam_per_task) runner.reset_optimizer();
        runner.run(task_batch(ds, tasks[i]), i);
    }
    return result;
}

LossAndGrads fomaml_outer_gradient(const ProjectionModel& model, const Episode& episode, std::size_t inner_steps,
                                   double inner_lr) {
    ProjectionModel adapted = model;
    for (std::size_t k = 0; k < inner_steps; ++k) {
        const Gradients g = grads(adapted, episode.support);
        for (auto [p, d] : {std::pair{&adapted.image_proj, &g.image_proj}, std::pair{&adapted.text_proj, &g.text_proj}}) {
            auto pv = p->data();
            const auto dv = d->data();
            for (std::size_t i = 0; i < pv.size(); ++i) pv[i] -= inner_lr * dv[i];
        }
    }
    return loss_and_grads(adapted, episode.query);
}

TrainResult train_fomaml(const EmbeddingDataset& ds, const TrainPlan& plan, const Rng& rng) {
    require_algorithm(plan, Algorithm::fomaml);
    plan.validate(ds.num_classes());
    TrainResult result;
    result.model = init_model(ds, plan, rng);
    Rng task_rng = rng.child(kTaskStream);
    AdamState state;
    state.hyper.lr = plan.lr;
    std::vector<Task> tasks;
    for (std::size_t pass = 0; pass < plan.epochs_per_task; ++pass) {
        if (pass == 0 || plan.resample_each_pass) {
            tasks = sample_tasks(ds.num_classes(), plan.tasks, task_rng, SplitSource::train);
        }
        for (std::size_t i = 0; i < tasks.size(); ++i) {
            const Episode ep = materialize_episode(ds, tasks[i], plan.support_fraction);
            const LossAndGrads lg = fomaml_outer_gradient(result.model, ep, plan.inner_steps, plan.inner_lr);
            adam_step(result.model, lg.grads, state);
            ++result.adam_steps;
            check_finite(result.model, result.adam_steps);
            result.log.push_back({result.adam_steps, pass * tasks.size() + i, lg.loss});
        }
    }
    return result;
}

TrainResult train(const EmbeddingDataset& ds, const TrainPlan& plan) {
    const Rng rng(plan.seed);
    switch (plan.algorithm) {
        case Algorithm::zeroshot: {
            TrainResult r;
            r.model = ProjectionModel::from_pretrained(ds);
            r.model.scale = plan.scale;
            r.model.normalize = plan.normalize;
            return r;
        }
        case Algorithm::classical: return train_classical(ds, plan, rng);
        case Algorithm::mamf: return train_mamf(ds, plan, rng);
        case Algorithm::fomaml: return train_fomaml(ds, plan, rng);
    }
    throw UsageError("unknown algorithm");
}

std::uint64_t fine_tune(ProjectionModel& model, const Batch& batch, std::size_t epochs, double lr) {
    AdamState state;
    state.hyper.lr = lr;
    for (std::size_t e = 0; e < epochs; ++e) {
        adam_step(model, grads(model, batch), state);
        check_finite(model, state.t);
    }
    return state.t;
}

}  // namespace fewshot
