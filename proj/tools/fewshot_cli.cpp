// fewshot: dataset generation/import, task sampling, training, meta-testing,
// sweeps and report rendering.

#include <CLI11.hpp>

#include <cstdlib>
#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "fewshot/dataset.hpp"
#include "fewshot/errors.hpp"
#include "fewshot/meta_eval.hpp"
#include "fewshot/report.hpp"
#include "fewshot/tasks.hpp"
#include "fewshot/train.hpp"

namespace fs = std::filesystem;
using namespace fewshot;

namespace {

struct CommonOptions {
    std::string output_dir = "results";
    std::size_t jobs = 1;
};

struct TaskOptions {
    std::size_t n_way = 0;
    std::string n_tasks = "auto";

    TaskConfig resolve(std::size_t num_classes) const {
        if (n_way == 0) throw UsageError("--N is required");
        TaskConfig c{n_way, 0};
        if (n_tasks == "auto") {
            c.n_tasks = required_tasks(num_classes, n_way);
        } else {
            try {
                std::size_t pos = 0;
                c.n_tasks = std::stoul(n_tasks, &pos);
                if (pos != n_tasks.size()) throw std::invalid_argument(n_tasks);
            } catch (const std::logic_error&) {
                throw UsageError("--T must be a positive integer or 'auto', got '" + n_tasks + "'");
            }
        }
        c.validate(num_classes);
        return c;
    }
};

// Training knobs shared by train, meta-test and sweep. Unset values keep the
// per-algorithm defaults.
struct TrainOverrides {
    std::optional<std::size_t> epochs;
    std::optional<std::size_t> classical_epochs;
    std::optional<std::size_t> mamf_epochs;
    std::optional<std::size_t> fomaml_passes;
    std::optional<double> lr;
    std::optional<std::size_t> inner_steps;
    std::optional<double> inner_lr;
    std::size_t minibatch = 0;
    bool reset_adam = false;
    bool fixed_tasks = false;
    double scale = 1.0;
    bool normalize = false;

    void add_to(CLI::App* cmd, bool per_algorithm_epochs) {
        if (per_algorithm_epochs) {
            cmd->add_option("--classical-epochs", classical_epochs, "Classical fine-tuning epochs (default 50)");
            cmd->add_option("--mamf-epochs", mamf_epochs, "MAMF epochs per task (default 10)");
            cmd->add_option("--fomaml-passes", fomaml_passes, "FOMAML passes over the task sequence (default 10)");
        } else {
            cmd->add_option("--epochs", epochs, "Epochs (classical), epochs per task (mamf) or passes (fomaml)");
        }
        cmd->add_option("--lr", lr, "Training learning rate (default 1e-6)");
        cmd->add_option("--inner-steps", inner_steps, "FOMAML inner gradient steps (default 1)");
        cmd->add_option("--inner-lr", inner_lr, "FOMAML inner learning rate (default 1e-6)");
        cmd->add_option("--minibatch", minibatch, "Minibatch size; 0 uses the full task batch");
        cmd->add_flag("--reset-adam", reset_adam, "MAMF: reset Adam state between tasks");
        cmd->add_flag("--fixed-tasks", fixed_tasks, "FOMAML: reuse one task sequence for every pass");
        cmd->add_option("--scale", scale, "Logit scale");
        cmd->add_flag("--normalize", normalize, "L2-normalize projected embeddings");
    }

    TrainPlan plan(Algorithm a) const {
        TrainPlan p = TrainPlan::defaults(a);
        if (epochs) p.epochs_per_task = *epochs;
        if (a == Algorithm::classical && classical_epochs) p.epochs_per_task = *classical_epochs;
        if (a == Algorithm::mamf && mamf_epochs) p.epochs_per_task = *mamf_epochs;
        if (a == Algorithm::fomaml && fomaml_passes) p.epochs_per_task = *fomaml_passes;
        if (lr) p.lr = *lr;
        if (inner_steps) p.inner_steps = *inner_steps;
        if (inner_lr) p.inner_lr = *inner_lr;
        p.minibatch = minibatch;
        p.reset_adam_per_task = reset_adam;
        p.resample_each_pass = !fixed_tasks;
        p.scale = scale;
        p.normalize = normalize;
        return p;
    }
};

struct SeedOptions {
    std::uint64_t seed = 0;
    std::size_t num_seeds = 5;

    std::vector<std::uint64_t> seeds() const {
        if (num_seeds == 0) throw UsageError("--num-seeds must be positive");
        std::vector<std::uint64_t> out;
        for (std::size_t i = 0; i < num_seeds; ++i) out.push_back(seed + i);
        return out;
    }
};

void require_file(const std::string& path, const char* what) {
    if (path.empty()) throw UsageError(std::string(what) + " is required");
    if (!fs::is_regular_file(path)) throw IoError(std::string(what) + " not found", path);
}

std::string dataset_label(const std::string& name, const std::string& path) {
    return name.empty() ? fs::path(path).stem().string() : name;
}

// Effective configuration of the running subcommand, after file, env and flags
// are merged. Loadable again through --config.
void prepare_output(const CLI::App& cmd, const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create output directory (" + ec.message() + ")", dir);
    std::ostringstream os;
    os << "[" << cmd.get_name() << "]\n";
    for (const CLI::Option* opt : cmd.get_options()) {
        if (opt->get_lnames().empty() || opt->get_lnames()[0] == "help") continue;
        std::string value;
        if (opt->count() > 0) {
            const auto& res = opt->results();
            for (std::size_t i = 0; i < res.size(); ++i) value += (i ? "," : "") + res[i];
        } else {
            value = opt->get_default_str();
        }
        if (opt->get_expected_max() == 0) {
            os << opt->get_lnames()[0] << " = " << (opt->count() > 0 ? "true" : "false") << "\n";
            continue;
        }
        if (value.empty() || value == "{}") continue;
        os << opt->get_lnames()[0] << " = \"" << value << "\"\n";
    }
    write_file_atomic(fs::path(dir) / "effective_config.toml", os.str());
}

void print_summary(const EmbeddingDataset& ds, std::ostream& os) {
    os << "classes (M): " << ds.num_classes() << "\n"
       << "dims: d_img=" << ds.d_img << " d_txt=" << ds.d_txt << " d_joint=" << ds.d_joint << "\n"
       << "per-class splits: train=" << ds.train_per_class() << " support=" << ds.support_per_class()
       << " query=" << ds.query_per_class() << "\n"
       << "pretrained projection: " << (ds.pretrained ? "yes" : "no") << "\n";
}

void print_aggregates(const std::vector<EvalReport>& reports) {
    for (const EvalReport& r : reports) {
        std::printf("%-10s (N=%zu, T=%zu)  mean %.4f  std %.4f\n", r.algorithm.c_str(), r.config.n_way,
                    r.config.n_tasks, r.mean, r.std);
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Few-shot transfer learning experiments over precomputed embeddings"};
    app.set_config("--config", "", "TOML config file; command-line flags take precedence");
    app.require_subcommand(1);
    app.option_defaults()->always_capture_default();

    CommonOptions common;
    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--output-dir", common.output_dir, "Output directory")->envname("FEWSHOT_OUTPUT_DIR");
        cmd->add_option("--jobs", common.jobs, "Parallel workers for evaluation")
            ->envname("FEWSHOT_JOBS")
            ->check(CLI::PositiveNumber);
    };

    // gen-synthetic
    SyntheticSpec spec;
    std::string gen_out;
    std::uint64_t gen_seed = 0;
    auto* gen = app.add_subcommand("gen-synthetic", "Generate a synthetic FEWEMB dataset");
    gen->add_option("--out", gen_out, "Output dataset path")->required();
    gen->add_option("--seed", gen_seed, "Generator seed");
    gen->add_option("--M", spec.num_classes, "Number of classes");
    gen->add_option("--d-img", spec.d_img, "Image embedding dimension");
    gen->add_option("--d-txt", spec.d_txt, "Text embedding dimension");
    gen->add_option("--d-joint", spec.d_joint, "Joint space dimension");
    gen->add_option("--n-train", spec.n_train, "Train samples per class");
    gen->add_option("--n-support", spec.n_support, "Support samples per class");
    gen->add_option("--n-query", spec.n_query, "Query samples per class");
    gen->add_option("--sigma-between", spec.sigma_between, "Spread of class centroids");
    gen->add_option("--sigma-within", spec.sigma_within, "Within-class noise");
    gen->add_option("--projection-noise", spec.projection_noise, "Relative noise on the pretrained head");
    gen->add_flag("--spurious", spec.spurious, "Add a class code that is only reliable in the train split");
    gen->add_option("--spurious-strength", spec.spurious_strength, "Height of the spurious code");
    gen->add_option("--template", spec.prompt_template, "Prompt template with one {label}");

    // import
    std::string import_dir, import_out;
    auto* imp = app.add_subcommand("import", "Convert a CSV directory with manifest.json into FEWEMB");
    imp->add_option("--dir", import_dir, "Directory holding manifest.json")->required();
    imp->add_option("--out", import_out, "Output dataset path")->required();

    // sample-tasks
    std::string dataset_path, dataset_name;
    TaskOptions task_opts;
    std::uint64_t sample_seed = 0;
    std::size_t sample_m = 0;
    std::string sample_split = "train";
    auto* smp = app.add_subcommand("sample-tasks", "Write a task manifest (task_id, class_indices) for audit");
    add_common(smp);
    smp->add_option("--dataset", dataset_path, "FEWEMB dataset (alternative to --M)");
    smp->add_option("--M", sample_m, "Number of classes when no dataset is given");
    smp->add_option("--N", task_opts.n_way, "Classes per task")->required();
    smp->add_option("--T", task_opts.n_tasks, "Number of tasks or 'auto'");
    smp->add_option("--seed", sample_seed, "Sampling seed");
    smp->add_option("--split", sample_split, "train or test")->check(CLI::IsMember({"train", "test"}));

    // train
    std::string algorithm_str = "mamf", checkpoint_path;
    TrainOverrides overrides;
    std::uint64_t train_seed = 0;
    auto* trn = app.add_subcommand("train", "Train one model and write a checkpoint and training log");
    add_common(trn);
    trn->add_option("--dataset", dataset_path, "FEWEMB dataset")->required();
    trn->add_option("--algorithm", algorithm_str, "classical, mamf or fomaml");
    trn->add_option("--N", task_opts.n_way, "Classes per training task (mamf, fomaml)");
    trn->add_option("--T", task_opts.n_tasks, "Training tasks or 'auto'");
    trn->add_option("--seed", train_seed, "Training seed");
    trn->add_option("--checkpoint", checkpoint_path, "Checkpoint output path (default <output-dir>/model.fprj)");
    overrides.add_to(trn, false);

    // meta-test
    std::string eval_checkpoint;
    SeedOptions seed_opts;
    double adapt_lr = 1e-7;
    std::size_t adapt_epochs = 5;
    auto* met = app.add_subcommand("meta-test", "Meta-test one algorithm (training per seed) or a checkpoint");
    add_common(met);
    met->add_option("--dataset", dataset_path, "FEWEMB dataset")->required();
    met->add_option("--name", dataset_name, "Dataset label in reports (default: file stem)");
    met->add_option("--algorithm", algorithm_str, "zeroshot, classical, mamf or fomaml");
    met->add_option("--checkpoint", eval_checkpoint, "Evaluate this checkpoint instead of training");
    met->add_option("--N", task_opts.n_way, "Classes per task")->required();
    met->add_option("--T", task_opts.n_tasks, "Tasks or 'auto'");
    met->add_option("--seed", seed_opts.seed, "First seed");
    met->add_option("--num-seeds", seed_opts.num_seeds, "Number of consecutive seeds");
    met->add_option("--adapt-lr", adapt_lr, "Adam learning rate on the support set");
    met->add_option("--adapt-epochs", adapt_epochs, "Adaptation epochs on the support set");
    overrides.add_to(met, false);

    // sweep
    std::vector<std::string> algorithms = {"zeroshot", "classical", "mamf", "fomaml"};
    std::vector<std::size_t> n_values;
    auto* swp = app.add_subcommand("sweep", "Run every algorithm over N = 2..M-1 with T from the coverage formula");
    add_common(swp);
    swp->add_option("--dataset", dataset_path, "FEWEMB dataset")->required();
    swp->add_option("--name", dataset_name, "Dataset label in reports (default: file stem)");
    swp->add_option("--algorithms", algorithms, "Algorithms to compare")->delimiter(',');
    swp->add_option("--N", n_values, "N values (default 2..M-1)")->delimiter(',');
    swp->add_option("--seed", seed_opts.seed, "First seed");
    swp->add_option("--num-seeds", seed_opts.num_seeds, "Number of consecutive seeds");
    swp->add_option("--adapt-lr", adapt_lr, "Adam learning rate on the support set");
    swp->add_option("--adapt-epochs", adapt_epochs, "Adaptation epochs on the support set");
    overrides.add_to(swp, true);

    // report
    std::string results_path;
    auto* rep = app.add_subcommand("report", "Re-render aggregates and plots from a results CSV");
    add_common(rep);
    rep->add_option("--results", results_path, "Per-task results CSV")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : static_cast<int>(ExitCode::usage);
    }

    try {
        if (gen->parsed()) {
            Rng rng(gen_seed);
            std::vector<std::string> warnings;
            const EmbeddingDataset ds = gen_synthetic(spec, rng, &warnings);
            for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
            write_dataset(ds, gen_out);
            std::cout << "wrote " << gen_out << "\n";
            print_summary(ds, std::cout);
            std::cout << "spurious block: " << (spec.spurious ? "yes" : "no") << "\n";
        } else if (imp->parsed()) {
            const EmbeddingDataset ds = import_csv_directory(import_dir);
            write_dataset(ds, import_out);
            std::cout << "wrote " << import_out << "\n";
            print_summary(ds, std::cout);
        } else if (smp->parsed()) {
            std::size_t m = sample_m;
            if (!dataset_path.empty()) {
                require_file(dataset_path, "--dataset");
                m = read_dataset(dataset_path).num_classes();
            }
            if (m == 0) throw UsageError("sample-tasks needs --dataset or --M");
            const TaskConfig cfg = task_opts.resolve(m);
            prepare_output(*app.get_subcommands().front(), common.output_dir);
            Rng rng(sample_seed);
            const auto tasks = sample_tasks(m, cfg, rng,
                                            sample_split == "train" ? SplitSource::train : SplitSource::support_query);
            std::ostringstream os;
            os << "task_id,class_indices\n";
            for (std::size_t i = 0; i < tasks.size(); ++i) {
                os << i << ',';
                for (std::size_t k = 0; k < tasks[i].class_indices.size(); ++k)
                    os << (k ? " " : "") << tasks[i].class_indices[k];
                os << '\n';
            }
            write_file_atomic(fs::path(common.output_dir) / "tasks.csv", os.str());
            std::cout << "wrote " << tasks.size() << " tasks (N=" << cfg.n_way << ") to "
                      << (fs::path(common.output_dir) / "tasks.csv").string() << "\n";
        } else if (trn->parsed()) {
            require_file(dataset_path, "--dataset");
            const Algorithm a = parse_algorithm(algorithm_str);
            const EmbeddingDataset ds = read_dataset(dataset_path);
            TrainPlan plan = overrides.plan(a);
            plan.seed = train_seed;
            if (a == Algorithm::mamf || a == Algorithm::fomaml) plan.tasks = task_opts.resolve(ds.num_classes());
            prepare_output(*app.get_subcommands().front(), common.output_dir);
            const TrainResult result = train(ds, plan);
            const fs::path ckpt = checkpoint_path.empty() ? fs::path(common.output_dir) / "model.fprj" : fs::path(checkpoint_path);
            write_checkpoint(result.model, ckpt);
            std::ostringstream log;
            log << "step,task_id,loss\n";
            char buf[64];
            for (const TrainLogEntry& e : result.log) {
                std::snprintf(buf, sizeof buf, "%.12g", e.loss);
                log << e.step << ',' << e.task_id << ',' << buf << '\n';
            }
            write_file_atomic(fs::path(common.output_dir) / "train_log.csv", log.str());
            std::cout << "trained " << algorithm_name(a) << " for " << result.adam_steps << " Adam steps; wrote "
                      << ckpt.string() << "\n";
        } else if (met->parsed()) {
            require_file(dataset_path, "--dataset");
            if (!eval_checkpoint.empty()) require_file(eval_checkpoint, "--checkpoint");
            const EmbeddingDataset ds = read_dataset(dataset_path);
            MetaTestPlan plan;
            plan.tasks = task_opts.resolve(ds.num_classes());
            plan.adapt_lr = adapt_lr;
            plan.adapt_epochs = adapt_epochs;
            plan.seeds = seed_opts.seeds();
            plan.jobs = common.jobs;
            prepare_output(*app.get_subcommands().front(), common.output_dir);
            std::vector<EvalReport> reports;
            std::optional<EvalReport> reference;
            if (ds.pretrained) reference = meta_test_zeroshot(ds, plan);
            if (!eval_checkpoint.empty()) {
                reports.push_back(meta_test(read_checkpoint(eval_checkpoint), ds, plan, algorithm_str));
            } else {
                const Algorithm a = parse_algorithm(algorithm_str);
                if (a == Algorithm::zeroshot) {
                    if (!reference) throw ConfigError("zeroshot needs a dataset with a pretrained projection");
                    reports.push_back(*reference);
                } else {
                    TrainPlan tp = overrides.plan(a);
                    tp.tasks = plan.tasks;
                    reports.push_back(evaluate_algorithm(ds, tp, plan));
                }
            }
            for (EvalReport& r : reports) {
                r.dataset = dataset_label(dataset_name, dataset_path);
                if (reference) r.zero_shot_mean = reference->mean;
            }
            render_reports(reports, common.output_dir);
            print_aggregates(reports);
        } else if (swp->parsed()) {
            require_file(dataset_path, "--dataset");
            const EmbeddingDataset ds = read_dataset(dataset_path);
            SweepOptions o;
            o.algorithms.clear();
            for (const auto& name : algorithms) o.algorithms.push_back(parse_algorithm(name));
            // keep the reference rows so `report` can rebuild zero_shot_mean from results.csv
            if (ds.pretrained && std::ranges::find(o.algorithms, Algorithm::zeroshot) == o.algorithms.end())
                o.algorithms.insert(o.algorithms.begin(), Algorithm::zeroshot);
            o.n_values = n_values;
            o.seeds = seed_opts.seeds();
            o.adapt_lr = adapt_lr;
            o.adapt_epochs = adapt_epochs;
            o.classical = overrides.plan(Algorithm::classical);
            o.mamf = overrides.plan(Algorithm::mamf);
            o.fomaml = overrides.plan(Algorithm::fomaml);
            o.jobs = common.jobs;
            o.dataset_name = dataset_label(dataset_name, dataset_path);
            prepare_output(*app.get_subcommands().front(), common.output_dir);
            const auto reports = sweep(ds, o);
            render_reports(reports, common.output_dir);
            print_aggregates(reports);
        } else if (rep->parsed()) {
            require_file(results_path, "--results");
            std::ifstream in(results_path);
            std::stringstream ss;
            ss << in.rdbuf();
            const auto reports = parse_results_csv(ss.str());
            prepare_output(*app.get_subcommands().front(), common.output_dir);
            render_reports(reports, common.output_dir);
            print_aggregates(reports);
        }
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return static_cast<int>(e.code());
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
