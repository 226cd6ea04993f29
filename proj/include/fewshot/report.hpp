#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "fewshot/meta_eval.hpp"

namespace fewshot {

struct WinnerRow {
    std::string dataset;
    TaskConfig config;
    double zero_shot_mean = 0.0;
    std::vector<std::string> winners;  // several on an exact tie
    double best_mean = 0.0;
};

// One row per (dataset, N, T): the algorithm(s) with the highest mean,
// zero-shot excluded whenever another algorithm is present. Rows are sorted
// by zero-shot mean, then N.
std::vector<WinnerRow> winner_map(const std::vector<EvalReport>& reports);

// Per-task rows: dataset,split,algorithm,N,T,seed,task_id,accuracy
std::string results_csv(const std::vector<EvalReport>& reports);
// One row per report: dataset,algorithm,N,T,mean,std,zero_shot_mean
std::string aggregate_csv(const std::vector<EvalReport>& reports);
std::string winner_csv(const std::vector<WinnerRow>& rows);

// Mean accuracy against (N, T), one line per algorithm.
std::string accuracy_svg(const std::vector<EvalReport>& reports);
// Winner of each configuration against its zero-shot mean.
std::string winner_map_svg(const std::vector<WinnerRow>& rows);

// Rebuilds reports from a per-task results CSV (the inverse of results_csv,
// up to printed precision).
std::vector<EvalReport> parse_results_csv(const std::string& text);

struct RenderedFiles {
    std::filesystem::path results;
    std::filesystem::path aggregate;
    std::filesystem::path winners;
    std::filesystem::path accuracy_plot;
    std::filesystem::path winner_plot;
};

// Writes results.csv, aggregate.csv, winners.csv, accuracy.svg and
// winner_map.svg into out_dir (created on demand), each via write-then-rename.
RenderedFiles render_reports(const std::vector<EvalReport>& reports, const std::filesystem::path& out_dir);

// Writes `content` to a temporary sibling and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, const std::string& content);

}  // namespace fewshot
