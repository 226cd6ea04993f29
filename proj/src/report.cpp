#include "fewshot/report.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <tuple>

#include "fewshot/errors.hpp"

namespace fewshot {
namespace {

std::string num(double v, int digits = 10) {
    if (std::isnan(v)) return "nan";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.*g", digits, v);
    return buf;
}

std::string fixed(double v, int digits = 2) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

std::string xml_escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

std::string color_for(const std::string& algorithm) {
    static const std::map<std::string, std::string> colors = {
        {"zeroshot", "#7f7f7f"}, {"classical", "#1f77b4"}, {"mamf", "#d62728"}, {"fomaml", "#2ca02c"}};
    const auto it = colors.find(algorithm);
    return it == colors.end() ? "#9467bd" : it->second;
}

std::string config_label(const TaskConfig& c) {
    return "(" + std::to_string(c.n_way) + ", " + std::to_string(c.n_tasks) + ")";
}

constexpr double kWidth = 640, kHeight = 420;
constexpr double kLeft = 60, kRight = 150, kTop = 30, kBottom = 60;

double plot_x(double frac) { return kLeft + frac * (kWidth - kLeft - kRight); }
double plot_y(double acc) { return kHeight - kBottom - acc * (kHeight - kTop - kBottom); }

void svg_frame(std::ostringstream& os, const std::string& title, const std::string& x_label) {
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
       << "\" viewBox=\"0 0 " << kWidth << " " << kHeight << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    os << "<text x=\"" << kWidth / 2 << "\" y=\"18\" text-anchor=\"middle\" font-size=\"13\">" << xml_escape(title)
       << "</text>\n";
    for (int i = 0; i <= 5; ++i) {
        const double acc = i / 5.0;
        os << "<line x1=\"" << kLeft << "\" x2=\"" << plot_x(1.0) << "\" y1=\"" << fixed(plot_y(acc)) << "\" y2=\""
           << fixed(plot_y(acc)) << "\" stroke=\"#dddddd\"/>\n";
        os << "<text x=\"" << kLeft - 6 << "\" y=\"" << fixed(plot_y(acc) + 4) << "\" text-anchor=\"end\">"
           << fixed(acc, 1) << "</text>\n";
    }
    os << "<line x1=\"" << kLeft << "\" x2=\"" << kLeft << "\" y1=\"" << kTop << "\" y2=\"" << kHeight - kBottom
       << "\" stroke=\"black\"/>\n";
    os << "<line x1=\"" << kLeft << "\" x2=\"" << plot_x(1.0) << "\" y1=\"" << kHeight - kBottom << "\" y2=\""
       << kHeight - kBottom << "\" stroke=\"black\"/>\n";
    os << "<text x=\"" << fixed(plot_x(0.5)) << "\" y=\"" << kHeight - 15 << "\" text-anchor=\"middle\">"
       << xml_escape(x_label) << "</text>\n";
    os << "<text x=\"15\" y=\"" << fixed(plot_y(0.5)) << "\" text-anchor=\"middle\" transform=\"rotate(-90 15 "
       << fixed(plot_y(0.5)) << ")\">mean accuracy</text>\n";
}

void svg_legend(std::ostringstream& os, const std::vector<std::string>& names) {
    double y = kTop + 10;
    for (const std::string& name : names) {
        os << "<rect x=\"" << kWidth - kRight + 20 << "\" y=\"" << y - 8 << "\" width=\"10\" height=\"10\" fill=\""
           << color_for(name) << "\"/>\n";
        os << "<text x=\"" << kWidth - kRight + 36 << "\" y=\"" << y + 1 << "\">" << xml_escape(name) << "</text>\n";
        y += 18;
    }
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                cur += '"';
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                cur += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            fields.push_back(std::move(cur));
            cur.clear();
        } else {
            cur += c;
        }
    }
    fields.push_back(std::move(cur));
    return fields;
}

template <typename T>
T parse_number(const std::string& s, std::size_t line_no) {
    T v{};
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size())
        throw FormatError("results CSV line " + std::to_string(line_no) + ": bad number '" + s + "'");
    return v;
}

}  // namespace

std::vector<WinnerRow> winner_map(const std::vector<EvalReport>& reports) {
    using Key = std::tuple<std::string, std::size_t, std::size_t>;
    std::vector<Key> order;
    std::map<Key, std::vector<const EvalReport*>> groups;
    for (const EvalReport& r : reports) {
        const Key key{r.dataset, r.config.n_way, r.config.n_tasks};
        auto [it, inserted] = groups.try_emplace(key);
        if (inserted) order.push_back(key);
        it->second.push_back(&r);
    }
    std::vector<WinnerRow> rows;
    for (const Key& key : order) {
        const auto& members = groups[key];
        WinnerRow row;
        row.dataset = std::get<0>(key);
        row.config = {std::get<1>(key), std::get<2>(key)};
        row.zero_shot_mean = std::numeric_limits<double>::quiet_NaN();
        bool others = false;
        for (const EvalReport* r : members) {
            if (r->algorithm == "zeroshot") {
                row.zero_shot_mean = r->mean;
            } else {
                others = true;
                if (std::isnan(row.zero_shot_mean) && !std::isnan(r->zero_shot_mean)) row.zero_shot_mean = r->zero_shot_mean;
            }
        }
        double best = -std::numeric_limits<double>::infinity();
        for (const EvalReport* r : members) {
            if (others && r->algorithm == "zeroshot") continue;
            if (r->mean > best) {
                best = r->mean;
                row.winners = {r->algorithm};
            } else if (r->mean == best) {
                row.winners.push_back(r->algorithm);
            }
        }
        row.best_mean = best;
        rows.push_back(std::move(row));
    }
    std::stable_sort(rows.begin(), rows.end(), [](const WinnerRow& a, const WinnerRow& b) {
        const bool a_nan = std::isnan(a.zero_shot_mean), b_nan = std::isnan(b.zero_shot_mean);
        if (a_nan != b_nan) return b_nan;
        if (!a_nan && a.zero_shot_mean != b.zero_shot_mean) return a.zero_shot_mean < b.zero_shot_mean;
        return a.config.n_way < b.config.n_way;
    });
    return rows;
}

std::string results_csv(const std::vector<EvalReport>& reports) {
    std::ostringstream os;
    os << "dataset,split,algorithm,N,T,seed,task_id,accuracy\n";
    for (const EvalReport& r : reports)
        for (const SeedResult& s : r.seeds)
            for (std::size_t t = 0; t < s.task_accuracy.size(); ++t)
                os << csv_field(r.dataset) << ',' << csv_field(r.split) << ',' << csv_field(r.algorithm) << ','
                   << r.config.n_way << ',' << r.config.n_tasks << ',' << s.seed << ',' << t << ','
                   << num(s.task_accuracy[t], 17) << '\n';  // round-trips exactly
    return os.str();
}

std::string aggregate_csv(const std::vector<EvalReport>& reports) {
    std::ostringstream os;
    os << "# mean: average of per-seed mean query accuracy; std: population standard deviation across seeds\n";
    os << "dataset,algorithm,N,T,mean,std,zero_shot_mean\n";
    for (const EvalReport& r : reports)
        os << csv_field(r.dataset) << ',' << csv_field(r.algorithm) << ',' << r.config.n_way << ','
           << r.config.n_tasks << ',' << num(r.mean) << ',' << num(r.std) << ',' << num(r.zero_shot_mean) << '\n';
    return os.str();
}

std::string winner_csv(const std::vector<WinnerRow>& rows) {
    std::ostringstream os;
    os << "dataset,N,T,zero_shot_mean,winner,best_mean\n";
    for (const WinnerRow& w : rows) {
        std::string names;
        for (const std::string& n : w.winners) names += (names.empty() ? "" : "|") + n;
        os << csv_field(w.dataset) << ',' << w.config.n_way << ',' << w.config.n_tasks << ',' << num(w.zero_shot_mean)
           << ',' << csv_field(names) << ',' << num(w.best_mean) << '\n';
    }
    return os.str();
}

std::string accuracy_svg(const std::vector<EvalReport>& reports) {
    std::vector<std::pair<std::size_t, std::size_t>> configs;
    std::vector<std::string> algorithms;
    for (const EvalReport& r : reports) {
        const std::pair c{r.config.n_way, r.config.n_tasks};
        if (std::find(configs.begin(), configs.end(), c) == configs.end()) configs.push_back(c);
        if (std::find(algorithms.begin(), algorithms.end(), r.algorithm) == algorithms.end())
            algorithms.push_back(r.algorithm);
    }
    std::sort(configs.begin(), configs.end());
    auto x_of = [&](std::size_t n, std::size_t t) {
        const auto idx = std::find(configs.begin(), configs.end(), std::pair{n, t}) - configs.begin();
        return configs.size() == 1 ? plot_x(0.5) : plot_x(static_cast<double>(idx) / double(configs.size() - 1));
    };

    std::ostringstream os;
    svg_frame(os, "Meta-test accuracy by task configuration", "task configuration (N, T)");
    for (const auto& [n, t] : configs) {
        os << "<text x=\"" << fixed(x_of(n, t)) << "\" y=\"" << kHeight - kBottom + 16 << "\" text-anchor=\"middle\">("
           << n << ", " << t << ")</text>\n";
    }
    for (const std::string& alg : algorithms) {
        std::vector<std::pair<double, double>> pts;
        for (const EvalReport& r : reports) {
            if (r.algorithm != alg) continue;
            pts.emplace_back(x_of(r.config.n_way, r.config.n_tasks), plot_y(r.mean));
        }
        std::sort(pts.begin(), pts.end());
        os << "<polyline fill=\"none\" stroke=\"" << color_for(alg) << "\" stroke-width=\"2\" points=\"";
        for (std::size_t i = 0; i < pts.size(); ++i)
            os << (i ? " " : "") << fixed(pts[i].first) << ',' << fixed(pts[i].second);
        os << "\"/>\n";
        for (const auto& [x, y] : pts)
            os << "<circle cx=\"" << fixed(x) << "\" cy=\"" << fixed(y) << "\" r=\"3\" fill=\"" << color_for(alg)
               << "\"/>\n";
    }
    svg_legend(os, algorithms);
    os << "</svg>\n";
    return os.str();
}

std::string winner_map_svg(const std::vector<WinnerRow>& rows) {
    std::vector<std::string> names;
    std::ostringstream os;
    svg_frame(os, "Best algorithm per configuration", "zero-shot mean accuracy");
    for (int i = 0; i <= 5; ++i) {
        const double frac = i / 5.0;
        os << "<text x=\"" << fixed(plot_x(frac)) << "\" y=\"" << kHeight - kBottom + 16 << "\" text-anchor=\"middle\">"
           << fixed(frac, 1) << "</text>\n";
    }
    for (const WinnerRow& w : rows) {
        if (std::isnan(w.zero_shot_mean) || w.winners.empty()) continue;
        const std::string& lead = w.winners.front();
        if (std::find(names.begin(), names.end(), lead) == names.end()) names.push_back(lead);
        const double x = plot_x(w.zero_shot_mean), y = plot_y(w.best_mean);
        os << "<circle cx=\"" << fixed(x) << "\" cy=\"" << fixed(y) << "\" r=\"5\" fill=\"" << color_for(lead) << "\""
           << (w.winners.size() > 1 ? " stroke=\"black\" stroke-width=\"1.5\"" : "") << ">";
        os << "<title>" << xml_escape(w.dataset + " " + config_label(w.config)) << "</title></circle>\n";
        os << "<text x=\"" << fixed(x + 7) << "\" y=\"" << fixed(y - 6) << "\" font-size=\"9\">"
           << xml_escape(config_label(w.config)) << "</text>\n";
    }
    svg_legend(os, names);
    os << "</svg>\n";
    return os.str();
}

std::vector<EvalReport> parse_results_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    bool header = false;
    using Key = std::tuple<std::string, std::string, std::string, std::size_t, std::size_t>;
    std::vector<Key> order;
    std::map<Key, EvalReport> groups;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line.front() == '#') continue;
        const auto f = split_csv_line(line);
        if (!header) {
            const std::vector<std::string> expected = {"dataset", "split", "algorithm", "N",
                                                       "T",       "seed",  "task_id",   "accuracy"};
            if (f != expected) throw FormatError("results CSV: unexpected header '" + line + "'");
            header = true;
            continue;
        }
        if (f.size() != 8) throw FormatError("results CSV line " + std::to_string(line_no) + ": expected 8 fields");
        const Key key{f[0], f[1], f[2], parse_number<std::size_t>(f[3], line_no), parse_number<std::size_t>(f[4], line_no)};
        auto [it, inserted] = groups.try_emplace(key);
        EvalReport& r = it->second;
        if (inserted) {
            order.push_back(key);
            r.dataset = f[0];
            r.split = f[1];
            r.algorithm = f[2];
            r.config = {std::get<3>(key), std::get<4>(key)};
        }
        const auto seed = parse_number<std::uint64_t>(f[5], line_no);
        const double acc = parse_number<double>(f[7], line_no);
        if (!(acc >= 0.0 && acc <= 1.0))
            throw FormatError("results CSV line " + std::to_string(line_no) + ": accuracy outside [0, 1]");
        if (r.seeds.empty() || r.seeds.back().seed != seed) {
            r.seeds.push_back({});
            r.seeds.back().seed = seed;
        }
        r.seeds.back().task_accuracy.push_back(acc);
    }
    if (!header) throw FormatError("results CSV: missing header");
    std::vector<EvalReport> reports;
    for (const Key& key : order) {
        EvalReport r = groups[key];
        for (SeedResult& s : r.seeds) {
            double sum = 0.0;
            for (double a : s.task_accuracy) sum += a;
            s.mean = sum / static_cast<double>(s.task_accuracy.size());
        }
        aggregate(r);
        reports.push_back(std::move(r));
    }
    for (EvalReport& r : reports) {
        for (const EvalReport& z : reports) {
            if (z.algorithm == "zeroshot" && z.dataset == r.dataset && z.split == r.split && z.config == r.config)
                r.zero_shot_mean = z.mean;
        }
    }
    return reports;
}

void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open for writing", tmp.string());
        out << content;
        if (!out) throw IoError("write failed", tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("cannot rename into place (" + ec.message() + ")", path.string());
}

RenderedFiles render_reports(const std::vector<EvalReport>& reports, const std::filesystem::path& out_dir) {
    if (reports.empty()) throw UsageError("render_reports: no reports");
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create output directory (" + ec.message() + ")", out_dir.string());
    const std::vector<WinnerRow> winners = winner_map(reports);
    RenderedFiles files{out_dir / "results.csv", out_dir / "aggregate.csv", out_dir / "winners.csv",
                        out_dir / "accuracy.svg", out_dir / "winner_map.svg"};
    // Render everything before touching the directory so a failure leaves no partial set.
    const std::string results = results_csv(reports);
    const std::string agg = aggregate_csv(reports);
    const std::string win = winner_csv(winners);
    const std::string acc_svg = accuracy_svg(reports);
    const std::string win_svg = winner_map_svg(winners);
    write_file_atomic(files.results, results);
    write_file_atomic(files.aggregate, agg);
    write_file_atomic(files.winners, win);
    write_file_atomic(files.accuracy_plot, acc_svg);
    write_file_atomic(files.winner_plot, win_svg);
    return files;
}

}  // namespace fewshot
