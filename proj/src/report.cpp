#include "pi/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>

#include "pi/error.hpp"

namespace pi {

namespace {

struct Cells {
    std::string family;
    std::optional<double> top1;
    std::optional<double> top5;
};

struct RunTable {
    std::vector<std::string> order;
    std::map<std::string, Cells> datasets;
};

bool is_classification(const EvalRow& r) { return r.metric == "top1" || r.metric == "top5"; }

bool is_retrieval(const EvalRow& r) { return r.metric.rfind("i2t_r", 0) == 0 || r.metric.rfind("t2i_r", 0) == 0; }

RunTable classification_table(std::span<const EvalRow> rows, const std::string& run) {
    RunTable t;
    for (const EvalRow& r : rows) {
        if (r.run_id != run || !is_classification(r)) continue;
        auto [it, fresh] = t.datasets.try_emplace(r.dataset);
        if (fresh) {
            t.order.push_back(r.dataset);
            it->second.family = r.family;
        }
        (r.metric == "top1" ? it->second.top1 : it->second.top5) = r.value;
    }
    return t;
}

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

std::string metric_label(const std::string& metric) {
    const std::string dir = metric.substr(0, 3) == "i2t" ? "I→T" : "T→I";
    return dir + " R@" + metric.substr(5);
}

std::string cell(const std::optional<double>& v) { return v ? format_pp(*v) : "n/a"; }

std::string delta_cell(const std::optional<double>& o, const std::optional<double>& b) {
    return o && b ? format_delta(*o - *b) : "n/a";
}

bool has_run(std::span<const EvalRow> rows, const std::string& run) {
    for (const EvalRow& r : rows)
        if (r.run_id == run) return true;
    return false;
}

}  // namespace

std::string format_pp(double pp) { return fmt("%.1f", pp); }

std::string format_delta(double pp) {
    const std::string s = fmt("%+.1f", pp);
    return s == "-0.0" ? "+0.0" : s;
}

std::string render_report(std::span<const EvalRow> rows, std::span<const ScalingFitRow> fits,
                          const ReportOptions& options) {
    require(has_run(rows, options.ours_run), ErrorKind::input, "no rows for run '" + options.ours_run + "'");
    require(has_run(rows, options.baseline_run), ErrorKind::input,
            "no rows for baseline run '" + options.baseline_run + "'");
    if (options.control_run) {
        require(has_run(rows, *options.control_run), ErrorKind::input,
                "no rows for control run '" + *options.control_run + "'");
    }

    const RunTable ours = classification_table(rows, options.ours_run);
    const RunTable base = classification_table(rows, options.baseline_run);
    {
        std::set<std::string> a(ours.order.begin(), ours.order.end()), b(base.order.begin(), base.order.end());
        require(a == b, ErrorKind::input, "runs cover different classification datasets");
    }

    std::ostringstream md;
    md << "# " << options.title << "\n\n";
    md << "Ours: `" << options.ours_run << "`. Baseline: `" << options.baseline_run << "`. Values in %, deltas in pp.\n";

    if (!ours.order.empty()) {
        std::vector<std::string> families;
        for (const std::string& d : ours.order) {
            const std::string& f = ours.datasets.at(d).family;
            if (std::find(families.begin(), families.end(), f) == families.end()) families.push_back(f);
        }

        md << "\n## Zero-shot classification\n";
        std::size_t wins = 0, ties = 0, losses = 0;
        for (const std::string& family : families) {
            md << "\n### " << family << "\n\n";
            md << "| Dataset | Ours@1 | Base@1 | Δ@1 | Ours@5 | Base@5 | Δ@5 |\n";
            md << "|---|---:|---:|---:|---:|---:|---:|\n";
            for (const std::string& d : ours.order) {
                const Cells& o = ours.datasets.at(d);
                if (o.family != family) continue;
                const Cells& b = base.datasets.at(d);
                const std::string d1 = delta_cell(o.top1, b.top1);
                if (o.top1 && b.top1) {
                    if (d1 == "+0.0") {
                        ++ties;
                    } else if (d1.front() == '-') {
                        ++losses;
                    } else {
                        ++wins;
                    }
                }
                md << "| " << d << " | " << cell(o.top1) << " | " << cell(b.top1) << " | " << d1 << " | "
                   << cell(o.top5) << " | " << cell(b.top5) << " | " << delta_cell(o.top5, b.top5) << " |\n";
            }
        }

        md << "\n### Family means\n\n";
        md << "| Family | Datasets | Ours@1 | Base@1 | Δ@1 | Ours@5 | Base@5 | Δ@5 |\n";
        md << "|---|---:|---:|---:|---:|---:|---:|---:|\n";
        for (const std::string& family : families) {
            double o1 = 0, b1 = 0, o5 = 0, b5 = 0;
            std::size_t n1 = 0, n5 = 0;
            for (const std::string& d : ours.order) {
                const Cells& o = ours.datasets.at(d);
                if (o.family != family) continue;
                const Cells& b = base.datasets.at(d);
                if (o.top1 && b.top1) {
                    o1 += *o.top1;
                    b1 += *b.top1;
                    ++n1;
                }
                if (o.top5 && b.top5) {
                    o5 += *o.top5;
                    b5 += *b.top5;
                    ++n5;
                }
            }
            auto mean = [](double s, std::size_t n) -> std::optional<double> {
                if (n == 0) return std::nullopt;
                return s / static_cast<double>(n);
            };
            const auto mo1 = mean(o1, n1), mb1 = mean(b1, n1), mo5 = mean(o5, n5), mb5 = mean(b5, n5);
            md << "| " << family << " | " << n1 << " | " << cell(mo1) << " | " << cell(mb1) << " | "
               << delta_cell(mo1, mb1) << " | " << cell(mo5) << " | " << cell(mb5) << " | " << delta_cell(mo5, mb5)
               << " |\n";
        }
        md << "\nOurs improves top-1 on " << wins << " of " << wins + ties + losses << " classification datasets ("
           << ties << (ties == 1 ? " tie, " : " ties, ") << losses << (losses == 1 ? " loss).\n" : " losses).\n");
    }

    // Retrieval columns in order of first appearance.
    std::vector<std::pair<std::string, std::string>> columns;
    std::map<std::pair<std::string, std::string>, std::map<std::string, double>> values;
    for (const EvalRow& r : rows) {
        if (!is_retrieval(r)) continue;
        const auto key = std::make_pair(r.dataset, r.metric);
        if (r.run_id == options.ours_run || r.run_id == options.baseline_run) {
            if (!values.count(key)) columns.push_back(key);
            values[key][r.run_id] = r.value;
        }
    }
    if (!columns.empty()) {
        md << "\n## Zero-shot retrieval\n\n| Model |";
        for (const auto& [d, m] : columns) md << ' ' << d << ' ' << metric_label(m) << " |";
        md << "\n|---|";
        for (std::size_t i = 0; i < columns.size(); ++i) md << "---:|";
        md << '\n';
        auto value = [&](const std::pair<std::string, std::string>& c, const std::string& run) -> std::optional<double> {
            const auto& m = values.at(c);
            auto it = m.find(run);
            if (it == m.end()) return std::nullopt;
            return it->second;
        };
        for (const std::string& run : {options.baseline_run, options.ours_run}) {
            const std::string& other = run == options.ours_run ? options.baseline_run : options.ours_run;
            md << "| " << (run == options.ours_run ? "Ours" : "Baseline") << " |";
            for (const auto& c : columns) {
                const auto v = value(c, run), w = value(c, other);
                const bool bold = v && w && std::round(*v * 10.0) >= std::round(*w * 10.0);
                md << ' ' << (bold ? "**" + cell(v) + "**" : cell(v)) << " |";
            }
            md << '\n';
        }
        md << "| Δ |";
        for (const auto& c : columns) md << ' ' << delta_cell(value(c, options.ours_run), value(c, options.baseline_run)) << " |";
        md << '\n';
    }

    // Scaling exponents for metrics fitted in both runs.
    std::vector<std::string> metrics;
    std::map<std::string, std::map<std::string, PowerLawFit>> by_metric;
    for (const ScalingFitRow& f : fits) {
        if (f.run_id != options.ours_run && f.run_id != options.baseline_run) continue;
        if (!by_metric.count(f.metric)) metrics.push_back(f.metric);
        by_metric[f.metric][f.run_id] = f.fit;
    }
    // One row per panel when family or retrieval curves are present.
    const bool panels = std::any_of(metrics.begin(), metrics.end(), [](const std::string& m) {
        return m.rfind("family/", 0) == 0 || m.rfind("retrieval/", 0) == 0;
    });
    bool header = false;
    for (const std::string& m : metrics) {
        if (panels && m.rfind("family/", 0) != 0 && m.rfind("retrieval/", 0) != 0) continue;
        const auto& runs = by_metric.at(m);
        if (!runs.count(options.ours_run) || !runs.count(options.baseline_run)) continue;
        if (!header) {
            md << "\n## Scaling exponents\n\nPower-law fits value = a · samples^β.\n\n";
            md << "| Metric | β ours | β base | Δβ | R² ours | R² base |\n|---|---:|---:|---:|---:|---:|\n";
            header = true;
        }
        const PowerLawFit& o = runs.at(options.ours_run);
        const PowerLawFit& b = runs.at(options.baseline_run);
        md << "| " << m << " | " << fmt("%.3f", o.beta) << " | " << fmt("%.3f", b.beta) << " | "
           << fmt("%+.3f", o.beta - b.beta) << " | " << fmt("%.3f", o.r_squared) << " | " << fmt("%.3f", b.r_squared)
           << " |\n";
    }

    if (options.control_run) {
        const std::string& ctl = *options.control_run;
        md << "\n## Control: `" << ctl << "` vs baseline\n\n";
        md << "| Dataset | Metric | Baseline | Control | Δ |\n|---|---|---:|---:|---:|\n";
        std::map<std::pair<std::string, std::string>, std::map<std::string, double>> shared;
        std::vector<std::pair<std::string, std::string>> order;
        for (const EvalRow& r : rows) {
            if (r.run_id != ctl && r.run_id != options.baseline_run) continue;
            const auto key = std::make_pair(r.dataset, r.metric);
            if (!shared.count(key)) order.push_back(key);
            shared[key][r.run_id] = r.value;
        }
        for (const auto& key : order) {
            const auto& m = shared.at(key);
            if (!m.count(ctl) || !m.count(options.baseline_run)) continue;
            const double b = m.at(options.baseline_run), c = m.at(ctl);
            md << "| " << key.first << " | " << key.second << " | " << format_pp(b) << " | " << format_pp(c) << " | "
               << format_delta(c - b) << " |\n";
        }
    }
    return md.str();
}

}  // namespace pi
