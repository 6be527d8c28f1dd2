#include "pi/scaling.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include "pi/error.hpp"

namespace pi {

namespace {

std::string fmt17(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

void emit(const WarnFn& warn, const std::string& msg) {
    if (warn) {
        warn(msg);
    } else {
        std::cerr << "warning: " << msg << '\n';
    }
}

std::vector<std::string> split(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

double parse_double(const std::string& s, const std::string& where) {
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used == s.size()) return v;
    } catch (const std::exception&) {
    }
    fail(ErrorKind::format, where + ": bad number '" + s + "'");
}

std::uint64_t parse_u64(const std::string& s, const std::string& where) {
    try {
        std::size_t used = 0;
        const unsigned long long v = std::stoull(s, &used);
        if (used == s.size()) return v;
    } catch (const std::exception&) {
    }
    fail(ErrorKind::format, where + ": bad count '" + s + "'");
}

std::ifstream open_with_header(const std::filesystem::path& path, const char* header) {
    std::ifstream in(path);
    require(static_cast<bool>(in), ErrorKind::io, "cannot open " + path.string());
    std::string line;
    require(std::getline(in, line) && line == header, ErrorKind::format,
            path.string() + ": expected header '" + header + "'");
    return in;
}

double value_at(const ScalingCurve& c, std::uint64_t samples) {
    for (const CurvePoint& p : c.points)
        if (p.samples_seen == samples) return p.value;
    fail(ErrorKind::contract, "milestone missing from curve");
}

}  // namespace

PowerLawFit fit_power_law(const ScalingCurve& curve, const std::optional<FitWindow>& window, const WarnFn& warn) {
    std::vector<double> xs, ys;
    for (const CurvePoint& p : curve.points) {
        if (window && (p.samples_seen < window->min_samples || p.samples_seen > window->max_samples)) continue;
        // The step-zero snapshot has no place on a log axis.
        if (p.samples_seen == 0) continue;
        if (!(p.value > 0.0)) {
            emit(warn, curve.run_id + "/" + curve.metric + ": dropping non-positive value " + fmt17(p.value) +
                           " at samples_seen " + std::to_string(p.samples_seen));
            continue;
        }
        xs.push_back(std::log(static_cast<double>(p.samples_seen)));
        ys.push_back(std::log(p.value));
    }
    const std::size_t n = xs.size();
    require(n >= 2, ErrorKind::input,
            curve.run_id + "/" + curve.metric + ": power-law fit needs at least 2 usable points, got " +
                std::to_string(n));
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        mx += xs[i];
        my += ys[i];
    }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    double sxx = 0.0, sxy = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        sxx += (xs[i] - mx) * (xs[i] - mx);
        sxy += (xs[i] - mx) * (ys[i] - my);
        syy += (ys[i] - my) * (ys[i] - my);
    }
    require(sxx > 0.0, ErrorKind::input, curve.run_id + "/" + curve.metric + ": power-law fit needs distinct x");
    PowerLawFit f;
    f.n_points = n;
    f.beta = sxy / sxx;
    const double intercept = my - f.beta * mx;
    f.a = std::exp(intercept);
    double ss_res = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double r = ys[i] - (intercept + f.beta * xs[i]);
        ss_res += r * r;
    }
    f.r_squared = syy > 0.0 ? std::clamp(1.0 - ss_res / syy, 0.0, 1.0) : 1.0;
    return f;
}

std::vector<ScalingCurve> curves_from_metrics(std::span<const MetricRecord> records) {
    std::vector<ScalingCurve> out;
    std::map<std::pair<std::string, std::string>, std::size_t> slot;
    std::vector<std::map<std::uint64_t, double>> values;
    for (const MetricRecord& r : records) {
        const auto key = std::make_pair(r.run_id, r.metric);
        if (!slot.count(key)) {
            slot[key] = out.size();
            out.push_back(ScalingCurve{r.run_id, r.metric, {}});
            values.emplace_back();
        }
        values[slot[key]][r.samples_seen] = r.value;
    }
    for (std::size_t i = 0; i < out.size(); ++i)
        for (const auto& [s, v] : values[i]) out[i].points.push_back(CurvePoint{s, v});
    return out;
}

ScalingReport compare_runs(std::span<const ScalingCurve> pi_curves, std::span<const ScalingCurve> base_curves,
                           const std::optional<FitWindow>& window, const WarnFn& warn) {
    ScalingReport report;
    report.curves.assign(pi_curves.begin(), pi_curves.end());
    report.curves.insert(report.curves.end(), base_curves.begin(), base_curves.end());
    std::map<std::string, const ScalingCurve*> base_by_metric;
    for (const ScalingCurve& c : base_curves) base_by_metric.emplace(c.metric, &c);

    auto try_fit = [&](const ScalingCurve& c) -> std::optional<PowerLawFit> {
        try {
            PowerLawFit f = fit_power_law(c, window, warn);
            report.fits.push_back(ScalingFitRow{c.metric, c.run_id, f});
            return f;
        } catch (const Error& e) {
            if (e.kind() != ErrorKind::input) throw;
            emit(warn, e.what());
            return std::nullopt;
        }
    };

    bool any_shared = false;
    for (const ScalingCurve& pc : pi_curves) {
        auto it = base_by_metric.find(pc.metric);
        if (it == base_by_metric.end()) continue;
        any_shared = true;
        const ScalingCurve& bc = *it->second;
        std::set<std::uint64_t> base_x;
        for (const CurvePoint& p : bc.points) base_x.insert(p.samples_seen);
        std::vector<std::uint64_t> shared;
        for (const CurvePoint& p : pc.points)
            if (base_x.count(p.samples_seen)) shared.push_back(p.samples_seen);
        require(!shared.empty(), ErrorKind::input, "metric " + pc.metric + ": runs share no milestone");
        const auto fp = try_fit(pc);
        const auto fb = try_fit(bc);
        if (!fp || !fb) continue;
        RunComparison c;
        c.metric = pc.metric;
        c.beta_pi = fp->beta;
        c.beta_base = fb->beta;
        c.beta_delta = fp->beta - fb->beta;
        c.first_shared = shared.front();
        c.last_shared = shared.back();
        c.head_start_delta = 100.0 * (value_at(pc, c.first_shared) - value_at(bc, c.first_shared));
        c.final_delta = 100.0 * (value_at(pc, c.last_shared) - value_at(bc, c.last_shared));
        report.comparisons.push_back(c);
    }
    require(any_shared, ErrorKind::input, "the two runs share no metric");
    return report;
}

void export_plot_data(const ScalingReport& report, const std::filesystem::path& points_path,
                      const std::filesystem::path& fits_path) {
    for (const auto* p : {&points_path, &fits_path})
        if (p->has_parent_path()) std::filesystem::create_directories(p->parent_path());
    std::ofstream points(points_path, std::ios::trunc);
    require(static_cast<bool>(points), ErrorKind::io, "cannot write " + points_path.string());
    points << plot_csv_header << '\n';
    for (const ScalingCurve& c : report.curves)
        for (const CurvePoint& p : c.points)
            points << c.metric << ',' << c.run_id << ',' << p.samples_seen << ',' << fmt17(p.value) << '\n';
    require(static_cast<bool>(points), ErrorKind::io, "write failed for " + points_path.string());

    std::ofstream fits(fits_path, std::ios::trunc);
    require(static_cast<bool>(fits), ErrorKind::io, "cannot write " + fits_path.string());
    fits << fits_csv_header << '\n';
    for (const ScalingFitRow& r : report.fits) {
        fits << r.metric << ',' << r.run_id << ',' << fmt17(r.fit.a) << ',' << fmt17(r.fit.beta) << ','
             << fmt17(r.fit.r_squared) << ',' << r.fit.n_points << '\n';
    }
    require(static_cast<bool>(fits), ErrorKind::io, "write failed for " + fits_path.string());
}

std::vector<ScalingFitRow> read_fits_csv(const std::filesystem::path& path) {
    std::ifstream in = open_with_header(path, fits_csv_header);
    std::vector<ScalingFitRow> rows;
    std::string line;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const std::string where = path.string() + ":" + std::to_string(lineno);
        const auto cells = split(line);
        require(cells.size() == 6, ErrorKind::format, where + ": expected 6 fields");
        ScalingFitRow r;
        r.metric = cells[0];
        r.run_id = cells[1];
        r.fit.a = parse_double(cells[2], where);
        r.fit.beta = parse_double(cells[3], where);
        r.fit.r_squared = parse_double(cells[4], where);
        r.fit.n_points = parse_u64(cells[5], where);
        rows.push_back(std::move(r));
    }
    return rows;
}

std::vector<ScalingCurve> read_plot_csv(const std::filesystem::path& path) {
    std::ifstream in = open_with_header(path, plot_csv_header);
    std::vector<MetricRecord> records;
    std::string line;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const std::string where = path.string() + ":" + std::to_string(lineno);
        const auto cells = split(line);
        require(cells.size() == 4, ErrorKind::format, where + ": expected 4 fields");
        MetricRecord r;
        r.metric = cells[0];
        r.run_id = cells[1];
        r.samples_seen = parse_u64(cells[2], where);
        r.value = parse_double(cells[3], where);
        records.push_back(std::move(r));
    }
    return curves_from_metrics(records);
}

}  // namespace pi
