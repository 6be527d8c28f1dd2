#include <Eigen/Dense>

#include <cmath>
#include <fstream>

#include "doctest.h"
#include "pi/scaling.hpp"
#include "test_util.hpp"

using namespace pi;
using pi::testing::check_error;

namespace {

ScalingCurve power_curve(const std::string& run, const std::string& metric, double a, double beta,
                         std::size_t n = 8) {
    ScalingCurve c{run, metric, {}};
    for (std::size_t i = 1; i <= n; ++i) {
        const std::uint64_t s = 1000 * i;
        c.points.push_back({s, a * std::pow(static_cast<double>(s), beta)});
    }
    return c;
}

// Least squares through a QR solve of [1, log x] against log y.
std::pair<double, double> qr_oracle(const ScalingCurve& c) {
    const auto n = static_cast<Eigen::Index>(c.points.size());
    Eigen::MatrixXd design(n, 2);
    Eigen::VectorXd y(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        design(i, 0) = 1.0;
        design(i, 1) = std::log(static_cast<double>(c.points[static_cast<std::size_t>(i)].samples_seen));
        y(i) = std::log(c.points[static_cast<std::size_t>(i)].value);
    }
    const Eigen::VectorXd coef = design.colPivHouseholderQr().solve(y);
    return {std::exp(coef(0)), coef(1)};
}

}  // namespace

TEST_CASE("exact square-root curve recovers its exponent") {
    ScalingCurve c{"r", "m", {}};
    for (std::uint64_t x : {100, 10000, 1000000}) c.points.push_back({x, std::sqrt(static_cast<double>(x))});
    const PowerLawFit f = fit_power_law(c);
    CHECK(std::abs(f.beta - 0.5) < 1e-9);
    CHECK(std::abs(f.a - 1.0) < 1e-9);
    CHECK(std::abs(f.r_squared - 1.0) < 1e-9);
    CHECK(f.n_points == 3);

    ScalingReport r;
    r.fits.push_back({"m", "r", f});
    const auto dir = pi::testing::scratch_dir("scaling_exact");
    export_plot_data(r, dir / "points.csv", dir / "fits.csv");
    const auto back = read_fits_csv(dir / "fits.csv");
    REQUIRE(back.size() == 1);
    CHECK(std::abs(back[0].fit.beta - 0.5) < 1e-9);
}

TEST_CASE("constant curve has zero exponent") {
    ScalingCurve c{"r", "m", {{10, 7.0}, {100, 7.0}, {1000, 7.0}}};
    const PowerLawFit f = fit_power_law(c);
    CHECK(std::abs(f.beta) < 1e-12);
    CHECK(f.a == doctest::Approx(7.0).epsilon(1e-12));
    CHECK(f.r_squared == 1.0);
}

TEST_CASE("noisy curve agrees with a QR least-squares oracle") {
    Rng rng(11);
    ScalingCurve c{"r", "m", {}};
    for (std::uint64_t i = 1; i <= 50; ++i) {
        const double x = 500.0 * static_cast<double>(i);
        c.points.push_back({500 * i, 3.0 * std::pow(x, 0.3) * std::exp(rng.normal() * 0.01)});
    }
    const PowerLawFit f = fit_power_law(c);
    const auto [a, beta] = qr_oracle(c);
    CHECK(std::abs(f.beta - 0.3) < 0.02);
    CHECK(std::abs(f.beta - beta) < 1e-9);
    CHECK(std::abs(f.a - a) / a < 1e-9);
    CHECK(f.r_squared > 0.9);
    CHECK(f.r_squared <= 1.0);
}

TEST_CASE("exponent is invariant to rescaling either axis") {
    Rng rng(5);
    ScalingCurve c{"r", "m", {}};
    for (std::uint64_t i = 1; i <= 20; ++i) c.points.push_back({100 * i, 0.1 + rng.uniform(0.0, 0.5)});
    const PowerLawFit base = fit_power_law(c);

    ScalingCurve ys = c;
    for (CurvePoint& p : ys.points) p.value *= 37.0;
    const PowerLawFit fy = fit_power_law(ys);
    CHECK(std::abs(fy.beta - base.beta) < 1e-12);
    CHECK(fy.a == doctest::Approx(37.0 * base.a).epsilon(1e-12));
    CHECK(std::abs(fy.r_squared - base.r_squared) < 1e-12);

    ScalingCurve xs = c;
    for (CurvePoint& p : xs.points) p.samples_seen *= 64;
    const PowerLawFit fx = fit_power_law(xs);
    CHECK(std::abs(fx.beta - base.beta) < 1e-12);
    CHECK(std::abs(fx.r_squared - base.r_squared) < 1e-12);
}

TEST_CASE("degenerate curves are input errors") {
    check_error([] { fit_power_law(ScalingCurve{"r", "m", {}}); }, ErrorKind::input);
    check_error([] { fit_power_law(ScalingCurve{"r", "m", {{10, 0.5}}}); }, ErrorKind::input);
    check_error([] { fit_power_law(ScalingCurve{"r", "m", {{0, 0.1}, {10, 0.5}}}); }, ErrorKind::input);
}

TEST_CASE("non-positive values are dropped with a warning") {
    ScalingCurve c{"r", "m", {{10, 0.0}, {100, 0.2}, {1000, 0.4}, {10000, -1.0}}};
    std::vector<std::string> warnings;
    const PowerLawFit f = fit_power_law(c, std::nullopt, [&](const std::string& w) { warnings.push_back(w); });
    CHECK(f.n_points == 2);
    CHECK(warnings.size() == 2);
    CHECK(f.beta == doctest::Approx(std::log10(2.0)).epsilon(1e-12));
}

TEST_CASE("fit window restricts the points") {
    ScalingCurve c = power_curve("r", "m", 1.0, 0.2);
    c.points[0].value = 1e-6;
    const PowerLawFit f = fit_power_law(c, FitWindow{2000, 8000});
    CHECK(f.n_points == 7);
    CHECK(f.beta == doctest::Approx(0.2).epsilon(1e-12));
}

TEST_CASE("curves from metric records group by run and metric") {
    std::vector<MetricRecord> recs = {
        {"pi", "stage2", 0, "acc", 0.1, 0.0},   {"pi", "stage2", 100, "acc", 0.2, 0.0},
        {"base", "stage2", 100, "acc", 0.15, 0.0}, {"pi", "stage2", 50, "acc", 0.12, 0.0},
        {"pi", "stage2", 100, "loss", 3.0, 0.0},
    };
    const auto curves = curves_from_metrics(recs);
    REQUIRE(curves.size() == 3);
    CHECK(curves[0].run_id == "pi");
    CHECK(curves[0].metric == "acc");
    REQUIRE(curves[0].points.size() == 3);
    CHECK(curves[0].points[1] == CurvePoint{50, 0.12});
    CHECK(curves[1].run_id == "base");
    CHECK(curves[2].metric == "loss");
}

TEST_CASE("identical runs compare to zero deltas") {
    const std::vector<ScalingCurve> a = {power_curve("pi", "acc", 0.01, 0.3)};
    const std::vector<ScalingCurve> b = {power_curve("base", "acc", 0.01, 0.3)};
    const ScalingReport r = compare_runs(a, b);
    REQUIRE(r.comparisons.size() == 1);
    CHECK(r.comparisons[0].beta_delta == 0.0);
    CHECK(r.comparisons[0].head_start_delta == 0.0);
    CHECK(r.comparisons[0].final_delta == 0.0);
    CHECK(r.fits.size() == 2);
    CHECK(r.curves.size() == 2);
}

TEST_CASE("steeper run shows a positive exponent delta") {
    const std::vector<ScalingCurve> a = {power_curve("pi", "acc", 0.01, 0.4)};
    const std::vector<ScalingCurve> b = {power_curve("base", "acc", 0.01, 0.3)};
    const ScalingReport r = compare_runs(a, b);
    REQUIRE(r.comparisons.size() == 1);
    const RunComparison& c = r.comparisons[0];
    CHECK(c.beta_delta == doctest::Approx(0.1).epsilon(1e-9));
    CHECK(c.first_shared == 1000);
    CHECK(c.last_shared == 8000);
    const double expect = 100.0 * 0.01 * (std::pow(8000.0, 0.4) - std::pow(8000.0, 0.3));
    CHECK(c.final_delta == doctest::Approx(expect).epsilon(1e-12));
    CHECK(c.head_start_delta > 0.0);
}

TEST_CASE("comparison errors and skips") {
    const std::vector<ScalingCurve> a = {power_curve("pi", "acc", 0.01, 0.4)};
    const std::vector<ScalingCurve> other = {power_curve("base", "loss", 1.0, -0.1)};
    check_error([&] { compare_runs(a, other); }, ErrorKind::input);

    std::vector<ScalingCurve> shifted = {power_curve("base", "acc", 0.01, 0.3)};
    for (CurvePoint& p : shifted[0].points) p.samples_seen += 1;
    check_error([&] { compare_runs(a, shifted); }, ErrorKind::input);

    std::vector<ScalingCurve> short_pi = {ScalingCurve{"pi", "acc", {{1000, 0.2}}}};
    std::vector<std::string> warnings;
    const ScalingReport r = compare_runs(short_pi, std::vector<ScalingCurve>{power_curve("base", "acc", 0.01, 0.3)},
                                         std::nullopt, [&](const std::string& w) { warnings.push_back(w); });
    CHECK(r.comparisons.empty());
    CHECK(warnings.size() == 1);
}

TEST_CASE("plot export round-trips bitwise") {
    Rng rng(2);
    std::vector<ScalingCurve> a = {power_curve("pi", "acc", 0.0123, 0.31)};
    std::vector<ScalingCurve> b = {power_curve("base", "acc", 0.0101, 0.29)};
    for (CurvePoint& p : a[0].points) p.value *= 1.0 + 1e-3 * rng.normal();
    const ScalingReport r = compare_runs(a, b);
    const auto dir = pi::testing::scratch_dir("scaling");
    export_plot_data(r, dir / "points.csv", dir / "fits.csv");

    const auto fits = read_fits_csv(dir / "fits.csv");
    CHECK(fits == r.fits);
    const auto curves = read_plot_csv(dir / "points.csv");
    REQUIRE(curves.size() == 2);
    CHECK(curves[0].points == a[0].points);
    CHECK(curves[1].points == b[0].points);

    std::ifstream in(dir / "fits.csv");
    std::string header;
    std::getline(in, header);
    CHECK(header == "metric,run_id,a,beta,r_squared,n_points");
    std::ifstream pin(dir / "points.csv");
    std::getline(pin, header);
    CHECK(header == "metric,run_id,samples_seen,value");
}

TEST_CASE("malformed plot files are rejected") {
    const auto dir = pi::testing::scratch_dir("scaling_bad");
    check_error([&] { read_fits_csv(dir / "missing.csv"); }, ErrorKind::io);
    {
        std::ofstream(dir / "h.csv") << "metric,run,a\n";
    }
    check_error([&] { read_fits_csv(dir / "h.csv"); }, ErrorKind::format);
    {
        std::ofstream(dir / "n.csv") << plot_csv_header << "\nacc,pi,10,abc\n";
    }
    check_error([&] { read_plot_csv(dir / "n.csv"); }, ErrorKind::format);
}
