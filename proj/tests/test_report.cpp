#include <cmath>
#include <cstdio>
#include <map>

#include "doctest.h"
#include "pi/report.hpp"
#include "test_util.hpp"

using namespace pi;
using pi::testing::check_error;

namespace {

const std::filesystem::path fixtures = PI_FIXTURE_DIR;

std::vector<EvalRow> both_tables() {
    auto rows = read_eval_csv(fixtures / "table1.csv");
    const auto ret = read_eval_csv(fixtures / "table2.csv");
    rows.insert(rows.end(), ret.begin(), ret.end());
    return rows;
}

bool contains(const std::string& hay, const std::string& needle) { return hay.find(needle) != std::string::npos; }

std::string one_decimal(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.1f", v);
    return buf;
}

}  // namespace

TEST_CASE("classification fixture reproduces the printed ImageNet row") {
    const auto rows = both_tables();
    const std::string md = render_report(rows, {});
    CHECK(contains(md, "| ImageNet-1k | 18.9 | 15.1 | +3.8 | 39.0 | 33.3 | +5.7 |"));
    CHECK(contains(md, "23 of 29"));
    CHECK(contains(md, "(1 tie, 5 losses)"));
    CHECK(contains(md, "| Caltech-101 | 44.7 | 47.9 | -3.2 |"));
    CHECK(contains(md, "| Rendered-SST2 | 49.9 | 49.9 | +0.0 | n/a | n/a | n/a |"));
}

TEST_CASE("retrieval fixture bolds the winner") {
    const auto rows = both_tables();
    const std::string md = render_report(rows, {});
    CHECK(contains(md, "| Baseline | 14.2 | 32.9 | 24.3 | 51.0 | 7.3 | 19.7 | 14.7 | 33.1 |"));
    CHECK(contains(md, "| Ours | **21.3** | **45.3** | **31.6** | **60.7** | **10.0** | **25.2** | **18.0** | **38.8** |"));
    CHECK(contains(md, "| Δ | +7.1 | +12.4 | +7.3 | +9.7 | +2.7 | +5.5 | +3.3 | +5.7 |"));
    CHECK(contains(md, "Flickr30k I→T R@1"));
    CHECK(!contains(md, "**14.2**"));
}

TEST_CASE("family means match an independent spreadsheet-style oracle") {
    const auto rows = read_eval_csv(fixtures / "table1.csv");
    const std::string md = render_report(rows, {});
    // Sum by (family, metric, run) directly over CSV cells.
    std::map<std::string, std::map<std::string, std::pair<double, int>>> sums;
    std::map<std::string, int> has_top5;
    for (const EvalRow& r : rows) {
        auto& s = sums[r.family][r.metric + "/" + r.run_id];
        s.first += r.value;
        s.second += 1;
    }
    std::vector<std::string> seen;
    for (const EvalRow& r : rows)
        if (std::find(seen.begin(), seen.end(), r.family) == seen.end()) seen.push_back(r.family);
    REQUIRE(seen.size() == 5);
    for (const std::string& f : seen) {
        auto mean = [&](const std::string& key) { return sums[f][key].first / sums[f][key].second; };
        const double o1 = mean("top1/ours"), b1 = mean("top1/baseline");
        const double o5 = mean("top5/ours"), b5 = mean("top5/baseline");
        char d1[32], d5[32];
        std::snprintf(d1, sizeof d1, "%+.1f", o1 - b1);
        std::snprintf(d5, sizeof d5, "%+.1f", o5 - b5);
        const std::string line = "| " + f + " | " + std::to_string(sums[f]["top1/ours"].second) + " | " +
                                 one_decimal(o1) + " | " + one_decimal(b1) + " | " + d1 + " | " + one_decimal(o5) +
                                 " | " + one_decimal(b5) + " | " + d5 + " |";
        CHECK_MESSAGE(contains(md, line), line);
    }
    CHECK(contains(md, "| ImageNet | 1 | 18.9 | 15.1 | +3.8 | 39.0 | 33.3 | +5.7 |"));
}

TEST_CASE("identical runs render every delta as +0.0") {
    auto rows = read_eval_csv(fixtures / "table1.csv");
    std::vector<EvalRow> same;
    for (const EvalRow& r : rows) {
        if (r.run_id != "ours") continue;
        same.push_back(r);
        EvalRow b = r;
        b.run_id = "baseline";
        same.push_back(b);
    }
    const std::string md = render_report(same, {});
    CHECK(!contains(md, "| +0.1"));
    CHECK(!contains(md, "| -"));
    CHECK(contains(md, "0 of 29 classification datasets (29 ties, 0 losses)"));
    std::size_t deltas = 0;
    for (std::size_t pos = md.find("+0.0"); pos != std::string::npos; pos = md.find("+0.0", pos + 1)) ++deltas;
    CHECK(deltas == 29 + 26 + 2 * 5);
}

TEST_CASE("missing runs are input errors") {
    const auto rows = read_eval_csv(fixtures / "table1.csv");
    std::vector<EvalRow> ours_only;
    for (const EvalRow& r : rows)
        if (r.run_id == "ours") ours_only.push_back(r);
    check_error([&] { render_report(ours_only, {}); }, ErrorKind::input);
    ReportOptions opt;
    opt.control_run = "posthoc";
    check_error([&] { render_report(rows, {}, opt); }, ErrorKind::input);
    ReportOptions renamed;
    renamed.baseline_run = "random";
    check_error([&] { render_report(rows, {}, renamed); }, ErrorKind::input);
}

TEST_CASE("scaling table and control section") {
    std::vector<EvalRow> rows = {
        {"shapes", "objects", "top1", "pi", 50.0},       {"shapes", "objects", "top1", "baseline", 40.0},
        {"shapes", "objects", "top1", "posthoc", 20.0},  {"pairs", "retrieval", "i2t_r1", "pi", 30.0},
        {"pairs", "retrieval", "i2t_r1", "baseline", 25.0}, {"pairs", "retrieval", "i2t_r1", "posthoc", 5.0},
        {"val", "perceptual", "2afc", "baseline", 60.0}, {"val", "perceptual", "2afc", "posthoc", 70.0},
    };
    std::vector<ScalingFitRow> fits = {
        {"family/objects/top1", "pi", {0.01, 0.35, 0.9, 6}},
        {"family/objects/top1", "baseline", {0.01, 0.30, 0.8, 6}},
        {"retrieval/i2t_r1", "pi", {0.01, 0.2, 0.7, 6}},
    };
    ReportOptions opt;
    opt.ours_run = "pi";
    opt.control_run = "posthoc";
    const std::string md = render_report(rows, fits, opt);
    CHECK(contains(md, "| family/objects/top1 | 0.350 | 0.300 | +0.050 | 0.900 | 0.800 |"));
    CHECK(!contains(md, "| retrieval/i2t_r1 | 0.200"));
    CHECK(contains(md, "| pairs | i2t_r1 | 25.0 | 5.0 | -20.0 |"));
    CHECK(contains(md, "| val | 2afc | 60.0 | 70.0 | +10.0 |"));
    CHECK(contains(md, "1 of 1 classification datasets (0 ties, 0 losses)"));
}

TEST_CASE("delta formatting") {
    CHECK(format_delta(3.7999999999999989) == "+3.8");
    CHECK(format_delta(-0.04) == "+0.0");
    CHECK(format_delta(0.0) == "+0.0");
    CHECK(format_delta(-3.2) == "-3.2");
}
