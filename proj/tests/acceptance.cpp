// Acceptance run: one PASS/FAIL line per criterion.
// Usage: acceptance [--seeds N] [--work DIR]
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "pi/error.hpp"
#include "pi/pipeline.hpp"
#include "pi/tensor.hpp"

using namespace pi;
namespace fs = std::filesystem;

namespace {

const fs::path fixtures = PI_FIXTURE_DIR;
const std::string cli = PI_CLI_PATH;

struct Outcome {
    bool pass = true;
    std::string detail;
};

int failures = 0;
int replication_failures = 0;
std::FILE* summary = nullptr;

void line(const std::string& text) {
    std::printf("%s\n", text.c_str());
    std::fflush(stdout);
    if (summary) {
        std::fprintf(summary, "%s\n", text.c_str());
        std::fflush(summary);
    }
}

void report(const std::string& name, const Outcome& o, bool replication = false) {
    line(std::string(o.pass ? "PASS " : "FAIL ") + name + ": " + o.detail);
    if (!o.pass) ++(replication ? replication_failures : failures);
}

template <typename F>
Outcome guarded(F&& body) {
    try {
        return body();
    } catch (const std::exception& e) {
        return {false, std::string("exception: ") + e.what()};
    }
}

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    std::vector<double> v(shape_numel(shape));
    for (double& x : v) x = rng.uniform(lo, hi);
    return Tensor::from(std::move(shape), std::move(v));
}

Tensor weighted_sum(const Tensor& y, std::uint64_t seed) {
    Rng rng(seed);
    return sum(mul(y, random_tensor(y.shape(), rng)));
}

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

// ---- gradients ----

Outcome gradients() {
    const auto start = std::chrono::steady_clock::now();
    Rng rng(2024);
    double worst = 0.0;
    std::size_t cases_run = 0;
    std::string failed;
    auto check = [&](const std::string& name, const std::function<Tensor(const Tensor&)>& f, const Tensor& x) {
        const auto r = grad_check(f, x, 1e-5, 1e-5);
        worst = std::max(worst, r.max_rel_error);
        ++cases_run;
        if (!r.passed && failed.empty()) failed = name;
    };
    for (std::uint64_t trial = 0; trial < 5; ++trial) {
        const std::size_t m = 3, n = 4;
        Tensor x = random_tensor({m, n}, rng);
        Tensor pos = random_tensor({m, n}, rng, 0.5, 2.0);
        Tensor away = random_tensor({m, n}, rng, 0.1, 1.0);
        for (std::size_t i = 0; i < away.numel(); ++i) {
            if (rng.bernoulli(0.5)) away.data()[i] = -away.data()[i];
        }
        Tensor w = random_tensor({n, 3}, rng);
        Tensor lw = random_tensor({n, 3}, rng);
        Tensor bias = random_tensor({3}, rng);
        Tensor g = random_tensor({n}, rng, 0.5, 1.5);
        Tensor b = random_tensor({n}, rng);
        Tensor sq = random_tensor({n, n}, rng);
        Tensor t3 = random_tensor({2, m, n}, rng);
        const std::vector<std::size_t> rows{0, m - 1, 0};
        const std::vector<std::pair<std::string, std::function<Tensor(const Tensor&)>>> unary = {
            {"matmul", [&](const Tensor& in) { return matmul(in, w); }},
            {"linear", [&](const Tensor& in) { return linear(in, lw, bias); }},
            {"add", [&](const Tensor& in) { return add(in, pos); }},
            {"sub", [&](const Tensor& in) { return sub(pos, in); }},
            {"mul", [&](const Tensor& in) { return mul(in, in); }},
            {"scale", [&](const Tensor& in) { return scale(in, -1.7); }},
            {"add_scalar", [&](const Tensor& in) { return add_scalar(in, 0.25); }},
            {"exp", [&](const Tensor& in) { return exp(in); }},
            {"gelu", [&](const Tensor& in) { return gelu(in); }},
            {"sum", [&](const Tensor& in) { return sum(in); }},
            {"mean", [&](const Tensor& in) { return mean(in); }},
            {"sum_last", [&](const Tensor& in) { return sum_last(in); }},
            {"softmax", [&](const Tensor& in) { return softmax(in, 0); }},
            {"log_softmax", [&](const Tensor& in) { return log_softmax(in, -1); }},
            {"layer_norm", [&](const Tensor& in) { return layer_norm(in, g, b); }},
            {"l2_normalize", [&](const Tensor& in) { return l2_normalize(in); }},
            {"transpose", [&](const Tensor& in) { return transpose(in); }},
            {"reshape", [&](const Tensor& in) { return reshape(in, {n, m}); }},
            {"concat", [&](const Tensor& in) { return concat({in, pos, in}, 0); }},
            {"repeat", [&](const Tensor& in) { return repeat(in, 3); }},
            {"gather_rows", [&](const Tensor& in) { return gather_rows(in, rows); }},
            {"slice_rows", [&](const Tensor& in) { return slice_rows(in, 1, m); }},
        };
        for (std::size_t c = 0; c < unary.size(); ++c) {
            check(unary[c].first, [&](const Tensor& in) { return weighted_sum(unary[c].second(in), trial * 100 + c); },
                  x);
        }
        check("log", [&](const Tensor& in) { return weighted_sum(log(in), trial); }, pos);
        check("relu", [&](const Tensor& in) { return weighted_sum(relu(in), trial); }, away);
        check("matmul rhs", [&](const Tensor& in) { return weighted_sum(matmul(x, in), trial); }, w);
        check("linear weight", [&](const Tensor& in) { return weighted_sum(linear(x, in, bias), trial); }, lw);
        check("linear bias", [&](const Tensor& in) { return weighted_sum(linear(x, lw, in), trial); }, bias);
        check("layer_norm gain", [&](const Tensor& in) { return weighted_sum(layer_norm(x, in, b), trial); }, g);
        check("permute", [&](const Tensor& in) { return weighted_sum(permute(in, {2, 0, 1}), trial); }, t3);
        check("diagonal", [&](const Tensor& in) { return weighted_sum(diagonal(in), trial); }, sq);
        check("causal_mask", [&](const Tensor& in) { return weighted_sum(softmax(causal_mask(in)), trial); }, sq);
        check("cosine_distance", [&](const Tensor& in) { return weighted_sum(cosine_distance(in, pos), trial); }, x);

        Tensor sim = random_tensor({4, 4}, rng);
        check("infonce similarities", [&](const Tensor& s) { return infonce_loss(s, Tensor::scalar(1.3)); }, sim);
        check("infonce log scale", [&](const Tensor& ls) { return infonce_loss(sim, ls); }, Tensor::scalar(1.3));

        std::size_t triplets = 0;
        while (triplets < 4) {
            Tensor ex = random_tensor({1, 6}, rng), e0 = random_tensor({1, 6}, rng), e1 = random_tensor({1, 6}, rng);
            const std::uint8_t y[] = {static_cast<std::uint8_t>(rng.below(2))};
            const double ybar = y[0] == 0 ? -1.0 : 1.0;
            const double dd = cosine_distance(ex.data(), e0.data()) - cosine_distance(ex.data(), e1.data());
            if (std::abs(default_margin - dd * ybar) < 1e-3) continue;
            ++triplets;
            check("triplet ref", [&](const Tensor& t) { return perceptual_triplet_loss(t, e0, e1, y); }, ex);
            check("triplet v0", [&](const Tensor& t) { return perceptual_triplet_loss(ex, t, e1, y); }, e0);
            check("triplet v1", [&](const Tensor& t) { return perceptual_triplet_loss(ex, e0, t, y); }, e1);
        }
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    Outcome o;
    o.pass = failed.empty() && worst < 1e-5 && secs < 60.0;
    o.detail = std::to_string(cases_run) + " checks, worst rel err " + fmt("%.2e", worst) + ", " + fmt("%.1f", secs) +
               " s" + (failed.empty() ? "" : ", first failure " + failed);
    return o;
}

// ---- loss oracles ----

double infonce_oracle(const std::vector<double>& s, std::size_t n, double tau) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double row = 0.0, col = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            row += std::exp(s[i * n + j] / tau);
            col += std::exp(s[j * n + i] / tau);
        }
        total += -std::log(std::exp(s[i * n + i] / tau) / row) - std::log(std::exp(s[i * n + i] / tau) / col);
    }
    return total / (2.0 * n);
}

double triplet_value(std::vector<double> x, std::vector<double> a, std::vector<double> b, std::uint8_t y) {
    const std::size_t d = x.size();
    const std::uint8_t ys[] = {y};
    return perceptual_triplet_loss(Tensor::from({1, d}, std::move(x)), Tensor::from({1, d}, std::move(a)),
                                   Tensor::from({1, d}, std::move(b)), ys)
        .item();
}

Outcome loss_oracles() {
    std::string detail;
    bool pass = true;
    const double h0 = triplet_value({1, 0}, {1, 0}, {0, 1}, 0);
    const double h1 = triplet_value({1, 0}, {1, 0}, {0, 1}, 1);
    const double h2 = triplet_value({1, 0}, {1, 0}, {1, 0}, 0);
    pass = pass && std::abs(h0) < 1e-9 && std::abs(h1 - 1.05) < 1e-9 && std::abs(h2 - 0.05) < 1e-9;
    detail += "triplet cases " + fmt("%.9f", h0) + "/" + fmt("%.9f", h1) + "/" + fmt("%.9f", h2);

    const double ident = infonce_loss(Tensor::from({2, 2}, {1.0, 0.0, 0.0, 1.0}), 1.0).item();
    const double expected = std::log(1.0 + std::exp(-1.0));
    pass = pass && std::abs(ident - expected) < 1e-6;
    detail += ", identity " + fmt("%.6f", ident);

    Rng rng(31);
    double worst = 0.0;
    for (int t = 0; t < 100; ++t) {
        std::vector<double> s(64);
        for (double& v : s) v = rng.uniform(-1.0, 1.0);
        const double tau = rng.uniform(0.01, 1.0);
        const double got = infonce_loss(Tensor::from({8, 8}, s), tau).item();
        worst = std::max(worst, std::abs(got - infonce_oracle(s, 8, tau)));
    }
    pass = pass && worst < 1e-9;
    detail += ", 8x8 worst diff " + fmt("%.2e", worst);
    return {pass, detail};
}

// ---- retrieval ----

Outcome retrieval_oracle() {
    Rng rng(404);
    std::size_t mismatches = 0;
    for (int t = 0; t < 100; ++t) {
        const std::size_t n = 1 + rng.below(256);
        const std::size_t d = 2 + rng.below(6);
        std::vector<double> a(n * d), b(n * d);
        for (double& v : a) v = rng.uniform(-1.0, 1.0);
        for (double& v : b) v = rng.uniform(-1.0, 1.0);
        if (t % 2 == 0) {
            // Repeated rows force exact ties.
            for (std::size_t i = 1; i < n; i += 2) {
                const std::size_t src = rng.below(i);
                std::copy_n(a.begin() + src * d, d, a.begin() + i * d);
                std::copy_n(b.begin() + src * d, d, b.begin() + i * d);
            }
        }
        const auto [i2t, t2i] = retrieval_recall(Tensor::from({n, d}, a), Tensor::from({n, d}, b), {1, 5, 10});
        auto cos = [&](const std::vector<double>& u, std::size_t i, const std::vector<double>& v, std::size_t j) {
            double dot = 0, nu = 0, nv = 0;
            for (std::size_t k = 0; k < d; ++k) {
                dot += u[i * d + k] * v[j * d + k];
                nu += u[i * d + k] * u[i * d + k];
                nv += v[j * d + k] * v[j * d + k];
            }
            return dot / (std::sqrt(nu) + 1e-12) / (std::sqrt(nv) + 1e-12);
        };
        auto brute = [&](const std::vector<double>& q, const std::vector<double>& c, std::size_t k) {
            std::size_t hits = 0;
            for (std::size_t i = 0; i < n; ++i) {
                const double own = cos(q, i, c, i);
                std::size_t rank = 0;
                for (std::size_t j = 0; j < n; ++j) {
                    const double s = cos(q, i, c, j);
                    if (j != i && (s > own || (s == own && j < i))) ++rank;
                }
                if (rank < k) ++hits;
            }
            return static_cast<double>(hits) / static_cast<double>(n);
        };
        for (std::size_t k : {1, 5, 10}) {
            if (i2t.r_at.at(k) != brute(a, b, k)) ++mismatches;
            if (t2i.r_at.at(k) != brute(b, a, k)) ++mismatches;
        }
    }
    return {mismatches == 0, "100 instances, " + std::to_string(mismatches) + " mismatches"};
}

// ---- freeze contracts ----

Outcome freeze_contracts() {
    VisionEncoderConfig v;
    v.image_size = 16;
    v.width = 16;
    v.depth = 1;
    v.heads = 2;
    v.mlp_ratio = 2;
    v.proj_dim = 8;
    TextEncoderConfig t;
    t.vocab_size = 40;
    t.width = 16;
    t.depth = 1;
    t.heads = 2;
    t.mlp_ratio = 2;
    t.proj_dim = 8;
    GenOptions opt;
    opt.image_size = 16;
    Rng r(5);
    const auto triplets = gen_triplet_set(48, 0.0, r, opt).records;

    TrainConfig s1 = TrainConfig::defaults(Stage::stage1);
    s1.epochs = 2;
    s1.batch_size = 16;
    s1.seed = 5;
    const EncoderParams init = seeded_init(v, t, 5);
    auto frozen1 = [](const std::string& n) { return is_text_param(n) || n == logit_scale_name; };
    const auto res1 = train_stage1(s1, v, t, triplets, {});
    const bool text_same = param_checksum(init, frozen1) == param_checksum(res1.checkpoint.params, frozen1);
    const bool vision_moved = param_checksum(init, is_vision_param) != param_checksum(res1.checkpoint.params, is_vision_param);

    TrainConfig ph = TrainConfig::defaults(Stage::posthoc);
    ph.epochs = 2;
    ph.batch_size = 16;
    ph.seed = 5;
    const auto qkv = qkv_param_names(res1.checkpoint.params);
    auto others = [&](const std::string& n) { return qkv.count(n) == 0; };
    auto only_qkv = [&](const std::string& n) { return qkv.count(n) != 0; };
    const auto res2 = finetune_posthoc(ph, triplets, {}, res1.checkpoint);
    const bool rest_same = param_checksum(res1.checkpoint.params, others) == param_checksum(res2.checkpoint.params, others);
    const bool qkv_moved = param_checksum(res1.checkpoint.params, only_qkv) != param_checksum(res2.checkpoint.params, only_qkv);

    Outcome o;
    o.pass = text_same && vision_moved && rest_same && qkv_moved;
    o.detail = std::string("stage1 text+scale ") + (text_same ? "unchanged" : "CHANGED") + ", vision " +
               (vision_moved ? "updated" : "static") + "; posthoc non-qkv " + (rest_same ? "unchanged" : "CHANGED") +
               ", qkv " + (qkv_moved ? "updated" : "static");
    return o;
}

// ---- replication ----

struct SeedResult {
    double top1_delta = 0.0;
    double beta_pi = 0.0;
    double beta_base = 0.0;
    double afc_base = 0.0;
    double afc_posthoc = 0.0;
    double r1_base = 0.0;
    double r1_posthoc = 0.0;
};

double row_value(const std::vector<EvalRow>& rows, const std::string& dataset, const std::string& metric,
                 const std::string& run) {
    for (const EvalRow& r : rows) {
        if (r.dataset == dataset && r.metric == metric && r.run_id == run) return r.value;
    }
    throw Error(ErrorKind::input, "missing eval row " + dataset + "/" + metric + " for " + run);
}

SeedResult run_seed(std::uint64_t seed, const fs::path& work) {
    PipelineConfig cfg = load_config(fixtures / "acceptance.ini");
    cfg.seed = seed;
    RunContext ctx;
    ctx.fixed_clock = true;
    ctx.command_line = "acceptance seed " + std::to_string(seed);
    const auto res = run_compare(cfg, work / ("seed" + std::to_string(seed)), ctx);
    SeedResult s;
    bool found = false;
    for (const RunComparison& c : res.scaling.comparisons) {
        if (c.metric != res.headline_metric) continue;
        s.top1_delta = c.final_delta;
        s.beta_pi = c.beta_pi;
        s.beta_base = c.beta_base;
        found = true;
    }
    if (!found) throw Error(ErrorKind::input, "no scaling comparison for " + res.headline_metric);
    s.afc_base = row_value(res.eval, triplet_val_split, "2afc", baseline_run_id);
    s.afc_posthoc = row_value(res.eval, triplet_val_split, "2afc", posthoc_run_id);
    auto r1 = [&](const std::string& run) {
        return 0.5 * (row_value(res.eval, "pairs-heldout", "i2t_r1", run) +
                      row_value(res.eval, "pairs-heldout", "t2i_r1", run));
    };
    s.r1_base = r1(baseline_run_id);
    s.r1_posthoc = r1(posthoc_run_id);
    return s;
}

// ---- scaling fits ----

ScalingCurve curve(const std::vector<CurvePoint>& pts) {
    ScalingCurve c;
    c.run_id = "fixture";
    c.metric = "m";
    c.points = pts;
    return c;
}

Outcome scaling_fits() {
    double worst = 0.0;
    const std::vector<std::pair<double, double>> truths{{1.0, 0.5}, {3.0, 0.3}, {0.02, 1.2}, {7.0, -0.25}};
    for (const auto& [a, beta] : truths) {
        std::vector<CurvePoint> pts;
        for (std::uint64_t x : {100ULL, 1000ULL, 10000ULL, 100000ULL, 1000000ULL}) {
            pts.push_back({x, a * std::pow(static_cast<double>(x), beta)});
        }
        const auto f = fit_power_law(curve(pts));
        worst = std::max(worst, std::max(std::abs(f.a - a) / a, std::abs(f.beta - beta)));
    }
    std::string detail = "exact fixtures worst err " + fmt("%.2e", worst);
    bool pass = worst < 1e-9;

    Rng rng(8);
    double inv = 0.0;
    for (int t = 0; t < 20; ++t) {
        std::vector<CurvePoint> pts, ys, xs;
        const double cy = std::exp(rng.uniform(-3.0, 3.0));
        const std::uint64_t cx = 1 + rng.below(9);
        for (std::uint64_t i = 0; i < 12; ++i) {
            const std::uint64_t x = 50 + i * 8000 + rng.below(7000);
            const double y = 2.0 * std::pow(static_cast<double>(x), 0.4) * std::exp(rng.normal() * 0.1);
            pts.push_back({x, y});
            ys.push_back({x, cy * y});
            xs.push_back({cx * x, y});
        }
        const double b = fit_power_law(curve(pts)).beta;
        inv = std::max(inv, std::max(std::abs(fit_power_law(curve(ys)).beta - b),
                                     std::abs(fit_power_law(curve(xs)).beta - b)));
    }
    pass = pass && inv < 1e-12;
    detail += ", rescaling changes beta by at most " + fmt("%.2e", inv);
    return {pass, detail};
}

// ---- report fidelity ----

Outcome report_fidelity() {
    auto rows = read_eval_csv(fixtures / "table1.csv");
    const auto ret = read_eval_csv(fixtures / "table2.csv");
    rows.insert(rows.end(), ret.begin(), ret.end());
    const std::string md = render_report(rows, {});
    const std::vector<std::string> needles{
        "| ImageNet-1k | 18.9 | 15.1 | +3.8 |",
        "| Δ | +7.1 |",
        "Ours improves top-1 on 23 of 29 classification datasets",
    };
    std::string missing;
    for (const auto& n : needles) {
        if (md.find(n) == std::string::npos) missing += (missing.empty() ? "" : "; ") + n;
    }
    return {missing.empty(), missing.empty() ? "+3.8 ImageNet top-1, +7.1 Flickr I->T R@1, 23 of 29" :
                                               "missing: " + missing};
}

// ---- determinism ----

Outcome determinism(const fs::path& work) {
    const fs::path a = work / "det_a", b = work / "det_b";
    fs::remove_all(a);
    fs::remove_all(b);
    const std::string cfg = (fixtures / "tiny.ini").string();
    for (const fs::path& out : {a, b}) {
        const std::string cmd = "\"" + cli + "\" compare --config \"" + cfg + "\" --seed 7 --fixed-clock -q --out \"" +
                                out.string() + "\"";
        if (std::system(cmd.c_str()) != 0) return {false, "compare failed: " + cmd};
    }
    std::size_t compared = 0;
    std::string differ;
    for (const auto& entry : fs::recursive_directory_iterator(a)) {
        if (!entry.is_regular_file()) continue;
        const fs::path rel = fs::relative(entry.path(), a);
        const std::string ext = rel.extension().string();
        if (ext != ".csv" && ext != ".md") continue;
        ++compared;
        if (read_file(entry.path()) != read_file(b / rel)) differ += " " + rel.string();
    }
    const bool ckpt_same = read_file(a / "pi" / "checkpoint.pickpt") == read_file(b / "pi" / "checkpoint.pickpt");
    Outcome o;
    o.pass = compared >= 5 && differ.empty() && ckpt_same;
    o.detail = std::to_string(compared) + " CSV/markdown files compared" +
               (differ.empty() ? ", all byte-identical" : ", differing:" + differ) +
               (ckpt_same ? "" : ", checkpoints differ");
    return o;
}

}  // namespace

int main(int argc, char** argv) {
    std::size_t seeds = 5;
    fs::path work = fs::temp_directory_path() / "pi_acceptance";
    for (int i = 1; i + 1 < argc; i += 2) {
        const std::string flag = argv[i];
        if (flag == "--seeds") {
            seeds = std::strtoul(argv[i + 1], nullptr, 10);
        } else if (flag == "--work") {
            work = argv[i + 1];
        } else {
            std::fprintf(stderr, "usage: acceptance [--seeds N] [--work DIR]\n");
            return 1;
        }
    }
    fs::create_directories(work);
    summary = std::fopen((work / "summary.txt").string().c_str(), "w");

    report("gradient correctness", guarded(gradients));
    report("loss oracles", guarded(loss_oracles));
    report("retrieval oracle", guarded(retrieval_oracle));
    report("freeze contracts", guarded(freeze_contracts));

    std::vector<SeedResult> results;
    std::string run_error;
    const auto start = std::chrono::steady_clock::now();
    try {
        for (std::uint64_t s = 1; s <= seeds; ++s) {
            results.push_back(run_seed(s, work));
            const SeedResult& r = results.back();
            char buf[256];
            std::snprintf(buf, sizeof buf,
                          "  seed %llu: headline top-1 delta %+.2f pp, beta pi %.4f base %.4f; "
                          "posthoc 2AFC %.1f -> %.1f, R@1 %.2f -> %.2f",
                          static_cast<unsigned long long>(s), r.top1_delta, r.beta_pi, r.beta_base, r.afc_base,
                          r.afc_posthoc, r.r1_base, r.r1_posthoc);
            line(buf);
        }
    } catch (const std::exception& e) {
        run_error = e.what();
    }
    const double minutes = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count() / 60.0;
    const std::size_t need = seeds - seeds / 5;
    if (seeds == 0) {
        line("SKIP directional headline replication: --seeds 0");
        line("SKIP post-hoc collapse replication: --seeds 0");
    } else if (!run_error.empty()) {
        report("directional headline replication", {false, "run failed: " + run_error}, true);
        report("post-hoc collapse replication", {false, "run failed: " + run_error}, true);
    } else {
        std::size_t wins = 0, slopes = 0, collapses = 0;
        for (const SeedResult& r : results) {
            wins += r.top1_delta > 0.0;
            slopes += r.beta_pi >= r.beta_base;
            collapses += (r.afc_posthoc - r.afc_base >= 5.0) && (r.r1_posthoc < r.r1_base);
        }
        const std::string of = " of " + std::to_string(seeds) + " seeds";
        report("directional headline replication",
               {wins >= need && slopes >= need && minutes <= 120.0,
                "top-1 PI > baseline in " + std::to_string(wins) + of + ", beta_PI >= beta_base in " +
                    std::to_string(slopes) + of + ", " + fmt("%.1f", minutes) + " min"},
               true);
        std::size_t afc_up = 0, r1_down = 0;
        for (const SeedResult& r : results) {
            afc_up += r.afc_posthoc - r.afc_base >= 5.0;
            r1_down += r.r1_posthoc < r.r1_base;
        }
        report("post-hoc collapse replication",
               {collapses >= need, "both conditions in " + std::to_string(collapses) + of + " (2AFC +5 pp in " +
                                       std::to_string(afc_up) + ", R@1 down in " + std::to_string(r1_down) + ")"},
               true);
    }

    report("scaling-fit correctness", guarded(scaling_fits));
    report("report fidelity", guarded(report_fidelity));
    report("determinism", guarded([&] { return determinism(work); }));

    line(std::to_string(failures) + " correctness failure(s), " + std::to_string(replication_failures) +
         " replication failure(s)");
    if (summary) std::fclose(summary);
    return failures == 0 ? 0 : 1;
}
