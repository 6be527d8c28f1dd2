// pi: command-line driver over the C interface.
#include <cstdint>
#include <cstdio>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "pi/pi.h"

namespace {

struct Common {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
    bool fixed_clock = false;
    bool quiet = false;
};

void add_common(CLI::App* app, Common& c, bool out_required = true) {
    app->add_option("--config", c.config, "Config file (defaults when omitted)")->check(CLI::ExistingFile);
    app->add_option("--seed", c.seed, "Override the config seed");
    auto* out = app->add_option("--out", c.out, "Output location");
    if (out_required) out->required();
    app->add_flag("--fixed-clock", c.fixed_clock, "Freeze timestamps and wall times");
    app->add_flag("-q,--quiet", c.quiet, "No progress output");
}

void log_stderr(const char* msg, void*) { std::fprintf(stderr, "%s\n", msg); }

const char* opt(const std::string& s) { return s.empty() ? nullptr : s.c_str(); }

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Perceptual-initialization CLIP pipeline"};
    app.require_subcommand(1);
    app.set_version_flag("--version", pi_version());

    Common common;
    std::string stage, init, data, run_id = "run";
    std::string pi_metrics, base_metrics;
    std::uint64_t min_samples = 0, max_samples = 0;
    std::string eval_csv, fits_csv, ours = "pi", baseline = "baseline", control;

    auto* gen = app.add_subcommand("gen-data", "Generate triplet and caption splits");
    add_common(gen, common);

    auto* train = app.add_subcommand("train", "Train one arm");
    add_common(train, common);
    train->add_option("--stage", stage, "stage1 | stage2 | baseline | posthoc")->required();
    train->add_option("--init", init, "Initial checkpoint (stage2, posthoc)");
    train->add_option("--data", data, "Directory written by gen-data");

    auto* eval = app.add_subcommand("eval", "Zero-shot evaluation of a checkpoint");
    add_common(eval, common);
    eval->add_option("--init,--checkpoint", init, "Checkpoint to evaluate")->required();
    eval->add_option("--run-id", run_id, "Run id written to the CSV");
    eval->add_option("--data", data, "Directory with validation triplets for a 2AFC row");

    auto* fit = app.add_subcommand("fit-scaling", "Power-law fits of two metric logs");
    add_common(fit, common);
    fit->add_option("--pi", pi_metrics, "Metric CSV of the perceptually initialized run")->required();
    fit->add_option("--baseline", base_metrics, "Metric CSV of the baseline run")->required();
    fit->add_option("--min-samples", min_samples, "Fit window start");
    fit->add_option("--max-samples", max_samples, "Fit window end");

    auto* report = app.add_subcommand("report", "Render a markdown report");
    add_common(report, common, false);
    report->add_option("--eval", eval_csv, "Eval CSV")->required();
    report->add_option("--fits", fits_csv, "Fits CSV");
    report->add_option("--ours", ours, "Run id of our arm");
    report->add_option("--baseline-run", baseline, "Run id of the baseline arm");
    report->add_option("--control", control, "Run id of a control arm");

    auto* compare = app.add_subcommand("compare", "Full PI vs baseline experiment");
    add_common(compare, common);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : PI_ERR_USAGE;
    }

    pi_session* s = nullptr;
    if (pi_session_create(&s) != PI_OK) {
        std::fprintf(stderr, "error: cannot create session\n");
        return PI_ERR_RUNTIME;
    }
    std::string line;
    for (int i = 0; i < argc; ++i) line += (i ? " " : "") + std::string(argv[i]);

    pi_status st = pi_load_config(s, opt(common.config));
    if (st == PI_OK && common.seed) st = pi_set_seed(s, *common.seed);
    if (st == PI_OK) st = pi_set_fixed_clock(s, common.fixed_clock);
    if (st == PI_OK) st = pi_set_command_line(s, line.c_str());
    if (st == PI_OK && !common.quiet) st = pi_set_log(s, log_stderr, nullptr);

    if (st == PI_OK) {
        if (gen->parsed()) {
            st = pi_gen_data(s, common.out.c_str());
        } else if (train->parsed()) {
            st = pi_train(s, stage.c_str(), opt(data), opt(init), common.out.c_str());
        } else if (eval->parsed()) {
            st = pi_eval(s, init.c_str(), run_id.c_str(), opt(data), common.out.c_str());
        } else if (fit->parsed()) {
            st = pi_fit_scaling(s, pi_metrics.c_str(), base_metrics.c_str(), min_samples, max_samples,
                                common.out.c_str());
        } else if (report->parsed()) {
            st = pi_report(s, eval_csv.c_str(), opt(fits_csv), ours.c_str(), baseline.c_str(), opt(control),
                           opt(common.out));
            if (st == PI_OK && common.out.empty()) std::fputs(pi_report_text(s), stdout);
        } else if (compare->parsed()) {
            st = pi_compare(s, common.out.c_str());
        }
    }
    if (st != PI_OK) std::fprintf(stderr, "error: %s\n", pi_last_error(s));
    pi_session_destroy(s);
    return st;
}
