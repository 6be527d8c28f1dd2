#include "pi/pipeline.hpp"

#include <chrono>
#include <ctime>
#include <fstream>

#include "json.hpp"
#include "pi/error.hpp"
#include "pi/objectives.hpp"
#include "pi/rng.hpp"

namespace pi {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

std::string timestamp(const RunContext& ctx) {
    if (ctx.fixed_clock) return "1970-01-01T00:00:00Z";
    const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

RunHooks make_hooks(const RunContext& ctx) {
    RunHooks h;
    if (ctx.fixed_clock) {
        h.clock = [] { return 0.0; };
    } else {
        const auto start = std::chrono::steady_clock::now();
        h.clock = [start] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(); };
    }
    h.log = ctx.log;
    return h;
}

void say(const RunContext& ctx, const std::string& msg) {
    if (ctx.log) ctx.log(msg);
}

GenOptions gen_options(const PipelineConfig& cfg) {
    GenOptions opt;
    opt.image_size = cfg.vision.image_size;
    opt.context_length = cfg.text.context_length;
    return opt;
}

std::vector<std::pair<std::string, std::uint64_t>> checksums(const fs::path& dir) {
    std::vector<std::pair<std::string, std::uint64_t>> out;
    for (const char* split : {triplet_train_split, triplet_val_split, pair_train_split}) {
        for (const fs::path& p : {manifest_path(dir, split), blob_path(dir, split)}) {
            if (fs::exists(p)) out.emplace_back(p.filename().string(), file_checksum(p));
        }
    }
    return out;
}

std::vector<std::string> data_outputs(const std::string& prefix) {
    std::vector<std::string> out;
    for (const char* split : {triplet_train_split, triplet_val_split, pair_train_split}) {
        out.push_back(prefix + split + ".manifest");
        out.push_back(prefix + split + ".blob");
    }
    return out;
}

void write_data(const PipelineConfig& cfg, const fs::path& dir) {
    fs::create_directories(dir);
    const GenOptions opt = gen_options(cfg);
    Rng tr(mix_seed(cfg.seed, 10)), va(mix_seed(cfg.seed, 11)), pr(mix_seed(cfg.seed, 12));
    write_triplet_split(dir, triplet_train_split, gen_triplet_set(cfg.data.triplets, cfg.data.flip_prob, tr, opt).records);
    write_triplet_split(dir, triplet_val_split, gen_triplet_set(cfg.data.val_triplets, 0.0, va, opt).records);
    write_caption_split(dir, pair_train_split, gen_pair_set(cfg.data.pairs, pr, opt));
}

/// Existing data directory, or a freshly generated one under out_dir.
fs::path resolve_data(const PipelineConfig& cfg, const fs::path& data_dir, const fs::path& out_dir,
                      RunManifest& manifest, const RunContext& ctx) {
    fs::path dir = data_dir.empty() ? fs::path(cfg.data.dir) : data_dir;
    if (dir.empty()) {
        dir = out_dir / "data";
        say(ctx, "generating data into " + dir.string());
        write_data(cfg, dir);
        for (auto& p : data_outputs("data/")) manifest.outputs.push_back(p);
    }
    require(fs::is_directory(dir), ErrorKind::io, "data directory " + dir.string() + " does not exist");
    manifest.dataset_checksums = checksums(dir);
    return dir;
}

struct ArmPaths {
    fs::path checkpoint;
    fs::path metrics;
};

ArmPaths arm_paths(const fs::path& dir) { return {dir / "checkpoint.pickpt", dir / "metrics.csv"}; }

TrainResult run_arm(const PipelineConfig& cfg, Stage stage, const fs::path& data_dir, const Checkpoint* init,
                    const std::string& run_id, const EvalSuite* suite, const ArmPaths& paths, const RunContext& ctx) {
    const TrainConfig tc = cfg.train_config(stage, run_id);
    RunHooks hooks = make_hooks(ctx);
    say(ctx, "training " + run_id + " (" + to_string(stage) + ")");
    TrainResult result;
    switch (stage) {
        case Stage::stage1: {
            const auto train = read_triplet_split(data_dir, triplet_train_split);
            const auto val = read_triplet_split(data_dir, triplet_val_split);
            result = train_stage1(tc, cfg.vision, cfg.text, train, val, hooks);
            break;
        }
        case Stage::stage2:
        case Stage::baseline: {
            const auto pairs = read_caption_split(data_dir, pair_train_split);
            if (suite) {
                hooks.eval = [suite](const EncoderParams& p) { return suite_metrics(evaluate_suite(p, *suite), *suite); };
            }
            result = train_stage2(tc, cfg.vision, cfg.text, pairs, stage == Stage::stage2 ? init : nullptr, hooks);
            break;
        }
        case Stage::posthoc: {
            require(init != nullptr, ErrorKind::input, "posthoc fine-tuning needs an initial checkpoint");
            const auto train = read_triplet_split(data_dir, triplet_train_split);
            const auto val = read_triplet_split(data_dir, triplet_val_split);
            result = finetune_posthoc(tc, train, val, *init, hooks);
            break;
        }
    }
    fs::create_directories(paths.checkpoint.parent_path());
    save_checkpoint(result.checkpoint, paths.checkpoint);
    write_metrics_csv(paths.metrics, result.metrics);
    return result;
}

json manifest_json(const RunManifest& m) {
    json checks = json::array();
    for (const auto& [name, sum] : m.dataset_checksums) checks.push_back({{"file", name}, {"fnv1a", sum}});
    return json{{"run_id", m.run_id},
                {"command_line", m.command_line},
                {"config", m.config},
                {"dataset_checksums", checks},
                {"code_version", m.code_version},
                {"start_time", m.start_time},
                {"end_time", m.end_time},
                {"outputs", m.outputs}};
}

}  // namespace

void write_run_manifest(const RunManifest& manifest, const fs::path& path) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    require(static_cast<bool>(out), ErrorKind::io, "cannot write " + path.string());
    out << manifest_json(manifest).dump(2) << '\n';
    require(static_cast<bool>(out), ErrorKind::io, "write failed for " + path.string());
}

RunManifest read_run_manifest(const fs::path& path) {
    std::ifstream in(path);
    require(static_cast<bool>(in), ErrorKind::io, "cannot open " + path.string());
    try {
        const json j = json::parse(in);
        RunManifest m;
        m.run_id = j.at("run_id").get<std::string>();
        m.command_line = j.at("command_line").get<std::string>();
        m.config = j.at("config").get<std::string>();
        for (const json& c : j.at("dataset_checksums"))
            m.dataset_checksums.emplace_back(c.at("file").get<std::string>(), c.at("fnv1a").get<std::uint64_t>());
        m.code_version = j.at("code_version").get<std::string>();
        m.start_time = j.at("start_time").get<std::string>();
        m.end_time = j.at("end_time").get<std::string>();
        m.outputs = j.at("outputs").get<std::vector<std::string>>();
        return m;
    } catch (const json::exception& e) {
        fail(ErrorKind::format, path.string() + ": " + e.what());
    }
}

RunManifest generate_data(const PipelineConfig& cfg, const fs::path& out_dir, const RunContext& ctx) {
    RunManifest m;
    m.run_id = "data";
    m.command_line = ctx.command_line;
    m.config = serialize_config(cfg);
    m.start_time = timestamp(ctx);
    write_data(cfg, out_dir);
    m.dataset_checksums = checksums(out_dir);
    m.outputs = data_outputs("");
    m.outputs.push_back(manifest_file_name);
    m.end_time = timestamp(ctx);
    write_run_manifest(m, out_dir / manifest_file_name);
    return m;
}

EvalSuite eval_suite_for(const PipelineConfig& cfg) {
    return make_eval_suite(cfg.eval.per_dataset, cfg.eval.retrieval_pairs, mix_seed(cfg.seed, 13), gen_options(cfg));
}

RunManifest train_arm(const PipelineConfig& cfg, Stage stage, const fs::path& data_dir,
                      const std::optional<fs::path>& init, const fs::path& out_dir, const RunContext& ctx) {
    RunManifest m;
    m.run_id = to_string(stage);
    m.command_line = ctx.command_line;
    m.config = serialize_config(cfg);
    m.start_time = timestamp(ctx);
    std::optional<Checkpoint> start;
    if (init && stage != Stage::stage1 && stage != Stage::baseline) start = load_checkpoint(*init);
    require(stage != Stage::posthoc || start.has_value(), ErrorKind::input, "posthoc fine-tuning needs --init");
    const fs::path data = resolve_data(cfg, data_dir, out_dir, m, ctx);
    std::optional<EvalSuite> suite;
    if (stage == Stage::stage2 || stage == Stage::baseline) suite = eval_suite_for(cfg);
    run_arm(cfg, stage, data, start ? &*start : nullptr, m.run_id, suite ? &*suite : nullptr, arm_paths(out_dir), ctx);
    m.outputs.push_back("checkpoint.pickpt");
    m.outputs.push_back("metrics.csv");
    m.outputs.push_back(manifest_file_name);
    m.end_time = timestamp(ctx);
    write_run_manifest(m, out_dir / manifest_file_name);
    return m;
}

std::vector<EvalRow> evaluate_checkpoint(const PipelineConfig& cfg, const EncoderParams& params,
                                         const std::string& run_id, std::span<const TripletRecord> val) {
    const EvalSuite suite = eval_suite_for(cfg);
    std::vector<EvalRow> rows = eval_rows(evaluate_suite(params, suite), run_id, suite.retrieval.name);
    if (!val.empty()) {
        rows.push_back(EvalRow{triplet_val_split, "perceptual", "2afc", run_id,
                               100.0 * triplet_2afc_accuracy(params, val)});
    }
    return rows;
}

ScalingReport scaling_from_metrics(std::span<const MetricRecord> pi_metrics, std::span<const MetricRecord> base_metrics,
                                   const std::optional<FitWindow>& window, const WarnFn& warn) {
    auto zero_shot = [](std::span<const MetricRecord> records) {
        std::vector<MetricRecord> out;
        for (const MetricRecord& r : records)
            if (r.metric.find('/') != std::string::npos) out.push_back(r);
        return curves_from_metrics(out);
    };
    const auto a = zero_shot(pi_metrics);
    const auto b = zero_shot(base_metrics);
    return compare_runs(a, b, window, warn);
}

CompareResult run_compare(const PipelineConfig& cfg, const fs::path& out_dir, const RunContext& ctx) {
    cfg.validate();
    CompareResult res;
    RunManifest& m = res.manifest;
    m.run_id = "compare";
    m.command_line = ctx.command_line;
    m.config = serialize_config(cfg);
    m.start_time = timestamp(ctx);
    fs::create_directories(out_dir);

    const fs::path data = resolve_data(cfg, {}, out_dir, m, ctx);
    const EvalSuite suite = eval_suite_for(cfg);
    res.headline_metric = headline_metric(suite);

    auto arm = [&](Stage stage, const std::string& run_id, const Checkpoint* init) {
        const ArmPaths paths = arm_paths(out_dir / run_id);
        TrainResult r = run_arm(cfg, stage, data, init, run_id, &suite, paths, ctx);
        m.outputs.push_back(run_id + "/checkpoint.pickpt");
        m.outputs.push_back(run_id + "/metrics.csv");
        return r;
    };
    const TrainResult s1 = arm(Stage::stage1, "stage1", nullptr);
    const TrainResult pi = arm(Stage::stage2, pi_run_id, &s1.checkpoint);
    const TrainResult base = arm(Stage::baseline, baseline_run_id, nullptr);
    const TrainResult post = arm(Stage::posthoc, posthoc_run_id, &base.checkpoint);

    say(ctx, "evaluating final checkpoints");
    const auto val = read_triplet_split(data, triplet_val_split);
    for (const auto& [run_id, r] : {std::pair<const char*, const TrainResult*>{pi_run_id, &pi},
                                    {baseline_run_id, &base},
                                    {posthoc_run_id, &post}}) {
        const auto rows = evaluate_checkpoint(cfg, r->checkpoint.params, run_id, val);
        res.eval.insert(res.eval.end(), rows.begin(), rows.end());
    }
    write_eval_csv(out_dir / "eval.csv", res.eval);
    m.outputs.push_back("eval.csv");

    res.scaling = scaling_from_metrics(pi.metrics, base.metrics, std::nullopt,
                                       [&](const std::string& w) { say(ctx, "warning: " + w); });
    export_plot_data(res.scaling, out_dir / "scaling" / "points.csv", out_dir / "scaling" / "fits.csv");
    m.outputs.push_back("scaling/points.csv");
    m.outputs.push_back("scaling/fits.csv");

    ReportOptions opt;
    opt.title = "Perceptual initialization vs random init (seed " + std::to_string(cfg.seed) + ")";
    opt.ours_run = pi_run_id;
    opt.baseline_run = baseline_run_id;
    opt.control_run = posthoc_run_id;
    res.report = render_report(res.eval, res.scaling.fits, opt);
    {
        std::ofstream out(out_dir / "report.md", std::ios::trunc);
        require(static_cast<bool>(out), ErrorKind::io, "cannot write report.md");
        out << res.report;
    }
    m.outputs.push_back("report.md");
    m.outputs.push_back(manifest_file_name);
    m.end_time = timestamp(ctx);
    write_run_manifest(m, out_dir / manifest_file_name);
    return res;
}

}  // namespace pi
