#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "pi/config.hpp"
#include "pi/eval.hpp"
#include "pi/report.hpp"
#include "pi/scaling.hpp"
#include "pi/train.hpp"

namespace pi {

inline constexpr const char* code_version = "pi-clip 0.1.0";

struct RunManifest {
    std::string run_id;
    std::string command_line;
    std::string config;
    /// Data file name and checksum.
    std::vector<std::pair<std::string, std::uint64_t>> dataset_checksums;
    std::string code_version = pi::code_version;
    std::string start_time;
    std::string end_time;
    /// Paths relative to the run directory.
    std::vector<std::string> outputs;

    bool operator==(const RunManifest&) const = default;
};

inline constexpr const char* manifest_file_name = "manifest.json";

void write_run_manifest(const RunManifest& manifest, const std::filesystem::path& path);
RunManifest read_run_manifest(const std::filesystem::path& path);

struct RunContext {
    /// Timestamps and wall_time frozen at zero.
    bool fixed_clock = false;
    std::string command_line;
    std::function<void(const std::string&)> log;
};

inline constexpr const char* triplet_train_split = "triplets-train";
inline constexpr const char* triplet_val_split = "triplets-val";
inline constexpr const char* pair_train_split = "pairs-train";

/// Writes the three training splits and a manifest listing them.
RunManifest generate_data(const PipelineConfig& cfg, const std::filesystem::path& out_dir, const RunContext& ctx);

/// The zero-shot suite for a seed; always regenerated, never stored.
EvalSuite eval_suite_for(const PipelineConfig& cfg);

/// Trains one arm into out_dir (checkpoint.pickpt, metrics.csv, manifest).
/// Stage 2 and baseline runs evaluate the suite at every milestone. Posthoc
/// requires init; stage1 and baseline ignore it. With an empty data_dir the
/// data is generated into out_dir/data.
RunManifest train_arm(const PipelineConfig& cfg, Stage stage, const std::filesystem::path& data_dir,
                      const std::optional<std::filesystem::path>& init, const std::filesystem::path& out_dir,
                      const RunContext& ctx);

/// Suite rows plus a 2AFC row on the validation triplets when val is non-empty.
std::vector<EvalRow> evaluate_checkpoint(const PipelineConfig& cfg, const EncoderParams& params,
                                         const std::string& run_id, std::span<const TripletRecord> val);

/// Zero-shot metric curves (names with a '/') of two runs, fitted and compared.
ScalingReport scaling_from_metrics(std::span<const MetricRecord> pi_metrics, std::span<const MetricRecord> base_metrics,
                                   const std::optional<FitWindow>& window = std::nullopt, const WarnFn& warn = {});

struct CompareResult {
    std::vector<EvalRow> eval;
    ScalingReport scaling;
    std::string report;
    RunManifest manifest;
    std::string headline_metric;
};

inline constexpr const char* pi_run_id = "pi";
inline constexpr const char* baseline_run_id = "baseline";
inline constexpr const char* posthoc_run_id = "posthoc";

/// Full contrast in out_dir: data, stage1 -> stage2 chain, baseline, posthoc
/// on the baseline, eval CSV, scaling CSVs, report.md and one manifest.
CompareResult run_compare(const PipelineConfig& cfg, const std::filesystem::path& out_dir, const RunContext& ctx);

}  // namespace pi
