#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "pi/encoders.hpp"
#include "pi/objectives.hpp"
#include "pi/synth.hpp"

namespace pi {

enum class Stage { stage1, stage2, baseline, posthoc };

std::string to_string(Stage stage);
/// Throws a config error for unknown tags.
Stage parse_stage(const std::string& tag);

struct AdamWState {
    double beta1 = 0.9;
    double beta2 = 0.98;
    double eps = 1e-8;
    double weight_decay = 0.1;
    std::uint64_t step = 0;
    std::map<std::string, std::vector<double>> m;
    std::map<std::string, std::vector<double>> v;

    bool operator==(const AdamWState&) const = default;
};

/// True for parameters that receive decoupled weight decay: everything except
/// the logit scale and norm gains/biases.
bool decays(const std::string& name);

/// One AdamW update of the named trainable parameters from their gradients:
/// theta -= lr * wd * theta (decayed names only), then the bias-corrected
/// Adam step. Throws a contract error when a trainable parameter has no
/// gradient.
void adamw_step(EncoderParams& params, const std::set<std::string>& trainable, AdamWState& state, double lr);

/// Linear warmup over the first ceil(warmup * total) steps, then cosine decay to 0.
double scheduled_lr(double base_lr, std::size_t step, std::size_t total_steps, double warmup);

struct TrainConfig {
    Stage stage = Stage::stage1;
    std::size_t epochs = 32;
    std::size_t batch_size = 64;
    double lr = 3e-4;
    double weight_decay = 0.1;
    double beta1 = 0.9;
    double beta2 = 0.98;
    double eps = 1e-8;
    double warmup = 0.1;
    double margin = default_margin;
    std::uint64_t seed = 0;
    bool augment = true;
    bool qkv_bias = true;
    /// Geometric eval milestones: eval_points values from eval_start_samples
    /// to the final sample count.
    std::size_t eval_points = 8;
    std::size_t eval_start_samples = 256;
    std::string run_id = "run";

    /// Defaults per stage: 32 epochs and lr 3e-4 for stage 1,
    /// 32 epochs and lr 1e-3 for stage 2 and the baseline, 8 epochs and lr 3e-4
    /// for post-hoc fine-tuning.
    static TrainConfig defaults(Stage stage);
    void validate() const;

    bool operator==(const TrainConfig&) const = default;
};

struct MetricRecord {
    std::string run_id;
    std::string stage;
    std::uint64_t samples_seen = 0;
    std::string metric;
    double value = 0.0;
    double wall_time = 0.0;

    bool operator==(const MetricRecord&) const = default;
};

inline constexpr const char* metric_csv_header = "run_id,stage,samples_seen,metric,value,wall_time";

void write_metrics_csv(const std::filesystem::path& path, std::span<const MetricRecord> records,
                       bool append = false);
std::vector<MetricRecord> read_metrics_csv(const std::filesystem::path& path);

struct Checkpoint {
    EncoderParams params;
    std::optional<AdamWState> optimizer;
    std::uint64_t rng_seed = 0;
    std::string rng_state;
    std::uint64_t samples_seen = 0;
    std::vector<std::string> provenance;
};

void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path);
/// Wrong magic -> format error; missing or truncated file -> io error.
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Named metric values computed from a parameter snapshot.
using EvalFn = std::function<std::vector<std::pair<std::string, double>>(const EncoderParams&)>;

struct RunHooks {
    /// Seconds since the run started; defaults to a steady clock.
    std::function<double()> clock;
    /// Zero-shot metrics at each milestone of the contrastive stages.
    EvalFn eval;
    /// Progress lines; silent when empty.
    std::function<void(const std::string&)> log;
};

struct TrainResult {
    Checkpoint checkpoint;
    std::vector<MetricRecord> metrics;
};

/// Geometric samples_seen milestones, each a multiple of batch_size, ending at total.
std::vector<std::uint64_t> eval_milestones(const TrainConfig& cfg, std::uint64_t total_samples);

/// Seeded random initialization shared by every arm with the same seed.
EncoderParams seeded_init(const VisionEncoderConfig& vcfg, const TextEncoderConfig& tcfg, std::uint64_t seed);

/// Trains the vision tower on the triplet loss. Starts from seeded_init.
TrainResult train_stage1(const TrainConfig& cfg, const VisionEncoderConfig& vcfg, const TextEncoderConfig& tcfg,
                         std::span<const TripletRecord> train, std::span<const TripletRecord> val,
                         const RunHooks& hooks = {});

/// Contrastive training of both towers and the logit scale. Without init the
/// model starts from seeded_init (the baseline arm).
TrainResult train_stage2(const TrainConfig& cfg, const VisionEncoderConfig& vcfg, const TextEncoderConfig& tcfg,
                         std::span<const CaptionRecord> pairs, const Checkpoint* init, const RunHooks& hooks = {});

/// Triplet-loss fine-tuning of the vision q/k/v projections only.
TrainResult finetune_posthoc(const TrainConfig& cfg, std::span<const TripletRecord> train,
                             std::span<const TripletRecord> val, const Checkpoint& init, const RunHooks& hooks = {});

}  // namespace pi
