#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "pi/encoders.hpp"
#include "pi/train.hpp"

namespace pi {

struct DataConfig {
    std::size_t triplets = 2000;
    std::size_t val_triplets = 500;
    /// Probability that a triplet judgment is flipped.
    double flip_prob = 0.0;
    std::size_t pairs = 20000;
    /// Existing gen-data output to train from; empty generates into the run directory.
    std::string dir;

    bool operator==(const DataConfig&) const = default;
};

struct EvalConfig {
    std::size_t per_dataset = 200;
    std::size_t retrieval_pairs = 256;

    bool operator==(const EvalConfig&) const = default;
};

/// Everything one pipeline run needs. The baseline arm uses the stage2 section.
struct PipelineConfig {
    std::uint64_t seed = 0;
    VisionEncoderConfig vision;
    TextEncoderConfig text;
    DataConfig data;
    TrainConfig stage1 = TrainConfig::defaults(Stage::stage1);
    TrainConfig stage2 = TrainConfig::defaults(Stage::stage2);
    TrainConfig posthoc = TrainConfig::defaults(Stage::posthoc);
    EvalConfig eval;

    /// Training config for an arm with seed and run id filled in.
    TrainConfig train_config(Stage stage, const std::string& run_id) const;
    void validate() const;

    bool operator==(const PipelineConfig&) const = default;
};

/// Sectioned "key = value" text: [run], [vision], [text], [data], [stage1],
/// [stage2], [posthoc], [eval]. '#' starts a comment. Missing keys keep their
/// defaults. Unknown sections or keys, malformed values and constraint
/// violations are config errors naming origin, line and key.
PipelineConfig parse_config(const std::string& text, const std::string& origin = "<config>");
PipelineConfig load_config(const std::filesystem::path& path);

/// Every key in fixed order; parse_config(serialize_config(c)) == c.
std::string serialize_config(const PipelineConfig& config);

}  // namespace pi
