#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "pi/rng.hpp"
#include "pi/tensor.hpp"

namespace pi {

using TokenId = std::uint32_t;

inline constexpr TokenId pad_token = 0;
inline constexpr TokenId bot_token = 1;
inline constexpr TokenId eot_token = 2;

/// ln(100): initial value of the learnable log logit scale.
inline constexpr double initial_log_scale = 4.605170185988091368;
inline constexpr double max_log_scale = initial_log_scale;
inline constexpr double min_log_scale = 0.0;

struct VisionEncoderConfig {
    std::size_t image_size = 32;
    std::size_t patch_size = 8;
    std::size_t channels = 3;
    std::size_t width = 64;
    std::size_t depth = 4;
    std::size_t heads = 4;
    std::size_t mlp_ratio = 4;
    std::size_t proj_dim = 64;

    std::size_t grid() const { return image_size / patch_size; }
    std::size_t num_patches() const { return grid() * grid(); }
    std::size_t num_tokens() const { return num_patches() + 1; }
    void validate() const;

    bool operator==(const VisionEncoderConfig&) const = default;
};

struct TextEncoderConfig {
    std::size_t vocab_size = 200;
    std::size_t context_length = 16;
    std::size_t width = 64;
    std::size_t depth = 2;
    std::size_t heads = 4;
    std::size_t mlp_ratio = 4;
    std::size_t proj_dim = 64;

    void validate() const;

    bool operator==(const TextEncoderConfig&) const = default;
};

/// Named parameters of the paired image/text model. Vision parameters live
/// under "vision.", text parameters under "text.", plus "logit_scale".
/// Iteration order is lexicographic by name.
class EncoderParams {
public:
    VisionEncoderConfig vision;
    TextEncoderConfig text;

    void insert(const std::string& name, Tensor value);
    bool contains(const std::string& name) const { return tensors_.count(name) != 0; }
    Tensor& at(const std::string& name);
    const Tensor& at(const std::string& name) const;

    std::vector<std::string> names() const;
    std::size_t size() const { return tensors_.size(); }
    std::size_t parameter_count() const;

    auto begin() { return tensors_.begin(); }
    auto end() { return tensors_.end(); }
    auto begin() const { return tensors_.begin(); }
    auto end() const { return tensors_.end(); }

    Tensor& logit_scale() { return at("logit_scale"); }
    const Tensor& logit_scale() const { return at("logit_scale"); }

    /// Deep copy with detached tensors.
    EncoderParams clone() const;

private:
    std::map<std::string, Tensor> tensors_;
};

inline const std::string logit_scale_name = "logit_scale";

bool is_vision_param(const std::string& name);
bool is_text_param(const std::string& name);
bool is_norm_param(const std::string& name);

/// Truncated-normal (std 0.02) weights, zero biases, unit norm gains and
/// log logit scale ln(100). Deterministic given the generator state.
EncoderParams init_params(const VisionEncoderConfig& vcfg, const TextEncoderConfig& tcfg, Rng& rng);

/// images: (B, channels, image_size, image_size) -> (B, proj_dim), not normalized.
/// train_mode is accepted for interface symmetry; the encoder has no
/// dropout, so both modes compute the same function.
Tensor encode_image(const EncoderParams& params, const Tensor& images, bool train_mode = false);

/// tokens: B sequences of exactly context_length ids, each with a single
/// end-of-text marker. Causal attention; pooled at the end-of-text position.
Tensor encode_text(const EncoderParams& params, std::span<const std::vector<TokenId>> tokens);

/// Vision-tower attention q/k/v projection paths (weights, and biases when
/// include_bias). Nothing from the text tower, output projections or MLPs.
std::set<std::string> qkv_param_names(const EncoderParams& params, bool include_bias = true);

/// Clamps exp(logit_scale) into [1, 100].
void clamp_logit_scale(EncoderParams& params);

/// FNV-1a over the names and raw bytes of the selected parameters.
std::uint64_t param_checksum(const EncoderParams& params,
                             const std::function<bool(const std::string&)>& select = nullptr);

}  // namespace pi
