#include "pi/encoders.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "pi/error.hpp"

namespace pi {

namespace {

constexpr double init_std = 0.02;

void check_positive(std::size_t v, const char* what) {
    require(v > 0, ErrorKind::config, std::string(what) + " must be positive");
}

std::string block_prefix(const std::string& tower, std::size_t index) {
    return tower + ".block" + std::to_string(index);
}

void add_linear(EncoderParams& p, Rng& rng, const std::string& name, std::size_t in, std::size_t out,
                bool bias = true) {
    std::vector<double> w(in * out);
    for (double& v : w) v = rng.truncated_normal(init_std);
    p.insert(name + ".weight", Tensor::from({in, out}, std::move(w)));
    if (bias) {
        p.insert(name + ".bias", Tensor::zeros({out}));
    }
}

void add_norm(EncoderParams& p, const std::string& name, std::size_t width) {
    p.insert(name + ".gain", Tensor::full({width}, 1.0));
    p.insert(name + ".bias", Tensor::zeros({width}));
}

void add_embedding(EncoderParams& p, Rng& rng, const std::string& name, Shape shape) {
    std::vector<double> v(shape_numel(shape));
    for (double& x : v) x = rng.truncated_normal(init_std);
    p.insert(name, Tensor::from(std::move(shape), std::move(v)));
}

void add_blocks(EncoderParams& p, Rng& rng, const std::string& tower, std::size_t depth, std::size_t width,
                std::size_t mlp_ratio) {
    for (std::size_t i = 0; i < depth; ++i) {
        const std::string b = block_prefix(tower, i);
        add_norm(p, b + ".ln1", width);
        add_linear(p, rng, b + ".attn.q_proj", width, width);
        add_linear(p, rng, b + ".attn.k_proj", width, width);
        add_linear(p, rng, b + ".attn.v_proj", width, width);
        add_linear(p, rng, b + ".attn.out_proj", width, width);
        add_norm(p, b + ".ln2", width);
        add_linear(p, rng, b + ".mlp.fc1", width, width * mlp_ratio);
        add_linear(p, rng, b + ".mlp.fc2", width * mlp_ratio, width);
    }
}

Tensor dense(const EncoderParams& p, const std::string& name, const Tensor& x) {
    const std::string bias = name + ".bias";
    return linear(x, p.at(name + ".weight"), p.contains(bias) ? p.at(bias) : Tensor());
}

Tensor norm(const EncoderParams& p, const std::string& name, const Tensor& x) {
    return layer_norm(x, p.at(name + ".gain"), p.at(name + ".bias"), 1e-5);
}

// x: (batch * tokens, width) rows -> same shape.
Tensor attention(const EncoderParams& p, const std::string& prefix, const Tensor& x, std::size_t batch,
                 std::size_t tokens, std::size_t heads, bool causal) {
    const std::size_t width = x.dim(1);
    const std::size_t head_dim = width / heads;
    auto split = [&](const Tensor& t) {
        return reshape(permute(reshape(t, {batch, tokens, heads, head_dim}), {0, 2, 1, 3}),
                       {batch * heads, tokens, head_dim});
    };
    Tensor q = split(dense(p, prefix + ".q_proj", x));
    Tensor k = split(dense(p, prefix + ".k_proj", x));
    Tensor v = split(dense(p, prefix + ".v_proj", x));
    Tensor scores = scale(matmul(q, transpose(k)), 1.0 / std::sqrt(static_cast<double>(head_dim)));
    if (causal) {
        scores = causal_mask(scores);
    }
    Tensor ctx = matmul(softmax(scores, -1), v);
    Tensor merged = reshape(permute(reshape(ctx, {batch, heads, tokens, head_dim}), {0, 2, 1, 3}),
                            {batch * tokens, width});
    return dense(p, prefix + ".out_proj", merged);
}

Tensor transformer(const EncoderParams& p, const std::string& tower, Tensor x, std::size_t depth,
                   std::size_t batch, std::size_t tokens, std::size_t heads, bool causal) {
    for (std::size_t i = 0; i < depth; ++i) {
        const std::string b = block_prefix(tower, i);
        x = add(x, attention(p, b + ".attn", norm(p, b + ".ln1", x), batch, tokens, heads, causal));
        Tensor h = gelu(dense(p, b + ".mlp.fc1", norm(p, b + ".ln2", x)));
        x = add(x, dense(p, b + ".mlp.fc2", h));
    }
    return x;
}

}  // namespace

void VisionEncoderConfig::validate() const {
    check_positive(image_size, "vision.image_size");
    check_positive(patch_size, "vision.patch_size");
    check_positive(channels, "vision.channels");
    check_positive(width, "vision.width");
    check_positive(depth, "vision.depth");
    check_positive(heads, "vision.heads");
    check_positive(mlp_ratio, "vision.mlp_ratio");
    check_positive(proj_dim, "vision.proj_dim");
    require(image_size % patch_size == 0, ErrorKind::config,
            "vision.image_size " + std::to_string(image_size) + " is not divisible by patch_size " +
                std::to_string(patch_size));
    require(width % heads == 0, ErrorKind::config,
            "vision.width " + std::to_string(width) + " is not divisible by heads " + std::to_string(heads));
}

void TextEncoderConfig::validate() const {
    check_positive(vocab_size, "text.vocab_size");
    check_positive(context_length, "text.context_length");
    check_positive(width, "text.width");
    check_positive(depth, "text.depth");
    check_positive(heads, "text.heads");
    check_positive(mlp_ratio, "text.mlp_ratio");
    check_positive(proj_dim, "text.proj_dim");
    require(vocab_size > eot_token, ErrorKind::config, "text.vocab_size must cover the special tokens");
    require(context_length >= 2, ErrorKind::config, "text.context_length must hold begin and end markers");
    require(width % heads == 0, ErrorKind::config,
            "text.width " + std::to_string(width) + " is not divisible by heads " + std::to_string(heads));
}

void EncoderParams::insert(const std::string& name, Tensor value) {
    require(!tensors_.count(name), ErrorKind::contract, "duplicate parameter " + name);
    tensors_.emplace(name, std::move(value));
}

Tensor& EncoderParams::at(const std::string& name) {
    auto it = tensors_.find(name);
    require(it != tensors_.end(), ErrorKind::contract, "unknown parameter " + name);
    return it->second;
}

const Tensor& EncoderParams::at(const std::string& name) const {
    auto it = tensors_.find(name);
    require(it != tensors_.end(), ErrorKind::contract, "unknown parameter " + name);
    return it->second;
}

std::vector<std::string> EncoderParams::names() const {
    std::vector<std::string> out;
    out.reserve(tensors_.size());
    for (const auto& [name, _] : tensors_) out.push_back(name);
    return out;
}

std::size_t EncoderParams::parameter_count() const {
    std::size_t total = 0;
    for (const auto& [_, t] : tensors_) total += t.numel();
    return total;
}

EncoderParams EncoderParams::clone() const {
    EncoderParams copy;
    copy.vision = vision;
    copy.text = text;
    for (const auto& [name, t] : tensors_) copy.tensors_.emplace(name, t.clone());
    return copy;
}

bool is_vision_param(const std::string& name) { return name.rfind("vision.", 0) == 0; }
bool is_text_param(const std::string& name) { return name.rfind("text.", 0) == 0; }

bool is_norm_param(const std::string& name) {
    return name.find(".ln") != std::string::npos;
}

EncoderParams init_params(const VisionEncoderConfig& vcfg, const TextEncoderConfig& tcfg, Rng& rng) {
    vcfg.validate();
    tcfg.validate();
    require(vcfg.proj_dim == tcfg.proj_dim, ErrorKind::config,
            "vision.proj_dim " + std::to_string(vcfg.proj_dim) + " differs from text.proj_dim " +
                std::to_string(tcfg.proj_dim));
    EncoderParams p;
    p.vision = vcfg;
    p.text = tcfg;

    const std::size_t patch_in = vcfg.channels * vcfg.patch_size * vcfg.patch_size;
    add_linear(p, rng, "vision.patch_embed", patch_in, vcfg.width);
    add_embedding(p, rng, "vision.class_token", {vcfg.width});
    add_embedding(p, rng, "vision.pos_embed", {vcfg.num_tokens(), vcfg.width});
    add_norm(p, "vision.ln_pre", vcfg.width);
    add_blocks(p, rng, "vision", vcfg.depth, vcfg.width, vcfg.mlp_ratio);
    add_norm(p, "vision.ln_post", vcfg.width);
    add_linear(p, rng, "vision.proj", vcfg.width, vcfg.proj_dim, false);

    add_embedding(p, rng, "text.token_embed", {tcfg.vocab_size, tcfg.width});
    add_embedding(p, rng, "text.pos_embed", {tcfg.context_length, tcfg.width});
    add_blocks(p, rng, "text", tcfg.depth, tcfg.width, tcfg.mlp_ratio);
    add_norm(p, "text.ln_final", tcfg.width);
    add_linear(p, rng, "text.proj", tcfg.width, tcfg.proj_dim, false);

    p.insert(logit_scale_name, Tensor::scalar(initial_log_scale));
    return p;
}

Tensor encode_image(const EncoderParams& params, const Tensor& images, bool /*train_mode*/) {
    const VisionEncoderConfig& cfg = params.vision;
    require(images.defined() && images.rank() == 4, ErrorKind::dimension,
            "encode_image expects (batch, channels, height, width), got " +
                (images.defined() ? shape_str(images.shape()) : std::string("undefined")));
    const std::size_t batch = images.dim(0);
    require(images.dim(1) == cfg.channels && images.dim(2) == cfg.image_size && images.dim(3) == cfg.image_size,
            ErrorKind::dimension,
            "image shape " + shape_str(images.shape()) + " does not match config (" +
                std::to_string(cfg.channels) + ", " + std::to_string(cfg.image_size) + ", " +
                std::to_string(cfg.image_size) + ")");
    const std::size_t g = cfg.grid();
    const std::size_t ps = cfg.patch_size;
    const std::size_t tokens = cfg.num_tokens();

    // (B, C, g, p, g, p) -> (B, g, g, C, p, p): one row per patch, channel-major inside.
    Tensor patches = reshape(permute(reshape(images, {batch, cfg.channels, g, ps, g, ps}), {0, 2, 4, 1, 3, 5}),
                             {batch * cfg.num_patches(), cfg.channels * ps * ps});
    Tensor embedded = reshape(dense(params, "vision.patch_embed", patches), {batch, cfg.num_patches(), cfg.width});
    Tensor cls = reshape(repeat(params.at("vision.class_token"), batch), {batch, 1, cfg.width});
    Tensor x = add(concat({cls, embedded}, 1), params.at("vision.pos_embed"));
    x = norm(params, "vision.ln_pre", reshape(x, {batch * tokens, cfg.width}));
    x = transformer(params, "vision", x, cfg.depth, batch, tokens, cfg.heads, false);

    std::vector<std::size_t> cls_rows(batch);
    for (std::size_t b = 0; b < batch; ++b) cls_rows[b] = b * tokens;
    Tensor pooled = norm(params, "vision.ln_post", gather_rows(x, cls_rows));
    return dense(params, "vision.proj", pooled);
}

Tensor encode_text(const EncoderParams& params, std::span<const std::vector<TokenId>> tokens) {
    const TextEncoderConfig& cfg = params.text;
    const std::size_t batch = tokens.size();
    require(batch > 0, ErrorKind::input, "encode_text needs at least one sequence");
    const std::size_t ctx = cfg.context_length;
    std::vector<std::size_t> ids;
    ids.reserve(batch * ctx);
    std::vector<std::size_t> pool_rows(batch);
    for (std::size_t b = 0; b < batch; ++b) {
        const auto& seq = tokens[b];
        require(seq.size() == ctx, ErrorKind::input,
                "sequence " + std::to_string(b) + " has " + std::to_string(seq.size()) +
                    " tokens, expected " + std::to_string(ctx));
        std::size_t eot_count = 0;
        for (std::size_t t = 0; t < ctx; ++t) {
            require(seq[t] < cfg.vocab_size, ErrorKind::input,
                    "token id " + std::to_string(seq[t]) + " outside vocabulary of " +
                        std::to_string(cfg.vocab_size));
            if (seq[t] == eot_token) {
                ++eot_count;
                pool_rows[b] = b * ctx + t;
            }
            ids.push_back(seq[t]);
        }
        require(eot_count == 1, ErrorKind::input,
                "sequence " + std::to_string(b) + " has " + std::to_string(eot_count) +
                    " end-of-text tokens, expected exactly one");
    }
    Tensor x = reshape(gather_rows(params.at("text.token_embed"), ids), {batch, ctx, cfg.width});
    x = reshape(add(x, params.at("text.pos_embed")), {batch * ctx, cfg.width});
    x = transformer(params, "text", x, cfg.depth, batch, ctx, cfg.heads, true);
    Tensor pooled = norm(params, "text.ln_final", gather_rows(x, pool_rows));
    return dense(params, "text.proj", pooled);
}

std::set<std::string> qkv_param_names(const EncoderParams& params, bool include_bias) {
    std::set<std::string> out;
    for (const auto& [name, _] : params) {
        if (!is_vision_param(name)) continue;
        for (const char* proj : {".attn.q_proj.", ".attn.k_proj.", ".attn.v_proj."}) {
            const auto pos = name.find(proj);
            if (pos == std::string::npos) continue;
            const std::string leaf = name.substr(pos + std::strlen(proj));
            if (leaf == "weight" || (include_bias && leaf == "bias")) {
                out.insert(name);
            }
        }
    }
    return out;
}

void clamp_logit_scale(EncoderParams& params) {
    double& v = params.logit_scale().data()[0];
    v = std::clamp(v, min_log_scale, max_log_scale);
}

std::uint64_t param_checksum(const EncoderParams& params,
                             const std::function<bool(const std::string&)>& select) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto feed = [&h](const void* bytes, std::size_t n) {
        const auto* p = static_cast<const unsigned char*>(bytes);
        for (std::size_t i = 0; i < n; ++i) {
            h ^= p[i];
            h *= 0x100000001b3ULL;
        }
    };
    for (const auto& [name, t] : params) {
        if (select && !select(name)) continue;
        feed(name.data(), name.size());
        feed(t.data().data(), t.numel() * sizeof(double));
    }
    return h;
}

}  // namespace pi
