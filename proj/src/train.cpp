#include "pi/train.hpp"

#include <algorithm>
#include <chrono>
#include <cinttypes>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <sstream>

#include "pi/error.hpp"

namespace pi {

namespace {

constexpr char checkpoint_magic[] = "PICKPT1";
constexpr std::size_t magic_size = sizeof(checkpoint_magic) - 1;

enum Stream : std::uint64_t { init_stream = 0, order_stream = 1, augment_stream = 2 };

std::string hexfloat(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%a", v);
    return buf;
}

std::string fmt17(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

// ---- training plumbing ----

class Clock {
public:
    explicit Clock(const RunHooks& hooks) : custom_(hooks.clock), start_(std::chrono::steady_clock::now()) {}
    double now() const {
        if (custom_) return custom_();
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    std::function<double()> custom_;
    std::chrono::steady_clock::time_point start_;
};

class Optimizer {
public:
    Optimizer(EncoderParams& params, std::set<std::string> trainable, const TrainConfig& cfg, std::size_t total_steps)
        : params_(params), trainable_(std::move(trainable)), cfg_(cfg), total_steps_(total_steps) {
        state_.beta1 = cfg.beta1;
        state_.beta2 = cfg.beta2;
        state_.eps = cfg.eps;
        state_.weight_decay = cfg.weight_decay;
        for (auto& [name, t] : params_) t.set_requires_grad(trainable_.count(name) != 0);
    }

    ~Optimizer() {
        for (auto& [name, t] : params_) {
            t.set_requires_grad(false);
            t.clear_grad();
        }
    }

    double step(const Tensor& loss) {
        const double value = loss.item();
        backward(loss);
        adamw_step(params_, trainable_, state_, scheduled_lr(cfg_.lr, steps_, total_steps_, cfg_.warmup));
        ++steps_;
        for (const std::string& name : trainable_) params_.at(name).clear_grad();
        return value;
    }

    const AdamWState& state() const { return state_; }

private:
    EncoderParams& params_;
    std::set<std::string> trainable_;
    const TrainConfig& cfg_;
    std::size_t total_steps_;
    std::size_t steps_ = 0;
    AdamWState state_;
};

std::vector<std::size_t> shuffled(std::size_t n, Rng& rng) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
    return idx;
}

Image prepare(const Image& im, const TrainConfig& cfg, const AugmentPolicy& policy, Rng& rng) {
    return cfg.augment ? augment(im, policy, rng) : normalize(im, policy);
}

Tensor triplet_batch_loss(const EncoderParams& params, std::span<const TripletRecord> data,
                          std::span<const std::size_t> batch, const TrainConfig& cfg, Rng& aug) {
    const AugmentPolicy policy;
    const std::size_t b = batch.size();
    std::vector<Image> images(3 * b);
    std::vector<std::uint8_t> y(b);
    for (std::size_t i = 0; i < b; ++i) {
        const TripletRecord& r = data[batch[i]];
        // One transform per triplet, shared by its three images.
        const std::uint64_t draw = aug.next_u64();
        Rng r0(draw), r1(draw), r2(draw);
        images[i] = prepare(r.x, cfg, policy, r0);
        images[b + i] = prepare(r.x0, cfg, policy, r1);
        images[2 * b + i] = prepare(r.x1, cfg, policy, r2);
        y[i] = r.y;
    }
    std::vector<const Image*> ptrs;
    for (const Image& im : images) ptrs.push_back(&im);
    Tensor e = encode_image(params, stack_images(ptrs), true);
    return perceptual_triplet_loss(slice_rows(e, 0, b), slice_rows(e, b, 2 * b), slice_rows(e, 2 * b, 3 * b), y,
                                   cfg.margin);
}

Tensor contrastive_batch_loss(const EncoderParams& params, std::span<const CaptionRecord> data,
                              std::span<const std::size_t> batch, const TrainConfig& cfg, Rng& aug) {
    const AugmentPolicy policy;
    std::vector<Image> images;
    std::vector<std::vector<TokenId>> tokens;
    images.reserve(batch.size());
    for (std::size_t i : batch) {
        images.push_back(prepare(data[i].image, cfg, policy, aug));
        tokens.push_back(data[i].tokens);
    }
    std::vector<const Image*> ptrs;
    for (const Image& im : images) ptrs.push_back(&im);
    Tensor img = l2_normalize(encode_image(params, stack_images(ptrs), true));
    Tensor txt = l2_normalize(encode_text(params, tokens));
    return infonce_loss(matmul(img, transpose(txt)), params.logit_scale());
}

struct Recorder {
    const TrainConfig& cfg;
    const Clock& clock;
    std::vector<MetricRecord> records;

    void add(std::uint64_t samples, const std::string& metric, double value) {
        records.push_back(MetricRecord{cfg.run_id, to_string(cfg.stage), samples, metric, value, clock.now()});
    }

    void add_eval(std::uint64_t samples, const EvalFn& eval, const EncoderParams& params) {
        if (!eval) return;
        NoGradGuard no_grad;
        for (const auto& [name, value] : eval(params)) add(samples, name, value);
    }
};

void say(const RunHooks& hooks, const std::string& msg) {
    if (hooks.log) hooks.log(msg);
}

std::size_t steps_per_epoch(std::size_t n, std::size_t batch, const std::string& what) {
    require(n >= batch, ErrorKind::input,
            what + ": " + std::to_string(n) + " records cannot fill one batch of " + std::to_string(batch));
    return n / batch;
}

// Shared loop for the two triplet-loss arms.
TrainResult triplet_training(const TrainConfig& cfg, EncoderParams params, std::set<std::string> trainable,
                             std::span<const TripletRecord> train, std::span<const TripletRecord> val,
                             std::vector<std::string> provenance, const RunHooks& hooks) {
    const std::size_t per_epoch = steps_per_epoch(train.size(), cfg.batch_size, "triplet set");
    const Clock clock(hooks);
    Recorder rec{cfg, clock, {}};
    Rng order(mix_seed(cfg.seed, order_stream));
    Rng aug(mix_seed(cfg.seed, augment_stream));
    std::uint64_t samples = 0;
    if (!val.empty()) rec.add(0, "val_2afc", triplet_2afc_accuracy(params, val));
    rec.add_eval(0, hooks.eval, params);
    AdamWState final_state;
    {
        Optimizer opt(params, std::move(trainable), cfg, per_epoch * cfg.epochs);
        for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
            const auto idx = shuffled(train.size(), order);
            double total = 0.0;
            for (std::size_t s = 0; s < per_epoch; ++s) {
                const std::span<const std::size_t> batch(idx.data() + s * cfg.batch_size, cfg.batch_size);
                total += opt.step(triplet_batch_loss(params, train, batch, cfg, aug));
                samples += cfg.batch_size;
            }
            rec.add(samples, "epoch_loss", total / static_cast<double>(per_epoch));
            if (!val.empty()) rec.add(samples, "val_2afc", triplet_2afc_accuracy(params, val));
            say(hooks, cfg.run_id + " " + to_string(cfg.stage) + " epoch " + std::to_string(epoch + 1) + " loss " +
                           fmt17(total / static_cast<double>(per_epoch)));
        }
        final_state = opt.state();
    }
    rec.add_eval(samples, hooks.eval, params);
    provenance.push_back(to_string(cfg.stage));
    Checkpoint c{std::move(params), std::move(final_state), order.seed(), order.state(), samples,
                 std::move(provenance)};
    return TrainResult{std::move(c), std::move(rec.records)};
}

// ---- checkpoint io ----

template <typename T>
void put(std::string& out, T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.append(buf, sizeof(T));
}

void put_section(std::string& out, const std::string& name, const Shape& shape, std::span<const double> data) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put<std::uint32_t>(out, static_cast<std::uint32_t>(shape.size()));
    for (std::size_t d : shape) put<std::uint64_t>(out, d);
    out.append(reinterpret_cast<const char*>(data.data()), data.size() * sizeof(double));
}

class ByteReader {
public:
    ByteReader(const std::string& data, std::string where) : data_(data), where_(std::move(where)) {}

    template <typename T>
    T get() {
        need(sizeof(T));
        T v;
        std::memcpy(&v, data_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }

    std::string bytes(std::size_t n) {
        need(n);
        std::string s = data_.substr(pos_, n);
        pos_ += n;
        return s;
    }

    std::vector<double> doubles(std::size_t n) {
        need(n * sizeof(double));
        std::vector<double> v(n);
        std::memcpy(v.data(), data_.data() + pos_, n * sizeof(double));
        pos_ += n * sizeof(double);
        return v;
    }

    bool done() const { return pos_ == data_.size(); }

private:
    void need(std::size_t n) const {
        require(n <= data_.size() - pos_, ErrorKind::io, "checkpoint " + where_ + " is truncated");
    }

    const std::string& data_;
    std::string where_;
    std::size_t pos_ = 0;
};

std::string join(const std::vector<std::string>& parts) {
    std::string out;
    for (const auto& p : parts) out += (out.empty() ? "" : ",") + p;
    return out.empty() ? "-" : out;
}

std::vector<std::string> split_commas(const std::string& s) {
    std::vector<std::string> out;
    if (s == "-") return out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(item);
    return out;
}

std::string encode_header(const Checkpoint& c) {
    const auto& v = c.params.vision;
    const auto& t = c.params.text;
    std::ostringstream h;
    h << "vision.image_size " << v.image_size << '\n'
      << "vision.patch_size " << v.patch_size << '\n'
      << "vision.channels " << v.channels << '\n'
      << "vision.width " << v.width << '\n'
      << "vision.depth " << v.depth << '\n'
      << "vision.heads " << v.heads << '\n'
      << "vision.mlp_ratio " << v.mlp_ratio << '\n'
      << "vision.proj_dim " << v.proj_dim << '\n'
      << "text.vocab_size " << t.vocab_size << '\n'
      << "text.context_length " << t.context_length << '\n'
      << "text.width " << t.width << '\n'
      << "text.depth " << t.depth << '\n'
      << "text.heads " << t.heads << '\n'
      << "text.mlp_ratio " << t.mlp_ratio << '\n'
      << "text.proj_dim " << t.proj_dim << '\n'
      << "provenance " << join(c.provenance) << '\n'
      << "samples_seen " << c.samples_seen << '\n'
      << "rng_seed " << c.rng_seed << '\n'
      << "optimizer " << (c.optimizer ? 1 : 0) << '\n';
    if (c.optimizer) {
        h << "adam.step " << c.optimizer->step << '\n'
          << "adam.beta1 " << hexfloat(c.optimizer->beta1) << '\n'
          << "adam.beta2 " << hexfloat(c.optimizer->beta2) << '\n'
          << "adam.eps " << hexfloat(c.optimizer->eps) << '\n'
          << "adam.weight_decay " << hexfloat(c.optimizer->weight_decay) << '\n';
    }
    h << "rng_state " << c.rng_state << '\n';
    return h.str();
}

void decode_header(const std::string& text, Checkpoint& c, bool& has_optimizer) {
    std::map<std::string, std::string> kv;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        const auto sp = line.find(' ');
        require(sp != std::string::npos, ErrorKind::format, "malformed checkpoint header line '" + line + "'");
        kv[line.substr(0, sp)] = line.substr(sp + 1);
    }
    auto get = [&](const std::string& key) -> const std::string& {
        auto it = kv.find(key);
        require(it != kv.end(), ErrorKind::format, "checkpoint header lacks '" + key + "'");
        return it->second;
    };
    auto num = [&](const std::string& key) -> std::uint64_t { return std::stoull(get(key)); };
    auto real = [&](const std::string& key) { return std::strtod(get(key).c_str(), nullptr); };
    auto& v = c.params.vision;
    v.image_size = num("vision.image_size");
    v.patch_size = num("vision.patch_size");
    v.channels = num("vision.channels");
    v.width = num("vision.width");
    v.depth = num("vision.depth");
    v.heads = num("vision.heads");
    v.mlp_ratio = num("vision.mlp_ratio");
    v.proj_dim = num("vision.proj_dim");
    auto& t = c.params.text;
    t.vocab_size = num("text.vocab_size");
    t.context_length = num("text.context_length");
    t.width = num("text.width");
    t.depth = num("text.depth");
    t.heads = num("text.heads");
    t.mlp_ratio = num("text.mlp_ratio");
    t.proj_dim = num("text.proj_dim");
    c.provenance = split_commas(get("provenance"));
    c.samples_seen = num("samples_seen");
    c.rng_seed = num("rng_seed");
    c.rng_state = get("rng_state");
    has_optimizer = num("optimizer") != 0;
    if (has_optimizer) {
        AdamWState s;
        s.step = num("adam.step");
        s.beta1 = real("adam.beta1");
        s.beta2 = real("adam.beta2");
        s.eps = real("adam.eps");
        s.weight_decay = real("adam.weight_decay");
        c.optimizer = std::move(s);
    }
}

// ---- metric csv ----

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

}  // namespace

std::string to_string(Stage stage) {
    switch (stage) {
        case Stage::stage1: return "stage1";
        case Stage::stage2: return "stage2";
        case Stage::baseline: return "baseline";
        case Stage::posthoc: return "posthoc";
    }
    return "unknown";
}

Stage parse_stage(const std::string& tag) {
    if (tag == "stage1") return Stage::stage1;
    if (tag == "stage2") return Stage::stage2;
    if (tag == "baseline") return Stage::baseline;
    if (tag == "posthoc") return Stage::posthoc;
    fail(ErrorKind::config, "unknown stage '" + tag + "' (expected stage1, stage2, baseline or posthoc)");
}

bool decays(const std::string& name) { return name != logit_scale_name && !is_norm_param(name); }

void adamw_step(EncoderParams& params, const std::set<std::string>& trainable, AdamWState& state, double lr) {
    for (const std::string& name : trainable) {
        const Tensor& p = params.at(name);
        require(p.has_grad(), ErrorKind::contract, "no gradient for trainable parameter " + name);
    }
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double c1 = 1.0 - std::pow(state.beta1, t);
    const double c2 = 1.0 - std::pow(state.beta2, t);
    for (const std::string& name : trainable) {
        Tensor& p = params.at(name);
        const auto g = p.grad();
        auto& m = state.m[name];
        auto& v = state.v[name];
        if (m.empty()) {
            m.assign(g.size(), 0.0);
            v.assign(g.size(), 0.0);
        }
        auto& data = p.storage().data;
        const double keep = decays(name) ? 1.0 - lr * state.weight_decay : 1.0;
        for (std::size_t i = 0; i < data.size(); ++i) {
            data[i] *= keep;
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
            data[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + state.eps);
        }
    }
}

double scheduled_lr(double base_lr, std::size_t step, std::size_t total_steps, double warmup) {
    const auto warm = static_cast<std::size_t>(std::ceil(warmup * static_cast<double>(total_steps)));
    if (step < warm) return base_lr * static_cast<double>(step + 1) / static_cast<double>(warm);
    const double span = static_cast<double>(std::max<std::size_t>(1, total_steps - warm));
    const double progress = std::min(1.0, static_cast<double>(step - warm) / span);
    return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

TrainConfig TrainConfig::defaults(Stage stage) {
    TrainConfig c;
    c.stage = stage;
    switch (stage) {
        case Stage::stage1: c.epochs = 32; c.lr = 3e-4; break;
        case Stage::stage2:
        case Stage::baseline: c.epochs = 32; c.lr = 1e-3; break;
        case Stage::posthoc: c.epochs = 8; c.lr = 3e-4; break;
    }
    return c;
}

void TrainConfig::validate() const {
    require(epochs > 0, ErrorKind::config, "epochs must be positive");
    require(batch_size >= 1, ErrorKind::config, "batch_size must be positive");
    const bool contrastive = stage == Stage::stage2 || stage == Stage::baseline;
    require(!contrastive || batch_size >= 2, ErrorKind::config, "batch_size must be at least 2 for contrastive stages");
    require(lr > 0.0, ErrorKind::config, "lr must be positive");
    require(weight_decay >= 0.0, ErrorKind::config, "weight_decay must be non-negative");
    require(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0, ErrorKind::config, "betas must lie in [0, 1)");
    require(eps > 0.0, ErrorKind::config, "eps must be positive");
    require(warmup >= 0.0 && warmup < 1.0, ErrorKind::config, "warmup must lie in [0, 1)");
    require(margin > 0.0, ErrorKind::config, "margin must be positive");
    require(eval_points >= 1, ErrorKind::config, "eval_points must be positive");
}

std::vector<std::uint64_t> eval_milestones(const TrainConfig& cfg, std::uint64_t total) {
    const std::uint64_t b = cfg.batch_size;
    std::vector<std::uint64_t> out;
    if (total < b) return out;
    const double start = static_cast<double>(std::max<std::uint64_t>(b, cfg.eval_start_samples));
    if (cfg.eval_points > 1 && start < static_cast<double>(total)) {
        const double ratio = static_cast<double>(total) / start;
        for (std::size_t k = 0; k + 1 < cfg.eval_points; ++k) {
            const double x = start * std::pow(ratio, static_cast<double>(k) / static_cast<double>(cfg.eval_points - 1));
            const auto batches = std::max<std::uint64_t>(1, static_cast<std::uint64_t>(std::llround(x / static_cast<double>(b))));
            const std::uint64_t m = std::min(total, batches * b);
            if (out.empty() || m > out.back()) out.push_back(m);
        }
    }
    if (out.empty() || out.back() != total) out.push_back(total);
    return out;
}

EncoderParams seeded_init(const VisionEncoderConfig& vcfg, const TextEncoderConfig& tcfg, std::uint64_t seed) {
    Rng rng(mix_seed(seed, init_stream));
    return init_params(vcfg, tcfg, rng);
}

TrainResult train_stage1(const TrainConfig& cfg, const VisionEncoderConfig& vcfg, const TextEncoderConfig& tcfg,
                         std::span<const TripletRecord> train, std::span<const TripletRecord> val,
                         const RunHooks& hooks) {
    require(cfg.stage == Stage::stage1, ErrorKind::config, "train_stage1 needs stage tag stage1");
    cfg.validate();
    EncoderParams params = seeded_init(vcfg, tcfg, cfg.seed);
    std::set<std::string> trainable;
    for (const auto& name : params.names())
        if (is_vision_param(name)) trainable.insert(name);
    return triplet_training(cfg, std::move(params), std::move(trainable), train, val, {}, hooks);
}

TrainResult finetune_posthoc(const TrainConfig& cfg, std::span<const TripletRecord> train,
                             std::span<const TripletRecord> val, const Checkpoint& init, const RunHooks& hooks) {
    require(cfg.stage == Stage::posthoc, ErrorKind::config, "finetune_posthoc needs stage tag posthoc");
    cfg.validate();
    EncoderParams params = init.params.clone();
    std::set<std::string> trainable = qkv_param_names(params, cfg.qkv_bias);
    return triplet_training(cfg, std::move(params), std::move(trainable), train, val, init.provenance, hooks);
}

TrainResult train_stage2(const TrainConfig& cfg, const VisionEncoderConfig& vcfg, const TextEncoderConfig& tcfg,
                         std::span<const CaptionRecord> pairs, const Checkpoint* init, const RunHooks& hooks) {
    require(cfg.stage == Stage::stage2 || cfg.stage == Stage::baseline, ErrorKind::config,
            "train_stage2 needs stage tag stage2 or baseline");
    cfg.validate();
    EncoderParams params;
    std::vector<std::string> provenance;
    if (init) {
        require(init->params.vision == vcfg, ErrorKind::config, "init checkpoint vision config does not match");
        require(init->params.text == tcfg, ErrorKind::config, "init checkpoint text config does not match");
        params = init->params.clone();
        provenance = init->provenance;
    } else {
        params = seeded_init(vcfg, tcfg, cfg.seed);
    }
    const std::size_t per_epoch = steps_per_epoch(pairs.size(), cfg.batch_size, "pair set");
    const std::uint64_t total = static_cast<std::uint64_t>(per_epoch) * cfg.epochs * cfg.batch_size;
    const auto milestones = eval_milestones(cfg, total);
    const Clock clock(hooks);
    Recorder rec{cfg, clock, {}};
    Rng order(mix_seed(cfg.seed, order_stream));
    Rng aug(mix_seed(cfg.seed, augment_stream));
    std::set<std::string> trainable;
    for (const auto& name : params.names()) trainable.insert(name);

    std::uint64_t samples = 0;
    std::size_t next = 0;
    double window_loss = 0.0;
    std::size_t window_steps = 0;
    AdamWState final_state;
    {
        Optimizer opt(params, std::move(trainable), cfg, per_epoch * cfg.epochs);
        for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
            const auto idx = shuffled(pairs.size(), order);
            double total_loss = 0.0;
            for (std::size_t s = 0; s < per_epoch; ++s) {
                const std::span<const std::size_t> batch(idx.data() + s * cfg.batch_size, cfg.batch_size);
                const double loss = opt.step(contrastive_batch_loss(params, pairs, batch, cfg, aug));
                clamp_logit_scale(params);
                samples += cfg.batch_size;
                total_loss += loss;
                window_loss += loss;
                ++window_steps;
                if (next < milestones.size() && samples >= milestones[next]) {
                    rec.add(samples, "train_loss", window_loss / static_cast<double>(window_steps));
                    rec.add(samples, "logit_scale", params.logit_scale().item());
                    rec.add_eval(samples, hooks.eval, params);
                    window_loss = 0.0;
                    window_steps = 0;
                    ++next;
                }
            }
            rec.add(samples, "epoch_loss", total_loss / static_cast<double>(per_epoch));
            say(hooks, cfg.run_id + " " + to_string(cfg.stage) + " epoch " + std::to_string(epoch + 1) + " loss " +
                           fmt17(total_loss / static_cast<double>(per_epoch)));
        }
        final_state = opt.state();
    }
    provenance.push_back(to_string(cfg.stage));
    Checkpoint c{std::move(params), std::move(final_state), order.seed(), order.state(), samples,
                 std::move(provenance)};
    return TrainResult{std::move(c), std::move(rec.records)};
}

void write_metrics_csv(const std::filesystem::path& path, std::span<const MetricRecord> records, bool append) {
    const bool fresh = !append || !std::filesystem::exists(path) || std::filesystem::file_size(path) == 0;
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, append ? std::ios::app : std::ios::trunc);
    require(static_cast<bool>(out), ErrorKind::io, "cannot write " + path.string());
    if (fresh) out << metric_csv_header << '\n';
    for (const MetricRecord& r : records) {
        out << r.run_id << ',' << r.stage << ',' << r.samples_seen << ',' << r.metric << ',' << fmt17(r.value) << ','
            << fmt17(r.wall_time) << '\n';
    }
    require(static_cast<bool>(out), ErrorKind::io, "write failed for " + path.string());
}

std::vector<MetricRecord> read_metrics_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    require(static_cast<bool>(in), ErrorKind::io, "cannot open " + path.string());
    std::string line;
    require(std::getline(in, line) && line == metric_csv_header, ErrorKind::format,
            path.string() + ": expected header '" + std::string(metric_csv_header) + "'");
    std::vector<MetricRecord> out;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto cells = split_csv(line);
        require(cells.size() == 6, ErrorKind::format, path.string() + ":" + std::to_string(lineno) + ": expected 6 fields");
        MetricRecord r;
        r.run_id = cells[0];
        r.stage = cells[1];
        r.metric = cells[3];
        try {
            r.samples_seen = std::stoull(cells[2]);
            r.value = std::stod(cells[4]);
            r.wall_time = std::stod(cells[5]);
        } catch (const std::exception&) {
            fail(ErrorKind::format, path.string() + ":" + std::to_string(lineno) + ": bad number");
        }
        out.push_back(std::move(r));
    }
    return out;
}

void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path) {
    std::string out(checkpoint_magic, magic_size);
    const std::string header = encode_header(c);
    put<std::uint64_t>(out, header.size());
    out += header;
    std::size_t sections = c.params.size();
    if (c.optimizer) sections += c.optimizer->m.size() + c.optimizer->v.size();
    put<std::uint64_t>(out, sections);
    for (const auto& [name, t] : c.params) put_section(out, name, t.shape(), t.data());
    if (c.optimizer) {
        for (const auto& [name, m] : c.optimizer->m) put_section(out, "adam.m:" + name, {m.size()}, m);
        for (const auto& [name, v] : c.optimizer->v) put_section(out, "adam.v:" + name, {v.size()}, v);
    }
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    require(static_cast<bool>(f), ErrorKind::io, "cannot write " + path.string());
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    require(static_cast<bool>(f), ErrorKind::io, "write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    require(static_cast<bool>(f), ErrorKind::io, "cannot open checkpoint " + path.string());
    std::ostringstream ss;
    ss << f.rdbuf();
    const std::string data = ss.str();
    require(data.size() >= magic_size, ErrorKind::io, "checkpoint " + path.string() + " is truncated");
    require(data.compare(0, magic_size, checkpoint_magic) == 0, ErrorKind::format,
            path.string() + " is not a PICKPT1 checkpoint");
    ByteReader r(data, path.string());
    r.bytes(magic_size);
    Checkpoint c;
    bool has_optimizer = false;
    const auto header_size = r.get<std::uint64_t>();
    decode_header(r.bytes(header_size), c, has_optimizer);
    const auto sections = r.get<std::uint64_t>();
    for (std::uint64_t s = 0; s < sections; ++s) {
        const std::string name = r.bytes(r.get<std::uint32_t>());
        Shape shape(r.get<std::uint32_t>());
        for (auto& d : shape) d = r.get<std::uint64_t>();
        std::vector<double> values = r.doubles(shape_numel(shape));
        if (name.rfind("adam.m:", 0) == 0 || name.rfind("adam.v:", 0) == 0) {
            require(has_optimizer, ErrorKind::format, "optimizer section without optimizer header");
            auto& target = name[5] == 'm' ? c.optimizer->m : c.optimizer->v;
            target[name.substr(7)] = std::move(values);
        } else {
            c.params.insert(name, Tensor::from(std::move(shape), std::move(values)));
        }
    }
    require(r.done(), ErrorKind::format, "trailing bytes in checkpoint " + path.string());
    return c;
}

}  // namespace pi
