#include "pi/synth.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <numbers>
#include <sstream>
#include <thread>

#include "pi/error.hpp"

namespace pi {

static_assert(std::endian::native == std::endian::little, "blob format assumes a little-endian host");

namespace {

constexpr double color_jitter = 0.06;
constexpr double background_jitter = 0.03;

enum Attribute : std::size_t { attr_class, attr_color, attr_position, attr_scale, num_attributes };
// class changes are drawn half as often as the others
constexpr std::array<double, num_attributes> attribute_weights{0.5, 1.0, 1.0, 1.0};

bool inside(std::uint32_t shape, double dx, double dy) {
    const double ax = std::abs(dx);
    const double ay = std::abs(dy);
    const double r2 = dx * dx + dy * dy;
    switch (shape) {
        case 0: return r2 <= 1.0;
        case 1: return ax <= 0.8 && ay <= 0.8;
        case 2: return dy <= 0.8 && dy >= -0.9 && ax <= (dy + 0.9) / 1.7 * 0.95;
        case 3: return ax + ay <= 1.0;
        case 4: return (ax <= 0.3 && ay <= 0.95) || (ay <= 0.3 && ax <= 0.95);
        case 5: return r2 <= 1.0 && r2 >= 0.3025;
        case 6: return ax <= 1.0 && ay <= 0.3;
        case 7: {
            const double theta = std::atan2(dy, dx);
            const double lobe = 0.5 + 0.5 * std::cos(5.0 * theta);
            const double radius = 0.4 + 0.6 * lobe * lobe;
            return r2 <= radius * radius;
        }
        default: return false;
    }
}

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

void clamp_position(LatentSpec& l) {
    const double half = l.scale / 2.0;
    l.row = std::clamp(l.row, half, 1.0 - half);
    l.col = std::clamp(l.col, half, 1.0 - half);
}

void perturb(LatentSpec& l, std::size_t attribute, double magnitude, Rng& rng) {
    switch (attribute) {
        case attr_class:
            l.class_id = static_cast<std::uint32_t>((l.class_id + 1 + rng.below(num_shapes - 1)) % num_shapes);
            break;
        case attr_color: {
            std::array<double, 3> dir{rng.normal(), rng.normal(), rng.normal()};
            const double n = std::sqrt(dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]) + 1e-12;
            for (std::size_t c = 0; c < 3; ++c) l.color[c] = clamp01(l.color[c] + 0.6 * magnitude * dir[c] / n);
            break;
        }
        case attr_position: {
            const double theta = rng.uniform(0.0, 2.0 * std::numbers::pi);
            l.row += 0.35 * magnitude * std::sin(theta);
            l.col += 0.35 * magnitude * std::cos(theta);
            clamp_position(l);
            break;
        }
        case attr_scale: {
            const double fit = 2.0 * std::min({l.row, 1.0 - l.row, l.col, 1.0 - l.col});
            const double sign = rng.bernoulli(0.5) ? 1.0 : -1.0;
            l.scale = std::clamp(l.scale + sign * 0.3 * magnitude, min_scale, std::min(max_scale, fit));
            break;
        }
        default: break;
    }
}

std::vector<std::size_t> pick_attributes(std::vector<std::size_t>& pool, std::size_t k, Rng& rng) {
    std::vector<std::size_t> picked;
    for (std::size_t j = 0; j < k && !pool.empty(); ++j) {
        double total = 0.0;
        for (std::size_t a : pool) total += attribute_weights[a];
        double u = rng.uniform() * total;
        std::size_t chosen = pool.size() - 1;
        for (std::size_t i = 0; i < pool.size(); ++i) {
            u -= attribute_weights[pool[i]];
            if (u < 0.0) {
                chosen = i;
                break;
            }
        }
        picked.push_back(pool[chosen]);
        pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(chosen));
    }
    return picked;
}

template <typename Fn>
void for_each_index(std::size_t n, std::size_t workers, Fn fn) {
    workers = std::max<std::size_t>(1, std::min(workers, n));
    if (workers == 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    const std::size_t chunk = (n + workers - 1) / workers;
    for (std::size_t w = 0; w < workers; ++w) {
        const std::size_t begin = w * chunk;
        const std::size_t end = std::min(n, begin + chunk);
        pool.emplace_back([=, &fn]() {
            for (std::size_t i = begin; i < end; ++i) fn(i);
        });
    }
    for (auto& t : pool) t.join();
}

std::size_t resolve_workers(const GenOptions& opt) { return opt.workers ? opt.workers : env_workers(); }

// Little-endian blob helpers.
template <typename T>
void put(std::string& out, T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.append(buf, sizeof(T));
}

void put_image(std::string& out, const Image& im) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(im.channels));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(im.height));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(im.width));
    out.append(reinterpret_cast<const char*>(im.pixels.data()), im.pixels.size() * sizeof(float));
}

class Reader {
public:
    Reader(const std::string& data, std::uint64_t offset, std::uint64_t length, const std::string& where)
        : data_(data), pos_(offset), end_(offset + length), where_(where) {}

    template <typename T>
    T get() {
        need(sizeof(T));
        T v;
        std::memcpy(&v, data_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }

    Image image() {
        Image im;
        im.channels = get<std::uint32_t>();
        im.height = get<std::uint32_t>();
        im.width = get<std::uint32_t>();
        const std::size_t n = im.size();
        need(n * sizeof(float));
        im.pixels.resize(n);
        std::memcpy(im.pixels.data(), data_.data() + pos_, n * sizeof(float));
        pos_ += n * sizeof(float);
        return im;
    }

    bool done() const { return pos_ == end_; }

private:
    void need(std::size_t bytes) const {
        require(pos_ + bytes <= end_, ErrorKind::format, "record overruns its extent in " + where_);
    }

    const std::string& data_;
    std::uint64_t pos_;
    std::uint64_t end_;
    std::string where_;
};

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    require(static_cast<bool>(in), ErrorKind::io, "cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_split(const std::filesystem::path& dir, const std::string& split, const std::vector<std::string>& payloads,
                 const std::string& kind) {
    std::filesystem::create_directories(dir);
    std::ofstream blob(blob_path(dir, split), std::ios::binary | std::ios::trunc);
    std::ofstream manifest(manifest_path(dir, split), std::ios::trunc);
    require(blob && manifest, ErrorKind::io, "cannot write split " + split + " under " + dir.string());
    manifest << "SYNTHSET v1\n";
    std::uint64_t offset = 0;
    for (std::size_t i = 0; i < payloads.size(); ++i) {
        blob.write(payloads[i].data(), static_cast<std::streamsize>(payloads[i].size()));
        manifest << i << '\t' << offset << '\t' << payloads[i].size() << '\t' << kind << '\n';
        offset += payloads[i].size();
    }
    require(static_cast<bool>(blob) && static_cast<bool>(manifest), ErrorKind::io, "write failed for split " + split);
}

struct LoadedSplit {
    std::vector<ManifestEntry> entries;
    std::string blob;
};

LoadedSplit load_split(const std::filesystem::path& dir, const std::string& split, const std::string& kind) {
    LoadedSplit s;
    s.entries = read_manifest(manifest_path(dir, split));
    s.blob = read_file(blob_path(dir, split));
    for (const ManifestEntry& e : s.entries) {
        require(e.kind == kind, ErrorKind::format, "split " + split + " holds '" + e.kind + "' records, expected " + kind);
        require(e.offset + e.length <= s.blob.size(), ErrorKind::io, "blob for split " + split + " is truncated");
    }
    return s;
}

}  // namespace

const std::array<std::string_view, num_shapes>& shape_names() {
    static const std::array<std::string_view, num_shapes> names{"circle", "square", "triangle", "diamond",
                                                                "cross",  "ring",   "bar",      "star"};
    return names;
}

const std::array<std::string_view, num_colors>& color_names() {
    static const std::array<std::string_view, num_colors> names{"red",  "green",   "blue",   "yellow",
                                                                "cyan", "magenta", "orange", "purple"};
    return names;
}

const std::array<std::string_view, num_backgrounds>& background_names() {
    static const std::array<std::string_view, num_backgrounds> names{"dark", "gray", "light"};
    return names;
}

std::array<double, 3> palette_color(std::size_t color) {
    static const std::array<std::array<double, 3>, num_colors> palette{{{0.90, 0.10, 0.10},
                                                                         {0.10, 0.80, 0.20},
                                                                         {0.15, 0.25, 0.95},
                                                                         {0.95, 0.90, 0.10},
                                                                         {0.10, 0.85, 0.90},
                                                                         {0.90, 0.15, 0.85},
                                                                         {1.00, 0.55, 0.05},
                                                                         {0.50, 0.15, 0.75}}};
    require(color < num_colors, ErrorKind::input, "color index out of range");
    return palette[color];
}

double background_level(std::size_t background) {
    static const std::array<double, num_backgrounds> levels{0.15, 0.5, 0.85};
    require(background < num_backgrounds, ErrorKind::input, "background index out of range");
    return levels[background];
}

void validate_latent(const LatentSpec& l) {
    require(l.class_id < num_shapes, ErrorKind::input, "latent class out of range");
    for (double c : l.color) require(c >= 0.0 && c <= 1.0, ErrorKind::input, "latent color outside [0, 1]");
    require(l.background >= 0.0 && l.background <= 1.0, ErrorKind::input, "latent background outside [0, 1]");
    require(l.scale >= 0.0 && l.scale <= 1.0, ErrorKind::input, "latent scale outside [0, 1]");
    const double half = l.scale / 2.0;
    constexpr double slack = 1e-12;
    require(l.row >= half - slack && l.row <= 1.0 - half + slack && l.col >= half - slack &&
                l.col <= 1.0 - half + slack,
            ErrorKind::input, "latent shape does not fit the canvas");
}

std::size_t color_index(const LatentSpec& l) {
    std::size_t best = 0;
    double best_d = 1e300;
    for (std::size_t i = 0; i < num_colors; ++i) {
        const auto p = palette_color(i);
        double d = 0.0;
        for (std::size_t c = 0; c < 3; ++c) d += (p[c] - l.color[c]) * (p[c] - l.color[c]);
        if (d < best_d) {
            best_d = d;
            best = i;
        }
    }
    return best;
}

std::size_t background_index(const LatentSpec& l) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < num_backgrounds; ++i) {
        if (std::abs(background_level(i) - l.background) < std::abs(background_level(best) - l.background)) best = i;
    }
    return best;
}

bool is_heldout_combo(std::size_t class_id, std::size_t color) { return color == (3 * class_id + 1) % num_colors; }

LatentSpec random_latent(Rng& rng) {
    LatentSpec l;
    l.class_id = static_cast<std::uint32_t>(rng.below(num_shapes));
    const auto base = palette_color(rng.below(num_colors));
    for (std::size_t c = 0; c < 3; ++c) l.color[c] = clamp01(base[c] + rng.uniform(-color_jitter, color_jitter));
    l.scale = rng.uniform(min_scale, max_scale);
    const double half = l.scale / 2.0;
    l.row = rng.uniform(half, 1.0 - half);
    l.col = rng.uniform(half, 1.0 - half);
    l.background =
        clamp01(background_level(rng.below(num_backgrounds)) + rng.uniform(-background_jitter, background_jitter));
    return l;
}

Image render_image(const LatentSpec& latent, std::size_t size, Rng& rng, double noise) {
    validate_latent(latent);
    require(size > 0, ErrorKind::input, "image size must be positive");
    Image im = Image::blank(3, size, size);
    const double s = static_cast<double>(size);
    const double half = latent.scale / 2.0;
    constexpr double subpixels[2] = {0.25, 0.75};
    for (std::size_t y = 0; y < size; ++y) {
        for (std::size_t x = 0; x < size; ++x) {
            double coverage = 0.0;
            if (half > 0.0) {
                for (double sy : subpixels) {
                    for (double sx : subpixels) {
                        const double dx = ((static_cast<double>(x) + sx) / s - latent.col) / half;
                        const double dy = ((static_cast<double>(y) + sy) / s - latent.row) / half;
                        if (inside(latent.class_id, dx, dy)) coverage += 0.25;
                    }
                }
            }
            for (std::size_t c = 0; c < 3; ++c) {
                double v = latent.background * (1.0 - coverage) + latent.color[c] * coverage;
                if (noise > 0.0) v = clamp01(v + noise * rng.normal());
                im.at(c, y, x) = static_cast<float>(v);
            }
        }
    }
    return im;
}

double latent_distance(const LatentSpec& a, const LatentSpec& b, const LatentWeights& w) {
    const double cls = a.class_id == b.class_id ? 0.0 : 1.0;
    double color = 0.0;
    for (std::size_t c = 0; c < 3; ++c) color += (a.color[c] - b.color[c]) * (a.color[c] - b.color[c]);
    const double pos = (a.row - b.row) * (a.row - b.row) + (a.col - b.col) * (a.col - b.col);
    const double sc = (a.scale - b.scale) * (a.scale - b.scale);
    return std::sqrt(w.class_mismatch * w.class_mismatch * cls + w.color * w.color * color +
                     w.position * w.position * pos + w.scale * w.scale * sc);
}

std::size_t env_workers() {
    const char* v = std::getenv("PI_NUM_WORKERS");
    if (!v || !*v) return 1;
    char* end = nullptr;
    const unsigned long n = std::strtoul(v, &end, 10);
    require(end && *end == '\0' && n > 0, ErrorKind::config, "PI_NUM_WORKERS must be a positive integer");
    return n;
}

TripletSet gen_triplet_set(std::size_t n, double p, Rng& rng, const GenOptions& opt) {
    require(n > 0, ErrorKind::input, "triplet count must be positive");
    require(p >= 0.0 && p < 0.5, ErrorKind::input, "noise rate must lie in [0, 0.5)");
    const std::uint64_t master = rng.next_u64();
    TripletSet set;
    set.records.resize(n);
    set.latents.resize(n);
    set.clean_y.resize(n);
    for_each_index(n, resolve_workers(opt), [&](std::size_t i) {
        Rng r(mix_seed(master, i));
        const LatentSpec ref = random_latent(r);
        std::array<LatentSpec, 2> variants{ref, ref};
        std::vector<std::size_t> pool{attr_class, attr_color, attr_position, attr_scale};
        for (LatentSpec& v : variants) {
            const std::size_t k = 1 + r.below(2);
            const double magnitude = r.uniform(0.2, 1.0);
            for (std::size_t a : pick_attributes(pool, k, r)) perturb(v, a, magnitude, r);
        }
        const double d0 = latent_distance(ref, variants[0]);
        const double d1 = latent_distance(ref, variants[1]);
        const std::uint8_t clean = d1 < d0 ? 1 : 0;
        const bool flip = r.bernoulli(p);
        TripletRecord& rec = set.records[i];
        rec.x = render_image(ref, opt.image_size, r);
        rec.x0 = render_image(variants[0], opt.image_size, r);
        rec.x1 = render_image(variants[1], opt.image_size, r);
        rec.y = flip ? static_cast<std::uint8_t>(1 - clean) : clean;
        set.latents[i] = {ref, variants[0], variants[1]};
        set.clean_y[i] = clean;
    });
    return set;
}

const Vocabulary& Vocabulary::synthetic() {
    static const Vocabulary vocab = [] {
        std::vector<std::string> words{"a", "photo", "of", "on", "background", "colored", "small", "large"};
        for (auto s : shape_names()) words.emplace_back(s);
        for (auto s : color_names()) words.emplace_back(s);
        for (auto s : background_names()) words.emplace_back(s);
        return Vocabulary(std::move(words));
    }();
    return vocab;
}

Vocabulary::Vocabulary(std::vector<std::string> words) : words_(std::move(words)) {
    for (std::size_t i = 0; i < words_.size(); ++i) {
        const bool fresh = ids_.emplace(words_[i], static_cast<TokenId>(i + 3)).second;
        require(fresh, ErrorKind::config, "duplicate vocabulary word '" + words_[i] + "'");
    }
}

TokenId Vocabulary::id(std::string_view word) const {
    auto it = ids_.find(std::string(word));
    require(it != ids_.end(), ErrorKind::input, "out-of-vocabulary word '" + std::string(word) + "'");
    return it->second;
}

std::string_view Vocabulary::word(TokenId id) const {
    require(id >= 3 && id < size(), ErrorKind::input, "token id " + std::to_string(id) + " is not a word");
    return words_[id - 3];
}

std::vector<TokenId> Vocabulary::tokenize(std::string_view text, std::size_t context_length) const {
    std::vector<TokenId> ids{bot_token};
    std::istringstream in{std::string(text)};
    std::string w;
    while (in >> w) ids.push_back(id(w));
    ids.push_back(eot_token);
    require(ids.size() <= context_length, ErrorKind::input,
            "caption '" + std::string(text) + "' exceeds the context length " + std::to_string(context_length));
    ids.resize(context_length, pad_token);
    return ids;
}

std::string Vocabulary::detokenize(std::span<const TokenId> ids) const {
    std::string out;
    for (TokenId t : ids) {
        if (t == bot_token || t == pad_token) continue;
        if (t == eot_token) break;
        if (!out.empty()) out += ' ';
        out += word(t);
    }
    return out;
}

std::string caption_for(const LatentSpec& l, std::size_t t) {
    const std::string shape(shape_names()[l.class_id]);
    const std::string color(color_names()[color_index(l)]);
    const std::string bg(background_names()[background_index(l)]);
    const std::string size = l.scale >= large_scale ? "large" : "small";
    switch (t) {
        case 0: return "a " + color + " " + shape + " on a " + bg + " background";
        case 1: return "a photo of a " + size + " " + color + " " + shape;
        case 2: return "a " + size + " " + shape + " colored " + color;
        case 3: return "a " + color + " " + shape;
        case 4: return "a photo of a " + shape + " on a " + bg + " background";
        default: fail(ErrorKind::input, "caption template index out of range");
    }
}

std::vector<CaptionRecord> gen_pair_set(std::size_t n, Rng& rng, const GenOptions& opt) {
    require(n > 0, ErrorKind::input, "pair count must be positive");
    const std::uint64_t master = rng.next_u64();
    const Vocabulary& vocab = Vocabulary::synthetic();
    std::vector<CaptionRecord> out(n);
    for_each_index(n, resolve_workers(opt), [&](std::size_t i) {
        Rng r(mix_seed(master, i));
        LatentSpec l = random_latent(r);
        while (opt.exclude_heldout && is_heldout_combo(l.class_id, color_index(l))) l = random_latent(r);
        CaptionRecord& rec = out[i];
        rec.latent = l;
        rec.caption = caption_for(l, r.below(num_caption_templates));
        rec.tokens = vocab.tokenize(rec.caption, opt.context_length);
        rec.image = render_image(l, opt.image_size, r);
    });
    return out;
}

AugmentPolicy AugmentPolicy::identity() {
    AugmentPolicy p;
    p.crop_area_min = p.crop_area_max = 1.0;
    p.crop_ratio_min = p.crop_ratio_max = 1.0;
    p.jitter_prob = p.grayscale_prob = p.blur_prob = p.hflip_prob = 0.0;
    return p;
}

Image normalize(const Image& image, const AugmentPolicy& policy) {
    require(image.channels == 3, ErrorKind::dimension, "normalization expects 3 channels");
    Image out = image;
    const std::size_t plane = image.height * image.width;
    for (std::size_t c = 0; c < 3; ++c) {
        for (std::size_t i = 0; i < plane; ++i) {
            float& v = out.pixels[c * plane + i];
            v = static_cast<float>((static_cast<double>(v) - policy.mean[c]) / policy.std[c]);
        }
    }
    return out;
}

Image hflip(const Image& image) {
    Image out = image;
    for (std::size_t c = 0; c < image.channels; ++c)
        for (std::size_t y = 0; y < image.height; ++y)
            for (std::size_t x = 0; x < image.width; ++x) out.at(c, y, x) = image.at(c, y, image.width - 1 - x);
    return out;
}

Image grayscale(const Image& image) {
    require(image.channels == 3, ErrorKind::dimension, "grayscale expects 3 channels");
    Image out = image;
    for (std::size_t y = 0; y < image.height; ++y) {
        for (std::size_t x = 0; x < image.width; ++x) {
            const double g = 0.299 * image.at(0, y, x) + 0.587 * image.at(1, y, x) + 0.114 * image.at(2, y, x);
            for (std::size_t c = 0; c < 3; ++c) out.at(c, y, x) = static_cast<float>(g);
        }
    }
    return out;
}

namespace {

Image resized_crop(const Image& im, const AugmentPolicy& p, Rng& rng) {
    const double H = static_cast<double>(im.height);
    const double W = static_cast<double>(im.width);
    const double area = rng.uniform(p.crop_area_min, p.crop_area_max) * H * W;
    const double ratio = std::exp(rng.uniform(std::log(p.crop_ratio_min), std::log(p.crop_ratio_max)));
    const double w = std::min(W, std::sqrt(area * ratio));
    const double h = std::min(H, std::sqrt(area / ratio));
    const double x0 = rng.uniform(0.0, W - w);
    const double y0 = rng.uniform(0.0, H - h);
    Image out = im;
    for (std::size_t y = 0; y < im.height; ++y) {
        const double sy = std::clamp(y0 + (static_cast<double>(y) + 0.5) * h / H - 0.5, 0.0, H - 1.0);
        const auto iy = static_cast<std::size_t>(sy);
        const std::size_t iy1 = std::min(iy + 1, im.height - 1);
        const double fy = sy - static_cast<double>(iy);
        for (std::size_t x = 0; x < im.width; ++x) {
            const double sx = std::clamp(x0 + (static_cast<double>(x) + 0.5) * w / W - 0.5, 0.0, W - 1.0);
            const auto ix = static_cast<std::size_t>(sx);
            const std::size_t ix1 = std::min(ix + 1, im.width - 1);
            const double fx = sx - static_cast<double>(ix);
            for (std::size_t c = 0; c < im.channels; ++c) {
                const double top = im.at(c, iy, ix) * (1.0 - fx) + im.at(c, iy, ix1) * fx;
                const double bottom = im.at(c, iy1, ix) * (1.0 - fx) + im.at(c, iy1, ix1) * fx;
                out.at(c, y, x) = static_cast<float>(top * (1.0 - fy) + bottom * fy);
            }
        }
    }
    return out;
}

void color_jitter_inplace(Image& im, const AugmentPolicy& p, Rng& rng) {
    const double b = rng.uniform(1.0 - p.brightness, 1.0 + p.brightness);
    const double c = rng.uniform(1.0 - p.contrast, 1.0 + p.contrast);
    const double s = rng.uniform(1.0 - p.saturation, 1.0 + p.saturation);
    for (float& v : im.pixels) v = static_cast<float>(clamp01(v * b));
    const Image gray = grayscale(im);
    double mean = 0.0;
    const std::size_t plane = im.height * im.width;
    for (std::size_t i = 0; i < plane; ++i) mean += gray.pixels[i];
    mean /= static_cast<double>(plane);
    for (float& v : im.pixels) v = static_cast<float>(clamp01((v - mean) * c + mean));
    const Image gray2 = grayscale(im);
    for (std::size_t i = 0; i < im.pixels.size(); ++i) {
        const double g = gray2.pixels[i];
        im.pixels[i] = static_cast<float>(clamp01((im.pixels[i] - g) * s + g));
    }
}

Image gaussian_blur(const Image& im, double sigma) {
    const int radius = std::max(1, static_cast<int>(std::ceil(2.0 * sigma)));
    std::vector<double> k(2 * static_cast<std::size_t>(radius) + 1);
    double total = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        k[static_cast<std::size_t>(i + radius)] = std::exp(-0.5 * i * i / (sigma * sigma));
        total += k[static_cast<std::size_t>(i + radius)];
    }
    for (double& v : k) v /= total;
    const auto H = static_cast<int>(im.height);
    const auto W = static_cast<int>(im.width);
    Image tmp = im;
    Image out = im;
    for (std::size_t c = 0; c < im.channels; ++c) {
        for (int y = 0; y < H; ++y) {
            for (int x = 0; x < W; ++x) {
                double acc = 0.0;
                for (int i = -radius; i <= radius; ++i) {
                    const int xx = std::clamp(x + i, 0, W - 1);
                    acc += k[static_cast<std::size_t>(i + radius)] * im.at(c, y, static_cast<std::size_t>(xx));
                }
                tmp.at(c, static_cast<std::size_t>(y), static_cast<std::size_t>(x)) = static_cast<float>(acc);
            }
        }
        for (int y = 0; y < H; ++y) {
            for (int x = 0; x < W; ++x) {
                double acc = 0.0;
                for (int i = -radius; i <= radius; ++i) {
                    const int yy = std::clamp(y + i, 0, H - 1);
                    acc += k[static_cast<std::size_t>(i + radius)] * tmp.at(c, static_cast<std::size_t>(yy), x);
                }
                out.at(c, static_cast<std::size_t>(y), static_cast<std::size_t>(x)) = static_cast<float>(acc);
            }
        }
    }
    return out;
}

}  // namespace

Image augment(const Image& image, const AugmentPolicy& policy, Rng& rng) {
    Image im = resized_crop(image, policy, rng);
    if (rng.bernoulli(policy.jitter_prob)) color_jitter_inplace(im, policy, rng);
    if (rng.bernoulli(policy.grayscale_prob)) im = grayscale(im);
    if (rng.bernoulli(policy.blur_prob)) im = gaussian_blur(im, rng.uniform(policy.blur_sigma_min, policy.blur_sigma_max));
    if (rng.bernoulli(policy.hflip_prob)) im = hflip(im);
    return normalize(im, policy);
}

std::filesystem::path manifest_path(const std::filesystem::path& dir, const std::string& split) {
    return dir / (split + ".manifest");
}

std::filesystem::path blob_path(const std::filesystem::path& dir, const std::string& split) {
    return dir / (split + ".blob");
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    require(static_cast<bool>(in), ErrorKind::io, "cannot open manifest " + path.string());
    std::string line;
    require(std::getline(in, line) && line == "SYNTHSET v1", ErrorKind::format,
            "manifest " + path.string() + " lacks the SYNTHSET v1 header");
    std::vector<ManifestEntry> entries;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream ls(line);
        ManifestEntry e;
        std::string rest;
        const bool ok = static_cast<bool>(ls >> e.index >> e.offset >> e.length >> e.kind) && !(ls >> rest);
        require(ok, ErrorKind::format, path.string() + ":" + std::to_string(lineno) + ": malformed manifest line");
        require(e.index == entries.size(), ErrorKind::format,
                path.string() + ":" + std::to_string(lineno) + ": record index out of sequence");
        require(entries.empty() || e.offset > entries.back().offset, ErrorKind::format,
                path.string() + ":" + std::to_string(lineno) + ": offsets must increase strictly");
        entries.push_back(std::move(e));
    }
    return entries;
}

void write_triplet_split(const std::filesystem::path& dir, const std::string& split,
                         std::span<const TripletRecord> records) {
    std::vector<std::string> payloads;
    payloads.reserve(records.size());
    for (const TripletRecord& r : records) {
        std::string p;
        put_image(p, r.x);
        put_image(p, r.x0);
        put_image(p, r.x1);
        put<std::uint8_t>(p, r.y);
        payloads.push_back(std::move(p));
    }
    write_split(dir, split, payloads, "triplet");
}

std::vector<TripletRecord> read_triplet_split(const std::filesystem::path& dir, const std::string& split) {
    const LoadedSplit s = load_split(dir, split, "triplet");
    std::vector<TripletRecord> out;
    out.reserve(s.entries.size());
    for (const ManifestEntry& e : s.entries) {
        Reader r(s.blob, e.offset, e.length, split);
        TripletRecord t;
        t.x = r.image();
        t.x0 = r.image();
        t.x1 = r.image();
        t.y = r.get<std::uint8_t>();
        require(r.done() && t.y <= 1, ErrorKind::format, "malformed triplet record in " + split);
        out.push_back(std::move(t));
    }
    return out;
}

void write_caption_split(const std::filesystem::path& dir, const std::string& split,
                         std::span<const CaptionRecord> records) {
    std::vector<std::string> payloads;
    payloads.reserve(records.size());
    for (const CaptionRecord& r : records) {
        std::string p;
        put_image(p, r.image);
        put<std::uint16_t>(p, static_cast<std::uint16_t>(r.tokens.size()));
        for (TokenId t : r.tokens) put<std::uint16_t>(p, static_cast<std::uint16_t>(t));
        payloads.push_back(std::move(p));
    }
    write_split(dir, split, payloads, "caption");
}

std::vector<CaptionRecord> read_caption_split(const std::filesystem::path& dir, const std::string& split) {
    const LoadedSplit s = load_split(dir, split, "caption");
    std::vector<CaptionRecord> out;
    out.reserve(s.entries.size());
    for (const ManifestEntry& e : s.entries) {
        Reader r(s.blob, e.offset, e.length, split);
        CaptionRecord c;
        c.image = r.image();
        const std::size_t count = r.get<std::uint16_t>();
        c.tokens.resize(count);
        for (TokenId& t : c.tokens) t = r.get<std::uint16_t>();
        require(r.done(), ErrorKind::format, "malformed caption record in " + split);
        out.push_back(std::move(c));
    }
    return out;
}

std::uint64_t file_checksum(const std::filesystem::path& path) {
    const std::string bytes = read_file(path);
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

}  // namespace pi
