#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "pi/encoders.hpp"
#include "pi/image.hpp"
#include "pi/objectives.hpp"
#include "pi/rng.hpp"

namespace pi {

inline constexpr std::size_t num_shapes = 8;
inline constexpr std::size_t num_colors = 8;
inline constexpr std::size_t num_backgrounds = 3;

inline constexpr double min_scale = 0.35;
inline constexpr double max_scale = 0.75;
/// Scales at or above this are captioned "large".
inline constexpr double large_scale = 0.55;

const std::array<std::string_view, num_shapes>& shape_names();
const std::array<std::string_view, num_colors>& color_names();
const std::array<std::string_view, num_backgrounds>& background_names();
std::array<double, 3> palette_color(std::size_t color);
double background_level(std::size_t background);

/// Shape class, RGB color, centre (row, col) and diameter as fractions of the
/// canvas, and background gray level. A scale of 0 draws no shape.
struct LatentSpec {
    std::uint32_t class_id = 0;
    std::array<double, 3> color{};
    double row = 0.5;
    double col = 0.5;
    double scale = 0.5;
    double background = 0.5;

    bool operator==(const LatentSpec&) const = default;
};

void validate_latent(const LatentSpec& latent);

/// Nearest palette entry / background level.
std::size_t color_index(const LatentSpec& latent);
std::size_t background_index(const LatentSpec& latent);

/// One (shape, color) pair per shape class is withheld from training captions
/// and used as an out-of-distribution probe.
bool is_heldout_combo(std::size_t class_id, std::size_t color);

/// Uniform class and palette color (with jitter), position within the canvas,
/// scale in [min_scale, max_scale], one of the background levels.
LatentSpec random_latent(Rng& rng);

/// Anti-aliased render of the latent; optional Gaussian pixel noise drawn
/// from rng. Pixels are clamped to [0, 1].
Image render_image(const LatentSpec& latent, std::size_t size, Rng& rng, double noise = 0.0);

struct LatentWeights {
    double class_mismatch = 1.0;
    double color = 1.5;
    double position = 0.5;
    double scale = 0.5;
};

/// Weighted Euclidean distance over (class mismatch, color, position, scale).
double latent_distance(const LatentSpec& a, const LatentSpec& b, const LatentWeights& w = {});

struct TripletSet {
    std::vector<TripletRecord> records;
    /// Reference, variant 0, variant 1 per record.
    std::vector<std::array<LatentSpec, 3>> latents;
    /// Judgment before noise flips.
    std::vector<std::uint8_t> clean_y;
};

struct GenOptions {
    std::size_t image_size = 32;
    std::size_t context_length = 16;
    /// 0 means the PI_NUM_WORKERS environment variable (default 1).
    std::size_t workers = 0;
    bool exclude_heldout = true;
};

/// Worker count from PI_NUM_WORKERS, at least 1.
std::size_t env_workers();

/// n triplets whose variants perturb disjoint attribute subsets of the
/// reference; y picks the closer variant, then flips with probability p.
/// Per-record generators derive from one draw of rng and the record index.
TripletSet gen_triplet_set(std::size_t n, double p, Rng& rng, const GenOptions& opt = {});

class Vocabulary {
public:
    /// Closed word list of the caption and prompt templates; ids 0..2 are
    /// the pad, begin and end markers.
    static const Vocabulary& synthetic();

    explicit Vocabulary(std::vector<std::string> words);

    std::size_t size() const { return words_.size() + 3; }
    TokenId id(std::string_view word) const;
    std::string_view word(TokenId id) const;

    /// [BOT, words..., EOT, pad...] of exactly context_length ids.
    std::vector<TokenId> tokenize(std::string_view text, std::size_t context_length) const;
    std::string detokenize(std::span<const TokenId> ids) const;

private:
    std::vector<std::string> words_;
    std::unordered_map<std::string, TokenId> ids_;
};

struct CaptionRecord {
    Image image;
    std::vector<TokenId> tokens;
    std::string caption;
    LatentSpec latent;
};

inline constexpr std::size_t num_caption_templates = 5;

/// Template t filled from the latent.
std::string caption_for(const LatentSpec& latent, std::size_t template_index);

std::vector<CaptionRecord> gen_pair_set(std::size_t n, Rng& rng, const GenOptions& opt = {});

struct AugmentPolicy {
    double crop_area_min = 0.8;
    double crop_area_max = 1.0;
    double crop_ratio_min = 3.0 / 4.0;
    double crop_ratio_max = 4.0 / 3.0;
    double jitter_prob = 0.8;
    double brightness = 0.2;
    double contrast = 0.2;
    double saturation = 0.2;
    double grayscale_prob = 0.1;
    double blur_prob = 0.2;
    double blur_sigma_min = 0.1;
    double blur_sigma_max = 1.0;
    double hflip_prob = 0.5;
    std::array<double, 3> mean = image_mean;
    std::array<double, 3> std = image_std;

    /// Full-frame crop, every random transform off; only normalization remains.
    static AugmentPolicy identity();
};

/// Crop -> color jitter -> grayscale -> blur -> horizontal flip -> normalize.
Image augment(const Image& image, const AugmentPolicy& policy, Rng& rng);

Image normalize(const Image& image, const AugmentPolicy& policy);
Image hflip(const Image& image);
Image grayscale(const Image& image);

// Storage: <dir>/<split>.manifest and <dir>/<split>.blob.

struct ManifestEntry {
    std::size_t index = 0;
    std::uint64_t offset = 0;
    std::uint64_t length = 0;
    std::string kind;
};

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);

void write_triplet_split(const std::filesystem::path& dir, const std::string& split,
                         std::span<const TripletRecord> records);
std::vector<TripletRecord> read_triplet_split(const std::filesystem::path& dir, const std::string& split);

void write_caption_split(const std::filesystem::path& dir, const std::string& split,
                         std::span<const CaptionRecord> records);
/// Images and tokens only; latents and caption text are not stored.
std::vector<CaptionRecord> read_caption_split(const std::filesystem::path& dir, const std::string& split);

std::filesystem::path manifest_path(const std::filesystem::path& dir, const std::string& split);
std::filesystem::path blob_path(const std::filesystem::path& dir, const std::string& split);

/// FNV-1a over the file bytes.
std::uint64_t file_checksum(const std::filesystem::path& path);

}  // namespace pi
