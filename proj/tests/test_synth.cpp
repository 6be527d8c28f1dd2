#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "doctest.h"
#include "pi/error.hpp"
#include "pi/synth.hpp"
#include "test_util.hpp"

using namespace pi;

namespace {

// Independent restatement of the judgment metric.
double oracle_distance(const LatentSpec& a, const LatentSpec& b) {
    const double cls = a.class_id != b.class_id ? 1.0 : 0.0;
    const double dr = a.color[0] - b.color[0], dg = a.color[1] - b.color[1], db = a.color[2] - b.color[2];
    const double dy = a.row - b.row, dx = a.col - b.col, ds = a.scale - b.scale;
    return std::sqrt(1.0 * cls + 2.25 * (dr * dr + dg * dg + db * db) + 0.25 * (dy * dy + dx * dx) + 0.25 * ds * ds);
}

std::size_t attributes_changed(const LatentSpec& a, const LatentSpec& b, bool& cls, bool& col, bool& pos, bool& sc) {
    cls = a.class_id != b.class_id;
    col = a.color != b.color;
    pos = a.row != b.row || a.col != b.col;
    sc = a.scale != b.scale;
    return cls + col + pos + sc;
}

template <typename E>
ErrorKind kind_of(E&& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.kind();
    }
    FAIL("expected an error");
    return ErrorKind::contract;
}

}  // namespace

TEST_CASE("render is deterministic and in range") {
    Rng rng(1);
    LatentSpec l = random_latent(rng);
    Rng a(9), b(9);
    CHECK(render_image(l, 32, a) == render_image(l, 32, b));
    Rng na(9), nb(9);
    CHECK(render_image(l, 32, na, 0.1) == render_image(l, 32, nb, 0.1));

    for (int i = 0; i < 1000; ++i) {
        LatentSpec r = random_latent(rng);
        Image im = render_image(r, 32, rng, i % 2 ? 0.2 : 0.0);
        CHECK(im.channels == 3);
        auto [lo, hi] = std::minmax_element(im.pixels.begin(), im.pixels.end());
        CHECK(*lo >= 0.0f);
        CHECK(*hi <= 1.0f);
    }
}

TEST_CASE("background-only latent renders a constant image") {
    LatentSpec l;
    l.scale = 0.0;
    l.background = 0.37;
    l.color = {1, 0, 0};
    Rng rng(2);
    Image im = render_image(l, 16, rng);
    for (float v : im.pixels) CHECK(std::abs(v - 0.37) < 1e-6);
}

TEST_CASE("shape classes render distinct masks") {
    std::set<std::vector<float>> masks;
    for (std::uint32_t c = 0; c < num_shapes; ++c) {
        LatentSpec l;
        l.class_id = c;
        l.color = {1, 1, 1};
        l.background = 0.0;
        l.scale = 0.7;
        Rng rng(0);
        masks.insert(render_image(l, 32, rng).pixels);
    }
    CHECK(masks.size() == num_shapes);
}

TEST_CASE("invalid latents are rejected") {
    LatentSpec l;
    l.scale = 0.8;
    l.row = 0.1;
    CHECK(kind_of([&] { validate_latent(l); }) == ErrorKind::input);
    LatentSpec c;
    c.class_id = 8;
    CHECK(kind_of([&] { validate_latent(c); }) == ErrorKind::input);
}

TEST_CASE("noiseless triplets follow the latent-distance oracle") {
    Rng rng(4);
    TripletSet set = gen_triplet_set(500, 0.0, rng);
    REQUIRE(set.records.size() == 500);
    std::size_t class_changes = 0, other_changes = 0;
    for (std::size_t i = 0; i < 500; ++i) {
        const auto& [ref, v0, v1] = set.latents[i];
        const std::uint8_t expected = oracle_distance(ref, v1) < oracle_distance(ref, v0) ? 1 : 0;
        CHECK(set.records[i].y == expected);
        CHECK(set.clean_y[i] == expected);
        bool c0 = false, k0 = false, p0 = false, s0 = false, c1 = false, k1 = false, p1 = false, s1 = false;
        CHECK(attributes_changed(ref, v0, c0, k0, p0, s0) >= 1);
        CHECK(attributes_changed(ref, v1, c1, k1, p1, s1) >= 1);
        // disjoint attribute subsets
        const bool overlap = (c0 && c1) || (k0 && k1) || (p0 && p1) || (s0 && s1);
        CHECK_FALSE(overlap);
        class_changes += c0 + c1;
        other_changes += k0 + k1 + p0 + p1 + s0 + s1;
        Rng r(0);
        CHECK(render_image(ref, 32, r) == set.records[i].x);
    }
    CHECK(class_changes * 2 < other_changes);
}

TEST_CASE("label noise flips at the requested rate") {
    Rng rng(8);
    TripletSet set = gen_triplet_set(10000, 0.25, rng);
    std::size_t flips = 0;
    for (std::size_t i = 0; i < set.records.size(); ++i) flips += set.records[i].y != set.clean_y[i];
    CHECK(std::abs(static_cast<double>(flips) / 10000.0 - 0.25) < 0.015);
}

TEST_CASE("triplet generation errors and split disjointness") {
    Rng rng(3);
    CHECK(kind_of([&] { gen_triplet_set(10, 0.5, rng); }) == ErrorKind::input);
    CHECK(kind_of([&] { gen_triplet_set(10, -0.1, rng); }) == ErrorKind::input);
    CHECK(kind_of([&] { gen_triplet_set(0, 0.1, rng); }) == ErrorKind::input);

    Rng train_rng(mix_seed(7, 0)), val_rng(mix_seed(7, 1));
    TripletSet train = gen_triplet_set(300, 0.0, train_rng);
    TripletSet val = gen_triplet_set(100, 0.0, val_rng);
    CHECK(train.records.size() == 300);
    CHECK(val.records.size() == 100);
    for (const auto& v : val.latents)
        for (const auto& t : train.latents) CHECK_FALSE(v[0] == t[0]);
}

TEST_CASE("sharded generation matches single-threaded output") {
    GenOptions one;
    one.workers = 1;
    GenOptions three;
    three.workers = 3;
    Rng a(12), b(12);
    TripletSet sa = gen_triplet_set(37, 0.1, a, one);
    TripletSet sb = gen_triplet_set(37, 0.1, b, three);
    for (std::size_t i = 0; i < 37; ++i) {
        CHECK(sa.records[i].x == sb.records[i].x);
        CHECK(sa.records[i].x1 == sb.records[i].x1);
        CHECK(sa.records[i].y == sb.records[i].y);
    }
    Rng c(13), d(13);
    auto pa = gen_pair_set(41, c, one);
    auto pb = gen_pair_set(41, d, three);
    for (std::size_t i = 0; i < 41; ++i) {
        CHECK(pa[i].image == pb[i].image);
        CHECK(pa[i].tokens == pb[i].tokens);
    }
}

TEST_CASE("captions follow the templates") {
    LatentSpec l;
    l.class_id = 0;
    l.color = palette_color(0);
    l.background = background_level(1);
    l.scale = 0.4;
    CHECK(caption_for(l, 0) == "a red circle on a gray background");
    CHECK(caption_for(l, 1) == "a photo of a small red circle");
    CHECK(caption_for(l, 3) == "a red circle");
    const Vocabulary& v = Vocabulary::synthetic();
    auto ids = v.tokenize(caption_for(l, 0), 16);
    CHECK(ids[0] == bot_token);
    CHECK(v.word(ids[1]) == "a");
    CHECK(v.word(ids[2]) == "red");
    CHECK(v.word(ids[3]) == "circle");
}

TEST_CASE("pair sets: vocabulary closure, uniform classes, held-out combos") {
    Rng rng(6);
    auto pairs = gen_pair_set(10000, rng);
    std::vector<std::size_t> hist(num_shapes, 0);
    const TextEncoderConfig tcfg;
    for (const auto& p : pairs) {
        ++hist[p.latent.class_id];
        for (TokenId t : p.tokens) CHECK(t < tcfg.vocab_size);
        CHECK(std::count(p.tokens.begin(), p.tokens.end(), eot_token) == 1);
        CHECK_FALSE(is_heldout_combo(p.latent.class_id, color_index(p.latent)));
    }
    const double expected = 10000.0 / num_shapes;
    const double sigma = std::sqrt(10000.0 * (1.0 / num_shapes) * (1.0 - 1.0 / num_shapes));
    for (std::size_t c : hist) CHECK(std::abs(static_cast<double>(c) - expected) < 3.0 * sigma);
}

TEST_CASE("tokenizer round trip, empty caption, OOV") {
    const Vocabulary& v = Vocabulary::synthetic();
    Rng rng(10);
    for (int i = 0; i < 200; ++i) {
        LatentSpec l = random_latent(rng);
        for (std::size_t t = 0; t < num_caption_templates; ++t) {
            const std::string s = caption_for(l, t);
            auto ids = v.tokenize(s, 16);
            CHECK(ids.size() == 16);
            CHECK(v.detokenize(ids) == s);
            CHECK(std::count(ids.begin(), ids.end(), eot_token) == 1);
        }
    }
    auto empty = v.tokenize("", 4);
    CHECK(empty == std::vector<TokenId>{bot_token, eot_token, pad_token, pad_token});
    CHECK(v.detokenize(empty).empty());
    CHECK(kind_of([&] { v.tokenize("a zebra", 16); }) == ErrorKind::input);
    CHECK(kind_of([&] { v.tokenize("a red circle on a gray background", 8); }) == ErrorKind::input);
}

TEST_CASE("augmentation contracts") {
    Rng rng(14);
    LatentSpec l = random_latent(rng);
    Image im = render_image(l, 32, rng);

    SUBCASE("identity policy equals normalization") {
        const AugmentPolicy id = AugmentPolicy::identity();
        Image out = augment(im, id, rng);
        Image ref = normalize(im, id);
        CHECK(out == ref);
        CHECK(std::abs(ref.at(0, 3, 4) - (im.at(0, 3, 4) - 0.48145466) / 0.26862954) < 1e-6);
    }
    SUBCASE("flip is an involution") { CHECK(hflip(hflip(im)) == im); }
    SUBCASE("grayscale has equal channels") {
        Image g = grayscale(im);
        for (std::size_t y = 0; y < 32; ++y)
            for (std::size_t x = 0; x < 32; ++x) {
                CHECK(g.at(0, y, x) == g.at(1, y, x));
                CHECK(g.at(1, y, x) == g.at(2, y, x));
            }
    }
    SUBCASE("outputs stay within the normalized input range") {
        AugmentPolicy p;
        p.grayscale_prob = 0.5;
        p.blur_prob = 0.5;
        p.crop_area_min = 0.3;
        for (int i = 0; i < 300; ++i) {
            Image src = render_image(random_latent(rng), 32, rng, 0.1);
            Image out = augment(src, p, rng);
            CHECK(out.channels == 3);
            CHECK(out.height == 32);
            CHECK(out.width == 32);
            for (std::size_t c = 0; c < 3; ++c) {
                const double lo = (0.0 - p.mean[c]) / p.std[c] - 1e-5;
                const double hi = (1.0 - p.mean[c]) / p.std[c] + 1e-5;
                for (std::size_t k = 0; k < 32 * 32; ++k) {
                    const double v = out.pixels[c * 1024 + k];
                    if (v < lo || v > hi) FAIL("augmented value out of range");
                }
            }
        }
    }
    SUBCASE("same seed gives the same augmentation") {
        AugmentPolicy p;
        Rng a(77), b(77);
        CHECK(augment(im, p, a) == augment(im, p, b));
    }
}

TEST_CASE("storage round trip and checksums") {
    auto dir = pi::testing::scratch_dir("synth_io");
    Rng rng(15);
    TripletSet t = gen_triplet_set(20, 0.1, rng);
    auto pairs = gen_pair_set(25, rng);
    write_triplet_split(dir, "triplets_train", t.records);
    write_caption_split(dir, "pairs_train", pairs);

    auto back = read_triplet_split(dir, "triplets_train");
    REQUIRE(back.size() == 20);
    for (std::size_t i = 0; i < 20; ++i) {
        CHECK(back[i].x == t.records[i].x);
        CHECK(back[i].x0 == t.records[i].x0);
        CHECK(back[i].x1 == t.records[i].x1);
        CHECK(back[i].y == t.records[i].y);
    }
    auto pback = read_caption_split(dir, "pairs_train");
    REQUIRE(pback.size() == 25);
    for (std::size_t i = 0; i < 25; ++i) {
        CHECK(pback[i].image == pairs[i].image);
        CHECK(pback[i].tokens == pairs[i].tokens);
    }

    auto entries = read_manifest(manifest_path(dir, "pairs_train"));
    CHECK(entries.size() == 25);
    const std::size_t image_bytes = 12 + 3 * 32 * 32 * 4;
    CHECK(entries[1].offset == image_bytes + 2 + 2 * 16);
    auto tentries = read_manifest(manifest_path(dir, "triplets_train"));
    CHECK(tentries[0].length == 3 * image_bytes + 1);
    CHECK(tentries[0].kind == "triplet");

    // same seed, same bytes
    auto dir2 = pi::testing::scratch_dir("synth_io2");
    Rng rng2(15);
    TripletSet t2 = gen_triplet_set(20, 0.1, rng2);
    write_triplet_split(dir2, "triplets_train", t2.records);
    CHECK(file_checksum(blob_path(dir, "triplets_train")) == file_checksum(blob_path(dir2, "triplets_train")));
    CHECK(file_checksum(manifest_path(dir, "triplets_train")) ==
          file_checksum(manifest_path(dir2, "triplets_train")));
}

TEST_CASE("storage errors") {
    auto dir = pi::testing::scratch_dir("synth_err");
    Rng rng(16);
    auto pairs = gen_pair_set(3, rng);
    write_caption_split(dir, "p", pairs);
    CHECK(kind_of([&] { read_caption_split(dir, "missing"); }) == ErrorKind::io);
    CHECK(kind_of([&] { read_triplet_split(dir, "p"); }) == ErrorKind::format);

    std::filesystem::resize_file(blob_path(dir, "p"), 100);
    CHECK(kind_of([&] { read_caption_split(dir, "p"); }) == ErrorKind::io);

    std::ofstream(manifest_path(dir, "bad")) << "SYNTHSET v2\n";
    CHECK(kind_of([&] { read_manifest(manifest_path(dir, "bad")); }) == ErrorKind::format);
    std::ofstream(manifest_path(dir, "order")) << "SYNTHSET v1\n0\t10\t5\tcaption\n1\t10\t5\tcaption\n";
    CHECK(kind_of([&] { read_manifest(manifest_path(dir, "order")); }) == ErrorKind::format);
}
