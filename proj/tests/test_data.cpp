#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "flowcount/data.hpp"

using namespace flowcount;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("flowcount_test_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

DatasetManifest manifest_with(std::vector<std::pair<std::string, int>> seqs, int offset) {
    DatasetManifest m;
    m.offset = offset;
    for (auto& [name, frames] : seqs) {
        m.sequences.push_back({name, frames});
        m.splits["train"].push_back(name);
    }
    return m;
}

SynthConfig tiny_synth(std::uint64_t seed) {
    SynthConfig c;
    c.world.shape = {4, 4};
    c.world.exit_probability = 0.1;
    c.world.entry_rate = 0.5;
    c.sequences = 4;
    c.frames_per_sequence = 6;
    c.particles_min = 1;
    c.particles_max = 5;
    c.image_size = {32, 32};
    c.val_fraction = 0.25;
    c.test_fraction = 0.25;
    c.seed = seed;
    return c;
}

std::pair<int, int> brightest_pixel(const ImageF& img) {
    int by = 0, bx = 0;
    float best = -1e9f;
    for (int y = 0; y < img.height(); ++y)
        for (int x = 0; x < img.width(); ++x) {
            const float v = img(y, x, 0) + img(y, x, 1) + img(y, x, 2);
            if (v > best) {
                best = v;
                by = y;
                bx = x;
            }
        }
    return {by, bx};
}

} // namespace

TEST(Annotations, FrameStem) {
    EXPECT_EQ(frame_stem(0), "000000");
    EXPECT_EQ(frame_stem(1234), "001234");
}

TEST(Annotations, RoundTripAndErrors) {
    const auto dir = scratch("ann");
    DotAnnotations a{"s", 3, {{1.5, 2.25}, {0, 0}}, {10, 8}};
    write_annotation(dir / "a.json", a);
    EXPECT_EQ(read_annotation(dir / "a.json", "s", {10, 8}), a);

    std::ofstream(dir / "bad.json") << R"({"frame": 0, "points": [[1, 1], [10.5, 2]]})";
    try {
        read_annotation(dir / "bad.json", "s", {10, 8});
        FAIL() << "expected ParseError";
    } catch (const ParseError& e) {
        const std::string what = e.what();
        EXPECT_NE(what.find("bad.json"), std::string::npos);
        EXPECT_NE(what.find("point 1"), std::string::npos);
    }
    std::ofstream(dir / "broken.json") << "{\"frame\": ";
    EXPECT_THROW(read_annotation(dir / "broken.json", "s", {10, 8}), ParseError);
    EXPECT_THROW(read_annotation(dir / "missing.json", "s", {10, 8}), ParseError);
    fs::remove_all(dir);
}

TEST(Rasterize, MassIsPreserved) {
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> ux(0.0, 64.0), uy(0.0, 48.0);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<Point> pts;
        const int n = trial % 15;
        for (int i = 0; i < n; ++i) pts.push_back({ux(rng), uy(rng)});
        pts.push_back({0.0, 0.0});
        pts.push_back({63.999, 47.999});
        const auto d = rasterize_density(pts, {64, 48}, {6, 8}, 0.5 + trial % 4);
        EXPECT_NEAR(count(d), static_cast<double>(pts.size()), 1e-6 * pts.size());
        EXPECT_TRUE(d.non_negative());
    }
}

TEST(Rasterize, EmptyAndTinySigma) {
    EXPECT_EQ(count(rasterize_density({}, {16, 16}, {4, 4}, 1.0)), 0.0);
    // dot exactly on a cell center, sigma far below a cell: all mass in that cell
    const auto d = rasterize_density({cell_center_pixel(2, 1, {4, 4}, {16, 16})}, {16, 16}, {4, 4}, 1e-3);
    EXPECT_NEAR(d(2, 1), 1.0, 1e-12);
    // a dot between centers with tiny sigma falls back to its containing cell
    const auto e = rasterize_density({{5.0, 5.0}}, {16, 16}, {4, 4}, 1e-3);
    EXPECT_EQ(e(1, 1), 1.0);
    EXPECT_THROW(rasterize_density({}, {16, 16}, {4, 4}, 0.0), DomainError);
}

TEST(Rasterize, SymmetricSplat) {
    const auto d = rasterize_density({{8.0, 8.0}}, {16, 16}, {4, 4}, 1.0);
    EXPECT_NEAR(d(1, 1), d(2, 2), 1e-12);
    EXPECT_NEAR(d(1, 2), d(2, 1), 1e-12);
    for (double v : d.values()) EXPECT_LE(v, d(1, 1) + 1e-15);
}

TEST(Triplets, Counts) {
    EXPECT_EQ(make_triplets(manifest_with({{"a", 11}}, 5), "train").triplets.size(), 1u);
    const auto none = make_triplets(manifest_with({{"a", 10}}, 5), "train");
    EXPECT_TRUE(none.triplets.empty());
    ASSERT_EQ(none.warnings.size(), 1u);
    EXPECT_NE(none.warnings[0].find("'a'"), std::string::npos);
    EXPECT_EQ(make_triplets(manifest_with({{"a", 150}}, 5), "train").triplets.size(), 140u);
    const auto idx = make_triplets(manifest_with({{"a", 11}, {"b", 13}}, 5), "train");
    ASSERT_EQ(idx.triplets.size(), 4u);
    EXPECT_EQ(idx.triplets[0], (TripletRef{"a", 5}));
    EXPECT_EQ(idx.triplets[3], (TripletRef{"b", 7}));
    EXPECT_THROW(make_triplets(manifest_with({{"a", 11}}, 5), "val"), DomainError);
}

TEST(Triplets, TrainModeShufflesDeterministically) {
    const auto m = manifest_with({{"a", 40}, {"b", 40}}, 2);
    const auto eval = make_triplets(m, "train");
    const auto t1 = make_triplets(m, "train", StreamMode::Train, 3);
    const auto t2 = make_triplets(m, "train", StreamMode::Train, 3);
    const auto t3 = make_triplets(m, "train", StreamMode::Train, 4);
    EXPECT_EQ(t1.triplets, t2.triplets);
    EXPECT_NE(t1.triplets, t3.triplets);
    EXPECT_NE(t1.triplets, eval.triplets);
    auto sorted = t1.triplets;
    std::sort(sorted.begin(), sorted.end(), [](auto& x, auto& y) {
        return std::tie(x.sequence, x.center) < std::tie(y.sequence, y.center);
    });
    EXPECT_EQ(sorted, eval.triplets);
}

TEST(Triplets, Pairs) {
    const auto m = manifest_with({{"a", 11}, {"b", 3}}, 5);
    EXPECT_EQ(make_pairs(m, "train").size(), 6u);
}

TEST(Manifest, ValidateSplits) {
    auto m = manifest_with({{"a", 11}, {"b", 11}}, 5);
    EXPECT_NO_THROW(m.validate());
    m.splits["test"].push_back("a");
    EXPECT_THROW(m.validate(), ParseError);
    m = manifest_with({{"a", 11}}, 5);
    m.sequences.push_back({"orphan", 3});
    EXPECT_THROW(m.validate(), ParseError);
    m = manifest_with({{"a", 11}}, 5);
    m.splits["val"].push_back("ghost");
    EXPECT_THROW(m.validate(), ParseError);
}

TEST(Augment, DrawIsSeeded) {
    const AugmentOptions opt;
    const auto a = draw_augmentation({64, 64}, opt, 5);
    const auto b = draw_augmentation({64, 64}, opt, 5);
    EXPECT_EQ(a.flip, b.flip);
    EXPECT_EQ(a.crop_x, b.crop_x);
    EXPECT_EQ(a.crop_w, 58);
    EXPECT_THROW(draw_augmentation({64, 64}, {true, 0.0}, 1), DomainError);
    EXPECT_THROW(draw_augmentation({64, 64}, {true, 1.5}, 1), DomainError);
}

TEST(Augment, IdentityWhenDisabled) {
    const AugmentDraw d = draw_augmentation({16, 16}, {false, 1.0}, 9);
    const std::vector<Point> pts{{1, 2}, {15.5, 0}};
    EXPECT_EQ(transform_dots(pts, {16, 16}, d), pts);
    ImageF img(16, 16, 3);
    img(3, 4, 1) = 0.5f;
    EXPECT_EQ(transform_image(img, d), img);
}

TEST(Augment, FlipMovesDotsWithPixels) {
    AugmentDraw d;
    d.flip = true;
    d.crop_w = 16;
    d.crop_h = 8;
    ImageF img(8, 16, 3);
    img(2, 3, 0) = 1.0f;
    const auto out = transform_image(img, d);
    EXPECT_EQ(out(2, 12, 0), 1.0f);
    const auto pts = transform_dots({{3.0, 2.0}}, {16, 8}, d);
    ASSERT_EQ(pts.size(), 1u);
    EXPECT_EQ(pts[0].x, 12.0);
    EXPECT_EQ(pts[0].y, 2.0);
}

TEST(Augment, TripletStaysConsistent) {
    // one bright particle; after any augmentation the brightest pixel must sit
    // on the transformed dot in all three frames
    oracle::ParticleWorld w;
    w.shape = {8, 8};
    w.n_steps = 2;
    w.trajectories = {{oracle::Cell{3, 3}, oracle::Cell{3, 4}, oracle::Cell{4, 4}}};
    RenderStyle style;
    style.noise_std = 0;
    const auto frames = render_synthetic(w, {64, 64}, style);
    FrameTriplet tr;
    tr.image_size = {64, 64};
    for (int k = 0; k < 3; ++k) {
        tr.frames[k] = to_float(frames.frames[k]);
        tr.dots[k] = frames.annotations[k].points;
    }
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const auto out = augment(tr, {true, 0.8}, seed, {}, {8, 8}, 1.0);
        EXPECT_TRUE(out.normalized);
        for (int k = 0; k < 3; ++k) {
            ASSERT_EQ(out.dots[k].size(), 1u);
            const auto [by, bx] = brightest_pixel(out.frames[k]);
            EXPECT_LE(std::abs(bx - out.dots[k][0].x), 1.5) << "seed " << seed << " frame " << k;
            EXPECT_LE(std::abs(by - out.dots[k][0].y), 1.5) << "seed " << seed << " frame " << k;
            EXPECT_NEAR(count(out.densities[k]), 1.0, 1e-9);
        }
    }
    EXPECT_THROW(augment(augment(tr, {}, 0, {}, {8, 8}, 1.0), {}, 0, {}, {8, 8}, 1.0), DomainError);
}

TEST(Augment, CropDropsOutsideDots) {
    AugmentDraw d;
    d.crop_x = 8;
    d.crop_y = 0;
    d.crop_w = 8;
    d.crop_h = 16;
    const auto pts = transform_dots({{2, 2}, {12, 4}}, {16, 16}, d);
    ASSERT_EQ(pts.size(), 1u);
    EXPECT_DOUBLE_EQ(pts[0].x, (12 - 8 + 0.5) * 2 - 0.5);
}

TEST(Synthetic, AnnotationsMatchWorld) {
    oracle::WorldConfig wc;
    wc.shape = {8, 8};
    wc.n_particles = 6;
    wc.n_steps = 4;
    wc.exit_probability = 0.3;
    wc.entry_rate = 1.0;
    wc.seed = 4;
    const auto w = oracle::simulate(wc);
    const auto r = render_synthetic(w, {64, 64}, {});
    ASSERT_EQ(r.frames.size(), 5u);
    for (int t = 0; t <= 4; ++t) {
        EXPECT_EQ(static_cast<int>(r.annotations[t].points.size()), oracle::in_grid_count(w, t));
        const auto gt = rasterize_density(r.annotations[t], {8, 8}, 1e-3);
        const auto truth = oracle::true_density(w, t);
        for (std::size_t i = 0; i < gt.values().size(); ++i) EXPECT_NEAR(gt.values()[i], truth.values()[i], 1e-12);
    }
    EXPECT_THROW(render_synthetic(w, {4, 64}, {}), DomainError);
}

TEST(Synthetic, DatasetOnDisk) {
    const auto root = scratch("synth");
    const auto m = write_synthetic_dataset(tiny_synth(3), root);
    EXPECT_EQ(m.sequences.size(), 4u);
    EXPECT_EQ(m.splits.at("train").size(), 2u);
    EXPECT_EQ(m.splits.at("val").size(), 1u);
    EXPECT_EQ(m.splits.at("test").size(), 1u);
    const auto loaded = load_manifest(root);
    EXPECT_EQ(to_json(loaded), to_json(m));
    EXPECT_EQ(manifest_hash(loaded).size(), 16u);

    const auto& seq = m.sequences[0];
    const auto anns = load_annotations(m.sequence_dir(seq.name), seq.frames, m.image_size);
    const auto world = oracle::load_world(m.sequence_dir(seq.name) / "world.json");
    for (int t = 0; t < seq.frames; ++t)
        EXPECT_EQ(static_cast<int>(anns[t].points.size()), oracle::in_grid_count(world, t));

    FrameStore store(m);
    auto tr = load_triplet(store, {seq.name, 1});
    EXPECT_EQ(tr.frames[0].width(), 32);
    EXPECT_EQ(tr.dots[2], anns[2].points);
    rasterize_triplet(tr, {4, 4}, 0.5);
    EXPECT_NEAR(count(tr.densities[1]), static_cast<double>(anns[1].points.size()), 1e-9);

    // the same seed writes the same bytes
    const auto root2 = scratch("synth2");
    write_synthetic_dataset(tiny_synth(3), root2);
    EXPECT_EQ(manifest_hash(load_manifest(root2)), manifest_hash(loaded));
    fs::remove_all(root);
    fs::remove_all(root2);
}

TEST(Synthetic, MissingFrameIsReported) {
    const auto root = scratch("synth_missing");
    const auto m = write_synthetic_dataset(tiny_synth(5), root);
    const auto& seq = m.sequences[1];
    fs::remove(m.frame_path(seq.name, 2));
    try {
        load_annotations(m.sequence_dir(seq.name), seq.frames, m.image_size);
        FAIL() << "expected ParseError";
    } catch (const ParseError& e) {
        EXPECT_NE(std::string(e.what()).find("000002.png"), std::string::npos);
    }
    FrameStore store(m);
    EXPECT_THROW(store.frame(seq.name, 2), ParseError);
    fs::remove_all(root);
}
