#pragma once

// Dataset handling: dot annotations, ground-truth density rasterization,
// dataset manifests and frame triplets, augmentation, and synthetic frames
// rendered from particle worlds.
//
// Layout on disk:
//   root/manifest.json
//   root/sequences/<seq>/frames/<idx>.png
//   root/sequences/<seq>/annotations/<idx>.json   {"frame": idx, "points": [[x, y], ...]}
//   root/sequences/<seq>/world.json                (synthetic datasets only)

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "errors.hpp"
#include "flowgrid.hpp"
#include "image.hpp"
#include "json.hpp"
#include "oracle.hpp"

namespace flowcount {

namespace fs = std::filesystem;

struct Point {
    double x = 0.0;
    double y = 0.0;
    friend bool operator==(const Point&, const Point&) = default;
};

struct DotAnnotations {
    std::string sequence;
    int index = 0;
    std::vector<Point> points;  // head positions, pixels
    ImageSize image_size;

    friend bool operator==(const DotAnnotations&, const DotAnnotations&) = default;
};

inline std::string frame_stem(int index) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%06d", index);
    return buf;
}

// --- annotations ----------------------------------------------------------------

inline void write_annotation(const fs::path& path, const DotAnnotations& a) {
    nlohmann::json pts = nlohmann::json::array();
    for (const auto& p : a.points) pts.push_back({p.x, p.y});
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    os << nlohmann::json{{"frame", a.index}, {"points", pts}}.dump() << '\n';
}

inline DotAnnotations read_annotation(const fs::path& path, const std::string& sequence, ImageSize size) {
    std::ifstream is(path);
    if (!is) throw ParseError(path.string() + ": missing annotation file");
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(is);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(path.string() + ": malformed JSON: " + e.what());
    }
    DotAnnotations a;
    a.sequence = sequence;
    a.image_size = size;
    try {
        a.index = j.at("frame").get<int>();
        const auto& pts = j.at("points");
        for (std::size_t i = 0; i < pts.size(); ++i) {
            const Point p{pts[i].at(0).get<double>(), pts[i].at(1).get<double>()};
            if (!(p.x >= 0 && p.x < size.width && p.y >= 0 && p.y < size.height))
                throw ParseError(path.string() + ": point " + std::to_string(i) + " (" + std::to_string(p.x) + ", " +
                                 std::to_string(p.y) + ") outside " + std::to_string(size.width) + "x" +
                                 std::to_string(size.height) + " image");
            a.points.push_back(p);
        }
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(path.string() + ": bad annotation record: " + e.what());
    }
    return a;
}

/// One record per frame of a sequence directory; also checks the frame images exist.
inline std::vector<DotAnnotations> load_annotations(const fs::path& sequence_dir, int frame_count, ImageSize size,
                                                    const std::string& frame_extension = "png") {
    const std::string seq = sequence_dir.filename().string();
    std::vector<DotAnnotations> out;
    out.reserve(frame_count);
    for (int i = 0; i < frame_count; ++i) {
        const fs::path frame = sequence_dir / "frames" / (frame_stem(i) + "." + frame_extension);
        if (!fs::exists(frame)) throw ParseError(frame.string() + ": missing frame file (record " + std::to_string(i) + ")");
        auto a = read_annotation(sequence_dir / "annotations" / (frame_stem(i) + ".json"), seq, size);
        if (a.index != i)
            throw ParseError((sequence_dir / "annotations" / (frame_stem(i) + ".json")).string() + ": record " +
                             std::to_string(i) + " declares frame " + std::to_string(a.index));
        out.push_back(std::move(a));
    }
    return out;
}

// --- rasterization ------------------------------------------------------------------

/// Each dot, mapped to grid coordinates, is splatted as an isotropic Gaussian
/// over cell centers within 3 sigma and renormalized to unit mass inside the
/// grid. A dot too far from every cell center falls back to its containing cell.
template <typename T = double>
DensityMap<T> rasterize_density(const std::vector<Point>& points, ImageSize image, GridShape grid, double sigma) {
    if (!(sigma > 0.0) || !std::isfinite(sigma)) throw DomainError("rasterize_density: sigma must be > 0");
    if (image.width < 1 || image.height < 1) throw DomainError("rasterize_density: empty image size");
    grid.validate();
    std::vector<double> acc(grid.cells(), 0.0);
    const double radius = 3.0 * sigma;
    const double sx = static_cast<double>(grid.width) / image.width;
    const double sy = static_cast<double>(grid.height) / image.height;
    std::vector<std::pair<std::size_t, double>> splat;
    for (const auto& p : points) {
        const double gx = p.x * sx, gy = p.y * sy;
        const int c0 = std::max(0, static_cast<int>(std::floor(gx - radius - 0.5)));
        const int c1 = std::min(grid.width - 1, static_cast<int>(std::ceil(gx + radius - 0.5)));
        const int r0 = std::max(0, static_cast<int>(std::floor(gy - radius - 0.5)));
        const int r1 = std::min(grid.height - 1, static_cast<int>(std::ceil(gy + radius - 0.5)));
        splat.clear();
        double mass = 0.0;
        for (int r = r0; r <= r1; ++r)
            for (int c = c0; c <= c1; ++c) {
                const double dx = c + 0.5 - gx, dy = r + 0.5 - gy;
                const double d2 = dx * dx + dy * dy;
                if (d2 > radius * radius) continue;
                const double w = std::exp(-d2 / (2.0 * sigma * sigma));
                splat.emplace_back(static_cast<std::size_t>(r) * grid.width + c, w);
                mass += w;
            }
        if (mass <= 0.0) {
            const int r = std::clamp(static_cast<int>(std::floor(gy)), 0, grid.height - 1);
            const int c = std::clamp(static_cast<int>(std::floor(gx)), 0, grid.width - 1);
            acc[static_cast<std::size_t>(r) * grid.width + c] += 1.0;
            continue;
        }
        for (const auto& [idx, w] : splat) acc[idx] += w / mass;
    }
    DensityMap<T> out(grid);
    for (std::size_t i = 0; i < acc.size(); ++i) out.values()[i] = static_cast<T>(acc[i]);
    return out;
}

template <typename T = double>
DensityMap<T> rasterize_density(const DotAnnotations& dots, GridShape grid, double sigma) {
    return rasterize_density<T>(dots.points, dots.image_size, grid, sigma);
}

// --- manifest -----------------------------------------------------------------------

struct Normalization {
    std::array<double, 3> mean{0.0, 0.0, 0.0};
    std::array<double, 3> std{1.0, 1.0, 1.0};
};

struct SequenceInfo {
    std::string name;
    int frames = 0;
};

struct DatasetManifest {
    fs::path root;
    ImageSize image_size{640, 360};   // size the annotations refer to
    ImageSize target_size{640, 360};  // frames are resized to this before use
    int offset = 5;
    std::string frame_extension = "png";
    Normalization normalization;
    std::vector<SequenceInfo> sequences;
    std::map<std::string, std::vector<std::string>> splits;  // split name -> sequence names

    const SequenceInfo& sequence(const std::string& name) const {
        for (const auto& s : sequences)
            if (s.name == name) return s;
        throw DomainError("manifest has no sequence '" + name + "'");
    }

    fs::path sequence_dir(const std::string& name) const { return root / "sequences" / name; }
    fs::path frame_path(const std::string& seq, int idx) const {
        return sequence_dir(seq) / "frames" / (frame_stem(idx) + "." + frame_extension);
    }
    fs::path annotation_path(const std::string& seq, int idx) const {
        return sequence_dir(seq) / "annotations" / (frame_stem(idx) + ".json");
    }

    /// Every sequence belongs to exactly one split.
    void validate() const {
        if (offset < 1) throw ParseError("manifest: offset must be >= 1");
        if (image_size.width < 1 || image_size.height < 1 || target_size.width < 1 || target_size.height < 1)
            throw ParseError("manifest: image sizes must be positive");
        std::map<std::string, std::string> owner;
        for (const auto& s : sequences) {
            if (owner.count(s.name)) throw ParseError("manifest: duplicate sequence '" + s.name + "'");
            owner[s.name] = "";
        }
        for (const auto& [split, names] : splits)
            for (const auto& n : names) {
                auto it = owner.find(n);
                if (it == owner.end()) throw ParseError("manifest: split '" + split + "' names unknown sequence '" + n + "'");
                if (!it->second.empty())
                    throw ParseError("manifest: sequence '" + n + "' appears in splits '" + it->second + "' and '" + split + "'");
                it->second = split;
            }
        for (const auto& [name, split] : owner)
            if (split.empty()) throw ParseError("manifest: sequence '" + name + "' is not assigned to a split");
    }
};

inline nlohmann::json to_json(const DatasetManifest& m) {
    nlohmann::json seqs = nlohmann::json::array();
    for (const auto& s : m.sequences) seqs.push_back({{"name", s.name}, {"frames", s.frames}});
    return {{"format", "flowcount-dataset-v1"},
            {"image_size", {{"width", m.image_size.width}, {"height", m.image_size.height}}},
            {"target_size", {{"width", m.target_size.width}, {"height", m.target_size.height}}},
            {"offset", m.offset},
            {"frame_extension", m.frame_extension},
            {"normalization", {{"mean", m.normalization.mean}, {"std", m.normalization.std}}},
            {"sequences", seqs},
            {"splits", m.splits}};
}

inline void save_manifest(const DatasetManifest& m) {
    std::ofstream os(m.root / "manifest.json");
    if (!os) throw std::runtime_error("cannot write manifest under " + m.root.string());
    os << to_json(m).dump(2) << '\n';
}

inline DatasetManifest load_manifest(const fs::path& root) {
    const fs::path file = fs::is_directory(root) ? root / "manifest.json" : root;
    std::ifstream is(file);
    if (!is) throw ParseError("cannot open manifest " + file.string());
    DatasetManifest m;
    m.root = file.parent_path();
    try {
        const auto j = nlohmann::json::parse(is);
        m.image_size = {j.at("image_size").at("width").get<int>(), j.at("image_size").at("height").get<int>()};
        m.target_size = j.contains("target_size")
                            ? ImageSize{j.at("target_size").at("width").get<int>(), j.at("target_size").at("height").get<int>()}
                            : m.image_size;
        m.offset = j.value("offset", 5);
        m.frame_extension = j.value("frame_extension", "png");
        if (j.contains("normalization")) {
            m.normalization.mean = j.at("normalization").at("mean").get<std::array<double, 3>>();
            m.normalization.std = j.at("normalization").at("std").get<std::array<double, 3>>();
        }
        for (const auto& s : j.at("sequences")) m.sequences.push_back({s.at("name").get<std::string>(), s.at("frames").get<int>()});
        m.splits = j.at("splits").get<std::map<std::string, std::vector<std::string>>>();
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(file.string() + ": " + e.what());
    }
    m.validate();
    return m;
}

/// FNV-1a 64 of the manifest file bytes, hex encoded.
inline std::string manifest_hash(const DatasetManifest& m) {
    std::ifstream is(m.root / "manifest.json", std::ios::binary);
    std::uint64_t h = 1469598103934665603ull;
    char ch;
    while (is.get(ch)) {
        h ^= static_cast<unsigned char>(ch);
        h *= 1099511628211ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

// --- triplets -------------------------------------------------------------------------

struct TripletRef {
    std::string sequence;
    int center = 0;  // frame t; the triplet is (t - offset, t, t + offset)
    friend bool operator==(const TripletRef&, const TripletRef&) = default;
};

enum class StreamMode { Eval, Train };

struct TripletIndex {
    std::vector<TripletRef> triplets;
    std::vector<std::string> warnings;
};

/// Valid centers of every sequence in `split`. Eval mode keeps manifest order;
/// train mode shuffles with `seed`.
inline TripletIndex make_triplets(const DatasetManifest& m, const std::string& split, StreamMode mode = StreamMode::Eval,
                                  std::uint64_t seed = 0) {
    auto it = m.splits.find(split);
    if (it == m.splits.end()) throw DomainError("manifest has no split '" + split + "'");
    TripletIndex idx;
    for (const auto& name : it->second) {
        const int n = m.sequence(name).frames;
        if (n < 2 * m.offset + 1) {
            idx.warnings.push_back("sequence '" + name + "' has " + std::to_string(n) + " frames, fewer than 2*offset+1 = " +
                                   std::to_string(2 * m.offset + 1) + "; skipped");
            std::cerr << "warning: " << idx.warnings.back() << '\n';
            continue;
        }
        for (int t = m.offset; t + m.offset < n; ++t) idx.triplets.push_back({name, t});
    }
    if (mode == StreamMode::Train) {
        std::mt19937_64 rng(seed);
        std::shuffle(idx.triplets.begin(), idx.triplets.end(), rng);
    }
    return idx;
}

/// Frames (t - offset, t) for evaluation: every t >= offset, manifest order.
inline std::vector<TripletRef> make_pairs(const DatasetManifest& m, const std::string& split) {
    auto it = m.splits.find(split);
    if (it == m.splits.end()) throw DomainError("manifest has no split '" + split + "'");
    std::vector<TripletRef> out;
    for (const auto& name : it->second)
        for (int t = m.offset; t < m.sequence(name).frames; ++t) out.push_back({name, t});
    return out;
}

/// Decoded, resized frames and annotations, cached per (sequence, index).
class FrameStore {
public:
    explicit FrameStore(DatasetManifest manifest) : manifest_(std::move(manifest)) {}

    const DatasetManifest& manifest() const noexcept { return manifest_; }

    const Image8& frame(const std::string& seq, int idx) {
        const auto key = std::make_pair(seq, idx);
        auto it = frames_.find(key);
        if (it != frames_.end()) return it->second;
        const fs::path p = manifest_.frame_path(seq, idx);
        if (!fs::exists(p)) throw ParseError(p.string() + ": missing frame file");
        return frames_.emplace(key, resize_image(read_image(p), manifest_.target_size)).first->second;
    }

    /// Points rescaled to target-size pixel coordinates.
    const DotAnnotations& annotation(const std::string& seq, int idx) {
        const auto key = std::make_pair(seq, idx);
        auto it = annotations_.find(key);
        if (it != annotations_.end()) return it->second;
        DotAnnotations a = read_annotation(manifest_.annotation_path(seq, idx), seq, manifest_.image_size);
        a.index = idx;
        const double sx = static_cast<double>(manifest_.target_size.width) / manifest_.image_size.width;
        const double sy = static_cast<double>(manifest_.target_size.height) / manifest_.image_size.height;
        for (auto& p : a.points) p = {p.x * sx, p.y * sy};
        a.image_size = manifest_.target_size;
        return annotations_.emplace(key, std::move(a)).first->second;
    }

private:
    DatasetManifest manifest_;
    std::map<std::pair<std::string, int>, Image8> frames_;
    std::map<std::pair<std::string, int>, DotAnnotations> annotations_;
};

/// Three frames (t - offset, t, t + offset) with their annotations and GT densities.
struct FrameTriplet {
    std::string sequence;
    int center = 0;
    int offset = 1;
    ImageSize image_size;
    std::array<ImageF, 3> frames;              // RGB; [0,1] until normalized
    std::array<std::vector<Point>, 3> dots;    // image_size pixel coordinates
    std::array<DensityMap<double>, 3> densities;
    bool normalized = false;
};

inline FrameTriplet load_triplet(FrameStore& store, const TripletRef& ref) {
    const auto& m = store.manifest();
    FrameTriplet tr;
    tr.sequence = ref.sequence;
    tr.center = ref.center;
    tr.offset = m.offset;
    tr.image_size = m.target_size;
    for (int k = 0; k < 3; ++k) {
        const int idx = ref.center + (k - 1) * m.offset;
        tr.frames[k] = to_float(store.frame(ref.sequence, idx));
        tr.dots[k] = store.annotation(ref.sequence, idx).points;
    }
    return tr;
}

inline void rasterize_triplet(FrameTriplet& tr, GridShape grid, double sigma) {
    for (int k = 0; k < 3; ++k) tr.densities[k] = rasterize_density<double>(tr.dots[k], tr.image_size, grid, sigma);
}

inline void normalize_image(ImageF& img, const Normalization& n) {
    for (int y = 0; y < img.height(); ++y)
        for (int x = 0; x < img.width(); ++x) {
            float* p = img.pixel(y, x);
            for (int c = 0; c < 3; ++c) p[c] = static_cast<float>((p[c] - n.mean[c]) / n.std[c]);
        }
}

inline void normalize_triplet(FrameTriplet& tr, const Normalization& n) {
    if (tr.normalized) return;
    for (auto& f : tr.frames) normalize_image(f, n);
    tr.normalized = true;
}

struct AugmentOptions {
    bool flip = true;            // horizontal, p = 0.5
    double crop_fraction = 0.9;  // of each dimension, then resized back; 1 disables
};

struct AugmentDraw {
    bool flip = false;
    int crop_x = 0, crop_y = 0, crop_w = 0, crop_h = 0;
};

inline AugmentDraw draw_augmentation(ImageSize size, const AugmentOptions& opt, std::uint64_t seed) {
    if (!(opt.crop_fraction > 0.0 && opt.crop_fraction <= 1.0))
        throw DomainError("augment: crop fraction must be in (0, 1]");
    std::mt19937_64 rng(seed);
    AugmentDraw d;
    d.flip = opt.flip && std::uniform_real_distribution<double>(0.0, 1.0)(rng) < 0.5;
    d.crop_w = std::max(1, static_cast<int>(std::lround(opt.crop_fraction * size.width)));
    d.crop_h = std::max(1, static_cast<int>(std::lround(opt.crop_fraction * size.height)));
    d.crop_x = std::uniform_int_distribution<int>(0, size.width - d.crop_w)(rng);
    d.crop_y = std::uniform_int_distribution<int>(0, size.height - d.crop_h)(rng);
    return d;
}

/// Geometric part of an augmentation applied to a dot set; dots outside the crop are dropped.
inline std::vector<Point> transform_dots(const std::vector<Point>& dots, ImageSize size, const AugmentDraw& d) {
    std::vector<Point> out;
    out.reserve(dots.size());
    const bool cropped = d.crop_w != size.width || d.crop_h != size.height;
    for (Point p : dots) {
        if (d.flip) p.x = size.width - 1 - p.x;
        if (cropped) {
            if (p.x < d.crop_x || p.x >= d.crop_x + d.crop_w || p.y < d.crop_y || p.y >= d.crop_y + d.crop_h) continue;
            // matches the half-pixel convention of the bilinear resize
            p.x = (p.x - d.crop_x + 0.5) * size.width / d.crop_w - 0.5;
            p.y = (p.y - d.crop_y + 0.5) * size.height / d.crop_h - 0.5;
            p.x = std::clamp(p.x, 0.0, std::nextafter(static_cast<double>(size.width), 0.0));
            p.y = std::clamp(p.y, 0.0, std::nextafter(static_cast<double>(size.height), 0.0));
        }
        out.push_back(p);
    }
    return out;
}

inline ImageF transform_image(const ImageF& img, const AugmentDraw& d) {
    ImageF out = img;
    if (d.flip)
        for (int y = 0; y < img.height(); ++y)
            for (int x = 0; x < img.width(); ++x)
                std::copy(img.pixel(y, x), img.pixel(y, x) + img.channels(), out.pixel(y, img.width() - 1 - x));
    if (d.crop_w != img.width() || d.crop_h != img.height()) {
        ImageF crop(d.crop_h, d.crop_w, img.channels());
        for (int y = 0; y < d.crop_h; ++y)
            std::copy(out.pixel(d.crop_y + y, d.crop_x), out.pixel(d.crop_y + y, d.crop_x) + d.crop_w * img.channels(),
                      crop.pixel(y, 0));
        out = resize_image(crop, ImageSize{img.width(), img.height()});
    }
    return out;
}

/// One random draw applied identically to the three frames and dot sets, then
/// channel normalization and GT re-rasterization from the transformed dots.
inline FrameTriplet augment(const FrameTriplet& in, const AugmentOptions& opt, std::uint64_t seed,
                            const Normalization& norm, GridShape grid, double sigma) {
    if (in.normalized) throw DomainError("augment: triplet is already normalized");
    const AugmentDraw d = draw_augmentation(in.image_size, opt, seed);
    FrameTriplet out = in;
    for (int k = 0; k < 3; ++k) {
        out.frames[k] = transform_image(in.frames[k], d);
        out.dots[k] = transform_dots(in.dots[k], in.image_size, d);
    }
    normalize_triplet(out, norm);
    rasterize_triplet(out, grid, sigma);
    return out;
}

// --- synthetic frames ------------------------------------------------------------------------

struct RenderStyle {
    double blob_sigma = 1.5;                           // pixels
    std::array<double, 3> blob_color{0.9, 0.75, 0.6};  // added per particle, RGB in [0,1]
    std::array<double, 3> background{0.15, 0.2, 0.25};
    double noise_std = 0.02;
    std::uint64_t seed = 0;
};

struct SyntheticFrames {
    std::vector<Image8> frames;
    std::vector<DotAnnotations> annotations;
};

/// Pixel position of a grid cell's center (pixel p sits at coordinate p).
inline Point cell_center_pixel(int row, int col, GridShape grid, ImageSize size) {
    return {(col + 0.5) * size.width / grid.width, (row + 0.5) * size.height / grid.height};
}

inline SyntheticFrames render_synthetic(const oracle::ParticleWorld& world, ImageSize size, const RenderStyle& style,
                                        const std::string& sequence = "synthetic") {
    if (size.width < world.shape.width || size.height < world.shape.height)
        throw DomainError("render_synthetic: image " + std::to_string(size.width) + "x" + std::to_string(size.height) +
                          " is smaller than grid " + to_string(world.shape));
    std::mt19937_64 rng(style.seed);
    std::normal_distribution<double> noise(0.0, style.noise_std > 0 ? style.noise_std : 1.0);
    const int radius = static_cast<int>(std::ceil(3.0 * style.blob_sigma));
    SyntheticFrames out;
    for (int t = 0; t <= world.n_steps; ++t) {
        ImageF img(size.height, size.width, 3);
        for (int y = 0; y < size.height; ++y)
            for (int x = 0; x < size.width; ++x)
                for (int c = 0; c < 3; ++c)
                    img(y, x, c) = static_cast<float>(style.background[c] + (style.noise_std > 0 ? noise(rng) : 0.0));
        DotAnnotations ann;
        ann.sequence = sequence;
        ann.index = t;
        ann.image_size = size;
        for (const auto& tr : world.trajectories) {
            if (!tr[t]) continue;
            const Point p = cell_center_pixel(tr[t]->row, tr[t]->col, world.shape, size);
            ann.points.push_back(p);
            const int cx = static_cast<int>(std::floor(p.x)), cy = static_cast<int>(std::floor(p.y));
            for (int y = std::max(0, cy - radius); y <= std::min(size.height - 1, cy + radius); ++y)
                for (int x = std::max(0, cx - radius); x <= std::min(size.width - 1, cx + radius); ++x) {
                    const double d2 = (x - p.x) * (x - p.x) + (y - p.y) * (y - p.y);
                    const double w = std::exp(-d2 / (2.0 * style.blob_sigma * style.blob_sigma));
                    for (int c = 0; c < 3; ++c) img(y, x, c) += static_cast<float>(w * style.blob_color[c]);
                }
        }
        out.frames.push_back(to_uint8(img));
        out.annotations.push_back(std::move(ann));
    }
    return out;
}

struct SynthConfig {
    oracle::WorldConfig world;  // n_particles is drawn per sequence from the range below
    int sequences = 8;
    int frames_per_sequence = 20;
    int particles_min = 2;
    int particles_max = 20;
    ImageSize image_size{64, 64};
    RenderStyle style;
    int offset = 1;
    double val_fraction = 0.125;
    double test_fraction = 0.125;
    std::uint64_t seed = 0;
};

inline nlohmann::json to_json(const SynthConfig& c) {
    return {{"world", oracle::to_json(c.world)},
            {"sequences", c.sequences},
            {"frames_per_sequence", c.frames_per_sequence},
            {"particles_min", c.particles_min},
            {"particles_max", c.particles_max},
            {"image_width", c.image_size.width},
            {"image_height", c.image_size.height},
            {"blob_sigma", c.style.blob_sigma},
            {"noise_std", c.style.noise_std},
            {"offset", c.offset},
            {"val_fraction", c.val_fraction},
            {"test_fraction", c.test_fraction},
            {"seed", c.seed}};
}

inline SynthConfig synth_config_from_json(const nlohmann::json& j, SynthConfig c = {}) {
    try {
        if (j.contains("world")) c.world = oracle::world_config_from_json(j.at("world"), c.world);
        c.sequences = j.value("sequences", c.sequences);
        c.frames_per_sequence = j.value("frames_per_sequence", c.frames_per_sequence);
        c.particles_min = j.value("particles_min", c.particles_min);
        c.particles_max = j.value("particles_max", c.particles_max);
        c.image_size.width = j.value("image_width", c.image_size.width);
        c.image_size.height = j.value("image_height", c.image_size.height);
        c.style.blob_sigma = j.value("blob_sigma", c.style.blob_sigma);
        c.style.noise_std = j.value("noise_std", c.style.noise_std);
        c.offset = j.value("offset", c.offset);
        c.val_fraction = j.value("val_fraction", c.val_fraction);
        c.test_fraction = j.value("test_fraction", c.test_fraction);
        c.seed = j.value("seed", c.seed);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("synth config: ") + e.what());
    }
    if (c.sequences < 1 || c.frames_per_sequence < 1) throw DomainError("synth config: need at least one sequence and frame");
    if (c.particles_min < 0 || c.particles_max < c.particles_min) throw DomainError("synth config: bad particle range");
    return c;
}

/// Renders `sequences` independent worlds into the dataset layout, assigns
/// whole sequences to train/val/test, and records per-channel statistics as
/// the normalization constants.
inline DatasetManifest write_synthetic_dataset(const SynthConfig& cfg, const fs::path& root) {
    fs::create_directories(root / "sequences");
    std::mt19937_64 rng(cfg.seed);
    std::uniform_int_distribution<int> particles(cfg.particles_min, cfg.particles_max);

    DatasetManifest m;
    m.root = root;
    m.image_size = m.target_size = cfg.image_size;
    m.offset = cfg.offset;
    m.frame_extension = "png";

    const int n_test = static_cast<int>(std::lround(cfg.test_fraction * cfg.sequences));
    const int n_val = static_cast<int>(std::lround(cfg.val_fraction * cfg.sequences));
    std::array<double, 3> sum{}, sum2{};
    double samples = 0.0;
    for (int s = 0; s < cfg.sequences; ++s) {
        char name[32];
        std::snprintf(name, sizeof name, "seq_%03d", s);
        oracle::WorldConfig wc = cfg.world;
        wc.n_particles = particles(rng);
        wc.n_steps = cfg.frames_per_sequence - 1;
        wc.seed = rng();
        const auto world = oracle::simulate(wc);
        RenderStyle style = cfg.style;
        style.seed = rng();
        const auto rendered = render_synthetic(world, cfg.image_size, style, name);

        const fs::path dir = root / "sequences" / name;
        fs::create_directories(dir / "frames");
        fs::create_directories(dir / "annotations");
        oracle::save_world(dir / "world.json", world);
        for (std::size_t t = 0; t < rendered.frames.size(); ++t) {
            write_image(dir / "frames" / (frame_stem(static_cast<int>(t)) + ".png"), rendered.frames[t]);
            write_annotation(dir / "annotations" / (frame_stem(static_cast<int>(t)) + ".json"), rendered.annotations[t]);
            const auto& f = rendered.frames[t];
            for (int y = 0; y < f.height(); ++y)
                for (int x = 0; x < f.width(); ++x)
                    for (int c = 0; c < 3; ++c) {
                        const double v = f(y, x, c) / 255.0;
                        sum[c] += v;
                        sum2[c] += v * v;
                    }
            samples += static_cast<double>(f.height()) * f.width();
        }
        m.sequences.push_back({name, static_cast<int>(rendered.frames.size())});
        const std::string split = s < cfg.sequences - n_val - n_test ? "train" : (s < cfg.sequences - n_test ? "val" : "test");
        m.splits[split].push_back(name);
    }
    for (int c = 0; c < 3; ++c) {
        m.normalization.mean[c] = sum[c] / samples;
        m.normalization.std[c] = std::sqrt(std::max(1e-12, sum2[c] / samples - m.normalization.mean[c] * m.normalization.mean[c]));
    }
    for (const char* split : {"train", "val", "test"}) m.splits[split];
    m.validate();
    save_manifest(m);
    std::ofstream(root / "synth_config.json") << to_json(cfg).dump(2) << '\n';
    return m;
}

} // namespace flowcount
