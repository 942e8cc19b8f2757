#pragma once

// Evaluation over a dataset split and the canonical report format.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "checkpoint.hpp"
#include "data.hpp"
#include "json.hpp"
#include "metrics.hpp"
#include "training.hpp"

namespace flowcount {

struct FrameRecord {
    std::string sequence;
    int index = 0;
    double gt_count = 0;
    double pred_count = 0;
    double abs_error = 0;
    double game_cells_error = 0;  // fixed-grid region error of this frame
};

struct BaselineScores {
    double mae = 0;
    double rmse = 0;
    double predicted_count = 0;
};

/// Maps kept in memory for visualization; not serialized.
struct FrameMaps {
    std::string sequence;
    int index = 0;
    DensityMap<double> gt;
    DensityMap<double> pred;
};

struct EvalReport {
    std::string checkpoint;
    std::string manifest_hash;
    std::string split;
    std::vector<FrameRecord> frames;
    double mae = 0;
    double rmse = 0;
    std::map<int, double> game;  // level -> GAME(L)
    double game_fixed_grid = 0;
    int fixed_grid_width = 0;
    int fixed_grid_height = 0;
    BaselineScores zero_baseline;
    BaselineScores mean_baseline;
    std::string generated_at;
    std::vector<FrameMaps> maps;
};

struct EvalOptions {
    std::vector<int> game_levels{0, 1, 2, 3};
    int fixed_grid_width = 0;   // 0 = full feature resolution
    int fixed_grid_height = 0;
    double sigma = 1.0;
    bool keep_maps = false;
    int max_pairs = 0;  // 0 = whole split
};

/// Everything a predictor may look at for one pair.
struct FramePair {
    std::string sequence;
    int prev_index = 0;
    int index = 0;
    const ImageF* prev = nullptr;  // normalized
    const ImageF* curr = nullptr;
    const DensityMap<double>* gt = nullptr;
};

using DensityPredictor = std::function<DensityMap<double>(const FramePair&)>;

namespace eval_detail {
inline std::string timestamp() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}
} // namespace eval_detail

/// Runs `predict` on the pairs (t - offset, t) of `split` in manifest order.
inline EvalReport evaluate_with(const DensityPredictor& predict, const DatasetManifest& manifest, const std::string& split,
                                GridShape grid, const EvalOptions& opt = {}) {
    auto pairs = make_pairs(manifest, split);
    if (pairs.empty()) throw DomainError("evaluate: split '" + split + "' has no frame pairs");
    if (opt.max_pairs > 0 && static_cast<int>(pairs.size()) > opt.max_pairs) pairs.resize(opt.max_pairs);
    FrameStore store(manifest);

    EvalReport rep;
    rep.split = split;
    rep.manifest_hash = manifest_hash(manifest);
    rep.fixed_grid_width = opt.fixed_grid_width > 0 ? opt.fixed_grid_width : grid.width;
    rep.fixed_grid_height = opt.fixed_grid_height > 0 ? opt.fixed_grid_height : grid.height;
    const auto fixed = GamePartition::fixed_grid(rep.fixed_grid_width, rep.fixed_grid_height);
    const auto fixed_regions = fixed.regions(grid);

    std::vector<DensityMap<double>> gts, preds;
    std::vector<double> gt_counts, pred_counts;
    for (const auto& p : pairs) {
        const int prev_idx = p.center - manifest.offset;
        const ImageF prev = normalized_frame(store, p.sequence, prev_idx);
        const ImageF curr = normalized_frame(store, p.sequence, p.center);
        const auto& ann = store.annotation(p.sequence, p.center);
        DensityMap<double> gt = rasterize_density<double>(ann.points, ann.image_size, grid, opt.sigma);
        DensityMap<double> pred = predict({p.sequence, prev_idx, p.center, &prev, &curr, &gt});
        detail::require_same_shape(gt.shape(), pred.shape(), "evaluate");

        FrameRecord r;
        r.sequence = p.sequence;
        r.index = p.center;
        r.gt_count = count(gt);  // equals the dot count up to rounding; keeps GAME(0) == MAE exact
        r.pred_count = count(pred);
        r.abs_error = std::abs(r.gt_count - r.pred_count);
        r.game_cells_error = game_frame(gt, pred, fixed_regions);
        rep.frames.push_back(r);
        gt_counts.push_back(r.gt_count);
        pred_counts.push_back(r.pred_count);
        if (opt.keep_maps) rep.maps.push_back({p.sequence, p.center, gt, pred});
        gts.push_back(std::move(gt));
        preds.push_back(std::move(pred));
    }
    rep.mae = mae(gt_counts, pred_counts);
    rep.rmse = rmse(gt_counts, pred_counts);
    for (int L : opt.game_levels) rep.game[L] = game(gts, preds, GamePartition::power_of_4(L));
    rep.game_fixed_grid = game(gts, preds, fixed);

    const std::vector<double> zeros(gt_counts.size(), 0.0);
    rep.zero_baseline = {mae(gt_counts, zeros), rmse(gt_counts, zeros), 0.0};
    double mean = 0;
    for (double c : gt_counts) mean += c;
    mean /= static_cast<double>(gt_counts.size());
    const std::vector<double> means(gt_counts.size(), mean);
    rep.mean_baseline = {mae(gt_counts, means), rmse(gt_counts, means), mean};
    rep.generated_at = eval_detail::timestamp();
    return rep;
}

inline EvalReport evaluate(const FlowRegressor<float>& model, const DatasetManifest& manifest, const std::string& split,
                           const EvalOptions& opt = {}, const std::string& checkpoint_id = "") {
    const ModelConfig& mc = model.config();
    if (mc.in_width != manifest.target_size.width)
        throw IncompatibleCheckpoint("in_width", "incompatible checkpoint: config field 'in_width' is " +
                                                     std::to_string(mc.in_width) + " but the dataset target width is " +
                                                     std::to_string(manifest.target_size.width));
    if (mc.in_height != manifest.target_size.height)
        throw IncompatibleCheckpoint("in_height", "incompatible checkpoint: config field 'in_height' is " +
                                                      std::to_string(mc.in_height) + " but the dataset target height is " +
                                                      std::to_string(manifest.target_size.height));
    auto predict = [&](const FramePair& p) {
        return DensityMap<double>(grid_cast<double>(predict_density(model, *p.prev, *p.curr).density));
    };
    EvalReport rep = evaluate_with(predict, manifest, split, mc.feature_shape(), opt);
    rep.checkpoint = checkpoint_id;
    return rep;
}

inline EvalReport evaluate(const std::filesystem::path& checkpoint, const DatasetManifest& manifest,
                           const std::string& split, const EvalOptions& opt = {}) {
    const Checkpoint ck = load_checkpoint(checkpoint);
    const auto model = regressor_from_checkpoint(ck);
    return evaluate(model, manifest, split, opt, checkpoint.filename().string() + "@step" + std::to_string(ck.step));
}

// --- report JSON -------------------------------------------------------------------------

/// Rounds to 6 significant digits so the dump prints at most that many.
inline double round6(double v) {
    if (!std::isfinite(v)) return v;
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return std::strtod(buf, nullptr);
}

/// Canonical report: sorted keys, 6 significant digits. The timestamp is
/// left out unless requested so that identical runs compare byte-identical.
inline nlohmann::json report_to_json(const EvalReport& r, bool include_timestamp = true) {
    nlohmann::json frames = nlohmann::json::array();
    for (const auto& f : r.frames)
        frames.push_back({{"sequence", f.sequence},
                          {"index", f.index},
                          {"gt_count", round6(f.gt_count)},
                          {"pred_count", round6(f.pred_count)},
                          {"abs_error", round6(f.abs_error)},
                          {"game_cells_error", round6(f.game_cells_error)}});
    nlohmann::json game = nlohmann::json::object();
    for (const auto& [L, v] : r.game) game[std::to_string(L)] = round6(v);
    auto baseline = [](const BaselineScores& b) {
        return nlohmann::json{{"mae", round6(b.mae)}, {"rmse", round6(b.rmse)}, {"predicted_count", round6(b.predicted_count)}};
    };
    nlohmann::json j = {{"checkpoint", r.checkpoint},
                        {"manifest_hash", r.manifest_hash},
                        {"split", r.split},
                        {"mae", round6(r.mae)},
                        {"rmse", round6(r.rmse)},
                        {"game", game},
                        {"game_fixed_grid", round6(r.game_fixed_grid)},
                        {"fixed_grid", {{"width", r.fixed_grid_width}, {"height", r.fixed_grid_height}}},
                        {"baselines", {{"zero", baseline(r.zero_baseline)}, {"mean", baseline(r.mean_baseline)}}},
                        {"frames", frames}};
    if (include_timestamp) j["generated_at"] = r.generated_at;
    return j;
}

inline std::string canonical_report(const EvalReport& r) { return report_to_json(r, false).dump(2); }

} // namespace flowcount
