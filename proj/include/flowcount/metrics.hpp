#pragma once

// Counting metrics: MAE, RMSE and the grid average mean absolute error (GAME).

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "errors.hpp"
#include "flowgrid.hpp"

namespace flowcount {

namespace metrics_detail {
inline void require_counts(std::span<const double> gt, std::span<const double> pred, const char* op) {
    if (gt.empty()) throw DomainError(std::string(op) + ": empty input");
    if (gt.size() != pred.size()) throw DomainError(std::string(op) + ": length mismatch");
}
} // namespace metrics_detail

inline double mae(std::span<const double> gt, std::span<const double> pred) {
    metrics_detail::require_counts(gt, pred, "mae");
    double s = 0.0;
    for (std::size_t i = 0; i < gt.size(); ++i) s += std::abs(gt[i] - pred[i]);
    return s / static_cast<double>(gt.size());
}

inline double rmse(std::span<const double> gt, std::span<const double> pred) {
    metrics_detail::require_counts(gt, pred, "rmse");
    double s = 0.0;
    for (std::size_t i = 0; i < gt.size(); ++i) s += (gt[i] - pred[i]) * (gt[i] - pred[i]);
    return std::sqrt(s / static_cast<double>(gt.size()));
}

/// Half-open [begin, end) row and column range of one region.
struct Region {
    int row_begin, row_end, col_begin, col_end;
};

/// Splits `length` cells into `bands` contiguous bands; the first
/// length % bands bands get one extra cell.
inline std::vector<int> band_edges(int length, int bands) {
    if (bands < 1 || bands > length)
        throw DomainError("GAME partition of " + std::to_string(bands) + " bands is larger than map side " +
                          std::to_string(length));
    std::vector<int> edges{0};
    const int base = length / bands, extra = length % bands;
    for (int b = 0; b < bands; ++b) edges.push_back(edges.back() + base + (b < extra ? 1 : 0));
    return edges;
}

/// Band edges for 2^level bands by repeated halving, the leading half taking
/// the odd cell. Sizes stay within one of length / 2^level and every level
/// refines the one above it, so GAME cannot decrease with the level.
inline std::vector<int> nested_band_edges(int length, int level) {
    if (level < 0 || level > 15) throw DomainError("GAME level must be in [0, 15]");
    const int bands = 1 << level;
    if (bands > length)
        throw DomainError("GAME partition of " + std::to_string(bands) + " bands is larger than map side " +
                          std::to_string(length));
    std::vector<int> edges{0, length};
    for (int l = 0; l < level; ++l) {
        std::vector<int> next{0};
        for (std::size_t i = 1; i < edges.size(); ++i) {
            next.push_back(edges[i - 1] + (edges[i] - edges[i - 1] + 1) / 2);
            next.push_back(edges[i]);
        }
        edges = std::move(next);
    }
    return edges;
}

struct GamePartition {
    enum class Mode { PowerOf4, FixedGrid };

    Mode mode = Mode::PowerOf4;
    int level = 0;        // PowerOf4: 4^level regions
    int grid_width = 0;   // FixedGrid: columns
    int grid_height = 0;  // FixedGrid: rows

    static GamePartition power_of_4(int level) { return {Mode::PowerOf4, level, 0, 0}; }
    static GamePartition fixed_grid(int width, int height) { return {Mode::FixedGrid, 0, width, height}; }

    std::vector<Region> regions(GridShape shape) const {
        const bool nested = mode == Mode::PowerOf4;
        const auto re = nested ? nested_band_edges(shape.height, level) : band_edges(shape.height, grid_height);
        const auto ce = nested ? nested_band_edges(shape.width, level) : band_edges(shape.width, grid_width);
        const int rows = static_cast<int>(re.size()) - 1, cols = static_cast<int>(ce.size()) - 1;
        std::vector<Region> out;
        out.reserve(static_cast<std::size_t>(rows) * cols);
        for (int r = 0; r < rows; ++r)
            for (int c = 0; c < cols; ++c) out.push_back({re[r], re[r + 1], ce[c], ce[c + 1]});
        return out;
    }
};

template <typename T>
double region_sum(const Grid2<T>& m, const Region& r) {
    double s = 0.0;
    for (int y = r.row_begin; y < r.row_end; ++y)
        for (int x = r.col_begin; x < r.col_end; ++x) s += m(y, x);
    return s;
}

/// Sum over regions of |gt count - predicted count| for one frame.
template <typename T>
double game_frame(const Grid2<T>& gt, const Grid2<T>& pred, const std::vector<Region>& regions) {
    double e = 0.0;
    for (const auto& r : regions) e += std::abs(region_sum(gt, r) - region_sum(pred, r));
    return e;
}

/// Mean over frames of the per-frame region error. `Map` is Grid2<T> or DensityMap<T>.
template <typename Map>
double game(const std::vector<Map>& gt_maps, const std::vector<Map>& pred_maps, const GamePartition& partition) {
    if (gt_maps.empty()) throw DomainError("game: empty input");
    if (gt_maps.size() != pred_maps.size()) throw DomainError("game: length mismatch");
    const GridShape shape = gt_maps.front().shape();
    for (std::size_t n = 0; n < gt_maps.size(); ++n)
        if (!(gt_maps[n].shape() == shape) || !(pred_maps[n].shape() == shape))
            throw DomainError("game: all maps must share one shape");
    const auto regions = partition.regions(shape);
    double s = 0.0;
    for (std::size_t n = 0; n < gt_maps.size(); ++n) s += game_frame(gt_maps[n], pred_maps[n], regions);
    return s / static_cast<double>(gt_maps.size());
}

} // namespace flowcount
