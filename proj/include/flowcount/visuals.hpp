#pragma once

// Heatmaps and overlays for evaluated frames:
//   <seq>_<idx>_gt.png, <seq>_<idx>_pred.png, <seq>_<idx>_overlay.png
// plus <seq>_<idx>_scale.json recording the shared color scale.
// Heatmap rows [0, H) hold the map; a text margin with the counts follows.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "data.hpp"
#include "evaluate.hpp"
#include "json.hpp"

namespace flowcount {

struct VisualOptions {
    int max_frames = 4;       // first N evaluated frames with retained maps
    int margin = 24;          // pixels of text margin below each panel
    double overlay_alpha = 0.5;
};

/// Colormap index per cell: round(255 * v / scale), 0 when scale is 0.
inline cv::Mat heat_indices(const Grid2<double>& m, double scale) {
    cv::Mat idx(m.height(), m.width(), CV_8UC1);
    for (int r = 0; r < m.height(); ++r)
        for (int c = 0; c < m.width(); ++c) {
            const double v = scale > 0 ? std::clamp(m(r, c) / scale, 0.0, 1.0) : 0.0;
            idx.at<std::uint8_t>(r, c) = static_cast<std::uint8_t>(std::lround(255.0 * v));
        }
    return idx;
}

inline cv::Mat render_heatmap(const Grid2<double>& m, double scale, cv::Size size) {
    cv::Mat up, color;
    cv::resize(heat_indices(m, scale), up, size, 0, 0, cv::INTER_NEAREST);
    cv::applyColorMap(up, color, cv::COLORMAP_JET);
    return color;
}

inline cv::Mat with_margin(const cv::Mat& panel, int margin, const std::string& text) {
    cv::Mat out(panel.rows + margin, panel.cols, CV_8UC3, cv::Scalar(255, 255, 255));
    panel.copyTo(out(cv::Rect(0, 0, panel.cols, panel.rows)));
    const double font = std::max(0.3, std::min(1.0, panel.cols / 400.0));
    cv::putText(out, text, cv::Point(2, panel.rows + margin - 6), cv::FONT_HERSHEY_SIMPLEX, font, cv::Scalar(0, 0, 0), 1,
                cv::LINE_AA);
    return out;
}

/// Returns the written paths.
inline std::vector<std::filesystem::path> emit_visuals(const EvalReport& report, const DatasetManifest& manifest,
                                                       const std::filesystem::path& out_dir, const VisualOptions& opt = {}) {
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec || !std::filesystem::is_directory(out_dir))
        throw std::runtime_error("emit_visuals: cannot create directory " + out_dir.string());
    FrameStore store(manifest);
    std::vector<std::filesystem::path> written;
    const cv::Size size(manifest.target_size.width, manifest.target_size.height);
    auto write = [&](const std::filesystem::path& p, const cv::Mat& img) {
        bool ok = false;
        try {
            ok = cv::imwrite(p.string(), img);
        } catch (const cv::Exception&) {
            ok = false;
        }
        if (!ok) throw std::runtime_error("emit_visuals: cannot write " + p.string());
        written.push_back(p);
    };

    const int n = std::min<int>(opt.max_frames, static_cast<int>(report.maps.size()));
    for (int i = 0; i < n; ++i) {
        const auto& fm = report.maps[i];
        const double gt_max = *std::max_element(fm.gt.values().begin(), fm.gt.values().end());
        const double pred_max = *std::max_element(fm.pred.values().begin(), fm.pred.values().end());
        const double scale = std::max(gt_max, pred_max);
        const double gt_count = count(fm.gt), pred_count = count(fm.pred);
        char label[64];

        const std::string stem = fm.sequence + "_" + frame_stem(fm.index);
        const cv::Mat gt_heat = render_heatmap(fm.gt, scale, size);
        const cv::Mat pred_heat = render_heatmap(fm.pred, scale, size);
        std::snprintf(label, sizeof label, "GT %.2f", gt_count);
        write(out_dir / (stem + "_gt.png"), with_margin(gt_heat, opt.margin, label));
        std::snprintf(label, sizeof label, "pred %.2f", pred_count);
        write(out_dir / (stem + "_pred.png"), with_margin(pred_heat, opt.margin, label));

        const cv::Mat frame = to_mat_bgr(store.frame(fm.sequence, fm.index));
        cv::Mat left, right, both;
        cv::addWeighted(frame, 1.0 - opt.overlay_alpha, gt_heat, opt.overlay_alpha, 0.0, left);
        cv::addWeighted(frame, 1.0 - opt.overlay_alpha, pred_heat, opt.overlay_alpha, 0.0, right);
        cv::hconcat(left, right, both);
        std::snprintf(label, sizeof label, "GT %.2f | pred %.2f", gt_count, pred_count);
        write(out_dir / (stem + "_overlay.png"), with_margin(both, opt.margin, label));

        const auto side = out_dir / (stem + "_scale.json");
        std::ofstream os(side);
        if (!os) throw std::runtime_error("emit_visuals: cannot write " + side.string());
        os << nlohmann::json{{"color_scale_max", scale},
                             {"gt_max", gt_max},
                             {"pred_max", pred_max},
                             {"gt_count", gt_count},
                             {"pred_count", pred_count},
                             {"colormap", "jet"},
                             {"margin_rows", opt.margin}}
                  .dump(2)
           << '\n';
        written.push_back(side);
    }
    return written;
}

} // namespace flowcount
