#pragma once

// RGB images as HWC tensors, with OpenCV doing decode/encode and resampling.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "errors.hpp"
#include "tensor.hpp"

namespace flowcount {

struct ImageSize {
    int width = 0;
    int height = 0;
    friend bool operator==(const ImageSize&, const ImageSize&) = default;
};

using Image8 = Tensor3<std::uint8_t>;
using ImageF = Tensor3<float>;

inline cv::Mat to_mat_bgr(const Image8& img) {
    cv::Mat rgb(img.height(), img.width(), CV_8UC3, const_cast<std::uint8_t*>(img.values().data()));
    cv::Mat bgr;
    cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
    return bgr;
}

inline Image8 from_mat_bgr(const cv::Mat& bgr) {
    cv::Mat rgb;
    cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
    Image8 img(rgb.rows, rgb.cols, 3);
    for (int y = 0; y < rgb.rows; ++y) std::memcpy(img.pixel(y, 0), rgb.ptr<std::uint8_t>(y), rgb.cols * 3);
    return img;
}

inline Image8 read_image(const std::filesystem::path& path) {
    cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
    if (bgr.empty()) throw ParseError("cannot decode image " + path.string());
    return from_mat_bgr(bgr);
}

inline void write_image(const std::filesystem::path& path, const Image8& img) {
    if (!cv::imwrite(path.string(), to_mat_bgr(img))) throw std::runtime_error("cannot write image " + path.string());
}

inline Image8 resize_image(const Image8& img, ImageSize size) {
    if (img.width() == size.width && img.height() == size.height) return img;
    cv::Mat src(img.height(), img.width(), CV_8UC3, const_cast<std::uint8_t*>(img.values().data()));
    cv::Mat dst;
    cv::resize(src, dst, cv::Size(size.width, size.height), 0, 0, cv::INTER_AREA);
    Image8 out(size.height, size.width, 3);
    for (int y = 0; y < dst.rows; ++y) std::memcpy(out.pixel(y, 0), dst.ptr<std::uint8_t>(y), dst.cols * 3);
    return out;
}

/// Bilinear resample of a float image (any channel count up to 4).
inline ImageF resize_image(const ImageF& img, ImageSize size) {
    if (img.width() == size.width && img.height() == size.height) return img;
    cv::Mat src(img.height(), img.width(), CV_32FC(img.channels()), const_cast<float*>(img.values().data()));
    cv::Mat dst;
    cv::resize(src, dst, cv::Size(size.width, size.height), 0, 0, cv::INTER_LINEAR);
    ImageF out(size.height, size.width, img.channels());
    for (int y = 0; y < dst.rows; ++y)
        std::memcpy(out.pixel(y, 0), dst.ptr<float>(y), sizeof(float) * dst.cols * img.channels());
    return out;
}

/// Values scaled to [0, 1].
inline ImageF to_float(const Image8& img) {
    ImageF out(img.height(), img.width(), img.channels());
    auto s = img.values();
    auto d = out.values();
    for (std::size_t i = 0; i < s.size(); ++i) d[i] = static_cast<float>(s[i]) / 255.0f;
    return out;
}

inline Image8 to_uint8(const ImageF& img) {
    Image8 out(img.height(), img.width(), img.channels());
    auto s = img.values();
    auto d = out.values();
    for (std::size_t i = 0; i < s.size(); ++i) {
        const float v = std::clamp(s[i], 0.0f, 1.0f);
        d[i] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
    }
    return out;
}

} // namespace flowcount
