#pragma once

// Flow regressor: a shared convolutional encoder applied to both frames, an
// aggregator (attentive spatio-temporal fusion or plain concatenation) and a
// convolutional decoder that emits a 10-channel INCOMING flow field at the
// encoder's output resolution.
//
// Every forward step can record a cache; the matching *_backward call
// accumulates parameter gradients into a GradientSet and returns the gradient
// with respect to its inputs.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "errors.hpp"
#include "flowgrid.hpp"
#include "json.hpp"
#include "nn/attention.hpp"
#include "nn/layers.hpp"
#include "tensor.hpp"

namespace flowcount {

enum class FusionMode { TemporalFusion, PlainConcat };

inline const char* to_string(FusionMode m) {
    return m == FusionMode::TemporalFusion ? "temporal_fusion" : "plain_concat";
}

inline FusionMode fusion_mode_from_string(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char ch) { return std::tolower(ch); });
    if (s == "temporal_fusion" || s == "tf") return FusionMode::TemporalFusion;
    if (s == "plain_concat" || s == "pc") return FusionMode::PlainConcat;
    throw DomainError("unknown fusion mode '" + s + "'");
}

struct ConvStage {
    int kernel = 3;
    int channels = 32;
    nn::Activation activation = nn::Activation::Relu;
    bool downsample = false;

    friend bool operator==(const ConvStage&, const ConvStage&) = default;
};

struct ModelConfig {
    int in_height = 360;
    int in_width = 640;
    int stride = 8;
    int channels = 64;        // C, encoder output channels
    int key_channels = 32;    // d_k
    int value_channels = 32;  // d_v
    int attention_kernel = 3; // g_q, g_k, g_v
    int skip_kernel = 3;      // g_skip
    std::vector<ConvStage> encoder;
    std::vector<ConvStage> decoder;
    FusionMode fusion = FusionMode::TemporalFusion;
    std::string output_activation = "softplus";
    std::uint64_t seed = 0;

    /// Three conv+pool encoder stages (32, 64, C) reaching stride 8, and a
    /// constant-resolution decoder ending in a 1x1 ten-channel head.
    static ModelConfig standard(int in_height, int in_width, int channels = 64) {
        ModelConfig c;
        c.in_height = in_height;
        c.in_width = in_width;
        c.channels = channels;
        c.key_channels = channels / 2;
        c.value_channels = channels / 2;
        c.encoder = {{3, 32, nn::Activation::Relu, true},
                     {3, 64, nn::Activation::Relu, true},
                     {3, channels, nn::Activation::Relu, true}};
        c.decoder = {{3, 64, nn::Activation::Relu, false},
                     {3, 32, nn::Activation::Relu, false},
                     {3, 32, nn::Activation::Relu, false},
                     {1, kFlowChannels, nn::Activation::None, false}};
        return c;
    }

    int feature_height() const { return in_height / stride; }
    int feature_width() const { return in_width / stride; }
    GridShape feature_shape() const { return {feature_height(), feature_width()}; }
    int aggregated_channels() const { return 2 * channels; }

    void validate() const {
        auto fail = [](const std::string& m) { throw DomainError("ModelConfig: " + m); };
        if (in_height < 1 || in_width < 1) fail("input size must be positive");
        if (stride < 1) fail("stride must be >= 1");
        if (in_height % stride || in_width % stride) fail("input size must be divisible by stride");
        if (!(value_channels > 0 && value_channels < channels)) fail("need 0 < d_v < C");
        if (key_channels < 1) fail("d_k must be >= 1");
        if (attention_kernel % 2 == 0 || skip_kernel % 2 == 0) fail("kernels must be odd");
        if (encoder.empty()) fail("encoder needs at least one stage");
        int downs = 1;
        for (const auto& s : encoder) {
            if (s.kernel < 1 || s.kernel % 2 == 0) fail("encoder kernels must be odd");
            if (s.channels < 1) fail("encoder channels must be >= 1");
            if (s.downsample) downs *= 2;
        }
        if (downs != stride) fail("encoder downsampling (" + std::to_string(downs) + ") does not match stride");
        if (encoder.back().channels != channels) fail("last encoder stage must emit C channels");
        if (decoder.empty()) fail("decoder needs at least one stage");
        for (const auto& s : decoder) {
            if (s.kernel < 1 || s.kernel % 2 == 0) fail("decoder kernels must be odd");
            if (s.downsample) fail("decoder stages cannot downsample");
            if (s.channels < 1) fail("decoder channels must be >= 1");
        }
        if (decoder.back().channels != kFlowChannels) fail("decoder must end with 10 channels");
        if (output_activation != "softplus") fail("unsupported output activation '" + output_activation + "'");
    }

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

inline nlohmann::json to_json(const ConvStage& s) {
    return {{"kernel", s.kernel},
            {"channels", s.channels},
            {"activation", nn::to_string(s.activation)},
            {"downsample", s.downsample}};
}

inline nlohmann::json to_json(const ModelConfig& c) {
    nlohmann::json enc = nlohmann::json::array(), dec = nlohmann::json::array();
    for (const auto& s : c.encoder) enc.push_back(to_json(s));
    for (const auto& s : c.decoder) dec.push_back(to_json(s));
    return {{"in_height", c.in_height},
            {"in_width", c.in_width},
            {"stride", c.stride},
            {"channels", c.channels},
            {"key_channels", c.key_channels},
            {"value_channels", c.value_channels},
            {"attention_kernel", c.attention_kernel},
            {"skip_kernel", c.skip_kernel},
            {"encoder", enc},
            {"decoder", dec},
            {"fusion_mode", to_string(c.fusion)},
            {"output_activation", c.output_activation},
            {"seed", c.seed}};
}

/// Fields absent from `j` default to ModelConfig::standard at the given size.
inline ModelConfig model_config_from_json(const nlohmann::json& j) {
    try {
        const int h = j.value("in_height", 360), w = j.value("in_width", 640);
        ModelConfig c = ModelConfig::standard(h, w, j.value("channels", 64));
        c.stride = j.value("stride", c.stride);
        c.key_channels = j.value("key_channels", c.channels / 2);
        c.value_channels = j.value("value_channels", c.channels / 2);
        c.attention_kernel = j.value("attention_kernel", c.attention_kernel);
        c.skip_kernel = j.value("skip_kernel", c.skip_kernel);
        auto stages = [](const nlohmann::json& arr) {
            std::vector<ConvStage> out;
            for (const auto& s : arr)
                out.push_back({s.value("kernel", 3), s.at("channels").get<int>(),
                               nn::activation_from_string(s.value("activation", "relu")), s.value("downsample", false)});
            return out;
        };
        if (j.contains("encoder")) c.encoder = stages(j.at("encoder"));
        if (j.contains("decoder")) c.decoder = stages(j.at("decoder"));
        if (j.contains("fusion_mode")) c.fusion = fusion_mode_from_string(j.at("fusion_mode").get<std::string>());
        c.output_activation = j.value("output_activation", c.output_activation);
        c.seed = j.value("seed", c.seed);
        c.validate();
        return c;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("model config: ") + e.what());
    }
}

/// First field (in declaration order) where two configs differ, or "" if equal.
inline std::string first_config_difference(const ModelConfig& a, const ModelConfig& b) {
    const auto ja = to_json(a), jb = to_json(b);
    for (const char* key : {"in_height", "in_width", "stride", "channels", "key_channels", "value_channels",
                            "attention_kernel", "skip_kernel", "encoder", "decoder", "fusion_mode",
                            "output_activation"})
        if (ja.at(key) != jb.at(key)) return key;
    return {};
}

template <typename T>
struct Parameter {
    std::string name;
    std::vector<int> shape;
    std::vector<T> values;
};

template <typename T>
class ParameterSet {
public:
    int add(std::string name, std::vector<int> shape) {
        std::size_t n = 1;
        for (int d : shape) n *= static_cast<std::size_t>(d);
        params_.push_back({std::move(name), std::move(shape), std::vector<T>(n, T(0))});
        return static_cast<int>(params_.size()) - 1;
    }

    std::size_t size() const noexcept { return params_.size(); }
    Parameter<T>& operator[](std::size_t i) { return params_[i]; }
    const Parameter<T>& operator[](std::size_t i) const { return params_[i]; }
    auto begin() { return params_.begin(); }
    auto end() { return params_.end(); }
    auto begin() const { return params_.begin(); }
    auto end() const { return params_.end(); }

    std::size_t scalar_count() const {
        std::size_t n = 0;
        for (const auto& p : params_) n += p.values.size();
        return n;
    }

    const Parameter<T>* find(const std::string& name) const {
        for (const auto& p : params_)
            if (p.name == name) return &p;
        return nullptr;
    }

    friend bool operator==(const ParameterSet& a, const ParameterSet& b) {
        if (a.params_.size() != b.params_.size()) return false;
        for (std::size_t i = 0; i < a.params_.size(); ++i)
            if (a.params_[i].name != b.params_[i].name || a.params_[i].shape != b.params_[i].shape ||
                a.params_[i].values != b.params_[i].values)
                return false;
        return true;
    }

private:
    std::vector<Parameter<T>> params_;
};

/// Same layout as a ParameterSet, one buffer per parameter tensor.
template <typename T>
struct GradientSet {
    std::vector<std::vector<T>> grads;

    GradientSet() = default;
    explicit GradientSet(const ParameterSet<T>& p) {
        for (const auto& t : p) grads.emplace_back(t.values.size(), T(0));
    }
    void zero() {
        for (auto& g : grads) std::fill(g.begin(), g.end(), T(0));
    }
    void add(const GradientSet& o) {
        for (std::size_t i = 0; i < grads.size(); ++i)
            for (std::size_t k = 0; k < grads[i].size(); ++k) grads[i][k] += o.grads[i][k];
    }
};

struct ConvLayer {
    int weight = -1;
    int bias = -1;
    int kernel = 3;
    int in_channels = 0;
    int out_channels = 0;
    nn::Activation activation = nn::Activation::None;
    bool downsample = false;
};

template <typename T>
struct StageCache {
    Tensor3<T> input;
    Tensor3<T> pre;
};

template <typename T>
struct EncodeCache {
    std::vector<StageCache<T>> stages;
};

template <typename T>
struct FuseCache {
    Tensor3<T> input, target;
    Tensor3<T> query, key, value;
    nn::AttentionMatrix<T> attention;
};

template <typename T>
struct DecodeCache {
    std::vector<StageCache<T>> stages;
    Tensor3<T> logits;  // input of the output activation
};

template <typename T>
struct PairCache {
    FuseCache<T> fused_curr;  // ST(w_prev, w_curr)
    FuseCache<T> fused_prev;  // ST(w_curr, w_prev)
    DecodeCache<T> decode;
};

template <typename T>
class FlowRegressor {
public:
    explicit FlowRegressor(ModelConfig config) : config_(std::move(config)) {
        config_.validate();
        build();
        initialize(config_.seed);
    }

    const ModelConfig& config() const noexcept { return config_; }
    ParameterSet<T>& parameters() noexcept { return params_; }
    const ParameterSet<T>& parameters() const noexcept { return params_; }
    std::size_t parameter_count() const { return params_.scalar_count(); }

    /// Parameter-group prefixes ("encoder.0", "fusion.query", ..., "decoder.3").
    std::vector<std::string> parameter_groups() const {
        std::vector<std::string> out;
        for (const auto& p : params_) {
            const std::string g = p.name.substr(0, p.name.rfind('.'));
            if (out.empty() || out.back() != g) out.push_back(g);
        }
        return out;
    }

    /// Fan-in scaled Gaussian weights, zero biases.
    void initialize(std::uint64_t seed) {
        std::mt19937_64 rng(seed);
        for (auto& p : params_) {
            if (p.shape.size() == 1) {
                std::fill(p.values.begin(), p.values.end(), T(0));
                continue;
            }
            const double fan_in = static_cast<double>(p.shape[0]) * p.shape[1] * p.shape[2];
            std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
            for (T& v : p.values) v = static_cast<T>(dist(rng));
        }
    }

    // --- encoder -----------------------------------------------------------

    Tensor3<T> encode(const Tensor3<T>& image, EncodeCache<T>* cache = nullptr) const {
        if (image.height() != config_.in_height || image.width() != config_.in_width || image.channels() != 3)
            throw DomainError("encode: expected " + std::to_string(config_.in_height) + "x" +
                              std::to_string(config_.in_width) + "x3 image, got " + std::to_string(image.height()) +
                              "x" + std::to_string(image.width()) + "x" + std::to_string(image.channels()));
        return run_stages(encoder_, image, cache ? &cache->stages : nullptr);
    }

    /// Returns the image gradient.
    Tensor3<T> encode_backward(const EncodeCache<T>& cache, const Tensor3<T>& dout, GradientSet<T>& grads) const {
        return stages_backward(encoder_, cache.stages, dout, grads);
    }

    // --- spatio-temporal fusion ---------------------------------------------

    /// [g_skip(w_input), softmax(q k^T / sqrt(d_k)) v] with q, v from the target and k from the input.
    Tensor3<T> st_fuse(const Tensor3<T>& w_input, const Tensor3<T>& w_target, FuseCache<T>* cache = nullptr) const {
        check_features(w_input, "st_fuse");
        check_features(w_target, "st_fuse");
        FuseCache<T> local;
        FuseCache<T>& c = cache ? *cache : local;
        c.input = w_input;
        c.target = w_target;
        c.query = conv(query_, w_target);
        c.key = conv(key_, w_input);
        c.value = conv(value_, w_target);
        const Tensor3<T> attended = nn::attention(c.query, c.key, c.value, c.attention);
        return concat_channels(conv(skip_, w_input), attended);
    }

    void st_fuse_backward(const FuseCache<T>& c, const Tensor3<T>& dout, GradientSet<T>& grads, Tensor3<T>& d_input,
                          Tensor3<T>& d_target) const {
        Tensor3<T> dskip, dattended, dq, dk, dv, tmp;
        split_channels(dout, config_.channels - config_.value_channels, dskip, dattended);
        nn::attention_backward(c.query, c.key, c.value, c.attention, dattended, dq, dk, dv);
        conv_backward(skip_, c.input, dskip, grads, &tmp);
        nn::add_inplace(d_input, tmp);
        conv_backward(key_, c.input, dk, grads, &tmp);
        nn::add_inplace(d_input, tmp);
        conv_backward(query_, c.target, dq, grads, &tmp);
        nn::add_inplace(d_target, tmp);
        conv_backward(value_, c.target, dv, grads, &tmp);
        nn::add_inplace(d_target, tmp);
    }

    // --- decoder -------------------------------------------------------------

    /// Decoder, softplus, then zeroing of channels that point outside the grid
    /// and of the exterior channel at interior cells.
    FlowField<T> decode(const Tensor3<T>& merged, DecodeCache<T>* cache = nullptr) const {
        if (merged.height() != config_.feature_height() || merged.width() != config_.feature_width() ||
            merged.channels() != config_.aggregated_channels())
            throw DomainError("decode: aggregated feature map has wrong dimensions");
        Tensor3<T> logits = run_stages(decoder_, merged, cache ? &cache->stages : nullptr);
        const GridShape s = config_.feature_shape();
        FlowField<T> flow(s, Representation::Incoming);
        for (int r = 0; r < s.height; ++r)
            for (int c = 0; c < s.width; ++c)
                for (int ch = 0; ch < kFlowChannels; ++ch)
                    if (channel_allowed(s, r, c, ch)) flow(r, c, ch) = nn::softplus(logits(r, c, ch));
        if (cache) cache->logits = std::move(logits);
        return flow;
    }

    /// Returns the gradient with respect to the aggregated feature map.
    Tensor3<T> decode_backward(const DecodeCache<T>& cache, const FlowField<T>& dflow, GradientSet<T>& grads) const {
        const GridShape s = config_.feature_shape();
        Tensor3<T> dlogits(s.height, s.width, kFlowChannels);
        for (int r = 0; r < s.height; ++r)
            for (int c = 0; c < s.width; ++c)
                for (int ch = 0; ch < kFlowChannels; ++ch)
                    if (channel_allowed(s, r, c, ch))
                        dlogits(r, c, ch) = dflow(r, c, ch) * nn::sigmoid(cache.logits(r, c, ch));
        return stages_backward(decoder_, cache.stages, dlogits, grads);
    }

    // --- full pair -------------------------------------------------------------

    /// Aggregated map [ST(w_curr, w_prev), ST(w_prev, w_curr)] or [w_prev, w_curr].
    Tensor3<T> aggregate(const Tensor3<T>& w_prev, const Tensor3<T>& w_curr, PairCache<T>* cache = nullptr) const {
        if (config_.fusion == FusionMode::PlainConcat) {
            check_features(w_prev, "aggregate");
            check_features(w_curr, "aggregate");
            return concat_channels(w_prev, w_curr);
        }
        const Tensor3<T> o_curr = st_fuse(w_prev, w_curr, cache ? &cache->fused_curr : nullptr);
        const Tensor3<T> o_prev = st_fuse(w_curr, w_prev, cache ? &cache->fused_prev : nullptr);
        return concat_channels(o_prev, o_curr);
    }

    FlowField<T> flow_from_features(const Tensor3<T>& w_prev, const Tensor3<T>& w_curr,
                                    PairCache<T>* cache = nullptr) const {
        return decode(aggregate(w_prev, w_curr, cache), cache ? &cache->decode : nullptr);
    }

    /// Accumulates into d_prev / d_curr (which may start empty).
    void pair_backward(const PairCache<T>& cache, const FlowField<T>& dflow, GradientSet<T>& grads, Tensor3<T>& d_prev,
                       Tensor3<T>& d_curr) const {
        const Tensor3<T> dmerged = decode_backward(cache.decode, dflow, grads);
        Tensor3<T> da, db;
        split_channels(dmerged, config_.channels, da, db);
        if (config_.fusion == FusionMode::PlainConcat) {
            nn::add_inplace(d_prev, da);
            nn::add_inplace(d_curr, db);
            return;
        }
        // da is the gradient of ST(w_curr, w_prev), db of ST(w_prev, w_curr)
        st_fuse_backward(cache.fused_prev, da, grads, d_curr, d_prev);
        st_fuse_backward(cache.fused_curr, db, grads, d_prev, d_curr);
    }

    /// R(I^{t-1}, I^t): INCOMING flow for the interval between the two frames.
    FlowField<T> regress_flow(const Tensor3<T>& frame_prev, const Tensor3<T>& frame_curr) const {
        FlowField<T> flow = flow_from_features(encode(frame_prev), encode(frame_curr));
        for (T v : flow.values())
            if (!std::isfinite(v)) throw NumericalError("regress_flow: non-finite flow value");
        return flow;
    }

    static bool channel_allowed(const GridShape& s, int r, int c, int ch) noexcept {
        if (ch == kExteriorChannel) return s.on_boundary(r, c);
        const Offset o = channel_offset(ch);
        return s.contains(r + o.dy, c + o.dx);
    }

private:
    void build() {
        int in = 3;
        for (std::size_t i = 0; i < config_.encoder.size(); ++i) {
            const auto& s = config_.encoder[i];
            encoder_.push_back(make_layer("encoder." + std::to_string(i), s.kernel, in, s.channels, s.activation,
                                          s.downsample));
            in = s.channels;
        }
        const int C = config_.channels;
        if (config_.fusion == FusionMode::TemporalFusion) {
            query_ = make_layer("fusion.query", config_.attention_kernel, C, config_.key_channels);
            key_ = make_layer("fusion.key", config_.attention_kernel, C, config_.key_channels);
            value_ = make_layer("fusion.value", config_.attention_kernel, C, config_.value_channels);
            skip_ = make_layer("fusion.skip", config_.skip_kernel, C, C - config_.value_channels);
        }
        in = config_.aggregated_channels();
        for (std::size_t i = 0; i < config_.decoder.size(); ++i) {
            const auto& s = config_.decoder[i];
            decoder_.push_back(make_layer("decoder." + std::to_string(i), s.kernel, in, s.channels, s.activation));
            in = s.channels;
        }
    }

    ConvLayer make_layer(const std::string& name, int kernel, int in, int out,
                         nn::Activation act = nn::Activation::None, bool down = false) {
        ConvLayer l;
        l.weight = params_.add(name + ".weight", {kernel, kernel, in, out});
        l.bias = params_.add(name + ".bias", {out});
        l.kernel = kernel;
        l.in_channels = in;
        l.out_channels = out;
        l.activation = act;
        l.downsample = down;
        return l;
    }

    Tensor3<T> conv(const ConvLayer& l, const Tensor3<T>& x) const {
        return nn::conv2d<T>(x, params_[l.weight].values, params_[l.bias].values, l.kernel, l.out_channels);
    }

    void conv_backward(const ConvLayer& l, const Tensor3<T>& x, const Tensor3<T>& dout, GradientSet<T>& g,
                       Tensor3<T>* din) const {
        nn::conv2d_backward<T>(x, params_[l.weight].values, l.kernel, dout, g.grads[l.weight], g.grads[l.bias], din);
    }

    Tensor3<T> run_stages(const std::vector<ConvLayer>& layers, const Tensor3<T>& input,
                          std::vector<StageCache<T>>* cache) const {
        if (cache) cache->clear();
        Tensor3<T> x = input;
        for (const auto& l : layers) {
            Tensor3<T> pre = conv(l, x);
            Tensor3<T> out = nn::activate(l.activation, pre);
            if (l.downsample) out = nn::avg_pool2(out);
            if (cache) cache->push_back({std::move(x), std::move(pre)});
            x = std::move(out);
        }
        return x;
    }

    Tensor3<T> stages_backward(const std::vector<ConvLayer>& layers, const std::vector<StageCache<T>>& cache,
                               Tensor3<T> grad, GradientSet<T>& grads) const {
        for (std::size_t i = layers.size(); i-- > 0;) {
            const auto& l = layers[i];
            if (l.downsample) grad = nn::avg_pool2_backward(grad);
            nn::activate_backward(l.activation, cache[i].pre, grad);
            Tensor3<T> din;
            conv_backward(l, cache[i].input, grad, grads, &din);
            grad = std::move(din);
        }
        return grad;
    }

    void check_features(const Tensor3<T>& w, const char* op) const {
        if (w.height() != config_.feature_height() || w.width() != config_.feature_width() ||
            w.channels() != config_.channels)
            throw DomainError(std::string(op) + ": feature map must be " + std::to_string(config_.feature_height()) +
                              "x" + std::to_string(config_.feature_width()) + "x" + std::to_string(config_.channels));
    }

    ModelConfig config_;
    ParameterSet<T> params_;
    std::vector<ConvLayer> encoder_, decoder_;
    ConvLayer query_, key_, value_, skip_;
};

} // namespace flowcount
