#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "flowcount/model.hpp"

using namespace flowcount;

namespace {

template <typename T>
Tensor3<T> random_tensor(int h, int w, int c, std::mt19937_64& rng, double scale = 1.0) {
    std::normal_distribution<double> n(0.0, scale);
    Tensor3<T> t(h, w, c);
    for (T& v : t.values()) v = static_cast<T>(n(rng));
    return t;
}

ModelConfig small_config(int h, int w) {
    ModelConfig c;
    c.in_height = h;
    c.in_width = w;
    c.stride = 4;
    c.channels = 6;
    c.key_channels = 3;
    c.value_channels = 2;
    c.encoder = {{3, 4, nn::Activation::Relu, true}, {3, 6, nn::Activation::Relu, true}};
    c.decoder = {{3, 8, nn::Activation::Relu, false}, {1, kFlowChannels, nn::Activation::None, false}};
    return c;
}

// One token per column, identity encoder, 1x1 convolutions everywhere.
ModelConfig two_token_config() {
    ModelConfig c;
    c.in_height = 1;
    c.in_width = 2;
    c.stride = 1;
    c.channels = 2;
    c.key_channels = 1;
    c.value_channels = 1;
    c.attention_kernel = 1;
    c.skip_kernel = 1;
    c.encoder = {{1, 2, nn::Activation::None, false}};
    c.decoder = {{1, kFlowChannels, nn::Activation::None, false}};
    return c;
}

void set_param(FlowRegressor<double>& m, const std::string& name, std::vector<double> v) {
    for (auto& p : m.parameters())
        if (p.name == name) {
            ASSERT_EQ(p.values.size(), v.size()) << name;
            p.values = std::move(v);
            return;
        }
    FAIL() << "no parameter " << name;
}

} // namespace

TEST(ModelConfig, StandardShapeContract) {
    const auto c = ModelConfig::standard(360, 640);
    EXPECT_NO_THROW(c.validate());
    EXPECT_EQ(c.feature_width(), 80);
    EXPECT_EQ(c.feature_height(), 45);
    EXPECT_EQ(c.aggregated_channels(), 128);
}

TEST(ModelConfig, ValidationErrors) {
    auto c = ModelConfig::standard(360, 640);
    c.in_width = 641;
    EXPECT_THROW(c.validate(), DomainError);
    c = ModelConfig::standard(360, 640);
    c.value_channels = 64;
    EXPECT_THROW(c.validate(), DomainError);
    c = ModelConfig::standard(360, 640);
    c.stride = 4;
    EXPECT_THROW(c.validate(), DomainError);
    c = ModelConfig::standard(360, 640);
    c.decoder.back().channels = 9;
    EXPECT_THROW(c.validate(), DomainError);
}

TEST(ModelConfig, JsonRoundTrip) {
    auto c = ModelConfig::standard(64, 96, 16);
    c.fusion = FusionMode::PlainConcat;
    c.seed = 42;
    const auto back = model_config_from_json(to_json(c));
    EXPECT_EQ(back, c);
    auto d = c;
    d.channels = 32;
    EXPECT_EQ(first_config_difference(c, d), "channels");
    d = c;
    d.seed = 1;
    EXPECT_EQ(first_config_difference(c, d), "");
}

TEST(FusionMode, Parsing) {
    EXPECT_EQ(fusion_mode_from_string("temporal_fusion"), FusionMode::TemporalFusion);
    EXPECT_EQ(fusion_mode_from_string("PLAIN_CONCAT"), FusionMode::PlainConcat);
    EXPECT_THROW(fusion_mode_from_string("late"), DomainError);
}

TEST(FlowRegressor, ParameterGroupsAndInit) {
    FlowRegressor<float> m(small_config(16, 16));
    const auto groups = m.parameter_groups();
    const std::vector<std::string> want{"encoder.0",    "encoder.1",  "fusion.query", "fusion.key",
                                        "fusion.value", "fusion.skip", "decoder.0",   "decoder.1"};
    EXPECT_EQ(groups, want);
    for (const auto& p : m.parameters())
        if (p.shape.size() == 1)
            for (float v : p.values) EXPECT_EQ(v, 0.0f);
    FlowRegressor<float> same(small_config(16, 16));
    EXPECT_EQ(same.parameters(), m.parameters());
    auto cfg = small_config(16, 16);
    cfg.seed = 9;
    EXPECT_FALSE(FlowRegressor<float>(cfg).parameters() == m.parameters());
}

TEST(FlowRegressor, PlainConcatHasNoFusionParameters) {
    auto cfg = small_config(16, 16);
    cfg.fusion = FusionMode::PlainConcat;
    FlowRegressor<float> m(cfg);
    for (const auto& p : m.parameters()) EXPECT_EQ(p.name.find("fusion"), std::string::npos) << p.name;
    std::mt19937_64 rng(1);
    const auto f = m.regress_flow(random_tensor<float>(16, 16, 3, rng), random_tensor<float>(16, 16, 3, rng));
    EXPECT_EQ(f.shape(), (GridShape{4, 4}));
}

TEST(FlowRegressor, FullSizeShapeContract) {
    FlowRegressor<float> m(ModelConfig::standard(360, 640, 16));
    std::mt19937_64 rng(2);
    const auto a = random_tensor<float>(360, 640, 3, rng);
    const auto b = random_tensor<float>(360, 640, 3, rng);
    const auto f = m.regress_flow(a, b);
    EXPECT_EQ(f.shape().width, 80);
    EXPECT_EQ(f.shape().height, 45);
    EXPECT_EQ(f.values().size(), 80u * 45u * 10u);
    EXPECT_EQ(f.representation(), Representation::Incoming);
}

TEST(FlowRegressor, OutputMaskedAndNonNegative) {
    FlowRegressor<float> m(small_config(20, 24));
    std::mt19937_64 rng(3);
    const auto f = m.regress_flow(random_tensor<float>(20, 24, 3, rng), random_tensor<float>(20, 24, 3, rng));
    EXPECT_EQ(f.invariant_violation(), "");
    const GridShape s = f.shape();
    for (int r = 0; r < s.height; ++r)
        for (int c = 0; c < s.width; ++c)
            for (int ch = 0; ch < kFlowChannels; ++ch) {
                if (FlowRegressor<float>::channel_allowed(s, r, c, ch))
                    EXPECT_GT(f(r, c, ch), 0.0f);
                else
                    EXPECT_EQ(f(r, c, ch), 0.0f);
            }
}

TEST(FlowRegressor, RejectsWrongInputs) {
    FlowRegressor<float> m(small_config(16, 16));
    std::mt19937_64 rng(4);
    EXPECT_THROW(m.regress_flow(random_tensor<float>(16, 12, 3, rng), random_tensor<float>(16, 16, 3, rng)),
                 DomainError);
    EXPECT_THROW(m.st_fuse(random_tensor<float>(4, 4, 5, rng), random_tensor<float>(4, 4, 6, rng)), DomainError);
    EXPECT_THROW(m.decode(random_tensor<float>(4, 4, 6, rng)), DomainError);
}

TEST(FlowRegressor, NonFiniteOutputThrows) {
    FlowRegressor<float> m(small_config(16, 16));
    m.parameters()[0].values[0] = std::numeric_limits<float>::quiet_NaN();
    std::mt19937_64 rng(5);
    EXPECT_THROW(m.regress_flow(random_tensor<float>(16, 16, 3, rng), random_tensor<float>(16, 16, 3, rng)),
                 NumericalError);
}

TEST(Attention, RowStochastic) {
    std::mt19937_64 rng(6);
    std::uniform_int_distribution<int> side(1, 7), ch(1, 6);
    for (int trial = 0; trial < 100; ++trial) {
        const int h = side(rng), w = side(rng), dk = ch(rng), dv = ch(rng);
        const auto q = random_tensor<double>(h, w, dk, rng, 3.0);
        const auto k = random_tensor<double>(h, w, dk, rng, 3.0);
        const auto v = random_tensor<double>(h, w, dv, rng);
        nn::AttentionMatrix<double> a;
        nn::attention(q, k, v, a);
        for (int i = 0; i < a.tokens; ++i) {
            double s = 0;
            for (int j = 0; j < a.tokens; ++j) {
                EXPECT_GE(a.row(i)[j], 0.0);
                s += a.row(i)[j];
            }
            EXPECT_NEAR(s, 1.0, 1e-6);
        }
    }
}

TEST(Attention, LargeLogitsStayFinite) {
    Tensor3<float> q(1, 3, 1), k(1, 3, 1), v(1, 3, 1);
    for (int x = 0; x < 3; ++x) {
        q(0, x, 0) = 300.0f;
        k(0, x, 0) = 100.0f * static_cast<float>(x);
        v(0, x, 0) = static_cast<float>(x);
    }
    nn::AttentionMatrix<float> a;
    const auto o = nn::attention(q, k, v, a);
    EXPECT_TRUE(o.all_finite());
    EXPECT_FLOAT_EQ(o(0, 0, 0), 2.0f);
}

TEST(StFuse, TwoTokenHandCase) {
    FlowRegressor<double> m(two_token_config());
    // weight layout [ky][kx][in][out]; with 1x1 kernels it is [in][out]
    set_param(m, "fusion.query.weight", {1.0, 0.0});
    set_param(m, "fusion.key.weight", {0.0, 1.0});
    set_param(m, "fusion.value.weight", {1.0, 1.0});
    set_param(m, "fusion.value.bias", {0.5});
    set_param(m, "fusion.skip.weight", {1.0, -1.0});

    Tensor3<double> input(1, 2, 2), target(1, 2, 2);
    input(0, 0, 0) = 1.0;
    input(0, 0, 1) = 0.0;
    input(0, 1, 0) = 0.0;
    input(0, 1, 1) = 2.0;
    target(0, 0, 0) = 0.5;
    target(0, 0, 1) = 1.0;
    target(0, 1, 0) = 2.0;
    target(0, 1, 1) = -1.0;

    // q = (0.5, 2), k = (0, 2), v = (2, 1.5), skip = (1, -2)
    // row 0 logits (0, 1), row 1 logits (0, 4)
    const double a01 = std::exp(1.0) / (1.0 + std::exp(1.0));
    const double a11 = std::exp(4.0) / (1.0 + std::exp(4.0));
    const double o0 = (1 - a01) * 2.0 + a01 * 1.5;
    const double o1 = (1 - a11) * 2.0 + a11 * 1.5;
    EXPECT_NEAR(o0, 1.6344707, 1e-6);
    EXPECT_NEAR(o1, 1.5089931, 1e-6);

    FuseCache<double> cache;
    const auto out = m.st_fuse(input, target, &cache);
    ASSERT_EQ(out.channels(), 2);
    EXPECT_NEAR(out(0, 0, 0), 1.0, 1e-12);
    EXPECT_NEAR(out(0, 1, 0), -2.0, 1e-12);
    EXPECT_NEAR(out(0, 0, 1), o0, 1e-6);
    EXPECT_NEAR(out(0, 1, 1), o1, 1e-6);
    EXPECT_NEAR(cache.attention.row(0)[1], a01, 1e-12);
    EXPECT_NEAR(cache.attention.row(1)[0], 1 - a11, 1e-12);
}

TEST(StFuse, AggregateOrder) {
    FlowRegressor<double> m(small_config(16, 16));
    std::mt19937_64 rng(7);
    const auto wp = random_tensor<double>(4, 4, 6, rng);
    const auto wc = random_tensor<double>(4, 4, 6, rng);
    const auto agg = m.aggregate(wp, wc);
    const auto first = m.st_fuse(wc, wp);   // ST(w_curr, w_prev)
    const auto second = m.st_fuse(wp, wc);  // ST(w_prev, w_curr)
    ASSERT_EQ(agg.channels(), 12);
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x)
            for (int c = 0; c < 6; ++c) {
                EXPECT_EQ(agg(y, x, c), first(y, x, c));
                EXPECT_EQ(agg(y, x, 6 + c), second(y, x, c));
            }
}
