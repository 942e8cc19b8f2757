#include <gtest/gtest.h>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cmath>
#include <map>
#include <random>

#include "flowcount/training.hpp"

using namespace flowcount;

namespace {

constexpr double kEps = 1e-5;
constexpr double kTolerance = 1e-3;
constexpr std::size_t kCoordsPerGroup = 20;

ModelConfig tiny_config(FusionMode mode) {
    ModelConfig c;
    c.in_height = 12;
    c.in_width = 12;
    c.stride = 4;
    c.channels = 4;
    c.key_channels = 2;
    c.value_channels = 2;
    c.encoder = {{3, 3, nn::Activation::Relu, true}, {3, 4, nn::Activation::Relu, true}};
    c.decoder = {{3, 6, nn::Activation::Relu, false}, {1, kFlowChannels, nn::Activation::None, false}};
    c.fusion = mode;
    c.seed = 17;
    return c;
}

struct Problem {
    std::array<Tensor3<double>, 3> frames;
    std::array<Grid2<double>, 3> gt;
};

Problem random_problem(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, 1.0);
    std::uniform_real_distribution<double> u(0.0, 2.0);
    Problem p;
    for (int k = 0; k < 3; ++k) {
        p.frames[k] = Tensor3<double>(12, 12, 3);
        for (double& v : p.frames[k].values()) v = n(rng);
        p.gt[k] = Grid2<double>({3, 3});
        for (double& v : p.gt[k].values()) v = u(rng);
    }
    return p;
}

double relative_error(double a, double b) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-7});
}

void check_gradients(FusionMode mode) {
    const auto t0 = std::chrono::steady_clock::now();
    FlowRegressor<double> model(tiny_config(mode));
    const Problem p = random_problem(5);
    LossWeights w;
    w.conservation = 0.7;
    w.symmetry = 1.3;

    GradientSet<double> grads(model.parameters());
    triplet_loss(model, p.frames, p.gt, w, &grads);

    // group prefix -> (param index, coordinate)
    std::map<std::string, std::vector<std::pair<std::size_t, std::size_t>>> groups;
    for (std::size_t i = 0; i < model.parameters().size(); ++i) {
        const auto& prm = model.parameters()[i];
        const std::string g = prm.name.substr(0, prm.name.rfind('.'));
        for (std::size_t k = 0; k < prm.values.size(); ++k) groups[g].emplace_back(i, k);
    }
    EXPECT_EQ(groups.size(), model.parameter_groups().size());

    std::mt19937_64 rng(11);
    for (auto& [name, coords] : groups) {
        std::shuffle(coords.begin(), coords.end(), rng);
        const std::size_t n = std::min(kCoordsPerGroup, coords.size());
        ASSERT_GE(n, kCoordsPerGroup) << name << " has fewer than 20 scalars";
        double worst = 0, largest = 0;
        for (std::size_t s = 0; s < n; ++s) {
            const auto [pi, k] = coords[s];
            double& x = model.parameters()[pi].values[k];
            const double x0 = x;
            x = x0 + kEps;
            const double lp = triplet_loss(model, p.frames, p.gt, w).total;
            x = x0 - kEps;
            const double lm = triplet_loss(model, p.frames, p.gt, w).total;
            x = x0;
            const double numeric = (lp - lm) / (2 * kEps);
            const double analytic = grads.grads[pi][k];
            const double err = relative_error(analytic, numeric);
            worst = std::max(worst, err);
            largest = std::max(largest, std::abs(analytic));
            EXPECT_LE(err, kTolerance) << model.parameters()[pi].name << "[" << k << "] analytic " << analytic
                                       << " numeric " << numeric;
        }
        EXPECT_GT(largest, 1e-6) << name << ": sampled gradients are all zero";
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.3e", worst);
        ::testing::Test::RecordProperty(name, buf);
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    EXPECT_LT(secs, 60.0);
}

} // namespace

TEST(GradCheck, TemporalFusion) { check_gradients(FusionMode::TemporalFusion); }

TEST(GradCheck, PlainConcat) { check_gradients(FusionMode::PlainConcat); }

TEST(GradCheck, GradientsAccumulate) {
    FlowRegressor<double> model(tiny_config(FusionMode::TemporalFusion));
    const Problem p = random_problem(8);
    GradientSet<double> once(model.parameters()), twice(model.parameters());
    triplet_loss(model, p.frames, p.gt, {}, &once);
    triplet_loss(model, p.frames, p.gt, {}, &twice);
    triplet_loss(model, p.frames, p.gt, {}, &twice);
    for (std::size_t i = 0; i < once.grads.size(); ++i)
        for (std::size_t k = 0; k < once.grads[i].size(); ++k)
            EXPECT_NEAR(twice.grads[i][k], 2 * once.grads[i][k], 1e-12 + 1e-9 * std::abs(once.grads[i][k]));
}
