#include <gtest/gtest.h>

#include <filesystem>

#include "flowcount/oracle.hpp"

using namespace flowcount;
using namespace flowcount::oracle;

namespace {

WorldConfig busy_config(std::uint64_t seed) {
    WorldConfig c;
    c.shape = {5, 6};
    c.n_particles = 12;
    c.n_steps = 8;
    c.exit_probability = 0.3;
    c.entry_rate = 1.5;
    c.seed = seed;
    return c;
}

// Two particles on a 3x3 grid written out by hand.
ParticleWorld hand_world() {
    ParticleWorld w;
    w.shape = {3, 3};
    w.n_steps = 2;
    w.trajectories = {
        {Cell{1, 1}, Cell{1, 2}, std::nullopt},  // moves right, then exits
        {std::nullopt, Cell{0, 0}, Cell{1, 1}},  // enters at a corner, moves in
    };
    return w;
}

} // namespace

TEST(Simulate, DeterministicPerSeed) {
    EXPECT_EQ(simulate(busy_config(7)), simulate(busy_config(7)));
    EXPECT_NE(simulate(busy_config(7)), simulate(busy_config(8)));
}

TEST(Simulate, RespectsWorldInvariants) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto w = simulate(busy_config(seed));
        EXPECT_EQ(w.invariant_violation(), "") << seed;
        EXPECT_GE(w.trajectories.size(), 12u);
    }
}

TEST(Simulate, StayDistributionFreezesParticles) {
    WorldConfig c;
    c.shape = {4, 4};
    c.move_distribution = {0, 0, 0, 0, 1, 0, 0, 0, 0};
    const auto w = simulate(c);
    for (const auto& tr : w.trajectories)
        for (const auto& st : tr) EXPECT_EQ(st, tr.front());
}

TEST(Simulate, RejectsBadConfig) {
    WorldConfig c;
    c.move_distribution = {0.5, 0, 0, 0, 0, 0, 0, 0, 0};
    EXPECT_THROW(simulate(c), DomainError);
    c = {};
    c.exit_probability = 1.5;
    EXPECT_THROW(simulate(c), DomainError);
    c = {};
    c.shape = {0, 3};
    EXPECT_THROW(simulate(c), DomainError);
}

TEST(TrueFlow, HandWorld) {
    const auto w = hand_world();
    ASSERT_EQ(w.invariant_violation(), "");
    const auto f1 = true_flow(w, 1);
    EXPECT_EQ(f1(1, 2, 3), 1.0);                 // from (1,1)
    EXPECT_EQ(f1(0, 0, kExteriorChannel), 1.0);  // entry
    EXPECT_EQ(f1.sum(), 2.0);
    const auto f2 = true_flow(w, 2);
    EXPECT_EQ(f2(1, 1, 0), 1.0);  // from (0,0)
    EXPECT_EQ(f2.sum(), 1.0);
    const auto ext = exterior_outflow(w, 2);
    EXPECT_EQ(ext(1, 2), 1.0);
    EXPECT_EQ(ext.sum(), 1.0);
    EXPECT_EQ(in_grid_count(w, 0), 1);
    EXPECT_EQ(in_grid_count(w, 1), 2);
    EXPECT_THROW(true_flow(w, 0), DomainError);
    EXPECT_THROW(true_flow(w, 3), DomainError);
}

TEST(TrueFlow, HandWorldConservationAndSymmetry) {
    const auto w = hand_world();
    const auto res = conservation_residual(true_flow(w, 1), true_flow(w, 2), exterior_outflow(w, 2));
    for (double v : res.values()) EXPECT_EQ(v, 0.0);
    const auto rev = reversed(w);
    // forward interval 1 pairs with the reversed world's interval T-1+1 = 2
    const auto sym = symmetry_residual(true_flow(w, 1), true_flow(rev, 2));
    for (double v : sym.values()) EXPECT_EQ(v, 0.0);
}

TEST(Reversed, ExitsBecomeEntries) {
    const auto w = simulate(busy_config(11));
    const auto rev = reversed(w);
    EXPECT_EQ(reversed(rev), w);
    for (int t = 1; t <= w.n_steps; ++t) {
        const auto fwd = true_flow(rev, w.n_steps - t + 1);
        const auto ext = exterior_outflow(w, t);
        for (int r = 0; r < w.shape.height; ++r)
            for (int c = 0; c < w.shape.width; ++c) EXPECT_EQ(fwd(r, c, kExteriorChannel), ext(r, c));
    }
}

TEST(WorldJson, RoundTrip) {
    const auto w = simulate(busy_config(5));
    EXPECT_EQ(world_from_json(to_json(w)), w);
    const auto path = std::filesystem::temp_directory_path() / "flowcount_world.json";
    save_world(path, w);
    EXPECT_EQ(load_world(path), w);
    std::filesystem::remove(path);
}

TEST(WorldJson, RejectsIllegalTrajectory) {
    auto j = to_json(hand_world());
    j["trajectories"][0][1] = {2, 2};  // (1,1) -> (2,2) is a legal diagonal step
    EXPECT_NO_THROW(world_from_json(j));
    j["trajectories"][0][0] = {0, 0};  // (0,0) -> (2,2) jumps two cells
    EXPECT_THROW(world_from_json(j), ParseError);
    auto k = to_json(hand_world());
    k["trajectories"][1][0] = "gone";
    EXPECT_THROW(world_from_json(k), ParseError);
}

TEST(WorldConfigJson, OverridesOnlyGivenKeys) {
    WorldConfig base = busy_config(1);
    const auto c = world_config_from_json({{"n_particles", 3}}, base);
    EXPECT_EQ(c.n_particles, 3);
    EXPECT_EQ(c.n_steps, base.n_steps);
    EXPECT_EQ(world_config_from_json(to_json(base)).entry_rate, base.entry_rate);
}

TEST(InvariantSuite, AllPropertiesHold) {
    SuiteOptions opt;
    opt.n_worlds = 30;
    const auto rep = run_invariant_suite(opt);
    for (const auto& p : rep.properties) EXPECT_EQ(p.violations, 0) << p.name << ": " << p.first_violation;
    EXPECT_TRUE(rep.ok());
    EXPECT_EQ(rep.worlds, 30);
    EXPECT_GT(rep.property("conservation").checks, 0);
}
