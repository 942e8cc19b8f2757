#include <gtest/gtest.h>

#include <filesystem>
#include <random>

#include "flowcount/field_io.hpp"
#include "flowcount/flowgrid.hpp"

using namespace flowcount;

TEST(Channels, OffsetsAreRowMajor) {
    EXPECT_EQ(channel_offset(0).dy, -1);
    EXPECT_EQ(channel_offset(0).dx, -1);
    EXPECT_EQ(channel_offset(kSelfChannel).dy, 0);
    EXPECT_EQ(channel_offset(kSelfChannel).dx, 0);
    EXPECT_EQ(channel_offset(5).dy, 0);
    EXPECT_EQ(channel_offset(5).dx, 1);
    for (int c = 0; c < kNeighborChannels; ++c) {
        const Offset o = channel_offset(c);
        EXPECT_EQ(channel_for_offset(o.dy, o.dx), c);
        const Offset p = channel_offset(opposite_channel(c));
        EXPECT_EQ(p.dy, -o.dy);
        EXPECT_EQ(p.dx, -o.dx);
    }
}

TEST(Neighborhood, CornerEdgeInterior) {
    const GridShape s{4, 5};
    auto corner = neighborhood(0, 0, s);
    EXPECT_TRUE(corner.boundary);
    ASSERT_EQ(corner.neighbors.size(), 4u);
    EXPECT_EQ(corner.neighbors[0], (Neighbor{4, 0, 0}));
    EXPECT_EQ(corner.neighbors[3], (Neighbor{8, 1, 1}));

    auto edge = neighborhood(0, 2, s);
    EXPECT_TRUE(edge.boundary);
    EXPECT_EQ(edge.neighbors.size(), 6u);

    auto inner = neighborhood(2, 2, s);
    EXPECT_FALSE(inner.boundary);
    EXPECT_EQ(inner.neighbors.size(), 9u);

    auto far = neighborhood(3, 4, s);
    EXPECT_EQ(far.neighbors.size(), 4u);
    EXPECT_EQ(far.neighbors.front(), (Neighbor{0, 2, 3}));
}

TEST(Neighborhood, SingleCellGrid) {
    auto n = neighborhood(0, 0, {1, 1});
    EXPECT_TRUE(n.boundary);
    ASSERT_EQ(n.neighbors.size(), 1u);
    EXPECT_EQ(n.neighbors[0].channel, kSelfChannel);
}

TEST(Neighborhood, RejectsOutsideCell) {
    EXPECT_THROW(neighborhood(4, 0, {4, 5}), DomainError);
    EXPECT_THROW(neighborhood(-1, 0, {4, 5}), DomainError);
    EXPECT_THROW(neighborhood(0, 0, {0, 5}), DomainError);
}

TEST(FlowField, RejectsWrongValueCount) {
    EXPECT_THROW(FlowField<double>({2, 2}, Representation::Incoming, std::vector<double>(39)), DomainError);
    EXPECT_NO_THROW(FlowField<double>({2, 2}, Representation::Incoming, std::vector<double>(40)));
}

TEST(FlowField, InvariantViolations) {
    FlowField<double> f({3, 3});
    EXPECT_EQ(f.invariant_violation(), "");
    f(1, 1, kExteriorChannel) = 1;
    EXPECT_NE(f.invariant_violation().find("interior"), std::string::npos);
    f(1, 1, kExteriorChannel) = 0;
    f(0, 1, 1) = 1;  // from (-1,1): off grid
    EXPECT_NE(f.invariant_violation().find("edge"), std::string::npos);
    f(0, 1, 1) = 0;
    f(2, 2, 0) = -0.5;
    EXPECT_NE(f.invariant_violation().find("negative"), std::string::npos);
    f(2, 2, 0) = 0.5;
    f(0, 2, kExteriorChannel) = 2;
    EXPECT_EQ(f.invariant_violation(), "");
}

TEST(Transpose, SingleEntry) {
    FlowField<double> f({3, 4});
    f(1, 2, 3) = 2.5;  // arrived at (1,2) from (1,1)
    const auto t = flow_transpose(f);
    EXPECT_EQ(t.representation(), Representation::Outgoing);
    EXPECT_EQ(t(1, 1, 5), 2.5);
    EXPECT_EQ(t.sum(), 2.5);
}

TEST(Transpose, Involution) {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0, 1);
    const GridShape s{5, 6};
    FlowField<double> f(s);
    for (int r = 0; r < s.height; ++r)
        for (int c = 0; c < s.width; ++c)
            for (int ch = 0; ch < kNeighborChannels; ++ch) {
                const Offset o = channel_offset(ch);
                if (s.contains(r + o.dy, c + o.dx)) f(r, c, ch) = u(rng);
            }
    f(0, 0, kExteriorChannel) = 4;
    const auto back = flow_transpose(flow_transpose(f));
    EXPECT_EQ(back, f);
}

TEST(Density, ReconstructAndEmitted) {
    FlowField<double> f({2, 2});
    f(0, 0, kSelfChannel) = 1;
    f(0, 1, 3) = 2;                 // (0,0) -> (0,1)
    f(1, 1, kExteriorChannel) = 3;  // entry
    const auto d = reconstruct_density(f);
    EXPECT_EQ(d(0, 0), 1);
    EXPECT_EQ(d(0, 1), 2);
    EXPECT_EQ(d(1, 1), 3);
    EXPECT_EQ(count(d), 6);
    const auto e = emitted_density(f);
    EXPECT_EQ(e(0, 0), 3);
    EXPECT_EQ(e(1, 1), 0);
    EXPECT_EQ(count(e), 3);
}

TEST(Density, RequiresIncoming) {
    FlowField<double> f({2, 2}, Representation::Outgoing);
    EXPECT_THROW(reconstruct_density(f), RepresentationError);
    EXPECT_THROW(emitted_density(f), RepresentationError);
    FlowField<double> g({2, 2});
    EXPECT_THROW(conservation_residual(f, g), RepresentationError);
    EXPECT_THROW(symmetry_residual(g, f), RepresentationError);
}

TEST(Conservation, ShapeMismatch) {
    FlowField<double> a({2, 2}), b({2, 3});
    EXPECT_THROW(conservation_residual(a, b), DomainError);
    EXPECT_THROW(symmetry_residual(a, b), DomainError);
}

TEST(Conservation, HandCase) {
    // One particle at (1,1) arrives from (1,0), then leaves towards (1,2).
    const GridShape s{3, 3};
    FlowField<double> prev(s), next(s);
    prev(1, 1, 3) = 1;
    next(1, 2, 3) = 1;
    const auto r = conservation_residual(prev, next);
    for (double v : r.values()) EXPECT_EQ(v, 0.0);
    next(1, 2, 3) = 0;  // now it vanishes
    const auto r2 = conservation_residual(prev, next);
    EXPECT_EQ(r2(1, 1), 1.0);
}

TEST(Conservation, ExteriorOutflowClosesBoundary) {
    const GridShape s{2, 2};
    FlowField<double> prev(s), next(s);
    prev(0, 0, kExteriorChannel) = 1;  // entered at (0,0)
    Grid2<double> ext(s);
    ext(0, 0) = 1;  // and leaves right away
    const auto r = conservation_residual(prev, next, ext);
    for (double v : r.values()) EXPECT_EQ(v, 0.0);
    const auto open = conservation_residual(prev, next);
    EXPECT_EQ(open(0, 0), 0.0);  // boundary not checked without exits
}

TEST(Symmetry, PairedFlows) {
    const GridShape s{3, 3};
    FlowField<double> fwd(s), bwd(s);
    fwd(1, 2, 3) = 1;  // forward: (1,1) -> (1,2)
    bwd(1, 1, 5) = 1;  // backward: (1,2) -> (1,1)
    fwd(0, 0, kExteriorChannel) = 1;
    const auto r = symmetry_residual(fwd, bwd);
    for (double v : r.values()) EXPECT_EQ(v, 0.0);
    bwd(1, 1, 5) = 0.25;
    EXPECT_DOUBLE_EQ(symmetry_residual(fwd, bwd)(1, 2, 3), 0.75);
}

TEST(FieldIo, RoundTrip) {
    const auto dir = std::filesystem::temp_directory_path() / "flowcount_fieldio";
    std::filesystem::create_directories(dir);
    FlowField<float> f({3, 2});
    for (std::size_t i = 0; i < f.values().size(); ++i) f.values()[i] = 0.5f * static_cast<float>(i);
    write_flow(dir / "f.bin", f);
    EXPECT_TRUE(std::filesystem::exists(dir / "f.json"));
    const auto g = read_flow(dir / "f.bin");
    EXPECT_EQ(g, f);
    DensityMap<float> d({2, 3}, 1.5f);
    write_density(dir / "d.bin", d);
    EXPECT_EQ(read_density(dir / "d.bin"), d);
    EXPECT_THROW(read_density(dir / "f.bin"), ParseError);
    std::filesystem::remove_all(dir);
}
