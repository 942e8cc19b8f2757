#pragma once

// Discrete particle worlds and the exact flows/densities they induce.
//
// Particles are distinguishable; a flow entry counts movement events, so two
// particles swapping cells contribute two flows. Leaving the frame is a
// transition to a single EXITED reservoir state.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "errors.hpp"
#include "flowgrid.hpp"
#include "json.hpp"

namespace flowcount::oracle {

inline constexpr const char* kRngName = "mt19937_64";

struct Cell {
    int row;
    int col;
    friend bool operator==(const Cell&, const Cell&) = default;
};

/// nullopt means EXITED.
using ParticleState = std::optional<Cell>;
using Trajectory = std::vector<ParticleState>;

struct WorldConfig {
    GridShape shape{8, 8};
    int n_particles = 10;
    int n_steps = 10;
    /// Probability of each neighbor offset, channel order (row-major (dy,dx)).
    std::array<double, kNeighborChannels> move_distribution{1.0 / 9, 1.0 / 9, 1.0 / 9, 1.0 / 9, 1.0 / 9,
                                                            1.0 / 9, 1.0 / 9, 1.0 / 9, 1.0 / 9};
    double exit_probability = 0.0;  // per step, for a particle on a boundary cell
    double entry_rate = 0.0;        // expected entries per step
    std::uint64_t seed = 0;

    void validate() const {
        shape.validate();
        if (n_particles < 0) throw DomainError("WorldConfig: n_particles must be >= 0");
        if (n_steps < 0) throw DomainError("WorldConfig: n_steps must be >= 0");
        double total = 0.0;
        for (double p : move_distribution) {
            if (!(p >= 0.0)) throw DomainError("WorldConfig: move probabilities must be >= 0");
            total += p;
        }
        if (std::abs(total - 1.0) > 1e-9) throw DomainError("WorldConfig: move probabilities must sum to 1");
        if (!(exit_probability >= 0.0 && exit_probability <= 1.0))
            throw DomainError("WorldConfig: exit_probability must be in [0,1]");
        if (!(entry_rate >= 0.0) || !std::isfinite(entry_rate))
            throw DomainError("WorldConfig: entry_rate must be finite and >= 0");
    }
};

struct ParticleWorld {
    GridShape shape{1, 1};
    std::uint64_t seed = 0;
    /// trajectories[p][t] for t in [0, n_steps]
    std::vector<Trajectory> trajectories;
    int n_steps = 0;

    friend bool operator==(const ParticleWorld&, const ParticleWorld&) = default;

    /// Empty string when the world is legal, else the first violation.
    std::string invariant_violation() const {
        for (std::size_t p = 0; p < trajectories.size(); ++p) {
            const auto& tr = trajectories[p];
            if (static_cast<int>(tr.size()) != n_steps + 1)
                return "particle " + std::to_string(p) + " has wrong trajectory length";
            for (int t = 0; t <= n_steps; ++t) {
                if (tr[t] && !shape.contains(tr[t]->row, tr[t]->col))
                    return "particle " + std::to_string(p) + " outside grid at t=" + std::to_string(t);
                if (t == 0) continue;
                const auto& a = tr[t - 1];
                const auto& b = tr[t];
                if (a && b) {
                    if (std::abs(a->row - b->row) > 1 || std::abs(a->col - b->col) > 1)
                        return "particle " + std::to_string(p) + " jumps more than one cell at t=" + std::to_string(t);
                } else if (a && !b) {
                    if (!shape.on_boundary(a->row, a->col))
                        return "particle " + std::to_string(p) + " exits from interior at t=" + std::to_string(t);
                } else if (!a && b) {
                    if (!shape.on_boundary(b->row, b->col))
                        return "particle " + std::to_string(p) + " enters at interior at t=" + std::to_string(t);
                }
            }
        }
        return {};
    }
};

inline std::vector<Cell> boundary_cells(GridShape s) {
    std::vector<Cell> out;
    for (int r = 0; r < s.height; ++r)
        for (int c = 0; c < s.width; ++c)
            if (s.on_boundary(r, c)) out.push_back({r, c});
    return out;
}

inline ParticleWorld simulate(const WorldConfig& config) {
    config.validate();
    const GridShape s = config.shape;
    std::mt19937_64 rng(config.seed);
    std::uniform_int_distribution<int> pick_row(0, s.height - 1), pick_col(0, s.width - 1);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::discrete_distribution<int> pick_move(config.move_distribution.begin(), config.move_distribution.end());
    const std::vector<Cell> border = boundary_cells(s);
    std::uniform_int_distribution<std::size_t> pick_border(0, border.size() - 1);

    ParticleWorld world;
    world.shape = s;
    world.seed = config.seed;
    world.n_steps = config.n_steps;
    world.trajectories.reserve(config.n_particles);
    for (int p = 0; p < config.n_particles; ++p) {
        Trajectory tr;
        tr.reserve(config.n_steps + 1);
        const int row = pick_row(rng);
        tr.push_back(Cell{row, pick_col(rng)});
        world.trajectories.push_back(std::move(tr));
    }

    for (int t = 1; t <= config.n_steps; ++t) {
        for (auto& tr : world.trajectories) {
            const ParticleState prev = tr.back();
            if (!prev) {
                tr.push_back(std::nullopt);
                continue;
            }
            if (config.exit_probability > 0.0 && s.on_boundary(prev->row, prev->col) &&
                unit(rng) < config.exit_probability) {
                tr.push_back(std::nullopt);
                continue;
            }
            const Offset o = channel_offset(pick_move(rng));
            Cell next{prev->row + o.dy, prev->col + o.dx};
            if (!s.contains(next.row, next.col)) next = *prev;
            tr.push_back(next);
        }
        if (config.entry_rate > 0.0) {
            std::poisson_distribution<int> entries(config.entry_rate);
            const int k = entries(rng);
            for (int e = 0; e < k; ++e) {
                Trajectory tr(static_cast<std::size_t>(t), std::nullopt);
                tr.reserve(config.n_steps + 1);
                tr.push_back(border[pick_border(rng)]);
                world.trajectories.push_back(std::move(tr));
            }
        }
    }
    return world;
}

namespace detail {
inline void require_interval(const ParticleWorld& w, int t, const char* op) {
    if (t < 1 || t > w.n_steps)
        throw DomainError(std::string(op) + ": t=" + std::to_string(t) + " outside [1, " +
                          std::to_string(w.n_steps) + "]");
}
} // namespace detail

/// Exact INCOMING flow for the interval (t-1, t).
inline FlowField<double> true_flow(const ParticleWorld& world, int t) {
    detail::require_interval(world, t, "true_flow");
    FlowField<double> flow(world.shape, Representation::Incoming);
    for (const auto& tr : world.trajectories) {
        const auto& a = tr[t - 1];
        const auto& b = tr[t];
        if (!b) continue;
        if (a)
            flow(b->row, b->col, channel_for_offset(a->row - b->row, a->col - b->col)) += 1.0;
        else
            flow(b->row, b->col, kExteriorChannel) += 1.0;
    }
    return flow;
}

inline DensityMap<double> true_density(const ParticleWorld& world, int t) {
    if (t < 0 || t > world.n_steps)
        throw DomainError("true_density: t=" + std::to_string(t) + " outside [0, " + std::to_string(world.n_steps) + "]");
    DensityMap<double> d(world.shape);
    for (const auto& tr : world.trajectories)
        if (tr[t]) d(tr[t]->row, tr[t]->col) += 1.0;
    return d;
}

/// Per-cell count of particles at the cell at t-1 that are EXITED at t.
inline DensityMap<double> exterior_outflow(const ParticleWorld& world, int t) {
    detail::require_interval(world, t, "exterior_outflow");
    DensityMap<double> d(world.shape);
    for (const auto& tr : world.trajectories)
        if (tr[t - 1] && !tr[t]) d(tr[t - 1]->row, tr[t - 1]->col) += 1.0;
    return d;
}

inline int in_grid_count(const ParticleWorld& world, int t) {
    int n = 0;
    for (const auto& tr : world.trajectories) n += tr[t].has_value();
    return n;
}

/// Same particles played backwards in time; interval (t-1,t) of the result is
/// interval (T-t+1, T-t) of the original.
inline ParticleWorld reversed(const ParticleWorld& world) {
    ParticleWorld out = world;
    for (auto& tr : out.trajectories) std::reverse(tr.begin(), tr.end());
    return out;
}

// --- JSON ------------------------------------------------------------------

inline nlohmann::json to_json(const ParticleWorld& w) {
    nlohmann::json trajs = nlohmann::json::array();
    for (const auto& tr : w.trajectories) {
        nlohmann::json j = nlohmann::json::array();
        for (const auto& st : tr) {
            if (st)
                j.push_back({st->row, st->col});
            else
                j.push_back("X");
        }
        trajs.push_back(std::move(j));
    }
    return {{"shape", {{"height", w.shape.height}, {"width", w.shape.width}}},
            {"seed", w.seed},
            {"rng", kRngName},
            {"n_steps", w.n_steps},
            {"trajectories", std::move(trajs)}};
}

inline ParticleWorld world_from_json(const nlohmann::json& j) {
    ParticleWorld w;
    try {
        w.shape = {j.at("shape").at("height").get<int>(), j.at("shape").at("width").get<int>()};
        w.shape.validate();
        w.seed = j.at("seed").get<std::uint64_t>();
        const auto& trajs = j.at("trajectories");
        w.n_steps = j.contains("n_steps") ? j.at("n_steps").get<int>()
                                          : (trajs.empty() ? 0 : static_cast<int>(trajs.at(0).size()) - 1);
        for (const auto& jt : trajs) {
            Trajectory tr;
            for (const auto& st : jt) {
                if (st.is_string()) {
                    if (st.get<std::string>() != "X") throw ParseError("unknown particle state " + st.dump());
                    tr.push_back(std::nullopt);
                } else {
                    tr.push_back(Cell{st.at(0).get<int>(), st.at(1).get<int>()});
                }
            }
            w.trajectories.push_back(std::move(tr));
        }
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("world JSON: ") + e.what());
    }
    if (auto why = w.invariant_violation(); !why.empty()) throw ParseError("world JSON: " + why);
    return w;
}

inline void save_world(const std::filesystem::path& path, const ParticleWorld& w) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    os << to_json(w).dump() << '\n';
}

inline ParticleWorld load_world(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw ParseError("cannot open " + path.string());
    try {
        return world_from_json(nlohmann::json::parse(is));
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
}

inline nlohmann::json to_json(const WorldConfig& c) {
    return {{"height", c.shape.height},
            {"width", c.shape.width},
            {"n_particles", c.n_particles},
            {"n_steps", c.n_steps},
            {"move_distribution", c.move_distribution},
            {"exit_probability", c.exit_probability},
            {"entry_rate", c.entry_rate},
            {"seed", c.seed}};
}

/// Missing keys keep the values already in `base`.
inline WorldConfig world_config_from_json(const nlohmann::json& j, WorldConfig base = {}) {
    try {
        base.shape.height = j.value("height", base.shape.height);
        base.shape.width = j.value("width", base.shape.width);
        base.n_particles = j.value("n_particles", base.n_particles);
        base.n_steps = j.value("n_steps", base.n_steps);
        if (j.contains("move_distribution"))
            base.move_distribution = j.at("move_distribution").get<std::array<double, kNeighborChannels>>();
        base.exit_probability = j.value("exit_probability", base.exit_probability);
        base.entry_rate = j.value("entry_rate", base.entry_rate);
        base.seed = j.value("seed", base.seed);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("world config: ") + e.what());
    }
    base.validate();
    return base;
}

// --- invariant suite ---------------------------------------------------------

struct SuiteOptions {
    int n_worlds = 100;
    int max_side = 8;
    int max_particles = 20;
    int max_steps = 10;
    std::uint64_t seed = 2024;
};

struct PropertyResult {
    std::string name;
    long checks = 0;
    long violations = 0;
    std::string first_violation;
};

struct SuiteReport {
    int worlds = 0;
    std::vector<PropertyResult> properties;

    bool ok() const {
        for (const auto& p : properties)
            if (p.violations || p.checks == 0) return false;
        return true;
    }
    const PropertyResult& property(const std::string& name) const {
        for (const auto& p : properties)
            if (p.name == name) return p;
        throw DomainError("no property " + name);
    }
};

/// A random world with entries and exits, used by the invariant suite.
inline WorldConfig random_world_config(std::mt19937_64& rng, const SuiteOptions& opt) {
    std::uniform_int_distribution<int> side(1, opt.max_side), particles(0, opt.max_particles),
        steps(2, std::max(2, opt.max_steps));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    WorldConfig c;
    c.shape = {side(rng), side(rng)};
    c.n_particles = particles(rng);
    c.n_steps = steps(rng);
    double total = 0.0;
    for (auto& p : c.move_distribution) total += (p = unit(rng) + 0.05);
    for (auto& p : c.move_distribution) p /= total;
    // renormalization can leave the sum 1 ulp off; fold it into the self move
    double s = 0.0;
    for (int i = 0; i < kNeighborChannels; ++i)
        if (i != kSelfChannel) s += c.move_distribution[i];
    c.move_distribution[kSelfChannel] = 1.0 - s;
    c.exit_probability = 0.3 * unit(rng);
    c.entry_rate = 1.5 * unit(rng);
    c.seed = rng();
    return c;
}

namespace detail {

template <typename A, typename B>
bool exactly_equal(const A& a, const B& b) {
    auto va = a.values();
    auto vb = b.values();
    return va.size() == vb.size() && std::equal(va.begin(), va.end(), vb.begin());
}

template <typename G>
bool all_zero(const G& g) {
    for (double v : g.values())
        if (v != 0.0) return false;
    return true;
}

inline void record(PropertyResult& p, bool ok, const std::string& where) {
    ++p.checks;
    if (!ok && p.violations++ == 0) p.first_violation = where;
}

} // namespace detail

/// Brute-force verification of the flow algebra on random worlds:
/// density reconstruction, emission balance, conservation, time-reversal
/// symmetry, transpose involution, field invariants and determinism.
inline SuiteReport run_invariant_suite(const SuiteOptions& opt = {}) {
    std::mt19937_64 rng(opt.seed);
    auto prop = [](const char* name) {
        PropertyResult p;
        p.name = name;
        return p;
    };
    PropertyResult reconstruct = prop("reconstruct_density"), emitted = prop("emitted_plus_exits"),
                   conservation = prop("conservation"), symmetry = prop("symmetry"),
                   exterior = prop("reversed_exterior"), transpose = prop("transpose_involution"),
                   field = prop("field_invariants"), world_ok = prop("world_invariants"),
                   determinism = prop("determinism");

    SuiteReport report;
    for (int n = 0; n < opt.n_worlds; ++n) {
        const WorldConfig cfg = random_world_config(rng, opt);
        const ParticleWorld w = simulate(cfg);
        const std::string tag = "world " + std::to_string(n) + " (" + to_string(cfg.shape) + ", seed " +
                                std::to_string(cfg.seed) + ")";
        detail::record(determinism, simulate(cfg) == w, tag);
        detail::record(world_ok, w.invariant_violation().empty(), tag + ": " + w.invariant_violation());

        const ParticleWorld rev = reversed(w);
        const int T = w.n_steps;
        for (int t = 1; t <= T; ++t) {
            const std::string at = tag + " t=" + std::to_string(t);
            const auto flow = true_flow(w, t);
            detail::record(field, flow.invariant_violation().empty(), at + ": " + flow.invariant_violation());
            detail::record(reconstruct, detail::exactly_equal(reconstruct_density(flow), true_density(w, t)), at);

            auto left = emitted_density(flow);
            const auto exits = exterior_outflow(w, t);
            for (std::size_t i = 0; i < left.values().size(); ++i) left.values()[i] += exits.values()[i];
            detail::record(emitted, detail::exactly_equal(left, true_density(w, t - 1)), at);

            const auto tt = flow_transpose(flow_transpose(flow));
            bool inv = true;
            for (int r = 0; r < w.shape.height; ++r)
                for (int c = 0; c < w.shape.width; ++c)
                    for (int ch = 0; ch < kNeighborChannels; ++ch) inv = inv && tt(r, c, ch) == flow(r, c, ch);
            detail::record(transpose, inv, at);

            const auto backward = true_flow(rev, T - t + 1);
            detail::record(symmetry, detail::all_zero(symmetry_residual(flow, backward)), at);
            bool ext = true;
            for (int r = 0; r < w.shape.height; ++r)
                for (int c = 0; c < w.shape.width; ++c)
                    ext = ext && backward(r, c, kExteriorChannel) == exits(r, c);
            detail::record(exterior, ext, at);

            if (t < T) {
                const auto res = conservation_residual(flow, true_flow(w, t + 1), exterior_outflow(w, t + 1));
                detail::record(conservation, detail::all_zero(res), at);
            }
        }
        ++report.worlds;
    }
    report.properties = {reconstruct, emitted, conservation, symmetry, exterior, transpose, field, world_ok, determinism};
    return report;
}

} // namespace flowcount::oracle
