// Library tour: a particle world, its exact flows, and an untrained regressor on a frame pair.

#include <iostream>

#include "flowcount/flowcount.hpp"

using namespace flowcount;

int main() {
    oracle::WorldConfig wc;
    wc.shape = {6, 8};
    wc.n_particles = 12;
    wc.n_steps = 5;
    wc.exit_probability = 0.1;
    wc.entry_rate = 0.5;
    wc.seed = 3;
    const auto world = oracle::simulate(wc);

    // flows between frames t-1 and t sum back to the density at t
    for (int t = 1; t <= world.n_steps; ++t) {
        const auto flow = oracle::true_flow(world, t);
        std::cout << "t=" << t << " people " << oracle::in_grid_count(world, t) << " flow mass "
                  << count(reconstruct_density(flow)) << '\n';
    }
    const auto res = conservation_residual(oracle::true_flow(world, 1), oracle::true_flow(world, 2),
                                           oracle::exterior_outflow(world, 2));
    double worst = 0;
    for (double v : res.values()) worst = std::max(worst, std::abs(v));
    std::cout << "max conservation residual " << worst << '\n';

    // render the world and run a small untrained model on the first pair
    const auto frames = render_synthetic(world, {64, 48}, {});
    auto mc = ModelConfig::standard(48, 64, 8);
    FlowRegressor<float> model(mc);
    const auto prev = to_float(frames.frames[0]), curr = to_float(frames.frames[1]);
    const auto pred = predict_density(model, prev, curr);
    std::cout << "untrained model: " << pred.density.shape().height << "x" << pred.density.shape().width
              << " density, count " << pred.count << " (truth " << frames.annotations[1].points.size() << ")\n";
}
