#pragma once

// Weakly-supervised training of the flow regressor from density maps only.

#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "checkpoint.hpp"
#include "data.hpp"
#include "errors.hpp"
#include "flowgrid.hpp"
#include "json.hpp"
#include "loss.hpp"
#include "metrics.hpp"
#include "model.hpp"
#include "optim.hpp"

namespace flowcount {

/// Loss of a triplet of frames (t-1, t, t+1) against their GT densities.
/// Parameter gradients are accumulated into `grads` when it is non-null.
template <typename T>
LossBreakdown<T> triplet_loss(const FlowRegressor<T>& model, const std::array<Tensor3<T>, 3>& frames,
                              const std::array<Grid2<T>, 3>& gt, const LossWeights& weights,
                              GradientSet<T>* grads = nullptr, TripletFlows<T>* flows_out = nullptr) {
    std::array<EncodeCache<T>, 3> enc;
    std::array<Tensor3<T>, 3> feat;
    for (int k = 0; k < 3; ++k) feat[k] = model.encode(frames[k], grads ? &enc[k] : nullptr);

    std::array<PairCache<T>, 4> pc;
    PairCache<T>* cache = grads ? pc.data() : nullptr;
    TripletFlows<T> flows;
    flows.fwd_prev = model.flow_from_features(feat[0], feat[1], cache ? &pc[0] : nullptr);
    flows.fwd_next = model.flow_from_features(feat[1], feat[2], cache ? &pc[1] : nullptr);
    flows.bwd_prev = model.flow_from_features(feat[1], feat[0], cache ? &pc[2] : nullptr);
    flows.bwd_next = model.flow_from_features(feat[2], feat[1], cache ? &pc[3] : nullptr);

    TripletFlows<T> dflows;
    const LossBreakdown<T> loss = flow_loss(flows, {&gt[0], &gt[1], &gt[2]}, weights, grads ? &dflows : nullptr);
    if (flows_out) *flows_out = flows;
    if (!grads || !std::isfinite(loss.total)) return loss;

    std::array<Tensor3<T>, 3> dfeat;
    model.pair_backward(pc[0], dflows.fwd_prev, *grads, dfeat[0], dfeat[1]);
    model.pair_backward(pc[1], dflows.fwd_next, *grads, dfeat[1], dfeat[2]);
    model.pair_backward(pc[2], dflows.bwd_prev, *grads, dfeat[1], dfeat[0]);
    model.pair_backward(pc[3], dflows.bwd_next, *grads, dfeat[2], dfeat[1]);
    for (int k = 0; k < 3; ++k) model.encode_backward(enc[k], dfeat[k], *grads);
    return loss;
}

/// Convenience overload for a loaded (normalized, rasterized) triplet.
inline LossBreakdown<float> triplet_loss(const FlowRegressor<float>& model, const FrameTriplet& triplet,
                                         const LossWeights& weights, GradientSet<float>* grads = nullptr) {
    std::array<Grid2<float>, 3> gt;
    for (int k = 0; k < 3; ++k) gt[k] = grid_cast<float>(triplet.densities[k]);
    return triplet_loss(model, triplet.frames, gt, weights, grads);
}

template <typename T>
struct DensityPrediction {
    DensityMap<T> density;
    T count = T(0);
};

/// Density at the current frame reconstructed from the predicted incoming flow.
template <typename T>
DensityPrediction<T> predict_density(const FlowRegressor<T>& model, const Tensor3<T>& frame_prev,
                                     const Tensor3<T>& frame_curr) {
    DensityPrediction<T> out;
    out.density = reconstruct_density(model.regress_flow(frame_prev, frame_curr));
    out.count = count(out.density);
    return out;
}

// --- configuration ------------------------------------------------------------------

struct TrainConfig {
    AdamConfig optimizer;
    int batch_size = 1;      // triplets per step
    long max_steps = 1000;
    long eval_interval = 100;
    long checkpoint_interval = 100;
    std::uint64_t seed = 0;
    LossWeights loss_weights;
    std::optional<FusionMode> fusion_mode;  // overrides the model config when set
    double sigma = 1.0;                     // GT kernel, grid cells
    AugmentOptions augment;
    bool deterministic = true;
    std::string train_split = "train";
    std::string val_split = "val";
    int max_eval_pairs = 0;  // 0 = whole split
    std::string lr_schedule = "constant";

    void validate() const {
        optimizer.validate();
        loss_weights.validate();
        if (batch_size < 1) throw DomainError("TrainConfig: batch size must be >= 1");
        if (max_steps < 0) throw DomainError("TrainConfig: max_steps must be >= 0");
        if (!(sigma > 0.0)) throw DomainError("TrainConfig: sigma must be > 0");
        if (!(augment.crop_fraction > 0.0 && augment.crop_fraction <= 1.0))
            throw DomainError("TrainConfig: crop fraction must be in (0, 1]");
        if (lr_schedule != "constant") throw DomainError("TrainConfig: only the constant schedule is supported");
    }
};

inline nlohmann::json to_json(const TrainConfig& c) {
    nlohmann::json j = {{"optimizer",
                         {{"name", "adam"},
                          {"learning_rate", c.optimizer.learning_rate},
                          {"beta1", c.optimizer.beta1},
                          {"beta2", c.optimizer.beta2},
                          {"epsilon", c.optimizer.epsilon}}},
                        {"batch_size", c.batch_size},
                        {"max_steps", c.max_steps},
                        {"eval_interval", c.eval_interval},
                        {"checkpoint_interval", c.checkpoint_interval},
                        {"seed", c.seed},
                        {"loss_weights", to_json(c.loss_weights)},
                        {"sigma", c.sigma},
                        {"augment", {{"flip", c.augment.flip}, {"crop_fraction", c.augment.crop_fraction}}},
                        {"deterministic", c.deterministic},
                        {"train_split", c.train_split},
                        {"val_split", c.val_split},
                        {"max_eval_pairs", c.max_eval_pairs},
                        {"lr_schedule", c.lr_schedule}};
    if (c.fusion_mode) j["fusion_mode"] = to_string(*c.fusion_mode);
    return j;
}

inline TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig c = {}) {
    try {
        if (j.contains("optimizer")) {
            const auto& o = j.at("optimizer");
            if (o.value("name", "adam") != "adam") throw DomainError("TrainConfig: only the adam optimizer is supported");
            c.optimizer.learning_rate = o.value("learning_rate", c.optimizer.learning_rate);
            c.optimizer.beta1 = o.value("beta1", c.optimizer.beta1);
            c.optimizer.beta2 = o.value("beta2", c.optimizer.beta2);
            c.optimizer.epsilon = o.value("epsilon", c.optimizer.epsilon);
        }
        c.batch_size = j.value("batch_size", c.batch_size);
        c.max_steps = j.value("max_steps", c.max_steps);
        c.eval_interval = j.value("eval_interval", c.eval_interval);
        c.checkpoint_interval = j.value("checkpoint_interval", c.checkpoint_interval);
        c.seed = j.value("seed", c.seed);
        if (j.contains("loss_weights")) c.loss_weights = loss_weights_from_json(j.at("loss_weights"));
        if (j.contains("fusion_mode")) c.fusion_mode = fusion_mode_from_string(j.at("fusion_mode").get<std::string>());
        c.sigma = j.value("sigma", c.sigma);
        if (j.contains("augment")) {
            c.augment.flip = j.at("augment").value("flip", c.augment.flip);
            c.augment.crop_fraction = j.at("augment").value("crop_fraction", c.augment.crop_fraction);
        }
        c.deterministic = j.value("deterministic", c.deterministic);
        c.train_split = j.value("train_split", c.train_split);
        c.val_split = j.value("val_split", c.val_split);
        c.max_eval_pairs = j.value("max_eval_pairs", c.max_eval_pairs);
        c.lr_schedule = j.value("lr_schedule", c.lr_schedule);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("train config: ") + e.what());
    }
    c.validate();
    return c;
}

// --- training loop -------------------------------------------------------------------------

struct StepRecord {
    long step = 0;
    double loss_total = 0, loss_density = 0, loss_conservation = 0, loss_symmetry = 0;
    double lr = 0;
};

struct EvalRecord {
    long step = 0;
    double val_mae = 0;
    double val_rmse = 0;
};

struct TrainResult {
    Checkpoint final_checkpoint;
    std::filesystem::path final_path;
    std::filesystem::path best_path;  // empty when no validation ran
    std::vector<StepRecord> steps;
    std::vector<EvalRecord> evals;
};

struct CountErrors {
    double mae = 0;
    double rmse = 0;
    std::size_t pairs = 0;
};

inline ImageF normalized_frame(FrameStore& store, const std::string& seq, int idx) {
    ImageF f = to_float(store.frame(seq, idx));
    normalize_image(f, store.manifest().normalization);
    return f;
}

/// Count MAE/RMSE of the model on frame pairs (t - offset, t).
inline CountErrors count_errors(const FlowRegressor<float>& model, FrameStore& store, const std::vector<TripletRef>& pairs) {
    std::vector<double> gt, pred;
    const int off = store.manifest().offset;
    for (const auto& p : pairs) {
        const auto d = predict_density(model, normalized_frame(store, p.sequence, p.center - off),
                                       normalized_frame(store, p.sequence, p.center));
        pred.push_back(d.count);
        gt.push_back(static_cast<double>(store.annotation(p.sequence, p.center).points.size()));
    }
    if (gt.empty()) return {};
    return {mae(gt, pred), rmse(gt, pred), gt.size()};
}

namespace train_detail {

inline std::uint64_t mix(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

inline std::string rng_state(const std::mt19937_64& rng) {
    std::ostringstream os;
    os << rng;
    return os.str();
}

inline nlohmann::json parameter_norms(const ParameterSet<float>& p) {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& t : p) {
        double s = 0;
        for (float v : t.values) s += static_cast<double>(v) * v;
        j[t.name] = std::isfinite(s) ? nlohmann::json(std::sqrt(s)) : nlohmann::json("non-finite");
    }
    return j;
}

inline nlohmann::json image_stats(const ImageF& img) {
    double lo = std::numeric_limits<double>::infinity(), hi = -lo, sum = 0;
    for (float v : img.values()) {
        lo = std::min(lo, static_cast<double>(v));
        hi = std::max(hi, static_cast<double>(v));
        sum += v;
    }
    return {{"min", lo}, {"max", hi}, {"mean", sum / std::max<std::size_t>(1, img.size())}};
}

} // namespace train_detail

/// Runs (or resumes) optimization. Writes metrics.jsonl, last.ckpt and
/// best.ckpt (lowest validation MAE) under `out_dir`.
///
/// The sample order is a per-epoch permutation derived from the seed and the
/// augmentation seeds come from a generator whose state is checkpointed, so
/// resuming from a checkpoint reproduces an uninterrupted run exactly.
inline TrainResult train(const TrainConfig& config, const DatasetManifest& manifest, ModelConfig model_config,
                         const std::filesystem::path& out_dir, const Checkpoint* resume = nullptr,
                         std::ostream* progress = nullptr) {
    config.validate();
    if (config.fusion_mode) model_config.fusion = *config.fusion_mode;
    model_config.validate();
    if (model_config.in_width != manifest.target_size.width)
        throw IncompatibleCheckpoint("in_width", "model in_width " + std::to_string(model_config.in_width) +
                                                     " does not match dataset target width " +
                                                     std::to_string(manifest.target_size.width));
    if (model_config.in_height != manifest.target_size.height)
        throw IncompatibleCheckpoint("in_height", "model in_height " + std::to_string(model_config.in_height) +
                                                      " does not match dataset target height " +
                                                      std::to_string(manifest.target_size.height));
    std::filesystem::create_directories(out_dir);

    FlowRegressor<float> model(model_config);
    Adam<float> adam(model.parameters(), config.optimizer);
    std::mt19937_64 rng(config.seed);
    long step = 0;
    double best = std::numeric_limits<double>::infinity();
    if (resume) {
        restore_parameters(model, *resume);
        step = resume->step;
        best = resume->best_val_mae;
        if (!resume->rng_state.empty()) {
            std::istringstream is(resume->rng_state);
            is >> rng;
        }
        const auto& params = model.parameters();
        for (std::size_t i = 0; i < params.size(); ++i) {
            const auto* m = resume->find("optim/m/" + params[i].name);
            const auto* v = resume->find("optim/v/" + params[i].name);
            if (m && v) {
                adam.first_moment().grads[i] = m->values;
                adam.second_moment().grads[i] = v->values;
            }
        }
        adam.set_steps(resume->metadata.value("optimizer_steps", step));
    }

    FrameStore store(manifest);
    const TripletIndex index = make_triplets(manifest, config.train_split, StreamMode::Eval);
    if (index.triplets.empty() && config.max_steps > step) throw DomainError("train: split '" + config.train_split + "' has no triplets");
    std::vector<TripletRef> val_pairs;
    if (manifest.splits.count(config.val_split)) val_pairs = make_pairs(manifest, config.val_split);
    if (config.max_eval_pairs > 0 && static_cast<int>(val_pairs.size()) > config.max_eval_pairs) {
        // evenly spaced subset, deterministic
        std::vector<TripletRef> sub;
        for (int i = 0; i < config.max_eval_pairs; ++i)
            sub.push_back(val_pairs[static_cast<std::size_t>(i) * val_pairs.size() / config.max_eval_pairs]);
        val_pairs = std::move(sub);
    }

    const GridShape grid = model_config.feature_shape();
    TrainResult result;
    std::ofstream log(out_dir / "metrics.jsonl", resume ? std::ios::app : std::ios::trunc);

    auto snapshot = [&](long s) {
        Checkpoint ck = make_checkpoint(model, s);
        ck.rng_state = train_detail::rng_state(rng);
        ck.best_val_mae = best;
        const auto& params = model.parameters();
        for (std::size_t i = 0; i < params.size(); ++i) {
            ck.tensors.push_back({"optim/m/" + params[i].name, params[i].shape, adam.first_moment().grads[i]});
            ck.tensors.push_back({"optim/v/" + params[i].name, params[i].shape, adam.second_moment().grads[i]});
        }
        ck.metadata = {{"optimizer", "adam"},
                       {"optimizer_steps", adam.steps()},
                       {"rng", oracle::kRngName},
                       {"train_config", to_json(config)}};
        return ck;
    };

    long cached_epoch = -1;
    std::vector<std::size_t> order;
    auto sample = [&](long k) -> const TripletRef& {
        const long n = static_cast<long>(index.triplets.size());
        const long epoch = k / n;
        if (epoch != cached_epoch) {
            order.resize(n);
            std::iota(order.begin(), order.end(), std::size_t{0});
            std::mt19937_64 perm(train_detail::mix(config.seed ^ train_detail::mix(static_cast<std::uint64_t>(epoch))));
            std::shuffle(order.begin(), order.end(), perm);
            cached_epoch = epoch;
        }
        return index.triplets[order[k % n]];
    };

    GradientSet<float> grads(model.parameters());
    while (step < config.max_steps) {
        grads.zero();
        LossBreakdown<double> avg;
        for (int b = 0; b < config.batch_size; ++b) {
            const long k = step * config.batch_size + b;
            const TripletRef& ref = sample(k);
            const std::uint64_t aug_seed = rng();
            const FrameTriplet tr = augment(load_triplet(store, ref), config.augment, aug_seed,
                                            manifest.normalization, grid, config.sigma);
            GradientSet<float> g(model.parameters());
            const auto loss = triplet_loss(model, tr, config.loss_weights, &g);
            if (!std::isfinite(loss.total)) {
                nlohmann::json dump = {{"step", step + 1},
                                       {"sequence", ref.sequence},
                                       {"center", ref.center},
                                       {"augment_seed", aug_seed},
                                       {"loss", {{"total", loss.total}, {"density", loss.density},
                                                 {"conservation", loss.conservation}, {"symmetry", loss.symmetry}}},
                                       {"inputs", {train_detail::image_stats(tr.frames[0]), train_detail::image_stats(tr.frames[1]),
                                                   train_detail::image_stats(tr.frames[2])}},
                                       {"parameter_norms", train_detail::parameter_norms(model.parameters())}};
                std::ofstream(out_dir / "divergence_dump.json") << dump.dump(2) << '\n';
                throw NumericalError("non-finite loss at step " + std::to_string(step + 1) + " (triplet " + ref.sequence +
                                     "@" + std::to_string(ref.center) + "); diagnostics in " +
                                     (out_dir / "divergence_dump.json").string());
            }
            const float scale = 1.0f / static_cast<float>(config.batch_size);
            for (std::size_t i = 0; i < g.grads.size(); ++i)
                for (std::size_t j = 0; j < g.grads[i].size(); ++j) grads.grads[i][j] += scale * g.grads[i][j];
            avg.total += loss.total / config.batch_size;
            avg.density += loss.density / config.batch_size;
            avg.conservation += loss.conservation / config.batch_size;
            avg.symmetry += loss.symmetry / config.batch_size;
        }
        adam.step(model.parameters(), grads);
        ++step;

        StepRecord rec{step, avg.total, avg.density, avg.conservation, avg.symmetry, config.optimizer.learning_rate};
        result.steps.push_back(rec);
        log << nlohmann::json{{"step", rec.step},
                              {"loss_total", rec.loss_total},
                              {"loss_density", rec.loss_density},
                              {"loss_conservation", rec.loss_conservation},
                              {"loss_symmetry", rec.loss_symmetry},
                              {"lr", rec.lr}}
                   .dump()
            << '\n';

        if (config.eval_interval > 0 && step % config.eval_interval == 0 && !val_pairs.empty()) {
            const CountErrors e = count_errors(model, store, val_pairs);
            result.evals.push_back({step, e.mae, e.rmse});
            log << nlohmann::json{{"step", step}, {"val_mae", e.mae}, {"val_rmse", e.rmse}}.dump() << '\n';
            if (progress)
                *progress << "step " << step << " loss " << rec.loss_total << " val_mae " << e.mae << " val_rmse "
                          << e.rmse << std::endl;
            if (e.mae < best) {
                best = e.mae;
                save_checkpoint(out_dir / "best.ckpt", snapshot(step));
                result.best_path = out_dir / "best.ckpt";
            }
        }
        if (config.checkpoint_interval > 0 && step % config.checkpoint_interval == 0)
            save_checkpoint(out_dir / "last.ckpt", snapshot(step));
    }
    log.flush();

    result.final_checkpoint = snapshot(step);
    result.final_path = out_dir / "last.ckpt";
    save_checkpoint(result.final_path, result.final_checkpoint);
    if (result.best_path.empty() && std::filesystem::exists(out_dir / "best.ckpt")) result.best_path = out_dir / "best.ckpt";
    return result;
}

} // namespace flowcount
