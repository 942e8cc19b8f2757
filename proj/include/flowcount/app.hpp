#pragma once

// Command-line front end: synth, train, eval, predict, oracle-check.
// Exit codes: 0 success, 1 runtime failure, 2 usage error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "checkpoint.hpp"
#include "data.hpp"
#include "evaluate.hpp"
#include "field_io.hpp"
#include "json.hpp"
#include "oracle.hpp"
#include "training.hpp"
#include "visuals.hpp"

namespace flowcount::app {

namespace fs = std::filesystem;

struct GlobalFlags {
    std::string config;
    std::optional<std::uint64_t> seed;
    bool deterministic = false;
    std::string out;
};

inline nlohmann::json read_config(const std::string& path) {
    if (path.empty()) return nlohmann::json::object();
    std::ifstream is(path);
    if (!is) throw ParseError("cannot open config " + path);
    try {
        return nlohmann::json::parse(is);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(path + ": " + e.what());
    }
}

inline nlohmann::json section(const nlohmann::json& cfg, const char* name) {
    return cfg.contains(name) ? cfg.at(name) : nlohmann::json::object();
}

/// A flag wins over the config file, which wins over the default.
inline std::string pick(const std::string& flag, const nlohmann::json& cfg, const char* key, const std::string& fallback = "") {
    if (!flag.empty()) return flag;
    if (cfg.contains(key) && cfg.at(key).is_string()) return cfg.at(key).get<std::string>();
    return fallback;
}

/// Checkpoint named by eval.checkpoint, then checkpoint, then <run_dir>/last.ckpt.
inline std::string config_checkpoint(const nlohmann::json& cfg) {
    const std::string direct = pick("", section(cfg, "eval"), "checkpoint", pick("", cfg, "checkpoint"));
    if (!direct.empty()) return direct;
    const std::string run = pick("", cfg, "run_dir");
    return run.empty() ? std::string() : (fs::path(run) / "last.ckpt").string();
}

/// Fixed six decimals with trailing zeros dropped, keeping one: 0.0, 12.5, 3.141593.
inline std::string format_count(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    std::string s = buf;
    while (s.size() > 1 && s.back() == '0' && s[s.size() - 2] != '.') s.pop_back();
    return s;
}

inline int cmd_synth(const GlobalFlags& g, std::ostream& out) {
    const auto cfg = read_config(g.config);
    SynthConfig sc = synth_config_from_json(section(cfg, "synth"));
    if (g.seed) sc.seed = *g.seed;
    const std::string root = pick(g.out, cfg, "dataset", "dataset");
    const auto m = write_synthetic_dataset(sc, root);
    int frames = 0;
    for (const auto& s : m.sequences) frames += s.frames;
    out << "wrote " << m.sequences.size() << " sequences (" << frames << " frames) to " << root << '\n';
    return 0;
}

inline int cmd_train(const GlobalFlags& g, const std::string& dataset_flag, const std::string& resume, std::ostream& out) {
    const auto cfg = read_config(g.config);
    const std::string dataset = pick(dataset_flag, cfg, "dataset");
    if (dataset.empty()) throw DomainError("train: no dataset given (--dataset or \"dataset\" in the config)");
    const auto manifest = load_manifest(dataset);
    nlohmann::json mj = section(cfg, "model");
    if (!mj.contains("in_width")) mj["in_width"] = manifest.target_size.width;
    if (!mj.contains("in_height")) mj["in_height"] = manifest.target_size.height;
    ModelConfig mc = model_config_from_json(mj);
    TrainConfig tc = train_config_from_json(section(cfg, "train"));
    if (g.seed) {
        tc.seed = *g.seed;
        mc.seed = *g.seed;
    }
    if (g.deterministic) tc.deterministic = true;
    const std::string out_dir = pick(g.out, cfg, "run_dir", "run");
    std::optional<Checkpoint> ck;
    if (!resume.empty()) ck = load_checkpoint(resume);
    const auto res = train(tc, manifest, mc, out_dir, ck ? &*ck : nullptr, &out);
    if (!res.steps.empty())
        out << "trained " << res.steps.size() << " steps; loss " << res.steps.front().loss_total << " -> "
            << res.steps.back().loss_total << '\n';
    out << "checkpoint " << res.final_path.string() << '\n';
    return 0;
}

inline int cmd_eval(const GlobalFlags& g, const std::string& ckpt_flag, const std::string& dataset_flag,
                    const std::string& split, const std::string& visuals, int max_pairs, std::ostream& out) {
    const auto cfg = read_config(g.config);
    const auto ecfg = section(cfg, "eval");
    const std::string dataset = pick(dataset_flag, cfg, "dataset");
    const std::string ckpt = ckpt_flag.empty() ? config_checkpoint(cfg) : ckpt_flag;
    if (dataset.empty() || ckpt.empty()) throw DomainError("eval: --checkpoint and --dataset are required");
    const auto manifest = load_manifest(dataset);
    EvalOptions opt;
    if (ecfg.contains("game_levels")) opt.game_levels = ecfg.at("game_levels").get<std::vector<int>>();
    opt.sigma = ecfg.value("sigma", section(cfg, "train").value("sigma", 1.0));
    opt.max_pairs = max_pairs > 0 ? max_pairs : ecfg.value("max_pairs", 0);
    opt.keep_maps = !visuals.empty();
    const std::string sp = split.empty() ? ecfg.value("split", std::string("test")) : split;
    const EvalReport rep = evaluate(fs::path(ckpt), manifest, sp, opt);

    fs::path report_path = pick(g.out, ecfg, "report", "report.json");
    if (report_path.extension() != ".json") report_path /= "report.json";
    if (report_path.has_parent_path()) fs::create_directories(report_path.parent_path());
    std::ofstream(report_path) << report_to_json(rep).dump(2) << '\n';
    if (!visuals.empty()) emit_visuals(rep, manifest, visuals);
    out << std::setprecision(6) << "split " << sp << ": mae " << rep.mae << " rmse " << rep.rmse << " game_fixed_grid "
        << rep.game_fixed_grid << " (zero baseline mae " << rep.zero_baseline.mae << ", mean baseline mae "
        << rep.mean_baseline.mae << ")\n";
    out << "report " << report_path.string() << '\n';
    return 0;
}

inline int cmd_predict(const GlobalFlags& g, const std::string& ckpt_flag, const std::string& prev_path,
                       const std::string& curr_path, const std::string& dataset_flag, std::ostream& out) {
    const auto cfg = read_config(g.config);
    const std::string ckpt = ckpt_flag.empty() ? config_checkpoint(cfg) : ckpt_flag;
    if (ckpt.empty()) throw DomainError("predict: --checkpoint is required");
    const auto model = load_regressor(ckpt);
    const ImageSize size{model.config().in_width, model.config().in_height};
    Normalization norm;
    const std::string dataset = pick(dataset_flag, cfg, "dataset");
    if (!dataset.empty()) norm = load_manifest(dataset).normalization;
    auto load = [&](const std::string& p) {
        ImageF f = to_float(resize_image(read_image(p), size));
        normalize_image(f, norm);
        return f;
    };
    const FlowField<float> flow = model.regress_flow(load(prev_path), load(curr_path));
    const auto density = reconstruct_density(flow);
    if (!g.out.empty()) {
        fs::create_directories(g.out);
        write_flow(fs::path(g.out) / "flow.f32", flow);
        write_density(fs::path(g.out) / "density.f32", density);
    }
    out << "count " << format_count(static_cast<double>(count(density))) << '\n';
    if (!g.out.empty()) out << "flow " << (fs::path(g.out) / "flow.f32").string() << "\ndensity "
                            << (fs::path(g.out) / "density.f32").string() << '\n';
    return 0;
}

inline int cmd_oracle_check(const GlobalFlags& g, int worlds, std::ostream& out) {
    oracle::SuiteOptions opt;
    opt.n_worlds = worlds;
    if (g.seed) opt.seed = *g.seed;
    const auto rep = oracle::run_invariant_suite(opt);
    for (const auto& p : rep.properties)
        out << (p.violations == 0 && p.checks > 0 ? "ok   " : "FAIL ") << p.name << ": " << p.checks << " checks, "
            << p.violations << " violations" << (p.first_violation.empty() ? "" : " (first: " + p.first_violation + ")")
            << '\n';
    out << (rep.ok() ? "all invariants hold" : "invariant violations found") << " on " << rep.worlds << " worlds\n";
    return rep.ok() ? 0 : 1;
}

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    CLI::App app{"flowcount: people-flow crowd counting toolkit", "flowcount"};
    app.require_subcommand(1);
    GlobalFlags g;
    std::uint64_t seed = 0;
    app.add_option("--config", g.config, "JSON config file")->check(CLI::ExistingFile);
    auto* seed_opt = app.add_option("--seed", seed, "Random seed (overrides the config)");
    app.add_flag("--deterministic", g.deterministic, "Force deterministic execution");
    app.add_option("--out", g.out, "Output path (dataset root, run directory, report or dump directory)");

    std::string dataset, checkpoint, resume, split, visuals, prev, curr;
    int worlds = 100, max_pairs = 0;
    auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset from particle worlds");
    auto* trn = app.add_subcommand("train", "Train a flow regressor");
    trn->add_option("--dataset", dataset, "Dataset root");
    trn->add_option("--resume", resume, "Checkpoint to resume from")->check(CLI::ExistingFile);
    auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset split");
    ev->add_option("--checkpoint", checkpoint, "Checkpoint file");
    ev->add_option("--dataset", dataset, "Dataset root");
    ev->add_option("--split", split, "Split name (default test)");
    ev->add_option("--visuals", visuals, "Directory for heatmaps and overlays");
    ev->add_option("--max-pairs", max_pairs, "Evaluate at most this many frame pairs");
    auto* pr = app.add_subcommand("predict", "Predict the count for a pair of frames");
    pr->add_option("--checkpoint", checkpoint, "Checkpoint file");
    pr->add_option("--prev", prev, "Previous frame")->required()->check(CLI::ExistingFile);
    pr->add_option("--curr", curr, "Current frame")->required()->check(CLI::ExistingFile);
    pr->add_option("--dataset", dataset, "Dataset root (for normalization constants)");
    auto* oc = app.add_subcommand("oracle-check", "Verify the flow algebra against brute-force particle worlds");
    oc->add_option("--worlds", worlds, "Number of random worlds")->check(CLI::PositiveNumber);
    for (auto* sub : {synth, trn, ev, pr, oc}) sub->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n\n" << app.help();
        return 2;
    }
    if (seed_opt->count()) g.seed = seed;

    try {
        if (*synth) return cmd_synth(g, out);
        if (*trn) return cmd_train(g, dataset, resume, out);
        if (*ev) return cmd_eval(g, checkpoint, dataset, split, visuals, max_pairs, out);
        if (*pr) return cmd_predict(g, checkpoint, prev, curr, dataset, out);
        if (*oc) return cmd_oracle_check(g, worlds, out);
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    }
    return 2;
}

} // namespace flowcount::app
