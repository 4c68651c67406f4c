// Copyright (c) 2026, The adamoe Authors
// SPDX-License-Identifier: Apache-2.0

#include "cli.hpp"

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <nlohmann/json.hpp>
#include <optional>

#include "adamoe/analysis.hpp"
#include "adamoe/checkpoint.hpp"
#include "adamoe/dataset.hpp"
#include "adamoe/errors.hpp"
#include "adamoe/evaluate.hpp"
#include "adamoe/experiment.hpp"
#include "adamoe/run_config.hpp"
#include "adamoe/training.hpp"
#include "adamoe/upcycle_check.hpp"

namespace adamoe::cli {

namespace fs = std::filesystem;

namespace {

/// Raised when a command ran correctly but its quality gate failed.
struct GateFailure : Error {
    using Error::Error;
};

struct Common {
    std::string config_file;
    std::vector<std::string> sets;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    std::optional<std::string> tasks;
};

struct Flags {
    Common common;
    // gen-data
    std::optional<std::size_t> count;
    std::optional<std::size_t> horizon;
    // train
    std::string data;
    std::optional<std::string> variant;
    std::string upcycle_from;
    std::string resume;
    std::optional<std::size_t> steps;
    // eval / analyze
    std::string ckpt;
    std::optional<std::size_t> trials;
    bool rollout = false;
    std::optional<std::size_t> layer;
    std::string run_id = "run";
    std::size_t trajectory = 0;
    // upcycle-check
    std::string dense_ckpt;
    std::string moe_config;
    std::size_t inputs = 100;
    std::optional<std::size_t> perturb_layer;
    std::size_t perturb_expert = 0;
    double perturb_scale = 1e-3;
};

void add_common(CLI::App* cmd, Common& c) {
    cmd->add_option("--config", c.config_file, "key = value config file");
    cmd->add_option("--set", c.sets, "override one key (key=value), repeatable");
    cmd->add_option("--seed", c.seed, "master seed");
    cmd->add_option("--out", c.out, "output directory");
    cmd->add_option("--tasks", c.tasks, "comma-separated task names");
}

RunConfig resolve(const Flags& f, char** env, const std::vector<std::pair<std::string, std::string>>& extra) {
    RunConfig rc;
    if (!f.common.config_file.empty()) rc.load_file(f.common.config_file);
    rc.load_env(env);
    for (const auto& s : f.common.sets) {
        const auto eq = s.find('=');
        if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
        rc.set(s.substr(0, eq), s.substr(eq + 1), "--set");
    }
    if (f.common.seed) rc.set("seed", std::to_string(*f.common.seed), "--seed");
    if (f.common.out) rc.set("out", *f.common.out, "--out");
    if (f.common.tasks) rc.set("tasks", *f.common.tasks, "--tasks");
    for (const auto& [k, v] : extra) rc.set(k, v, "flag");
    return rc;
}

fs::path echo_config(const RunConfig& rc, const std::string& command) {
    const fs::path out = rc.get("out");
    fs::create_directories(out);
    nlohmann::json j = nlohmann::json::parse(rc.to_json());
    j["command"] = command;
    write_text_file(out / "config.json", j.dump(2) + "\n");
    return out;
}

std::string pct(double v) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%5.1f", 100.0 * v);
    return buf;
}

/// Loads a model checkpoint, preferring EMA weights when asked and present.
PolicyModel model_from_file(const fs::path& path, bool use_ema) {
    if (!fs::exists(path)) throw IoError("checkpoint not found: " + path.string());
    const Checkpoint ckpt = read_checkpoint(path);
    const bool has_ema = !ckpt.tensors.empty() && ckpt.find("ema/" + ckpt.tensors.front().name.substr(6)) != nullptr;
    return load_model(ckpt, use_ema && has_ema);
}

// ---------------------------------------------------------------------------

int cmd_gen_data(const Flags& f, char** env, std::ostream& out) {
    std::vector<std::pair<std::string, std::string>> extra;
    if (f.count) extra.emplace_back("data.count", std::to_string(*f.count));
    if (f.horizon) extra.emplace_back("data.horizon", std::to_string(*f.horizon));
    const RunConfig rc = resolve(f, env, extra);
    const auto tasks = rc.tasks();
    const fs::path dir = echo_config(rc, "gen-data");
    const fs::path path = dir / "data.jsonl";
    const DatasetManifest m =
        generate_dataset(tasks, rc.get_size("data.count"), rc.get_u64("seed"), rc.get_size("data.horizon"), path);
    for (const auto& t : m.tasks) {
        out << t.name << ": " << t.written << " written, " << t.failures << " controller failures\n";
    }
    out << "dataset " << path.string() << " (" << m.total_records() << " records)\n";
    if (m.total_failures() * 100 > m.total_requested()) {
        throw GateFailure("controller failures exceed 1% (" + std::to_string(m.total_failures()) + " of " +
                          std::to_string(m.total_requested()) + ")");
    }
    return kOk;
}

int cmd_train(const Flags& f, char** env, std::ostream& out) {
    std::vector<std::pair<std::string, std::string>> extra;
    if (f.variant) extra.emplace_back("model.variant", *f.variant);
    if (f.steps) extra.emplace_back("train.total_steps", std::to_string(*f.steps));
    const RunConfig rc = resolve(f, env, extra);
    if (f.data.empty()) throw ConfigError("train needs --data");
    const ModelConfig mcfg = rc.model_config();
    const TrainConfig tcfg = rc.train_config();
    const fs::path dir = echo_config(rc, "train");

    const auto samples = dataset_samples(load_dataset(f.data), mcfg.horizon);
    Rng init(derive_seed(tcfg.seed, 0x696e6974ULL));
    std::optional<PolicyModel> model;
    if (!f.upcycle_from.empty()) {
        const PolicyModel dense = model_from_file(f.upcycle_from, false);
        if (!mcfg.is_moe() && !(dense.config() == mcfg)) {
            throw ConfigError("--upcycle-from with variant dense needs an identical model config");
        }
        model = mcfg.is_moe() ? PolicyModel::upcycle(dense, mcfg, init) : clone_model(dense);
    } else {
        model = PolicyModel::create(mcfg, init);
    }
    Trainer trainer(std::move(*model), tcfg, samples);
    if (!f.resume.empty()) {
        restore_trainer(trainer, read_checkpoint(f.resume));
        out << "resumed at step " << trainer.step_count() << "\n";
    }

    MetricsWriter metrics(dir / "metrics.csv", mcfg);
    const std::size_t every = rc.get_size("train.checkpoint_every");
    const fs::path ckdir = dir / "ckpt";
    while (trainer.step_count() < tcfg.total_steps) {
        const StepMetrics m = trainer.step();
        metrics.append(m);
        if (every > 0 && m.step % every == 0 && m.step < tcfg.total_steps) {
            write_checkpoint(ckdir / ("step" + std::to_string(m.step) + ".amoe"), trainer_checkpoint(trainer));
        }
        if (m.step == 1 || m.step % 100 == 0 || m.step == tcfg.total_steps) {
            out << "step " << m.step << " loss " << m.loss_total << " (fm " << m.loss_fm << ", balance "
                << m.loss_balance << ")\n";
        }
    }
    write_checkpoint(ckdir / "final.amoe", trainer_checkpoint(trainer));
    write_checkpoint(ckdir / "ema.amoe", model_checkpoint(trainer.ema_model()));
    out << "checkpoints in " << ckdir.string() << "\n";
    return kOk;
}

int cmd_eval(const Flags& f, char** env, std::ostream& out) {
    std::vector<std::pair<std::string, std::string>> extra;
    if (f.trials) extra.emplace_back("eval.trials", std::to_string(*f.trials));
    const RunConfig rc = resolve(f, env, extra);
    if (f.ckpt.empty()) throw ConfigError("eval needs --ckpt (a checkpoint path or 'scripted')");
    const auto tasks = rc.tasks();
    const EvalConfig ec = rc.eval_config();
    const std::size_t denoise = rc.get_size("eval.denoise_steps");

    std::optional<PolicyModel> model;
    std::unique_ptr<ChunkPolicy> policy;
    if (f.ckpt == "scripted") {
        policy = std::make_unique<ScriptedPolicy>(rc.get_size("model.horizon"));
    } else {
        model = model_from_file(f.ckpt, rc.get_bool("eval.use_ema"));
        policy = std::make_unique<ModelPolicy>(*model, denoise);
    }
    const fs::path dir = echo_config(rc, "eval");

    nlohmann::json j = nlohmann::json::object();
    std::string header = "| policy |", sep = "|---|", row = "| " + f.ckpt + " |";
    double sum = 0.0;
    for (const auto& t : tasks) {
        const EvalResult r = evaluate(*policy, t, ec);
        header += " " + t.name + " |";
        sep += "---|";
        row += " " + pct(r.rate) + " |";
        sum += r.rate;
        j["tasks"][t.name] = {{"successes", r.successes},
                              {"trials", r.trials},
                              {"rate", r.rate},
                              {"ci", {r.ci.lo, r.ci.hi}}};
    }
    const double avg = sum / static_cast<double>(tasks.size());
    j["average"] = avg;
    j["checkpoint"] = f.ckpt;
    out << header << " average |\n" << sep << "---|\n" << row << " " << pct(avg) << " |\n";
    write_text_file(dir / "eval.json", j.dump(2) + "\n");
    return kOk;
}

int cmd_analyze(const Flags& f, char** env, std::ostream& out) {
    const RunConfig rc = resolve(f, env, {});
    if (f.ckpt.empty()) throw ConfigError("analyze needs --ckpt");
    if (!f.data.empty() && f.rollout) throw ConfigError("give either --data or --rollout, not both");
    const bool rollout = f.data.empty();
    const PolicyModel model = model_from_file(f.ckpt, rc.get_bool("eval.use_ema"));
    const ModelConfig& mc = model.config();
    const std::size_t layer = f.layer ? *f.layer : default_analysis_layer(mc);
    const std::size_t denoise = rc.get_size("eval.denoise_steps");
    const std::uint64_t seed = rc.get_u64("seed");
    const auto tasks = rc.tasks();
    const fs::path dir = echo_config(rc, "analyze");
    const fs::path root = dir / "analysis";

    std::vector<Trajectory> data;
    if (!f.data.empty()) data = load_dataset(f.data);
    std::vector<TrajectoryStep> balance_samples;
    for (const auto& spec : tasks) {
        std::vector<Observation> frames;
        if (rollout) {
            ModelPolicy policy(model, denoise);
            frames = rollout_frames(policy, spec, derive_seed(seed, spec.task_id), rc.get_size("eval.execute"));
            for (const auto& o : frames) balance_samples.push_back({o, ActionChunk::zeros(mc.horizon, mc.action_dim)});
        } else {
            std::size_t seen = 0;
            for (const auto& traj : data) {
                if (traj.task_id != spec.task_id) continue;
                if (seen++ != f.trajectory) continue;
                for (const auto& st : traj.steps) frames.push_back(st.obs);
            }
            if (frames.empty()) {
                throw ConfigError("dataset has no trajectory #" + std::to_string(f.trajectory) + " for task " +
                                  spec.name);
            }
        }
        const IntensityTrace trace = expert_usage_intensity(model, frames, layer, denoise, seed);
        const fs::path stem = intensity_stem(root, f.run_id, spec.name, layer);
        emit_csv(trace, stem.string() + ".csv");
        emit_svg_heatmap(trace, stem.string() + ".svg");
        out << spec.name << ": " << trace.frames() << " frames -> " << stem.string() << ".{csv,svg}\n";
    }
    if (!f.data.empty()) balance_samples = dataset_samples(data, mc.horizon);
    const BalanceReport rep = balance_report(model, balance_samples, seed);
    write_text_file(root / f.run_id / "balance.json", balance_json(rep));
    out << "collapse score " << rep.collapse_score << (rep.collapsed ? " (collapsed)" : "") << "\n";
    return kOk;
}

int cmd_upcycle_check(const Flags& f, char** env, std::ostream& out) {
    Flags layered = f;
    if (!f.moe_config.empty()) {
        if (!f.common.config_file.empty()) throw ConfigError("give either --config or --moe-config, not both");
        layered.common.config_file = f.moe_config;
    }
    const RunConfig rc = resolve(layered, env, {});
    if (f.dense_ckpt.empty()) throw ConfigError("upcycle-check needs --dense-ckpt");
    const PolicyModel dense = model_from_file(f.dense_ckpt, false);
    ModelConfig mcfg = dense.config();
    mcfg.variant = parse_variant(rc.get("model.variant"));
    mcfg.num_experts = rc.get_size("model.num_experts");
    mcfg.top_k = rc.get_size("model.top_k");
    mcfg.alpha = rc.get_double("model.alpha");
    if (!mcfg.is_moe()) throw ConfigError("upcycle-check needs an MoE variant in --moe-config");
    const std::uint64_t seed = rc.get_u64("seed");
    echo_config(rc, "upcycle-check");

    Rng rng(derive_seed(seed, 0x7570ULL));
    PolicyModel moe = PolicyModel::upcycle(dense, mcfg, rng);
    if (f.perturb_layer) {
        auto& blocks = moe.mutable_blocks();
        if (*f.perturb_layer >= blocks.size() || !blocks[*f.perturb_layer].moe) {
            throw ConfigError("--perturb-layer " + std::to_string(*f.perturb_layer) + " is not an MoE layer");
        }
        MoELayer& layer = *blocks[*f.perturb_layer].moe;
        if (f.perturb_expert >= layer.config().num_experts) throw ConfigError("--perturb-expert out of range");
        auto w = layer.mutable_routed(f.perturb_expert).up.mutable_data();
        for (double& v : w) v += f.perturb_scale;
    }
    const UpcycleCheckReport rep = check_upcycle_identity(dense, moe, f.inputs, seed);
    out << "K = " << rep.num_experts << ", k = " << mcfg.top_k << ", variant " << variant_name(mcfg.variant) << "\n";
    for (std::size_t l = 0; l < rep.layer_deviation.size(); ++l) {
        out << "layer " << l << " max deviation " << rep.layer_deviation[l] << "\n";
    }
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.3e", rep.max_deviation);
    out << "inputs " << rep.inputs << ", end-to-end deviation " << rep.end_to_end_deviation << ", max deviation "
        << buf << "\n";
    if (!rep.passed) {
        throw GateFailure("upcycle identity violated, worst layer " + std::to_string(rep.worst_layer) +
                          " (deviation " + buf + ")");
    }
    out << "upcycle identity holds\n";
    return kOk;
}

int cmd_grid(const Flags& f, char** env, std::ostream& out) {
    const RunConfig rc = resolve(f, env, {});
    if (f.data.empty()) throw ConfigError("grid needs --data");
    ExperimentSpec spec;
    spec.model = rc.model_config();
    spec.train = rc.train_config();
    spec.finetune_steps = spec.train.total_steps;
    spec.pretrain_steps = rc.get_size("grid.pretrain_steps");
    spec.tasks = rc.tasks();
    spec.eval = rc.eval_config();
    spec.denoise_steps = rc.get_size("eval.denoise_steps");
    spec.eval_ema = rc.get_bool("eval.use_ema");
    spec.seeds.clear();
    for (const auto& s : rc.get_list("grid.seeds")) spec.seeds.push_back(std::stoull(s));
    for (const auto& v : rc.get_list("grid.variants")) {
        const Variant var = parse_variant(v);
        if (var == Variant::Dense) {
            spec.cells.push_back({Variant::Dense, 1, 1, 0.0});
            continue;
        }
        for (const auto& K : rc.get_list("grid.num_experts")) {
            for (const auto& k : rc.get_list("grid.top_k")) {
                for (const auto& lam : rc.get_list("grid.lambda_balance")) {
                    spec.cells.push_back({var, std::stoul(K), std::stoul(k), std::stod(lam)});
                }
            }
        }
    }
    const fs::path dir = echo_config(rc, "grid");
    const auto samples = dataset_samples(load_dataset(f.data), spec.model.horizon);
    const ExperimentResults res = run_experiment(spec, samples, [&](const std::string& s) { out << s << "\n"; });
    write_text_file(dir / "results.md", results_markdown(res));
    write_text_file(dir / "results.csv", results_csv(res));
    write_text_file(dir / "results.json", results_json(res));
    out << results_markdown(res);
    return kOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err, char** env) {
    CLI::App app{"adamoe: mixture-of-experts flow-matching policy toolkit"};
    app.require_subcommand(1);
    Flags f;

    auto* gen = app.add_subcommand("gen-data", "generate scripted-expert trajectories");
    add_common(gen, f.common);
    gen->add_option("--count", f.count, "trajectories per task");
    gen->add_option("--horizon", f.horizon, "stored chunk length");

    auto* train = app.add_subcommand("train", "train a policy");
    add_common(train, f.common);
    train->add_option("--data", f.data, "dataset (.jsonl)");
    train->add_option("--variant", f.variant, "dense | vanilla | csmoe | adamoe");
    train->add_option("--upcycle-from", f.upcycle_from, "dense checkpoint to upcycle before training");
    train->add_option("--resume", f.resume, "training checkpoint to resume from");
    train->add_option("--steps", f.steps, "total optimizer steps");

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on the benchmark");
    add_common(eval, f.common);
    eval->add_option("--ckpt", f.ckpt, "checkpoint path or 'scripted'");
    eval->add_option("--trials", f.trials, "episodes per task");

    auto* analyze = app.add_subcommand("analyze", "expert usage intensity and balance report");
    add_common(analyze, f.common);
    analyze->add_option("--ckpt", f.ckpt, "checkpoint path");
    analyze->add_option("--data", f.data, "dataset to analyse");
    analyze->add_flag("--rollout", f.rollout, "analyse fresh rollouts (the default when --data is absent)");
    analyze->add_option("--layer", f.layer, "MoE layer index (default: middle MoE layer)");
    analyze->add_option("--run-id", f.run_id, "name of the analysis run directory");
    analyze->add_option("--trajectory", f.trajectory, "per-task trajectory index when using --data");

    auto* up = app.add_subcommand("upcycle-check", "verify the (1 + sum w) F_dense identity after upcycling");
    add_common(up, f.common);
    up->add_option("--dense-ckpt", f.dense_ckpt, "dense checkpoint");
    up->add_option("--moe-config", f.moe_config, "config file with model.variant / num_experts / top_k");
    up->add_option("--inputs", f.inputs, "random inputs to test");
    up->add_option("--perturb-layer", f.perturb_layer, "inject a fault into a routed expert of this layer");
    up->add_option("--perturb-expert", f.perturb_expert, "routed expert to perturb");
    up->add_option("--perturb-scale", f.perturb_scale, "offset added to the perturbed weights");

    auto* grid = app.add_subcommand("grid", "run an ablation grid");
    add_common(grid, f.common);
    grid->add_option("--data", f.data, "dataset (.jsonl)");

    std::vector<std::string> rev(args.rbegin(), args.rend());
    if (!rev.empty()) rev.pop_back();
    try {
        app.parse(rev);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kOk : kUsage;
    }

    try {
        if (gen->parsed()) return cmd_gen_data(f, env, out);
        if (train->parsed()) return cmd_train(f, env, out);
        if (eval->parsed()) return cmd_eval(f, env, out);
        if (analyze->parsed()) return cmd_analyze(f, env, out);
        if (up->parsed()) return cmd_upcycle_check(f, env, out);
        if (grid->parsed()) return cmd_grid(f, env, out);
    } catch (const GateFailure& e) {
        err << "error: " << e.what() << "\n";
        return kQualityGate;
    } catch (const NumericalError& e) {
        err << "numerical error: " << e.what() << "\n";
        return kNumerical;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kUsage;
    }
    return kUsage;
}

}  // namespace adamoe::cli
