// Copyright (c) 2026, The adamoe Authors
// SPDX-License-Identifier: Apache-2.0

#include "adamoe/experiment.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <nlohmann/json.hpp>
#include <optional>

#include "adamoe/errors.hpp"

namespace adamoe {

namespace {

constexpr std::uint64_t kPretrainStream = 1;
constexpr std::uint64_t kFinetuneStream = 2;
constexpr std::uint64_t kUpcycleStream = 3;
constexpr std::uint64_t kEvalStream = 4;
constexpr std::uint64_t kBalanceStream = 5;

std::string pct(double v) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%.1f", 100.0 * v);
    return buf;
}

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

PolicyModel train_model(PolicyModel model, const TrainConfig& base, std::size_t steps, std::uint64_t seed,
                        const std::vector<TrajectoryStep>& data, bool use_ema, double* final_fm) {
    TrainConfig tc = base;
    tc.total_steps = steps;
    tc.seed = seed;
    Trainer trainer(std::move(model), tc, data);
    double fm = 0.0;
    for (std::size_t s = 0; s < steps; ++s) fm = trainer.step().loss_fm;
    if (final_fm) *final_fm = fm;
    return use_ema ? trainer.ema_model() : clone_model(trainer.model());
}

}  // namespace

std::string GridCell::label() const {
    if (variant == Variant::Dense) return "dense";
    char buf[96];
    std::snprintf(buf, sizeof buf, "%s K=%zu k=%zu lambda=%g", variant_name(variant).c_str(), num_experts, top_k,
                  lambda_balance);
    return buf;
}

ModelConfig cell_model_config(const ModelConfig& base, const GridCell& cell) {
    ModelConfig m = base;
    m.variant = cell.variant;
    m.num_experts = cell.num_experts;
    m.top_k = cell.top_k;
    m.validate();
    return m;
}

ExperimentResults run_experiment(const ExperimentSpec& spec, const std::vector<TrajectoryStep>& data,
                                 const ProgressFn& progress) {
    if (spec.cells.empty()) throw ConfigError("experiment grid has no cells");
    if (spec.seeds.empty()) throw ConfigError("experiment grid has no seeds");
    if (spec.tasks.empty()) throw ConfigError("experiment grid has no tasks");
    auto log = [&](const std::string& s) {
        if (progress) progress(s);
    };

    ExperimentResults res;
    for (const auto& t : spec.tasks) res.tasks.push_back(t.name);

    for (std::uint64_t seed : spec.seeds) {
        std::optional<PolicyModel> pretrained;
        if (spec.pretrain_steps > 0) {
            ModelConfig dense_cfg = spec.model;
            dense_cfg.variant = Variant::Dense;
            Rng init(derive_seed(seed, kPretrainStream, 0));
            log("seed " + std::to_string(seed) + ": pretraining dense for " + std::to_string(spec.pretrain_steps) +
                " steps");
            TrainConfig tc = spec.train;
            tc.lambda_balance = 0.0;
            pretrained = train_model(PolicyModel::create(dense_cfg, init), tc, spec.pretrain_steps,
                                     derive_seed(seed, kPretrainStream, 1), data, false, nullptr);
        }
        for (std::size_t ci = 0; ci < spec.cells.size(); ++ci) {
            const GridCell& cell = spec.cells[ci];
            CellRun run;
            run.cell = cell;
            run.seed = seed;
            try {
                const ModelConfig mcfg = cell_model_config(spec.model, cell);
                Rng init(derive_seed(seed, kUpcycleStream, ci));
                PolicyModel start = !pretrained                     ? PolicyModel::create(mcfg, init)
                                    : cell.variant == Variant::Dense ? clone_model(*pretrained)
                                                                     : PolicyModel::upcycle(*pretrained, mcfg, init);
                TrainConfig tc = spec.train;
                tc.lambda_balance = cell.lambda_balance;
                log("seed " + std::to_string(seed) + ": training " + cell.label());
                const PolicyModel trained = train_model(std::move(start), tc, spec.finetune_steps,
                                                        derive_seed(seed, kFinetuneStream, ci), data, spec.eval_ema,
                                                        &run.final_loss_fm);
                if (mcfg.is_moe()) {
                    run.collapse_score =
                        balance_report(trained, data, derive_seed(seed, kBalanceStream, ci), spec.balance_samples)
                            .collapse_score;
                }
                ModelPolicy policy(trained, spec.denoise_steps);
                double sum = 0.0;
                for (const auto& task : spec.tasks) {
                    EvalConfig ec = spec.eval;
                    ec.seed = derive_seed(seed, kEvalStream);
                    run.results.push_back(evaluate(policy, task, ec));
                    sum += run.results.back().rate;
                }
                run.average = sum / static_cast<double>(spec.tasks.size());
                log("  average success " + pct(run.average) + "%");
            } catch (const std::exception& e) {
                run.failed = true;
                run.error = e.what();
                log("  cell failed: " + run.error);
            }
            res.runs.push_back(std::move(run));
        }
    }
    res.rows = aggregate_runs(res.runs, spec.tasks.size());
    return res;
}

std::vector<ResultRow> aggregate_runs(const std::vector<CellRun>& runs, std::size_t num_tasks) {
    std::vector<ResultRow> rows;
    std::vector<std::vector<std::size_t>> succ, trials;
    for (const auto& run : runs) {
        auto it = std::find_if(rows.begin(), rows.end(), [&](const ResultRow& r) { return r.cell == run.cell; });
        if (it == rows.end()) {
            ResultRow r;
            r.cell = run.cell;
            r.rates.assign(num_tasks, 0.0);
            rows.push_back(r);
            succ.emplace_back(num_tasks, 0);
            trials.emplace_back(num_tasks, 0);
            it = rows.end() - 1;
        }
        const std::size_t idx = static_cast<std::size_t>(it - rows.begin());
        if (run.failed) {
            ++it->failures;
            continue;
        }
        it->seeds.push_back(run.seed);
        for (std::size_t t = 0; t < num_tasks; ++t) {
            it->rates[t] += run.results[t].rate;
            succ[idx][t] += run.results[t].successes;
            trials[idx][t] += run.results[t].trials;
        }
    }
    for (std::size_t i = 0; i < rows.size(); ++i) {
        ResultRow& r = rows[i];
        const double n = static_cast<double>(r.seeds.size());
        double sum = 0.0;
        for (std::size_t t = 0; t < num_tasks; ++t) {
            if (n > 0) r.rates[t] /= n;
            r.ci.push_back(wilson_interval(succ[i][t], trials[i][t]));
            sum += r.rates[t];
        }
        r.average = num_tasks ? sum / static_cast<double>(num_tasks) : 0.0;
    }
    std::stable_partition(rows.begin(), rows.end(),
                          [](const ResultRow& r) { return r.cell.variant == Variant::Dense; });
    return rows;
}

std::string results_markdown(const ExperimentResults& results) {
    std::string out = "| config |";
    for (const auto& t : results.tasks) out += " " + t + " |";
    out += " average | seeds |\n|---|";
    for (std::size_t i = 0; i < results.tasks.size(); ++i) out += "---|";
    out += "---|---|\n";
    for (const auto& r : results.rows) {
        out += "| " + r.cell.label() + " |";
        for (std::size_t t = 0; t < r.rates.size(); ++t) {
            out += " " + pct(r.rates[t]) + " [" + pct(r.ci[t].lo) + ", " + pct(r.ci[t].hi) + "] |";
        }
        out += " " + pct(r.average) + " | ";
        for (std::size_t s = 0; s < r.seeds.size(); ++s) out += (s ? "," : "") + std::to_string(r.seeds[s]);
        if (r.failures) out += " (" + std::to_string(r.failures) + " failed)";
        out += " |\n";
    }
    return out;
}

std::string results_csv(const ExperimentResults& results) {
    std::string out = "config,variant,num_experts,top_k,lambda_balance";
    for (const auto& t : results.tasks) out += "," + t + "," + t + "_lo," + t + "_hi";
    out += ",average,seeds,failures\n";
    for (const auto& r : results.rows) {
        out += "\"" + r.cell.label() + "\"," + variant_name(r.cell.variant) + "," + std::to_string(r.cell.num_experts) +
               "," + std::to_string(r.cell.top_k) + "," + fmt(r.cell.lambda_balance);
        for (std::size_t t = 0; t < r.rates.size(); ++t) {
            out += "," + fmt(r.rates[t]) + "," + fmt(r.ci[t].lo) + "," + fmt(r.ci[t].hi);
        }
        out += "," + fmt(r.average) + ",";
        for (std::size_t s = 0; s < r.seeds.size(); ++s) out += (s ? ";" : "") + std::to_string(r.seeds[s]);
        out += "," + std::to_string(r.failures) + "\n";
    }
    return out;
}

std::string results_json(const ExperimentResults& results) {
    using nlohmann::json;
    json rows = json::array();
    for (const auto& r : results.rows) {
        json tasks = json::object();
        for (std::size_t t = 0; t < r.rates.size(); ++t) {
            tasks[results.tasks[t]] = {{"rate", r.rates[t]}, {"ci", {r.ci[t].lo, r.ci[t].hi}}};
        }
        rows.push_back({{"config", r.cell.label()},
                        {"variant", variant_name(r.cell.variant)},
                        {"num_experts", r.cell.num_experts},
                        {"top_k", r.cell.top_k},
                        {"lambda_balance", r.cell.lambda_balance},
                        {"tasks", tasks},
                        {"average", r.average},
                        {"seeds", r.seeds},
                        {"failures", r.failures}});
    }
    json runs = json::array();
    for (const auto& run : results.runs) {
        json per_task = json::object();
        for (const auto& e : run.results) per_task[e.task] = {{"successes", e.successes}, {"trials", e.trials}};
        runs.push_back({{"config", run.cell.label()},
                        {"seed", run.seed},
                        {"average", run.average},
                        {"final_loss_fm", run.final_loss_fm},
                        {"collapse_score", run.collapse_score},
                        {"failed", run.failed},
                        {"error", run.error},
                        {"tasks", per_task}});
    }
    return json{{"tasks", results.tasks}, {"rows", rows}, {"runs", runs}}.dump(2) + "\n";
}

}  // namespace adamoe
