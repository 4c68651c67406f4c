// Copyright (c) 2026, The adamoe Authors
// SPDX-License-Identifier: Apache-2.0

#include "adamoe/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "adamoe/errors.hpp"
#include "adamoe/rng.hpp"
#include "adamoe/training.hpp"

namespace adamoe {

namespace {

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

double entropy_of(const std::vector<double>& p) {
    double h = 0.0;
    for (double v : p) {
        if (v > 0.0) h -= v * std::log(v);
    }
    return h;
}

struct Accumulator {
    std::vector<double> counts;
    std::vector<double> prob_sum;
    std::size_t tokens = 0;
    std::size_t top_k = 1;

    void add(const RoutingDecision& d) {
        if (counts.empty()) {
            counts.assign(d.num_experts, 0.0);
            prob_sum.assign(d.num_experts, 0.0);
            top_k = d.top_k;
        }
        for (std::size_t e : d.selected) counts[e] += 1.0;
        const auto p = d.probs.data();
        for (std::size_t t = 0; t < d.num_tokens; ++t) {
            for (std::size_t e = 0; e < d.num_experts; ++e) prob_sum[e] += p[t * d.num_experts + e];
        }
        tokens += d.num_tokens;
    }

    LayerBalance finish(std::size_t layer) const {
        LayerBalance lb;
        lb.layer = layer;
        const double n = static_cast<double>(tokens);
        for (std::size_t e = 0; e < counts.size(); ++e) {
            lb.fraction.push_back(counts[e] / n);
            lb.mean_prob.push_back(prob_sum[e] / n);
        }
        lb.collapse_score = lb.fraction.empty() ? 0.0 : *std::max_element(lb.fraction.begin(), lb.fraction.end());
        std::vector<double> share;
        for (double f : lb.fraction) share.push_back(f / static_cast<double>(top_k));
        lb.entropy = entropy_of(share);
        return lb;
    }
};

void finalize(BalanceReport& r) {
    r.collapse_score = 0.0;
    for (const auto& l : r.layers) r.collapse_score = std::max(r.collapse_score, l.collapse_score);
    r.collapsed = r.collapse_score > BalanceReport::kCollapseThreshold;
}

/// Fixed ramp from near-white to dark blue.
std::string ramp(double v) {
    const double t = std::clamp(v, 0.0, 1.0);
    auto ch = [t](double a, double b) { return static_cast<int>(std::lround(a + (b - a) * t)); };
    char buf[8];
    std::snprintf(buf, sizeof buf, "#%02x%02x%02x", ch(247, 8), ch(251, 48), ch(255, 107));
    return buf;
}

}  // namespace

std::vector<double> frame_intensity(const std::vector<RoutingDecision>& steps) {
    if (steps.empty()) throw ContractError("frame_intensity: no denoising steps");
    const std::size_t K = steps.front().num_experts;
    std::vector<double> out(K, 0.0);
    for (const auto& d : steps) {
        if (d.num_experts != K) throw ContractError("frame_intensity: expert count changed between steps");
        if (d.num_tokens == 0) throw ContractError("frame_intensity: step with no tokens");
        std::vector<double> counts(K, 0.0);
        for (std::size_t e : d.selected) counts[e] += 1.0;
        for (std::size_t e = 0; e < K; ++e) out[e] += counts[e] / static_cast<double>(d.num_tokens);
    }
    for (double& v : out) v /= static_cast<double>(steps.size());
    return out;
}

std::size_t default_analysis_layer(const ModelConfig& cfg) {
    std::vector<std::size_t> moe;
    for (std::size_t l = 0; l < cfg.layers; ++l) {
        if (cfg.layer_is_moe(l)) moe.push_back(l);
    }
    if (moe.empty()) throw ConfigError("model has no MoE layers to analyse");
    return moe[moe.size() / 2];
}

IntensityTrace expert_usage_intensity(const PolicyModel& model, const std::vector<Observation>& frames,
                                      std::size_t layer, std::size_t denoise_steps, std::uint64_t seed) {
    const ModelConfig& cfg = model.config();
    if (layer >= cfg.layers || !cfg.layer_is_moe(layer)) {
        throw ConfigError("layer " + std::to_string(layer) + " is not an MoE layer (model has " +
                          std::to_string(cfg.layers) + " layers, variant " + variant_name(cfg.variant) + ")");
    }
    IntensityTrace trace;
    trace.layer = layer;
    trace.top_k = cfg.top_k;
    trace.num_experts = cfg.num_experts;
    trace.denoise_steps = denoise_steps;
    trace.seed = seed;
    if (!frames.empty()) trace.task_id = frames.front().task_id;
    for (std::size_t f = 0; f < frames.size(); ++f) {
        std::vector<RoutingDecision> steps;
        const DecisionObserver observer = [&](std::size_t, const PolicyOutput& out) {
            for (std::size_t i = 0; i < out.decision_layers.size(); ++i) {
                if (out.decision_layers[i] == layer) steps.push_back(out.decisions[i]);
            }
        };
        Rng rng(derive_seed(seed, f));
        model.predict_action_chunk(frames[f], rng, denoise_steps, observer);
        trace.values.push_back(frame_intensity(steps));
    }
    return trace;
}

std::vector<Observation> rollout_frames(ChunkPolicy& policy, const TaskSpec& spec, std::uint64_t seed,
                                        std::size_t execute) {
    const std::size_t exec = std::max<std::size_t>(1, std::min(execute, policy.horizon()));
    Rng rng(derive_seed(seed, 0x726f6c6cULL));
    EnvState s = env_reset(spec, seed);
    std::vector<Observation> frames;
    while (!episode_done(spec, s)) {
        const ActionChunk chunk = policy.plan(observe(s), rng);
        for (std::size_t h = 0; h < exec && !episode_done(spec, s); ++h) {
            frames.push_back(observe(s));
            Action a{};
            for (std::size_t j = 0; j < kActionDim; ++j) a[j] = chunk.at(h, j);
            s = env_step(spec, s, a);
        }
    }
    return frames;
}

BalanceReport balance_from_decisions(const std::vector<RoutingDecision>& decisions, std::size_t layer) {
    Accumulator acc;
    for (const auto& d : decisions) acc.add(d);
    BalanceReport r;
    r.tokens = acc.tokens;
    if (acc.tokens > 0) r.layers.push_back(acc.finish(layer));
    finalize(r);
    return r;
}

BalanceReport balance_report(const PolicyModel& model, const std::vector<TrajectoryStep>& data, std::uint64_t seed,
                             std::size_t max_samples, std::size_t batch_size) {
    if (data.empty()) throw ContractError("balance_report: empty dataset");
    const std::size_t n = max_samples == 0 ? data.size() : std::min(max_samples, data.size());
    const std::size_t stride = std::max<std::size_t>(1, data.size() / n);
    NoGradGuard no_grad;
    Rng rng(seed);
    std::vector<Accumulator> acc(model.config().layers);
    std::vector<bool> seen(model.config().layers, false);
    std::size_t tokens = 0;
    for (std::size_t start = 0; start < n; start += batch_size) {
        VelocityBatch vb;
        for (std::size_t i = start; i < std::min(n, start + batch_size); ++i) {
            const TrajectoryStep& st = data[i * stride];
            const FlowSample fs = make_flow_sample(st.chunk, rng);
            vb.obs.push_back(st.obs);
            vb.noisy.push_back(fs.noisy);
            vb.tau.push_back(fs.tau);
        }
        const PolicyOutput out = model.forward(vb);
        for (std::size_t i = 0; i < out.decisions.size(); ++i) {
            acc[out.decision_layers[i]].add(out.decisions[i]);
            seen[out.decision_layers[i]] = true;
            if (i == 0) tokens += out.decisions[i].num_tokens;
        }
    }
    BalanceReport r;
    r.tokens = tokens;
    for (std::size_t l = 0; l < acc.size(); ++l) {
        if (seen[l]) r.layers.push_back(acc[l].finish(l));
    }
    finalize(r);
    return r;
}

std::string intensity_csv(const IntensityTrace& trace) {
    std::string out = "frame,layer,expert,intensity\n";
    for (std::size_t f = 0; f < trace.values.size(); ++f) {
        for (std::size_t e = 0; e < trace.values[f].size(); ++e) {
            out += std::to_string(f) + "," + std::to_string(trace.layer) + "," + std::to_string(e) + "," +
                   fmt(trace.values[f][e]) + "\n";
        }
    }
    return out;
}

IntensityTrace parse_intensity_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line != "frame,layer,expert,intensity") {
        throw IoError("intensity CSV: unexpected header");
    }
    IntensityTrace trace;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::size_t frame = 0, layer = 0, expert = 0;
        double v = 0.0;
        char rest[64];
        if (std::sscanf(line.c_str(), "%zu,%zu,%zu,%63s", &frame, &layer, &expert, rest) != 4) {
            throw IoError("intensity CSV: malformed row '" + line + "'");
        }
        v = std::strtod(rest, nullptr);
        trace.layer = layer;
        if (trace.values.size() <= frame) trace.values.resize(frame + 1);
        auto& row = trace.values[frame];
        if (row.size() <= expert) row.resize(expert + 1, 0.0);
        row[expert] = v;
    }
    if (!trace.values.empty()) trace.num_experts = trace.values.front().size();
    return trace;
}

std::string intensity_svg(const IntensityTrace& trace) {
    constexpr int kCell = 12;
    constexpr int kLeft = 40;
    constexpr int kTop = 10;
    const int frames = static_cast<int>(trace.values.size());
    const int experts = static_cast<int>(trace.num_experts);
    const int width = kLeft + std::max(frames, 1) * kCell + 10;
    const int height = kTop + std::max(experts, 1) * kCell + 30;

    std::string out;
    char buf[256];
    std::snprintf(buf, sizeof buf,
                  "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%d\" height=\"%d\" viewBox=\"0 0 %d %d\">\n",
                  width, height, width, height);
    out += buf;
    std::snprintf(buf, sizeof buf,
                  "<!-- expert usage intensity: layer=%zu top_k=%zu experts=%zu denoise_steps=%zu task=%zu "
                  "seed=%llu frames=%d -->\n",
                  trace.layer, trace.top_k, trace.num_experts, trace.denoise_steps, trace.task_id,
                  static_cast<unsigned long long>(trace.seed), frames);
    out += buf;
    out += "<rect width=\"100%\" height=\"100%\" fill=\"#ffffff\"/>\n";
    for (int e = 0; e < experts; ++e) {
        std::snprintf(buf, sizeof buf, "<text x=\"2\" y=\"%d\" font-size=\"9\" font-family=\"monospace\">E%d</text>\n",
                      kTop + e * kCell + 9, e);
        out += buf;
    }
    for (int f = 0; f < frames; ++f) {
        for (int e = 0; e < experts; ++e) {
            const double v = trace.values[f][e];
            std::snprintf(buf, sizeof buf,
                          "<rect x=\"%d\" y=\"%d\" width=\"%d\" height=\"%d\" fill=\"%s\"><title>t=%d e=%d %.6f</title>"
                          "</rect>\n",
                          kLeft + f * kCell, kTop + e * kCell, kCell, kCell, ramp(v).c_str(), f, e, v);
            out += buf;
        }
    }
    std::snprintf(buf, sizeof buf,
                  "<text x=\"%d\" y=\"%d\" font-size=\"9\" font-family=\"monospace\">frame (layer %zu)</text>\n",
                  kLeft, kTop + experts * kCell + 18, trace.layer);
    out += buf;
    out += "</svg>\n";
    return out;
}

std::string balance_json(const BalanceReport& report) {
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& l : report.layers) {
        layers.push_back({{"layer", l.layer},
                          {"fraction", l.fraction},
                          {"mean_prob", l.mean_prob},
                          {"collapse_score", l.collapse_score},
                          {"entropy", l.entropy}});
    }
    const nlohmann::json j = {{"tokens", report.tokens},
                              {"collapse_score", report.collapse_score},
                              {"collapsed", report.collapsed},
                              {"threshold", BalanceReport::kCollapseThreshold},
                              {"layers", layers}};
    return j.dump(2) + "\n";
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
    if (!out) throw IoError("failed writing " + path.string());
}

void emit_csv(const IntensityTrace& trace, const std::filesystem::path& path) {
    write_text_file(path, intensity_csv(trace));
}

void emit_svg_heatmap(const IntensityTrace& trace, const std::filesystem::path& path) {
    write_text_file(path, intensity_svg(trace));
}

std::filesystem::path intensity_stem(const std::filesystem::path& root, const std::string& run_id,
                                     const std::string& task, std::size_t layer) {
    return root / run_id / task / ("layer" + std::to_string(layer));
}

}  // namespace adamoe
