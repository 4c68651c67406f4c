// Copyright (c) 2026, The adamoe Authors
// SPDX-License-Identifier: Apache-2.0

#include "adamoe/run_config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "adamoe/errors.hpp"

namespace adamoe {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::vector<ConfigKey> build_keys() {
    const ModelConfig m;
    const TrainConfig t;
    const EvalConfig e;
    auto s = [](auto v) { return std::to_string(v); };
    auto d = [](double v) {
        std::ostringstream os;
        os << v;
        return os.str();
    };
    return {
        {"seed", "0", "master seed"},
        {"out", "out", "output directory"},
        {"tasks", "reach,pick-place,sequential", "comma-separated task names"},
        {"model.d_model", s(m.d_model), "token width"},
        {"model.d_ff", s(m.d_ff), "expert hidden width"},
        {"model.layers", s(m.layers), "transformer blocks"},
        {"model.heads", s(m.heads), "attention heads"},
        {"model.horizon", s(m.horizon), "action chunk length H"},
        {"model.tau_embed", s(m.tau_embed), "sinusoidal tau embedding width"},
        {"model.variant", "adamoe", "dense | vanilla | csmoe | adamoe"},
        {"model.num_experts", s(m.num_experts), "routed experts K"},
        {"model.top_k", s(m.top_k), "experts per token k"},
        {"model.alpha", d(m.alpha), "balance-loss coefficient alpha"},
        {"model.moe_layers", "", "per-layer MoE mask such as 1101; empty = all"},
        {"train.batch_size", s(t.batch_size), "samples per step"},
        {"train.total_steps", s(t.total_steps), "optimizer steps"},
        {"train.peak_lr", d(t.peak_lr), "base peak learning rate"},
        {"train.router_lr_ratio", d(t.router_lr_ratio), "router-group rate / base rate"},
        {"train.beta1", d(t.beta1), "AdamW beta1"},
        {"train.beta2", d(t.beta2), "AdamW beta2"},
        {"train.weight_decay", d(t.weight_decay), "decoupled weight decay"},
        {"train.grad_clip_norm", d(t.grad_clip_norm), "global gradient norm limit"},
        {"train.ema_decay", d(t.ema_decay), "EMA decay"},
        {"train.lambda_balance", d(t.lambda_balance), "balance-loss weight"},
        {"train.warmup_fraction", d(t.warmup_fraction), "warmup share of total steps"},
        {"train.checkpoint_every", "0", "steps between checkpoints; 0 = final only"},
        {"train.preset", "desk", "desk | paper"},
        {"eval.trials", s(e.trials), "episodes per task"},
        {"eval.execute", s(e.execute), "actions executed per chunk"},
        {"eval.denoise_steps", "10", "Euler steps N"},
        {"eval.use_ema", "true", "evaluate EMA weights"},
        {"data.count", "100", "trajectories per task"},
        {"data.horizon", "50", "stored chunk length"},
        {"grid.variants", "dense,vanilla,adamoe", "variants in the ablation grid"},
        {"grid.num_experts", "4", "comma-separated K values"},
        {"grid.top_k", "1", "comma-separated k values"},
        {"grid.lambda_balance", "0.01", "comma-separated lambda values"},
        {"grid.seeds", "0", "comma-separated seeds"},
        {"grid.pretrain_steps", "0", "dense steps before upcycling"},
    };
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const std::string& want) {
    throw ConfigError("config key " + key + ": '" + value + "' is not " + want);
}

}  // namespace

const std::vector<ConfigKey>& RunConfig::known_keys() {
    static const std::vector<ConfigKey> keys = build_keys();
    return keys;
}

bool RunConfig::is_known(const std::string& key) {
    const auto& keys = known_keys();
    return std::any_of(keys.begin(), keys.end(), [&](const ConfigKey& k) { return k.key == key; });
}

std::string RunConfig::env_name(const std::string& key) {
    std::string out = "ADAMOE_";
    for (char c : key) out += c == '.' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    return out;
}

RunConfig::RunConfig() {
    for (const auto& k : known_keys()) values_[k.key] = {k.default_value, "default"};
}

void RunConfig::set(const std::string& key, const std::string& value, const std::string& source) {
    if (!is_known(key)) {
        throw ConfigError("unknown config key '" + key + "' (from " + source + ")");
    }
    values_[key] = {value, source};
}

void RunConfig::parse_text(const std::string& text, const std::string& source) {
    std::istringstream in(text);
    std::string line, section;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const std::string where = source + ":" + std::to_string(lineno);
        if (line.front() == '[') {
            if (line.back() != ']') throw ConfigError(where + ": malformed section header");
            section = trim(line.substr(1, line.size() - 2));
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError(where + ": expected key = value");
        std::string key = trim(line.substr(0, eq));
        if (!section.empty()) key = section + "." + key;
        set(key, trim(line.substr(eq + 1)), where);
    }
}

void RunConfig::load_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    parse_text(ss.str(), path.string());
}

void RunConfig::load_env(char** env) {
    if (!env) return;
    std::map<std::string, std::string> by_env;
    for (const auto& k : known_keys()) by_env[env_name(k.key)] = k.key;
    for (char** e = env; *e; ++e) {
        const std::string entry(*e);
        if (entry.rfind("ADAMOE_", 0) != 0) continue;
        const auto eq = entry.find('=');
        const std::string name = entry.substr(0, eq);
        const std::string value = eq == std::string::npos ? "" : entry.substr(eq + 1);
        const auto it = by_env.find(name);
        if (it == by_env.end()) throw ConfigError("unknown config environment variable " + name);
        set(it->second, value, "env " + name);
    }
}

const std::string& RunConfig::get(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
    return it->second.value;
}

const std::string& RunConfig::source(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
    return it->second.source;
}

std::uint64_t RunConfig::get_u64(const std::string& key) const {
    const std::string& v = get(key);
    std::uint64_t out = 0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size() || v.empty()) bad_value(key, v, "an unsigned integer");
    return out;
}

std::size_t RunConfig::get_size(const std::string& key) const { return static_cast<std::size_t>(get_u64(key)); }

double RunConfig::get_double(const std::string& key) const {
    const std::string& v = get(key);
    try {
        std::size_t used = 0;
        const double d = std::stod(v, &used);
        if (used != v.size()) bad_value(key, v, "a number");
        return d;
    } catch (const std::logic_error&) {
        bad_value(key, v, "a number");
    }
}

bool RunConfig::get_bool(const std::string& key) const {
    std::string v = get(key);
    std::transform(v.begin(), v.end(), v.begin(), [](unsigned char c) { return std::tolower(c); });
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    bad_value(key, get(key), "a boolean");
}

std::vector<std::string> RunConfig::get_list(const std::string& key) const {
    std::vector<std::string> out;
    std::istringstream in(get(key));
    std::string item;
    while (std::getline(in, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

ModelConfig RunConfig::model_config() const {
    ModelConfig m;
    m.d_model = get_size("model.d_model");
    m.d_ff = get_size("model.d_ff");
    m.layers = get_size("model.layers");
    m.heads = get_size("model.heads");
    m.horizon = get_size("model.horizon");
    m.tau_embed = get_size("model.tau_embed");
    m.action_dim = kActionDim;
    m.state_dim = kStateDim;
    m.scene_dim = kSceneDim;
    m.num_tasks = task_registry().size();
    try {
        m.variant = parse_variant(get("model.variant"));
    } catch (const Error& e) {
        throw ConfigError(std::string("config key model.variant: ") + e.what());
    }
    m.num_experts = get_size("model.num_experts");
    m.top_k = get_size("model.top_k");
    m.alpha = get_double("model.alpha");
    for (char c : get("model.moe_layers")) {
        if (c != '0' && c != '1') bad_value("model.moe_layers", get("model.moe_layers"), "a 0/1 mask");
        m.moe_layers.push_back(c == '1');
    }
    m.validate();
    return m;
}

TrainConfig RunConfig::train_config() const {
    const std::string preset = get("train.preset");
    TrainConfig t;
    if (preset == "paper") {
        t = TrainConfig::paper_preset();
    } else if (preset != "desk") {
        bad_value("train.preset", preset, "desk or paper");
    }
    auto pick_size = [&](const char* key, std::size_t& field) {
        if (preset == "desk" || source(key) != "default") field = get_size(key);
    };
    auto pick_double = [&](const char* key, double& field) {
        if (preset == "desk" || source(key) != "default") field = get_double(key);
    };
    pick_size("train.batch_size", t.batch_size);
    pick_size("train.total_steps", t.total_steps);
    pick_double("train.peak_lr", t.peak_lr);
    pick_double("train.router_lr_ratio", t.router_lr_ratio);
    pick_double("train.beta1", t.beta1);
    pick_double("train.beta2", t.beta2);
    pick_double("train.weight_decay", t.weight_decay);
    pick_double("train.grad_clip_norm", t.grad_clip_norm);
    pick_double("train.ema_decay", t.ema_decay);
    pick_double("train.lambda_balance", t.lambda_balance);
    pick_double("train.warmup_fraction", t.warmup_fraction);
    t.seed = get_u64("seed");
    t.validate();
    return t;
}

EvalConfig RunConfig::eval_config() const {
    EvalConfig e;
    e.trials = get_size("eval.trials");
    e.execute = get_size("eval.execute");
    e.seed = get_u64("seed");
    if (e.trials == 0) throw ConfigError("config key eval.trials must be at least 1");
    if (e.execute == 0) throw ConfigError("config key eval.execute must be at least 1");
    return e;
}

std::vector<TaskSpec> RunConfig::tasks() const {
    std::vector<TaskSpec> out;
    for (const auto& name : get_list("tasks")) out.push_back(find_task(name));
    if (out.empty()) throw ConfigError("config key tasks is empty (known: " + task_names() + ")");
    return out;
}

std::string RunConfig::to_json() const {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [key, entry] : values_) j[key] = {{"value", entry.value}, {"source", entry.source}};
    return j.dump(2) + "\n";
}

}  // namespace adamoe
