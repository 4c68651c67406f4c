// Copyright (c) 2026, The adamoe Authors
// SPDX-License-Identifier: Apache-2.0
//
// Layered key/value configuration: defaults < file < ADAMOE_* environment <
// explicit overrides. Keys are dotted (model.d_model); a file may also group
// them under [section] headers. Unknown keys are errors at every layer.

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "adamoe/bench_env.hpp"
#include "adamoe/evaluate.hpp"
#include "adamoe/policy.hpp"
#include "adamoe/training.hpp"

namespace adamoe {

struct ConfigKey {
    std::string key;
    std::string default_value;
    std::string help;
};

class RunConfig {
  public:
    RunConfig();

    static const std::vector<ConfigKey>& known_keys();
    static bool is_known(const std::string& key);
    /// model.d_model -> ADAMOE_MODEL_D_MODEL
    static std::string env_name(const std::string& key);

    void set(const std::string& key, const std::string& value, const std::string& source);
    void load_file(const std::filesystem::path& path);
    void parse_text(const std::string& text, const std::string& source);
    /// Reads every ADAMOE_* variable from `env` (a null-terminated environ array).
    void load_env(char** env);

    const std::string& get(const std::string& key) const;
    const std::string& source(const std::string& key) const;
    std::size_t get_size(const std::string& key) const;
    std::uint64_t get_u64(const std::string& key) const;
    double get_double(const std::string& key) const;
    bool get_bool(const std::string& key) const;
    std::vector<std::string> get_list(const std::string& key) const;

    ModelConfig model_config() const;
    TrainConfig train_config() const;
    EvalConfig eval_config() const;
    std::vector<TaskSpec> tasks() const;

    /// Resolved values with their source layer, sorted by key.
    std::string to_json() const;

  private:
    struct Entry {
        std::string value;
        std::string source;
    };
    std::map<std::string, Entry> values_;
};

}  // namespace adamoe
