// Copyright (c) 2026, The adamoe Authors
// SPDX-License-Identifier: Apache-2.0

#include "adamoe/dataset.hpp"

#include <cstdio>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "adamoe/errors.hpp"
#include "adamoe/rng.hpp"

namespace adamoe {

using nlohmann::json;

namespace {

void put_number(std::string& out, double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    out += buf;
}

void put_array(std::string& out, const std::vector<double>& v) {
    out += '[';
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += ',';
        put_number(out, v[i]);
    }
    out += ']';
}

std::vector<double> to_doubles(const json& j) {
    std::vector<double> out;
    out.reserve(j.size());
    for (const auto& v : j) out.push_back(v.get<double>());
    return out;
}

}  // namespace

Trajectory scripted_expert(const TaskSpec& spec, std::uint64_t seed, std::size_t horizon) {
    if (horizon == 0) throw ConfigError("scripted_expert: horizon must be positive");
    EnvState s = env_reset(spec, seed);
    std::vector<Observation> observations;
    std::vector<Action> actions;
    while (!episode_done(spec, s)) {
        Observation obs = observe(s);
        const Action a = expert_action(spec, obs);
        observations.push_back(std::move(obs));
        actions.push_back(a);
        s = env_step(spec, s, a);
    }

    Trajectory traj;
    traj.task_id = spec.task_id;
    traj.seed = seed;
    traj.success = s.success;
    for (std::size_t t = 0; t < observations.size(); ++t) {
        ActionChunk chunk = ActionChunk::zeros(horizon, kActionDim);
        for (std::size_t h = 0; h < horizon; ++h) {
            const Action& a = actions[std::min(t + h, actions.size() - 1)];
            for (std::size_t j = 0; j < kActionDim; ++j) chunk.at(h, j) = a[j];
        }
        traj.steps.push_back({std::move(observations[t]), std::move(chunk)});
    }
    return traj;
}

bool replay_matches(const Trajectory& traj) {
    const TaskSpec& spec = task_by_id(traj.task_id);
    EnvState s = env_reset(spec, traj.seed);
    for (const auto& step : traj.steps) {
        if (episode_done(spec, s) || !(observe(s) == step.obs)) return false;
        Action a{};
        for (std::size_t j = 0; j < kActionDim; ++j) a[j] = step.chunk.at(0, j);
        s = env_step(spec, s, a);
    }
    return episode_done(spec, s) && s.success == traj.success;
}

std::string trajectory_to_json(const Trajectory& traj) {
    std::string out;
    out += "{\"task_id\":" + std::to_string(traj.task_id);
    out += ",\"seed\":" + std::to_string(traj.seed);
    out += ",\"success\":";
    out += traj.success ? "true" : "false";
    out += ",\"steps\":[";
    for (std::size_t t = 0; t < traj.steps.size(); ++t) {
        const auto& st = traj.steps[t];
        if (t) out += ',';
        out += "{\"obs\":{\"state\":";
        put_array(out, st.obs.state);
        out += ",\"scene\":";
        put_array(out, st.obs.scene);
        out += ",\"task_id\":" + std::to_string(st.obs.task_id);
        out += "},\"chunk\":[";
        for (std::size_t h = 0; h < st.chunk.horizon; ++h) {
            if (h) out += ',';
            out += '[';
            for (std::size_t j = 0; j < st.chunk.action_dim; ++j) {
                if (j) out += ',';
                put_number(out, st.chunk.at(h, j));
            }
            out += ']';
        }
        out += "]}";
    }
    out += "]}";
    return out;
}

Trajectory trajectory_from_json(const std::string& line) {
    Trajectory traj;
    try {
        const json j = json::parse(line);
        traj.task_id = j.at("task_id").get<std::size_t>();
        traj.seed = j.at("seed").get<std::uint64_t>();
        traj.success = j.at("success").get<bool>();
        for (const auto& sj : j.at("steps")) {
            TrajectoryStep st;
            const auto& oj = sj.at("obs");
            st.obs.state = to_doubles(oj.at("state"));
            st.obs.scene = to_doubles(oj.at("scene"));
            st.obs.task_id = oj.at("task_id").get<std::size_t>();
            const auto& cj = sj.at("chunk");
            if (cj.empty()) throw IoError("trajectory step with an empty chunk");
            st.chunk = ActionChunk::zeros(cj.size(), cj.at(0).size());
            for (std::size_t h = 0; h < cj.size(); ++h) {
                if (cj[h].size() != st.chunk.action_dim) throw IoError("ragged action chunk");
                for (std::size_t a = 0; a < st.chunk.action_dim; ++a) st.chunk.at(h, a) = cj[h][a].get<double>();
            }
            traj.steps.push_back(std::move(st));
        }
    } catch (const json::exception& e) {
        throw IoError(std::string("malformed trajectory record: ") + e.what());
    }
    return traj;
}

std::size_t DatasetManifest::total_records() const {
    std::size_t n = 0;
    for (const auto& t : tasks) n += t.written;
    return n;
}

std::size_t DatasetManifest::total_failures() const {
    std::size_t n = 0;
    for (const auto& t : tasks) n += t.failures;
    return n;
}

std::size_t DatasetManifest::total_requested() const {
    std::size_t n = 0;
    for (const auto& t : tasks) n += t.requested;
    return n;
}

std::filesystem::path manifest_path(const std::filesystem::path& dataset) {
    std::filesystem::path p = dataset;
    p.replace_extension(".manifest.json");
    return p;
}

std::string manifest_to_json(const DatasetManifest& m) {
    json tasks = json::array();
    for (const auto& t : m.tasks) {
        tasks.push_back({{"name", t.name},
                         {"task_id", t.task_id},
                         {"requested", t.requested},
                         {"written", t.written},
                         {"failures", t.failures},
                         {"success_rate", t.success_rate()},
                         {"seeds", t.seeds}});
    }
    const json j = {{"generator_version", m.generator_version},
                    {"master_seed", m.master_seed},
                    {"horizon", m.horizon},
                    {"records", m.total_records()},
                    {"tasks", tasks}};
    return j.dump(2) + "\n";
}

DatasetManifest read_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open manifest " + path.string());
    DatasetManifest m;
    try {
        const json j = json::parse(in);
        m.generator_version = j.at("generator_version").get<std::string>();
        m.master_seed = j.at("master_seed").get<std::uint64_t>();
        m.horizon = j.at("horizon").get<std::size_t>();
        for (const auto& tj : j.at("tasks")) {
            TaskCount t;
            t.name = tj.at("name").get<std::string>();
            t.task_id = tj.at("task_id").get<std::size_t>();
            t.requested = tj.at("requested").get<std::size_t>();
            t.written = tj.at("written").get<std::size_t>();
            t.failures = tj.at("failures").get<std::size_t>();
            t.seeds = tj.at("seeds").get<std::vector<std::uint64_t>>();
            m.tasks.push_back(std::move(t));
        }
    } catch (const json::exception& e) {
        throw IoError("malformed manifest " + path.string() + ": " + e.what());
    }
    return m;
}

DatasetManifest generate_dataset(const std::vector<TaskSpec>& specs, std::size_t per_task, std::uint64_t seed,
                                 std::size_t horizon, const std::filesystem::path& out) {
    if (per_task == 0) throw ConfigError("generate_dataset: count must be at least 1");
    if (specs.empty()) throw ConfigError("generate_dataset: no tasks given");
    if (out.has_parent_path()) std::filesystem::create_directories(out.parent_path());
    std::ofstream file(out, std::ios::binary | std::ios::trunc);
    if (!file) throw IoError("cannot write dataset " + out.string());

    DatasetManifest m;
    m.generator_version = kGeneratorVersion;
    m.master_seed = seed;
    m.horizon = horizon;
    for (const auto& spec : specs) {
        TaskCount tc;
        tc.name = spec.name;
        tc.task_id = spec.task_id;
        tc.requested = per_task;
        for (std::size_t i = 0; i < per_task; ++i) {
            const std::uint64_t ep_seed = derive_seed(seed, spec.task_id, i);
            const Trajectory traj = scripted_expert(spec, ep_seed, horizon);
            if (!traj.success) {
                ++tc.failures;
                continue;
            }
            file << trajectory_to_json(traj) << '\n';
            ++tc.written;
            tc.seeds.push_back(ep_seed);
        }
        m.tasks.push_back(std::move(tc));
    }
    file.close();
    if (!file) throw IoError("failed writing dataset " + out.string());

    const auto mpath = manifest_path(out);
    std::ofstream mf(mpath, std::ios::binary | std::ios::trunc);
    if (!mf) throw IoError("cannot write manifest " + mpath.string());
    mf << manifest_to_json(m);
    if (!mf) throw IoError("failed writing manifest " + mpath.string());
    return m;
}

std::vector<Trajectory> load_dataset(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open dataset " + path.string());
    std::vector<Trajectory> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            out.push_back(trajectory_from_json(line));
        } catch (const IoError& e) {
            throw IoError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

std::vector<TrajectoryStep> dataset_samples(const std::vector<Trajectory>& data, std::size_t horizon) {
    std::vector<TrajectoryStep> out;
    for (const auto& traj : data) {
        for (const auto& st : traj.steps) {
            if (st.chunk.horizon < horizon) {
                throw DimensionError("dataset chunk horizon " + std::to_string(st.chunk.horizon) +
                                     " shorter than model horizon " + std::to_string(horizon));
            }
            TrajectoryStep s;
            s.obs = st.obs;
            s.chunk = ActionChunk::zeros(horizon, st.chunk.action_dim);
            std::copy_n(st.chunk.values.begin(), horizon * st.chunk.action_dim, s.chunk.values.begin());
            s.chunk = normalize_chunk(s.chunk);
            out.push_back(std::move(s));
        }
    }
    return out;
}

}  // namespace adamoe
