// Copyright (c) 2026, The adamoe Authors
// SPDX-License-Identifier: Apache-2.0

#include "adamoe/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <nlohmann/json.hpp>
#include <sstream>

#include "adamoe/errors.hpp"

namespace adamoe {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'A', 'M', 'O', 'E'};

template <typename T>
void put(std::string& out, T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.append(buf, sizeof(T));
}

class Reader {
  public:
    explicit Reader(const std::string& bytes) : b_(bytes) {}

    template <typename T>
    T get() {
        need(sizeof(T));
        T v;
        std::memcpy(&v, b_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }

    std::string str(std::size_t n) {
        need(n);
        std::string s = b_.substr(pos_, n);
        pos_ += n;
        return s;
    }

    bool done() const { return pos_ == b_.size(); }

  private:
    void need(std::size_t n) const {
        if (b_.size() - pos_ < n) throw CheckpointError("checkpoint truncated at byte " + std::to_string(pos_));
    }

    const std::string& b_;
    std::size_t pos_ = 0;
};

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

NamedBlob blob(const std::string& name, const Tensor& t) {
    return {name, t.shape(), std::vector<double>(t.data().begin(), t.data().end())};
}

NamedBlob blob(const std::string& name, const Shape& shape, const std::vector<double>& v) { return {name, shape, v}; }

const NamedBlob& require(const Checkpoint& ckpt, const std::string& name, const Shape& shape) {
    const NamedBlob* b = ckpt.find(name);
    if (!b) throw CheckpointError("checkpoint is missing tensor " + name);
    if (b->shape != shape) {
        throw CheckpointError("checkpoint tensor " + name + " has shape " + shape_str(b->shape) + ", model expects " +
                              shape_str(shape));
    }
    return *b;
}

}  // namespace

const NamedBlob* Checkpoint::find(const std::string& name) const {
    for (const auto& t : tensors) {
        if (t.name == name) return &t;
    }
    return nullptr;
}

std::vector<std::string> Checkpoint::names() const {
    std::vector<std::string> out;
    for (const auto& t : tensors) out.push_back(t.name);
    return out;
}

std::string encode_checkpoint(const Checkpoint& ckpt) {
    const json header = {{"config", json::parse(model_config_json(ckpt.config))},
                         {"config_digest", hex64(model_config_digest(ckpt.config))},
                         {"step", ckpt.step},
                         {"rng", ckpt.rng_state},
                         {"tensor_count", ckpt.tensors.size()}};
    const std::string htext = header.dump();

    std::string out(kMagic, 4);
    put<std::uint32_t>(out, kCheckpointVersion);
    put<std::uint64_t>(out, htext.size());
    out += htext;
    for (const auto& t : ckpt.tensors) {
        if (shape_numel(t.shape) != t.values.size()) {
            throw CheckpointError("tensor " + t.name + " has inconsistent shape and size");
        }
        put<std::uint32_t>(out, static_cast<std::uint32_t>(t.name.size()));
        out += t.name;
        put<std::uint32_t>(out, static_cast<std::uint32_t>(t.shape.size()));
        for (std::size_t e : t.shape) put<std::uint64_t>(out, e);
        for (double v : t.values) put<double>(out, v);
    }
    return out;
}

Checkpoint decode_checkpoint(const std::string& bytes) {
    Reader r(bytes);
    if (r.str(4) != std::string(kMagic, 4)) throw CheckpointError("not a checkpoint: bad magic bytes");
    const auto version = r.get<std::uint32_t>();
    if (version != kCheckpointVersion) {
        throw CheckpointError("unsupported checkpoint version " + std::to_string(version) + " (expected " +
                              std::to_string(kCheckpointVersion) + ")");
    }
    const auto hlen = r.get<std::uint64_t>();
    Checkpoint ckpt;
    std::size_t count = 0;
    try {
        const json header = json::parse(r.str(hlen));
        ckpt.config = model_config_from_json(header.at("config").dump());
        if (header.at("config_digest").get<std::string>() != hex64(model_config_digest(ckpt.config))) {
            throw CheckpointError("checkpoint config digest does not match its config");
        }
        ckpt.step = header.at("step").get<std::uint64_t>();
        ckpt.rng_state = header.at("rng").get<std::string>();
        count = header.at("tensor_count").get<std::size_t>();
    } catch (const json::exception& e) {
        throw CheckpointError(std::string("malformed checkpoint header: ") + e.what());
    } catch (const ConfigError& e) {
        throw CheckpointError(std::string("invalid config in checkpoint: ") + e.what());
    }
    for (std::size_t i = 0; i < count; ++i) {
        NamedBlob b;
        b.name = r.str(r.get<std::uint32_t>());
        const auto rank = r.get<std::uint32_t>();
        for (std::uint32_t d = 0; d < rank; ++d) b.shape.push_back(r.get<std::uint64_t>());
        const std::size_t n = shape_numel(b.shape);
        b.values.resize(n);
        for (std::size_t j = 0; j < n; ++j) b.values[j] = r.get<double>();
        ckpt.tensors.push_back(std::move(b));
    }
    if (!r.done()) throw CheckpointError("trailing bytes after the last checkpoint tensor");
    return ckpt;
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    const std::string bytes = encode_checkpoint(ckpt);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("failed writing checkpoint " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint " + path.string());
    const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    try {
        return decode_checkpoint(bytes);
    } catch (const CheckpointError& e) {
        throw CheckpointError(path.string() + ": " + e.what());
    }
}

Checkpoint model_checkpoint(const PolicyModel& model) {
    Checkpoint c;
    c.config = model.config();
    for (const auto& p : model.parameters()) c.tensors.push_back(blob("param/" + p.name, p.tensor));
    return c;
}

Checkpoint trainer_checkpoint(const Trainer& trainer) {
    Checkpoint c = model_checkpoint(trainer.model());
    c.step = trainer.step_count();
    c.rng_state = trainer.rng().serialize();
    const ParamList& params = trainer.params();
    const auto& m = trainer.optimizer().first_moments();
    const auto& v = trainer.optimizer().second_moments();
    const auto& e = trainer.ema().shadow();
    for (std::size_t i = 0; i < params.size(); ++i) {
        c.tensors.push_back(blob("adam_m/" + params[i].name, params[i].tensor.shape(), m[i]));
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        c.tensors.push_back(blob("adam_v/" + params[i].name, params[i].tensor.shape(), v[i]));
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        c.tensors.push_back(blob("ema/" + params[i].name, params[i].tensor.shape(), e[i]));
    }
    return c;
}

PolicyModel load_model(const Checkpoint& ckpt, bool use_ema) {
    Rng scratch(0);
    PolicyModel model = PolicyModel::create(ckpt.config, scratch);
    const ParamList params = model.parameters();
    const std::string section = use_ema ? "ema/" : "param/";
    std::vector<std::vector<double>> values;
    for (const auto& p : params) values.push_back(require(ckpt, section + p.name, p.tensor.shape()).values);
    assign_parameters(params, values);
    return model;
}

void restore_trainer(Trainer& trainer, const Checkpoint& ckpt) {
    const ModelConfig& cfg = trainer.model().config();
    if (model_config_digest(cfg) != model_config_digest(ckpt.config)) {
        throw CheckpointError("checkpoint config digest " + hex64(model_config_digest(ckpt.config)) +
                              " does not match the model's " + hex64(model_config_digest(cfg)));
    }
    const ParamList& params = trainer.params();
    std::vector<std::vector<double>> values;
    auto& m = trainer.optimizer().first_moments();
    auto& v = trainer.optimizer().second_moments();
    auto& e = trainer.ema().shadow();
    for (std::size_t i = 0; i < params.size(); ++i) {
        const Shape& shape = params[i].tensor.shape();
        values.push_back(require(ckpt, "param/" + params[i].name, shape).values);
        m[i] = require(ckpt, "adam_m/" + params[i].name, shape).values;
        v[i] = require(ckpt, "adam_v/" + params[i].name, shape).values;
        e[i] = require(ckpt, "ema/" + params[i].name, shape).values;
    }
    assign_parameters(params, values);
    trainer.optimizer().set_step_count(ckpt.step);
    trainer.rng() = Rng::deserialize(ckpt.rng_state);
}

}  // namespace adamoe
