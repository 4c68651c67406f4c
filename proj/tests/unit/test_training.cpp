// Copyright (c) 2026, The adamoe Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <limits>

#include "adamoe/checkpoint.hpp"
#include "adamoe/errors.hpp"
#include "adamoe/experiment.hpp"
#include "adamoe/training.hpp"

using namespace adamoe;
namespace fs = std::filesystem;

namespace {

ModelConfig tiny(Variant v) {
    ModelConfig c;
    c.d_model = 8;
    c.d_ff = 16;
    c.layers = 2;
    c.heads = 2;
    c.horizon = 4;
    c.tau_embed = 4;
    c.num_experts = 2;
    c.top_k = 1;
    c.variant = v;
    return c;
}

TrainConfig quick(std::size_t steps = 10) {
    TrainConfig t;
    t.batch_size = 4;
    t.total_steps = steps;
    t.peak_lr = 1e-3;
    t.seed = 3;
    return t;
}

std::vector<TrajectoryStep> small_data(std::size_t horizon = 4) {
    std::vector<Trajectory> trajs;
    for (const auto& spec : task_registry()) trajs.push_back(scripted_expert(spec, 100 + spec.task_id, horizon));
    return dataset_samples(trajs, horizon);
}

/// Scalar leaf wrapped as a one-element parameter list.
ParamList scalar_param(double value, ParamGroup group = ParamGroup::Base) {
    return {{"w", Tensor::from({1}, {value}, true), group}};
}

void set_grad(const ParamList& p, double g) {
    Tensor t = p[0].tensor;
    t.zero_grad();
    t.mutable_grad()[0] = g;
}

std::vector<std::vector<double>> snapshot(const PolicyModel& m) {
    std::vector<std::vector<double>> out;
    for (const auto& p : m.parameters()) out.push_back(p.tensor.to_vector());
    return out;
}

}  // namespace

TEST_SUITE("optim") {

TEST_CASE("AdamW matches a hand-iterated recurrence") {
    const ParamList p = scalar_param(0.5);
    AdamWConfig cfg;
    cfg.weight_decay = 0.1;
    AdamW opt(p, cfg);
    const double grads[] = {0.3, -1.2, 0.05};
    const double lr = 0.01;
    double w = 0.5, m = 0.0, v = 0.0;
    for (int t = 1; t <= 3; ++t) {
        const double g = grads[t - 1];
        set_grad(p, g);
        opt.step(p, lr, 2 * lr);
        m = 0.9 * m + 0.1 * g;
        v = 0.95 * v + 0.05 * g * g;
        const double mhat = m / (1.0 - std::pow(0.9, t));
        const double vhat = v / (1.0 - std::pow(0.95, t));
        w -= lr * (mhat / (std::sqrt(vhat) + 1e-8) + 0.1 * w);
        CHECK(p[0].tensor.at(0) == doctest::Approx(w).epsilon(1e-15));
    }
    CHECK(opt.step_count() == 3);
}

TEST_CASE("zero gradient with zero decay leaves parameters unchanged") {
    const ParamList p = scalar_param(1.25);
    AdamW opt(p, AdamWConfig{});
    for (int i = 0; i < 3; ++i) {
        set_grad(p, 0.0);
        opt.step(p, 0.1, 0.2);
    }
    CHECK(p[0].tensor.at(0) == 1.25);
}

TEST_CASE("router group moves twice as far on the first step") {
    const ParamList base = scalar_param(0.0, ParamGroup::Base);
    const ParamList router = scalar_param(0.0, ParamGroup::Router);
    ParamList both{base[0], router[0]};
    AdamW opt(both, AdamWConfig{});
    for (const auto& p : both) {
        Tensor t = p.tensor;
        t.mutable_grad()[0] = 1.0;
    }
    opt.step(both, 1e-3, 2e-3);
    const double db = std::abs(base[0].tensor.at(0));
    const double dr = std::abs(router[0].tensor.at(0));
    CHECK(dr / db == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(db == doctest::Approx(1e-3).epsilon(1e-6));
}

TEST_CASE("global norm clipping") {
    ParamList p{{"a", Tensor::from({2}, {0, 0}, true), ParamGroup::Base},
                {"b", Tensor::from({1}, {0}, true), ParamGroup::Router}};
    Tensor a = p[0].tensor, b = p[1].tensor;
    a.mutable_grad()[0] = 3.0;
    a.mutable_grad()[1] = 0.0;
    b.mutable_grad()[0] = 4.0;
    CHECK(global_grad_norm(p) == 5.0);
    CHECK(clip_grad_norm(p, 1.0) == 5.0);
    CHECK(a.grad()[0] == doctest::Approx(0.6));
    CHECK(b.grad()[0] == doctest::Approx(0.8));
    CHECK(clip_grad_norm(p, 10.0) == doctest::Approx(1.0));
    CHECK(b.grad()[0] == doctest::Approx(0.8));
}

TEST_CASE("EMA recurrence") {
    const ParamList p = scalar_param(1.0);
    Ema ema(p, 0.9);
    Tensor t = p[0].tensor;
    t.mutable_data()[0] = 2.0;
    ema.update(p);
    CHECK(ema.shadow()[0][0] == doctest::Approx(1.1));
    t.mutable_data()[0] = 0.0;
    ema.update(p);
    CHECK(ema.shadow()[0][0] == doctest::Approx(0.99));
    ema.copy_to(p);
    CHECK(t.at(0) == doctest::Approx(0.99));
    CHECK_THROWS_AS(Ema(p, 1.0), ConfigError);
}

TEST_CASE("warmup then cosine") {
    const LrSchedule s{1.0, 110, 10};
    CHECK(s.at(0) == doctest::Approx(0.1));
    CHECK(s.at(9) == doctest::Approx(1.0));
    CHECK(s.at(10) == doctest::Approx(1.0));
    CHECK(s.at(60) == doctest::Approx(0.5));
    CHECK(s.at(110) == doctest::Approx(0.0).scale(1.0));
    CHECK(s.at(500) == doctest::Approx(0.0).scale(1.0));
}

}  // TEST_SUITE

TEST_SUITE("train-config") {

TEST_CASE("defaults and presets") {
    const TrainConfig t;
    CHECK(t.batch_size == 32);
    CHECK(t.total_steps == 5000);
    CHECK(t.router_lr_ratio == 2.0);
    CHECK(t.beta2 == 0.95);
    CHECK(t.warmup_steps() == 50);
    TrainConfig tiny_run;
    tiny_run.total_steps = 20;
    CHECK(tiny_run.warmup_steps() == 1);

    const TrainConfig paper = TrainConfig::paper_preset();
    CHECK(paper.peak_lr == 2.5e-5);
    CHECK(paper.peak_lr * paper.router_lr_ratio == doctest::Approx(5e-5));
    CHECK(paper.total_steps == 120000);

    TrainConfig bad;
    bad.batch_size = 0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

}  // TEST_SUITE

TEST_SUITE("loss") {

TEST_CASE("lambda zero leaves only flow matching") {
    Rng rng(1);
    const PolicyModel m = PolicyModel::create(tiny(Variant::Vanilla), rng);
    const auto data = small_data();
    Rng r(2);
    const TrainBatch batch = sample_batch(data, 6, r);
    const LossTerms t = total_loss(m, batch, 0.0);
    CHECK(t.total_value == t.fm);
    CHECK(t.balance_term == 0.0);
    CHECK(t.balance > 0.0);
    CHECK(t.moe_layers == std::vector<std::size_t>{0, 1});

    const LossTerms w = total_loss(m, batch, 0.25);
    CHECK(w.balance_term == doctest::Approx(0.25 * w.balance).epsilon(1e-15));
    CHECK(w.total_value == doctest::Approx(w.fm + w.balance_term).epsilon(1e-15));
}

TEST_CASE("perfect prediction with uniform routing costs exactly lambda") {
    Rng rng(3);
    PolicyModel m = PolicyModel::create(tiny(Variant::Vanilla), rng);
    for (const auto& p : m.parameters()) {
        if (p.name.rfind("head.out", 0) == 0 || p.name.find("router") != std::string::npos) {
            Tensor t = p.tensor;
            for (double& v : t.mutable_data()) v = 0.0;
        }
    }
    TrainBatch batch;
    for (std::size_t b = 0; b < 3; ++b) {
        ActionChunk c = ActionChunk::zeros(4, 3);
        for (double& v : c.values) v = rng.normal();
        batch.obs.push_back({{0.1 * b, 0.0, 1.0}, {0, 0, 0, 0}, b});
        batch.samples.push_back(make_flow_sample(c, c, rng.uniform()));
    }
    const LossTerms t = total_loss(m, batch, 0.01);
    CHECK(t.fm == 0.0);
    CHECK(std::abs(t.balance - 1.0) <= 1e-12);
    CHECK(std::abs(t.total_value - 0.01) <= 1e-12);
}

TEST_CASE("dense models carry no balance term") {
    Rng rng(4);
    const PolicyModel m = PolicyModel::create(tiny(Variant::Dense), rng);
    Rng r(5);
    const LossTerms t = total_loss(m, sample_batch(small_data(), 4, r), 0.5);
    CHECK(t.balance == 0.0);
    CHECK(t.moe_layers.empty());
}

TEST_CASE("non-finite loss names the term") {
    Rng rng(6);
    PolicyModel m = PolicyModel::create(tiny(Variant::Dense), rng);
    Rng r(7);
    TrainBatch batch = sample_batch(small_data(), 2, r);
    batch.samples[0].target.values[0] = std::numeric_limits<double>::infinity();
    try {
        (void)total_loss(m, batch, 0.0);
        FAIL("expected NumericalError");
    } catch (const NumericalError& e) {
        CHECK(std::string(e.what()).find("flow matching") != std::string::npos);
    }
}

TEST_CASE("total-loss gradients match finite differences") {
    for (Variant v : {Variant::Vanilla, Variant::CSMoE, Variant::AdaMoE}) {
        CAPTURE(variant_name(v));
        Rng rng(8);
        const PolicyModel m = PolicyModel::create(tiny(v), rng);
        Rng r(9);
        const TrainBatch batch = sample_batch(small_data(), 3, r);
        std::vector<Tensor> params;
        for (const auto& p : m.parameters()) params.push_back(p.tensor);
        const auto rep = finite_diff_check([&]() { return total_loss(m, batch, 0.1).total; }, params);
        CHECK(rep.passed);
    }
}

}  // TEST_SUITE

TEST_SUITE("trainer") {

TEST_CASE("fixed seed reproduces the loss curve bit-exactly") {
    auto run = [] {
        Rng rng(10);
        Trainer t(PolicyModel::create(tiny(Variant::AdaMoE), rng), quick(), small_data());
        std::vector<double> curve;
        for (int i = 0; i < 5; ++i) curve.push_back(t.step().loss_total);
        return std::make_pair(curve, snapshot(t.model()));
    };
    const auto a = run();
    const auto b = run();
    CHECK(a.first == b.first);
    CHECK(a.second == b.second);
}

TEST_CASE("metrics report the schedule and router rate") {
    Rng rng(11);
    Trainer t(PolicyModel::create(tiny(Variant::Vanilla), rng), quick(), small_data());
    const StepMetrics m = t.step();
    CHECK(m.step == 1);
    CHECK(m.lr_base == doctest::Approx(1e-3));
    CHECK(m.lr_router == doctest::Approx(2e-3));
    CHECK(m.fractions.size() == 2);
    CHECK(m.loss_total == doctest::Approx(m.loss_fm + m.loss_balance).epsilon(1e-14));
    CHECK(MetricsWriter::header(tiny(Variant::Vanilla)) ==
          "step,loss_total,loss_fm,loss_balance,grad_norm,lr_base,lr_router,f_l0_e0,f_l0_e1,f_l1_e0,f_l1_e1");
}

TEST_CASE("EMA model differs from the live model after training") {
    Rng rng(12);
    Trainer t(PolicyModel::create(tiny(Variant::Dense), rng), quick(), small_data());
    for (int i = 0; i < 3; ++i) t.step();
    CHECK(snapshot(t.ema_model()) != snapshot(t.model()));
}

TEST_CASE("clone_model is a deep copy") {
    Rng rng(13);
    const PolicyModel m = PolicyModel::create(tiny(Variant::CSMoE), rng);
    PolicyModel c = clone_model(m);
    CHECK(snapshot(c) == snapshot(m));
    Tensor w = c.parameters()[0].tensor;
    w.mutable_data()[0] += 1.0;
    CHECK(snapshot(c) != snapshot(m));
}

}  // TEST_SUITE

TEST_SUITE("checkpoint") {

TEST_CASE("save, load, save is byte-identical") {
    Rng rng(14);
    Trainer t(PolicyModel::create(tiny(Variant::AdaMoE), rng), quick(), small_data());
    for (int i = 0; i < 2; ++i) t.step();
    const std::string bytes = encode_checkpoint(trainer_checkpoint(t));
    CHECK(encode_checkpoint(decode_checkpoint(bytes)) == bytes);
    CHECK(bytes.substr(0, 4) == "AMOE");

    const Checkpoint ck = decode_checkpoint(bytes);
    CHECK(ck.step == 2);
    CHECK(ck.config == tiny(Variant::AdaMoE));
    CHECK(ck.find("param/head.out.weight") != nullptr);
    CHECK(ck.find("adam_m/head.out.weight") != nullptr);
    CHECK(ck.find("ema/head.out.weight") != nullptr);

    const PolicyModel live = load_model(ck);
    CHECK(snapshot(live) == snapshot(t.model()));
    CHECK(snapshot(load_model(ck, true)) == snapshot(t.ema_model()));
}

TEST_CASE("malformed checkpoints are rejected") {
    Rng rng(15);
    const std::string bytes = encode_checkpoint(model_checkpoint(PolicyModel::create(tiny(Variant::Dense), rng)));
    std::string bad = bytes;
    bad[0] = 'X';
    CHECK_THROWS_AS(decode_checkpoint(bad), CheckpointError);
    bad = bytes;
    bad[4] = 2;
    CHECK_THROWS_AS(decode_checkpoint(bad), CheckpointError);
    CHECK_THROWS_AS(decode_checkpoint(bytes.substr(0, bytes.size() - 3)), CheckpointError);
    CHECK_THROWS_AS(decode_checkpoint(bytes + "x"), CheckpointError);
    const auto pos = bytes.find("\"config_digest\":\"");
    REQUIRE(pos != std::string::npos);
    bad = bytes;
    char& c = bad[pos + 17];
    c = c == '0' ? '1' : '0';
    CHECK_THROWS_AS(decode_checkpoint(bad), CheckpointError);
    CHECK_THROWS_AS(read_checkpoint("/nonexistent/x.amoe"), IoError);
}

TEST_CASE("dense checkpoints list no router parameters") {
    Rng rng(16);
    for (const auto& n : model_checkpoint(PolicyModel::create(tiny(Variant::Dense), rng)).names()) {
        CHECK(n.find("router") == std::string::npos);
    }
}

TEST_CASE("resume matches an uninterrupted run step for step") {
    const auto data = small_data();
    Rng r1(17);
    Trainer straight(PolicyModel::create(tiny(Variant::AdaMoE), r1), quick(20), data);
    std::vector<double> want;
    for (int i = 0; i < 20; ++i) want.push_back(straight.step().loss_total);

    Rng r2(17);
    Trainer first(PolicyModel::create(tiny(Variant::AdaMoE), r2), quick(20), data);
    for (int i = 0; i < 10; ++i) first.step();
    const fs::path path = fs::temp_directory_path() / "adamoe_test_resume.amoe";
    write_checkpoint(path, trainer_checkpoint(first));

    const Checkpoint ck = read_checkpoint(path);
    Trainer resumed(load_model(ck), quick(20), data);
    restore_trainer(resumed, ck);
    CHECK(resumed.step_count() == 10);
    for (int i = 10; i < 20; ++i) CHECK(resumed.step().loss_total == want[i]);
    CHECK(snapshot(resumed.model()) == snapshot(straight.model()));
    fs::remove(path);

    Rng r3(18);
    Trainer other(PolicyModel::create(tiny(Variant::Vanilla), r3), quick(20), data);
    CHECK_THROWS_AS(restore_trainer(other, ck), CheckpointError);
}

}  // TEST_SUITE

TEST_SUITE("experiment") {

TEST_CASE("grid of one gives one row") {
    ExperimentSpec spec;
    spec.model = tiny(Variant::Dense);
    spec.train = quick(3);
    spec.finetune_steps = 3;
    spec.cells = {GridCell{Variant::AdaMoE, 2, 1, 0.01}};
    spec.tasks = {find_task("reach")};
    spec.eval = {2, 0, 4};
    spec.denoise_steps = 2;
    spec.balance_samples = 8;
    const ExperimentResults r = run_experiment(spec, small_data());
    REQUIRE(r.rows.size() == 1);
    CHECK(r.runs.size() == 1);
    CHECK(r.rows[0].rates.size() == 1);
    CHECK(r.rows[0].failures == 0);
    CHECK(results_markdown(r).find(spec.cells[0].label()) != std::string::npos);
    CHECK(results_csv(r).find("reach") != std::string::npos);
}

TEST_CASE("pretrain then upcycle, dense rows first") {
    ExperimentSpec spec;
    spec.model = tiny(Variant::Dense);
    spec.train = quick(2);
    spec.pretrain_steps = 2;
    spec.finetune_steps = 2;
    spec.cells = {GridCell{Variant::Vanilla, 2, 1, 0.0}, GridCell{Variant::Dense, 2, 1, 0.0}};
    spec.seeds = {1, 2};
    spec.tasks = {find_task("reach")};
    spec.eval = {1, 0, 4};
    spec.denoise_steps = 1;
    spec.balance_samples = 4;
    const ExperimentResults r = run_experiment(spec, small_data());
    CHECK(r.runs.size() == 4);
    REQUIRE(r.rows.size() == 2);
    CHECK(r.rows[0].cell.variant == Variant::Dense);
    CHECK(r.rows[0].seeds == std::vector<std::uint64_t>{1, 2});
}

TEST_CASE("aggregation pools trials for the interval") {
    CellRun a, b;
    a.cell = b.cell = GridCell{Variant::AdaMoE, 4, 1, 0.01};
    a.seed = 0;
    b.seed = 1;
    a.results = {EvalResult{"reach", 0, 3, 4, 0.75, {}}};
    b.results = {EvalResult{"reach", 0, 1, 4, 0.25, {}}};
    const auto rows = aggregate_runs({a, b}, 1);
    REQUIRE(rows.size() == 1);
    CHECK(rows[0].rates[0] == 0.5);
    const Interval pooled = wilson_interval(4, 8);
    CHECK(rows[0].ci[0].lo == pooled.lo);
    CHECK(rows[0].average == 0.5);
}

}  // TEST_SUITE
