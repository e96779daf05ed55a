#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <random>
#include <set>

#include "neursplit/error.hpp"
#include "neursplit/io.hpp"
#include "neursplit/predictor.hpp"
#include "neursplit/workload.hpp"

using namespace neursplit;

namespace {

// One planted layer: masks come from sign(fc1 x + b) of a rank-2 matrix.
struct Planted {
    Model model;
    std::vector<LayerSample> samples;
};

Planted planted(double sparsity, std::uint64_t seed, std::size_t d = 32, std::size_t m = 128,
                std::size_t inputs = 400) {
    WorkloadSpec spec;
    spec.num_layers = 1;
    spec.hidden_dim = d;
    spec.intermediate_dim = m;
    spec.sparsity = sparsity;
    spec.num_inputs = inputs;
    spec.seed = seed;
    auto w = generate_workload(spec);
    auto samples = collect_layer_samples(w.model, w.inputs);
    return {std::move(w.model), std::move(samples[0])};
}

double mean_sparsity(const std::vector<LayerSample>& samples, std::size_t m) {
    double active = 0.0;
    for (const auto& s : samples) active += double(s.mask.size());
    return 1.0 - active / (double(m) * double(samples.size()));
}

PredictorModel fixed_predictor(std::size_t d, std::size_t m, std::size_t hidden, float out_weight) {
    PredictorModel p;
    p.hidden = hidden;
    p.w_in = Matrix(hidden, d);
    std::fill(p.w_in.data.begin(), p.w_in.data.end(), 1.0f);
    p.w_out = Matrix(m, hidden);
    std::fill(p.w_out.data.begin(), p.w_out.data.end(), out_weight);
    return p;
}

Confusion recount(const std::vector<std::uint32_t>& predicted, const std::vector<std::uint32_t>& truth, std::size_t m) {
    const std::set<std::uint32_t> p(predicted.begin(), predicted.end());
    const std::set<std::uint32_t> t(truth.begin(), truth.end());
    Confusion c;
    for (std::uint32_t i = 0; i < m; ++i) {
        const bool in_p = p.count(i) > 0;
        const bool in_t = t.count(i) > 0;
        if (in_p && in_t) ++c.tp;
        if (in_p && !in_t) ++c.fp;
        if (!in_p && in_t) ++c.fn;
        if (!in_p && !in_t) ++c.tn;
    }
    return c;
}

} // namespace

TEST_CASE("initial hidden dim") {
    CHECK(initial_hidden_dim(1.0, 64, 256) == 4);
    CHECK(initial_hidden_dim(0.0, 64, 256) == 32);
    CHECK(initial_hidden_dim(0.9, 64, 256) == 4);
    CHECK(initial_hidden_dim(0.5, 64, 256) == 16);
    CHECK(initial_hidden_dim(-0.5, 64, 256) == 32);
    std::size_t last = initial_hidden_dim(0.0, 128, 512);
    for (int k = 1; k <= 100; ++k) {
        const auto h = initial_hidden_dim(k / 100.0, 128, 512);
        CHECK(h <= last);
        last = h;
    }
}

TEST_CASE("predictor budget") {
    Rng rng(1);
    const auto model = random_model({1, 64, 64, ActivationKind::ReLU}, rng);
    CHECK(predictor_budget(std::vector<PredictorModel>{}, model) == 0.0);
    const std::vector<PredictorModel> one{fixed_predictor(64, 64, 4, 1.0f)};
    CHECK(one[0].parameter_count() == 512);
    CHECK(predictor_budget(one, model) == 0.0625);
}

TEST_CASE("predict mask boundaries") {
    const std::vector<float> x(8, 1.0f);
    SUBCASE("strongly negative outputs predict nothing") {
        CHECK(predict_mask(fixed_predictor(8, 16, 4, -100.0f), x).active.empty());
    }
    SUBCASE("threshold 0 predicts everything") {
        auto p = fixed_predictor(8, 16, 4, -100.0f);
        p.threshold = 0.0f;
        CHECK(predict_mask(p, x).size() == 16);
    }
    SUBCASE("dimension mismatch") {
        CHECK_THROWS_AS(predict_mask(fixed_predictor(8, 16, 4, 1.0f), std::vector<float>(7)), Error);
    }
}

TEST_CASE("confusion matches an independent recount") {
    Rng rng(3);
    std::bernoulli_distribution coin(0.3);
    for (int trial = 0; trial < 200; ++trial) {
        ActivationMask a;
        ActivationMask b;
        for (std::uint32_t i = 0; i < 40; ++i) {
            if (coin(rng)) a.active.push_back(i);
            if (coin(rng)) b.active.push_back(i);
        }
        const auto c = confusion(a, b, 40);
        const auto r = recount(a.active, b.active, 40);
        CHECK(c.tp == r.tp);
        CHECK(c.fp == r.fp);
        CHECK(c.fn == r.fn);
        CHECK(c.tn == r.tn);
    }
    CHECK(Confusion{}.recall() == 1.0);
}

TEST_CASE("constant mask is learned at the minimum size") {
    Rng rng(5);
    const std::size_t d = 16;
    const std::size_t m = 16;
    std::vector<LayerSample> samples;
    for (const auto& x : sample_inputs(d, 100, rng)) samples.push_back({x, ActivationMask{0, {1, 3, 5}}});
    const auto out = train_adaptive(samples, d, m, 1.0 - 3.0 / 16.0);
    CHECK(out.report.final_hidden == 4);
    CHECK(out.report.recall == 1.0);
    CHECK_FALSE(out.report.target_missed);
}

TEST_CASE("planted separable masks reach the recall target") {
    const auto data = planted(0.9, 11);
    const auto out = train_adaptive(data.samples, 32, 128, mean_sparsity(data.samples, 128));
    CHECK_FALSE(out.report.target_missed);
    CHECK(out.report.recall >= 0.95);
    CHECK(out.report.final_hidden >= 1);

    // Held-out inputs: the confusion on fresh masks agrees with a set recount.
    Rng rng(12);
    const auto fresh = sample_inputs(32, 100, rng);
    Confusion total;
    Confusion check;
    for (const auto& x : fresh) {
        const auto truth = dense_mlp_forward(data.model.layers[0], x).mask;
        const auto pred = predict_mask(out.model, x);
        total += confusion(pred, truth, 128);
        check += recount(pred.active, truth.active, 128);
    }
    CHECK(total.tp == check.tp);
    CHECK(total.fn == check.fn);
    CHECK(total.recall() == doctest::Approx(double(check.tp) / double(check.tp + check.fn)));
    CHECK(total.recall() >= 0.9);
}

TEST_CASE("reported recall equals a recount over the validation set") {
    const auto data = planted(0.9, 21, 16, 64, 150);
    SizingConfig cfg;
    cfg.validation_fraction = 1.0; // validation covers every sample
    const auto out = train_adaptive(data.samples, 16, 64, 0.9, cfg);
    Confusion c;
    for (const auto& s : data.samples) {
        const auto r = recount(predict_mask(out.model, s.x).active, s.mask.active, 64);
        c += r;
    }
    CHECK(out.report.recall == double(c.tp) / double(c.tp + c.fn));
    CHECK(out.report.precision == (c.tp + c.fp == 0 ? 1.0 : double(c.tp) / double(c.tp + c.fp)));
}

TEST_CASE("unreachable target is reported, not thrown") {
    Rng rng(8);
    std::bernoulli_distribution coin(0.1);
    std::vector<LayerSample> samples;
    for (const auto& x : sample_inputs(8, 200, rng)) {
        ActivationMask mask;
        for (std::uint32_t i = 0; i < 16; ++i) {
            if (coin(rng)) mask.active.push_back(i);
        }
        samples.push_back({x, mask});
    }
    SizingConfig cfg;
    cfg.recall_target = 1.0;
    cfg.epochs = 5;
    const auto out = train_adaptive(samples, 8, 16, 0.9, cfg);
    CHECK(out.report.target_missed);
    CHECK(out.report.iterations >= 1);
    CHECK_THROWS_AS(train_adaptive(std::vector<LayerSample>{}, 8, 16, 0.9), Error);
}

TEST_CASE("sizing is monotone in sparsity over seeds") {
    std::vector<std::size_t> sparse;
    std::vector<std::size_t> dense;
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        const auto a = planted(0.95, 100 + seed);
        const auto b = planted(0.50, 200 + seed);
        sparse.push_back(train_adaptive(a.samples, 32, 128, mean_sparsity(a.samples, 128)).report.final_hidden);
        dense.push_back(train_adaptive(b.samples, 32, 128, mean_sparsity(b.samples, 128)).report.final_hidden);
    }
    std::sort(sparse.begin(), sparse.end());
    std::sort(dense.begin(), dense.end());
    CHECK(sparse[5] <= dense[5]);
}

TEST_CASE("training is deterministic for a fixed seed") {
    const auto data = planted(0.9, 31, 16, 64, 120);
    const auto a = train_adaptive(data.samples, 16, 64, 0.9);
    const auto b = train_adaptive(data.samples, 16, 64, 0.9);
    CHECK(a.model.w_in.data == b.model.w_in.data);
    CHECK(a.model.w_out.data == b.model.w_out.data);
    CHECK(a.model.b_in == b.model.b_in);
    CHECK(a.model.b_out == b.model.b_out);
    CHECK(a.report.final_hidden == b.report.final_hidden);
    CHECK(a.report.recall == b.report.recall);
    CHECK(a.report.iterations == b.report.iterations);
}

TEST_CASE("predictor files round-trip") {
    const auto dir = std::filesystem::temp_directory_path() / "neursplit_test_predictor";
    std::filesystem::remove_all(dir);
    const auto data = planted(0.9, 41, 16, 64, 80);
    PredictorSet set;
    auto t = train_adaptive(data.samples, 16, 64, 0.9);
    set.layers.push_back(t.model);
    set.reports.push_back(t.report);
    save_predictors(set, dir / "p.json");
    const auto back = load_predictors(dir / "p.json");
    REQUIRE(back.layers.size() == 1);
    CHECK(back.layers[0].w_in.data == t.model.w_in.data);
    CHECK(back.layers[0].w_out.data == t.model.w_out.data);
    CHECK(back.layers[0].b_out == t.model.b_out);
    CHECK(back.reports[0].recall == t.report.recall);
    for (const auto& s : data.samples) CHECK(predict_mask(back.layers[0], s.x) == predict_mask(t.model, s.x));

    auto doc = io::read_json(dir / "p.json");
    doc["format"] = "neursplit-pred/0";
    io::write_json(dir / "p.json", doc);
    CHECK_THROWS_AS(load_predictors(dir / "p.json"), Error);
    std::filesystem::remove_all(dir);
}
