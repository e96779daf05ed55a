#include <doctest.h>

#include <cstdlib>
#include <random>
#include <set>

#include "neursplit/engine.hpp"
#include "neursplit/error.hpp"
#include "neursplit/profiler.hpp"
#include "neursplit/workload.hpp"
#include "oracles.hpp"

using namespace neursplit;

namespace {

// One single-neuron batch per neuron, FAST membership given per layer.
PlacementPolicy policy_for(const Model& model, const std::vector<std::set<std::uint32_t>>& fast) {
    PlacementPolicy p;
    p.num_layers = model.config.num_layers;
    p.intermediate_dim = model.config.intermediate_dim;
    p.total_inputs = 1;
    p.devices.fast = {"fast", model.total_bytes(), 600e9};
    p.devices.slow = {"slow", model.total_bytes(), 38.4e9};
    p.devices.sync_cost = 0.0;
    for (std::uint32_t l = 0; l < p.num_layers; ++l) {
        for (std::uint32_t i = 0; i < p.intermediate_dim; ++i) {
            NeuronBatch b;
            b.layer = l;
            b.members = {i};
            b.bytes = model.neuron_bytes(l);
            p.batches.push_back(b);
            p.assignment.push_back(fast[l].count(i) ? Unit::Fast : Unit::Slow);
        }
    }
    p.min_fast.assign(p.num_layers, 0);
    p.status = SolverStatus::Feasible;
    finalize_policy(p);
    return p;
}

std::vector<std::set<std::uint32_t>> random_split(const Model& model, Rng& rng, double p_fast = 0.5) {
    std::bernoulli_distribution coin(p_fast);
    std::vector<std::set<std::uint32_t>> fast(model.config.num_layers);
    for (auto& s : fast) {
        for (std::uint32_t i = 0; i < model.config.intermediate_dim; ++i) {
            if (coin(rng)) s.insert(i);
        }
    }
    return fast;
}

std::vector<float> random_input(std::size_t d, Rng& rng) {
    std::normal_distribution<float> nd(0.0f, 1.0f);
    std::vector<float> x(d);
    for (auto& v : x) v = nd(rng);
    return x;
}

// Model whose only layer fires exactly neurons {3, 4, 5} on input [1].
Model three_hot_model() {
    Model model;
    model.config = {1, 1, 8, ActivationKind::ReLU};
    LayerWeights w;
    w.fc1 = Matrix(8, 1);
    w.fc1.data = {-1, -1, -1, 1, 1, 1, -1, -1};
    w.fc2 = Matrix(1, 8);
    w.fc2.data = {1, 2, 3, 4, 5, 6, 7, 8};
    model.layers.push_back(w);
    return model;
}

// Dense double-precision forward that keeps only neurons in `keep` per layer.
std::vector<double> masked_forward(const Model& model, const std::vector<float>& x0,
                                   const std::vector<std::set<std::uint32_t>>& keep) {
    std::vector<float> x = x0;
    std::vector<double> y;
    for (std::size_t l = 0; l < model.layers.size(); ++l) {
        const auto& w = model.layers[l];
        const std::size_t m = w.fc1.rows;
        const std::size_t d = w.fc1.cols;
        y.assign(d, 0.0);
        for (std::size_t i = 0; i < m; ++i) {
            if (!keep[l].count(static_cast<std::uint32_t>(i))) continue;
            double pre = 0.0;
            for (std::size_t k = 0; k < d; ++k) pre += double(w.fc1(i, k)) * double(x[k]);
            if (!w.fc1_bias.empty()) pre += w.fc1_bias[i];
            if (pre <= 0.0) continue;
            for (std::size_t r = 0; r < d; ++r) y[r] += pre * double(w.fc2(r, i));
        }
        x = oracle::to_float(y);
    }
    return y;
}

struct ThreadsEnv {
    explicit ThreadsEnv(const char* value) { setenv("NEURSPLIT_THREADS", value, 1); }
    ~ThreadsEnv() { unsetenv("NEURSPLIT_THREADS"); }
};

} // namespace

TEST_CASE("neuron tables for the hot-set example") {
    const auto model = three_hot_model();
    const auto loaded = load(model, policy_for(model, {{3, 5, 7}}));
    const auto& t = loaded.tables[0];
    CHECK(t.of(Unit::Fast) == std::vector<std::uint32_t>{3, 5, 7});
    CHECK(t.of(Unit::Slow) == std::vector<std::uint32_t>{0, 1, 2, 4, 6});
    CHECK(t.unit_of[5] == Unit::Fast);
    CHECK(t.slot_of[5] == 1);
    CHECK(t.slot_of[6] == 4);
    CHECK_NOTHROW(t.check(8));
    CHECK(loaded.weights.units[0][0].fc2(0, 2) == 8.0f);
}

TEST_CASE("only masked neurons are computed on their resident unit") {
    const auto model = three_hot_model();
    const Engine engine(model, policy_for(model, {{3, 5, 7}}));
    const auto r = engine.infer(std::vector<float>{1.0f}, MaskMode::TrueMask);
    CHECK(r.masks[0].active == std::vector<std::uint32_t>{3, 4, 5});
    CHECK(r.metrics.computed[unit_index(Unit::Fast)] == 2); // neurons 3 and 5; 7 is skipped
    CHECK(r.metrics.computed[unit_index(Unit::Slow)] == 1); // neuron 4
    CHECK(r.metrics.row_dots == 3);
    CHECK(r.y == std::vector<float>{4.0f + 5.0f + 6.0f});
}

TEST_CASE("load and reconstruct are inverse") {
    Rng rng(1);
    for (int trial = 0; trial < 20; ++trial) {
        const bool gated = trial % 2 == 1;
        const auto model = random_model({3, 6, 20, gated ? ActivationKind::ReGLU : ActivationKind::ReLU}, rng, true);
        const auto policy = policy_for(model, random_split(model, rng));
        const auto loaded = load(model, policy);
        CHECK(reconstruct(loaded) == model);
        CHECK(loaded.weights.bytes[unit_index(Unit::Fast)] == policy.fast_bytes());
        CHECK(loaded.weights.bytes[unit_index(Unit::Slow)] == policy.slow_bytes());
        for (const auto& t : loaded.tables) CHECK_NOTHROW(t.check(20));
    }
}

TEST_CASE("load refuses bad policies") {
    Rng rng(2);
    const auto model = random_model({2, 4, 8, ActivationKind::ReLU}, rng);
    auto policy = policy_for(model, {{0, 1}, {}});
    SUBCASE("constraint violation") {
        policy.split[1] = 1;
        policy.min_fast[1] = 3;
        CHECK_THROWS_WITH_AS(load(model, policy), doctest::Contains("split-lower"), Error);
    }
    SUBCASE("shape mismatch") {
        const auto other = random_model({2, 4, 9, ActivationKind::ReLU}, rng);
        CHECK_THROWS_AS(load(other, policy), Error);
    }
}

TEST_CASE("all-FAST layout") {
    Rng rng(3);
    const auto model = random_model({1, 4, 8, ActivationKind::ReLU}, rng);
    const Engine engine(model, policy_for(model, {{0, 1, 2, 3, 4, 5, 6, 7}}));
    const auto& t = engine.model().tables[0];
    CHECK(t.of(Unit::Slow).empty());
    CHECK(t.of(Unit::Fast) == std::vector<std::uint32_t>{0, 1, 2, 3, 4, 5, 6, 7});
    for (const auto& n : engine.dag().nodes) CHECK(n.unit == Unit::Fast);
    const auto x = random_input(4, rng);
    CHECK(engine.infer(x, MaskMode::TrueMask).y == dense_mlp_forward(model.layers[0], x).y);
}

TEST_CASE("DAG shape") {
    Rng rng(4);
    const auto model = random_model({3, 4, 8, ActivationKind::ReLU}, rng);
    // Layer 1 is not split: its FAST side is empty.
    const auto loaded = load(model, policy_for(model, {{0, 2}, {}, {1, 2, 3}}));
    const auto dag = build_dag(loaded);

    std::vector<std::vector<std::uint32_t>> prereqs;
    for (std::size_t k = 0; k < dag.nodes.size(); ++k) {
        CHECK(dag.nodes[k].id == k);
        prereqs.push_back(dag.nodes[k].prerequisites);
    }
    std::vector<std::uint32_t> order;
    REQUIRE(oracle::topo_sortable(dag.nodes.size(), prereqs, &order));
    // Emitted order is itself topological.
    for (const auto& n : dag.nodes) {
        for (const auto p : n.prerequisites) CHECK(p < n.id);
    }

    auto count = [&](std::uint32_t layer, NodeKind kind, Unit unit) {
        int c = 0;
        for (const auto& n : dag.nodes) c += (n.layer == layer && n.kind == kind && n.unit == unit) ? 1 : 0;
        return c;
    };
    CHECK(count(1, NodeKind::Fc1Part, Unit::Fast) == 0);
    CHECK(count(1, NodeKind::Fc1Part, Unit::Slow) == 1);
    CHECK(count(1, NodeKind::Fc2Part, Unit::Slow) == 1);
    CHECK(count(1, NodeKind::Merge, Unit::Fast) == 1);
    CHECK(count(0, NodeKind::Fc1Part, Unit::Fast) == 1);
    CHECK(count(0, NodeKind::Fc1Part, Unit::Slow) == 1);

    for (const auto& n : dag.nodes) {
        if (n.kind == NodeKind::Merge) {
            CHECK(n.unit == Unit::Fast);
            if (n.layer == 1) CHECK(n.prerequisites.size() == 1);
        }
        if (n.kind == NodeKind::Fc1Part) {
            bool has_predict = false;
            for (const auto p : n.prerequisites) has_predict |= dag.nodes[p].kind == NodeKind::Predict;
            CHECK(has_predict);
        }
        if (n.kind == NodeKind::Fc2Part) {
            REQUIRE(n.prerequisites.size() >= 1);
            CHECK(dag.nodes[n.prerequisites[0]].kind == NodeKind::Fc1Part);
        }
    }
    CHECK(to_string(NodeKind::LayerIn) == "LAYER_IN");
}

TEST_CASE("zero input gives zero output and empty masks") {
    Rng rng(5);
    const auto model = random_model({2, 6, 12, ActivationKind::ReLU}, rng);
    const Engine engine(model, policy_for(model, random_split(model, rng)));
    const auto r = engine.infer(std::vector<float>(6, 0.0f), MaskMode::TrueMask);
    for (const float v : r.y) CHECK(v == 0.0f);
    for (const auto& m : r.active) CHECK(m.active.empty());
}

TEST_CASE("hybrid output equals the dense reference") {
    Rng rng(6);
    const auto model = random_model({4, 32, 96, ActivationKind::ReLU}, rng, true);
    const Engine engine(model, policy_for(model, random_split(model, rng)));
    double worst = 0.0;
    for (int k = 0; k < 100; ++k) {
        const auto x = random_input(32, rng);
        const auto ref = forward(model, x);
        const auto t = engine.infer(x, MaskMode::TrueMask);
        const auto d = engine.infer(x, MaskMode::Dense);
        worst = std::max({worst, max_relative_error(t.y, ref.y), max_relative_error(d.y, ref.y)});
        // Bypass exactness: one row product per active neuron.
        std::uint64_t mask_total = 0;
        for (const auto& m : ref.masks) mask_total += m.size();
        CHECK(t.metrics.row_dots == mask_total);
        CHECK(d.metrics.row_dots == 4 * 96);
        for (std::size_t l = 0; l < 4; ++l) CHECK(t.active[l] == ref.masks[l]);
    }
    CHECK(worst <= 1e-6);
}

TEST_CASE("engine errors") {
    Rng rng(7);
    const Engine empty;
    CHECK_THROWS_WITH_AS(empty.infer(std::vector<float>(4), MaskMode::TrueMask), "engine: no model loaded", Error);
    const auto model = random_model({1, 4, 8, ActivationKind::ReLU}, rng);
    const Engine engine(model, policy_for(model, random_split(model, rng)));
    CHECK_THROWS_AS(engine.infer(std::vector<float>(5), MaskMode::TrueMask), Error);
    CHECK_THROWS_AS(engine.infer(std::vector<float>(4), MaskMode::PredictedMask), Error);
    CHECK(mask_mode_from_string("predicted") == MaskMode::PredictedMask);
    CHECK_THROWS_AS(mask_mode_from_string("oracle"), Error);
}

TEST_CASE("schedule verification") {
    Rng rng(8);
    const auto model = random_model({3, 8, 16, ActivationKind::ReLU}, rng);
    const Engine engine(model, policy_for(model, random_split(model, rng)));
    const auto x = random_input(8, rng);
    const auto r = engine.infer(x, MaskMode::TrueMask, true);
    REQUIRE(r.events.size() == 2 * engine.dag().nodes.size());
    CHECK(verify_schedule(engine.dag(), r.events).ok);

    SUBCASE("a prerequisite finishing after its dependent starts is caught") {
        auto events = r.events;
        // Find the finish of some node with dependents and push it past everything.
        for (auto& e : events) {
            if (!e.start && !engine.dag().dependents[e.node].empty()) {
                e.tick = events.size() * 10;
                break;
            }
        }
        CHECK_FALSE(verify_schedule(engine.dag(), events).ok);
    }
    SUBCASE("a missing node is caught") {
        auto events = r.events;
        events.pop_back();
        CHECK_FALSE(verify_schedule(engine.dag(), events).ok);
    }
    SUBCASE("a finish before its start is caught") {
        auto events = r.events;
        for (auto& e : events) {
            if (e.start) {
                e.tick = events.size() * 10;
                break;
            }
        }
        CHECK_FALSE(verify_schedule(engine.dag(), events).ok);
    }
}

TEST_CASE("single-threaded fallback") {
    Rng rng(9);
    const auto model = random_model({2, 8, 16, ActivationKind::ReGLU}, rng, true);
    const Engine engine(model, policy_for(model, random_split(model, rng)));
    const auto x = random_input(8, rng);
    const auto threaded = engine.infer(x, MaskMode::TrueMask, true);
    const ThreadsEnv env("1");
    for (int k = 0; k < 20; ++k) {
        const auto r = engine.infer(x, MaskMode::TrueMask, true);
        CHECK(verify_schedule(engine.dag(), r.events).ok);
        CHECK(r.y == threaded.y);
    }
}

TEST_CASE("outputs are identical across interleavings") {
    Rng rng(10);
    const auto model = random_model({4, 16, 48, ActivationKind::ReLU}, rng, true);
    const Engine engine(model, policy_for(model, random_split(model, rng)));
    const auto x = random_input(16, rng);
    const auto first = engine.infer(x, MaskMode::TrueMask);
    for (int k = 0; k < 200; ++k) {
        const auto r = engine.infer(x, MaskMode::TrueMask, true);
        CHECK(r.y == first.y);
        CHECK(verify_schedule(engine.dag(), r.events).ok);
    }
}

TEST_CASE("predicted-mask error comes only from missed neurons") {
    WorkloadSpec spec;
    spec.num_layers = 3;
    spec.hidden_dim = 16;
    spec.intermediate_dim = 64;
    spec.num_inputs = 300;
    spec.seed = 11;
    const auto w = generate_workload(spec);
    const auto samples = collect_layer_samples(w.model, w.inputs);
    PredictorSet predictors;
    for (std::size_t l = 0; l < samples.size(); ++l) {
        predictors.layers.push_back(train_adaptive(samples[l], 16, 64, 0.9).model);
    }
    Rng rng(12);
    const Engine engine(w.model, policy_for(w.model, random_split(w.model, rng)), predictors);
    for (std::size_t k = 0; k < 50; ++k) {
        const auto& x = w.inputs[k];
        const auto r = engine.infer(x, MaskMode::PredictedMask);
        // Replay: keep only the predicted neurons, which drops the false negatives.
        std::vector<std::set<std::uint32_t>> keep;
        std::vector<float> cur = x;
        Model head = w.model;
        for (std::size_t l = 0; l < 3; ++l) {
            const auto pred = predict_mask(predictors.layers[l], cur);
            CHECK(pred == r.masks[l]);
            keep.emplace_back(pred.active.begin(), pred.active.end());
            head.layers.assign(w.model.layers.begin(), w.model.layers.begin() + std::ptrdiff_t(l + 1));
            cur = oracle::to_float(masked_forward(head, x, keep));
        }
        const auto ref = masked_forward(w.model, x, keep);
        CHECK(max_relative_error(r.y, oracle::to_float(ref)) <= 1e-6);
    }
}
