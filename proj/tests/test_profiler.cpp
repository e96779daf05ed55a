#include <doctest.h>

#include <filesystem>
#include <random>

#include "neursplit/error.hpp"
#include "neursplit/io.hpp"
#include "neursplit/profiler.hpp"
#include "neursplit/workload.hpp"
#include "oracles.hpp"

using namespace neursplit;

namespace {

ActivationStats from_counts(std::vector<std::uint64_t> counts, std::uint64_t total) {
    ActivationStats s = ActivationStats::zeros(1, counts.size());
    s.counts = std::move(counts);
    s.total_inputs = total;
    return s;
}

std::vector<std::uint64_t> zipf_counts(std::size_t n, double s, std::uint64_t scale) {
    std::vector<std::uint64_t> counts(n);
    for (std::size_t r = 0; r < n; ++r) counts[r] = static_cast<std::uint64_t>(double(scale) * std::pow(r + 1.0, -s));
    std::mt19937_64 rng(9);
    std::shuffle(counts.begin(), counts.end(), rng);
    return counts;
}

// Bernoulli masks from a planted distribution: a fixed hot set fires often.
ActivationStats planted_stats(const std::vector<double>& p, std::size_t inputs, std::uint64_t seed) {
    ActivationStats s = ActivationStats::zeros(1, p.size());
    Rng rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (std::size_t k = 0; k < inputs; ++k) {
        ActivationMask mask;
        for (std::uint32_t i = 0; i < p.size(); ++i) {
            if (u(rng) < p[i]) mask.active.push_back(i);
        }
        s.record(mask);
    }
    return s;
}

} // namespace

TEST_CASE("profile: zero input yields zero counts") {
    Rng rng(1);
    const auto model = random_model({2, 4, 8, ActivationKind::ReLU}, rng);
    const std::vector<std::vector<float>> corpus{std::vector<float>(4, 0.0f)};
    const auto stats = profile(model, corpus);
    CHECK(stats.total_inputs == 1);
    CHECK(stats.total_activations() == 0);
}

TEST_CASE("profile: constructed sign pattern") {
    Model model;
    model.config = {1, 2, 2, ActivationKind::ReLU};
    LayerWeights w;
    w.fc1 = Matrix(2, 2);
    w.fc1.data = {1, 0, -1, 0};
    w.fc2 = Matrix(2, 2);
    model.layers.push_back(w);
    const std::vector<std::vector<float>> corpus{{1.0f, 0.0f}};
    const auto stats = profile(model, corpus);
    CHECK(stats.counts == std::vector<std::uint64_t>{1, 0});
}

TEST_CASE("profile matches an independent recount and is shard-invariant") {
    Rng rng(4);
    const auto model = random_model({2, 8, 16, ActivationKind::ReLU}, rng, true);
    const auto corpus = sample_inputs(8, 64, rng);
    const auto expected = oracle::recount(model, corpus);
    for (const std::size_t workers : {1, 2, 3, 7}) {
        const auto stats = profile(model, corpus, workers);
        CHECK(stats.counts == expected);
        CHECK(stats.total_inputs == 64);
    }
    CHECK_THROWS_AS(profile(model, std::vector<std::vector<float>>{}), Error);
    CHECK_THROWS_AS(profile(model, std::vector<std::vector<float>>{std::vector<float>(3)}), Error);
}

TEST_CASE("merge associativity") {
    Rng rng(5);
    const auto model = random_model({3, 6, 10, ActivationKind::ReGLU}, rng);
    const auto corpus = sample_inputs(6, 40, rng);
    const std::vector<std::vector<float>> a(corpus.begin(), corpus.begin() + 17);
    const std::vector<std::vector<float>> b(corpus.begin() + 17, corpus.end());
    auto merged = profile(model, a);
    merged.merge(profile(model, b));
    CHECK(merged == profile(model, corpus));
    auto other = ActivationStats::zeros(2, 10);
    CHECK_THROWS_AS(merged.merge(other), Error);
}

TEST_CASE("cdf basics") {
    SUBCASE("single hot neuron") {
        const auto curve = activation_cdf(from_counts({4, 0, 0, 0}, 4));
        REQUIRE(curve.size() == 5);
        CHECK(curve[1].neuron_fraction == 0.25);
        CHECK(curve[1].mass_fraction == 1.0);
        CHECK(curve.back().neuron_fraction == 1.0);
        CHECK(curve.back().mass_fraction == 1.0);
    }
    SUBCASE("uniform counts give the diagonal") {
        const auto curve = activation_cdf(from_counts(std::vector<std::uint64_t>(10, 3), 5));
        for (std::size_t k = 0; k <= 10; ++k) {
            CHECK(curve[k].neuron_fraction == doctest::Approx(k / 10.0));
            CHECK(curve[k].mass_fraction == doctest::Approx(k / 10.0));
        }
    }
    SUBCASE("no activations") {
        CHECK_THROWS_WITH_AS(activation_cdf(from_counts({0, 0}, 3)), "no activations profiled", Error);
    }
    SUBCASE("ties break by ascending id") {
        const auto order = activation_order(from_counts({2, 5, 2, 5}, 5));
        CHECK(order[0].index == 1);
        CHECK(order[1].index == 3);
        CHECK(order[2].index == 0);
        CHECK(order[3].index == 2);
    }
}

TEST_CASE("zipf counts: 80% mass fraction equals the sort oracle") {
    for (const double s : {0.6, 1.0, 1.2, 2.0}) {
        const auto counts = zipf_counts(1024, s, 100000);
        const auto stats = from_counts(counts, 100000);
        const auto curve = activation_cdf(stats);
        for (const double mass : {0.5, 0.8, 0.95}) {
            CHECK(neuron_fraction_for_mass(curve, mass) == oracle::sort_fraction_for_mass(counts, mass));
        }
        // Power-law concentration: the CDF sits on or above the diagonal.
        for (const auto& p : curve) CHECK(p.mass_fraction >= p.neuron_fraction - 1e-12);
        for (std::size_t k = 1; k < curve.size(); ++k) {
            CHECK(curve[k].mass_fraction >= curve[k - 1].mass_fraction);
            CHECK(curve[k].neuron_fraction >= curve[k - 1].neuron_fraction);
        }
    }
}

TEST_CASE("hot set") {
    CHECK(hot_set(from_counts({9, 1}, 10), 0.8).size() == 1);
    const auto all = hot_set(from_counts({3, 0, 1, 2, 0}, 4), 1.0);
    CHECK(all.size() == 3);
    CHECK_THROWS_AS(hot_set(from_counts({1}, 1), 0.0), Error);
    CHECK_THROWS_AS(hot_set(from_counts({1}, 1), 1.5), Error);

    for (const double s : {0.8, 1.2}) {
        const auto counts = zipf_counts(1024, s, 5000);
        const auto stats = from_counts(counts, 5000);
        for (const double c : {0.5, 0.8, 0.99}) {
            const auto hs = hot_set(stats, c);
            const auto ref = oracle::brute_hot_prefix(counts, c);
            REQUIRE(hs.size() == ref.size());
            for (std::size_t k = 0; k < hs.size(); ++k) CHECK(hs[k].index == ref[k]);
            // Minimality: dropping the last neuron falls below the coverage.
            std::uint64_t mass = 0;
            for (std::size_t k = 0; k + 1 < hs.size(); ++k) mass += counts[hs[k].index];
            CHECK(double(mass) < c * double(stats.total_activations()));
        }
    }
}

TEST_CASE("overlap") {
    const auto a = from_counts({5, 4, 0, 0, 0, 0, 0, 0, 0, 0}, 5);
    CHECK(overlap(a, a, 0.2) == 1.0);
    const auto b = from_counts({0, 0, 0, 0, 0, 0, 0, 0, 7, 6}, 7);
    CHECK(overlap(a, b, 0.2) == 0.0);
    CHECK_THROWS_AS(overlap(a, ActivationStats::zeros(2, 5), 0.2), Error);

    // Two corpora from one planted hot-set distribution agree on the top 20%.
    std::vector<double> p(2000, 0.02);
    Rng rng(77);
    std::vector<std::size_t> idx(p.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng);
    for (std::size_t k = 0; k < 400; ++k) p[idx[k]] = 0.3 + 0.4 * double(k) / 400.0;
    const auto s1 = planted_stats(p, 500, 1);
    const auto s2 = planted_stats(p, 500, 2);
    const double ov = overlap(s1, s2, 0.2);
    // Hand intersection of the two top sets.
    auto top = [](const ActivationStats& s) {
        std::vector<std::size_t> order(s.counts.size());
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](auto x, auto y) { return s.counts[x] > s.counts[y]; });
        order.resize(400);
        return std::set<std::size_t>(order.begin(), order.end());
    };
    const auto t1 = top(s1);
    const auto t2 = top(s2);
    std::size_t common = 0;
    for (const auto i : t1) common += t2.count(i);
    CHECK(ov == double(common) / 400.0);
    CHECK(ov >= 0.9);
}

TEST_CASE("stats file round-trip and rejection") {
    const auto dir = std::filesystem::temp_directory_path() / "neursplit_test_profiler";
    std::filesystem::remove_all(dir);
    const auto stats = from_counts({1, 2, 3, 0}, 3);
    save_stats(stats, dir / "s.bin");
    CHECK(load_stats(dir / "s.bin") == stats);
    io::write_file(dir / "bad.bin", "{\"format\":\"neursplit-stats/9\"}\n");
    CHECK_THROWS_AS(load_stats(dir / "bad.bin"), Error);
    auto broken = stats;
    broken.counts[0] = 99;
    CHECK_THROWS_AS(broken.check(), Error);
    std::filesystem::remove_all(dir);
}

TEST_CASE("gini") {
    CHECK(gini(std::vector<std::uint64_t>{5, 5, 5, 5}) == doctest::Approx(0.0));
    CHECK(gini(std::vector<std::uint64_t>{0, 0, 0, 8}) == doctest::Approx(0.75));
}
