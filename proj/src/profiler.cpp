#include "neursplit/profiler.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <thread>

#include "neursplit/error.hpp"
#include "neursplit/io.hpp"
#include "neursplit/runtime.hpp"

namespace neursplit {

namespace {

// Mass test shared by the CDF lookup and hot_set so both agree on boundaries.
bool covers(std::uint64_t cumulative, std::uint64_t total, double fraction) {
    return double(cumulative) >= fraction * double(total);
}

ActivationStats profile_shard(const Model& model, std::span<const std::vector<float>> corpus) {
    auto stats = ActivationStats::zeros(model.config.num_layers, model.config.intermediate_dim);
    for (const auto& x : corpus) {
        const auto out = forward(model, x);
        for (const auto& mask : out.masks) stats.record(mask);
        ++stats.total_inputs;
    }
    return stats;
}

} // namespace

ActivationStats ActivationStats::zeros(std::size_t num_layers, std::size_t m) {
    ActivationStats s;
    s.num_layers = num_layers;
    s.intermediate_dim = m;
    s.counts.assign(num_layers * m, 0);
    return s;
}

NeuronId ActivationStats::id(std::size_t flat_index) const {
    return {static_cast<std::uint32_t>(flat_index / intermediate_dim),
            static_cast<std::uint32_t>(flat_index % intermediate_dim)};
}

double ActivationStats::frequency(NeuronId n) const {
    return total_inputs == 0 ? 0.0 : double(count(n)) / double(total_inputs);
}

std::uint64_t ActivationStats::total_activations() const {
    return std::accumulate(counts.begin(), counts.end(), std::uint64_t{0});
}

std::span<const std::uint64_t> ActivationStats::layer_counts(std::size_t layer) const {
    require(layer < num_layers, "layer " + std::to_string(layer) + " out of range");
    return {counts.data() + layer * intermediate_dim, intermediate_dim};
}

void ActivationStats::record(const ActivationMask& mask) {
    require(mask.layer < num_layers, "mask layer " + std::to_string(mask.layer) + " out of range");
    mask.check(intermediate_dim);
    for (const auto i : mask.active) ++counts[std::size_t(mask.layer) * intermediate_dim + i];
}

void ActivationStats::merge(const ActivationStats& other) {
    if (other.num_layers != num_layers || other.intermediate_dim != intermediate_dim) {
        fail("cannot merge stats of shape " + std::to_string(other.num_layers) + "x" +
             std::to_string(other.intermediate_dim) + " into " + std::to_string(num_layers) + "x" +
             std::to_string(intermediate_dim));
    }
    for (std::size_t i = 0; i < counts.size(); ++i) counts[i] += other.counts[i];
    total_inputs += other.total_inputs;
}

void ActivationStats::check() const {
    require(counts.size() == num_layers * intermediate_dim, "stats: counts size does not match dims");
    for (std::size_t i = 0; i < counts.size(); ++i) {
        if (counts[i] > total_inputs) {
            fail("stats: neuron " + std::to_string(i) + " count " + std::to_string(counts[i]) +
                 " exceeds total_inputs " + std::to_string(total_inputs));
        }
    }
}

ActivationStats profile(const Model& model, std::span<const std::vector<float>> corpus, std::size_t workers) {
    model.check();
    require(!corpus.empty(), "profile: empty corpus");
    for (std::size_t k = 0; k < corpus.size(); ++k) {
        if (corpus[k].size() != model.config.hidden_dim) {
            fail("profile: corpus vector " + std::to_string(k) + " has length " + std::to_string(corpus[k].size()) +
                 ", model expects " + std::to_string(model.config.hidden_dim));
        }
    }
    if (workers == 0) workers = thread_budget();
    workers = std::clamp<std::size_t>(workers, 1, corpus.size());
    if (workers == 1) return profile_shard(model, corpus);

    std::vector<ActivationStats> shards(workers);
    std::vector<std::thread> threads;
    const std::size_t chunk = (corpus.size() + workers - 1) / workers;
    for (std::size_t w = 0; w < workers; ++w) {
        const std::size_t begin = std::min(corpus.size(), w * chunk);
        const std::size_t end = std::min(corpus.size(), begin + chunk);
        threads.emplace_back([&, w, begin, end] { shards[w] = profile_shard(model, corpus.subspan(begin, end - begin)); });
    }
    for (auto& t : threads) t.join();
    auto stats = ActivationStats::zeros(model.config.num_layers, model.config.intermediate_dim);
    for (const auto& s : shards) stats.merge(s);
    return stats;
}

std::vector<std::vector<ActivationMask>> record_masks(const Model& model, std::span<const std::vector<float>> corpus) {
    std::vector<std::vector<ActivationMask>> out;
    out.reserve(corpus.size());
    for (const auto& x : corpus) out.push_back(forward(model, x).masks);
    return out;
}

std::vector<std::vector<LayerSample>> collect_layer_samples(const Model& model,
                                                            std::span<const std::vector<float>> corpus) {
    std::vector<std::vector<LayerSample>> out(model.layers.size());
    for (const auto& input : corpus) {
        std::vector<float> x = input;
        for (std::size_t l = 0; l < model.layers.size(); ++l) {
            auto step = dense_mlp_forward(model.layers[l], x, static_cast<std::uint32_t>(l));
            out[l].push_back({std::move(x), std::move(step.mask)});
            x = std::move(step.y);
        }
    }
    return out;
}

std::vector<NeuronId> activation_order(const ActivationStats& stats) {
    std::vector<std::size_t> flat(stats.neuron_count());
    std::iota(flat.begin(), flat.end(), 0);
    std::stable_sort(flat.begin(), flat.end(),
                     [&](std::size_t a, std::size_t b) { return stats.counts[a] > stats.counts[b]; });
    std::vector<NeuronId> out;
    out.reserve(flat.size());
    for (const auto f : flat) out.push_back(stats.id(f));
    return out;
}

CdfCurve activation_cdf(const ActivationStats& stats) {
    const std::uint64_t total = stats.total_activations();
    require(total > 0, "no activations profiled");
    const auto order = activation_order(stats);
    const double n = double(order.size());
    CdfCurve curve;
    curve.reserve(order.size() + 1);
    curve.push_back({0.0, 0.0, 0});
    std::uint64_t cum = 0;
    for (std::size_t k = 0; k < order.size(); ++k) {
        cum += stats.count(order[k]);
        curve.push_back({double(k + 1) / n, double(cum) / double(total), cum});
    }
    // Pin the end point exactly.
    curve.back().neuron_fraction = 1.0;
    curve.back().mass_fraction = 1.0;
    return curve;
}

double neuron_fraction_for_mass(const CdfCurve& curve, double mass) {
    require(!curve.empty(), "empty CDF curve");
    const std::uint64_t total = curve.back().cumulative;
    for (const auto& p : curve) {
        if (covers(p.cumulative, total, mass)) return p.neuron_fraction;
    }
    return 1.0;
}

std::vector<NeuronId> hot_set(const ActivationStats& stats, double coverage) {
    if (!(coverage > 0.0 && coverage <= 1.0)) fail("hot_set: coverage must be in (0, 1]");
    const std::uint64_t total = stats.total_activations();
    std::vector<NeuronId> out;
    if (total == 0) return out;
    std::uint64_t cum = 0;
    for (const auto& n : activation_order(stats)) {
        out.push_back(n);
        cum += stats.count(n);
        if (covers(cum, total, coverage)) break;
    }
    return out;
}

double overlap(const ActivationStats& a, const ActivationStats& b, double top_fraction) {
    if (a.num_layers != b.num_layers || a.intermediate_dim != b.intermediate_dim) {
        fail("overlap: neuron universes differ");
    }
    if (!(top_fraction > 0.0 && top_fraction <= 1.0)) fail("overlap: top_fraction must be in (0, 1]");
    const std::size_t n = a.neuron_count();
    if (n == 0) return 1.0;
    // Guard against products like 0.2 * 10 landing a hair above an integer.
    auto k = static_cast<std::size_t>(std::ceil(top_fraction * double(n) - 1e-9));
    k = std::clamp<std::size_t>(k, 1, n);
    auto top = [&](const ActivationStats& s) {
        auto order = activation_order(s);
        order.resize(k);
        std::sort(order.begin(), order.end());
        return order;
    };
    const auto ta = top(a);
    const auto tb = top(b);
    std::vector<NeuronId> common;
    std::set_intersection(ta.begin(), ta.end(), tb.begin(), tb.end(), std::back_inserter(common));
    return double(common.size()) / double(ta.size());
}

double gini(std::span<const std::uint64_t> counts) {
    if (counts.empty()) return 0.0;
    std::vector<std::uint64_t> sorted(counts.begin(), counts.end());
    std::sort(sorted.begin(), sorted.end());
    double weighted = 0.0;
    double total = 0.0;
    for (std::size_t i = 0; i < sorted.size(); ++i) {
        weighted += double(i + 1) * double(sorted[i]);
        total += double(sorted[i]);
    }
    if (total == 0.0) return 0.0;
    const double n = double(sorted.size());
    return (2.0 * weighted) / (n * total) - (n + 1.0) / n;
}

void save_stats(const ActivationStats& stats, const std::filesystem::path& path) {
    stats.check();
    std::string payload;
    io::append_u64(payload, stats.counts);
    io::write_header_file(path,
                          json{{"format", kStatsFormat},
                               {"num_layers", stats.num_layers},
                               {"intermediate_dim", stats.intermediate_dim},
                               {"total_inputs", stats.total_inputs}},
                          payload);
}

ActivationStats load_stats(const std::filesystem::path& path) {
    const auto file = io::read_header_file(path, kStatsFormat);
    ActivationStats stats;
    stats.num_layers = file.header.at("num_layers").get<std::size_t>();
    stats.intermediate_dim = file.header.at("intermediate_dim").get<std::size_t>();
    stats.total_inputs = file.header.at("total_inputs").get<std::uint64_t>();
    const std::size_t n = stats.num_layers * stats.intermediate_dim;
    require(file.payload.size() == n * sizeof(std::uint64_t), path.string() + ": payload size does not match dims");
    stats.counts = io::read_u64(file.payload, 0, n);
    stats.check();
    return stats;
}

} // namespace neursplit
