#pragma once

// Random placement instances and policy mutations shared by the placement
// tests and the acceptance suite.

#include <algorithm>
#include <cstdint>
#include <random>
#include <vector>

#include "neursplit/placement.hpp"
#include "neursplit/runtime.hpp"

namespace testing_support {

using neursplit::DevicePair;
using neursplit::kNoSplit;
using neursplit::NeuronBatch;
using neursplit::PlacementPolicy;
using neursplit::Rng;
using neursplit::Unit;

inline DevicePair devices(std::uint64_t fast_cap, std::uint64_t slow_cap, double sync = 0.0) {
    DevicePair d;
    d.fast = {"fast", fast_cap, 100e9};
    d.slow = {"slow", slow_cap, 10e9};
    d.sync_cost = sync;
    return d;
}

struct Instance {
    std::vector<NeuronBatch> batches;
    DevicePair devices;
    std::vector<std::uint64_t> min_fast;
    std::uint64_t total_bytes = 0;
};

// Layers of contiguous batches with random sizes and activation counts.
inline Instance random_instance(Rng& rng, std::size_t layers, std::size_t per_layer, std::size_t batch_size,
                         double fast_fraction, double sync) {
    std::uniform_int_distribution<std::uint64_t> acts(0, 1000);
    std::uniform_int_distribution<std::size_t> size(1, batch_size);
    Instance in;
    std::vector<std::size_t> sizes(layers * per_layer);
    for (auto& s : sizes) s = size(rng);
    std::size_t m = 0;
    for (std::size_t l = 0; l < layers; ++l) {
        std::size_t n = 0;
        for (std::size_t k = 0; k < per_layer; ++k) n += sizes[l * per_layer + k];
        m = std::max(m, n);
    }
    for (std::size_t l = 0; l < layers; ++l) {
        std::uint32_t next = 0;
        const std::uint64_t neuron_bytes = 64 * (l + 1);
        for (std::size_t k = 0; k < per_layer; ++k) {
            NeuronBatch b;
            b.layer = static_cast<std::uint32_t>(l);
            const std::size_t n = sizes[l * per_layer + k];
            // The last batch of the layer absorbs the slack so every layer has m neurons.
            const std::size_t take = k + 1 == per_layer ? m - next : n;
            for (std::size_t i = 0; i < take; ++i) b.members.push_back(next++);
            b.activations = acts(rng);
            b.bytes = neuron_bytes * b.members.size();
            in.total_bytes += b.bytes;
            in.batches.push_back(std::move(b));
        }
    }
    for (auto& b : in.batches) b.impact = double(b.activations) / 1000.0;
    in.devices = devices(static_cast<std::uint64_t>(fast_fraction * double(in.total_bytes)), in.total_bytes, sync);
    in.min_fast = neursplit::layer_thresholds(in.batches, layers, in.devices);
    return in;
}

// Applies `count` random edits that may break any of the placement constraints.
inline void mutate_policy(PlacementPolicy& q, Rng& rng, int count, std::uint64_t reserve_step) {
    std::uniform_int_distribution<int> pick(0, 7);
    for (int k = 0; k < count && !q.assignment.empty(); ++k) {
        std::uniform_int_distribution<std::size_t> batch(0, q.assignment.size() - 1);
        std::uniform_int_distribution<std::size_t> layer(0, q.num_layers - 1);
        switch (pick(rng)) {
        case 0:
        case 1: {
            auto& u = q.assignment[batch(rng)];
            u = u == Unit::Fast ? Unit::Slow : Unit::Fast;
            break;
        }
        case 2: q.split[layer(rng)] ^= 1; break;
        case 3: q.split[layer(rng)] = 2; break;
        case 4: {
            auto& c = q.min_fast[layer(rng)];
            c = c == kNoSplit || c == 0 ? 0 : c - 1;
            break;
        }
        case 5: q.assignment[batch(rng)] = static_cast<Unit>(5); break;
        case 6: q.reserved_fast_bytes += reserve_step; break;
        case 7:
            if (rng() % 4 == 0) q.assignment.pop_back();
            break;
        }
    }
}

} // namespace testing_support
