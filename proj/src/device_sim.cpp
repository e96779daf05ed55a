#include "neursplit/device_sim.hpp"

#include <algorithm>
#include <numeric>

#include "neursplit/error.hpp"

namespace neursplit {

LayerLatency& LayerLatency::operator+=(const LayerLatency& o) {
    fast_s += o.fast_s;
    slow_s += o.slow_s;
    sync_s += o.sync_s;
    predict_s += o.predict_s;
    total_s += o.total_s;
    fast_active += o.fast_active;
    slow_active += o.slow_active;
    return *this;
}

double LatencyBreakdown::fast_load_share() const {
    const auto all = totals.fast_active + totals.slow_active;
    return all == 0 ? 0.0 : double(totals.fast_active) / double(all);
}

std::string to_string(BaselineMode mode) {
    switch (mode) {
    case BaselineMode::DenseSplit: return "dense-split";
    case BaselineMode::PoLayerwise: return "po";
    case BaselineMode::EngineRandom: return "engine-random";
    }
    return "unknown";
}

LayerLatency layer_latency(std::span<const Unit> units, const ActivationMask& mask, double t_fast, double t_slow,
                           double t_sync, const SimOptions& options) {
    LayerLatency out;
    out.layer = mask.layer;
    for (const auto i : mask.active) {
        require(i < units.size(), "layer_latency: neuron " + std::to_string(i) + " not covered by the policy");
        if (units[i] == Unit::Fast) {
            ++out.fast_active;
        } else {
            ++out.slow_active;
        }
    }
    out.fast_s = double(out.fast_active) * t_fast;
    out.slow_s = double(out.slow_active) * t_slow;
    out.sync_s = (out.fast_active > 0 && out.slow_active > 0) ? t_sync : 0.0;
    const double compute = std::max(out.fast_s, out.slow_s);
    out.predict_s = options.predictor_overhead * compute;
    out.total_s = out.predict_s + compute + out.sync_s;
    return out;
}

std::vector<std::uint64_t> policy_neuron_bytes(const PlacementPolicy& policy) {
    std::vector<std::uint64_t> bytes(policy.num_layers, 0);
    for (const auto& b : policy.batches) {
        if (b.size() > 0 && b.layer < bytes.size()) bytes[b.layer] = b.bytes / b.size();
    }
    return bytes;
}

namespace {

LatencyBreakdown empty_breakdown(std::string label, std::size_t num_layers) {
    LatencyBreakdown out;
    out.label = std::move(label);
    out.layers.resize(num_layers);
    for (std::size_t l = 0; l < num_layers; ++l) out.layers[l].layer = static_cast<std::uint32_t>(l);
    return out;
}

void close_totals(LatencyBreakdown& out) {
    out.totals = LayerLatency{};
    out.totals.layer = static_cast<std::uint32_t>(out.layers.size());
    for (const auto& l : out.layers) out.totals += l;
}

void check_trace(const MaskTrace& trace, std::size_t num_layers, std::size_t m) {
    for (const auto& masks : trace) {
        require(masks.size() == num_layers, "trace entry has " + std::to_string(masks.size()) +
                                                " layer masks, expected " + std::to_string(num_layers));
        for (const auto& mask : masks) mask.check(m);
    }
}

LatencyBreakdown simulate_units(std::string label, const std::vector<std::vector<Unit>>& units,
                                std::span<const std::uint64_t> neuron_bytes, const DevicePair& devices,
                                const MaskTrace& trace, const SimOptions& options) {
    const std::size_t layers = units.size();
    auto out = empty_breakdown(std::move(label), layers);
    out.inputs = trace.size();
    for (const auto& masks : trace) {
        for (std::size_t l = 0; l < layers; ++l) {
            const double bytes = double(neuron_bytes[l]);
            auto step = layer_latency(units[l], masks[l], neuron_time(bytes, devices.fast.bandwidth),
                                      neuron_time(bytes, devices.slow.bandwidth), devices.sync_cost, options);
            out.layers[l] += step;
        }
    }
    close_totals(out);
    return out;
}

// Layer-split execution: every neuron of a layer runs on its owner, and the
// activation crosses devices when the owner changes between layers.
LatencyBreakdown simulate_layerwise(std::string label, std::span<const Unit> owners, bool dense,
                                    std::span<const std::uint64_t> neuron_bytes, std::size_t m,
                                    const DevicePair& devices, const MaskTrace& trace, const SimOptions& options) {
    const std::size_t layers = owners.size();
    auto out = empty_breakdown(std::move(label), layers);
    out.inputs = trace.size();
    for (const auto& masks : trace) {
        for (std::size_t l = 0; l < layers; ++l) {
            const std::uint64_t n = dense ? m : masks[l].size();
            const double bytes = double(neuron_bytes[l]);
            LayerLatency step;
            if (owners[l] == Unit::Fast) {
                step.fast_active = masks[l].size();
                step.fast_s = double(n) * neuron_time(bytes, devices.fast.bandwidth);
            } else {
                step.slow_active = masks[l].size();
                step.slow_s = double(n) * neuron_time(bytes, devices.slow.bandwidth);
            }
            if (l > 0 && n > 0 && owners[l] != owners[l - 1]) step.sync_s = devices.sync_cost;
            const double compute = step.fast_s + step.slow_s;
            step.predict_s = dense ? 0.0 : options.predictor_overhead * compute;
            step.total_s = step.predict_s + compute + step.sync_s;
            out.layers[l] += step;
        }
    }
    close_totals(out);
    return out;
}

} // namespace

LatencyBreakdown simulate(const PlacementPolicy& policy, const MaskTrace& trace, const SimOptions& options) {
    policy.devices.check();
    check_trace(trace, policy.num_layers, policy.intermediate_dim);
    return simulate_units("policy", policy.neuron_units(), policy_neuron_bytes(policy), policy.devices, trace, options);
}

std::vector<Unit> layer_owners(std::span<const std::uint64_t> neuron_bytes, std::size_t m, std::uint64_t budget) {
    std::vector<Unit> owners(neuron_bytes.size(), Unit::Slow);
    std::uint64_t used = 0;
    for (std::size_t l = 0; l < neuron_bytes.size(); ++l) {
        const std::uint64_t layer_bytes = neuron_bytes[l] * m;
        if (used + layer_bytes <= budget) {
            owners[l] = Unit::Fast;
            used += layer_bytes;
        }
    }
    return owners;
}

PlacementPolicy random_policy(std::size_t num_layers, std::size_t m, std::span<const std::uint64_t> neuron_bytes,
                              const DevicePair& devices, std::uint64_t reserved_fast_bytes, Rng& rng,
                              std::size_t batch_size) {
    require(batch_size >= 1, "random_policy: batch_size must be >= 1");
    require(neuron_bytes.size() == num_layers, "random_policy: need neuron bytes for every layer");
    PlacementPolicy p;
    p.num_layers = num_layers;
    p.intermediate_dim = m;
    p.devices = devices;
    p.reserved_fast_bytes = reserved_fast_bytes;
    std::vector<std::uint32_t> perm(m);
    for (std::size_t l = 0; l < num_layers; ++l) {
        std::iota(perm.begin(), perm.end(), 0u);
        std::shuffle(perm.begin(), perm.end(), rng);
        for (std::size_t start = 0; start < m; start += batch_size) {
            NeuronBatch b;
            b.layer = static_cast<std::uint32_t>(l);
            const std::size_t end = std::min(m, start + batch_size);
            b.members.assign(perm.begin() + static_cast<std::ptrdiff_t>(start),
                             perm.begin() + static_cast<std::ptrdiff_t>(end));
            std::sort(b.members.begin(), b.members.end());
            b.bytes = neuron_bytes[l] * b.members.size();
            p.batches.push_back(std::move(b));
        }
    }
    std::vector<std::size_t> order(p.batches.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    const std::uint64_t budget =
        devices.fast.mem_capacity > reserved_fast_bytes ? devices.fast.mem_capacity - reserved_fast_bytes : 0;
    p.assignment.assign(p.batches.size(), Unit::Slow);
    std::uint64_t used = 0;
    for (const auto b : order) {
        if (used + p.batches[b].bytes <= budget) {
            p.assignment[b] = Unit::Fast;
            used += p.batches[b].bytes;
        }
    }
    p.min_fast.assign(num_layers, 0);
    p.status = SolverStatus::Feasible;
    finalize_policy(p);
    return p;
}

LatencyBreakdown baseline_latency(BaselineMode mode, const PlacementPolicy& reference, const MaskTrace& trace,
                                  const SimOptions& options, std::uint64_t seed) {
    reference.devices.check();
    check_trace(trace, reference.num_layers, reference.intermediate_dim);
    const auto bytes = policy_neuron_bytes(reference);
    const auto cap = reference.devices.fast.mem_capacity;
    const std::uint64_t budget = cap > reference.reserved_fast_bytes ? cap - reference.reserved_fast_bytes : 0;
    switch (mode) {
    case BaselineMode::DenseSplit:
    case BaselineMode::PoLayerwise: {
        const auto owners = layer_owners(bytes, reference.intermediate_dim, budget);
        return simulate_layerwise(to_string(mode), owners, mode == BaselineMode::DenseSplit, bytes,
                                  reference.intermediate_dim, reference.devices, trace, options);
    }
    case BaselineMode::EngineRandom: {
        require(options.random_draws >= 1, "baseline_latency: random_draws must be >= 1");
        Rng rng(seed);
        const std::size_t draws = options.random_draws;
        LatencyBreakdown sum;
        for (std::size_t k = 0; k < draws; ++k) {
            const auto p = random_policy(reference.num_layers, reference.intermediate_dim, bytes, reference.devices,
                                         reference.reserved_fast_bytes, rng);
            auto one = simulate_units(to_string(mode), p.neuron_units(), bytes, reference.devices, trace, options);
            if (k == 0) {
                sum = std::move(one);
                continue;
            }
            for (std::size_t l = 0; l < sum.layers.size(); ++l) sum.layers[l] += one.layers[l];
        }
        for (auto& step : sum.layers) {
            step.fast_s /= double(draws);
            step.slow_s /= double(draws);
            step.sync_s /= double(draws);
            step.predict_s /= double(draws);
            step.total_s /= double(draws);
            step.fast_active = (step.fast_active + draws / 2) / draws;
            step.slow_active = (step.slow_active + draws / 2) / draws;
        }
        close_totals(sum);
        return sum;
    }
    }
    fail("baseline_latency: unknown mode");
}

std::optional<std::uint64_t> breakeven_batch(const DevicePair& devices, double bytes, double pcie_bandwidth,
                                             std::uint64_t max_batch) {
    require(devices.fast.bandwidth > 0.0 && devices.slow.bandwidth > 0.0 && pcie_bandwidth > 0.0,
            "breakeven_batch: bandwidths must be > 0");
    const double transfer = bytes / pcie_bandwidth;
    const double fast = bytes / devices.fast.bandwidth;
    const double slow = bytes / devices.slow.bandwidth;
    for (std::uint64_t b = 1; b <= max_batch; ++b) {
        if (transfer + double(b) * fast < double(b) * slow) return b;
    }
    return std::nullopt;
}

} // namespace neursplit
