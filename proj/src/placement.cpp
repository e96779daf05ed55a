#include "neursplit/placement.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <numeric>

#include "neursplit/error.hpp"
#include "neursplit/io.hpp"
#include "neursplit/lp.hpp"

namespace neursplit {

namespace {

// Flattened instance shared by the exact solvers.
struct Instance {
    std::size_t num_layers = 0;
    std::size_t intermediate_dim = 0;
    std::vector<std::uint64_t> layer_neurons; // K_l
    std::vector<std::uint64_t> min_fast;      // C_l
    std::int64_t fast_cap = 0;                // after the reserved share
    std::int64_t slow_cap = 0;
    std::int64_t total_bytes = 0;
    std::uint64_t total_inputs = 0;
};

Instance make_instance(std::span<const NeuronBatch> batches, const DevicePair& devices,
                       std::span<const std::uint64_t> min_fast, const SolveOptions& options) {
    devices.check();
    Instance inst;
    std::size_t layers = options.num_layers;
    std::size_t m = options.intermediate_dim;
    for (const auto& b : batches) {
        layers = std::max<std::size_t>(layers, b.layer + 1);
        for (const auto i : b.members) m = std::max<std::size_t>(m, i + 1);
    }
    inst.num_layers = layers;
    inst.intermediate_dim = m;
    inst.layer_neurons.assign(layers, 0);
    for (const auto& b : batches) {
        inst.layer_neurons[b.layer] += b.size();
        inst.total_bytes += static_cast<std::int64_t>(b.bytes);
    }
    require(min_fast.size() >= layers, "solve: need one C_l per layer (" + std::to_string(layers) + "), got " +
                                           std::to_string(min_fast.size()));
    inst.min_fast.assign(min_fast.begin(), min_fast.begin() + static_cast<std::ptrdiff_t>(layers));
    inst.fast_cap = static_cast<std::int64_t>(devices.fast.mem_capacity) -
                    static_cast<std::int64_t>(options.reserved_fast_bytes);
    inst.slow_cap = static_cast<std::int64_t>(devices.slow.mem_capacity);
    inst.total_inputs = options.total_inputs;
    if (inst.total_inputs == 0) {
        // Recover the common denominator from any batch with a positive impact.
        for (const auto& b : batches) {
            if (b.impact > 0.0 && b.activations > 0) {
                inst.total_inputs = static_cast<std::uint64_t>(std::llround(double(b.activations) / b.impact));
                break;
            }
        }
    }
    return inst;
}

bool layer_ok(std::uint64_t count, std::uint64_t c, std::uint64_t k) {
    if (count == 0) return true;
    if (c == kNoSplit) return false;
    return count >= c && count <= k;
}

PlacementPolicy empty_policy(std::span<const NeuronBatch> batches, const DevicePair& devices, const Instance& inst,
                             const SolveOptions& options) {
    PlacementPolicy p;
    p.num_layers = inst.num_layers;
    p.intermediate_dim = inst.intermediate_dim;
    p.total_inputs = inst.total_inputs;
    p.batches.assign(batches.begin(), batches.end());
    p.assignment.assign(batches.size(), Unit::Slow);
    p.split.assign(inst.num_layers, 0);
    p.min_fast = inst.min_fast;
    p.reserved_fast_bytes = options.reserved_fast_bytes;
    p.devices = devices;
    return p;
}

std::string capacity_diagnostic(const Instance& inst) {
    const std::int64_t usable = std::max<std::int64_t>(0, inst.fast_cap) + inst.slow_cap;
    if (inst.fast_cap < 0) {
        return "reserved FAST bytes exceed FAST capacity by " + std::to_string(-inst.fast_cap);
    }
    if (inst.total_bytes > usable) {
        return "model needs " + std::to_string(inst.total_bytes) + " bytes, combined capacity is " +
               std::to_string(usable) + " (shortfall " + std::to_string(inst.total_bytes - usable) + ")";
    }
    return {};
}

class BranchAndBound {
public:
    BranchAndBound(std::span<const NeuronBatch> batches, const Instance& inst, double time_limit)
        : batches_(batches), inst_(inst), time_limit_(time_limit) {}

    struct Result {
        bool found = false;
        bool proven = false;
        std::vector<Unit> assignment;
        std::uint64_t weight = 0;
        std::uint64_t nodes = 0;
    };

    Result run() {
        start_ = std::chrono::steady_clock::now();
        seed_incumbent();

        Node root;
        root.x.assign(batches_.size(), -1);
        root.y.assign(inst_.num_layers, -1);
        for (std::size_t l = 0; l < inst_.num_layers; ++l) {
            if (inst_.min_fast[l] == kNoSplit || inst_.min_fast[l] > inst_.layer_neurons[l]) {
                root.y[l] = 0;
                fix_layer_slow(root, l);
            }
        }
        std::vector<Node> stack;
        if (relax(root)) stack.push_back(std::move(root));

        bool timed_out = false;
        while (!stack.empty()) {
            if (elapsed() > time_limit_) {
                timed_out = true;
                break;
            }
            Node node = std::move(stack.back());
            stack.pop_back();
            ++result_.nodes;
            if (prunable(node.bound)) continue;
            expand(node, stack);
        }
        result_.proven = !timed_out;
        return result_;
    }

private:
    struct Node {
        std::vector<std::int8_t> x; // -1 free, 0 slow, 1 fast
        std::vector<std::int8_t> y;
        std::vector<double> x_val;
        std::vector<double> y_val;
        double bound = 0.0;
    };

    double elapsed() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

    bool prunable(double bound) const {
        // Integer objective: a node must promise at least one more activation.
        return result_.found && bound < double(result_.weight) + 1.0 - 1e-6;
    }

    void fix_layer_slow(Node& node, std::size_t layer) const {
        for (std::size_t b = 0; b < batches_.size(); ++b) {
            if (batches_[b].layer == layer && node.x[b] == -1) node.x[b] = 0;
        }
    }

    // Returns false when infeasible; fills x_val, y_val and bound otherwise.
    bool relax(Node& node) const {
        std::vector<std::size_t> xvar(batches_.size(), SIZE_MAX);
        std::vector<std::size_t> yvar(inst_.num_layers, SIZE_MAX);
        std::size_t nv = 0;
        for (std::size_t b = 0; b < batches_.size(); ++b) {
            if (node.x[b] == -1) xvar[b] = nv++;
        }
        for (std::size_t l = 0; l < inst_.num_layers; ++l) {
            if (node.y[l] == -1) yvar[l] = nv++;
        }

        double fixed_weight = 0.0;
        double fixed_bytes = 0.0;
        std::vector<double> fixed_count(inst_.num_layers, 0.0);
        for (std::size_t b = 0; b < batches_.size(); ++b) {
            if (node.x[b] != 1) continue;
            fixed_weight += double(batches_[b].activations);
            fixed_bytes += double(batches_[b].bytes);
            fixed_count[batches_[b].layer] += double(batches_[b].size());
        }

        lp::Problem prob;
        prob.num_vars = nv;
        prob.objective.assign(nv, 0.0);
        for (std::size_t b = 0; b < batches_.size(); ++b) {
            if (xvar[b] != SIZE_MAX) prob.objective[xvar[b]] = double(batches_[b].activations);
        }
        bool ok = true;
        auto add = [&](std::vector<double> row, double rhs) {
            double scale = 0.0;
            for (const double v : row) scale = std::max(scale, std::abs(v));
            if (scale == 0.0) {
                if (rhs < -1e-9) ok = false;
                return;
            }
            for (double& v : row) v /= scale;
            prob.add_row(std::move(row), rhs / scale);
        };

        std::vector<double> fast_row(nv, 0.0);
        std::vector<double> slow_row(nv, 0.0);
        for (std::size_t b = 0; b < batches_.size(); ++b) {
            if (xvar[b] == SIZE_MAX) continue;
            fast_row[xvar[b]] = double(batches_[b].bytes);
            slow_row[xvar[b]] = -double(batches_[b].bytes);
        }
        add(std::move(fast_row), double(inst_.fast_cap) - fixed_bytes);
        add(std::move(slow_row), double(inst_.slow_cap) - double(inst_.total_bytes) + fixed_bytes);

        for (std::size_t l = 0; l < inst_.num_layers; ++l) {
            std::vector<double> lower(nv, 0.0); // C y - sum n x <= fixed
            std::vector<double> upper(nv, 0.0); // sum n x - K y <= -fixed
            for (std::size_t b = 0; b < batches_.size(); ++b) {
                if (batches_[b].layer != l || xvar[b] == SIZE_MAX) continue;
                lower[xvar[b]] = -double(batches_[b].size());
                upper[xvar[b]] = double(batches_[b].size());
            }
            const double c = inst_.min_fast[l] == kNoSplit ? 0.0 : double(inst_.min_fast[l]);
            const double k = double(inst_.layer_neurons[l]);
            double lower_rhs = fixed_count[l];
            double upper_rhs = -fixed_count[l];
            if (yvar[l] != SIZE_MAX) {
                lower[yvar[l]] = c;
                upper[yvar[l]] = -k;
            } else {
                lower_rhs -= c * node.y[l];
                upper_rhs += k * node.y[l];
            }
            add(std::move(lower), lower_rhs);
            add(std::move(upper), upper_rhs);
        }
        for (std::size_t v = 0; v < nv; ++v) {
            std::vector<double> row(nv, 0.0);
            row[v] = 1.0;
            prob.add_row(std::move(row), 1.0);
        }
        if (!ok) return false;

        const auto sol = lp::solve(prob);
        if (sol.status != lp::Status::Optimal) return false;
        node.x_val.assign(batches_.size(), 0.0);
        node.y_val.assign(inst_.num_layers, 0.0);
        for (std::size_t b = 0; b < batches_.size(); ++b) {
            node.x_val[b] = xvar[b] == SIZE_MAX ? double(node.x[b]) : sol.x[xvar[b]];
        }
        for (std::size_t l = 0; l < inst_.num_layers; ++l) {
            node.y_val[l] = yvar[l] == SIZE_MAX ? double(node.y[l]) : sol.x[yvar[l]];
        }
        node.bound = sol.objective + fixed_weight;
        return true;
    }

    static bool integral(double v) { return std::abs(v - std::round(v)) <= 1e-6; }

    // Exact integer feasibility of a full assignment; returns the first bad layer if any.
    bool exact_feasible(const std::vector<Unit>& units, std::size_t& bad_layer) const {
        std::int64_t fast = 0;
        std::vector<std::uint64_t> count(inst_.num_layers, 0);
        for (std::size_t b = 0; b < batches_.size(); ++b) {
            if (units[b] != Unit::Fast) continue;
            fast += static_cast<std::int64_t>(batches_[b].bytes);
            count[batches_[b].layer] += batches_[b].size();
        }
        bad_layer = SIZE_MAX;
        for (std::size_t l = 0; l < inst_.num_layers; ++l) {
            if (!layer_ok(count[l], inst_.min_fast[l], inst_.layer_neurons[l])) {
                bad_layer = l;
                return false;
            }
        }
        return fast <= inst_.fast_cap && inst_.total_bytes - fast <= inst_.slow_cap;
    }

    void offer(const std::vector<Unit>& units) {
        std::size_t bad = 0;
        if (!exact_feasible(units, bad)) return;
        std::uint64_t w = 0;
        for (std::size_t b = 0; b < batches_.size(); ++b) {
            if (units[b] == Unit::Fast) w += batches_[b].activations;
        }
        if (!result_.found || w > result_.weight) {
            result_.found = true;
            result_.weight = w;
            result_.assignment = units;
        }
    }

    // Density-greedy packing, then drop layers that cannot meet C_l.
    void seed_incumbent() {
        offer(std::vector<Unit>(batches_.size(), Unit::Slow));
        std::vector<std::size_t> order(batches_.size());
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            const double da = double(batches_[a].activations) / double(std::max<std::uint64_t>(1, batches_[a].bytes));
            const double db = double(batches_[b].activations) / double(std::max<std::uint64_t>(1, batches_[b].bytes));
            return da > db;
        });
        std::vector<Unit> units(batches_.size(), Unit::Slow);
        std::int64_t used = 0;
        for (const auto b : order) {
            const auto bytes = static_cast<std::int64_t>(batches_[b].bytes);
            if (used + bytes <= inst_.fast_cap && inst_.min_fast[batches_[b].layer] != kNoSplit) {
                units[b] = Unit::Fast;
                used += bytes;
            }
        }
        std::vector<std::uint64_t> count(inst_.num_layers, 0);
        for (std::size_t b = 0; b < batches_.size(); ++b) {
            if (units[b] == Unit::Fast) count[batches_[b].layer] += batches_[b].size();
        }
        for (std::size_t b = 0; b < batches_.size(); ++b) {
            const auto l = batches_[b].layer;
            if (!layer_ok(count[l], inst_.min_fast[l], inst_.layer_neurons[l])) units[b] = Unit::Slow;
        }
        offer(units);
    }

    void expand(Node& node, std::vector<Node>& stack) {
        // Branch on a fractional split variable first, then the most fractional batch.
        std::size_t branch_y = SIZE_MAX;
        std::size_t branch_x = SIZE_MAX;
        for (std::size_t l = 0; l < inst_.num_layers && branch_y == SIZE_MAX; ++l) {
            if (node.y[l] == -1 && !integral(node.y_val[l])) branch_y = l;
        }
        if (branch_y == SIZE_MAX) {
            double best = 1e-6;
            for (std::size_t b = 0; b < batches_.size(); ++b) {
                if (node.x[b] != -1) continue;
                const double frac = std::abs(node.x_val[b] - std::round(node.x_val[b]));
                if (frac > best) {
                    best = frac;
                    branch_x = b;
                }
            }
        }
        if (branch_y == SIZE_MAX && branch_x == SIZE_MAX) {
            std::vector<Unit> units(batches_.size());
            for (std::size_t b = 0; b < batches_.size(); ++b) {
                units[b] = std::round(node.x_val[b]) >= 1.0 ? Unit::Fast : Unit::Slow;
            }
            std::size_t bad = SIZE_MAX;
            if (exact_feasible(units, bad)) {
                offer(units);
                return;
            }
            // Integral batches but a split below C_l: branch on that layer's y.
            if (bad == SIZE_MAX || node.y[bad] != -1) return;
            branch_y = bad;
        }

        Node children[2];
        bool alive[2] = {false, false};
        for (int v = 0; v < 2; ++v) {
            children[v].x = node.x;
            children[v].y = node.y;
            if (branch_y != SIZE_MAX) {
                children[v].y[branch_y] = static_cast<std::int8_t>(v);
                if (v == 0) fix_layer_slow(children[v], branch_y);
            } else {
                children[v].x[branch_x] = static_cast<std::int8_t>(v);
            }
            alive[v] = relax(children[v]) && !prunable(children[v].bound);
        }
        // Push the weaker child first so the stronger bound is explored next.
        const int first = (alive[0] && alive[1] && children[0].bound > children[1].bound) ? 1 : 0;
        for (const int v : {first, 1 - first}) {
            if (alive[v]) stack.push_back(std::move(children[v]));
        }
    }

    std::span<const NeuronBatch> batches_;
    const Instance& inst_;
    double time_limit_;
    std::chrono::steady_clock::time_point start_;
    Result result_;
};

} // namespace

std::string to_string(Unit unit) { return unit == Unit::Fast ? "fast" : "slow"; }

std::string to_string(SolverStatus status) {
    switch (status) {
    case SolverStatus::Optimal: return "optimal";
    case SolverStatus::Feasible: return "feasible";
    case SolverStatus::Infeasible: return "infeasible";
    }
    return "unknown";
}

void DevicePair::check() const {
    require(fast.bandwidth > 0.0, "fast device bandwidth must be > 0");
    require(slow.bandwidth > 0.0, "slow device bandwidth must be > 0");
    require(sync_cost >= 0.0, "sync cost must be >= 0");
}

std::vector<std::vector<Unit>> PlacementPolicy::neuron_units() const {
    std::vector<std::vector<Unit>> out(num_layers, std::vector<Unit>(intermediate_dim, Unit::Slow));
    for (std::size_t b = 0; b < batches.size() && b < assignment.size(); ++b) {
        for (const auto i : batches[b].members) out.at(batches[b].layer).at(i) = assignment[b];
    }
    return out;
}

std::uint64_t PlacementPolicy::fast_bytes() const {
    std::uint64_t total = 0;
    for (std::size_t b = 0; b < batches.size(); ++b) {
        if (assignment[b] == Unit::Fast) total += batches[b].bytes;
    }
    return total;
}

std::uint64_t PlacementPolicy::slow_bytes() const {
    std::uint64_t total = 0;
    for (std::size_t b = 0; b < batches.size(); ++b) {
        if (assignment[b] == Unit::Slow) total += batches[b].bytes;
    }
    return total;
}

std::uint64_t PlacementPolicy::fast_neurons(std::size_t layer) const {
    std::uint64_t n = 0;
    for (std::size_t b = 0; b < batches.size(); ++b) {
        if (batches[b].layer == layer && assignment[b] == Unit::Fast) n += batches[b].size();
    }
    return n;
}

std::vector<double> impact(const ActivationStats& stats) {
    std::vector<double> v(stats.counts.size(), 0.0);
    if (stats.total_inputs == 0) return v;
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = double(stats.counts[i]) / double(stats.total_inputs);
    return v;
}

double neuron_time(double mem_bytes, double bandwidth) {
    if (!(bandwidth > 0.0)) fail("neuron_time: bandwidth must be > 0");
    return mem_bytes / bandwidth;
}

std::uint64_t min_fast_neurons(double t_fast, double t_slow, double t_sync) {
    const double gain = t_slow - t_fast;
    if (!(gain > 0.0)) return kNoSplit;
    if (t_sync <= 0.0) return 0;
    // Relative slack absorbs rounding in the ratio (e.g. 1e-5 / 1e-6).
    const double ratio = t_sync / gain;
    const double c = std::ceil(ratio * (1.0 - 1e-12));
    if (c >= 1.8e19) return kNoSplit;
    return static_cast<std::uint64_t>(c);
}

std::uint64_t min_fast_neurons(std::uint64_t neuron_bytes, const DevicePair& devices) {
    devices.check();
    return min_fast_neurons(neuron_time(double(neuron_bytes), devices.fast.bandwidth),
                            neuron_time(double(neuron_bytes), devices.slow.bandwidth), devices.sync_cost);
}

std::vector<NeuronBatch> batch_neurons(const ActivationStats& stats, std::uint32_t layer, std::uint64_t neuron_bytes,
                                       std::size_t batch_size) {
    require(batch_size >= 1, "batch_neurons: batch_size must be >= 1");
    const auto counts = stats.layer_counts(layer);
    std::vector<std::uint32_t> order(counts.size());
    std::iota(order.begin(), order.end(), 0u);
    std::stable_sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) { return counts[a] > counts[b]; });
    std::vector<NeuronBatch> out;
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
        NeuronBatch batch;
        batch.layer = layer;
        const std::size_t end = std::min(order.size(), start + batch_size);
        batch.members.assign(order.begin() + static_cast<std::ptrdiff_t>(start),
                             order.begin() + static_cast<std::ptrdiff_t>(end));
        std::sort(batch.members.begin(), batch.members.end());
        for (const auto i : batch.members) batch.activations += counts[i];
        batch.impact = stats.total_inputs == 0 ? 0.0 : double(batch.activations) / double(stats.total_inputs);
        batch.bytes = neuron_bytes * batch.members.size();
        out.push_back(std::move(batch));
    }
    return out;
}

std::vector<NeuronBatch> batch_model(const ActivationStats& stats, const Model& model, std::size_t batch_size) {
    require(stats.num_layers == model.config.num_layers && stats.intermediate_dim == model.config.intermediate_dim,
            "batch_model: stats dims do not match the model");
    std::vector<NeuronBatch> out;
    for (std::size_t l = 0; l < stats.num_layers; ++l) {
        auto layer = batch_neurons(stats, static_cast<std::uint32_t>(l), model.neuron_bytes(l), batch_size);
        std::move(layer.begin(), layer.end(), std::back_inserter(out));
    }
    return out;
}

std::vector<std::uint64_t> layer_thresholds(std::span<const NeuronBatch> batches, std::size_t num_layers,
                                            const DevicePair& devices) {
    std::vector<std::uint64_t> c(num_layers, 0);
    for (std::size_t l = 0; l < num_layers; ++l) {
        for (const auto& b : batches) {
            if (b.layer == l && b.size() > 0) {
                c[l] = min_fast_neurons(b.bytes / b.size(), devices);
                break;
            }
        }
    }
    return c;
}

void finalize_policy(PlacementPolicy& policy) {
    policy.split.assign(policy.num_layers, 0);
    policy.objective_activations = 0;
    double impact_sum = 0.0;
    for (std::size_t b = 0; b < policy.batches.size(); ++b) {
        if (policy.assignment.at(b) != Unit::Fast) continue;
        policy.split.at(policy.batches[b].layer) = 1;
        policy.objective_activations += policy.batches[b].activations;
        impact_sum += policy.batches[b].impact;
    }
    policy.objective_value = policy.total_inputs > 0
                                 ? double(policy.objective_activations) / double(policy.total_inputs)
                                 : impact_sum;
}

PlacementPolicy solve(std::span<const NeuronBatch> batches, const DevicePair& devices,
                      std::span<const std::uint64_t> min_fast, const SolveOptions& options) {
    const Instance inst = make_instance(batches, devices, min_fast, options);
    PlacementPolicy policy = empty_policy(batches, devices, inst, options);
    if (auto diag = capacity_diagnostic(inst); !diag.empty()) {
        policy.status = SolverStatus::Infeasible;
        policy.diagnostic = std::move(diag);
        return policy;
    }
    BranchAndBound bnb(batches, inst, options.time_limit);
    const auto result = bnb.run();
    policy.nodes = result.nodes;
    if (!result.found) {
        policy.status = SolverStatus::Infeasible;
        policy.diagnostic = result.proven ? "no assignment satisfies the capacity and split constraints"
                                          : "time limit reached before a feasible assignment was found";
        return policy;
    }
    policy.assignment = result.assignment;
    policy.status = result.proven ? SolverStatus::Optimal : SolverStatus::Feasible;
    if (!result.proven) policy.diagnostic = "time limit reached; returning incumbent";
    finalize_policy(policy);
    return policy;
}

PlacementPolicy brute_force_solve(std::span<const NeuronBatch> batches, const DevicePair& devices,
                                  std::span<const std::uint64_t> min_fast, const SolveOptions& options) {
    require(batches.size() <= 24, "brute_force_solve: instance too large (" + std::to_string(batches.size()) +
                                      " batches, limit 24)");
    const Instance inst = make_instance(batches, devices, min_fast, options);
    PlacementPolicy policy = empty_policy(batches, devices, inst, options);

    const std::size_t n = batches.size();
    std::vector<std::uint64_t> count(inst.num_layers, 0);
    std::size_t bad_layers = 0;
    std::int64_t fast_bytes = 0;
    std::uint64_t weight = 0;
    std::uint32_t code = 0;
    bool found = false;
    std::uint64_t best_weight = 0;
    std::uint32_t best_code = 0;
    auto consider = [&] {
        if (bad_layers == 0 && fast_bytes <= inst.fast_cap && inst.total_bytes - fast_bytes <= inst.slow_cap &&
            (!found || weight > best_weight)) {
            found = true;
            best_weight = weight;
            best_code = code;
        }
    };
    consider();
    // Gray-code walk: one batch flips per step.
    const std::uint64_t steps = std::uint64_t{1} << n;
    for (std::uint64_t k = 1; k < steps; ++k) {
        const auto b = static_cast<std::size_t>(std::countr_zero(k));
        const auto l = batches[b].layer;
        const bool was_ok = layer_ok(count[l], inst.min_fast[l], inst.layer_neurons[l]);
        code ^= (1u << b);
        if (code & (1u << b)) {
            count[l] += batches[b].size();
            fast_bytes += static_cast<std::int64_t>(batches[b].bytes);
            weight += batches[b].activations;
        } else {
            count[l] -= batches[b].size();
            fast_bytes -= static_cast<std::int64_t>(batches[b].bytes);
            weight -= batches[b].activations;
        }
        const bool now_ok = layer_ok(count[l], inst.min_fast[l], inst.layer_neurons[l]);
        if (was_ok && !now_ok) ++bad_layers;
        if (!was_ok && now_ok) --bad_layers;
        consider();
    }
    policy.nodes = steps;
    if (!found) {
        policy.status = SolverStatus::Infeasible;
        policy.diagnostic = capacity_diagnostic(inst);
        if (policy.diagnostic.empty()) policy.diagnostic = "no assignment satisfies the capacity and split constraints";
        return policy;
    }
    for (std::size_t b = 0; b < n; ++b) policy.assignment[b] = (best_code & (1u << b)) ? Unit::Fast : Unit::Slow;
    policy.status = SolverStatus::Optimal;
    finalize_policy(policy);
    return policy;
}

std::string to_string(Constraint c) {
    switch (c) {
    case Constraint::Coverage: return "coverage";
    case Constraint::Amortization: return "amortization";
    case Constraint::Capacity: return "capacity";
    case Constraint::SplitLower: return "split-lower";
    case Constraint::SplitUpper: return "split-upper";
    }
    return "unknown";
}

std::vector<Violation> validate(const PlacementPolicy& policy, std::span<const NeuronBatch> batches,
                                const DevicePair& devices) {
    std::vector<Violation> out;
    auto add = [&](Constraint eq, std::optional<std::uint32_t> layer, std::optional<Unit> device, std::string msg) {
        out.push_back({eq, layer, device, std::move(msg)});
    };

    if (policy.assignment.size() != batches.size()) {
        add(Constraint::Coverage, std::nullopt, std::nullopt,
            "assignment covers " + std::to_string(policy.assignment.size()) + " batches, expected " +
                std::to_string(batches.size()));
        return out;
    }
    for (std::size_t b = 0; b < batches.size(); ++b) {
        const auto u = static_cast<std::uint8_t>(policy.assignment[b]);
        if (u > 1) add(Constraint::Coverage, batches[b].layer, std::nullopt, "batch " + std::to_string(b) + " has no valid unit");
    }
    std::size_t layers = policy.num_layers;
    for (const auto& b : batches) layers = std::max<std::size_t>(layers, b.layer + 1);
    std::vector<std::uint64_t> k(layers, 0);
    std::vector<std::uint64_t> count(layers, 0);
    std::vector<std::uint64_t> per_neuron_bytes(layers, 0);
    if (policy.intermediate_dim > 0) {
        std::vector<std::uint32_t> seen(layers * policy.intermediate_dim, 0);
        for (const auto& b : batches) {
            for (const auto i : b.members) {
                if (i >= policy.intermediate_dim) {
                    add(Constraint::Coverage, b.layer, std::nullopt, "neuron " + std::to_string(i) + " out of range");
                    continue;
                }
                ++seen[b.layer * policy.intermediate_dim + i];
            }
        }
        for (std::size_t f = 0; f < seen.size(); ++f) {
            if (seen[f] != 1) {
                add(Constraint::Coverage, static_cast<std::uint32_t>(f / policy.intermediate_dim), std::nullopt,
                    "neuron " + std::to_string(f % policy.intermediate_dim) + " placed " + std::to_string(seen[f]) +
                        " times");
            }
        }
    }
    std::uint64_t fast = 0;
    std::uint64_t slow = 0;
    for (std::size_t b = 0; b < batches.size(); ++b) {
        const auto l = batches[b].layer;
        k[l] += batches[b].size();
        if (batches[b].size() > 0) per_neuron_bytes[l] = batches[b].bytes / batches[b].size();
        if (policy.assignment[b] == Unit::Fast) {
            fast += batches[b].bytes;
            count[l] += batches[b].size();
        } else {
            slow += batches[b].bytes;
        }
    }

    if (policy.min_fast.size() != layers) {
        add(Constraint::Amortization, std::nullopt, std::nullopt, "policy records " + std::to_string(policy.min_fast.size()) +
                                               " C_l values for " + std::to_string(layers) + " layers");
    } else {
        for (std::size_t l = 0; l < layers; ++l) {
            const auto need = min_fast_neurons(per_neuron_bytes[l], devices);
            if (policy.min_fast[l] < need) {
                add(Constraint::Amortization, static_cast<std::uint32_t>(l), std::nullopt,
                    "C_l = " + std::to_string(policy.min_fast[l]) + " is below the amortization threshold " +
                        (need == kNoSplit ? std::string("(no split possible)") : std::to_string(need)));
            }
        }
    }

    if (fast + policy.reserved_fast_bytes > devices.fast.mem_capacity) {
        add(Constraint::Capacity, std::nullopt, Unit::Fast,
            "FAST holds " + std::to_string(fast + policy.reserved_fast_bytes) + " bytes, capacity " +
                std::to_string(devices.fast.mem_capacity));
    }
    if (slow > devices.slow.mem_capacity) {
        add(Constraint::Capacity, std::nullopt, Unit::Slow,
            "SLOW holds " + std::to_string(slow) + " bytes, capacity " + std::to_string(devices.slow.mem_capacity));
    }

    // C_l y_l <= count <= K y_l.
    if (policy.split.size() != layers) {
        add(Constraint::SplitLower, std::nullopt, std::nullopt, "policy records " + std::to_string(policy.split.size()) +
                                               " split flags for " + std::to_string(layers) + " layers");
        return out;
    }
    for (std::size_t l = 0; l < layers; ++l) {
        const auto y = policy.split[l];
        const auto c = l < policy.min_fast.size() ? policy.min_fast[l] : 0;
        if (y > 1) {
            add(Constraint::SplitLower, static_cast<std::uint32_t>(l), std::nullopt, "split flag is not binary");
            continue;
        }
        if (y == 1 && (c == kNoSplit || count[l] < c)) {
            add(Constraint::SplitLower, static_cast<std::uint32_t>(l), Unit::Fast,
                "layer " + std::to_string(l) + " has " + std::to_string(count[l]) + " FAST neurons, below C_l = " +
                    (c == kNoSplit ? std::string("inf") : std::to_string(c)));
        }
        if (count[l] > k[l] * y) {
            add(Constraint::SplitUpper, static_cast<std::uint32_t>(l), Unit::Fast,
                "layer " + std::to_string(l) + " has " + std::to_string(count[l]) + " FAST neurons with y_l = " +
                    std::to_string(int(y)));
        }
    }
    return out;
}

std::vector<Violation> validate(const PlacementPolicy& policy) {
    return validate(policy, policy.batches, policy.devices);
}

void save_policy(const PlacementPolicy& policy, const std::filesystem::path& path) {
    auto device = [](const DeviceSpec& d) {
        return json{{"name", d.name}, {"mem_capacity", d.mem_capacity}, {"bandwidth", d.bandwidth}};
    };
    json layers = json::array();
    for (std::size_t l = 0; l < policy.num_layers; ++l) {
        json e{{"layer", l}, {"split", l < policy.split.size() ? int(policy.split[l]) : 0}};
        const auto c = l < policy.min_fast.size() ? policy.min_fast[l] : 0;
        e["min_fast"] = c == kNoSplit ? json(nullptr) : json(c);
        e["fast_neurons"] = policy.fast_neurons(l);
        layers.push_back(std::move(e));
    }
    json batches = json::array();
    for (std::size_t b = 0; b < policy.batches.size(); ++b) {
        const auto& nb = policy.batches[b];
        batches.push_back({{"layer", nb.layer},
                           {"unit", to_string(policy.assignment.at(b))},
                           {"impact", nb.impact},
                           {"activations", nb.activations},
                           {"bytes", nb.bytes},
                           {"members", nb.members}});
    }
    io::write_json(path, json{{"format", kPolicyFormat},
                              {"status", to_string(policy.status)},
                              {"diagnostic", policy.diagnostic},
                              {"num_layers", policy.num_layers},
                              {"intermediate_dim", policy.intermediate_dim},
                              {"total_inputs", policy.total_inputs},
                              {"objective_value", policy.objective_value},
                              {"objective_activations", policy.objective_activations},
                              {"reserved_fast_bytes", policy.reserved_fast_bytes},
                              {"nodes", policy.nodes},
                              {"devices",
                               {{"fast", device(policy.devices.fast)},
                                {"slow", device(policy.devices.slow)},
                                {"sync_cost", policy.devices.sync_cost}}},
                              {"layers", std::move(layers)},
                              {"batches", std::move(batches)}});
}

PlacementPolicy load_policy(const std::filesystem::path& path) {
    const json doc = io::read_json(path);
    io::check_format(doc, kPolicyFormat, path);
    PlacementPolicy p;
    try {
        const auto status = doc.at("status").get<std::string>();
        if (status == "optimal") {
            p.status = SolverStatus::Optimal;
        } else if (status == "feasible") {
            p.status = SolverStatus::Feasible;
        } else if (status == "infeasible") {
            p.status = SolverStatus::Infeasible;
        } else {
            fail(path.string() + ": unknown status '" + status + "'");
        }
        p.diagnostic = doc.at("diagnostic").get<std::string>();
        p.num_layers = doc.at("num_layers").get<std::size_t>();
        p.intermediate_dim = doc.at("intermediate_dim").get<std::size_t>();
        p.total_inputs = doc.at("total_inputs").get<std::uint64_t>();
        p.objective_value = doc.at("objective_value").get<double>();
        p.objective_activations = doc.at("objective_activations").get<std::uint64_t>();
        p.reserved_fast_bytes = doc.at("reserved_fast_bytes").get<std::uint64_t>();
        p.nodes = doc.at("nodes").get<std::uint64_t>();
        auto device = [](const json& e) {
            return DeviceSpec{e.at("name").get<std::string>(), e.at("mem_capacity").get<std::uint64_t>(),
                              e.at("bandwidth").get<double>()};
        };
        const auto& dev = doc.at("devices");
        p.devices.fast = device(dev.at("fast"));
        p.devices.slow = device(dev.at("slow"));
        p.devices.sync_cost = dev.at("sync_cost").get<double>();
        for (const auto& e : doc.at("layers")) {
            p.split.push_back(static_cast<std::uint8_t>(e.at("split").get<int>()));
            const auto& c = e.at("min_fast");
            p.min_fast.push_back(c.is_null() ? kNoSplit : c.get<std::uint64_t>());
        }
        for (const auto& e : doc.at("batches")) {
            NeuronBatch b;
            b.layer = e.at("layer").get<std::uint32_t>();
            b.impact = e.at("impact").get<double>();
            b.activations = e.at("activations").get<std::uint64_t>();
            b.bytes = e.at("bytes").get<std::uint64_t>();
            b.members = e.at("members").get<std::vector<std::uint32_t>>();
            const auto unit = e.at("unit").get<std::string>();
            require(unit == "fast" || unit == "slow", path.string() + ": unknown unit '" + unit + "'");
            p.assignment.push_back(unit == "fast" ? Unit::Fast : Unit::Slow);
            p.batches.push_back(std::move(b));
        }
    } catch (const json::exception& e) {
        fail(path.string() + ": " + e.what());
    }
    return p;
}

} // namespace neursplit
