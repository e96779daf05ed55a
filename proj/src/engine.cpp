#include "neursplit/engine.hpp"

#include <algorithm>
#include <chrono>
#include <condition_variable>
#include <exception>
#include <limits>
#include <mutex>
#include <set>
#include <thread>
#include <tuple>

#include "neursplit/error.hpp"
#include "neursplit/runtime.hpp"

namespace neursplit {

void NeuronTable::check(std::size_t m) const {
    require(unit_of.size() == m && slot_of.size() == m,
            "neuron table: inverse covers " + std::to_string(unit_of.size()) + " neurons, expected " +
                std::to_string(m));
    std::vector<std::uint8_t> seen(m, 0);
    for (std::size_t u = 0; u < kUnits; ++u) {
        for (std::size_t s = 0; s < slots[u].size(); ++s) {
            const auto i = slots[u][s];
            require(i < m, "neuron table: index " + std::to_string(i) + " out of range");
            require(s == 0 || slots[u][s - 1] < i, "neuron table: slots are not ascending");
            require(seen[i]++ == 0, "neuron table: neuron " + std::to_string(i) + " appears twice");
            require(unit_index(unit_of[i]) == u && slot_of[i] == s,
                    "neuron table: inverse lookup disagrees for neuron " + std::to_string(i));
        }
    }
    for (std::size_t i = 0; i < m; ++i) require(seen[i] == 1, "neuron table: neuron " + std::to_string(i) + " missing");
}

namespace {

LayerWeights pack(const LayerWeights& w, const std::vector<std::uint32_t>& slots) {
    const std::size_t d = w.dim();
    const std::size_t n = slots.size();
    LayerWeights out;
    out.fc1 = Matrix(n, d);
    out.fc2 = Matrix(d, n);
    if (w.gated()) out.gate = Matrix(n, d);
    for (std::size_t s = 0; s < n; ++s) {
        const auto i = slots[s];
        std::copy_n(w.fc1.row(i).begin(), d, out.fc1.row(s).begin());
        if (w.gated()) std::copy_n(w.gate.row(i).begin(), d, out.gate.row(s).begin());
        for (std::size_t r = 0; r < d; ++r) out.fc2(r, s) = w.fc2(r, i);
        if (!w.fc1_bias.empty()) out.fc1_bias.push_back(w.fc1_bias[i]);
        if (!w.gate_bias.empty()) out.gate_bias.push_back(w.gate_bias[i]);
    }
    return out;
}

} // namespace

LoadedModel load(const Model& model, const PlacementPolicy& policy) {
    model.check();
    const auto& cfg = model.config;
    require(policy.num_layers == cfg.num_layers && policy.intermediate_dim == cfg.intermediate_dim,
            "load: policy is for " + std::to_string(policy.num_layers) + "x" + std::to_string(policy.intermediate_dim) +
                " neurons, model has " + std::to_string(cfg.num_layers) + "x" + std::to_string(cfg.intermediate_dim));
    for (const auto& b : policy.batches) {
        require(b.size() == 0 || b.bytes == model.neuron_bytes(b.layer) * b.size(),
                "load: policy byte accounting for layer " + std::to_string(b.layer) + " does not match the model");
    }
    const auto violations = validate(policy);
    if (!violations.empty()) {
        fail("load: policy violates the " + to_string(violations.front().constraint) +
             " constraint: " + violations.front().message);
    }

    LoadedModel out;
    out.config = cfg;
    const auto units = policy.neuron_units();
    for (std::size_t l = 0; l < cfg.num_layers; ++l) {
        NeuronTable t;
        t.unit_of = units[l];
        t.slot_of.resize(cfg.intermediate_dim);
        for (std::uint32_t i = 0; i < cfg.intermediate_dim; ++i) {
            auto& list = t.slots[unit_index(t.unit_of[i])];
            t.slot_of[i] = static_cast<std::uint32_t>(list.size());
            list.push_back(i);
        }
        t.check(cfg.intermediate_dim);
        for (std::size_t u = 0; u < kUnits; ++u) {
            out.weights.units[u].push_back(pack(model.layers[l], t.slots[u]));
            out.weights.bytes[u] += model.neuron_bytes(l) * t.slots[u].size();
        }
        out.tables.push_back(std::move(t));
    }
    require(out.weights.bytes[unit_index(Unit::Fast)] == policy.fast_bytes() &&
                out.weights.bytes[unit_index(Unit::Slow)] == policy.slow_bytes(),
            "load: packed byte totals disagree with the policy");
    return out;
}

Model reconstruct(const LoadedModel& loaded) {
    Model model;
    model.config = loaded.config;
    const std::size_t d = loaded.config.hidden_dim;
    const std::size_t m = loaded.config.intermediate_dim;
    for (std::size_t l = 0; l < loaded.config.num_layers; ++l) {
        const auto& fast = loaded.weights.units[0][l];
        const bool gated = loaded.weights.units[0][l].gated() || loaded.weights.units[1][l].gated() ||
                           loaded.config.activation == ActivationKind::ReGLU;
        const bool has_b1 = !fast.fc1_bias.empty() || !loaded.weights.units[1][l].fc1_bias.empty();
        const bool has_bg = !fast.gate_bias.empty() || !loaded.weights.units[1][l].gate_bias.empty();
        LayerWeights w;
        w.fc1 = Matrix(m, d);
        w.fc2 = Matrix(d, m);
        if (gated) w.gate = Matrix(m, d);
        if (has_b1) w.fc1_bias.assign(m, 0.0f);
        if (has_bg) w.gate_bias.assign(m, 0.0f);
        for (std::size_t u = 0; u < kUnits; ++u) {
            const auto& packed = loaded.weights.units[u][l];
            const auto& slots = loaded.tables[l].slots[u];
            for (std::size_t s = 0; s < slots.size(); ++s) {
                const auto i = slots[s];
                std::copy_n(packed.fc1.row(s).begin(), d, w.fc1.row(i).begin());
                if (gated) std::copy_n(packed.gate.row(s).begin(), d, w.gate.row(i).begin());
                for (std::size_t r = 0; r < d; ++r) w.fc2(r, i) = packed.fc2(r, s);
                if (has_b1) w.fc1_bias[i] = packed.fc1_bias[s];
                if (has_bg) w.gate_bias[i] = packed.gate_bias[s];
            }
        }
        model.layers.push_back(std::move(w));
    }
    return model;
}

std::string to_string(NodeKind kind) {
    switch (kind) {
    case NodeKind::LayerIn: return "LAYER_IN";
    case NodeKind::Predict: return "PREDICT";
    case NodeKind::Fc1Part: return "FC1_PART";
    case NodeKind::Fc2Part: return "FC2_PART";
    case NodeKind::Merge: return "MERGE";
    case NodeKind::LayerOut: return "LAYER_OUT";
    }
    return "?";
}

Dag build_dag(const LoadedModel& loaded) {
    Dag dag;
    auto add = [&](NodeKind kind, Unit unit, std::size_t layer, std::vector<std::uint32_t> pre) {
        const auto id = static_cast<std::uint32_t>(dag.nodes.size());
        dag.nodes.push_back({id, kind, unit, static_cast<std::uint32_t>(layer), std::move(pre)});
        return id;
    };
    std::optional<std::uint32_t> prev_out;
    for (std::size_t l = 0; l < loaded.config.num_layers; ++l) {
        std::vector<std::uint32_t> in_pre;
        if (prev_out) in_pre.push_back(*prev_out);
        const auto in = add(NodeKind::LayerIn, Unit::Fast, l, std::move(in_pre));
        const auto predict = add(NodeKind::Predict, Unit::Fast, l, {in});
        std::array<std::optional<std::uint32_t>, kUnits> fc1;
        for (const Unit u : {Unit::Fast, Unit::Slow}) {
            if (!loaded.tables[l].of(u).empty()) fc1[unit_index(u)] = add(NodeKind::Fc1Part, u, l, {predict});
        }
        std::vector<std::uint32_t> merge_pre;
        for (const Unit u : {Unit::Fast, Unit::Slow}) {
            if (fc1[unit_index(u)]) merge_pre.push_back(add(NodeKind::Fc2Part, u, l, {*fc1[unit_index(u)]}));
        }
        const auto merge = add(NodeKind::Merge, Unit::Fast, l, std::move(merge_pre));
        prev_out = add(NodeKind::LayerOut, Unit::Fast, l, {merge});
    }
    dag.dependents.resize(dag.nodes.size());
    for (const auto& n : dag.nodes) {
        for (const auto p : n.prerequisites) dag.dependents[p].push_back(n.id);
    }
    return dag;
}

std::string to_string(MaskMode mode) {
    switch (mode) {
    case MaskMode::TrueMask: return "true";
    case MaskMode::PredictedMask: return "predicted";
    case MaskMode::Dense: return "dense";
    }
    return "?";
}

MaskMode mask_mode_from_string(const std::string& name) {
    if (name == "true") return MaskMode::TrueMask;
    if (name == "predicted") return MaskMode::PredictedMask;
    if (name == "dense") return MaskMode::Dense;
    fail("unknown mask mode '" + name + "' (expected true, predicted or dense)");
}

Engine::Engine(const Model& model, const PlacementPolicy& policy, std::optional<PredictorSet> predictors)
    : loaded_(load(model, policy)), predictors_(std::move(predictors)) {
    if (predictors_) {
        require(predictors_->layers.size() == model.config.num_layers,
                "engine: predictor set has " + std::to_string(predictors_->layers.size()) + " layers, model has " +
                    std::to_string(model.config.num_layers));
        for (const auto& p : predictors_->layers) {
            p.check();
            require(p.input_dim() == model.config.hidden_dim && p.output_dim() == model.config.intermediate_dim,
                    "engine: predictor for layer " + std::to_string(p.layer) + " has the wrong shape");
        }
    }
    dag_ = build_dag(*loaded_);
}

const LoadedModel& Engine::model() const {
    require(loaded_.has_value(), "engine: no model loaded");
    return *loaded_;
}

namespace {

struct RunState {
    std::vector<std::vector<float>> x;      // layer inputs, x[L] is the output
    std::vector<ActivationMask> masks;
    std::vector<ActivationMask> active;
    std::array<std::vector<ActivationMask>, kUnits> slot_masks;
    std::array<std::vector<SparseVector>, kUnits> h;
    std::array<std::vector<std::vector<std::uint8_t>>, kUnits> fired_flags;
    std::array<std::vector<Partial>, kUnits> partial;
    std::vector<std::vector<float>> merged;
    std::array<std::uint64_t, kUnits> computed{};
    std::array<std::uint64_t, kUnits> fired{};
    OpCounter counter;
};

class Executor {
public:
    Executor(const LoadedModel& loaded, const std::optional<PredictorSet>& predictors, const Dag& dag, MaskMode mode,
             bool trace)
        : loaded_(loaded), predictors_(predictors), dag_(dag), mode_(mode), trace_(trace) {}

    void run(std::span<const float> input, RunState& state, std::vector<ScheduleEvent>& events) {
        const std::size_t layers = loaded_.config.num_layers;
        state.x.assign(layers + 1, {});
        state.x[0].assign(input.begin(), input.end());
        state.masks.assign(layers, {});
        state.active.assign(layers, {});
        state.merged.assign(layers, {});
        for (std::size_t u = 0; u < kUnits; ++u) {
            state.slot_masks[u].assign(layers, {});
            state.h[u].assign(layers, {});
            state.fired_flags[u].assign(layers, {});
            state.partial[u].assign(layers, {});
        }
        pending_.resize(dag_.nodes.size());
        for (const auto& n : dag_.nodes) {
            pending_[n.id] = n.prerequisites.size();
            if (pending_[n.id] == 0) ready_.insert({n.layer, n.id});
        }
        state_ = &state;
        if (thread_budget() <= 1) {
            work(std::nullopt);
        } else {
            std::thread fast([this] { work(Unit::Fast); });
            std::thread slow([this] { work(Unit::Slow); });
            fast.join();
            slow.join();
        }
        if (error_) std::rethrow_exception(error_);
        events = std::move(events_);
    }

private:
    // `unit` empty means the caller runs every node itself.
    void work(std::optional<Unit> unit) {
        std::unique_lock lock(mu_);
        while (true) {
            auto it = ready_.end();
            cv_.wait(lock, [&] {
                if (error_ || done_ == dag_.nodes.size()) return true;
                it = pick(unit);
                return it != ready_.end();
            });
            if (error_ || done_ == dag_.nodes.size()) return;
            const auto id = std::get<1>(*it);
            ready_.erase(it);
            const Unit who = unit.value_or(dag_.nodes[id].unit);
            if (trace_) events_.push_back({id, true, clock_++, who});
            lock.unlock();
            try {
                execute(dag_.nodes[id]);
            } catch (...) {
                lock.lock();
                if (!error_) error_ = std::current_exception();
                cv_.notify_all();
                return;
            }
            lock.lock();
            if (trace_) events_.push_back({id, false, clock_++, who});
            ++done_;
            for (const auto next : dag_.dependents[id]) {
                if (--pending_[next] == 0) ready_.insert({dag_.nodes[next].layer, next});
            }
            cv_.notify_all();
        }
    }

    // Lowest layer, then lowest id, among the ready nodes this worker may run.
    std::set<std::tuple<std::uint32_t, std::uint32_t>>::iterator pick(std::optional<Unit> unit) {
        for (auto it = ready_.begin(); it != ready_.end(); ++it) {
            if (!unit || dag_.nodes[std::get<1>(*it)].unit == *unit) return it;
        }
        return ready_.end();
    }

    void execute(const OperatorNode& node) {
        RunState& s = *state_;
        const std::size_t l = node.layer;
        const std::size_t u = unit_index(node.unit);
        const auto& table = loaded_.tables[l];
        switch (node.kind) {
        case NodeKind::LayerIn: {
            const auto& x = s.x[l];
            require(x.size() == loaded_.config.hidden_dim,
                    "engine: layer " + std::to_string(l) + " input expected length " +
                        std::to_string(loaded_.config.hidden_dim) + ", got " + std::to_string(x.size()));
            break;
        }
        case NodeKind::Predict: {
            ActivationMask mask{static_cast<std::uint32_t>(l), {}};
            const std::size_t m = loaded_.config.intermediate_dim;
            if (mode_ == MaskMode::Dense) {
                mask = ActivationMask::all(static_cast<std::uint32_t>(l), m);
            } else if (mode_ == MaskMode::PredictedMask) {
                require(predictors_.has_value(), "engine: PREDICTED_MASK mode needs predictors");
                mask = predict_mask(predictors_->layers[l], s.x[l]);
                mask.layer = static_cast<std::uint32_t>(l);
                mask.check(m);
            } else {
                // Oracle predictor: evaluates the gate of every neuron without counting it as work.
                for (std::uint32_t i = 0; i < m; ++i) {
                    const auto& w = loaded_.weights.units[unit_index(table.unit_of[i])][l];
                    bool active = false;
                    neuron_value(w, table.slot_of[i], s.x[l], active);
                    if (active) mask.active.push_back(i);
                }
            }
            for (std::size_t v = 0; v < kUnits; ++v) s.slot_masks[v][l].layer = static_cast<std::uint32_t>(l);
            for (const auto i : mask.active) {
                s.slot_masks[unit_index(table.unit_of[i])][l].active.push_back(table.slot_of[i]);
            }
            s.masks[l] = std::move(mask);
            break;
        }
        case NodeKind::Fc1Part: {
            const auto& w = loaded_.weights.units[u][l];
            s.h[u][l] = sparse_fc1_rows(w, s.x[l], s.slot_masks[u][l], &s.counter, &s.fired_flags[u][l]);
            s.computed[u] += s.h[u][l].size();
            for (const auto f : s.fired_flags[u][l]) s.fired[u] += f;
            break;
        }
        case NodeKind::Fc2Part:
            s.partial[u][l] = sparse_fc2_cols(loaded_.weights.units[u][l].fc2, s.h[u][l], s.slot_masks[u][l],
                                              &s.counter);
            break;
        case NodeKind::Merge: {
            const auto& fast = s.partial[unit_index(Unit::Fast)][l];
            const auto& slow = s.partial[unit_index(Unit::Slow)][l];
            if (fast.empty() && slow.empty()) {
                s.merged[l].assign(loaded_.config.hidden_dim, 0.0f);
            } else if (fast.empty()) {
                s.merged[l] = round_partial(slow);
            } else if (slow.empty()) {
                s.merged[l] = round_partial(fast);
            } else {
                s.merged[l] = merge_partials(slow, fast);
            }
            break;
        }
        case NodeKind::LayerOut: {
            ActivationMask fired{static_cast<std::uint32_t>(l), {}};
            for (std::size_t v = 0; v < kUnits; ++v) {
                const auto& hv = s.h[v][l];
                const auto& flags = s.fired_flags[v][l];
                const auto& slots = table.slots[v];
                for (std::size_t k = 0; k < hv.size(); ++k) {
                    if (flags[k] != 0) fired.active.push_back(slots[hv.index[k]]);
                }
            }
            std::sort(fired.active.begin(), fired.active.end());
            s.active[l] = std::move(fired);
            s.x[l + 1] = std::move(s.merged[l]);
            break;
        }
        }
    }

    const LoadedModel& loaded_;
    const std::optional<PredictorSet>& predictors_;
    const Dag& dag_;
    MaskMode mode_;
    bool trace_;

    std::mutex mu_;
    std::condition_variable cv_;
    std::set<std::tuple<std::uint32_t, std::uint32_t>> ready_;
    std::vector<std::size_t> pending_;
    std::size_t done_ = 0;
    std::uint64_t clock_ = 0;
    std::vector<ScheduleEvent> events_;
    std::exception_ptr error_;
    RunState* state_ = nullptr;
};

} // namespace

InferResult Engine::infer(std::span<const float> x, MaskMode mode, bool trace_events) const {
    const auto& loaded = model();
    require(x.size() == loaded.config.hidden_dim, "engine: input expected length " +
                                                      std::to_string(loaded.config.hidden_dim) + ", got " +
                                                      std::to_string(x.size()));
    if (mode == MaskMode::PredictedMask) require(predictors_.has_value(), "engine: PREDICTED_MASK mode needs predictors");

    const auto t0 = std::chrono::steady_clock::now();
    RunState state;
    InferResult out;
    Executor(loaded, predictors_, dag_, mode, trace_events).run(x, state, out.events);
    out.metrics.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    out.y = std::move(state.x.back());
    out.masks = std::move(state.masks);
    out.active = std::move(state.active);
    out.metrics.computed = state.computed;
    out.metrics.active = state.fired;
    out.metrics.row_dots = state.counter.row_dots;
    out.metrics.col_axpys = state.counter.col_axpys;
    return out;
}

ScheduleCheck verify_schedule(const Dag& dag, std::span<const ScheduleEvent> events) {
    const std::size_t n = dag.nodes.size();
    constexpr auto kUnset = std::numeric_limits<std::uint64_t>::max();
    std::vector<std::uint64_t> start(n, kUnset);
    std::vector<std::uint64_t> finish(n, kUnset);
    for (const auto& e : events) {
        if (e.node >= n) return {false, "event for unknown node " + std::to_string(e.node)};
        auto& slot = e.start ? start[e.node] : finish[e.node];
        if (slot != kUnset) return {false, "node " + std::to_string(e.node) + " has a repeated event"};
        slot = e.tick;
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (start[i] == kUnset || finish[i] == kUnset) {
            return {false, "node " + std::to_string(i) + " never ran to completion"};
        }
        if (finish[i] <= start[i]) return {false, "node " + std::to_string(i) + " finished before it started"};
        for (const auto p : dag.nodes[i].prerequisites) {
            if (finish[p] >= start[i]) {
                return {false, "node " + std::to_string(i) + " (" + to_string(dag.nodes[i].kind) + ", layer " +
                                   std::to_string(dag.nodes[i].layer) + ") started before prerequisite " +
                                   std::to_string(p) + " finished"};
            }
        }
    }
    return {};
}

} // namespace neursplit
