#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "neursplit/placement.hpp"
#include "neursplit/predictor.hpp"
#include "neursplit/tensor.hpp"

namespace neursplit {

inline constexpr std::size_t kUnits = 2;

inline std::size_t unit_index(Unit u) { return static_cast<std::size_t>(u); }

// Per layer: slot -> original neuron index for each unit, plus the inverse.
struct NeuronTable {
    std::array<std::vector<std::uint32_t>, kUnits> slots; // ascending original indices
    std::vector<Unit> unit_of;                             // original index -> unit
    std::vector<std::uint32_t> slot_of;                    // original index -> slot within its unit

    const std::vector<std::uint32_t>& of(Unit u) const { return slots[unit_index(u)]; }
    // Throws unless the two units partition [0, m) and the inverse agrees.
    void check(std::size_t m) const;
};

// Weights packed per unit: fc1/gate rows and fc2 columns in slot order. Each
// packed layer is an ordinary LayerWeights over that unit's neurons.
struct SplitWeights {
    std::array<std::vector<LayerWeights>, kUnits> units;
    std::array<std::uint64_t, kUnits> bytes{};
};

struct LoadedModel {
    ModelConfig config;
    std::vector<NeuronTable> tables;
    SplitWeights weights;
};

// Refuses policies that fail validate() or do not match the model's shape.
LoadedModel load(const Model& model, const PlacementPolicy& policy);

// Inverse of load: scatters the packed weights back to their original slots.
Model reconstruct(const LoadedModel& loaded);

enum class NodeKind { LayerIn, Predict, Fc1Part, Fc2Part, Merge, LayerOut };

std::string to_string(NodeKind kind);

struct OperatorNode {
    std::uint32_t id = 0;
    NodeKind kind = NodeKind::LayerIn;
    Unit unit = Unit::Fast;
    std::uint32_t layer = 0;
    std::vector<std::uint32_t> prerequisites;
};

struct Dag {
    std::vector<OperatorNode> nodes; // ids equal positions; emitted in a topological order
    std::vector<std::vector<std::uint32_t>> dependents;
};

Dag build_dag(const LoadedModel& loaded);

enum class MaskMode { TrueMask, PredictedMask, Dense };

std::string to_string(MaskMode mode);
MaskMode mask_mode_from_string(const std::string& name);

struct ScheduleEvent {
    std::uint32_t node = 0;
    bool start = false;
    std::uint64_t tick = 0; // logical clock, strictly increasing across the run
    Unit worker = Unit::Fast;
};

struct RunMetrics {
    std::array<std::uint64_t, kUnits> computed{}; // neurons evaluated per unit
    std::array<std::uint64_t, kUnits> active{};   // of those, neurons that fired
    std::uint64_t row_dots = 0;
    std::uint64_t col_axpys = 0;
    double wall_seconds = 0.0;
};

struct InferResult {
    std::vector<float> y;
    std::vector<ActivationMask> masks;  // neurons scheduled per layer
    std::vector<ActivationMask> active; // neurons that fired among those
    RunMetrics metrics;
    std::vector<ScheduleEvent> events;  // filled when tracing is on
};

class Engine {
public:
    Engine() = default;
    Engine(const Model& model, const PlacementPolicy& policy, std::optional<PredictorSet> predictors = std::nullopt);

    bool loaded() const { return loaded_.has_value(); }
    const LoadedModel& model() const;
    const Dag& dag() const { return dag_; }

    // Worker count comes from NEURSPLIT_THREADS: 1 runs every node on the caller.
    InferResult infer(std::span<const float> x, MaskMode mode, bool trace_events = false) const;

private:
    std::optional<LoadedModel> loaded_;
    std::optional<PredictorSet> predictors_;
    Dag dag_;
};

struct ScheduleCheck {
    bool ok = true;
    std::string message;
};

// Fails iff some node started before all of its prerequisites finished (or a
// node is missing, repeated, or finishes before it starts).
ScheduleCheck verify_schedule(const Dag& dag, std::span<const ScheduleEvent> events);

} // namespace neursplit
