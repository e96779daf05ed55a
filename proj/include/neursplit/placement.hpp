#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "neursplit/profiler.hpp"
#include "neursplit/tensor.hpp"

namespace neursplit {

enum class Unit : std::uint8_t { Fast = 0, Slow = 1 };

std::string to_string(Unit unit);

struct DeviceSpec {
    std::string name;
    std::uint64_t mem_capacity = 0; // bytes
    double bandwidth = 0.0;         // bytes / second
};

// FAST plays the GPU role (small, high bandwidth), SLOW the CPU role.
struct DevicePair {
    DeviceSpec fast{"fast", 0, 0.0};
    DeviceSpec slow{"slow", 0, 0.0};
    double sync_cost = 0.0; // seconds per intra-layer synchronization

    void check() const;
};

// Marks a layer that can never amortize a synchronization.
inline constexpr std::uint64_t kNoSplit = std::numeric_limits<std::uint64_t>::max();

struct NeuronBatch {
    std::uint32_t layer = 0;
    std::vector<std::uint32_t> members; // ascending
    double impact = 0.0;                // sum of member frequencies
    std::uint64_t activations = 0;      // sum of member counts (impact numerator)
    std::uint64_t bytes = 0;            // sum of member weight bytes

    std::size_t size() const { return members.size(); }
};

enum class SolverStatus { Optimal, Feasible, Infeasible };
std::string to_string(SolverStatus status);

struct PlacementPolicy {
    std::size_t num_layers = 0;
    std::size_t intermediate_dim = 0;
    std::uint64_t total_inputs = 0;
    std::vector<NeuronBatch> batches;
    std::vector<Unit> assignment;              // per batch
    std::vector<std::uint8_t> split;           // y_l per layer
    std::vector<std::uint64_t> min_fast;       // C_l per layer, in neurons
    std::uint64_t reserved_fast_bytes = 0;     // charged to FAST before placement (predictors)
    std::uint64_t objective_activations = 0;   // sum of FAST batch activations
    double objective_value = 0.0;              // sum of FAST batch impacts
    SolverStatus status = SolverStatus::Infeasible;
    std::string diagnostic;
    DevicePair devices;
    std::uint64_t nodes = 0;

    // Per layer, per neuron unit.
    std::vector<std::vector<Unit>> neuron_units() const;
    std::uint64_t fast_bytes() const;
    std::uint64_t slow_bytes() const;
    std::uint64_t fast_neurons(std::size_t layer) const;
};

// v_i = f_i = count_i / total_inputs.
std::vector<double> impact(const ActivationStats& stats);

// T = bytes / bandwidth.
double neuron_time(double mem_bytes, double bandwidth);

// Smallest C with C * t_fast + t_sync <= C * t_slow, or kNoSplit when the fast
// unit is not strictly faster.
std::uint64_t min_fast_neurons(double t_fast, double t_slow, double t_sync);
std::uint64_t min_fast_neurons(std::uint64_t neuron_bytes, const DevicePair& devices);

// One layer's neurons by descending impact (ties: ascending index), chunked.
std::vector<NeuronBatch> batch_neurons(const ActivationStats& stats, std::uint32_t layer, std::uint64_t neuron_bytes,
                                       std::size_t batch_size = 64);

// All layers, layer-major; bytes per neuron from the model.
std::vector<NeuronBatch> batch_model(const ActivationStats& stats, const Model& model, std::size_t batch_size = 64);

// C_l per layer from the bytes per neuron found in the batches.
std::vector<std::uint64_t> layer_thresholds(std::span<const NeuronBatch> batches, std::size_t num_layers,
                                            const DevicePair& devices);

struct SolveOptions {
    double time_limit = 10.0; // seconds
    std::uint64_t reserved_fast_bytes = 0;
    std::size_t num_layers = 0;       // 0 = infer from batches
    std::size_t intermediate_dim = 0; // 0 = infer from batches
    std::uint64_t total_inputs = 0;   // denominator of impacts; 0 = derive from batches
};

// Exact branch-and-bound over the LP relaxation:
//   max sum(activations_b x_b)
//   s.t. FAST bytes + reserved <= cap_fast, SLOW bytes <= cap_slow,
//        C_l y_l <= fast neurons of layer l <= K_l y_l  (K_l = neurons in layer l).
PlacementPolicy solve(std::span<const NeuronBatch> batches, const DevicePair& devices,
                      std::span<const std::uint64_t> min_fast, const SolveOptions& options = {});

// Exhaustive enumeration (at most 24 batches). Verification oracle.
PlacementPolicy brute_force_solve(std::span<const NeuronBatch> batches, const DevicePair& devices,
                                  std::span<const std::uint64_t> min_fast, const SolveOptions& options = {});

enum class Constraint {
    Coverage,     // every neuron on exactly one unit
    Amortization, // recorded C_l covers one synchronization
    Capacity,     // bytes per unit within its capacity
    SplitLower,   // a split layer keeps at least C_l neurons on FAST
    SplitUpper,   // an unsplit layer keeps no neurons on FAST
};

std::string to_string(Constraint c);

struct Violation {
    Constraint constraint = Constraint::Coverage;
    std::optional<std::uint32_t> layer;
    std::optional<Unit> device;
    std::string message;
};

std::vector<Violation> validate(const PlacementPolicy& policy, std::span<const NeuronBatch> batches,
                                const DevicePair& devices);
std::vector<Violation> validate(const PlacementPolicy& policy);

// Fills split, objective and byte bookkeeping for an externally built assignment.
void finalize_policy(PlacementPolicy& policy);

void save_policy(const PlacementPolicy& policy, const std::filesystem::path& path);
PlacementPolicy load_policy(const std::filesystem::path& path);

} // namespace neursplit
