#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "neursplit/device_sim.hpp"
#include "neursplit/io.hpp"
#include "neursplit/placement.hpp"
#include "neursplit/predictor.hpp"
#include "neursplit/workload.hpp"

namespace neursplit {

// Everything one end-to-end run depends on. Artifact paths are relative to
// the output directory. Stage seeds are derived from `seed`; the seeds inside
// `workload` and `sizing` are overwritten with the derived values.
struct RunManifest {
    std::uint64_t seed = 1;
    WorkloadSpec workload;
    SizingConfig sizing;

    double fast_budget_fraction = 0.4; // FAST capacity as a share of model bytes
    double fast_bandwidth = 600e9;
    double slow_bandwidth = 38.4e9;
    double sync_cost = 2.5e-8;
    double pcie_bandwidth = 32e9;
    bool reserve_predictors = true;
    std::size_t batch_size = 64;
    double time_limit = 10.0;
    double predictor_overhead = 0.10;
    std::size_t random_draws = 16;
    std::size_t eval_inputs = 100;

    std::string model_path = "model.json";
    std::string trace_path = "trace.bin";
    std::string stats_path = "stats.bin";
    std::string predictor_path = "predictors.json";
    std::string policy_path = "policy.json";
    std::string latency_csv_path = "latency.csv";
    std::string report_path = "report.json";

    // Stage seeds: gen, train, bench.
    std::uint64_t stage_seed(const std::string& stage) const { return derive_seed(seed, stage); }
};

json manifest_to_json(const RunManifest& manifest);
RunManifest manifest_from_json(const json& doc);
void save_manifest(const RunManifest& manifest, const std::filesystem::path& path);
RunManifest load_manifest(const std::filesystem::path& path);

// FAST/SLOW devices for a model of `model_bytes` under the manifest's budget.
DevicePair manifest_devices(const RunManifest& manifest, std::uint64_t model_bytes);

// Trains one predictor per layer, sparsity taken from the profiled stats.
PredictorSet train_all(const Model& model, std::span<const std::vector<float>> corpus, const ActivationStats& stats,
                       const SizingConfig& sizing);

// Summary of the profile used by reports.
json profile_summary(const ActivationStats& stats);

struct PipelineResult {
    json report;
    std::vector<LatencyBreakdown> latency; // policy, dense-split, po, engine-random
};

// gen -> profile -> train -> solve -> run -> bench, writing every artifact
// under `out_dir`. A failing stage throws Error("stage '<name>' failed: ...").
PipelineResult run_pipeline(const RunManifest& manifest, const std::filesystem::path& out_dir);

} // namespace neursplit
