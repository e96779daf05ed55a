#include "neursplit/pipeline.hpp"

#include <algorithm>
#include <cmath>

#include "neursplit/engine.hpp"
#include "neursplit/error.hpp"
#include "neursplit/profiler.hpp"
#include "neursplit/report.hpp"

namespace neursplit {

json manifest_to_json(const RunManifest& m) {
    const auto& w = m.workload;
    const auto& s = m.sizing;
    return json{
        {"format", kManifestFormat},
        {"seed", m.seed},
        {"workload",
         {{"num_layers", w.num_layers},
          {"hidden_dim", w.hidden_dim},
          {"intermediate_dim", w.intermediate_dim},
          {"activation", to_string(w.activation)},
          {"sparsity", w.sparsity},
          {"zipf_s", w.zipf_s},
          {"rank", w.rank},
          {"num_inputs", w.num_inputs}}},
        {"sizing",
         {{"h_min", s.h_min},
          {"h_max", s.h_max},
          {"recall_target", s.recall_target},
          {"shrink_margin", s.shrink_margin},
          {"max_iterations", s.max_iterations},
          {"epochs", s.epochs},
          {"learning_rate", s.learning_rate},
          {"positive_weight", s.positive_weight},
          {"validation_fraction", s.validation_fraction}}},
        {"devices",
         {{"fast_budget_fraction", m.fast_budget_fraction},
          {"fast_bandwidth", m.fast_bandwidth},
          {"slow_bandwidth", m.slow_bandwidth},
          {"sync_cost", m.sync_cost},
          {"pcie_bandwidth", m.pcie_bandwidth},
          {"reserve_predictors", m.reserve_predictors}}},
        {"placement", {{"batch_size", m.batch_size}, {"time_limit", m.time_limit}}},
        {"simulation", {{"predictor_overhead", m.predictor_overhead}, {"random_draws", m.random_draws}}},
        {"eval_inputs", m.eval_inputs},
        {"artifacts",
         {{"model", m.model_path},
          {"trace", m.trace_path},
          {"stats", m.stats_path},
          {"predictors", m.predictor_path},
          {"policy", m.policy_path},
          {"latency_csv", m.latency_csv_path},
          {"report", m.report_path}}},
        {"formats",
         {{"model", kModelFormat},
          {"trace", kTraceFormat},
          {"stats", kStatsFormat},
          {"predictors", kPredictorFormat},
          {"policy", kPolicyFormat},
          {"report", kReportFormat}}},
        {"stage_seeds",
         {{"gen", m.stage_seed("gen")}, {"train", m.stage_seed("train")}, {"bench", m.stage_seed("bench")}}},
    };
}

RunManifest manifest_from_json(const json& doc) {
    io::check_format(doc, kManifestFormat, "manifest");
    RunManifest m;
    // Every section is optional; absent keys keep their defaults.
    auto get = [](const json& obj, const char* key, auto& field) {
        if (obj.contains(key)) field = obj.at(key).get<std::remove_reference_t<decltype(field)>>();
    };
    try {
        get(doc, "seed", m.seed);
        if (doc.contains("workload")) {
            const auto& w = doc.at("workload");
            get(w, "num_layers", m.workload.num_layers);
            get(w, "hidden_dim", m.workload.hidden_dim);
            get(w, "intermediate_dim", m.workload.intermediate_dim);
            if (w.contains("activation")) m.workload.activation = activation_from_string(w.at("activation"));
            get(w, "sparsity", m.workload.sparsity);
            get(w, "zipf_s", m.workload.zipf_s);
            get(w, "rank", m.workload.rank);
            get(w, "num_inputs", m.workload.num_inputs);
        }
        if (doc.contains("sizing")) {
            const auto& s = doc.at("sizing");
            get(s, "h_min", m.sizing.h_min);
            get(s, "h_max", m.sizing.h_max);
            get(s, "recall_target", m.sizing.recall_target);
            get(s, "shrink_margin", m.sizing.shrink_margin);
            get(s, "max_iterations", m.sizing.max_iterations);
            get(s, "epochs", m.sizing.epochs);
            get(s, "learning_rate", m.sizing.learning_rate);
            get(s, "positive_weight", m.sizing.positive_weight);
            get(s, "validation_fraction", m.sizing.validation_fraction);
        }
        if (doc.contains("devices")) {
            const auto& d = doc.at("devices");
            get(d, "fast_budget_fraction", m.fast_budget_fraction);
            get(d, "fast_bandwidth", m.fast_bandwidth);
            get(d, "slow_bandwidth", m.slow_bandwidth);
            get(d, "sync_cost", m.sync_cost);
            get(d, "pcie_bandwidth", m.pcie_bandwidth);
            get(d, "reserve_predictors", m.reserve_predictors);
        }
        if (doc.contains("placement")) {
            get(doc.at("placement"), "batch_size", m.batch_size);
            get(doc.at("placement"), "time_limit", m.time_limit);
        }
        if (doc.contains("simulation")) {
            get(doc.at("simulation"), "predictor_overhead", m.predictor_overhead);
            get(doc.at("simulation"), "random_draws", m.random_draws);
        }
        get(doc, "eval_inputs", m.eval_inputs);
        if (doc.contains("artifacts")) {
            const auto& a = doc.at("artifacts");
            get(a, "model", m.model_path);
            get(a, "trace", m.trace_path);
            get(a, "stats", m.stats_path);
            get(a, "predictors", m.predictor_path);
            get(a, "policy", m.policy_path);
            get(a, "latency_csv", m.latency_csv_path);
            get(a, "report", m.report_path);
        }
        if (doc.contains("formats")) {
            const auto& f = doc.at("formats");
            const std::pair<const char*, std::string_view> expected[] = {
                {"model", kModelFormat},         {"trace", kTraceFormat},   {"stats", kStatsFormat},
                {"predictors", kPredictorFormat}, {"policy", kPolicyFormat}, {"report", kReportFormat}};
            for (const auto& [key, version] : expected) {
                if (f.contains(key) && f.at(key).get<std::string>() != version) {
                    fail("manifest: " + std::string(key) + " format '" + f.at(key).get<std::string>() +
                         "' is not supported (expected '" + std::string(version) + "')");
                }
            }
        }
    } catch (const json::exception& e) {
        fail(std::string("manifest: ") + e.what());
    }
    require(m.fast_budget_fraction >= 0.0 && m.fast_budget_fraction <= 1.0,
            "manifest: fast_budget_fraction must be in [0, 1]");
    require(m.workload.zipf_s > 0.0, "manifest: zipf_s must be > 0");
    return m;
}

void save_manifest(const RunManifest& manifest, const std::filesystem::path& path) {
    io::write_json(path, manifest_to_json(manifest));
}

RunManifest load_manifest(const std::filesystem::path& path) { return manifest_from_json(io::read_json(path)); }

DevicePair manifest_devices(const RunManifest& manifest, std::uint64_t model_bytes) {
    DevicePair devices;
    devices.fast = {"fast", static_cast<std::uint64_t>(std::floor(manifest.fast_budget_fraction * double(model_bytes))),
                    manifest.fast_bandwidth};
    devices.slow = {"slow", model_bytes, manifest.slow_bandwidth};
    devices.sync_cost = manifest.sync_cost;
    devices.check();
    return devices;
}

PredictorSet train_all(const Model& model, std::span<const std::vector<float>> corpus, const ActivationStats& stats,
                       const SizingConfig& sizing) {
    const auto samples = collect_layer_samples(model, corpus);
    const std::size_t d = model.config.hidden_dim;
    const std::size_t m = model.config.intermediate_dim;
    PredictorSet set;
    for (std::size_t l = 0; l < model.config.num_layers; ++l) {
        std::uint64_t fired = 0;
        for (const auto c : stats.layer_counts(l)) fired += c;
        const double density = stats.total_inputs == 0 ? 0.0 : double(fired) / (double(stats.total_inputs) * double(m));
        SizingConfig cfg = sizing;
        cfg.seed = derive_seed(sizing.seed, "layer/" + std::to_string(l));
        auto trained = train_adaptive(samples[l], d, m, 1.0 - density, cfg);
        set.layers.push_back(std::move(trained.model));
        set.reports.push_back(trained.report);
    }
    return set;
}

json profile_summary(const ActivationStats& stats) {
    json out;
    out["total_inputs"] = stats.total_inputs;
    out["total_activations"] = stats.total_activations();
    const double density = stats.neuron_count() == 0 || stats.total_inputs == 0
                               ? 0.0
                               : double(stats.total_activations()) /
                                     (double(stats.neuron_count()) * double(stats.total_inputs));
    out["mean_sparsity"] = 1.0 - density;
    if (stats.total_activations() == 0) return out;
    const auto curve = activation_cdf(stats);
    out["hot_fraction_80"] = double(hot_set(stats, 0.8).size()) / double(stats.neuron_count());
    json deciles = json::array();
    for (int k = 1; k <= 10; ++k) {
        const double mass = k / 10.0;
        deciles.push_back({{"mass", mass}, {"neuron_fraction", neuron_fraction_for_mass(curve, mass)}});
    }
    out["cdf"] = std::move(deciles);
    json ginis = json::array();
    for (std::size_t l = 0; l < stats.num_layers; ++l) ginis.push_back(gini(stats.layer_counts(l)));
    out["layer_gini"] = std::move(ginis);
    return out;
}

namespace {

template <class F>
auto stage(const char* name, F&& body) {
    try {
        return body();
    } catch (const std::exception& e) {
        fail(std::string("stage '") + name + "' failed: " + e.what());
    }
}

json sizing_json(const SizingReport& r) {
    return json{{"layer", r.layer},
                {"sparsity", r.sparsity},
                {"initial_hidden", r.initial_hidden},
                {"final_hidden", r.final_hidden},
                {"iterations", r.iterations},
                {"recall", r.recall},
                {"precision", r.precision},
                {"skew_gini", r.skew_gini},
                {"target_missed", r.target_missed}};
}

} // namespace

PipelineResult run_pipeline(const RunManifest& manifest, const std::filesystem::path& out_dir) {
    auto at = [&](const std::string& rel) { return out_dir / rel; };
    PipelineResult result;
    json& report = result.report;
    report["format"] = kReportFormat;
    report["manifest"] = manifest_to_json(manifest);

    // Step 1: synthetic model and corpus.
    const Workload workload = stage("gen", [&] {
        WorkloadSpec spec = manifest.workload;
        spec.seed = manifest.stage_seed("gen");
        auto w = generate_workload(spec);
        save_model(w.model, at(manifest.model_path));
        save_trace(w.inputs, at(manifest.trace_path));
        return w;
    });
    const Model& model = workload.model;
    const auto& corpus = workload.inputs;
    report["model"] = {{"num_layers", model.config.num_layers},
                       {"hidden_dim", model.config.hidden_dim},
                       {"intermediate_dim", model.config.intermediate_dim},
                       {"activation", to_string(model.config.activation)},
                       {"parameters", model.parameter_count()},
                       {"bytes", model.total_bytes()}};

    // Step 2: offline profile.
    const ActivationStats stats = stage("profile", [&] {
        auto s = profile(model, corpus);
        save_stats(s, at(manifest.stats_path));
        return s;
    });
    report["profile"] = profile_summary(stats);

    // Step 3: adaptive predictors.
    const PredictorSet predictors = stage("train", [&] {
        SizingConfig sizing = manifest.sizing;
        sizing.seed = manifest.stage_seed("train");
        auto set = train_all(model, corpus, stats, sizing);
        save_predictors(set, at(manifest.predictor_path));
        return set;
    });
    {
        json sizing = json::array();
        for (const auto& r : predictors.reports) sizing.push_back(sizing_json(r));
        report["predictors"] = {{"budget", predictor_budget(predictors.layers, model)}, {"layers", std::move(sizing)}};
    }

    // Step 4: placement.
    const PlacementPolicy policy = stage("solve", [&] {
        const auto devices = manifest_devices(manifest, model.total_bytes());
        SolveOptions options;
        options.time_limit = manifest.time_limit;
        options.num_layers = model.config.num_layers;
        options.intermediate_dim = model.config.intermediate_dim;
        options.total_inputs = stats.total_inputs;
        if (manifest.reserve_predictors) {
            for (const auto& p : predictors.layers) options.reserved_fast_bytes += p.bytes();
        }
        const auto batches = batch_model(stats, model, manifest.batch_size);
        const auto c = layer_thresholds(batches, model.config.num_layers, devices);
        auto p = solve(batches, devices, c, options);
        require(p.status != SolverStatus::Infeasible, "placement infeasible: " + p.diagnostic);
        save_policy(p, at(manifest.policy_path));
        return p;
    });
    {
        json layers = json::array();
        for (std::size_t l = 0; l < policy.num_layers; ++l) {
            layers.push_back({{"layer", l},
                              {"split", int(policy.split[l])},
                              {"min_fast", policy.min_fast[l] == kNoSplit ? json(nullptr) : json(policy.min_fast[l])},
                              {"fast_neurons", policy.fast_neurons(l)}});
        }
        report["placement"] = {{"status", to_string(policy.status)},
                               {"objective_value", policy.objective_value},
                               {"objective_activations", policy.objective_activations},
                               {"fast_capacity", policy.devices.fast.mem_capacity},
                               {"reserved_fast_bytes", policy.reserved_fast_bytes},
                               {"fast_bytes", policy.fast_bytes()},
                               {"slow_bytes", policy.slow_bytes()},
                               {"violations", validate(policy).size()},
                               {"layers", std::move(layers)}};
    }

    // Step 5: hybrid engine against the dense reference.
    stage("run", [&] {
        const Engine engine(model, policy, predictors);
        const std::size_t n = std::min(manifest.eval_inputs, corpus.size());
        double err_true = 0.0;
        double err_dense = 0.0;
        double err_pred = 0.0;
        Confusion conf;
        std::uint64_t schedule_failures = 0;
        std::uint64_t row_dots = 0;
        std::uint64_t mask_total = 0;
        for (std::size_t k = 0; k < n; ++k) {
            const auto ref = forward(model, corpus[k]);
            const auto t = engine.infer(corpus[k], MaskMode::TrueMask, true);
            if (!verify_schedule(engine.dag(), t.events).ok) ++schedule_failures;
            err_true = std::max(err_true, max_relative_error(t.y, ref.y));
            row_dots += t.metrics.row_dots;
            for (const auto& mk : t.masks) mask_total += mk.size();
            const auto dn = engine.infer(corpus[k], MaskMode::Dense);
            err_dense = std::max(err_dense, max_relative_error(dn.y, ref.y));
            const auto pr = engine.infer(corpus[k], MaskMode::PredictedMask);
            err_pred = std::max(err_pred, max_relative_error(pr.y, ref.y));
            // Predicted masks are scored against the dense path's masks of the same input.
            for (std::size_t l = 0; l < model.config.num_layers; ++l) {
                conf += confusion(pr.masks[l], ref.masks[l], model.config.intermediate_dim);
            }
        }
        report["engine"] = {{"inputs", n},
                            {"max_rel_error_true_mask", err_true},
                            {"max_rel_error_dense", err_dense},
                            {"max_rel_error_predicted", err_pred},
                            {"predicted_recall", conf.recall()},
                            {"predicted_precision", conf.precision()},
                            {"row_dots", row_dots},
                            {"mask_neurons", mask_total},
                            {"schedule_failures", schedule_failures}};
        return 0;
    });

    // Step 6: simulated latency for the policy and the baselines.
    stage("bench", [&] {
        const auto trace = record_masks(model, corpus);
        SimOptions sim;
        sim.predictor_overhead = manifest.predictor_overhead;
        sim.random_draws = manifest.random_draws;
        const auto bench_seed = manifest.stage_seed("bench");
        result.latency.push_back(simulate(policy, trace, sim));
        for (const auto mode : {BaselineMode::DenseSplit, BaselineMode::PoLayerwise, BaselineMode::EngineRandom}) {
            result.latency.push_back(baseline_latency(mode, policy, trace, sim, bench_seed));
        }
        io::write_file(at(manifest.latency_csv_path), breakdowns_to_csv(result.latency));
        const double dense_total = result.latency[1].totals.total_s;
        json modes = json::array();
        for (const auto& b : result.latency) {
            modes.push_back({{"mode", b.label},
                             {"total_s", b.totals.total_s},
                             {"fast_load_share", b.fast_load_share()},
                             {"speedup_vs_dense_split", b.totals.total_s > 0.0 ? dense_total / b.totals.total_s : 0.0}});
        }
        const auto neuron_bytes = double(model.neuron_bytes(0));
        const auto be = breakeven_batch(policy.devices, neuron_bytes * double(model.config.intermediate_dim),
                                        manifest.pcie_bandwidth);
        report["latency"] = {{"inputs", trace.size()},
                             {"modes", std::move(modes)},
                             {"breakeven_batch_per_layer", be ? json(*be) : json(nullptr)}};
        return 0;
    });

    io::write_json(at(manifest.report_path), report);
    return result;
}

} // namespace neursplit
