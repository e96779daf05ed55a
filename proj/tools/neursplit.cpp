// neursplit: command-line driver for the offline (gen, profile, train,
// solve) and online (run, bench) stages, plus the end-to-end pipeline.

#include <cstdio>
#include <iostream>
#include <optional>

#include <CLI11.hpp>

#include "neursplit/device_sim.hpp"
#include "neursplit/engine.hpp"
#include "neursplit/error.hpp"
#include "neursplit/io.hpp"
#include "neursplit/pipeline.hpp"
#include "neursplit/placement.hpp"
#include "neursplit/predictor.hpp"
#include "neursplit/profiler.hpp"
#include "neursplit/report.hpp"
#include "neursplit/workload.hpp"

using namespace neursplit;

namespace {

struct GenArgs {
    WorkloadSpec spec;
    std::string activation = "relu";
    std::string model = "model.json";
    std::string trace = "trace.bin";
};

struct ProfileArgs {
    std::string model;
    std::string trace;
    std::string out = "stats.bin";
    std::size_t workers = 0;
    bool summary = false;
};

struct TrainArgs {
    std::string model;
    std::string trace;
    std::string out = "predictors.json";
    SizingConfig sizing;
};

struct SolveArgs {
    std::string stats;
    std::string model;
    std::string out = "policy.json";
    std::string predictors;
    std::uint64_t fast_mem = 0;
    double fast_budget = -1.0;
    std::uint64_t slow_mem = 0;
    double fast_bw = 600e9;
    double slow_bw = 38.4e9;
    double sync = 2.5e-8;
    double time_limit = 10.0;
    std::size_t batch_size = 64;
};

struct RunArgs {
    std::string model;
    std::string policy;
    std::string predictors;
    std::string input;
    std::string mode = "true";
    std::string out;
    std::size_t limit = 0;
    bool check = false;
};

struct BenchArgs {
    std::string mode = "all";
    std::string model;
    std::string policy;
    std::string trace;
    std::string predictors;
    std::string out;
    std::string csv;
    double overhead = 0.10;
    std::size_t random_draws = 16;
    std::uint64_t seed = 1;
    bool predicted = false;
};

struct PipelineArgs {
    std::string manifest;
    std::string out = "neursplit-run";
    std::optional<std::uint64_t> seed;
    std::string write_manifest;
};

struct ReportArgs {
    std::string breakdowns;
    std::string csv_in;
    std::string csv_out;
    std::string json_out;
};

void emit(const json& doc, const std::string& path) {
    if (path.empty()) {
        std::cout << doc.dump(2) << "\n";
    } else {
        io::write_json(path, doc);
    }
}

void cmd_gen(GenArgs& a) {
    a.spec.activation = activation_from_string(a.activation);
    require(a.spec.zipf_s > 0.0, "gen: --zipf must be > 0");
    const auto w = generate_workload(a.spec);
    save_model(w.model, a.model);
    save_trace(w.inputs, a.trace);
    std::cout << "wrote " << a.model << " (" << w.model.total_bytes() << " weight bytes) and " << a.trace << " ("
              << w.inputs.size() << " inputs)\n";
}

void cmd_profile(const ProfileArgs& a) {
    const auto model = load_model(a.model);
    const auto corpus = load_trace(a.trace);
    const auto stats = profile(model, corpus, a.workers);
    save_stats(stats, a.out);
    if (a.summary) std::cout << profile_summary(stats).dump(2) << "\n";
    std::cout << "profiled " << stats.total_inputs << " inputs into " << a.out << "\n";
}

void cmd_train(const TrainArgs& a) {
    const auto model = load_model(a.model);
    const auto corpus = load_trace(a.trace);
    const auto stats = profile(model, corpus);
    const auto set = train_all(model, corpus, stats, a.sizing);
    save_predictors(set, a.out);
    for (const auto& r : set.reports) {
        std::printf("layer %u: sparsity %.3f hidden %zu -> %zu recall %.4f precision %.4f%s\n", r.layer, r.sparsity,
                    r.initial_hidden, r.final_hidden, r.recall, r.precision, r.target_missed ? " (target missed)" : "");
    }
    std::printf("predictor budget %.4f of model parameters\n", predictor_budget(set.layers, model));
}

int cmd_solve(const SolveArgs& a) {
    const auto model = load_model(a.model);
    const auto stats = load_stats(a.stats);
    DevicePair devices;
    std::uint64_t fast_mem = a.fast_mem;
    if (a.fast_budget >= 0.0) fast_mem = static_cast<std::uint64_t>(a.fast_budget * double(model.total_bytes()));
    devices.fast = {"fast", fast_mem, a.fast_bw};
    devices.slow = {"slow", a.slow_mem == 0 ? model.total_bytes() : a.slow_mem, a.slow_bw};
    devices.sync_cost = a.sync;
    SolveOptions options;
    options.time_limit = a.time_limit;
    options.num_layers = model.config.num_layers;
    options.intermediate_dim = model.config.intermediate_dim;
    options.total_inputs = stats.total_inputs;
    if (!a.predictors.empty()) {
        for (const auto& p : load_predictors(a.predictors).layers) options.reserved_fast_bytes += p.bytes();
    }
    const auto batches = batch_model(stats, model, a.batch_size);
    const auto c = layer_thresholds(batches, model.config.num_layers, devices);
    const auto policy = solve(batches, devices, c, options);
    save_policy(policy, a.out);
    std::cout << "status " << to_string(policy.status) << ", objective " << policy.objective_value << ", FAST bytes "
              << policy.fast_bytes() << " + reserved " << policy.reserved_fast_bytes << " of "
              << devices.fast.mem_capacity << "\n";
    if (policy.status == SolverStatus::Infeasible) {
        std::cerr << "infeasible: " << policy.diagnostic << "\n";
        return 2;
    }
    return 0;
}

int cmd_run(const RunArgs& a) {
    const auto model = load_model(a.model);
    const auto policy = load_policy(a.policy);
    std::optional<PredictorSet> predictors;
    if (!a.predictors.empty()) predictors = load_predictors(a.predictors);
    const auto mode = mask_mode_from_string(a.mode);
    const Engine engine(model, policy, predictors);
    const auto corpus = load_trace(a.input);
    const std::size_t n = a.limit == 0 ? corpus.size() : std::min(a.limit, corpus.size());

    json outputs = json::array();
    double max_err = 0.0;
    double wall = 0.0;
    std::uint64_t computed[kUnits] = {0, 0};
    std::uint64_t fired[kUnits] = {0, 0};
    std::uint64_t row_dots = 0;
    std::uint64_t schedule_failures = 0;
    for (std::size_t k = 0; k < n; ++k) {
        const auto r = engine.infer(corpus[k], mode, a.check);
        if (a.check) {
            max_err = std::max(max_err, max_relative_error(r.y, forward(model, corpus[k]).y));
            if (!verify_schedule(engine.dag(), r.events).ok) ++schedule_failures;
        }
        for (std::size_t u = 0; u < kUnits; ++u) {
            computed[u] += r.metrics.computed[u];
            fired[u] += r.metrics.active[u];
        }
        row_dots += r.metrics.row_dots;
        wall += r.metrics.wall_seconds;
        outputs.push_back(r.y);
    }
    json metrics{{"mode", to_string(mode)},
                 {"inputs", n},
                 {"fast_computed", computed[0]},
                 {"slow_computed", computed[1]},
                 {"fast_active", fired[0]},
                 {"slow_active", fired[1]},
                 {"row_dots", row_dots},
                 {"wall_seconds", wall}};
    if (a.check) {
        metrics["max_rel_error_vs_dense"] = max_err;
        metrics["schedule_failures"] = schedule_failures;
    }
    emit(json{{"metrics", metrics}, {"outputs", std::move(outputs)}}, a.out);
    return schedule_failures == 0 ? 0 : 3;
}

void cmd_bench(const BenchArgs& a) {
    const auto model = load_model(a.model);
    const auto policy = load_policy(a.policy);
    const auto corpus = load_trace(a.trace);
    MaskTrace trace;
    if (a.predicted) {
        require(!a.predictors.empty(), "bench: --predicted needs --predictors");
        const auto set = load_predictors(a.predictors);
        for (const auto& input : corpus) {
            std::vector<ActivationMask> masks;
            std::vector<float> x = input;
            for (std::size_t l = 0; l < model.config.num_layers; ++l) {
                auto mask = predict_mask(set.layers[l], x);
                mask.layer = static_cast<std::uint32_t>(l);
                masks.push_back(std::move(mask));
                x = dense_mlp_forward(model.layers[l], x, static_cast<std::uint32_t>(l)).y;
            }
            trace.push_back(std::move(masks));
        }
    } else {
        trace = record_masks(model, corpus);
    }
    SimOptions sim;
    sim.predictor_overhead = a.overhead;
    sim.random_draws = a.random_draws;
    std::vector<LatencyBreakdown> out;
    auto want = [&](const char* name) { return a.mode == "all" || a.mode == name; };
    require(a.mode == "all" || a.mode == "policy" || a.mode == "dense-split" || a.mode == "po" ||
                a.mode == "engine-random",
            "bench: unknown mode '" + a.mode + "'");
    if (want("policy")) out.push_back(simulate(policy, trace, sim));
    if (want("dense-split")) out.push_back(baseline_latency(BaselineMode::DenseSplit, policy, trace, sim, a.seed));
    if (want("po")) out.push_back(baseline_latency(BaselineMode::PoLayerwise, policy, trace, sim, a.seed));
    if (want("engine-random")) out.push_back(baseline_latency(BaselineMode::EngineRandom, policy, trace, sim, a.seed));
    for (const auto& b : out) {
        std::printf("%-14s total %.6e s  fast share %.4f\n", b.label.c_str(), b.totals.total_s, b.fast_load_share());
    }
    if (!a.out.empty()) io::write_json(a.out, breakdowns_to_json(out));
    if (!a.csv.empty()) io::write_file(a.csv, breakdowns_to_csv(out));
}

void cmd_pipeline(const PipelineArgs& a) {
    RunManifest manifest = a.manifest.empty() ? RunManifest{} : load_manifest(a.manifest);
    if (a.seed) manifest.seed = *a.seed;
    if (!a.write_manifest.empty()) save_manifest(manifest, a.write_manifest);
    const auto result = run_pipeline(manifest, a.out);
    const auto& r = result.report;
    std::cout << "report: " << (std::filesystem::path(a.out) / manifest.report_path).string() << "\n";
    std::cout << "placement " << r["placement"]["status"].get<std::string>() << ", engine max error "
              << r["engine"]["max_rel_error_true_mask"].get<double>() << ", predictor budget "
              << r["predictors"]["budget"].get<double>() << "\n";
    for (const auto& m : r["latency"]["modes"]) {
        std::printf("%-14s %.6e s  speedup vs dense-split %.2fx\n", m["mode"].get<std::string>().c_str(),
                    m["total_s"].get<double>(), m["speedup_vs_dense_split"].get<double>());
    }
}

void cmd_report(const ReportArgs& a) {
    require(a.breakdowns.empty() != a.csv_in.empty(), "report: give exactly one of --breakdowns or --from-csv");
    json doc = a.breakdowns.empty() ? csv_to_json(io::read_file(a.csv_in)) : io::read_json(a.breakdowns);
    const auto csv = json_to_csv(doc);
    if (!a.json_out.empty()) io::write_json(a.json_out, doc);
    if (!a.csv_out.empty()) {
        io::write_file(a.csv_out, csv);
    } else if (a.json_out.empty()) {
        std::cout << csv;
    }
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"neursplit: neuron-granularity hybrid inference at desk scale"};
    app.require_subcommand(1);

    GenArgs gen;
    auto* g = app.add_subcommand("gen", "generate a planted toy model and input trace");
    g->add_option("--layers", gen.spec.num_layers)->check(CLI::PositiveNumber);
    g->add_option("--hidden", gen.spec.hidden_dim, "d")->check(CLI::PositiveNumber);
    g->add_option("--intermediate", gen.spec.intermediate_dim, "m")->check(CLI::PositiveNumber);
    g->add_option("--activation", gen.activation)->check(CLI::IsMember({"relu", "reglu"}));
    g->add_option("--sparsity", gen.spec.sparsity)->check(CLI::Range(0.0, 1.0));
    g->add_option("--zipf", gen.spec.zipf_s, "power-law exponent");
    g->add_option("--rank", gen.spec.rank, "rank of the mask-deciding matrix (0 = full)");
    g->add_option("--inputs", gen.spec.num_inputs)->check(CLI::PositiveNumber);
    g->add_option("--seed", gen.spec.seed);
    g->add_option("--out-model", gen.model);
    g->add_option("--out-trace", gen.trace);

    ProfileArgs prof;
    auto* p = app.add_subcommand("profile", "count neuron activations over a trace");
    p->add_option("--model", prof.model)->required();
    p->add_option("--trace", prof.trace)->required();
    p->add_option("--out", prof.out);
    p->add_option("--workers", prof.workers, "shards (0 = NEURSPLIT_THREADS or hardware)");
    p->add_flag("--summary", prof.summary, "print CDF and hot-set statistics");

    TrainArgs train;
    auto* t = app.add_subcommand("train-predictor", "train adaptive per-layer mask predictors");
    t->add_option("--model", train.model)->required();
    t->add_option("--trace", train.trace)->required();
    t->add_option("--out", train.out);
    t->add_option("--recall-target", train.sizing.recall_target)->check(CLI::Range(0.0, 1.0));
    t->add_option("--h-min", train.sizing.h_min);
    t->add_option("--h-max", train.sizing.h_max, "0 = d/2");
    t->add_option("--epochs", train.sizing.epochs);
    t->add_option("--lr", train.sizing.learning_rate);
    t->add_option("--seed", train.sizing.seed);

    SolveArgs solve_args;
    auto* s = app.add_subcommand("solve-placement", "solve the neuron placement ILP");
    s->add_option("--stats", solve_args.stats)->required();
    s->add_option("--model", solve_args.model)->required();
    s->add_option("--out", solve_args.out);
    auto* fm = s->add_option("--fast-mem", solve_args.fast_mem, "FAST capacity in bytes");
    auto* fb = s->add_option("--fast-budget", solve_args.fast_budget, "FAST capacity as a fraction of model bytes");
    fm->excludes(fb);
    s->add_option("--slow-mem", solve_args.slow_mem, "SLOW capacity in bytes (0 = model size)");
    s->add_option("--fast-bw", solve_args.fast_bw, "bytes/s");
    s->add_option("--slow-bw", solve_args.slow_bw, "bytes/s");
    s->add_option("--sync", solve_args.sync, "seconds per synchronization");
    s->add_option("--time-limit", solve_args.time_limit, "seconds");
    s->add_option("--batch-size", solve_args.batch_size)->check(CLI::PositiveNumber);
    s->add_option("--predictor", solve_args.predictors, "charge these predictors to FAST memory");

    RunArgs run;
    auto* r = app.add_subcommand("run", "run the hybrid engine over a trace");
    r->add_option("--model", run.model)->required();
    r->add_option("--policy", run.policy)->required();
    r->add_option("--predictor", run.predictors);
    r->add_option("--input", run.input)->required();
    r->add_option("--mode", run.mode)->check(CLI::IsMember({"true", "predicted", "dense"}));
    r->add_option("--out", run.out, "metrics JSON (stdout if absent)");
    r->add_option("--limit", run.limit, "first N inputs only");
    r->add_flag("--check", run.check, "compare against the dense reference and verify the schedule");

    BenchArgs bench;
    auto* b = app.add_subcommand("bench", "simulate latency for the policy and baselines");
    b->add_option("--mode", bench.mode)->check(CLI::IsMember({"all", "policy", "dense-split", "po", "engine-random"}));
    b->add_option("--model", bench.model)->required();
    b->add_option("--policy", bench.policy)->required();
    b->add_option("--trace", bench.trace)->required();
    b->add_option("--predictor", bench.predictors);
    b->add_flag("--predicted", bench.predicted, "simulate predicted masks instead of true masks");
    b->add_option("--overhead", bench.overhead, "predictor overhead fraction");
    b->add_option("--random-draws", bench.random_draws, "placements averaged by the random baseline")
        ->check(CLI::PositiveNumber);
    b->add_option("--seed", bench.seed, "seed for engine-random");
    b->add_option("--out", bench.out, "breakdown JSON");
    b->add_option("--csv", bench.csv, "breakdown CSV");

    PipelineArgs pipe;
    auto* pl = app.add_subcommand("pipeline", "gen, profile, train, solve, run and bench in one go");
    pl->add_option("--manifest", pipe.manifest);
    pl->add_option("--out", pipe.out, "output directory");
    pl->add_option("--seed", pipe.seed, "override the manifest seed");
    pl->add_option("--write-manifest", pipe.write_manifest, "save the effective manifest here");

    ReportArgs rep;
    auto* rp = app.add_subcommand("report", "convert latency breakdowns between JSON and CSV");
    rp->add_option("--breakdowns", rep.breakdowns, "breakdown JSON from bench");
    rp->add_option("--from-csv", rep.csv_in, "breakdown CSV");
    rp->add_option("--csv", rep.csv_out);
    rp->add_option("--json", rep.json_out);

    CLI11_PARSE(app, argc, argv);

    try {
        if (g->parsed()) cmd_gen(gen);
        if (p->parsed()) cmd_profile(prof);
        if (t->parsed()) cmd_train(train);
        if (s->parsed()) return cmd_solve(solve_args);
        if (r->parsed()) return cmd_run(run);
        if (b->parsed()) cmd_bench(bench);
        if (pl->parsed()) cmd_pipeline(pipe);
        if (rp->parsed()) cmd_report(rep);
    } catch (const std::exception& e) {
        std::cerr << "neursplit: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
