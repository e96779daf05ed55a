#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <string>

#include "neursplit/error.hpp"
#include "neursplit/io.hpp"
#include "neursplit/pipeline.hpp"
#include "neursplit/profiler.hpp"
#include "neursplit/report.hpp"
#include "neursplit/workload.hpp"

using namespace neursplit;
namespace fs = std::filesystem;

namespace {

LatencyBreakdown sample_breakdown(const std::string& label, std::size_t layers) {
    LatencyBreakdown b;
    b.label = label;
    b.inputs = 7;
    for (std::size_t l = 0; l < layers; ++l) {
        LayerLatency x;
        x.layer = static_cast<std::uint32_t>(l);
        x.fast_s = 0.1 * double(l + 1);
        x.slow_s = 1.0 / 3.0 + double(l);
        x.sync_s = 2.5e-8;
        x.predict_s = 1e-300;
        x.total_s = x.slow_s + x.sync_s + x.predict_s;
        x.fast_active = 10 + l;
        x.slow_active = 3 * l;
        b.layers.push_back(x);
        b.totals += x;
    }
    return b;
}

RunManifest small_manifest(std::uint64_t seed) {
    RunManifest m;
    m.seed = seed;
    m.workload.num_layers = 2;
    m.workload.hidden_dim = 16;
    m.workload.intermediate_dim = 64;
    m.workload.num_inputs = 200;
    m.sizing.epochs = 10;
    m.batch_size = 16;
    m.eval_inputs = 20;
    m.random_draws = 4;
    return m;
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) { fs::remove_all(path); }
    ~TempDir() { fs::remove_all(path); }
};

} // namespace

TEST_CASE("CSV has one row per layer plus totals") {
    SUBCASE("no breakdowns gives the header only") {
        const auto csv = breakdowns_to_csv({});
        CHECK(csv == "label,layer,inputs,fast_s,slow_s,sync_s,predict_s,total_s,fast_active,slow_active\n");
    }
    SUBCASE("row count") {
        const std::vector<LatencyBreakdown> b{sample_breakdown("policy", 3), sample_breakdown("po", 3)};
        const auto csv = breakdowns_to_csv(b);
        CHECK(std::count(csv.begin(), csv.end(), '\n') == 1 + 2 * 4);
        CHECK(csv.find("policy,total,7,") != std::string::npos);
    }
}

TEST_CASE("CSV and JSON round-trip byte for byte") {
    const std::vector<LatencyBreakdown> b{sample_breakdown("policy", 4), sample_breakdown("dense-split", 4)};
    const auto csv = breakdowns_to_csv(b);
    const auto doc = csv_to_json(csv);
    CHECK(json_to_csv(doc) == csv);
    CHECK(doc == breakdowns_to_json(b));
    const auto back = breakdowns_from_json(doc);
    REQUIRE(back.size() == 2);
    CHECK(back[0].label == "policy");
    CHECK(back[1].layers.size() == 4);
    CHECK(back[0].layers[2].slow_s == b[0].layers[2].slow_s);
    CHECK(back[0].layers[0].predict_s == 1e-300);
    CHECK(back[1].totals.total_s == b[1].totals.total_s);
    CHECK(breakdowns_to_csv(back) == csv);
}

TEST_CASE("format_double is shortest round-trip text") {
    CHECK(format_double(0.1) == "0.1");
    CHECK(format_double(2.5e-8) == "2.5e-08");
    CHECK(std::stod(format_double(1.0 / 3.0)) == 1.0 / 3.0);
}

TEST_CASE("schema violations are rejected") {
    const std::string header = "label,layer,inputs,fast_s,slow_s,sync_s,predict_s,total_s,fast_active,slow_active\n";
    CHECK_THROWS_AS(csv_to_json(""), Error);
    CHECK_THROWS_AS(csv_to_json("label,layer\n"), Error);
    CHECK_THROWS_AS(csv_to_json(header + "p,0,1,0,0,0,0,0,0\n"), Error);
    CHECK_THROWS_AS(csv_to_json(header + "p,0,1,x,0,0,0,0,0,0\n"), Error);
    CHECK_THROWS_AS(csv_to_json(header + "p,-1,1,0,0,0,0,0,0,0\n"), Error);
    CHECK_THROWS_AS(csv_to_json(header + "p,0,1,0,0,0,0,0,0,0"), Error);
    CHECK_NOTHROW(csv_to_json(header + "p,0,1,0,0,0,0,0,0,0\n"));

    auto doc = breakdowns_to_json(std::vector<LatencyBreakdown>{sample_breakdown("p", 1)});
    auto renamed = doc;
    renamed["columns"][3] = "gpu_s";
    CHECK_THROWS_AS(json_to_csv(renamed), Error);
    auto wrong_format = doc;
    wrong_format["format"] = "neursplit-breakdowns/0";
    CHECK_THROWS_AS(json_to_csv(wrong_format), Error);
    auto unterminated = doc;
    unterminated["rows"].erase(1);
    CHECK_THROWS_AS(breakdowns_from_json(unterminated), Error);

    LatencyBreakdown bad = sample_breakdown("a,b", 1);
    CHECK_THROWS_AS(breakdowns_to_csv(std::vector<LatencyBreakdown>{bad}), Error);
}

TEST_CASE("manifest round-trip") {
    TempDir dir("neursplit_test_manifest");
    auto m = small_manifest(42);
    m.workload.activation = ActivationKind::ReGLU;
    m.fast_budget_fraction = 0.25;
    m.random_draws = 3;
    save_manifest(m, dir.path / "manifest.json");
    const auto back = load_manifest(dir.path / "manifest.json");
    CHECK(manifest_to_json(back) == manifest_to_json(m));
    CHECK(back.seed == 42);
    CHECK(back.random_draws == 3);
    CHECK(back.workload.activation == ActivationKind::ReGLU);
    CHECK(m.stage_seed("gen") != m.stage_seed("train"));

    auto doc = manifest_to_json(m);
    doc["format"] = "neursplit-manifest/0";
    CHECK_THROWS_AS(manifest_from_json(doc), Error);
}

TEST_CASE("generator: sparsity and skew") {
    WorkloadSpec spec;
    spec.num_layers = 2;
    spec.hidden_dim = 32;
    spec.intermediate_dim = 128;
    spec.num_inputs = 400;
    SUBCASE("sparsity 0.9 gives about 10% active neurons") {
        spec.sparsity = 0.9;
        const auto w = generate_workload(spec);
        const auto stats = profile(w.model, w.inputs);
        const double active = double(stats.total_activations()) / double(stats.neuron_count() * stats.total_inputs);
        CHECK(active == doctest::Approx(0.10).epsilon(0.3));
    }
    SUBCASE("exponent 0 gives a near-diagonal CDF") {
        spec.zipf_s = 0.0;
        spec.sparsity = 0.5;
        const auto w = generate_workload(spec);
        const auto curve = activation_cdf(profile(w.model, w.inputs));
        for (const double mass : {0.2, 0.5, 0.8}) {
            CHECK(neuron_fraction_for_mass(curve, mass) == doctest::Approx(mass).epsilon(0.05));
        }
    }
    SUBCASE("a larger exponent concentrates mass") {
        spec.zipf_s = 1.2;
        const auto w = generate_workload(spec);
        const auto curve = activation_cdf(profile(w.model, w.inputs));
        CHECK(neuron_fraction_for_mass(curve, 0.8) < 0.5);
    }
}

TEST_CASE("generator: fixed seed gives identical files") {
    TempDir dir("neursplit_test_gen");
    WorkloadSpec spec;
    spec.num_layers = 2;
    spec.hidden_dim = 16;
    spec.intermediate_dim = 64;
    spec.num_inputs = 50;
    spec.seed = 9;
    for (const char* name : {"a", "b"}) {
        const auto w = generate_workload(spec);
        save_model(w.model, dir.path / name / "model.json");
        save_trace(w.inputs, dir.path / name / "trace.bin");
    }
    for (const char* file : {"model.json", "model.bin", "trace.bin"}) {
        CHECK(io::read_file(dir.path / "a" / file) == io::read_file(dir.path / "b" / file));
    }
    spec.seed = 10;
    const auto other = generate_workload(spec);
    save_model(other.model, dir.path / "c" / "model.json");
    CHECK(io::read_file(dir.path / "a" / "model.bin") != io::read_file(dir.path / "c" / "model.bin"));
}

TEST_CASE("pipeline is deterministic and writes every artifact") {
    TempDir dir("neursplit_test_pipeline");
    const auto m = small_manifest(3);
    const auto a = run_pipeline(m, dir.path / "a");
    const auto b = run_pipeline(m, dir.path / "b");
    for (const auto& file : {m.model_path, m.trace_path, m.stats_path, m.predictor_path, m.policy_path,
                             m.latency_csv_path, m.report_path}) {
        CAPTURE(file);
        REQUIRE(fs::exists(dir.path / "a" / file));
        CHECK(io::read_file(dir.path / "a" / file) == io::read_file(dir.path / "b" / file));
    }
    CHECK(a.report == b.report);
    REQUIRE(a.latency.size() == 4);
    CHECK(a.latency[0].layers.size() == 2);
    CHECK(io::read_file(dir.path / "a" / m.latency_csv_path) == breakdowns_to_csv(a.latency));
    CHECK(a.report.at("engine").at("schedule_failures").get<std::uint64_t>() == 0);
}

TEST_CASE("pipeline names the failing stage") {
    TempDir dir("neursplit_test_pipeline_fail");
    auto m = small_manifest(4);
    m.workload.sparsity = 1.5;
    try {
        run_pipeline(m, dir.path);
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(std::string(e.what()).find("stage 'gen' failed") != std::string::npos);
    }
}
