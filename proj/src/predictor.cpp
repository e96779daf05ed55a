#include "neursplit/predictor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>

#include "neursplit/error.hpp"
#include "neursplit/io.hpp"
#include "neursplit/runtime.hpp"

namespace neursplit {

namespace {

double decision_logit(float threshold) {
    if (threshold <= 0.0f) return -std::numeric_limits<double>::infinity();
    if (threshold >= 1.0f) return std::numeric_limits<double>::infinity();
    return std::log(double(threshold) / (1.0 - double(threshold)));
}

void hidden_activations(const PredictorModel& p, std::span<const float> x, std::vector<float>& hidden) {
    hidden.resize(p.hidden);
    for (std::size_t j = 0; j < p.hidden; ++j) {
        const auto a = static_cast<float>(dot(p.w_in.row(j), x) + (p.b_in.empty() ? 0.0 : double(p.b_in[j])));
        hidden[j] = a > 0.0f ? a : 0.0f;
    }
}

float output_logit(const PredictorModel& p, std::size_t i, std::span<const float> hidden) {
    return static_cast<float>(dot(p.w_out.row(i), hidden) + (p.b_out.empty() ? 0.0 : double(p.b_out[i])));
}

Confusion evaluate(const PredictorModel& p, std::span<const LayerSample> samples) {
    Confusion c;
    for (const auto& s : samples) c += confusion(predict_mask(p, s.x), s.mask, p.output_dim());
    return c;
}

json matrix_entry(std::string& blob, const Matrix& mat) {
    json e{{"offset", blob.size()}, {"rows", mat.rows}, {"cols", mat.cols}};
    io::append_f32(blob, mat.data);
    return e;
}

json vector_entry(std::string& blob, const std::vector<float>& v) {
    json e{{"offset", blob.size()}, {"length", v.size()}};
    io::append_f32(blob, v);
    return e;
}

} // namespace

std::uint64_t PredictorModel::parameter_count() const {
    return hidden * (input_dim() + output_dim()) + b_in.size() + b_out.size();
}

void PredictorModel::check() const {
    require(hidden >= 1, "predictor: hidden must be >= 1");
    require(w_in.rows == hidden && w_in.data.size() == w_in.rows * w_in.cols, "predictor: w_in shape mismatch");
    require(w_out.cols == hidden && w_out.data.size() == w_out.rows * w_out.cols, "predictor: w_out shape mismatch");
    require(b_in.empty() || b_in.size() == hidden, "predictor: b_in length mismatch");
    require(b_out.empty() || b_out.size() == w_out.rows, "predictor: b_out length mismatch");
}

Confusion& Confusion::operator+=(const Confusion& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    tn += o.tn;
    return *this;
}

std::size_t initial_hidden_dim(double sparsity, std::size_t d, std::size_t /*m*/, std::size_t h_min,
                               std::size_t h_max) {
    h_min = std::max<std::size_t>(h_min, 1);
    if (h_max == 0) h_max = d / 2;
    h_max = std::max(h_max, h_min);
    sparsity = std::clamp(sparsity, 0.0, 1.0);
    const auto raw = static_cast<std::size_t>(std::ceil((1.0 - sparsity) * double(h_max)));
    return std::clamp(raw, h_min, h_max);
}

ActivationMask predict_mask(const PredictorModel& model, std::span<const float> x) {
    if (x.size() != model.input_dim()) {
        fail("predict_mask: layer " + std::to_string(model.layer) + " expects input length " +
             std::to_string(model.input_dim()) + ", got " + std::to_string(x.size()));
    }
    const double cut = decision_logit(model.threshold);
    std::vector<float> hidden;
    hidden_activations(model, x, hidden);
    ActivationMask mask;
    mask.layer = model.layer;
    for (std::size_t i = 0; i < model.output_dim(); ++i) {
        if (double(output_logit(model, i, hidden)) > cut) mask.active.push_back(static_cast<std::uint32_t>(i));
    }
    return mask;
}

Confusion confusion(const ActivationMask& predicted, const ActivationMask& truth, std::size_t m) {
    Confusion c;
    std::size_t a = 0;
    std::size_t b = 0;
    while (a < predicted.active.size() || b < truth.active.size()) {
        if (b == truth.active.size() || (a < predicted.active.size() && predicted.active[a] < truth.active[b])) {
            ++c.fp;
            ++a;
        } else if (a == predicted.active.size() || truth.active[b] < predicted.active[a]) {
            ++c.fn;
            ++b;
        } else {
            ++c.tp;
            ++a;
            ++b;
        }
    }
    c.tn = m - c.tp - c.fp - c.fn;
    return c;
}

PredictorModel train_predictor(std::span<const LayerSample> train, std::size_t d, std::size_t m, std::size_t hidden,
                               const SizingConfig& config, std::uint32_t layer) {
    require(!train.empty(), "train_predictor: empty training set");
    require(hidden >= 1, "train_predictor: hidden must be >= 1");
    Rng rng(derive_seed(config.seed, "predictor/" + std::to_string(layer) + "/" + std::to_string(hidden)));

    PredictorModel p;
    p.layer = layer;
    p.hidden = hidden;
    p.w_in = Matrix(hidden, d);
    p.w_out = Matrix(m, hidden);
    p.b_in.assign(hidden, 0.0f);
    p.b_out.assign(m, 0.0f);
    std::normal_distribution<float> init_in(0.0f, static_cast<float>(std::sqrt(2.0 / double(d))));
    std::normal_distribution<float> init_out(0.0f, static_cast<float>(std::sqrt(1.0 / double(hidden))));
    for (auto& v : p.w_in.data) v = init_in(rng);
    for (auto& v : p.w_out.data) v = init_out(rng);

    // Output biases start at each neuron's base-rate log-odds.
    std::vector<std::uint64_t> positives(m, 0);
    for (const auto& s : train) {
        for (const auto i : s.mask.active) ++positives[i];
    }
    for (std::size_t i = 0; i < m; ++i) {
        const double rate = (double(positives[i]) + 0.5) / (double(train.size()) + 1.0);
        p.b_out[i] = static_cast<float>(std::log(rate / (1.0 - rate)));
    }

    // Train on standardized features; the affine map is folded into w_in and
    // b_in afterwards so the stored model reads raw layer inputs.
    std::vector<double> mean(d, 0.0);
    std::vector<double> scale(d, 0.0);
    for (const auto& s : train) {
        for (std::size_t c = 0; c < d; ++c) mean[c] += s.x[c];
    }
    for (auto& v : mean) v /= double(train.size());
    for (const auto& s : train) {
        for (std::size_t c = 0; c < d; ++c) scale[c] += (s.x[c] - mean[c]) * (s.x[c] - mean[c]);
    }
    for (auto& v : scale) {
        v = std::sqrt(v / double(train.size()));
        v = v > 1e-12 ? 1.0 / v : 1.0;
    }
    std::vector<std::vector<float>> xs(train.size(), std::vector<float>(d));
    for (std::size_t k = 0; k < train.size(); ++k) {
        for (std::size_t c = 0; c < d; ++c) xs[k][c] = static_cast<float>((train[k].x[c] - mean[c]) * scale[c]);
    }

    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);
    std::vector<float> pre(hidden);
    std::vector<float> act(hidden);
    std::vector<float> grad_hidden(hidden);
    std::vector<float> label(m);
    const auto lr = static_cast<float>(config.learning_rate);
    const auto pos_w = static_cast<float>(config.positive_weight);
    const float hidden_scale = 1.0f / std::sqrt(float(m));
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (const auto k : order) {
            const auto& s = train[k];
            const auto& x = xs[k];
            for (std::size_t j = 0; j < hidden; ++j) {
                pre[j] = static_cast<float>(dot(p.w_in.row(j), x) + double(p.b_in[j]));
                act[j] = pre[j] > 0.0f ? pre[j] : 0.0f;
            }
            std::fill(label.begin(), label.end(), 0.0f);
            for (const auto i : s.mask.active) label[i] = 1.0f;
            std::fill(grad_hidden.begin(), grad_hidden.end(), 0.0f);
            for (std::size_t i = 0; i < m; ++i) {
                const float z = output_logit(p, i, act);
                const float prob = 1.0f / (1.0f + std::exp(-z));
                const float g = (label[i] > 0.0f ? pos_w : 1.0f) * (prob - label[i]);
                auto row = p.w_out.row(i);
                for (std::size_t j = 0; j < hidden; ++j) {
                    grad_hidden[j] += g * row[j];
                    row[j] -= lr * g * act[j];
                }
                p.b_out[i] -= lr * g;
            }
            for (std::size_t j = 0; j < hidden; ++j) {
                if (pre[j] <= 0.0f) continue;
                const float g = grad_hidden[j] * hidden_scale;
                auto row = p.w_in.row(j);
                for (std::size_t c = 0; c < d; ++c) row[c] -= lr * g * x[c];
                p.b_in[j] -= lr * g;
            }
        }
    }
    for (std::size_t j = 0; j < hidden; ++j) {
        auto row = p.w_in.row(j);
        double shift = 0.0;
        for (std::size_t c = 0; c < d; ++c) {
            const double w = double(row[c]) * scale[c];
            shift += w * mean[c];
            row[c] = static_cast<float>(w);
        }
        p.b_in[j] = static_cast<float>(double(p.b_in[j]) - shift);
    }
    return p;
}

TrainedPredictor train_adaptive(std::span<const LayerSample> samples, std::size_t d, std::size_t m, double sparsity,
                                const SizingConfig& config) {
    require(!samples.empty(), "train_adaptive: empty dataset");
    require(config.recall_target > 0.0 && config.recall_target <= 1.0, "train_adaptive: recall_target must be in (0, 1]");
    for (const auto& s : samples) {
        require(s.x.size() == d, "train_adaptive: sample input length mismatch");
        s.mask.check(m);
    }
    const std::uint32_t layer = samples.front().mask.layer;

    // Deterministic train/validation split.
    std::vector<std::size_t> order(samples.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(config.seed, "split/" + std::to_string(layer)));
    std::shuffle(order.begin(), order.end(), rng);
    auto n_val = static_cast<std::size_t>(std::llround(config.validation_fraction * double(samples.size())));
    n_val = std::clamp<std::size_t>(n_val, 1, samples.size());
    std::vector<LayerSample> validation;
    std::vector<LayerSample> train;
    for (std::size_t k = 0; k < order.size(); ++k) (k < n_val ? validation : train).push_back(samples[order[k]]);
    // A single sample serves as both sets.
    if (train.empty()) train = validation;

    const std::size_t h_min = std::max<std::size_t>(1, config.h_min);
    const std::size_t h_max = std::max(config.h_max == 0 ? d / 2 : config.h_max, h_min);

    SizingReport report;
    report.layer = layer;
    report.sparsity = sparsity;
    report.initial_hidden = initial_hidden_dim(sparsity, d, m, h_min, h_max);
    {
        std::vector<std::uint64_t> counts(m, 0);
        for (const auto& s : samples) {
            for (const auto i : s.mask.active) ++counts[i];
        }
        report.skew_gini = gini(counts);
    }

    struct Candidate {
        PredictorModel model;
        Confusion conf;
    };
    std::optional<Candidate> best_meeting;
    std::optional<Candidate> best_any;
    auto attempt = [&](std::size_t hidden) {
        ++report.iterations;
        Candidate c{train_predictor(train, d, m, hidden, config, layer), {}};
        c.conf = evaluate(c.model, validation);
        const bool meets = c.conf.recall() >= config.recall_target;
        if (meets && (!best_meeting || hidden < best_meeting->model.hidden)) best_meeting = c;
        if (!best_any || c.conf.recall() > best_any->conf.recall()) best_any = c;
        return c.conf.recall();
    };

    std::size_t hidden = report.initial_hidden;
    double recall = attempt(hidden);
    while (recall < config.recall_target && hidden < h_max && report.iterations < config.max_iterations) {
        hidden = std::min(hidden * 2, h_max);
        recall = attempt(hidden);
    }
    // Shrink once when the smallest passing size clears the target comfortably,
    // unless the half size was already tried on the way up.
    if (best_meeting && recall >= config.recall_target + config.shrink_margin && hidden > h_min &&
        hidden == report.initial_hidden && report.iterations < config.max_iterations) {
        attempt(std::max(h_min, hidden / 2));
    }

    const Candidate& chosen = best_meeting ? *best_meeting : *best_any;
    report.target_missed = !best_meeting.has_value();
    report.final_hidden = chosen.model.hidden;
    report.recall = chosen.conf.recall();
    report.precision = chosen.conf.precision();
    return {chosen.model, report};
}

double predictor_budget(std::span<const PredictorModel> predictors, const Model& model) {
    const auto total = model.parameter_count();
    if (total == 0) return 0.0;
    std::uint64_t params = 0;
    for (const auto& p : predictors) params += p.parameter_count();
    return double(params) / double(total);
}

void save_predictors(const PredictorSet& set, const std::filesystem::path& manifest) {
    std::string blob;
    json layers = json::array();
    for (std::size_t k = 0; k < set.layers.size(); ++k) {
        const auto& p = set.layers[k];
        p.check();
        json e{{"layer", p.layer}, {"hidden", p.hidden}, {"threshold", p.threshold}};
        e["w_in"] = matrix_entry(blob, p.w_in);
        if (!p.b_in.empty()) e["b_in"] = vector_entry(blob, p.b_in);
        e["w_out"] = matrix_entry(blob, p.w_out);
        if (!p.b_out.empty()) e["b_out"] = vector_entry(blob, p.b_out);
        if (k < set.reports.size()) {
            const auto& r = set.reports[k];
            e["report"] = {{"sparsity", r.sparsity},         {"initial_hidden", r.initial_hidden},
                           {"final_hidden", r.final_hidden}, {"iterations", r.iterations},
                           {"recall", r.recall},             {"precision", r.precision},
                           {"skew_gini", r.skew_gini},       {"target_missed", r.target_missed}};
        }
        layers.push_back(std::move(e));
    }
    const auto blob_file = io::blob_path(manifest);
    io::write_file(blob_file, blob);
    io::write_json(manifest, json{{"format", kPredictorFormat},
                                  {"blob", blob_file.filename().string()},
                                  {"blob_bytes", blob.size()},
                                  {"layers", std::move(layers)}});
}

PredictorSet load_predictors(const std::filesystem::path& manifest) {
    const json doc = io::read_json(manifest);
    io::check_format(doc, kPredictorFormat, manifest);
    PredictorSet set;
    try {
        const std::string blob = io::read_file(manifest.parent_path() / doc.at("blob").get<std::string>());
        require(blob.size() == doc.at("blob_bytes").get<std::size_t>(), manifest.string() + ": blob size mismatch");
        auto read_matrix = [&](const json& e) {
            Matrix mat(e.at("rows").get<std::size_t>(), e.at("cols").get<std::size_t>());
            mat.data = io::read_f32(blob, e.at("offset").get<std::size_t>(), mat.rows * mat.cols);
            return mat;
        };
        auto read_vector = [&](const json& e) {
            return io::read_f32(blob, e.at("offset").get<std::size_t>(), e.at("length").get<std::size_t>());
        };
        for (const auto& e : doc.at("layers")) {
            PredictorModel p;
            p.layer = e.at("layer").get<std::uint32_t>();
            p.hidden = e.at("hidden").get<std::size_t>();
            p.threshold = e.at("threshold").get<float>();
            p.w_in = read_matrix(e.at("w_in"));
            if (e.contains("b_in")) p.b_in = read_vector(e.at("b_in"));
            p.w_out = read_matrix(e.at("w_out"));
            if (e.contains("b_out")) p.b_out = read_vector(e.at("b_out"));
            p.check();
            if (e.contains("report")) {
                const auto& r = e.at("report");
                SizingReport rep;
                rep.layer = p.layer;
                rep.sparsity = r.at("sparsity").get<double>();
                rep.initial_hidden = r.at("initial_hidden").get<std::size_t>();
                rep.final_hidden = r.at("final_hidden").get<std::size_t>();
                rep.iterations = r.at("iterations").get<std::size_t>();
                rep.recall = r.at("recall").get<double>();
                rep.precision = r.at("precision").get<double>();
                rep.skew_gini = r.at("skew_gini").get<double>();
                rep.target_missed = r.at("target_missed").get<bool>();
                set.reports.push_back(rep);
            }
            set.layers.push_back(std::move(p));
        }
    } catch (const json::exception& e) {
        fail(manifest.string() + ": " + e.what());
    }
    return set;
}

} // namespace neursplit
