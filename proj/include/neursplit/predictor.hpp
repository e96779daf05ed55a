#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "neursplit/profiler.hpp"
#include "neursplit/tensor.hpp"

namespace neursplit {

// Single-hidden-layer mask predictor for one layer:
//   logit = w_out * relu(w_in * x + b_in) + b_out,  active iff sigmoid(logit) > threshold.
// Bias vectors may be empty (absent).
struct PredictorModel {
    std::uint32_t layer = 0;
    std::size_t hidden = 0;
    Matrix w_in;  // hidden x d
    std::vector<float> b_in;
    Matrix w_out; // m x hidden
    std::vector<float> b_out;
    float threshold = 0.5f;

    std::size_t input_dim() const { return w_in.cols; }
    std::size_t output_dim() const { return w_out.rows; }
    // hidden * (d + m) plus any biases.
    std::uint64_t parameter_count() const;
    std::uint64_t bytes() const { return parameter_count() * sizeof(float); }
    void check() const;
};

struct SizingConfig {
    std::size_t h_min = 4;
    std::size_t h_max = 0; // 0 = d / 2
    double recall_target = 0.95;
    double shrink_margin = 0.02; // try one halving when recall exceeds the target by this much
    std::size_t max_iterations = 6;
    std::size_t epochs = 40;
    double learning_rate = 0.005;
    double positive_weight = 8.0; // logistic-loss weight on active labels
    double validation_fraction = 0.2;
    std::uint64_t seed = 7;
};

struct SizingReport {
    std::uint32_t layer = 0;
    double sparsity = 0.0;
    std::size_t initial_hidden = 0;
    std::size_t final_hidden = 0;
    std::size_t iterations = 0;
    double recall = 0.0;
    double precision = 0.0;
    double skew_gini = 0.0;
    bool target_missed = false;
};

struct TrainedPredictor {
    PredictorModel model;
    SizingReport report;
};

struct Confusion {
    std::uint64_t tp = 0;
    std::uint64_t fp = 0;
    std::uint64_t fn = 0;
    std::uint64_t tn = 0;

    double recall() const { return tp + fn == 0 ? 1.0 : double(tp) / double(tp + fn); }
    double precision() const { return tp + fp == 0 ? 1.0 : double(tp) / double(tp + fp); }
    Confusion& operator+=(const Confusion& o);
};

// clamp(ceil((1 - sparsity) * h_max), h_min, h_max), h_max defaulting to d / 2.
std::size_t initial_hidden_dim(double sparsity, std::size_t d, std::size_t m, std::size_t h_min = 4,
                               std::size_t h_max = 0);

ActivationMask predict_mask(const PredictorModel& model, std::span<const float> x);

Confusion confusion(const ActivationMask& predicted, const ActivationMask& truth, std::size_t m);

// Trains one fixed-size predictor with plain SGD on per-neuron logistic loss.
PredictorModel train_predictor(std::span<const LayerSample> train, std::size_t d, std::size_t m, std::size_t hidden,
                               const SizingConfig& config, std::uint32_t layer);

// Iterative sizing: start at initial_hidden_dim, double until validation recall
// meets the target, optionally halve once when it is exceeded by a margin.
TrainedPredictor train_adaptive(std::span<const LayerSample> samples, std::size_t d, std::size_t m, double sparsity,
                                const SizingConfig& config = {});

// Total predictor parameters / total model parameters.
double predictor_budget(std::span<const PredictorModel> predictors, const Model& model);

struct PredictorSet {
    std::vector<PredictorModel> layers;
    std::vector<SizingReport> reports;
};

void save_predictors(const PredictorSet& set, const std::filesystem::path& manifest);
PredictorSet load_predictors(const std::filesystem::path& manifest);

} // namespace neursplit
