#include "neursplit/workload.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "neursplit/error.hpp"

namespace neursplit {

namespace {

Matrix gaussian(std::size_t rows, std::size_t cols, double stddev, Rng& rng) {
    std::normal_distribution<float> dist(0.0f, static_cast<float>(stddev));
    Matrix mat(rows, cols);
    for (auto& v : mat.data) v = dist(rng);
    return mat;
}

// rows x cols matrix of rank `rank` with unit-variance entries in expectation.
Matrix low_rank(std::size_t rows, std::size_t cols, std::size_t rank, Rng& rng) {
    if (rank == 0 || rank >= std::min(rows, cols)) return gaussian(rows, cols, 1.0 / std::sqrt(double(cols)), rng);
    const Matrix left = gaussian(rows, rank, 1.0, rng);
    const Matrix right = gaussian(rank, cols, 1.0 / std::sqrt(double(cols * rank)), rng);
    Matrix out(rows, cols);
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t k = 0; k < rank; ++k) {
            const float a = left(r, k);
            for (std::size_t c = 0; c < cols; ++c) out(r, c) += a * right(k, c);
        }
    }
    return out;
}

// Bias placing the decision boundary between the c-th and (c+1)-th largest
// pre-activation, so exactly c of the calibration inputs fire.
float calibrate_bias(std::vector<double> pre, std::size_t target) {
    std::sort(pre.begin(), pre.end(), std::greater<>());
    const std::size_t n = pre.size();
    if (target == 0) return static_cast<float>(-(pre.front() + 1.0 + std::abs(pre.front())));
    if (target >= n) return static_cast<float>(-pre.back() + 1.0 + std::abs(pre.back()));
    const double hi = pre[target - 1];
    const double lo = pre[target];
    auto bias = static_cast<float>(-(hi + lo) / 2.0);
    // Rounding the midpoint to float can land on or below -hi.
    while (!(hi + double(bias) > 0.0)) bias = std::nextafter(bias, std::numeric_limits<float>::infinity());
    return bias;
}

} // namespace

std::vector<double> zipf_frequencies(std::size_t m, double s, double mean_active) {
    require(m >= 1, "zipf_frequencies: m must be >= 1");
    require(s >= 0.0, "zipf_frequencies: exponent must be >= 0");
    mean_active = std::clamp(mean_active, 0.0, 1.0);
    const double target = mean_active * double(m);
    std::vector<double> base(m);
    for (std::size_t r = 0; r < m; ++r) base[r] = std::pow(double(r + 1), -s);
    auto mass = [&](double c) {
        double total = 0.0;
        for (const double b : base) total += std::min(1.0, c * b);
        return total;
    };
    std::vector<double> p(m, mean_active);
    if (target <= 0.0 || target >= double(m)) return p;
    double lo = 0.0;
    double hi = 1.0;
    while (mass(hi) < target) hi *= 2.0;
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        (mass(mid) < target ? lo : hi) = mid;
    }
    for (std::size_t r = 0; r < m; ++r) p[r] = std::min(1.0, hi * base[r]);
    return p;
}

std::vector<std::vector<float>> sample_inputs(std::size_t dim, std::size_t count, Rng& rng) {
    std::normal_distribution<float> dist(0.0f, 1.0f);
    std::vector<std::vector<float>> out(count, std::vector<float>(dim));
    for (auto& x : out) {
        for (auto& v : x) v = dist(rng);
    }
    return out;
}

Workload generate_workload(const WorkloadSpec& spec) {
    ModelConfig config{spec.num_layers, spec.hidden_dim, spec.intermediate_dim, spec.activation};
    config.check();
    require(spec.sparsity >= 0.0 && spec.sparsity <= 1.0, "sparsity must be in [0, 1]");
    require(spec.zipf_s >= 0.0, "zipf exponent must be >= 0");
    require(spec.num_inputs >= 1, "num_inputs must be >= 1");

    Rng rng(spec.seed);
    Workload out;
    out.model.config = config;
    out.inputs = sample_inputs(spec.hidden_dim, spec.num_inputs, rng);

    const std::size_t m = spec.intermediate_dim;
    const std::size_t d = spec.hidden_dim;
    const auto by_rank = zipf_frequencies(m, spec.zipf_s, 1.0 - spec.sparsity);
    const double expected_active = std::max(1.0, (1.0 - spec.sparsity) * double(m));

    std::vector<std::vector<float>> layer_in = out.inputs;
    for (std::size_t l = 0; l < spec.num_layers; ++l) {
        // Hot neurons are scattered over the index range, as in trained models.
        std::vector<std::size_t> perm(m);
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin(), perm.end(), rng);
        std::vector<double> freq(m);
        for (std::size_t r = 0; r < m; ++r) freq[perm[r]] = by_rank[r];

        LayerWeights w;
        const bool gated = spec.activation == ActivationKind::ReGLU;
        Matrix decider = low_rank(m, d, spec.rank, rng);
        if (gated) {
            w.gate = std::move(decider);
            w.fc1 = gaussian(m, d, 1.0 / std::sqrt(double(d)), rng);
        } else {
            w.fc1 = std::move(decider);
        }
        w.fc2 = gaussian(d, m, 1.0 / std::sqrt(expected_active), rng);

        const Matrix& mask_rows = gated ? w.gate : w.fc1;
        std::vector<float> bias(m);
        std::vector<double> pre(layer_in.size());
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t k = 0; k < layer_in.size(); ++k) pre[k] = dot(mask_rows.row(i), layer_in[k]);
            const auto target = static_cast<std::size_t>(std::llround(freq[i] * double(layer_in.size())));
            bias[i] = calibrate_bias(pre, target);
        }
        (gated ? w.gate_bias : w.fc1_bias) = std::move(bias);

        for (auto& x : layer_in) x = dense_mlp_forward(w, x, static_cast<std::uint32_t>(l)).y;
        out.target_frequency.insert(out.target_frequency.end(), freq.begin(), freq.end());
        out.model.layers.push_back(std::move(w));
    }
    out.model.check();
    return out;
}

Model random_model(const ModelConfig& config, Rng& rng, bool with_bias) {
    config.check();
    Model model;
    model.config = config;
    const std::size_t d = config.hidden_dim;
    const std::size_t m = config.intermediate_dim;
    std::normal_distribution<float> bias_dist(0.0f, 0.1f);
    for (std::size_t l = 0; l < config.num_layers; ++l) {
        LayerWeights w;
        w.fc1 = gaussian(m, d, 1.0 / std::sqrt(double(d)), rng);
        w.fc2 = gaussian(d, m, 2.0 / std::sqrt(double(m)), rng);
        if (config.activation == ActivationKind::ReGLU) w.gate = gaussian(m, d, 1.0 / std::sqrt(double(d)), rng);
        if (with_bias) {
            w.fc1_bias.resize(m);
            for (auto& b : w.fc1_bias) b = bias_dist(rng);
            if (w.gated()) {
                w.gate_bias.resize(m);
                for (auto& b : w.gate_bias) b = bias_dist(rng);
            }
        }
        model.layers.push_back(std::move(w));
    }
    return model;
}

} // namespace neursplit
