#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "pera/adapter.hpp"
#include "pera/types.hpp"

namespace pera {

enum class TaskKind { poly_regression, matrix_approx, toy_mlp_classification };

std::string to_string(TaskKind kind);
TaskKind task_kind_from_string(const std::string& s);

struct TaskParams {
    int samples = 256;        // dataset size (poly / toy train set)
    double noise_std = 0.01;  // poly target noise

    int m = 32;               // matrix_approx target rows
    int n = 32;               // matrix_approx target cols
    int target_rank = 12;     // matrix_approx rank of E_bar

    int input_dim = 8;        // toy MLP
    int hidden_dim = 16;
    int classes = 3;
};

/// A fully materialized desk-scale task; dataset is a pure function of
/// (kind, params, seed).
struct Task {
    TaskKind kind;
    TaskParams params;
    std::uint64_t seed = 0;

    // poly_regression: y = c0 + c1 x + c2 x^2 + c3 x^3 + noise, fitted by
    // a bilinear readout psi(x)^T (W0 + dW) phi(x) with psi = (1, x),
    // phi = (1, x^2) and W0 = 0, so a rank-1 update cannot represent a
    // generic cubic while the rank-2 expanded update can.
    Vector inputs;
    Vector targets;
    Vector cubic_coeffs;
    Matrix phi;  // 2 x samples, rows (1, x^2)
    Matrix psi;  // 2 x samples, rows (1, x)

    // matrix_approx: E_bar = sum of target_rank seeded rank-one terms.
    Matrix target;

    // toy_mlp_classification: frozen base weights and Gaussian-blob data.
    Matrix mlp_w1;  // hidden x input
    Matrix mlp_w2;  // classes x hidden
    Matrix train_x;
    std::vector<int> train_y;
    Matrix test_x;
    std::vector<int> test_y;
};

Task make_task(TaskKind kind, const TaskParams& params, std::uint64_t seed);

struct OptimizerConfig {
    double learning_rate = 1e-3;  // full-scale preset is 1e-4
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double weight_decay = 0.0;
    int steps = 2000;
    int batch_size = 16;  // used by the classification task only
    int warmup_steps = 0;
};

struct RunRecord {
    TaskKind kind;
    AdapterConfig adapter_config;
    OptimizerConfig opt;
    std::uint64_t seed = 0;

    std::vector<double> loss;  // one entry per executed step, pre-update
    double final_loss = 0.0;
    double best_loss = 0.0;
    double final_frobenius_error = -1.0;  // matrix_approx only
    double final_spectral_error = -1.0;   // matrix_approx only
    double test_accuracy = -1.0;          // toy MLP only
    int delta_w_rank = 0;
    ParamCount params{0, 0};
    double wall_time_seconds = 0.0;
};

/// Adaptive-moment (AdamW) update over one adapter's trainable parameters.
/// Optimizer state for frozen h entries is never allocated.
class AdamState {
public:
    explicit AdamState(const PeraAdapter& adapter);
    void step(PeraAdapter& adapter, const AdapterGrads& grads, const OptimizerConfig& opt);

private:
    Matrix m_b_, v_b_, m_a_, v_a_;
    std::vector<int> live_h_;
    Vector m_h_, v_h_;
    long t_ = 0;
};

RunRecord train(PeraAdapter& adapter, const Task& task, const OptimizerConfig& opt);

struct ToyModel {
    Matrix w1;
    Matrix w2;
    PeraAdapter adapter1;
    PeraAdapter adapter2;
};

ToyModel init_toy_model(const Task& task, const AdapterConfig& config);
RunRecord train(ToyModel& model, const Task& task, const OptimizerConfig& opt);

/// Class-0 logit of the merged model as a function of the input vector;
/// the probe function for interaction-strength analysis.
std::function<double(const Vector&)> toy_model_logit(const ToyModel& model, int class_index = 0);

std::string serialize_toy_model(const ToyModel& model);
ToyModel deserialize_toy_model(const std::string& payload);

struct AblationCell {
    Variant variant;
    std::uint64_t seed;
    double final_loss;
};

struct AblationResult {
    std::vector<AblationCell> cells;
    std::vector<Variant> variants;
    std::vector<double> mean_loss;    // per variant
    std::vector<double> stddev_loss;  // per variant
    std::vector<double> median_loss;  // per variant
};

AblationResult ablation_suite(TaskKind kind, const TaskParams& params, int r,
                              const std::vector<std::uint64_t>& seeds,
                              const OptimizerConfig& opt);

std::string format_double(double v);  // shortest round-trip decimal
std::string run_record_csv(const RunRecord& record);
std::string run_record_summary(const RunRecord& record);
std::string ablation_csv(const AblationResult& result);

}  // namespace pera
