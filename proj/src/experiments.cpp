#include "pera/experiments.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>

#include "pera/analysis.hpp"

namespace pera {

std::string to_string(TaskKind kind) {
    switch (kind) {
        case TaskKind::poly_regression: return "poly_regression";
        case TaskKind::matrix_approx: return "matrix_approx";
        case TaskKind::toy_mlp_classification: return "toy_mlp_classification";
    }
    throw ConfigError("unknown task kind");
}

TaskKind task_kind_from_string(const std::string& s) {
    if (s == "poly_regression") return TaskKind::poly_regression;
    if (s == "matrix_approx") return TaskKind::matrix_approx;
    if (s == "toy_mlp_classification") return TaskKind::toy_mlp_classification;
    throw ConfigError("unknown task kind: " + s);
}

std::string format_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

namespace {

Matrix gaussian_matrix(std::mt19937_64& rng, Index rows, Index cols, double std_dev) {
    std::normal_distribution<double> gauss(0.0, std_dev);
    Matrix m(rows, cols);
    for (Index i = 0; i < rows; ++i)
        for (Index j = 0; j < cols; ++j) m(i, j) = gauss(rng);
    return m;
}

void check_frozen_safety(const PeraAdapter& adapter) {
    for (int k = 0; k < adapter.coeff.size(); ++k)
        if (adapter.coeff.frozen[static_cast<std::size_t>(k)] && adapter.coeff.h(k) != 0.0)
            throw std::logic_error("frozen coefficient drifted away from zero");
}

int variant_rank_bound(Variant variant, int r) {
    switch (variant) {
        case Variant::lora: return r;
        case Variant::square_only: return 2 * r;
        case Variant::cross_only: return r + PairOrder::cross_count_for(r);
        case Variant::full: return PairOrder::expanded_dim_for(r);
    }
    throw ConfigError("unknown variant tag");
}

/// Adapter path only: scale * B_hat (A_hat x).
Matrix adapter_path(const PeraAdapter& adapter, const Matrix& x) {
    return adapter.scale() * (expand_b(adapter.b) * (expand_a(adapter.a, adapter.coeff) * x));
}

}  // namespace

Task make_task(TaskKind kind, const TaskParams& params, std::uint64_t seed) {
    Task task;
    task.kind = kind;
    task.params = params;
    task.seed = seed;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);

    switch (kind) {
        case TaskKind::poly_regression: {
            if (params.samples < 1) throw ConfigError("poly_regression: samples must be >= 1");
            task.cubic_coeffs = Vector(4);
            for (int k = 0; k < 4; ++k) task.cubic_coeffs(k) = gauss(rng);
            // keep the cubic term bounded away from zero
            double& c3 = task.cubic_coeffs(3);
            c3 += std::copysign(0.5, c3 == 0.0 ? 1.0 : c3);
            task.inputs = Vector(params.samples);
            task.targets = Vector(params.samples);
            task.phi = Matrix(2, params.samples);
            task.psi = Matrix(2, params.samples);
            for (int i = 0; i < params.samples; ++i) {
                const double x = unit(rng);
                const double y = task.cubic_coeffs(0) + task.cubic_coeffs(1) * x +
                                 task.cubic_coeffs(2) * x * x + task.cubic_coeffs(3) * x * x * x +
                                 params.noise_std * gauss(rng);
                task.inputs(i) = x;
                task.targets(i) = y;
                task.phi(0, i) = 1.0;
                task.phi(1, i) = x * x;
                task.psi(0, i) = 1.0;
                task.psi(1, i) = x;
            }
            break;
        }
        case TaskKind::matrix_approx: {
            if (params.m < 1 || params.n < 1 || params.target_rank < 0)
                throw ConfigError("matrix_approx: bad dimensions");
            task.target = Matrix::Zero(params.m, params.n);
            for (int k = 0; k < params.target_rank; ++k) {
                const Matrix u = gaussian_matrix(rng, params.m, 1, 1.0);
                const Matrix v = gaussian_matrix(rng, params.n, 1, 1.0);
                task.target += u * v.transpose();
            }
            break;
        }
        case TaskKind::toy_mlp_classification: {
            if (params.input_dim < 1 || params.hidden_dim < 1 || params.classes < 2 ||
                params.samples < params.classes)
                throw ConfigError("toy_mlp_classification: bad dimensions");
            Matrix centers = 2.5 * gaussian_matrix(rng, params.input_dim, params.classes, 1.0);
            auto draw_set = [&](int count, Matrix& x, std::vector<int>& y) {
                x = Matrix(params.input_dim, count);
                y.resize(static_cast<std::size_t>(count));
                for (int i = 0; i < count; ++i) {
                    const int cls = i % params.classes;
                    y[static_cast<std::size_t>(i)] = cls;
                    for (int d = 0; d < params.input_dim; ++d)
                        x(d, i) = centers(d, cls) + gauss(rng);
                }
            };
            draw_set(params.samples, task.train_x, task.train_y);
            draw_set(std::max(params.classes, params.samples / 4), task.test_x, task.test_y);
            task.mlp_w1 = gaussian_matrix(rng, params.hidden_dim, params.input_dim,
                                          1.0 / std::sqrt(static_cast<double>(params.input_dim)));
            task.mlp_w2 = gaussian_matrix(rng, params.classes, params.hidden_dim,
                                          1.0 / std::sqrt(static_cast<double>(params.hidden_dim)));
            break;
        }
    }
    return task;
}

AdamState::AdamState(const PeraAdapter& adapter) {
    m_b_ = Matrix::Zero(adapter.b.rows(), adapter.b.cols());
    v_b_ = m_b_;
    m_a_ = Matrix::Zero(adapter.a.rows(), adapter.a.cols());
    v_a_ = m_a_;
    for (int k = 0; k < adapter.coeff.size(); ++k)
        if (!adapter.coeff.frozen[static_cast<std::size_t>(k)]) live_h_.push_back(k);
    m_h_ = Vector::Zero(static_cast<Index>(live_h_.size()));
    v_h_ = m_h_;
}

void AdamState::step(PeraAdapter& adapter, const AdapterGrads& grads,
                     const OptimizerConfig& opt) {
    ++t_;
    double lr = opt.learning_rate;
    if (opt.warmup_steps > 0)
        lr *= std::min(1.0, static_cast<double>(t_) / opt.warmup_steps);
    const double bias1 = 1.0 - std::pow(opt.beta1, static_cast<double>(t_));
    const double bias2 = 1.0 - std::pow(opt.beta2, static_cast<double>(t_));

    auto update = [&](double& param, double grad, double& m, double& v) {
        m = opt.beta1 * m + (1.0 - opt.beta1) * grad;
        v = opt.beta2 * v + (1.0 - opt.beta2) * grad * grad;
        const double m_hat = m / bias1;
        const double v_hat = v / bias2;
        param -= lr * (m_hat / (std::sqrt(v_hat) + opt.epsilon) + opt.weight_decay * param);
    };

    for (Index i = 0; i < adapter.b.size(); ++i)
        update(adapter.b.data()[i], grads.d_b.data()[i], m_b_.data()[i], v_b_.data()[i]);
    for (Index i = 0; i < adapter.a.size(); ++i)
        update(adapter.a.data()[i], grads.d_a.data()[i], m_a_.data()[i], v_a_.data()[i]);
    for (std::size_t s = 0; s < live_h_.size(); ++s) {
        const int k = live_h_[s];
        update(adapter.coeff.h(k), grads.d_h(k), m_h_(static_cast<Index>(s)),
               v_h_(static_cast<Index>(s)));
    }
}

namespace {

RunRecord train_poly(PeraAdapter& adapter, const Task& task, const OptimizerConfig& opt) {
    const int batch = static_cast<int>(task.inputs.size());
    const Matrix w0 = Matrix::Zero(2, 2);
    AdamState state(adapter);
    RunRecord record;
    record.loss.reserve(static_cast<std::size_t>(opt.steps));

    auto loss_and_resid = [&](Eigen::RowVectorXd& resid) {
        const Matrix out = forward(adapter, w0, task.phi);
        const Eigen::RowVectorXd f = (task.psi.cwiseProduct(out)).colwise().sum();
        resid = f - task.targets.transpose();
        return resid.squaredNorm() / batch;
    };

    Eigen::RowVectorXd resid;
    for (int step = 0; step < opt.steps; ++step) {
        const double loss = loss_and_resid(resid);
        if (!std::isfinite(loss)) throw DivergenceError(step);
        record.loss.push_back(loss);
        const Matrix upstream =
            task.psi.array().rowwise() * ((2.0 / batch) * resid).array();
        const AdapterGrads grads = backward(adapter, w0, task.phi, upstream);
        state.step(adapter, grads, opt);
        if (step % 100 == 0) check_frozen_safety(adapter);
    }
    check_frozen_safety(adapter);
    record.final_loss = loss_and_resid(resid);
    return record;
}

RunRecord train_matrix(PeraAdapter& adapter, const Task& task, const OptimizerConfig& opt) {
    const Index m = task.target.rows();
    const Index n = task.target.cols();
    const Matrix w0 = Matrix::Zero(m, n);
    const Matrix identity = Matrix::Identity(n, n);
    const double denom = static_cast<double>(m * n);
    AdamState state(adapter);
    RunRecord record;
    record.loss.reserve(static_cast<std::size_t>(opt.steps));

    for (int step = 0; step < opt.steps; ++step) {
        const Matrix residual = compose(adapter) - task.target;
        const double loss = residual.squaredNorm() / denom;
        if (!std::isfinite(loss)) throw DivergenceError(step);
        record.loss.push_back(loss);
        const AdapterGrads grads = backward(adapter, w0, identity, (2.0 / denom) * residual);
        state.step(adapter, grads, opt);
        if (step % 100 == 0) check_frozen_safety(adapter);
    }
    check_frozen_safety(adapter);

    const Matrix residual = compose(adapter) - task.target;
    record.final_loss = residual.squaredNorm() / denom;
    record.final_frobenius_error = residual.norm();
    record.final_spectral_error =
        residual.isZero(0.0) ? 0.0 : svd(residual).singular_values(0);

    // No update of the variant's rank class may beat its Eckart-Young floor.
    const int bound = std::min<int>(variant_rank_bound(adapter.config.variant, adapter.config.r),
                                    static_cast<int>(std::min(m, n)));
    const Vector target_sv = svd(task.target).singular_values;
    const double floor = bound < target_sv.size() ? target_sv(bound) : 0.0;
    if (record.final_spectral_error < floor - 1e-8)
        throw std::logic_error("matrix_approx run beat its Eckart-Young floor");
    return record;
}

}  // namespace

RunRecord train(PeraAdapter& adapter, const Task& task, const OptimizerConfig& opt) {
    const auto start = std::chrono::steady_clock::now();
    RunRecord record;
    switch (task.kind) {
        case TaskKind::poly_regression:
            record = train_poly(adapter, task, opt);
            break;
        case TaskKind::matrix_approx:
            record = train_matrix(adapter, task, opt);
            break;
        case TaskKind::toy_mlp_classification:
            throw ConfigError("train: toy MLP task requires a ToyModel");
    }
    record.kind = task.kind;
    record.adapter_config = adapter.config;
    record.opt = opt;
    record.seed = task.seed;
    record.best_loss = record.final_loss;
    for (double l : record.loss) record.best_loss = std::min(record.best_loss, l);
    record.delta_w_rank = numeric_rank(compose(adapter), 1e-10);
    record.params = param_count(adapter.config, adapter.m(), adapter.n());
    record.wall_time_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return record;
}

ToyModel init_toy_model(const Task& task, const AdapterConfig& config) {
    if (task.kind != TaskKind::toy_mlp_classification)
        throw ConfigError("init_toy_model: wrong task kind");
    ToyModel model;
    model.w1 = task.mlp_w1;
    model.w2 = task.mlp_w2;
    AdapterConfig c1 = config;
    c1.seed = config.seed * 2 + 1;
    AdapterConfig c2 = config;
    c2.seed = config.seed * 2 + 2;
    model.adapter1 = init_adapter(c1, model.w1.rows(), model.w1.cols());
    model.adapter2 = init_adapter(c2, model.w2.rows(), model.w2.cols());
    return model;
}

RunRecord train(ToyModel& model, const Task& task, const OptimizerConfig& opt) {
    if (task.kind != TaskKind::toy_mlp_classification)
        throw ConfigError("train: ToyModel requires the toy MLP task");
    const auto start = std::chrono::steady_clock::now();
    const int total = static_cast<int>(task.train_x.cols());
    const int batch = std::min(opt.batch_size, total);
    const int classes = static_cast<int>(model.w2.rows());
    const double drop = model.adapter1.config.dropout;

    std::mt19937_64 rng(task.seed ^ 0x9e3779b97f4a7c15ULL);
    std::vector<int> perm(static_cast<std::size_t>(total));
    std::iota(perm.begin(), perm.end(), 0);
    std::bernoulli_distribution keep(1.0 - drop);

    auto dropout_mask = [&](Index rows, Index cols) {
        Matrix mask = Matrix::Ones(rows, cols);
        if (drop > 0.0)
            for (Index i = 0; i < rows; ++i)
                for (Index j = 0; j < cols; ++j)
                    mask(i, j) = keep(rng) ? 1.0 / (1.0 - drop) : 0.0;
        return mask;
    };

    auto ce_loss = [&](const Matrix& logits, const std::vector<int>& labels, int offset,
                       int count) {
        double loss = 0.0;
        for (int i = 0; i < count; ++i) {
            const Vector col = logits.col(i);
            const double mx = col.maxCoeff();
            const double lse = mx + std::log((col.array() - mx).exp().sum());
            loss += lse - col(labels[static_cast<std::size_t>(offset + i)]);
        }
        return loss / count;
    };

    AdamState state1(model.adapter1);
    AdamState state2(model.adapter2);
    RunRecord record;
    record.loss.reserve(static_cast<std::size_t>(opt.steps));
    int cursor = total;  // trigger shuffle on first step

    for (int step = 0; step < opt.steps; ++step) {
        if (cursor + batch > total) {
            std::shuffle(perm.begin(), perm.end(), rng);
            cursor = 0;
        }
        Matrix xb(task.train_x.rows(), batch);
        std::vector<int> yb(static_cast<std::size_t>(batch));
        for (int i = 0; i < batch; ++i) {
            xb.col(i) = task.train_x.col(perm[static_cast<std::size_t>(cursor + i)]);
            yb[static_cast<std::size_t>(i)] =
                task.train_y[static_cast<std::size_t>(perm[static_cast<std::size_t>(cursor + i)])];
        }
        cursor += batch;

        const Matrix mask1 = dropout_mask(xb.rows(), xb.cols());
        const Matrix x1 = xb.cwiseProduct(mask1);
        const Matrix z1 = model.w1 * xb + adapter_path(model.adapter1, x1);
        const Matrix hidden = z1.array().tanh();
        const Matrix mask2 = dropout_mask(hidden.rows(), hidden.cols());
        const Matrix h2 = hidden.cwiseProduct(mask2);
        const Matrix logits = model.w2 * hidden + adapter_path(model.adapter2, h2);

        const double loss = ce_loss(logits, yb, 0, batch);
        if (!std::isfinite(loss)) throw DivergenceError(step);
        record.loss.push_back(loss);

        Matrix dlogits(classes, batch);
        for (int i = 0; i < batch; ++i) {
            const Vector col = logits.col(i);
            const double mx = col.maxCoeff();
            Vector p = (col.array() - mx).exp();
            p /= p.sum();
            p(yb[static_cast<std::size_t>(i)]) -= 1.0;
            dlogits.col(i) = p / batch;
        }

        const AdapterGrads g2 = backward(model.adapter2, model.w2, h2, dlogits);
        const Matrix delta2 = compose(model.adapter2);
        const Matrix dh = model.w2.transpose() * dlogits +
                          mask2.cwiseProduct(delta2.transpose() * dlogits);
        const Matrix dz1 = dh.cwiseProduct(Matrix::Ones(dh.rows(), dh.cols()) -
                                           hidden.cwiseProduct(hidden));
        const AdapterGrads g1 = backward(model.adapter1, model.w1, x1, dz1);

        state2.step(model.adapter2, g2, opt);
        state1.step(model.adapter1, g1, opt);
        if (step % 100 == 0) {
            check_frozen_safety(model.adapter1);
            check_frozen_safety(model.adapter2);
        }
    }
    check_frozen_safety(model.adapter1);
    check_frozen_safety(model.adapter2);

    auto eval = [&](const Matrix& x, const std::vector<int>& y, double* accuracy) {
        const Matrix z1 = model.w1 * x + adapter_path(model.adapter1, x);
        const Matrix hidden = z1.array().tanh();
        const Matrix logits = model.w2 * hidden + adapter_path(model.adapter2, hidden);
        if (accuracy) {
            int correct = 0;
            for (Index i = 0; i < logits.cols(); ++i) {
                Index arg = 0;
                logits.col(i).maxCoeff(&arg);
                if (arg == y[static_cast<std::size_t>(i)]) ++correct;
            }
            *accuracy = static_cast<double>(correct) / static_cast<double>(logits.cols());
        }
        return ce_loss(logits, y, 0, static_cast<int>(x.cols()));
    };

    record.final_loss = eval(task.train_x, task.train_y, nullptr);
    eval(task.test_x, task.test_y, &record.test_accuracy);
    record.best_loss = record.final_loss;
    for (double l : record.loss) record.best_loss = std::min(record.best_loss, l);
    record.kind = task.kind;
    record.adapter_config = model.adapter1.config;
    record.opt = opt;
    record.seed = task.seed;
    record.delta_w_rank = numeric_rank(compose(model.adapter1), 1e-10);
    const ParamCount p1 = param_count(model.adapter1.config, model.adapter1.m(), model.adapter1.n());
    const ParamCount p2 = param_count(model.adapter2.config, model.adapter2.m(), model.adapter2.n());
    record.params = ParamCount{p1.trainable + p2.trainable, p1.total + p2.total};
    record.wall_time_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return record;
}

std::function<double(const Vector&)> toy_model_logit(const ToyModel& model, int class_index) {
    if (class_index < 0 || class_index >= model.w2.rows())
        throw ConfigError("toy_model_logit: class index out of range");
    const Matrix w1m = merge(model.adapter1, model.w1);
    const Matrix w2m = merge(model.adapter2, model.w2);
    return [w1m, w2m, class_index](const Vector& x) {
        const Vector hidden = (w1m * x).array().tanh();
        return (w2m * hidden)(class_index);
    };
}

AblationResult ablation_suite(TaskKind kind, const TaskParams& params, int r,
                              const std::vector<std::uint64_t>& seeds,
                              const OptimizerConfig& opt) {
    if (seeds.size() < 3) throw ConfigError("ablation_suite: at least 3 seeds required");
    AblationResult result;
    result.variants = {Variant::lora, Variant::square_only, Variant::cross_only, Variant::full};
    for (std::uint64_t seed : seeds) {
        const Task task = make_task(kind, params, seed);
        for (Variant variant : result.variants) {
            AdapterConfig config;
            config.r = r;
            config.variant = variant;
            config.seed = seed;
            double final_loss;
            if (kind == TaskKind::toy_mlp_classification) {
                ToyModel model = init_toy_model(task, config);
                final_loss = train(model, task, opt).final_loss;
            } else {
                const Index m = kind == TaskKind::matrix_approx ? params.m : 2;
                const Index n = kind == TaskKind::matrix_approx ? params.n : 2;
                PeraAdapter adapter = init_adapter(config, m, n);
                final_loss = train(adapter, task, opt).final_loss;
            }
            result.cells.push_back({variant, seed, final_loss});
        }
    }
    for (Variant variant : result.variants) {
        std::vector<double> losses;
        for (const AblationCell& cell : result.cells)
            if (cell.variant == variant) losses.push_back(cell.final_loss);
        const double mean =
            std::accumulate(losses.begin(), losses.end(), 0.0) / losses.size();
        double var = 0.0;
        for (double l : losses) var += (l - mean) * (l - mean);
        var = losses.size() > 1 ? var / (losses.size() - 1) : 0.0;
        std::sort(losses.begin(), losses.end());
        const std::size_t mid = losses.size() / 2;
        const double median = losses.size() % 2 == 1
                                  ? losses[mid]
                                  : 0.5 * (losses[mid - 1] + losses[mid]);
        result.mean_loss.push_back(mean);
        result.stddev_loss.push_back(std::sqrt(var));
        result.median_loss.push_back(median);
    }
    return result;
}

std::string run_record_csv(const RunRecord& record) {
    std::string out = "step,loss\n";
    for (std::size_t i = 0; i < record.loss.size(); ++i)
        out += std::to_string(i) + "," + format_double(record.loss[i]) + "\n";
    return out;
}

std::string ablation_csv(const AblationResult& result) {
    std::string out = "variant,seed,final_loss\n";
    for (const AblationCell& cell : result.cells)
        out += to_string(cell.variant) + "," + std::to_string(cell.seed) + "," +
               format_double(cell.final_loss) + "\n";
    return out;
}

}  // namespace pera
