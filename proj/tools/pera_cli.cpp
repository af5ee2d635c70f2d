#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>
#include <string>

#include "pera/analysis.hpp"
#include "pera/experiments.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace pera;

namespace {

struct Options {
    std::uint64_t seed = 1;
    std::string out = "out";
    std::string config_path;

    int r = 4;
    std::string variant = "full";
    double alpha = 0.0;
    std::string scaling_mode = "alpha_over_r";
    double dropout = 0.0;
    double init_std = 0.0;

    double lr = 1e-3;
    int steps = 2000;
    int batch_size = 16;
    int warmup_steps = 0;
    double weight_decay = 0.0;

    int m = 32;
    int n = 32;
    int target_rank = 12;
    int samples = 256;
    double noise_std = 0.01;
    int input_dim = 8;
    int hidden_dim = 16;
    int classes = 3;

    std::string task = "matrix_approx";
    std::string model_path;
    int probe_samples = 64;
    double probe_step = 1e-3;
    int class_index = 0;
    int num_seeds = 5;
};

void apply_config(Options& opt, const json& cfg) {
    auto get = [&cfg](const char* key, auto& target) {
        if (cfg.contains(key)) target = cfg.at(key).get<std::decay_t<decltype(target)>>();
    };
    get("seed", opt.seed);
    get("out", opt.out);
    get("r", opt.r);
    get("variant", opt.variant);
    get("alpha", opt.alpha);
    get("scaling_mode", opt.scaling_mode);
    get("dropout", opt.dropout);
    get("init_std", opt.init_std);
    get("lr", opt.lr);
    get("steps", opt.steps);
    get("batch_size", opt.batch_size);
    get("warmup_steps", opt.warmup_steps);
    get("weight_decay", opt.weight_decay);
    get("m", opt.m);
    get("n", opt.n);
    get("target_rank", opt.target_rank);
    get("samples", opt.samples);
    get("noise_std", opt.noise_std);
    get("input_dim", opt.input_dim);
    get("hidden_dim", opt.hidden_dim);
    get("classes", opt.classes);
    get("task", opt.task);
    get("model", opt.model_path);
    get("probe_samples", opt.probe_samples);
    get("probe_step", opt.probe_step);
    get("class_index", opt.class_index);
    get("num_seeds", opt.num_seeds);
}

AdapterConfig adapter_config(const Options& opt) {
    AdapterConfig config;
    config.r = opt.r;
    config.variant = variant_from_string(opt.variant);
    config.alpha = opt.alpha;
    config.scaling_mode = scaling_mode_from_string(opt.scaling_mode);
    config.dropout = opt.dropout;
    config.init_std = opt.init_std;
    config.seed = opt.seed;
    config.validate();
    return config;
}

OptimizerConfig optimizer_config(const Options& opt) {
    OptimizerConfig config;
    config.learning_rate = opt.lr;
    config.steps = opt.steps;
    config.batch_size = opt.batch_size;
    config.warmup_steps = opt.warmup_steps;
    config.weight_decay = opt.weight_decay;
    return config;
}

TaskParams task_params(const Options& opt) {
    TaskParams params;
    params.samples = opt.samples;
    params.noise_std = opt.noise_std;
    params.m = opt.m;
    params.n = opt.n;
    params.target_rank = opt.target_rank;
    params.input_dim = opt.input_dim;
    params.hidden_dim = opt.hidden_dim;
    params.classes = opt.classes;
    return params;
}

void write_file(const fs::path& path, const std::string& content) {
    fs::create_directories(path.parent_path().empty() ? "." : path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << content;
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

void add_common(CLI::App* cmd, Options& opt) {
    cmd->add_option("--seed", opt.seed, "Run seed");
    cmd->add_option("--out", opt.out, "Output directory");
    cmd->add_option("--config", opt.config_path, "JSON config file overriding flag defaults");
}

void add_adapter_flags(CLI::App* cmd, Options& opt) {
    cmd->add_option("--r", opt.r, "Adapter rank");
    cmd->add_option("--variant", opt.variant, "lora|square_only|cross_only|full");
    cmd->add_option("--alpha", opt.alpha, "Scaling alpha (0 -> r)");
    cmd->add_option("--scaling-mode", opt.scaling_mode, "alpha_over_r|alpha_over_D|none");
    cmd->add_option("--dropout", opt.dropout, "Adapter-path input dropout");
    cmd->add_option("--init-std", opt.init_std, "Gaussian init std for B (0 -> 1/sqrt(r))");
}

void add_optim_flags(CLI::App* cmd, Options& opt) {
    cmd->add_option("--lr", opt.lr, "Learning rate");
    cmd->add_option("--steps", opt.steps, "Training steps");
    cmd->add_option("--batch-size", opt.batch_size, "Mini-batch size (classification)");
    cmd->add_option("--warmup-steps", opt.warmup_steps, "Linear warmup steps");
    cmd->add_option("--weight-decay", opt.weight_decay, "Decoupled weight decay");
}

void write_run_outputs(const Options& opt, const RunRecord& record) {
    write_file(fs::path(opt.out) / "run.csv", run_record_csv(record));
    write_file(fs::path(opt.out) / "summary.json", run_record_summary(record));
}

// ---------------------------------------------------------------------------
// verify: self-contained property suite

struct Verifier {
    int passed = 0;
    int failed = 0;
    void check(const std::string& name, bool ok) {
        (ok ? passed : failed) += 1;
        std::cout << (ok ? "pass" : "FAIL") << "  " << name << "\n";
    }
};

Matrix random_matrix(std::mt19937_64& rng, Index rows, Index cols) {
    std::normal_distribution<double> gauss(0.0, 1.0);
    Matrix m(rows, cols);
    for (Index i = 0; i < rows; ++i)
        for (Index j = 0; j < cols; ++j) m(i, j) = gauss(rng);
    return m;
}

PeraAdapter random_adapter(std::mt19937_64& rng, int r, Index m, Index n, Variant variant) {
    AdapterConfig config;
    config.r = r;
    config.variant = variant;
    config.seed = rng();
    PeraAdapter adapter = init_adapter(config, m, n);
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (Index i = 0; i < adapter.a.size(); ++i) adapter.a.data()[i] = gauss(rng);
    for (int k = 0; k < adapter.coeff.size(); ++k)
        if (!adapter.coeff.frozen[static_cast<std::size_t>(k)])
            adapter.coeff.h(k) = gauss(rng);
    return adapter;
}

int run_verify(const Options& opt) {
    std::mt19937_64 rng(opt.seed);
    Verifier v;

    {
        bool ok = true;
        for (int r : {1, 2, 4, 8})
            for (int trial = 0; trial < 25; ++trial) {
                const PeraAdapter a = random_adapter(rng, r, 16, 16, Variant::full);
                const Matrix lhs = compose_delta_w(a.b, a.a, a.coeff);
                const Matrix rhs = delta_w_sum_oracle(a.b, a.a, a.coeff);
                ok = ok && (lhs - rhs).norm() / std::max(1.0, rhs.norm()) < 1e-12;
            }
        v.check("factorization identity (composition vs sum oracle)", ok);
    }
    {
        bool ok = true;
        for (int trial = 0; trial < 25; ++trial) {
            const PeraAdapter a = random_adapter(rng, 4, 8, 8, Variant::lora);
            const Matrix w0 = random_matrix(rng, 8, 8);
            const Matrix x = random_matrix(rng, 8, 4);
            const Matrix lora = w0 * x + a.scale() * (a.b * (a.a * x));
            const Matrix out = forward(a, w0, x);
            ok = ok && (out - lora).norm() / std::max(1.0, lora.norm()) < 1e-12;
        }
        v.check("lora degeneracy (frozen h reproduces B A forward)", ok);
    }
    {
        bool ok = true;
        for (int r = 1; r <= 64; ++r) {
            AdapterConfig config;
            config.r = r;
            const ParamCount count = param_count(config, 64, 64);
            const long expected = 64L * r + 64L * r + r + r * (r - 1) / 2;
            ok = ok && count.trainable == expected;
            const PairOrder order(r);
            for (int k = 0; k < order.expanded_dim(); ++k)
                ok = ok && order.index_of(order.term(k)) == k;
        }
        v.check("parameter formula and ordering round trip, r <= 64", ok);
    }
    {
        bool ok = true;
        for (int r : {1, 2, 4}) {
            const PeraAdapter a = random_adapter(rng, r, 8, 8, Variant::full);
            const Matrix w0 = random_matrix(rng, 8, 8);
            const Matrix x = random_matrix(rng, 8, 4);
            const Matrix target = random_matrix(rng, 8, 4);
            const Matrix upstream = forward(a, w0, x) - target;
            const AdapterGrads grads = backward(a, w0, x, upstream);
            // finite differences over h only, spot check
            for (int k = 0; k < a.coeff.size(); ++k) {
                PeraAdapter perturbed = a;
                const double step = 1e-4;
                perturbed.coeff.h(k) += step;
                const double fp = 0.5 * (forward(perturbed, w0, x) - target).squaredNorm();
                perturbed.coeff.h(k) -= 2 * step;
                const double fm = 0.5 * (forward(perturbed, w0, x) - target).squaredNorm();
                const double numeric = (fp - fm) / (2 * step);
                ok = ok && std::abs(grads.d_h(k) - numeric) /
                               std::max(1.0, std::abs(numeric)) < 1e-6;
            }
        }
        v.check("analytic h-gradients match finite differences", ok);
    }
    {
        bool ok = true;
        for (int trial = 0; trial < 10; ++trial) {
            const Matrix w = random_matrix(rng, 12, 12);
            for (int r = 1; r <= 4; ++r) {
                const ExpressivityBounds b = expressivity_bounds(w, r);
                ok = ok && b.pera_floor <= b.lora_floor;
            }
        }
        v.check("expressivity floors ordered (pera <= lora)", ok);
    }
    {
        bool ok = true;
        for (int r : {1, 2, 4})
            for (int trial = 0; trial < 10; ++trial) {
                const PeraAdapter a = random_adapter(rng, r, 12, 12, Variant::full);
                ok = ok && rank_report(a).satisfied;
            }
        v.check("rank bound satisfied on random adapters", ok);
    }
    {
        bool ok = true;
        for (int trial = 0; trial < 10; ++trial) {
            const PeraAdapter a = random_adapter(rng, 3, 6, 5, Variant::cross_only);
            const PeraAdapter back = deserialize(serialize(a));
            ok = ok && (back.b - a.b).norm() == 0.0 && (back.a - a.a).norm() == 0.0 &&
                 (back.coeff.h - a.coeff.h).norm() == 0.0;
        }
        v.check("serialization round trip bitwise lossless", ok);
    }

    std::cout << "passed " << v.passed << " / " << (v.passed + v.failed) << " checks\n";
    return v.failed == 0 ? 0 : 1;
}

int run_fit(const Options& opt, TaskKind kind) {
    const Task task = make_task(kind, task_params(opt), opt.seed);
    const AdapterConfig config = adapter_config(opt);
    const Index m = kind == TaskKind::matrix_approx ? opt.m : 2;
    const Index n = kind == TaskKind::matrix_approx ? opt.n : 2;
    PeraAdapter adapter = init_adapter(config, m, n);
    const RunRecord record = train(adapter, task, optimizer_config(opt));
    write_run_outputs(opt, record);
    write_file(fs::path(opt.out) / "adapter.json", serialize(adapter));
    std::cout << to_string(kind) << " seed=" << opt.seed << " variant=" << opt.variant
              << " final_loss=" << format_double(record.final_loss)
              << " rank=" << record.delta_w_rank << "\n";
    return 0;
}

int run_train_toy(const Options& opt) {
    const Task task = make_task(TaskKind::toy_mlp_classification, task_params(opt), opt.seed);
    ToyModel model = init_toy_model(task, adapter_config(opt));
    const RunRecord record = train(model, task, optimizer_config(opt));
    write_run_outputs(opt, record);
    write_file(fs::path(opt.out) / "model.json", serialize_toy_model(model));
    std::cout << "toy_mlp seed=" << opt.seed << " variant=" << opt.variant
              << " final_loss=" << format_double(record.final_loss)
              << " test_accuracy=" << format_double(record.test_accuracy) << "\n";
    return 0;
}

int run_ablate(const Options& opt) {
    std::vector<std::uint64_t> seeds;
    for (int s = 1; s <= opt.num_seeds; ++s) seeds.push_back(opt.seed + s - 1);
    const TaskKind kind = task_kind_from_string(opt.task);
    const AblationResult result =
        ablation_suite(kind, task_params(opt), opt.r, seeds, optimizer_config(opt));
    write_file(fs::path(opt.out) / "ablate.csv", ablation_csv(result));
    json summary;
    for (std::size_t i = 0; i < result.variants.size(); ++i) {
        summary[to_string(result.variants[i])] = {
            {"mean_final_loss", result.mean_loss[i]},
            {"stddev_final_loss", result.stddev_loss[i]},
            {"median_final_loss", result.median_loss[i]},
        };
        std::cout << to_string(result.variants[i])
                  << " mean=" << format_double(result.mean_loss[i])
                  << " stddev=" << format_double(result.stddev_loss[i])
                  << " median=" << format_double(result.median_loss[i]) << "\n";
    }
    write_file(fs::path(opt.out) / "ablate_summary.json", summary.dump(2));
    return 0;
}

int run_interactions(const Options& opt) {
    const ToyModel model = deserialize_toy_model(read_file(opt.model_path));
    // probe inputs: seeded standard normal vectors in the input space
    std::mt19937_64 rng(opt.seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::vector<Vector> samples;
    for (int s = 0; s < opt.probe_samples; ++s) {
        Vector h(model.w1.cols());
        for (Index i = 0; i < h.size(); ++i) h(i) = gauss(rng);
        samples.push_back(std::move(h));
    }
    const InteractionMatrix im = interaction_strength(
        toy_model_logit(model, opt.class_index), samples, opt.probe_step);
    write_file(fs::path(opt.out) / "interactions.csv", interaction_csv(im));
    std::cout << "mean_off_diagonal=" << format_double(mean_off_diagonal(im.s))
              << " samples=" << im.sample_count << "\n";
    return 0;
}

int run_rank_report(const Options& opt) {
    const PeraAdapter adapter = deserialize(read_file(opt.model_path));
    const RankReport report = rank_report(adapter);
    json doc = {
        {"numeric_rank_delta_w", report.numeric_rank_delta_w},
        {"bound_lora", report.bound_lora},
        {"bound_pera", report.bound_pera},
        {"satisfied", report.satisfied},
    };
    std::cout << doc.dump(2) << "\n";
    if (!opt.out.empty()) write_file(fs::path(opt.out) / "rank_report.json", doc.dump(2));
    return report.satisfied ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        Options opt;
        // --config values are applied before flag parsing, so explicit
        // flags always win.
        for (int i = 1; i + 1 < argc; ++i)
            if (std::string(argv[i]) == "--config")
                apply_config(opt, json::parse(read_file(argv[i + 1])));

        CLI::App app{"PERA: polynomial expansion rank adaptation toolkit"};
        app.require_subcommand(1);

        auto* verify = app.add_subcommand("verify", "Run the property suite");
        add_common(verify, opt);

        auto* fit_poly = app.add_subcommand("fit-poly", "Fit the cubic regression task");
        add_common(fit_poly, opt);
        add_adapter_flags(fit_poly, opt);
        add_optim_flags(fit_poly, opt);
        fit_poly->add_option("--samples", opt.samples, "Dataset size");
        fit_poly->add_option("--noise-std", opt.noise_std, "Target noise std");

        auto* fit_matrix = app.add_subcommand("fit-matrix", "Fit a low-rank matrix target");
        add_common(fit_matrix, opt);
        add_adapter_flags(fit_matrix, opt);
        add_optim_flags(fit_matrix, opt);
        fit_matrix->add_option("--m", opt.m, "Target rows");
        fit_matrix->add_option("--n", opt.n, "Target cols");
        fit_matrix->add_option("--target-rank", opt.target_rank, "Rank of the target");

        auto* train_toy = app.add_subcommand("train-toy", "Train the adapter-equipped toy MLP");
        add_common(train_toy, opt);
        add_adapter_flags(train_toy, opt);
        add_optim_flags(train_toy, opt);
        train_toy->add_option("--samples", opt.samples, "Training set size");
        train_toy->add_option("--input-dim", opt.input_dim, "Input dimension");
        train_toy->add_option("--hidden-dim", opt.hidden_dim, "Hidden dimension");
        train_toy->add_option("--classes", opt.classes, "Class count");

        auto* ablate = app.add_subcommand("ablate", "Variant ablation across seeds");
        add_common(ablate, opt);
        add_adapter_flags(ablate, opt);
        add_optim_flags(ablate, opt);
        ablate->add_option("--task", opt.task, "poly_regression|matrix_approx|toy_mlp_classification");
        ablate->add_option("--seeds", opt.num_seeds, "Number of seeds (starting at --seed)");
        ablate->add_option("--m", opt.m, "Target rows");
        ablate->add_option("--n", opt.n, "Target cols");
        ablate->add_option("--target-rank", opt.target_rank, "Rank of the target");
        ablate->add_option("--samples", opt.samples, "Dataset size");

        auto* interactions = app.add_subcommand("interactions", "Interaction-strength matrix");
        add_common(interactions, opt);
        interactions->add_option("--model", opt.model_path, "Toy model file")->required();
        interactions->add_option("--samples", opt.probe_samples, "Probe sample count");
        interactions->add_option("--step", opt.probe_step, "Second-difference step");
        interactions->add_option("--class-index", opt.class_index, "Output logit to probe");

        auto* rank_rep = app.add_subcommand("rank-report", "Rank bound report for an adapter");
        add_common(rank_rep, opt);
        rank_rep->add_option("--model", opt.model_path, "Adapter file")->required();

        try {
            app.parse(argc, argv);
        } catch (const CLI::CallForHelp& e) {
            return app.exit(e);
        } catch (const CLI::ParseError& e) {
            std::string msg = e.what();
            for (char& c : msg)
                if (c == '\n') c = ' ';
            std::cerr << "error: " << e.get_name() << ": " << msg << "\n";
            return 1;
        }

        if (verify->parsed()) return run_verify(opt);
        if (fit_poly->parsed()) return run_fit(opt, TaskKind::poly_regression);
        if (fit_matrix->parsed()) return run_fit(opt, TaskKind::matrix_approx);
        if (train_toy->parsed()) return run_train_toy(opt);
        if (ablate->parsed()) return run_ablate(opt);
        if (interactions->parsed()) return run_interactions(opt);
        if (rank_rep->parsed()) return run_rank_report(opt);
        return 1;
    } catch (const std::exception& e) {
        std::string msg = e.what();
        for (char& c : msg)
            if (c == '\n') c = ' ';
        std::cerr << "error: " << msg << "\n";
        return 1;
    }
}
