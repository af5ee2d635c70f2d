#include <json.hpp>

#include "pera/adapter.hpp"
#include "pera/analysis.hpp"
#include "pera/experiments.hpp"

namespace pera {

using nlohmann::json;

namespace {

json matrix_to_json(const Matrix& m) {
    json out = json::array();
    for (Index i = 0; i < m.rows(); ++i)
        for (Index j = 0; j < m.cols(); ++j) out.push_back(m(i, j));
    return out;
}

Matrix matrix_from_json(const json& data, Index rows, Index cols, const char* what) {
    if (!data.is_array() || static_cast<Index>(data.size()) != rows * cols)
        throw ParseError(std::string(what) + ": expected " + std::to_string(rows * cols) +
                             " entries",
                         0);
    Matrix m(rows, cols);
    std::size_t k = 0;
    for (Index i = 0; i < rows; ++i)
        for (Index j = 0; j < cols; ++j) m(i, j) = data[k++].get<double>();
    return m;
}

json adapter_to_json(const PeraAdapter& adapter) {
    json doc;
    doc["format_version"] = 1;
    doc["m"] = adapter.m();
    doc["n"] = adapter.n();
    doc["r"] = adapter.config.r;
    doc["variant"] = to_string(adapter.config.variant);
    doc["alpha"] = adapter.config.effective_alpha();
    doc["scaling_mode"] = to_string(adapter.config.scaling_mode);
    doc["dropout"] = adapter.config.dropout;
    doc["init_std"] = adapter.config.effective_init_std();
    doc["seed"] = adapter.config.seed;
    doc["pair_order"] = "canonical-v1";
    doc["b"] = matrix_to_json(adapter.b);
    doc["a"] = matrix_to_json(adapter.a);
    json h = json::array();
    for (Index k = 0; k < adapter.coeff.h.size(); ++k) h.push_back(adapter.coeff.h(k));
    doc["h"] = h;
    json frozen = json::array();
    for (bool f : adapter.coeff.frozen) frozen.push_back(f);
    doc["frozen"] = frozen;
    return doc;
}

PeraAdapter adapter_from_json(const json& doc) {
    if (!doc.contains("format_version"))
        throw ParseError("adapter payload: missing format_version", 0);
    if (doc.at("format_version").get<int>() != 1)
        throw VersionError("adapter payload: unsupported format_version " +
                           doc.at("format_version").dump());
    if (doc.value("pair_order", "canonical-v1") != std::string("canonical-v1"))
        throw ParseError("adapter payload: unknown pair_order", 0);

    const Index m = doc.at("m").get<Index>();
    const Index n = doc.at("n").get<Index>();
    const int r = doc.at("r").get<int>();
    if (m < 1 || n < 1 || r < 1) throw ParseError("adapter payload: bad dimensions", 0);

    PeraAdapter adapter;
    adapter.config.r = r;
    adapter.config.variant = variant_from_string(doc.at("variant").get<std::string>());
    adapter.config.alpha = doc.at("alpha").get<double>();
    adapter.config.scaling_mode =
        scaling_mode_from_string(doc.at("scaling_mode").get<std::string>());
    adapter.config.dropout = doc.value("dropout", 0.0);
    adapter.config.init_std = doc.value("init_std", 0.0);
    adapter.config.seed = doc.value("seed", std::uint64_t{0});
    adapter.b = matrix_from_json(doc.at("b"), m, r, "adapter payload b");
    adapter.a = matrix_from_json(doc.at("a"), r, n, "adapter payload a");

    const int coeff_dim = PairOrder::coeff_dim_for(r);
    const json& h = doc.at("h");
    const json& frozen = doc.at("frozen");
    if (!h.is_array() || static_cast<int>(h.size()) != coeff_dim)
        throw ParseError("adapter payload: h length does not match rank", 0);
    if (!frozen.is_array() || static_cast<int>(frozen.size()) != coeff_dim)
        throw ParseError("adapter payload: frozen length does not match rank", 0);
    adapter.coeff.r = r;
    adapter.coeff.h = Vector(coeff_dim);
    adapter.coeff.frozen.resize(static_cast<std::size_t>(coeff_dim));
    for (int k = 0; k < coeff_dim; ++k) {
        adapter.coeff.h(k) = h[static_cast<std::size_t>(k)].get<double>();
        adapter.coeff.frozen[static_cast<std::size_t>(k)] =
            frozen[static_cast<std::size_t>(k)].get<bool>();
    }
    adapter.config.validate();
    return adapter;
}

json parse_payload(const std::string& payload) {
    try {
        return json::parse(payload);
    } catch (const json::parse_error& e) {
        throw ParseError(e.what(), e.byte);
    }
}

}  // namespace

std::string serialize(const PeraAdapter& adapter) { return adapter_to_json(adapter).dump(2); }

PeraAdapter deserialize(const std::string& payload) {
    const json doc = parse_payload(payload);
    try {
        return adapter_from_json(doc);
    } catch (const json::exception& e) {
        throw ParseError(e.what(), 0);
    }
}

std::string serialize_toy_model(const ToyModel& model) {
    json doc;
    doc["format_version"] = 1;
    doc["kind"] = "toy_mlp";
    doc["hidden_dim"] = model.w1.rows();
    doc["input_dim"] = model.w1.cols();
    doc["classes"] = model.w2.rows();
    doc["w1"] = matrix_to_json(model.w1);
    doc["w2"] = matrix_to_json(model.w2);
    doc["adapter1"] = adapter_to_json(model.adapter1);
    doc["adapter2"] = adapter_to_json(model.adapter2);
    return doc.dump(2);
}

ToyModel deserialize_toy_model(const std::string& payload) {
    const json doc = parse_payload(payload);
    try {
        if (doc.value("kind", "") != std::string("toy_mlp"))
            throw ParseError("toy model payload: wrong kind", 0);
        if (doc.at("format_version").get<int>() != 1)
            throw VersionError("toy model payload: unsupported format_version");
        const Index hidden = doc.at("hidden_dim").get<Index>();
        const Index input = doc.at("input_dim").get<Index>();
        const Index classes = doc.at("classes").get<Index>();
        ToyModel model;
        model.w1 = matrix_from_json(doc.at("w1"), hidden, input, "toy model w1");
        model.w2 = matrix_from_json(doc.at("w2"), classes, hidden, "toy model w2");
        model.adapter1 = adapter_from_json(doc.at("adapter1"));
        model.adapter2 = adapter_from_json(doc.at("adapter2"));
        if (model.adapter1.m() != hidden || model.adapter1.n() != input ||
            model.adapter2.m() != classes || model.adapter2.n() != hidden)
            throw ParseError("toy model payload: adapter shapes do not match weights", 0);
        return model;
    } catch (const json::exception& e) {
        throw ParseError(e.what(), 0);
    }
}

std::string run_record_summary(const RunRecord& record) {
    json doc;
    doc["task"] = to_string(record.kind);
    doc["seed"] = record.seed;
    doc["adapter"] = {
        {"r", record.adapter_config.r},
        {"alpha", record.adapter_config.effective_alpha()},
        {"variant", to_string(record.adapter_config.variant)},
        {"scaling_mode", to_string(record.adapter_config.scaling_mode)},
        {"dropout", record.adapter_config.dropout},
        {"init_std", record.adapter_config.effective_init_std()},
        {"seed", record.adapter_config.seed},
    };
    doc["optimizer"] = {
        {"learning_rate", record.opt.learning_rate},
        {"beta1", record.opt.beta1},
        {"beta2", record.opt.beta2},
        {"epsilon", record.opt.epsilon},
        {"weight_decay", record.opt.weight_decay},
        {"steps", record.opt.steps},
        {"batch_size", record.opt.batch_size},
        {"warmup_steps", record.opt.warmup_steps},
    };
    doc["final_loss"] = record.final_loss;
    doc["best_loss"] = record.best_loss;
    if (record.final_frobenius_error >= 0.0)
        doc["final_frobenius_error"] = record.final_frobenius_error;
    if (record.final_spectral_error >= 0.0)
        doc["final_spectral_error"] = record.final_spectral_error;
    if (record.test_accuracy >= 0.0) doc["test_accuracy"] = record.test_accuracy;
    doc["delta_w_rank"] = record.delta_w_rank;
    doc["trainable_params"] = record.params.trainable;
    doc["total_params"] = record.params.total;
    doc["wall_time_seconds"] = record.wall_time_seconds;
    return doc.dump(2);
}

std::string interaction_csv(const InteractionMatrix& im) {
    std::string out = "index";
    for (Index j = 0; j < im.s.cols(); ++j) out += ",s" + std::to_string(j);
    out += "\n";
    for (Index i = 0; i < im.s.rows(); ++i) {
        out += std::to_string(i);
        for (Index j = 0; j < im.s.cols(); ++j) out += "," + format_double(im.s(i, j));
        out += "\n";
    }
    return out;
}

}  // namespace pera
