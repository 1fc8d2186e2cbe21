#include "bnt/training.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

namespace bnt {

void TrainConfig::validate() const {
    if (!(lr > 0.0)) throw std::invalid_argument("train: lr must be > 0");
    if (!(weight_decay >= 0.0)) throw std::invalid_argument("train: weight_decay must be >= 0");
    if (batch_size == 0) throw std::invalid_argument("train: batch_size must be >= 1");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
        throw std::invalid_argument("train: betas must lie in [0, 1)");
    if (!(eps > 0.0)) throw std::invalid_argument("train: eps must be > 0");
}

AdamState make_adam_state(const ModelParams& params) {
    return {zeros_like(params), zeros_like(params), 0};
}

void adam_step(ModelParams& params, const ModelParams& grads, AdamState& state, const TrainConfig& config,
               const ModelConfig& model) {
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double correction1 = 1.0 - std::pow(config.beta1, t);
    const double correction2 = 1.0 - std::pow(config.beta2, t);

    std::vector<Matrix*> p_list, m_list, v_list;
    std::vector<const Matrix*> g_list;
    params.for_each_tensor([&](const std::string& name, Matrix& m) {
        p_list.push_back(is_learnable(model, name) ? &m : nullptr);
    });
    grads.for_each_tensor([&](const std::string&, const Matrix& m) { g_list.push_back(&m); });
    state.first_moment.for_each_tensor([&](const std::string&, Matrix& m) { m_list.push_back(&m); });
    state.second_moment.for_each_tensor([&](const std::string&, Matrix& m) { v_list.push_back(&m); });
    if (g_list.size() != p_list.size() || m_list.size() != p_list.size() || v_list.size() != p_list.size())
        throw DimensionError("adam_step: gradient layout does not match parameters");

    for (std::size_t i = 0; i < p_list.size(); ++i) {
        if (!p_list[i]) continue;
        auto p = p_list[i]->data();
        const auto g = g_list[i]->data();
        auto m = m_list[i]->data();
        auto v = v_list[i]->data();
        if (g.size() != p.size()) throw DimensionError("adam_step: tensor size mismatch");
        for (std::size_t k = 0; k < p.size(); ++k) {
            const double grad = g[k] + config.weight_decay * p[k];
            m[k] = config.beta1 * m[k] + (1.0 - config.beta1) * grad;
            v[k] = config.beta2 * v[k] + (1.0 - config.beta2) * grad * grad;
            const double m_hat = m[k] / correction1;
            const double v_hat = v[k] / correction2;
            p[k] -= config.lr * m_hat / (std::sqrt(v_hat) + config.eps);
        }
    }
}

std::vector<LabeledInput> prepare_inputs(std::span<const ConnectivityGraph> graphs, const ModelConfig& config) {
    std::vector<LabeledInput> out;
    out.reserve(graphs.size());
    for (const auto& g : graphs) {
        if (g.matrix.rows() != config.nodes)
            throw DimensionError("subject " + std::to_string(g.subject_id) + " has " + std::to_string(g.matrix.rows()) +
                                 " nodes, model expects " + std::to_string(config.nodes));
        out.push_back({prepare_input(g.matrix, config), g.label});
    }
    return out;
}

std::vector<double> predict_scores(std::span<const LabeledInput> inputs, const ModelParams& params,
                                   const ModelConfig& config) {
    std::vector<double> scores;
    scores.reserve(inputs.size());
    for (const auto& ex : inputs) scores.push_back(positive_probability(forward_features(ex.features, params, config).logits));
    return scores;
}

namespace {

std::vector<int> labels_of(std::span<const LabeledInput> inputs) {
    std::vector<int> labels;
    labels.reserve(inputs.size());
    for (const auto& ex : inputs) labels.push_back(ex.label);
    return labels;
}

}  // namespace

EvalResult evaluate(std::span<const LabeledInput> inputs, const ModelParams& params, const ModelConfig& config) {
    const auto scores = predict_scores(inputs, params, config);
    const auto labels = labels_of(inputs);
    return threshold_metrics(scores, labels);
}

TrainResult train(std::span<const ConnectivityGraph> dataset, const SplitPlan& split, const ModelConfig& model_config,
                  const TrainConfig& train_config) {
    model_config.validate();
    train_config.validate();
    if (split.train.empty()) throw std::invalid_argument("train: empty train split");

    const auto train_set = prepare_inputs(select_subjects(dataset, split.train), model_config);
    const auto val_set = prepare_inputs(select_subjects(dataset, split.val), model_config);
    const auto test_set = prepare_inputs(select_subjects(dataset, split.test), model_config);
    const auto val_labels = labels_of(val_set);
    if (std::count(val_labels.begin(), val_labels.end(), 1) == 0 || std::count(val_labels.begin(), val_labels.end(), 0) == 0)
        throw std::invalid_argument("train: validation split must contain both classes");

    Rng init_rng(train_config.seed);
    TrainResult result;
    result.params = init_params(model_config, init_rng);
    result.initial_params = result.params;
    ModelParams& params = result.params;
    ModelParams best = params;

    auto& report = result.report;
    report.model = model_config;
    report.train = train_config;
    report.split_seed = split.seed;
    report.n_train = train_set.size();
    report.n_val = val_set.size();
    report.n_test = test_set.size();

    AdamState state = make_adam_state(params);
    Rng shuffle_rng(derive_seed(train_config.seed, 1));
    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), 0);
    std::vector<LabeledInput> batch;
    double best_auroc = -std::numeric_limits<double>::infinity();

    for (std::size_t epoch = 1; epoch <= train_config.epochs; ++epoch) {
        shuffle_rng.shuffle(std::span(order));
        double loss_sum = 0.0;
        for (std::size_t start = 0; start < order.size(); start += train_config.batch_size) {
            const std::size_t end = std::min(order.size(), start + train_config.batch_size);
            batch.clear();
            for (std::size_t i = start; i < end; ++i) batch.push_back(train_set[order[i]]);
            const auto lg = loss_and_grad(batch, params, model_config);
            loss_sum += lg.loss * static_cast<double>(batch.size());
            adam_step(params, lg.grads, state, train_config, model_config);
        }
        const double val_auroc = auroc(predict_scores(val_set, params, model_config), val_labels);
        report.epochs.push_back({epoch, loss_sum / static_cast<double>(train_set.size()), val_auroc});
        if (val_auroc > best_auroc) {
            best_auroc = val_auroc;
            best = params;
            report.selected_epoch = epoch;
        }
    }
    params = std::move(best);
    report.test = evaluate(test_set, params, model_config);
    return result;
}

namespace {

std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string widths(const std::vector<std::size_t>& w) {
    std::string s;
    for (std::size_t i = 0; i < w.size(); ++i) s += (i ? "," : "") + std::to_string(w[i]);
    return s;
}

}  // namespace

std::string serialize_report(const TrainReport& r) {
    std::ostringstream os;
    os << "# bnt train report\n";
    os << "seed = " << r.train.seed << '\n';
    os << "split_seed = " << r.split_seed << '\n';
    os << "model.nodes = " << r.model.nodes << '\n';
    os << "model.layers = " << r.model.layers << '\n';
    os << "model.heads = " << r.model.heads << '\n';
    os << "model.head_dim = " << r.model.resolved_head_dim() << '\n';
    os << "model.clusters = " << r.model.clusters << '\n';
    os << "model.mlp_hidden = " << widths(r.model.mlp_hidden) << '\n';
    os << "model.readout = " << to_string(r.model.readout) << '\n';
    os << "model.centers = " << to_string(r.model.centers) << '\n';
    os << "model.features = " << to_string(r.model.features) << '\n';
    os << "model.eigen_k = " << r.model.eigen_k << '\n';
    os << "train.lr = " << num(r.train.lr) << '\n';
    os << "train.weight_decay = " << num(r.train.weight_decay) << '\n';
    os << "train.weight_decay_mode = " << kWeightDecayMode << '\n';
    os << "train.batch_size = " << r.train.batch_size << '\n';
    os << "train.epochs = " << r.train.epochs << '\n';
    os << "train.betas = " << num(r.train.beta1) << ' ' << num(r.train.beta2) << '\n';
    os << "train.eps = " << num(r.train.eps) << '\n';
    os << "n_train = " << r.n_train << '\n';
    os << "n_val = " << r.n_val << '\n';
    os << "n_test = " << r.n_test << '\n';
    os << "selected_epoch = " << r.selected_epoch << '\n';
    os << "test.auroc = " << format_metric(r.test.auroc) << '\n';
    os << "test.accuracy = " << format_metric(r.test.accuracy) << '\n';
    os << "test.sensitivity = " << format_metric(r.test.sensitivity) << '\n';
    os << "test.specificity = " << format_metric(r.test.specificity) << '\n';
    os << "test.n_pos = " << r.test.n_pos << '\n';
    os << "test.n_neg = " << r.test.n_neg << '\n';
    for (const auto& e : r.epochs)
        os << "epoch " << e.epoch << " train_loss = " << num(e.train_loss) << " val_auroc = " << num(e.val_auroc) << '\n';
    return os.str();
}

std::string metrics_csv_header() { return "run_id,seed,auroc,accuracy,sensitivity,specificity\n"; }

std::string metrics_csv_row(const std::string& run_id, std::uint64_t seed, const EvalResult& r) {
    return run_id + "," + std::to_string(seed) + "," + format_metric(r.auroc) + "," + format_metric(r.accuracy) + "," +
           format_metric(r.sensitivity) + "," + format_metric(r.specificity) + "\n";
}

namespace {

constexpr std::array<char, 4> kCheckpointMagic{'B', 'N', 'T', 'M'};
constexpr std::uint32_t kCheckpointVersion = 1;

void put_u32(std::vector<std::uint8_t>& out, std::uint64_t v) {
    if (v > 0xFFFFFFFFULL) throw std::invalid_argument("checkpoint: config value exceeds u32");
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f64(std::vector<std::uint8_t>& out, double v) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
}

struct Cursor {
    std::span<const std::uint8_t> bytes;
    std::size_t pos = 0;

    void need(std::size_t n) const {
        if (bytes.size() - pos < n) throw DataError(DataErrorKind::Truncation, "checkpoint truncated");
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes[pos++]) << (8 * i);
        return v;
    }
    double f64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes[pos++]) << (8 * i);
        return std::bit_cast<double>(v);
    }
};

template <typename Enum>
Enum enum_from(std::uint32_t v, std::uint32_t count, const char* what) {
    if (v >= count) throw DataError(DataErrorKind::Format, std::string("checkpoint: invalid ") + what);
    return static_cast<Enum>(v);
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const ModelConfig& c, const ModelParams& params) {
    std::vector<std::uint8_t> out(kCheckpointMagic.begin(), kCheckpointMagic.end());
    put_u32(out, kCheckpointVersion);
    put_u32(out, c.nodes);
    put_u32(out, c.layers);
    put_u32(out, c.heads);
    put_u32(out, c.clusters);
    put_u32(out, c.head_dim);
    put_u32(out, c.mlp_hidden.size());
    for (auto w : c.mlp_hidden) put_u32(out, w);
    put_u32(out, static_cast<std::uint32_t>(c.readout));
    put_u32(out, static_cast<std::uint32_t>(c.centers));
    put_u32(out, static_cast<std::uint32_t>(c.features));
    put_u32(out, c.eigen_k);
    const ModelParams layout = allocate_params(c);
    std::vector<const Matrix*> expected, actual;
    layout.for_each_tensor([&](const std::string&, const Matrix& m) { expected.push_back(&m); });
    params.for_each_tensor([&](const std::string&, const Matrix& m) { actual.push_back(&m); });
    if (expected.size() != actual.size()) throw DimensionError("checkpoint: parameters do not match config");
    for (std::size_t i = 0; i < actual.size(); ++i) {
        if (actual[i]->rows() != expected[i]->rows() || actual[i]->cols() != expected[i]->cols())
            throw DimensionError("checkpoint: tensor shape does not match config");
        for (double v : actual[i]->data()) put_f64(out, v);
    }
    return out;
}

std::pair<ModelConfig, ModelParams> decode_checkpoint(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 4 || !std::equal(kCheckpointMagic.begin(), kCheckpointMagic.end(), bytes.begin(),
                                        [](char a, std::uint8_t b) { return static_cast<std::uint8_t>(a) == b; }))
        throw DataError(DataErrorKind::BadMagic, "not a BNTM checkpoint (bad magic)");
    Cursor cur{bytes, 4};
    const auto version = cur.u32();
    if (version != kCheckpointVersion)
        throw DataError(DataErrorKind::BadVersion, "unsupported checkpoint version " + std::to_string(version));
    ModelConfig c;
    c.nodes = cur.u32();
    c.layers = cur.u32();
    c.heads = cur.u32();
    c.clusters = cur.u32();
    c.head_dim = cur.u32();
    const auto n_hidden = cur.u32();
    cur.need(4ULL * n_hidden);
    c.mlp_hidden.resize(n_hidden);
    for (auto& w : c.mlp_hidden) w = cur.u32();
    c.readout = enum_from<Readout>(cur.u32(), 5, "readout");
    c.centers = enum_from<CentersMode>(cur.u32(), 3, "centers mode");
    c.features = enum_from<NodeFeatureMode>(cur.u32(), 3, "feature mode");
    c.eigen_k = cur.u32();
    ModelParams p;
    try {
        p = allocate_params(c);
    } catch (const std::invalid_argument& e) {
        throw DataError(DataErrorKind::Format, std::string("checkpoint: ") + e.what());
    }
    cur.need(8 * p.parameter_count());
    p.for_each_tensor([&](const std::string&, Matrix& m) {
        for (auto& v : m.data()) v = cur.f64();
    });
    if (cur.pos != bytes.size()) throw DataError(DataErrorKind::Format, "checkpoint: trailing bytes");
    return {c, std::move(p)};
}

void write_checkpoint(const ModelConfig& config, const ModelParams& params, const std::filesystem::path& path) {
    const auto bytes = encode_checkpoint(config, params);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError(DataErrorKind::Io, "cannot open " + path.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

std::pair<ModelConfig, ModelParams> read_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError(DataErrorKind::Io, "cannot open " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_checkpoint(bytes);
}

ClassAssignments class_assignments(std::span<const LabeledInput> inputs, const ModelParams& params,
                                   const ModelConfig& config) {
    if (config.readout != Readout::OCREAD)
        throw std::invalid_argument("class_assignments: model does not use the ocread readout");
    ClassAssignments out{Matrix(config.clusters, config.nodes), Matrix(config.clusters, config.nodes), 0.0};
    std::array<std::size_t, 2> counts{0, 0};
    for (const auto& ex : inputs) {
        const auto fr = forward_features(ex.features, params, config);
        Matrix& acc = ex.label == 0 ? out.class0 : out.class1;
        acc += fr.trace.assignment.transpose();
        ++counts[static_cast<std::size_t>(ex.label)];
    }
    if (counts[0] == 0 || counts[1] == 0) throw std::invalid_argument("class_assignments: need both classes");
    out.class0 *= 1.0 / static_cast<double>(counts[0]);
    out.class1 *= 1.0 / static_cast<double>(counts[1]);
    out.difference = difference_score(out.class0, out.class1);
    return out;
}

std::vector<AblationRow> run_ablation(std::span<const ConnectivityGraph> dataset, const AblationSpec& spec) {
    std::vector<AblationRow> rows;
    for (const auto readout : spec.readouts) {
        const bool clustered = readout == Readout::OCREAD;
        const std::vector<CentersMode> centers = clustered ? spec.centers : std::vector{spec.model.centers};
        const std::vector<std::size_t> clusters = clustered ? spec.clusters : std::vector{spec.model.clusters};
        for (const auto mode : centers) {
            for (const auto k : clusters) {
                ModelConfig mc = spec.model;
                mc.readout = readout;
                mc.centers = mode;
                mc.clusters = k;
                for (std::size_t run = 0; run < spec.seeds; ++run) {
                    const std::uint64_t seed = spec.base_seed + run;
                    const auto split = stratified_split(dataset, spec.fractions, seed);
                    TrainConfig tc = spec.train;
                    tc.seed = seed;
                    const auto result = train(dataset, split, mc, tc);
                    AblationRow row{readout, mode, k, seed, result.report.selected_epoch, result.report.test, std::nullopt};
                    if (clustered) {
                        const auto test_set = prepare_inputs(select_subjects(dataset, split.test), mc);
                        row.difference = class_assignments(test_set, result.params, mc).difference;
                    }
                    rows.push_back(row);
                }
            }
        }
    }
    return rows;
}

std::string ablation_csv(std::span<const AblationRow> rows) {
    std::string s = "readout,centers,clusters,seed,selected_epoch,auroc,accuracy,sensitivity,specificity,difference_score\n";
    for (const auto& r : rows) {
        const bool clustered = r.readout == Readout::OCREAD;
        s += std::string(to_string(r.readout)) + "," + (clustered ? std::string(to_string(r.centers)) : "na") + "," +
             (clustered ? std::to_string(r.clusters) : "na") + "," + std::to_string(r.seed) + "," +
             std::to_string(r.selected_epoch) + "," + format_metric(r.test.auroc) + "," + format_metric(r.test.accuracy) +
             "," + format_metric(r.test.sensitivity) + "," + format_metric(r.test.specificity) + "," +
             format_metric(r.difference) + "\n";
    }
    return s;
}

}  // namespace bnt
