#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "bnt/training.hpp"
#include "oracles.hpp"

using namespace bnt;

namespace {

ModelConfig tiny_model(Readout readout = Readout::OCREAD, CentersMode centers = CentersMode::ORTHONORMAL) {
    ModelConfig c;
    c.nodes = 8;
    c.layers = 1;
    c.heads = 2;
    c.clusters = 3;
    c.mlp_hidden = {8};
    c.readout = readout;
    c.centers = centers;
    return c;
}

GeneratorSpec tiny_data() {
    GeneratorSpec s;
    s.nodes = 8;
    s.modules = 2;
    s.subjects_per_class = 30;
    s.sites = 2;
    s.series_length = 64;
    s.seed = 3;
    return s;
}

TrainConfig quick_train(std::size_t epochs = 5) {
    TrainConfig t;
    t.lr = 1e-3;
    t.epochs = epochs;
    t.batch_size = 16;
    t.seed = 11;
    return t;
}

/// Scalar reference Adam with L2 coupled to the gradient.
struct ScalarAdam {
    double m = 0, v = 0;
    int t = 0;
    double step(double p, double g, const TrainConfig& c) {
        ++t;
        g += c.weight_decay * p;
        m = c.beta1 * m + (1 - c.beta1) * g;
        v = c.beta2 * v + (1 - c.beta2) * g * g;
        const double mh = m / (1 - std::pow(c.beta1, t));
        const double vh = v / (1 - std::pow(c.beta2, t));
        return p - c.lr * mh / (std::sqrt(vh) + c.eps);
    }
};

ModelParams filled_like(const ModelParams& p, double value) {
    ModelParams out = zeros_like(p);
    out.for_each_tensor([&](const std::string&, Matrix& m) { m.fill(value); });
    return out;
}

}  // namespace

TEST_CASE("train config validation") {
    TrainConfig t;
    CHECK_NOTHROW(t.validate());
    t.lr = 0;
    CHECK_THROWS_AS(t.validate(), std::invalid_argument);
    t = TrainConfig{};
    t.beta1 = 1.0;
    CHECK_THROWS_AS(t.validate(), std::invalid_argument);
    t = TrainConfig{};
    t.batch_size = 0;
    CHECK_THROWS_AS(t.validate(), std::invalid_argument);
}

TEST_CASE("adam_step with zero gradient and zero decay leaves parameters unchanged") {
    Rng rng(1);
    const auto model = tiny_model(Readout::OCREAD, CentersMode::LEARNABLE);
    auto params = init_params(model, rng);
    const auto before = params;
    auto state = make_adam_state(params);
    TrainConfig tc;
    tc.weight_decay = 0;
    for (int i = 0; i < 3; ++i) adam_step(params, zeros_like(params), state, tc, model);
    CHECK(params == before);
    CHECK(state.step == 3);
}

TEST_CASE("adam_step matches a scalar reference trace") {
    Rng rng(2);
    const auto model = tiny_model(Readout::MEAN);
    auto params = init_params(model, rng);
    auto state = make_adam_state(params);
    TrainConfig tc;
    tc.lr = 1e-2;
    tc.weight_decay = 0.1;

    const double p0 = params.mlp[0].weight(0, 0);
    ScalarAdam ref;
    double p = p0;
    const double grads[] = {0.3, -1.2, 0.05, 2.0};
    for (double g : grads) {
        adam_step(params, filled_like(params, g), state, tc, model);
        p = ref.step(p, g, tc);
        CHECK(std::abs(params.mlp[0].weight(0, 0) - p) < 1e-15);
    }
}

TEST_CASE("first adam step moves each entry by about lr against the gradient sign") {
    Rng rng(3);
    const auto model = tiny_model(Readout::SUM);
    auto params = init_params(model, rng);
    const auto before = params;
    auto state = make_adam_state(params);
    TrainConfig tc;
    tc.weight_decay = 0;
    adam_step(params, filled_like(params, -0.37), state, tc, model);
    const auto& a = params.mlp[0].weight;
    const auto& b = before.mlp[0].weight;
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs((a.data()[i] - b.data()[i]) - tc.lr) < 1e-10);
}

TEST_CASE("weight decay is coupled to the gradient") {
    Rng rng(4);
    const auto model = tiny_model(Readout::MEAN);
    auto params = init_params(model, rng);
    const auto before = params;
    auto state = make_adam_state(params);
    TrainConfig tc;
    adam_step(params, zeros_like(params), state, tc, model);
    // With zero loss gradient the decay term alone is the gradient: g = wd * w.
    const double w = before.mlp[0].weight(0, 0);
    const double g = tc.weight_decay * w;
    CHECK(std::abs(params.mlp[0].weight(0, 0) - (w - tc.lr * g / (std::abs(g) + tc.eps))) < 1e-15);
    CHECK(params.mlp[0].bias == before.mlp[0].bias);
    CHECK(std::string(kWeightDecayMode) == "l2_coupled");
}

TEST_CASE("frozen centers are untouched by adam_step") {
    Rng rng(5);
    for (auto mode : {CentersMode::ORTHONORMAL, CentersMode::RANDOM_UNIT}) {
        const auto model = tiny_model(Readout::OCREAD, mode);
        auto params = init_params(model, rng);
        const Matrix centers = params.centers;
        auto state = make_adam_state(params);
        adam_step(params, filled_like(params, 1.0), state, TrainConfig{}, model);
        CHECK(params.centers == centers);
    }
    const auto model = tiny_model(Readout::OCREAD, CentersMode::LEARNABLE);
    auto params = init_params(model, rng);
    const Matrix centers = params.centers;
    auto state = make_adam_state(params);
    adam_step(params, filled_like(params, 1.0), state, TrainConfig{}, model);
    CHECK(params.centers != centers);
}

TEST_CASE("train selects the first best validation epoch and reports its test metrics") {
    const auto data = generate_dataset(tiny_data());
    const auto split = stratified_split(data, {0.6, 0.2, 0.2}, 7);
    const auto model = tiny_model();
    const auto result = train(data, split, model, quick_train(6));
    const auto& r = result.report;
    REQUIRE(r.epochs.size() == 6);
    double best = -1;
    std::size_t first = 0;
    for (const auto& e : r.epochs)
        if (e.val_auroc > best) {
            best = e.val_auroc;
            first = e.epoch;
        }
    CHECK(r.selected_epoch == first);

    const auto test_set = prepare_inputs(select_subjects(data, split.test), model);
    CHECK(evaluate(test_set, result.params, model) == r.test);
    const auto val_set = prepare_inputs(select_subjects(data, split.val), model);
    std::vector<int> val_labels;
    for (const auto& ex : val_set) val_labels.push_back(ex.label);
    CHECK(auroc(predict_scores(val_set, result.params, model), val_labels) == best);

    CHECK(result.params.centers == result.initial_params.centers);
    CHECK(r.n_train == split.train.size());
    CHECK(r.n_test == split.test.size());
}

TEST_CASE("train is deterministic") {
    const auto data = generate_dataset(tiny_data());
    const auto split = stratified_split(data, {0.6, 0.2, 0.2}, 7);
    const auto a = train(data, split, tiny_model(), quick_train(3));
    const auto b = train(data, split, tiny_model(), quick_train(3));
    CHECK(a.params == b.params);
    CHECK(serialize_report(a.report) == serialize_report(b.report));
    auto other = quick_train(3);
    other.seed = 12;
    CHECK(train(data, split, tiny_model(), other).params != a.params);
}

TEST_CASE("training lowers the loss") {
    const auto data = generate_dataset(tiny_data());
    const auto split = stratified_split(data, {0.6, 0.2, 0.2}, 8);
    const auto r = train(data, split, tiny_model(), quick_train(20)).report;
    CHECK(r.epochs[19].train_loss < r.epochs[0].train_loss);
}

TEST_CASE("train errors") {
    const auto data = generate_dataset(tiny_data());
    SplitPlan empty;
    CHECK_THROWS_AS(train(data, empty, tiny_model(), quick_train()), std::invalid_argument);
    auto split = stratified_split(data, {0.6, 0.2, 0.2}, 7);
    split.val = {split.val.front()};
    CHECK_THROWS_AS(train(data, split, tiny_model(), quick_train()), std::invalid_argument);
    auto wrong = tiny_model();
    wrong.nodes = 9;
    CHECK_THROWS(train(data, stratified_split(data, {0.6, 0.2, 0.2}, 7), wrong, quick_train()));
}

TEST_CASE("report and metrics text") {
    const auto data = generate_dataset(tiny_data());
    const auto split = stratified_split(data, {0.6, 0.2, 0.2}, 7);
    const auto result = train(data, split, tiny_model(), quick_train(2));
    const std::string text = serialize_report(result.report);
    CHECK(text.find("selected_epoch = ") != std::string::npos);
    CHECK(text.find("train.weight_decay_mode = l2_coupled") != std::string::npos);
    CHECK(text.find("epoch 2 train_loss = ") != std::string::npos);
    CHECK(metrics_csv_header() == "run_id,seed,auroc,accuracy,sensitivity,specificity\n");
    EvalResult e;
    e.auroc = 0.5;
    e.accuracy = 1.0;
    e.sensitivity = 0.25;
    CHECK(metrics_csv_row("r1", 9, e) == "r1,9,0.5,1,0.25,NA\n");
}

TEST_CASE("checkpoint round trip and errors") {
    Rng rng(6);
    for (auto readout : {Readout::OCREAD, Readout::CONCAT}) {
        auto model = tiny_model(readout, CentersMode::LEARNABLE);
        model.features = NodeFeatureMode::PROFILE_EIGEN;
        model.eigen_k = 3;
        model.mlp_hidden = {7, 5};
        const auto params = init_params(model, rng);
        const auto bytes = encode_checkpoint(model, params);
        const auto [m2, p2] = decode_checkpoint(bytes);
        CHECK(m2 == model);
        CHECK(p2 == params);
        CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "BNTM");

        auto kind_of = [](std::vector<std::uint8_t> b) {
            try {
                decode_checkpoint(b);
            } catch (const DataError& e) {
                return e.kind();
            }
            FAIL("expected DataError");
            return DataErrorKind::Io;
        };
        auto bad = bytes;
        bad[1] = 'X';
        CHECK(kind_of(bad) == DataErrorKind::BadMagic);
        bad = bytes;
        bad[4] = 9;
        CHECK(kind_of(bad) == DataErrorKind::BadVersion);
        CHECK(kind_of({bytes.begin(), bytes.end() - 3}) == DataErrorKind::Truncation);
        bad = bytes;
        bad.push_back(1);
        CHECK(kind_of(bad) == DataErrorKind::Format);
    }
    const auto path = std::filesystem::temp_directory_path() / "bnt_test_ckpt.bntm";
    const auto model = tiny_model();
    const auto params = init_params(model, rng);
    write_checkpoint(model, params, path);
    CHECK(read_checkpoint(path).second == params);
    std::filesystem::remove(path);
    CHECK_THROWS_AS(read_checkpoint(path), DataError);
}

TEST_CASE("class assignments are averaged per class, then differenced") {
    Rng rng(7);
    const auto model = tiny_model();
    const auto params = init_params(model, rng);
    const auto data = generate_dataset(tiny_data());
    const auto inputs = prepare_inputs(data, model);
    const auto ca = class_assignments(inputs, params, model);
    CHECK(ca.class0.rows() == 3);
    CHECK(ca.class0.cols() == 8);
    CHECK(ca.difference == difference_score(ca.class0, ca.class1));

    Matrix sum0(3, 8);
    std::size_t n0 = 0;
    for (const auto& ex : inputs)
        if (ex.label == 0) {
            sum0 += ocread(forward_features(ex.features, params, model).trace.output, params.centers).assignment.transpose();
            ++n0;
        }
    sum0 *= 1.0 / static_cast<double>(n0);
    CHECK(max_abs_diff(sum0, ca.class0) < 1e-14);
    // Each column of P^T sums to one, and averaging preserves that.
    for (std::size_t j = 0; j < 8; ++j) {
        double s = 0;
        for (std::size_t k = 0; k < 3; ++k) s += ca.class1(k, j);
        CHECK(std::abs(s - 1.0) < 1e-12);
    }
    CHECK_THROWS_AS(class_assignments(inputs, params, tiny_model(Readout::MEAN)), std::invalid_argument);
}

TEST_CASE("ablation sweeps cells and emits one CSV") {
    const auto data = generate_dataset(tiny_data());
    AblationSpec spec;
    spec.readouts = {Readout::OCREAD, Readout::MEAN};
    spec.centers = {CentersMode::ORTHONORMAL, CentersMode::RANDOM_UNIT};
    spec.clusters = {2, 3};
    spec.seeds = 2;
    spec.base_seed = 100;
    spec.fractions = {0.6, 0.2, 0.2};
    spec.model = tiny_model();
    spec.train = quick_train(2);
    const auto rows = run_ablation(data, spec);
    CHECK(rows.size() == (2 * 2 + 1) * 2);
    CHECK(rows[0].seed == 100);
    CHECK(rows[1].seed == 101);
    CHECK(rows[0].difference.has_value());
    CHECK(!rows.back().difference.has_value());
    const std::string csv = ablation_csv(rows);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == static_cast<long>(rows.size() + 1));
    CHECK(csv.find("mean,na,na,100,") != std::string::npos);
}
