#include "bnt/model.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "bnt/linalg.hpp"

namespace bnt {

namespace {

std::string lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
    return out;
}

// Exact GELU; smooth with bounded derivative.
double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0)); }

double gelu_grad(double x) {
    const double cdf = 0.5 * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0));
    const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
    return cdf + x * pdf;
}

// Backward of a row-wise softmax: returns P ⊙ (dP - rowsum(dP ⊙ P)).
Matrix softmax_rows_backward(const Matrix& p, const Matrix& dp) {
    Matrix out(p.rows(), p.cols());
    for (std::size_t i = 0; i < p.rows(); ++i) {
        const auto pr = p.row(i);
        const auto dr = dp.row(i);
        const double inner = dot(pr, dr);
        auto o = out.row(i);
        for (std::size_t j = 0; j < pr.size(); ++j) o[j] = pr[j] * (dr[j] - inner);
    }
    return out;
}

Matrix column_block(const Matrix& m, std::size_t first, std::size_t width) {
    Matrix out(m.rows(), width);
    for (std::size_t i = 0; i < m.rows(); ++i)
        std::copy_n(m.row(i).begin() + static_cast<std::ptrdiff_t>(first), width, out.row(i).begin());
    return out;
}

void check_layer_shapes(const Matrix& z, const AttentionLayerParams& p) {
    if (p.heads.empty()) throw DimensionError("mhsa_layer: no heads");
    const std::size_t d = p.heads.front().query.rows();
    for (const auto& h : p.heads) {
        for (const Matrix* w : {&h.query, &h.key, &h.value}) {
            if (w->rows() != d || w->cols() != z.cols())
                throw DimensionError("mhsa_layer: head weight " + shape_string(*w) + " incompatible with input " +
                                     shape_string(z));
        }
    }
    if (p.output.rows() != p.heads.size() * d)
        throw DimensionError("mhsa_layer: output projection " + shape_string(p.output) +
                             " does not match concatenated heads");
}

Matrix run_layer(const Matrix& z, const AttentionLayerParams& p, LayerTrace* trace) {
    check_layer_shapes(z, p);
    const std::size_t d = p.heads.front().query.rows();
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    Matrix concat(z.rows(), p.heads.size() * d);
    for (std::size_t m = 0; m < p.heads.size(); ++m) {
        const auto& w = p.heads[m];
        HeadTrace head{matmul_nt(z, w.query), matmul_nt(z, w.key), matmul_nt(z, w.value), {}};
        head.attention = softmax_rows(matmul_nt(head.query, head.key) * scale);
        const Matrix h = matmul(head.attention, head.value);
        for (std::size_t i = 0; i < h.rows(); ++i)
            std::copy(h.row(i).begin(), h.row(i).end(), concat.row(i).begin() + static_cast<std::ptrdiff_t>(m * d));
        if (trace) trace->heads.push_back(std::move(head));
    }
    Matrix out = matmul(concat, p.output);
    if (trace) {
        trace->input = z;
        trace->concat = std::move(concat);
    }
    return out;
}

// Accumulates parameter gradients; returns dZ_prev when `need_input_grad`.
Matrix backward_layer(const LayerTrace& t, const AttentionLayerParams& p, const Matrix& d_out,
                      AttentionLayerParams& g, bool need_input_grad) {
    const std::size_t d = p.heads.front().query.rows();
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    g.output += matmul_tn(t.concat, d_out);
    const Matrix d_concat = matmul_nt(d_out, p.output);
    Matrix d_input;
    if (need_input_grad) d_input = Matrix(t.input.rows(), t.input.cols());
    for (std::size_t m = 0; m < p.heads.size(); ++m) {
        const auto& h = t.heads[m];
        const auto& w = p.heads[m];
        const Matrix d_h = column_block(d_concat, m * d, d);
        const Matrix d_attention = matmul_nt(d_h, h.value);
        const Matrix d_value = matmul_tn(h.attention, d_h);
        const Matrix d_scores = softmax_rows_backward(h.attention, d_attention) * scale;
        const Matrix d_query = matmul(d_scores, h.key);
        const Matrix d_key = matmul_tn(d_scores, h.query);
        auto& gw = g.heads[m];
        gw.query += matmul_tn(d_query, t.input);
        gw.key += matmul_tn(d_key, t.input);
        gw.value += matmul_tn(d_value, t.input);
        if (need_input_grad) {
            d_input += matmul(d_query, w.query);
            d_input += matmul(d_key, w.key);
            d_input += matmul(d_value, w.value);
        }
    }
    return d_input;
}

void check_features(const Matrix& features, const ModelConfig& config) {
    if (features.rows() != config.nodes || features.cols() != config.input_width())
        throw DimensionError("forward: features " + shape_string(features) + " but config expects " +
                             std::to_string(config.nodes) + "x" + std::to_string(config.input_width()));
    if (!features.all_finite()) throw std::invalid_argument("forward: non-finite input");
}

}  // namespace

std::string_view to_string(Readout r) {
    switch (r) {
        case Readout::OCREAD: return "ocread";
        case Readout::MEAN: return "mean";
        case Readout::MAX: return "max";
        case Readout::SUM: return "sum";
        case Readout::CONCAT: return "concat";
    }
    return "?";
}

std::string_view to_string(CentersMode c) {
    switch (c) {
        case CentersMode::ORTHONORMAL: return "orthonormal";
        case CentersMode::RANDOM_UNIT: return "random";
        case CentersMode::LEARNABLE: return "learnable";
    }
    return "?";
}

std::string_view to_string(NodeFeatureMode f) {
    switch (f) {
        case NodeFeatureMode::PROFILE: return "profile";
        case NodeFeatureMode::PROFILE_IDENTITY: return "profile_identity";
        case NodeFeatureMode::PROFILE_EIGEN: return "profile_eigen";
    }
    return "?";
}

Readout parse_readout(std::string_view s) {
    const auto v = lower(s);
    if (v == "ocread") return Readout::OCREAD;
    if (v == "mean") return Readout::MEAN;
    if (v == "max") return Readout::MAX;
    if (v == "sum") return Readout::SUM;
    if (v == "concat") return Readout::CONCAT;
    throw std::invalid_argument("unknown readout '" + std::string(s) + "'");
}

CentersMode parse_centers_mode(std::string_view s) {
    const auto v = lower(s);
    if (v == "orthonormal") return CentersMode::ORTHONORMAL;
    if (v == "random" || v == "random_unit") return CentersMode::RANDOM_UNIT;
    if (v == "learnable") return CentersMode::LEARNABLE;
    throw std::invalid_argument("unknown centers mode '" + std::string(s) + "'");
}

NodeFeatureMode parse_feature_mode(std::string_view s) {
    const auto v = lower(s);
    if (v == "profile") return NodeFeatureMode::PROFILE;
    if (v == "profile_identity" || v == "identity") return NodeFeatureMode::PROFILE_IDENTITY;
    if (v == "profile_eigen" || v == "eigen") return NodeFeatureMode::PROFILE_EIGEN;
    throw std::invalid_argument("unknown node feature mode '" + std::string(s) + "'");
}

std::size_t ModelConfig::resolved_head_dim() const {
    if (head_dim != 0) return head_dim;
    return heads == 0 ? 0 : (nodes + heads - 1) / heads;
}

std::size_t ModelConfig::input_width() const {
    switch (features) {
        case NodeFeatureMode::PROFILE: return nodes;
        case NodeFeatureMode::PROFILE_IDENTITY: return 2 * nodes;
        case NodeFeatureMode::PROFILE_EIGEN: return nodes + eigen_k;
    }
    return nodes;
}

std::size_t ModelConfig::readout_width() const {
    switch (readout) {
        case Readout::OCREAD: return clusters * nodes;
        case Readout::CONCAT: return nodes * nodes;
        default: return nodes;
    }
}

void ModelConfig::validate() const {
    if (nodes == 0) throw std::invalid_argument("model: nodes must be >= 1");
    if (layers == 0) throw std::invalid_argument("model: layers must be >= 1");
    if (heads == 0) throw std::invalid_argument("model: heads must be >= 1");
    if (resolved_head_dim() == 0) throw std::invalid_argument("model: head_dim must be >= 1");
    if (readout == Readout::OCREAD && (clusters == 0 || clusters > nodes))
        throw std::invalid_argument("model: clusters must satisfy 1 <= K <= V for the ocread readout");
    if (features == NodeFeatureMode::PROFILE_EIGEN && eigen_k > nodes)
        throw std::invalid_argument("model: eigen_k exceeds node count");
    for (auto w : mlp_hidden)
        if (w == 0) throw std::invalid_argument("model: MLP hidden widths must be >= 1");
}

void ModelParams::for_each_tensor(const std::function<void(const std::string&, Matrix&)>& fn) {
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const std::string prefix = "layer" + std::to_string(l) + ".";
        for (std::size_t m = 0; m < layers[l].heads.size(); ++m) {
            const std::string hp = prefix + "head" + std::to_string(m) + ".";
            fn(hp + "query", layers[l].heads[m].query);
            fn(hp + "key", layers[l].heads[m].key);
            fn(hp + "value", layers[l].heads[m].value);
        }
        fn(prefix + "output", layers[l].output);
    }
    if (!centers.empty()) fn("centers", centers);
    for (std::size_t i = 0; i < mlp.size(); ++i) {
        fn("mlp" + std::to_string(i) + ".weight", mlp[i].weight);
        fn("mlp" + std::to_string(i) + ".bias", mlp[i].bias);
    }
}

void ModelParams::for_each_tensor(const std::function<void(const std::string&, const Matrix&)>& fn) const {
    const_cast<ModelParams*>(this)->for_each_tensor(
        [&](const std::string& name, Matrix& m) { fn(name, static_cast<const Matrix&>(m)); });
}

std::size_t ModelParams::parameter_count() const {
    std::size_t n = 0;
    for_each_tensor([&](const std::string&, const Matrix& m) { n += m.size(); });
    return n;
}

ModelParams zeros_like(const ModelParams& p) {
    ModelParams z = p;
    z.for_each_tensor([](const std::string&, Matrix& m) { m.fill(0.0); });
    return z;
}

bool is_learnable(const ModelConfig& config, const std::string& name) {
    if (name == "centers") return config.centers == CentersMode::LEARNABLE;
    return true;
}

ModelParams allocate_params(const ModelConfig& config) {
    config.validate();
    const std::size_t d = config.resolved_head_dim();
    ModelParams p;
    std::size_t in_width = config.input_width();
    for (std::size_t l = 0; l < config.layers; ++l) {
        AttentionLayerParams layer;
        layer.heads.assign(config.heads, AttentionHead{Matrix(d, in_width), Matrix(d, in_width), Matrix(d, in_width)});
        layer.output = Matrix(config.heads * d, config.nodes);
        p.layers.push_back(std::move(layer));
        in_width = config.nodes;
    }
    if (config.readout == Readout::OCREAD) p.centers = Matrix(config.clusters, config.nodes);
    std::size_t width = config.readout_width();
    std::vector<std::size_t> outs = config.mlp_hidden;
    outs.push_back(2);
    for (auto out : outs) {
        p.mlp.push_back({Matrix(out, width), Matrix(1, out)});
        width = out;
    }
    return p;
}

ModelParams init_params(const ModelConfig& config, Rng& rng) {
    ModelParams p = allocate_params(config);
    p.for_each_tensor([&](const std::string& name, Matrix& m) {
        if (name.ends_with(".bias")) return;
        if (name != "centers") {
            m = xavier_uniform(m.rows(), m.cols(), rng);
            return;
        }
        if (config.centers != CentersMode::ORTHONORMAL) {
            m = normalize_rows(xavier_uniform(m.rows(), m.cols(), rng));
            return;
        }
        constexpr int kAttempts = 8;
        for (int attempt = 0;; ++attempt) {
            try {
                m = gram_schmidt(xavier_uniform(m.rows(), m.cols(), rng));
                return;
            } catch (const DegenerateBasis&) {
                if (attempt + 1 >= kAttempts) throw;
            }
        }
    });
    return p;
}

Matrix node_feature(const Matrix& x, NodeFeatureMode mode, std::size_t k_eigen) {
    switch (mode) {
        case NodeFeatureMode::PROFILE: return x;
        case NodeFeatureMode::PROFILE_IDENTITY: return hconcat(x, Matrix::identity(x.rows()));
        case NodeFeatureMode::PROFILE_EIGEN: {
            if (k_eigen > x.rows())
                throw std::invalid_argument("node_feature: k_eigen " + std::to_string(k_eigen) + " exceeds V = " +
                                            std::to_string(x.rows()));
            const auto eig = symmetric_eigendecomposition(x);
            return hconcat(x, column_block(eig.vectors, 0, k_eigen));
        }
    }
    throw std::invalid_argument("node_feature: unknown mode");
}

Matrix prepare_input(const Matrix& x, const ModelConfig& config) {
    return node_feature(x, config.features, config.eigen_k);
}

Matrix mhsa_layer(const Matrix& z_prev, const AttentionLayerParams& params) {
    return run_layer(z_prev, params, nullptr);
}

OcreadOutput ocread(const Matrix& z_last, const Matrix& centers) {
    if (centers.cols() != z_last.cols())
        throw DimensionError("ocread: centers " + shape_string(centers) + " vs embeddings " + shape_string(z_last));
    OcreadOutput out;
    out.assignment = softmax_rows(matmul_nt(z_last, centers));
    out.pooled = matmul_tn(out.assignment, z_last);
    return out;
}

std::vector<double> baseline_readout(const Matrix& z_last, Readout kind) {
    const std::size_t n = z_last.rows();
    const std::size_t w = z_last.cols();
    switch (kind) {
        case Readout::MEAN:
        case Readout::SUM: {
            std::vector<double> out(w, 0.0);
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < w; ++j) out[j] += z_last(i, j);
            if (kind == Readout::MEAN)
                for (auto& v : out) v /= static_cast<double>(n);
            return out;
        }
        case Readout::MAX: {
            std::vector<double> out(z_last.row(0).begin(), z_last.row(0).end());
            for (std::size_t i = 1; i < n; ++i)
                for (std::size_t j = 0; j < w; ++j) out[j] = std::max(out[j], z_last(i, j));
            return out;
        }
        case Readout::CONCAT: return {z_last.data().begin(), z_last.data().end()};
        default: break;
    }
    throw std::invalid_argument("baseline_readout: unsupported readout '" + std::string(to_string(kind)) + "'");
}

ForwardResult forward_features(const Matrix& features, const ModelParams& params, const ModelConfig& config) {
    check_features(features, config);
    ForwardResult result;
    auto& t = result.trace;
    Matrix z = features;
    for (const auto& layer : params.layers) {
        LayerTrace lt;
        z = run_layer(z, layer, &lt);
        t.layers.push_back(std::move(lt));
    }
    t.output = z;

    std::vector<double> flat;
    if (config.readout == Readout::OCREAD) {
        auto oc = ocread(z, params.centers);
        flat.assign(oc.pooled.data().begin(), oc.pooled.data().end());
        t.assignment = std::move(oc.assignment);
        t.pooled = std::move(oc.pooled);
    } else {
        flat = baseline_readout(z, config.readout);
        if (config.readout == Readout::MAX) {
            t.argmax.assign(z.cols(), 0);
            for (std::size_t j = 0; j < z.cols(); ++j)
                for (std::size_t i = 1; i < z.rows(); ++i)
                    if (z(i, j) > z(t.argmax[j], j)) t.argmax[j] = i;
        }
    }

    std::vector<double> act = std::move(flat);
    for (std::size_t li = 0; li < params.mlp.size(); ++li) {
        const auto& dense = params.mlp[li];
        if (dense.weight.cols() != act.size())
            throw DimensionError("forward: MLP layer " + std::to_string(li) + " expects width " +
                                 std::to_string(dense.weight.cols()) + ", got " + std::to_string(act.size()));
        std::vector<double> pre(dense.weight.rows());
        for (std::size_t o = 0; o < pre.size(); ++o) pre[o] = dot(dense.weight.row(o), act) + dense.bias(0, o);
        t.activations.push_back(std::move(act));
        if (li + 1 < params.mlp.size()) {
            act.resize(pre.size());
            for (std::size_t o = 0; o < pre.size(); ++o) act[o] = gelu(pre[o]);
        }
        t.preactivations.push_back(std::move(pre));
    }
    const auto& last = t.preactivations.back();
    t.logits = {last[0], last[1]};
    result.logits = t.logits;
    return result;
}

ForwardResult forward(const Matrix& x, const ModelParams& params, const ModelConfig& config) {
    if (!x.all_finite()) throw std::invalid_argument("forward: non-finite input");
    return forward_features(prepare_input(x, config), params, config);
}

double positive_probability(const std::array<double, 2>& logits) {
    return 1.0 / (1.0 + std::exp(logits[0] - logits[1]));
}

namespace {

double cross_entropy(const std::array<double, 2>& logits, int label) {
    const double mx = std::max(logits[0], logits[1]);
    const double lse = mx + std::log(std::exp(logits[0] - mx) + std::exp(logits[1] - mx));
    return lse - logits[static_cast<std::size_t>(label)];
}

void check_batch(std::span<const LabeledInput> batch) {
    if (batch.empty()) throw std::invalid_argument("loss_and_grad: empty batch");
    for (const auto& ex : batch)
        if (ex.label != 0 && ex.label != 1) throw std::invalid_argument("loss_and_grad: labels must be 0 or 1");
}

}  // namespace

double batch_loss(std::span<const LabeledInput> batch, const ModelParams& params, const ModelConfig& config) {
    check_batch(batch);
    double total = 0.0;
    for (const auto& ex : batch) total += cross_entropy(forward_features(ex.features, params, config).logits, ex.label);
    return total / static_cast<double>(batch.size());
}

LossAndGrad loss_and_grad(std::span<const LabeledInput> batch, const ModelParams& params, const ModelConfig& config) {
    check_batch(batch);
    LossAndGrad out{0.0, zeros_like(params)};
    auto& g = out.grads;
    const double inv_batch = 1.0 / static_cast<double>(batch.size());

    for (const auto& ex : batch) {
        const auto fr = forward_features(ex.features, params, config);
        const auto& t = fr.trace;
        out.loss += cross_entropy(fr.logits, ex.label) * inv_batch;

        const double p1 = positive_probability(fr.logits);
        std::vector<double> d_pre = {(1.0 - p1) - (ex.label == 0 ? 1.0 : 0.0), p1 - (ex.label == 1 ? 1.0 : 0.0)};
        for (auto& v : d_pre) v *= inv_batch;

        std::vector<double> d_act;
        for (std::size_t li = params.mlp.size(); li-- > 0;) {
            const auto& dense = params.mlp[li];
            auto& gd = g.mlp[li];
            const auto& a = t.activations[li];
            for (std::size_t o = 0; o < d_pre.size(); ++o) {
                gd.bias(0, o) += d_pre[o];
                auto gw = gd.weight.row(o);
                for (std::size_t i = 0; i < a.size(); ++i) gw[i] += d_pre[o] * a[i];
            }
            d_act.assign(a.size(), 0.0);
            for (std::size_t o = 0; o < d_pre.size(); ++o) {
                const auto w = dense.weight.row(o);
                for (std::size_t i = 0; i < a.size(); ++i) d_act[i] += d_pre[o] * w[i];
            }
            if (li > 0) {
                const auto& prev_pre = t.preactivations[li - 1];
                d_pre.resize(prev_pre.size());
                for (std::size_t i = 0; i < prev_pre.size(); ++i) d_pre[i] = d_act[i] * gelu_grad(prev_pre[i]);
            }
        }

        const Matrix& z = t.output;
        Matrix d_z(z.rows(), z.cols());
        switch (config.readout) {
            case Readout::OCREAD: {
                const Matrix d_pooled(config.clusters, z.cols(), d_act);
                const Matrix& p = t.assignment;
                const Matrix d_assign = matmul_nt(z, d_pooled);
                d_z = matmul(p, d_pooled);
                const Matrix d_logits = softmax_rows_backward(p, d_assign);
                d_z += matmul(d_logits, params.centers);
                if (config.centers == CentersMode::LEARNABLE) g.centers += matmul_tn(d_logits, z);
                break;
            }
            case Readout::MEAN:
            case Readout::SUM: {
                const double s = config.readout == Readout::MEAN ? 1.0 / static_cast<double>(z.rows()) : 1.0;
                for (std::size_t i = 0; i < z.rows(); ++i)
                    for (std::size_t j = 0; j < z.cols(); ++j) d_z(i, j) = d_act[j] * s;
                break;
            }
            case Readout::MAX:
                for (std::size_t j = 0; j < z.cols(); ++j) d_z(t.argmax[j], j) = d_act[j];
                break;
            case Readout::CONCAT: d_z = Matrix(z.rows(), z.cols(), d_act); break;
        }

        for (std::size_t l = params.layers.size(); l-- > 0;)
            d_z = backward_layer(t.layers[l], params.layers[l], d_z, g.layers[l], l > 0);
    }
    return out;
}

}  // namespace bnt
