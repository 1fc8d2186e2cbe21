#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <cstring>

#include "bnt/data.hpp"
#include "bnt/linalg.hpp"
#include "bnt/metrics.hpp"
#include "bnt/model.hpp"
#include "bnt/theory.hpp"
#include "bnt/training.hpp"

namespace py = pybind11;
using namespace bnt;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Matrix to_matrix(const Array& a) {
    if (a.ndim() != 2) throw std::invalid_argument("expected a 2-D array");
    Matrix m(static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)));
    std::memcpy(m.data().data(), a.data(), m.size() * sizeof(double));
    return m;
}

Array to_array(const Matrix& m) {
    Array a({m.rows(), m.cols()});
    std::memcpy(a.mutable_data(), m.data().data(), m.size() * sizeof(double));
    return a;
}

py::dict eval_dict(const EvalResult& r) {
    py::dict d;
    d["auroc"] = r.auroc;
    d["accuracy"] = r.accuracy;
    d["sensitivity"] = r.sensitivity;
    d["specificity"] = r.specificity;
    d["n_pos"] = r.n_pos;
    d["n_neg"] = r.n_neg;
    return d;
}

/// Dataset as (matrices[n, V, V], labels[n], sites[n], subject_ids[n]).
py::tuple dataset_arrays(std::span<const ConnectivityGraph> graphs) {
    const std::size_t n = graphs.size();
    const std::size_t v = n ? graphs[0].matrix.rows() : 0;
    Array mats({n, v, v});
    py::array_t<int> labels(n);
    py::array_t<int> sites(n);
    py::array_t<std::uint32_t> ids(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::memcpy(mats.mutable_data() + i * v * v, graphs[i].matrix.data().data(), v * v * sizeof(double));
        labels.mutable_at(i) = graphs[i].label;
        sites.mutable_at(i) = graphs[i].site;
        ids.mutable_at(i) = graphs[i].subject_id;
    }
    return py::make_tuple(mats, labels, sites, ids);
}

std::vector<ConnectivityGraph> dataset_from_arrays(const py::array_t<double, py::array::c_style | py::array::forcecast>& mats,
                                                   const std::vector<int>& labels, const std::vector<int>& sites) {
    if (mats.ndim() != 3 || mats.shape(1) != mats.shape(2))
        throw std::invalid_argument("matrices must have shape (n, V, V)");
    const auto n = static_cast<std::size_t>(mats.shape(0));
    const auto v = static_cast<std::size_t>(mats.shape(1));
    if (labels.size() != n || sites.size() != n) throw std::invalid_argument("labels and sites must have length n");
    std::vector<ConnectivityGraph> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        out[i].subject_id = static_cast<std::uint32_t>(i);
        out[i].label = labels[i];
        out[i].site = static_cast<std::uint16_t>(sites[i]);
        out[i].matrix = Matrix(v, v);
        std::memcpy(out[i].matrix.data().data(), mats.data() + i * v * v, v * v * sizeof(double));
    }
    return out;
}

py::dict split_dict(const SplitPlan& p) {
    py::dict d;
    d["train"] = p.train;
    d["val"] = p.val;
    d["test"] = p.test;
    d["warnings"] = p.warnings;
    return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Brain network transformer with orthonormal-cluster readout";
    m.attr("__version__") = BNT_VERSION;

    py::register_exception<DimensionError>(m, "DimensionError", PyExc_ValueError);
    py::register_exception<DegenerateBasis>(m, "DegenerateBasis", PyExc_ArithmeticError);
    py::register_exception<DataError>(m, "DataError", PyExc_IOError);

    // linalg
    m.def("gram_schmidt", [](const Array& c) { return to_array(gram_schmidt(to_matrix(c))); }, py::arg("c"),
          "Orthonormalize the rows of c (modified Gram-Schmidt).");
    m.def(
        "xavier_uniform",
        [](std::size_t rows, std::size_t cols, std::uint64_t seed) {
            Rng rng(seed);
            return to_array(xavier_uniform(rows, cols, rng));
        },
        py::arg("rows"), py::arg("cols"), py::arg("seed") = 0);
    m.def(
        "symmetric_eigh",
        [](const Array& a) {
            const auto e = symmetric_eigendecomposition(to_matrix(a));
            return py::make_tuple(e.values, to_array(e.vectors));
        },
        py::arg("a"), "Eigenvalues (descending) and eigenvectors (columns) of a symmetric matrix.");

    // model
    py::class_<ModelConfig>(m, "ModelConfig")
        .def(py::init<>())
        .def_readwrite("nodes", &ModelConfig::nodes)
        .def_readwrite("layers", &ModelConfig::layers)
        .def_readwrite("heads", &ModelConfig::heads)
        .def_readwrite("clusters", &ModelConfig::clusters)
        .def_readwrite("head_dim", &ModelConfig::head_dim)
        .def_readwrite("mlp_hidden", &ModelConfig::mlp_hidden)
        .def_readwrite("eigen_k", &ModelConfig::eigen_k)
        .def_property(
            "readout", [](const ModelConfig& c) { return std::string(to_string(c.readout)); },
            [](ModelConfig& c, const std::string& s) { c.readout = parse_readout(s); })
        .def_property(
            "centers", [](const ModelConfig& c) { return std::string(to_string(c.centers)); },
            [](ModelConfig& c, const std::string& s) { c.centers = parse_centers_mode(s); })
        .def_property(
            "features", [](const ModelConfig& c) { return std::string(to_string(c.features)); },
            [](ModelConfig& c, const std::string& s) { c.features = parse_feature_mode(s); })
        .def("validate", &ModelConfig::validate);

    py::class_<ModelParams>(m, "ModelParams")
        .def("tensors",
             [](const ModelParams& p) {
                 py::dict d;
                 p.for_each_tensor([&](const std::string& name, const Matrix& t) { d[py::str(name)] = to_array(t); });
                 return d;
             })
        .def_property_readonly("centers", [](const ModelParams& p) { return to_array(p.centers); });

    m.def(
        "init_params",
        [](const ModelConfig& c, std::uint64_t seed) {
            Rng rng(seed);
            return init_params(c, rng);
        },
        py::arg("config"), py::arg("seed") = 0);
    m.def(
        "forward",
        [](const Array& x, const ModelParams& params, const ModelConfig& c) {
            const auto r = forward(to_matrix(x), params, c);
            py::dict d;
            d["logits"] = r.logits;
            d["probability"] = positive_probability(r.logits);
            d["embedding"] = to_array(r.trace.output);
            if (c.readout == Readout::OCREAD) d["assignment"] = to_array(r.trace.assignment);
            return d;
        },
        py::arg("x"), py::arg("params"), py::arg("config"));
    m.def(
        "ocread",
        [](const Array& z, const Array& centers) {
            const auto r = ocread(to_matrix(z), to_matrix(centers));
            return py::make_tuple(to_array(r.assignment), to_array(r.pooled));
        },
        py::arg("z"), py::arg("centers"), "Soft assignment P = softmax(Z E^T) and pooled P^T Z.");
    m.def(
        "node_feature",
        [](const Array& x, const std::string& mode, std::size_t k) {
            return to_array(node_feature(to_matrix(x), parse_feature_mode(mode), k));
        },
        py::arg("x"), py::arg("mode") = "profile", py::arg("k") = 0);

    // data
    m.def(
        "generate_dataset",
        [](std::size_t nodes, std::size_t modules, std::size_t subjects_per_class, std::size_t sites, double within,
           double between0, double between1, double site_noise, std::size_t series_length, std::uint64_t seed) {
            GeneratorSpec s;
            s.nodes = nodes;
            s.modules = modules;
            s.subjects_per_class = subjects_per_class;
            s.sites = sites;
            s.within_strength = within;
            s.between_strength_class0 = between0;
            s.between_strength_class1 = between1;
            s.site_noise = site_noise;
            s.series_length = series_length;
            s.seed = seed;
            return dataset_arrays(generate_dataset(s));
        },
        py::arg("nodes") = 32, py::arg("modules") = 4, py::arg("subjects_per_class") = 200, py::arg("sites") = 4,
        py::arg("within") = 0.9, py::arg("between0") = 0.15, py::arg("between1") = 0.35, py::arg("site_noise") = 0.5,
        py::arg("series_length") = 256, py::arg("seed") = 42,
        "Synthetic cohort as (matrices, labels, sites, subject_ids).");
    m.def(
        "read_dataset", [](const std::filesystem::path& p) { return dataset_arrays(read_dataset(p)); }, py::arg("path"));
    m.def(
        "stratified_split",
        [](const std::vector<int>& labels, const std::vector<int>& sites, std::array<double, 3> fractions,
           std::uint64_t seed) {
            if (labels.size() != sites.size()) throw std::invalid_argument("labels and sites differ in length");
            std::vector<ConnectivityGraph> graphs(labels.size());
            for (std::size_t i = 0; i < graphs.size(); ++i)
                graphs[i] = {static_cast<std::uint32_t>(i), labels[i], static_cast<std::uint16_t>(sites[i]), Matrix()};
            return split_dict(stratified_split(graphs, fractions, seed));
        },
        py::arg("labels"), py::arg("sites"), py::arg("fractions") = std::array<double, 3>{0.7, 0.1, 0.2},
        py::arg("seed") = 0, "Subject indices per part, stratified by (site, label).");
    m.def("largest_remainder", [](std::size_t n, const std::vector<double>& f) { return largest_remainder(n, f); },
          py::arg("n"), py::arg("fractions"));

    // metrics
    m.def(
        "auroc", [](const std::vector<double>& s, const std::vector<int>& y) { return auroc(s, y); },
        py::arg("scores"), py::arg("labels"));
    m.def(
        "threshold_metrics",
        [](const std::vector<double>& s, const std::vector<int>& y, double t) {
            return eval_dict(threshold_metrics(s, y, t));
        },
        py::arg("scores"), py::arg("labels"), py::arg("threshold") = 0.5);
    m.def(
        "difference_score",
        [](const Array& a, const Array& b) { return difference_score(to_matrix(a), to_matrix(b)); }, py::arg("p_class0"),
        py::arg("p_class1"));

    // training
    py::class_<TrainConfig>(m, "TrainConfig")
        .def(py::init<>())
        .def_readwrite("lr", &TrainConfig::lr)
        .def_readwrite("weight_decay", &TrainConfig::weight_decay)
        .def_readwrite("batch_size", &TrainConfig::batch_size)
        .def_readwrite("epochs", &TrainConfig::epochs)
        .def_readwrite("beta1", &TrainConfig::beta1)
        .def_readwrite("beta2", &TrainConfig::beta2)
        .def_readwrite("eps", &TrainConfig::eps)
        .def_readwrite("seed", &TrainConfig::seed)
        .def("validate", &TrainConfig::validate);
    m.def(
        "train",
        [](const Array& matrices, const std::vector<int>& labels, const std::vector<int>& sites,
           std::array<double, 3> fractions, std::uint64_t split_seed, const ModelConfig& model, const TrainConfig& tc) {
            const auto graphs = dataset_from_arrays(matrices, labels, sites);
            const auto plan = stratified_split(graphs, fractions, split_seed);
            TrainResult r;
            {
                py::gil_scoped_release release;
                r = train(graphs, plan, model, tc);
            }
            py::dict d;
            d["params"] = std::move(r.params);
            d["selected_epoch"] = r.report.selected_epoch;
            d["test"] = eval_dict(r.report.test);
            std::vector<double> loss, val;
            for (const auto& e : r.report.epochs) {
                loss.push_back(e.train_loss);
                val.push_back(e.val_auroc);
            }
            d["train_loss"] = loss;
            d["val_auroc"] = val;
            d["split"] = split_dict(plan);
            return d;
        },
        py::arg("matrices"), py::arg("labels"), py::arg("sites"),
        py::arg("fractions") = std::array<double, 3>{0.7, 0.1, 0.2}, py::arg("split_seed") = 0, py::arg("model"),
        py::arg("train"));

    // theory
    m.def(
        "variance_functional_mc",
        [](const Array& centers, double radius, std::size_t n, std::uint64_t seed, unsigned threads) {
            Rng rng(seed);
            VarianceFunctionalEstimate e;
            {
                const Matrix c = to_matrix(centers);
                py::gil_scoped_release release;
                e = variance_functional_mc(c, radius, n, rng, threads);
            }
            return py::make_tuple(e.value, e.standard_error);
        },
        py::arg("centers"), py::arg("radius"), py::arg("n"), py::arg("seed") = 0, py::arg("threads") = 1,
        "Monte Carlo (estimate, standard error) over the radius-r ball.");
    m.def(
        "variance_functional_2d",
        [](double phi, double radius, std::size_t nodes) {
            const auto q = variance_functional_2d_checked(phi, radius, nodes);
            return py::make_tuple(q.value, q.convergence_error);
        },
        py::arg("phi"), py::arg("radius") = 3.0, py::arg("quad_nodes") = 256,
        "Quadrature (value, convergence error) for two unit centers at angle phi.");
    m.def(
        "equicorrelated_unit_centers",
        [](std::size_t k, std::size_t v, double cosine) { return to_array(equicorrelated_unit_centers(k, v, cosine)); },
        py::arg("k"), py::arg("v"), py::arg("cosine"));
    m.def(
        "vif",
        [](const Array& design) {
            const auto r = vif(to_matrix(design));
            return py::make_tuple(r.vif, r.r_squared, r.mean_vif);
        },
        py::arg("design"), "Per-column (VIF, R^2) and the mean VIF.");
}
