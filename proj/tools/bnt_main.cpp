// bnt: command-line driver for dataset generation, splitting, training,
// evaluation, ablation and theory checks.
//
// Exit codes: 0 success, 1 usage, 2 data/format/io, 3 numerical failure.

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "bnt/data.hpp"
#include "bnt/linalg.hpp"
#include "bnt/metrics.hpp"
#include "bnt/theory.hpp"
#include "bnt/training.hpp"

namespace fs = std::filesystem;
using namespace bnt;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumerical = 3;
constexpr std::uint64_t kDefaultSeed = 42;

class NumericalFailure : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string short_num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

/// Fails unless every output is absent or overwriting was requested.
void check_outputs(const std::vector<fs::path>& outputs, bool force) {
    if (force) return;
    for (const auto& p : outputs)
        if (fs::exists(p))
            throw DataError(DataErrorKind::Io, "refusing to overwrite " + p.string() + " (pass --force)");
}

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError(DataErrorKind::Io, "cannot open " + path.string() + " for writing");
    out << text;
    if (!out) throw DataError(DataErrorKind::Io, "write failed for " + path.string());
}

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError(DataErrorKind::Io, "cannot open " + path.string());
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

fs::path manifest_path_for(const fs::path& output) { return fs::path(output.string() + ".manifest"); }

/// One manifest per run. Metadata lines are comments, so the file doubles as a
/// --config input that reproduces the run.
class Run {
public:
    Run(const CLI::App& command, bool force) : command_(command), force_(force), start_(std::chrono::steady_clock::now()) {}

    void input(const fs::path& p) { inputs_.push_back(p); }
    void output(const fs::path& p) { outputs_.push_back(p); }

    void claim_outputs(const fs::path& manifest) {
        manifest_ = manifest;
        auto all = outputs_;
        all.push_back(manifest_);
        check_outputs(all, force_);
    }

    void finish() const {
        const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
        std::ostringstream os;
        os << "; bnt run manifest\n";
        os << "; command = " << command_.get_name() << '\n';
        os << "; version = " << BNT_VERSION << '\n';
        os << "; duration_seconds = " << short_num(seconds) << '\n';
        for (const auto& p : inputs_) os << "; input = " << p.string() << '\n';
        for (const auto& p : outputs_) os << "; output = " << p.string() << '\n';
        os << '[' << command_.get_name() << "]\n" << command_.config_to_str(true, false);
        write_text(manifest_, os.str());
    }

private:
    const CLI::App& command_;
    bool force_;
    std::chrono::steady_clock::time_point start_;
    std::vector<fs::path> inputs_, outputs_;
    fs::path manifest_;
};

std::array<double, 3> to_fractions(const std::vector<double>& v) {
    if (v.size() != 3) throw std::invalid_argument("--fractions needs exactly three values");
    return {v[0], v[1], v[2]};
}

void add_common(CLI::App* sub, bool& force) {
    sub->add_flag("--force", force, "Overwrite existing outputs");
}

CLI::Option* add_seed(CLI::App* sub, std::uint64_t& seed) {
    return sub->add_option("--seed", seed, "Seed (default from BNT_SEED, else 42)")->envname("BNT_SEED")->capture_default_str();
}

struct ModelFlags {
    std::size_t layers = 2, heads = 4, head_dim = 0, clusters = 4, eigen_k = 0;
    std::vector<std::size_t> mlp_hidden{256, 32};
    std::string readout = "ocread", centers = "orthonormal", features = "profile";

    void add(CLI::App* sub, bool with_sweep_fields = true) {
        sub->add_option("--layers", layers, "Attention layers")->capture_default_str();
        sub->add_option("--heads", heads, "Heads per layer")->capture_default_str();
        sub->add_option("--head-dim", head_dim, "Per-head width; 0 selects ceil(V / heads)")->capture_default_str();
        sub->add_option("--mlp-hidden", mlp_hidden, "Hidden widths of the MLP head")->delimiter(',')->capture_default_str();
        sub->add_option("--features", features, "profile | profile_identity | profile_eigen")->capture_default_str();
        sub->add_option("--eigen-k", eigen_k, "Eigenvectors appended for profile_eigen")->capture_default_str();
        if (with_sweep_fields) {
            sub->add_option("--clusters", clusters, "Cluster count K for ocread")->capture_default_str();
            sub->add_option("--readout", readout, "ocread | mean | max | sum | concat")->capture_default_str();
            sub->add_option("--centers", centers, "orthonormal | random | learnable")->capture_default_str();
        }
    }

    ModelConfig resolve(std::size_t nodes) const {
        ModelConfig c;
        c.nodes = nodes;
        c.layers = layers;
        c.heads = heads;
        c.head_dim = head_dim;
        c.clusters = clusters;
        c.mlp_hidden = mlp_hidden;
        c.readout = parse_readout(readout);
        c.centers = parse_centers_mode(centers);
        c.features = parse_feature_mode(features);
        c.eigen_k = eigen_k;
        c.validate();
        return c;
    }
};

struct TrainFlags {
    TrainConfig config;

    void add(CLI::App* sub) {
        sub->add_option("--lr", config.lr, "Adam learning rate")->capture_default_str();
        sub->add_option("--weight-decay", config.weight_decay, "L2 coefficient added to gradients")->capture_default_str();
        sub->add_option("--batch-size", config.batch_size, "Mini-batch size")->capture_default_str();
        sub->add_option("--epochs", config.epochs, "Training epochs")->capture_default_str();
        sub->add_option("--beta1", config.beta1, "Adam first-moment decay")->capture_default_str();
        sub->add_option("--beta2", config.beta2, "Adam second-moment decay")->capture_default_str();
        sub->add_option("--eps", config.eps, "Adam epsilon")->capture_default_str();
    }
};

void require_finite(const ModelParams& params) {
    params.for_each_tensor([](const std::string& name, const Matrix& m) {
        if (!m.all_finite()) throw NumericalFailure("non-finite values in trained tensor " + name);
    });
}

std::vector<std::uint32_t> subset_ids(const SplitPlan& plan, const std::string& subset) {
    if (subset == "train") return plan.train;
    if (subset == "val") return plan.val;
    if (subset == "test") return plan.test;
    throw std::invalid_argument("--subset must be train, val or test");
}

std::size_t dataset_nodes(const std::vector<ConnectivityGraph>& graphs) {
    if (graphs.empty()) throw DataError(DataErrorKind::Format, "dataset is empty");
    return graphs.front().matrix.rows();
}

// ---------------------------------------------------------------- generate

struct GenerateCmd {
    GeneratorSpec spec;
    std::string out;
    bool force = false;

    void add(CLI::App& app) {
        auto* sub = app.add_subcommand("generate", "Synthesize a planted-module connectivity dataset");
        add_common(sub, force);
        spec.seed = kDefaultSeed;
        sub->add_option("--out", out, "Output dataset file")->required();
        sub->add_option("--nodes", spec.nodes, "Nodes per network")->capture_default_str();
        sub->add_option("--modules", spec.modules, "Planted functional modules")->capture_default_str();
        sub->add_option("--subjects-per-class", spec.subjects_per_class, "Subjects per class")->capture_default_str();
        sub->add_option("--sites", spec.sites, "Acquisition sites")->capture_default_str();
        sub->add_option("--within", spec.within_strength, "Own-module latent weight, in (0, 1)")->capture_default_str();
        sub->add_option("--between0", spec.between_strength_class0, "Cross-module mixing, class 0")->capture_default_str();
        sub->add_option("--between1", spec.between_strength_class1, "Cross-module mixing, class 1")->capture_default_str();
        sub->add_option("--site-noise", spec.site_noise, "Scale of the per-site additive signal")->capture_default_str();
        sub->add_option("--series-length", spec.series_length, "Samples per node series")->capture_default_str();
        add_seed(sub, spec.seed);
        sub->callback([this, sub] { run(*sub); });
    }

    void run(const CLI::App& sub) {
        spec.validate();
        Run r(sub, force);
        r.output(out);
        r.claim_outputs(manifest_path_for(out));
        const auto graphs = generate_dataset(spec);
        write_dataset(graphs, out, static_cast<std::uint32_t>(spec.nodes));
        r.finish();
        std::cout << "wrote " << graphs.size() << " subjects to " << out << '\n';
    }
};

// ---------------------------------------------------------------- split

struct SplitCmd {
    std::string dataset, out;
    std::vector<double> fractions{0.7, 0.1, 0.2};
    std::uint64_t seed = kDefaultSeed;
    bool no_stratify = false;
    bool force = false;

    void add(CLI::App& app) {
        auto* sub = app.add_subcommand("split", "Partition a dataset into train/val/test");
        add_common(sub, force);
        sub->add_option("--dataset", dataset, "Input dataset file")->required();
        sub->add_option("--out", out, "Output split plan")->required();
        sub->add_option("--fractions", fractions, "train,val,test fractions")->delimiter(',')->expected(3)->capture_default_str();
        sub->add_flag("--no-stratify", no_stratify, "Plain random split ignoring site and label");
        add_seed(sub, seed);
        sub->callback([this, sub] { run(*sub); });
    }

    void run(const CLI::App& sub) {
        Run r(sub, force);
        r.input(dataset);
        r.output(out);
        r.claim_outputs(manifest_path_for(out));
        const auto graphs = read_dataset(dataset);
        const auto f = to_fractions(fractions);
        const auto plan = no_stratify ? random_split(graphs, f, seed) : stratified_split(graphs, f, seed);
        write_split(plan, out);
        r.finish();
        for (const auto& w : plan.warnings) std::cerr << "warning: " << w << '\n';
        std::cout << "train " << plan.train.size() << " val " << plan.val.size() << " test " << plan.test.size() << '\n';
    }
};

// ---------------------------------------------------------------- train

struct TrainCmd {
    std::string dataset, split, out;
    ModelFlags model;
    TrainFlags train_flags;
    bool force = false;

    void add(CLI::App& app) {
        auto* sub = app.add_subcommand("train", "Train a model and keep the best-validation snapshot");
        add_common(sub, force);
        sub->add_option("--dataset", dataset, "Input dataset file")->required();
        sub->add_option("--split", split, "Split plan")->required();
        sub->add_option("--out", out, "Output directory (model.bntm, report.txt, metrics.csv)")->required();
        model.add(sub);
        train_flags.add(sub);
        train_flags.config.seed = kDefaultSeed;
        add_seed(sub, train_flags.config.seed);
        sub->callback([this, sub] { run(*sub); });
    }

    void run(const CLI::App& sub) {
        const fs::path dir(out);
        Run r(sub, force);
        r.input(dataset);
        r.input(split);
        r.output(dir / "model.bntm");
        r.output(dir / "report.txt");
        r.output(dir / "metrics.csv");
        r.claim_outputs(dir / "manifest.ini");

        const auto graphs = read_dataset(dataset);
        const auto plan = read_split(split);
        const auto config = model.resolve(dataset_nodes(graphs));
        train_flags.config.validate();
        const auto result = train(graphs, plan, config, train_flags.config);
        require_finite(result.params);
        for (const auto& e : result.report.epochs)
            if (!std::isfinite(e.train_loss)) throw NumericalFailure("non-finite training loss at epoch " + std::to_string(e.epoch));

        fs::create_directories(dir);
        write_checkpoint(config, result.params, dir / "model.bntm");
        write_text(dir / "report.txt", serialize_report(result.report));
        write_text(dir / "metrics.csv",
                   metrics_csv_header() + metrics_csv_row(dir.filename().string(), train_flags.config.seed, result.report.test));
        r.finish();
        std::cout << "selected_epoch = " << result.report.selected_epoch << '\n';
        std::cout << "test.auroc = " << format_metric(result.report.test.auroc) << '\n';
        std::cout << "test.accuracy = " << format_metric(result.report.test.accuracy) << '\n';
    }
};

// ---------------------------------------------------------------- eval

struct EvalCmd {
    std::string checkpoint, dataset, split, subset = "test", out, run_id;
    std::vector<std::string> aggregate;
    bool force = false;

    void add(CLI::App& app) {
        auto* sub = app.add_subcommand("eval", "Evaluate a checkpoint, or aggregate metric CSVs (mean and population std)");
        add_common(sub, force);
        auto* ck = sub->add_option("--checkpoint", checkpoint, "Model checkpoint");
        auto* ds = sub->add_option("--dataset", dataset, "Dataset file");
        auto* sp = sub->add_option("--split", split, "Split plan");
        sub->add_option("--subset", subset, "train | val | test")->capture_default_str();
        sub->add_option("--run-id", run_id, "Run identifier for the CSV row (default: checkpoint directory name)");
        auto* ag = sub->add_option("--aggregate", aggregate, "Metric CSVs to aggregate");
        ag->excludes(ck)->excludes(ds)->excludes(sp);
        sub->add_option("--out", out, "Output CSV")->required();
        sub->callback([this, sub] { run(*sub); });
    }

    void run(const CLI::App& sub) {
        Run r(sub, force);
        r.output(out);
        if (!aggregate.empty()) {
            for (const auto& a : aggregate) r.input(a);
            r.claim_outputs(manifest_path_for(out));
            run_aggregate();
        } else {
            if (checkpoint.empty() || dataset.empty() || split.empty())
                throw CLI::ValidationError("eval needs --checkpoint, --dataset and --split, or --aggregate");
            r.input(checkpoint);
            r.input(dataset);
            r.input(split);
            r.claim_outputs(manifest_path_for(out));
            run_single();
        }
        r.finish();
    }

    void run_single() {
        const auto [config, params] = read_checkpoint(checkpoint);
        const auto graphs = read_dataset(dataset);
        const auto plan = read_split(split);
        const auto ids = subset_ids(plan, subset);
        const auto inputs = prepare_inputs(select_subjects(graphs, ids), config);
        const auto result = evaluate(inputs, params, config);
        const std::string id = run_id.empty() ? fs::path(checkpoint).parent_path().filename().string() : run_id;
        write_text(out, metrics_csv_header() + metrics_csv_row(id, plan.seed, result));
        std::cout << "auroc = " << format_metric(result.auroc) << '\n';
        std::cout << "accuracy = " << format_metric(result.accuracy) << '\n';
        std::cout << "sensitivity = " << format_metric(result.sensitivity) << '\n';
        std::cout << "specificity = " << format_metric(result.specificity) << '\n';
    }

    void run_aggregate() {
        static const char* kMetrics[] = {"auroc", "accuracy", "sensitivity", "specificity"};
        std::map<std::string, std::vector<std::optional<double>>> values;
        const std::string header = metrics_csv_header();
        for (const auto& path : aggregate) {
            std::istringstream in(read_text(path));
            std::string line;
            if (!std::getline(in, line) || line + "\n" != header)
                throw DataError(DataErrorKind::Format, path + ": not a metrics CSV");
            while (std::getline(in, line)) {
                if (line.empty()) continue;
                std::vector<std::string> cells;
                std::stringstream ls(line);
                for (std::string c; std::getline(ls, c, ',');) cells.push_back(c);
                if (cells.size() != 6) throw DataError(DataErrorKind::Format, path + ": malformed row '" + line + "'");
                for (int m = 0; m < 4; ++m) {
                    const std::string& c = cells[2 + m];
                    if (c == "NA") {
                        values[kMetrics[m]].push_back(std::nullopt);
                        continue;
                    }
                    try {
                        values[kMetrics[m]].push_back(std::stod(c));
                    } catch (const std::exception&) {
                        throw DataError(DataErrorKind::Format, path + ": bad number '" + c + "'");
                    }
                }
            }
        }
        std::string csv = "metric,mean,std,count\n";
        for (const char* m : kMetrics) {
            const auto ms = mean_std(values[m]);
            const std::string mean = ms.count ? num(ms.mean) : "NA";
            const std::string sd = ms.count ? num(ms.stddev) : "NA";
            csv += std::string(m) + "," + mean + "," + sd + "," + std::to_string(ms.count) + "\n";
            std::cout << m << " = " << (ms.count ? short_num(ms.mean) : "NA") << " +/- "
                      << (ms.count ? short_num(ms.stddev) : "NA") << " (n = " << ms.count << ")\n";
        }
        write_text(out, csv);
    }
};

// ---------------------------------------------------------------- verify-theory

struct TheoryCmd {
    std::string mode = "2d", out;
    double radius = 3.0, cosine = 0.5;
    std::size_t quad_nodes = 256, samples = 1000000, nodes = 8, clusters = 4;
    unsigned threads = 1;
    std::uint64_t seed = kDefaultSeed;
    bool force = false;

    void add(CLI::App& app) {
        auto* sub = app.add_subcommand("verify-theory", "Numerical checks of the orthonormal-center and VIF results");
        add_common(sub, force);
        sub->add_option("--mode", mode, "2d | mc | vif")->check(CLI::IsMember({"2d", "mc", "vif"}))->capture_default_str();
        sub->add_option("--out", out, "Output CSV")->required();
        sub->add_option("--radius", radius, "Ball radius r")->capture_default_str();
        sub->add_option("--quad-nodes", quad_nodes, "Quadrature nodes per axis (>= 64)")->capture_default_str();
        sub->add_option("--samples", samples, "Monte Carlo samples per geometry")->capture_default_str();
        sub->add_option("--nodes", nodes, "Ambient dimension V for mc")->capture_default_str();
        sub->add_option("--clusters", clusters, "Center count K for mc")->capture_default_str();
        sub->add_option("--cosine", cosine, "Pairwise cosine of the correlated centers")->capture_default_str();
        sub->add_option("--threads", threads, "Monte Carlo worker threads")->capture_default_str();
        add_seed(sub, seed);
        sub->callback([this, sub] { run(*sub); });
    }

    void run(const CLI::App& sub) {
        Run r(sub, force);
        r.output(out);
        r.claim_outputs(manifest_path_for(out));
        std::string csv;
        if (mode == "2d") csv = run_2d();
        else if (mode == "mc") csv = run_mc();
        else csv = run_vif();
        write_text(out, csv);
        r.finish();
    }

    std::string run_2d() const {
        std::string csv = "phi,estimate,convergence_error\n";
        std::cout << "# variance functional, two unit centers at angle phi, r = " << short_num(radius) << '\n';
        for (int k = 0; k <= 8; ++k) {
            const double phi = k * std::numbers::pi / 16.0;
            const auto q = variance_functional_2d_checked(phi, radius, quad_nodes);
            csv += num(phi) + "," + num(q.value) + "," + num(q.convergence_error) + "\n";
            std::cout << "phi = " << k << "pi/16  F = " << short_num(q.value) << "  convergence_error = "
                      << short_num(q.convergence_error) << '\n';
        }
        return csv;
    }

    std::string run_mc() const {
        Rng rng(seed);
        Matrix ortho;
        for (int attempt = 0;; ++attempt) {
            try {
                ortho = gram_schmidt(xavier_uniform(clusters, nodes, rng));
                break;
            } catch (const DegenerateBasis&) {
                if (attempt == 7) throw;
            }
        }
        const Matrix corr = equicorrelated_unit_centers(clusters, nodes, cosine);
        const auto a = variance_functional_mc(ortho, radius, samples, rng, threads);
        const auto b = variance_functional_mc(corr, radius, samples, rng, threads);
        const double se = std::hypot(a.standard_error, b.standard_error);
        std::string csv = "geometry,estimate,standard_error\n";
        csv += "orthonormal," + num(a.value) + "," + num(a.standard_error) + "\n";
        csv += "cosine_" + short_num(cosine) + "," + num(b.value) + "," + num(b.standard_error) + "\n";
        std::cout << "# variance functional, V = " << nodes << ", K = " << clusters << ", r = " << short_num(radius)
                  << ", n = " << samples << '\n';
        std::cout << "orthonormal      " << short_num(a.value) << " +/- " << short_num(a.standard_error) << '\n';
        std::cout << "cosine " << short_num(cosine) << "       " << short_num(b.value) << " +/- " << short_num(b.standard_error)
                  << '\n';
        std::cout << "difference / combined_se = " << short_num((a.value - b.value) / se) << '\n';
        return csv;
    }

    std::string run_vif() const {
        Rng rng(seed);
        std::string csv = "design,variable,vif,r_squared\n";
        auto emit = [&](const std::string& name, const VifReport& rep) {
            for (std::size_t p = 0; p < rep.vif.size(); ++p) {
                csv += name + "," + std::to_string(p) + "," + num(rep.vif[p]) + "," + num(rep.r_squared[p]) + "\n";
                std::cout << name << " variable " << p << "  VIF = " << short_num(rep.vif[p]) << '\n';
            }
            std::cout << name << " mean VIF = " << short_num(rep.mean_vif) << '\n';
        };
        emit("orthogonal", vif(orthogonal_design(1000, 4, rng)));
        emit("rho_0.9", vif(correlated_design(10000, 0.9, rng)));
        return csv;
    }
};

// ---------------------------------------------------------------- export-assignments

struct ExportCmd {
    std::string checkpoint, dataset, split, subset = "test", out;
    bool force = false;

    void add(CLI::App& app) {
        auto* sub = app.add_subcommand("export-assignments", "Export class-averaged soft assignments and their difference score");
        add_common(sub, force);
        sub->add_option("--checkpoint", checkpoint, "Model checkpoint (ocread readout)")->required();
        sub->add_option("--dataset", dataset, "Dataset file")->required();
        sub->add_option("--split", split, "Split plan")->required();
        sub->add_option("--subset", subset, "train | val | test")->capture_default_str();
        sub->add_option("--out", out, "Output CSV")->required();
        sub->callback([this, sub] { run(*sub); });
    }

    void run(const CLI::App& sub) {
        Run r(sub, force);
        r.input(checkpoint);
        r.input(dataset);
        r.input(split);
        r.output(out);
        r.claim_outputs(manifest_path_for(out));
        const auto [config, params] = read_checkpoint(checkpoint);
        const auto graphs = read_dataset(dataset);
        const auto inputs = prepare_inputs(select_subjects(graphs, subset_ids(read_split(split), subset)), config);
        const auto ca = class_assignments(inputs, params, config);
        std::string csv = "class,cluster,node,value,difference_score\n";
        const std::string d = num(ca.difference);
        for (int label : {0, 1}) {
            const Matrix& m = label == 0 ? ca.class0 : ca.class1;
            for (std::size_t k = 0; k < m.rows(); ++k)
                for (std::size_t j = 0; j < m.cols(); ++j)
                    csv += std::to_string(label) + "," + std::to_string(k) + "," + std::to_string(j) + "," + num(m(k, j)) +
                           "," + d + "\n";
        }
        write_text(out, csv);
        r.finish();
        std::cout << "difference_score = " << d << '\n';
    }
};

// ---------------------------------------------------------------- ablate

struct AblateCmd {
    std::string dataset, out;
    std::vector<std::string> readouts{"ocread", "mean", "max", "sum", "concat"};
    std::vector<std::string> centers{"orthonormal"};
    std::vector<std::size_t> clusters{4};
    std::vector<double> fractions{0.7, 0.1, 0.2};
    std::size_t seeds = 5;
    std::uint64_t seed = kDefaultSeed;
    ModelFlags model;
    TrainFlags train_flags;
    bool force = false;

    void add(CLI::App& app) {
        auto* sub = app.add_subcommand("ablate", "Sweep readouts x centers x K over several seeds into one CSV");
        add_common(sub, force);
        sub->add_option("--dataset", dataset, "Input dataset file")->required();
        sub->add_option("--out", out, "Output CSV")->required();
        sub->add_option("--readouts", readouts, "Readouts to sweep")->delimiter(',')->capture_default_str();
        sub->add_option("--centers", centers, "Center modes to sweep (ocread only)")->delimiter(',')->capture_default_str();
        sub->add_option("--clusters", clusters, "Cluster counts to sweep (ocread only)")->delimiter(',')->capture_default_str();
        sub->add_option("--seeds", seeds, "Runs per cell; run i uses seed + i for split and training")->capture_default_str();
        sub->add_option("--fractions", fractions, "train,val,test fractions")->delimiter(',')->expected(3)->capture_default_str();
        model.add(sub, false);
        train_flags.add(sub);
        add_seed(sub, seed);
        sub->callback([this, sub] { run(*sub); });
    }

    void run(const CLI::App& sub) {
        Run r(sub, force);
        r.input(dataset);
        r.output(out);
        r.claim_outputs(manifest_path_for(out));
        const auto graphs = read_dataset(dataset);
        AblationSpec spec;
        spec.readouts.clear();
        for (const auto& s : readouts) spec.readouts.push_back(parse_readout(s));
        spec.centers.clear();
        for (const auto& s : centers) spec.centers.push_back(parse_centers_mode(s));
        spec.clusters = clusters;
        spec.seeds = seeds;
        spec.base_seed = seed;
        spec.fractions = to_fractions(fractions);
        spec.model = model.resolve(dataset_nodes(graphs));
        for (auto k : clusters) {
            ModelConfig probe = spec.model;
            probe.clusters = k;
            probe.validate();
        }
        spec.train = train_flags.config;
        spec.train.validate();
        const auto rows = run_ablation(graphs, spec);
        write_text(out, ablation_csv(rows));
        r.finish();
        std::cout << "wrote " << rows.size() << " runs to " << out << '\n';
    }
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Brain-network transformer with orthonormal clustering readout"};
    app.set_version_flag("--version", BNT_VERSION);
    app.require_subcommand(1);
    app.set_config("--config", "", "key=value file with a [command] section; command-line flags take precedence");
    app.allow_config_extras(CLI::config_extras_mode::error);

    GenerateCmd generate;
    SplitCmd split;
    TrainCmd train_cmd;
    EvalCmd eval;
    TheoryCmd theory;
    ExportCmd export_cmd;
    AblateCmd ablate;
    generate.add(app);
    split.add(app);
    train_cmd.add(app);
    eval.add(app);
    theory.add(app);
    export_cmd.add(app);
    ablate.add(app);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    } catch (const DataError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitData;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitData;
    } catch (const DegenerateBasis& e) {
        std::cerr << "numerical failure: " << e.what() << '\n';
        return kExitNumerical;
    } catch (const NumericalFailure& e) {
        std::cerr << "numerical failure: " << e.what() << '\n';
        return kExitNumerical;
    } catch (const std::domain_error& e) {
        std::cerr << "numerical failure: " << e.what() << '\n';
        return kExitNumerical;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitData;
    }
    return 0;
}
