#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "bnt/data.hpp"
#include "bnt/metrics.hpp"
#include "bnt/model.hpp"

namespace bnt {

struct TrainConfig {
    double lr = 1e-4;
    double weight_decay = 1e-4;
    std::size_t batch_size = 64;
    std::size_t epochs = 200;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::uint64_t seed = 0;

    /// Throws std::invalid_argument on out-of-range values.
    void validate() const;
};

/// Weight decay is added to the gradient (classic Adam with L2), not decoupled.
inline constexpr const char* kWeightDecayMode = "l2_coupled";

struct AdamState {
    ModelParams first_moment;
    ModelParams second_moment;
    std::uint64_t step = 0;
};

AdamState make_adam_state(const ModelParams& params);

/// One bias-corrected Adam update. Tensors that are not learnable under
/// `model` (frozen centers) are left untouched.
void adam_step(ModelParams& params, const ModelParams& grads, AdamState& state, const TrainConfig& config,
               const ModelConfig& model);

struct EpochRecord {
    std::size_t epoch = 0;  ///< 1-based
    double train_loss = 0.0;
    double val_auroc = 0.0;
};

struct TrainReport {
    std::vector<EpochRecord> epochs;
    std::size_t selected_epoch = 0;
    EvalResult test;
    ModelConfig model;
    TrainConfig train;
    std::uint64_t split_seed = 0;
    std::size_t n_train = 0, n_val = 0, n_test = 0;
};

struct TrainResult {
    ModelParams params;  ///< snapshot at selected_epoch
    ModelParams initial_params;
    TrainReport report;
};

/// Prepared examples for `graphs` under `config`.
std::vector<LabeledInput> prepare_inputs(std::span<const ConnectivityGraph> graphs, const ModelConfig& config);

/// Positive-class probabilities for each example.
std::vector<double> predict_scores(std::span<const LabeledInput> inputs, const ModelParams& params,
                                   const ModelConfig& config);

EvalResult evaluate(std::span<const LabeledInput> inputs, const ModelParams& params, const ModelConfig& config);

/// Adam training with per-epoch validation AUROC; returns the parameters of the
/// first epoch that attains the best validation AUROC.
TrainResult train(std::span<const ConnectivityGraph> dataset, const SplitPlan& split, const ModelConfig& model_config,
                  const TrainConfig& train_config);

std::string serialize_report(const TrainReport& report);

/// Metrics CSV: header plus one row.
std::string metrics_csv_header();
std::string metrics_csv_row(const std::string& run_id, std::uint64_t seed, const EvalResult& r);

/// "BNTM" checkpoint: magic | version | config | tensors as f64 LE.
std::vector<std::uint8_t> encode_checkpoint(const ModelConfig& config, const ModelParams& params);
std::pair<ModelConfig, ModelParams> decode_checkpoint(std::span<const std::uint8_t> bytes);
void write_checkpoint(const ModelConfig& config, const ModelParams& params, const std::filesystem::path& path);
std::pair<ModelConfig, ModelParams> read_checkpoint(const std::filesystem::path& path);

/// Class-averaged transposed assignments (K x V) over `inputs`, for OCREAD models.
struct ClassAssignments {
    Matrix class0;
    Matrix class1;
    double difference = 0.0;
};

ClassAssignments class_assignments(std::span<const LabeledInput> inputs, const ModelParams& params,
                                   const ModelConfig& config);

struct AblationSpec {
    std::vector<Readout> readouts{Readout::OCREAD, Readout::MEAN, Readout::MAX, Readout::SUM, Readout::CONCAT};
    std::vector<CentersMode> centers{CentersMode::ORTHONORMAL};
    std::vector<std::size_t> clusters{4};
    std::size_t seeds = 5;
    std::uint64_t base_seed = 0;
    std::array<double, 3> fractions{0.7, 0.1, 0.2};
    ModelConfig model;  ///< template: readout/centers/clusters overridden per cell
    TrainConfig train;
};

struct AblationRow {
    Readout readout;
    CentersMode centers;
    std::size_t clusters;
    std::uint64_t seed;
    std::size_t selected_epoch;
    EvalResult test;
    std::optional<double> difference;  ///< OCREAD only
};

/// Trains every readout x centers x K cell over `seeds` runs. Each run uses
/// split seed and train seed base_seed + run index. Centers and K only vary
/// for the OCREAD readout.
std::vector<AblationRow> run_ablation(std::span<const ConnectivityGraph> dataset, const AblationSpec& spec);

std::string ablation_csv(std::span<const AblationRow> rows);

}  // namespace bnt
