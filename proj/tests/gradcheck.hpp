#pragma once

#include <map>
#include <string>
#include <vector>

#include "bnt/linalg.hpp"
#include "bnt/model.hpp"
#include "oracles.hpp"

namespace oracle {

/// Random connectivity-like input: symmetric, unit diagonal, entries in [-1, 1].
inline bnt::Matrix random_connectivity(std::size_t v, bnt::Rng& rng) {
    bnt::Matrix x(v, v);
    for (std::size_t i = 0; i < v; ++i) {
        x(i, i) = 1.0;
        for (std::size_t j = i + 1; j < v; ++j) x(i, j) = x(j, i) = rng.uniform(-1, 1);
    }
    return x;
}

struct GradCheckResult {
    std::map<std::string, double> relative_error;  ///< per tensor
    double worst = 0.0;
    std::string worst_tensor;
};

/// Compares loss_and_grad against central differences of batch_loss for every
/// tensor, including frozen centers (whose analytic gradient must then be zero).
inline GradCheckResult gradient_check(const bnt::ModelConfig& config, std::uint64_t seed, std::size_t batch_size = 3,
                                      double h = 1e-5) {
    bnt::Rng rng(seed);
    bnt::ModelParams params = bnt::init_params(config, rng);
    std::vector<bnt::LabeledInput> batch;
    for (std::size_t b = 0; b < batch_size; ++b)
        batch.push_back({bnt::prepare_input(random_connectivity(config.nodes, rng), config), static_cast<int>(b % 2)});

    const auto analytic = bnt::loss_and_grad(batch, params, config);
    std::vector<const bnt::Matrix*> grads;
    analytic.grads.for_each_tensor([&](const std::string&, const bnt::Matrix& m) { grads.push_back(&m); });

    GradCheckResult out;
    std::size_t idx = 0;
    params.for_each_tensor([&](const std::string& name, bnt::Matrix& m) {
        bnt::Matrix numeric = central_difference(m, [&] { return bnt::batch_loss(batch, params, config); }, h);
        if (!bnt::is_learnable(config, name)) numeric.fill(0.0);
        const double err = relative_error(*grads[idx++], numeric);
        out.relative_error[name] = err;
        if (err >= out.worst) {
            out.worst = err;
            out.worst_tensor = name;
        }
    });
    return out;
}

}  // namespace oracle
