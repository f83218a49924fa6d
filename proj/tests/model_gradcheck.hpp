#pragma once

// Whole-model finite-difference check: softmax cross-entropy loss of a
// double-precision tiny model in train mode, with dropout replayed from a
// fixed seed on every evaluation.

#include <vector>

#include "birr/model.hpp"
#include "birr/trainer.hpp"
#include "oracles.hpp"

namespace birr::gradcheck {

struct ModelOutcome {
  std::size_t checked = 0;
  std::size_t failed = 0;
  double worst_rel = 0.0;
  std::vector<std::string> failures;

  bool ok() const { return failed == 0 && checked > 0; }
};

inline ModelOutcome check_model(std::uint64_t seed, std::size_t samples, double rel_tol,
                                double abs_floor, double step = 1e-3) {
  ModelConfig config;
  config.width_multiplier = 0.25;
  config.input_resolution = 32;
  Rng rng(seed);
  auto model = build_model<double>(config, rng);
  // Non-trivial BN affine parameters so their gradients are exercised.
  for (auto& layer : model.layers) {
    if (layer.kind != LayerKind::kBatchNorm) continue;
    for (auto& g : layer.bn.gamma) g = uniform(rng, 0.8, 1.2);
    for (auto& b : layer.bn.beta) b = uniform(rng, -0.1, 0.1);
  }
  const auto batch = oracle::random_tensor<double>(Shape{2, 32, 32, 3}, rng);
  const std::vector<int> labels{static_cast<int>(uniform_index(rng, 6)),
                                static_cast<int>(uniform_index(rng, 6))};
  const std::uint64_t dropout_seed = rng();

  auto loss = [&] {
    auto scratch = model;  // train-mode forward drifts running statistics
    Rng drop(dropout_seed);
    return cross_entropy(forward(scratch, batch, Mode::kTrain, drop).probabilities,
                         std::span<const int>(labels));
  };

  Gradients<double> grads;
  {
    auto scratch = model;
    Rng drop(dropout_seed);
    ForwardTape<double> tape;
    const auto out = forward(scratch, batch, Mode::kTrain, drop, &tape);
    grads = backward(scratch, tape,
                     cross_entropy_logit_grad(out.probabilities, std::span<const int>(labels)));
  }

  auto views = parameter_views(model);
  std::vector<std::size_t> learnable;
  std::size_t total = 0;
  for (std::size_t v = 0; v < views.size(); ++v) {
    if (views[v].learnable) {
      learnable.push_back(v);
      total += views[v].values.size();
    }
  }

  ModelOutcome out;
  for (std::size_t s = 0; s < samples; ++s) {
    // Uniform over all learnable scalars.
    std::size_t flat = uniform_index(rng, total);
    std::size_t v = 0;
    for (std::size_t idx : learnable) {
      if (flat < views[idx].values.size()) {
        v = idx;
        break;
      }
      flat -= views[idx].values.size();
    }
    double* p = &views[v].values[flat];
    const double numeric = oracle::central_differences({p}, loss, step)[0];
    const double analytic = grads.values[v][flat];
    ++out.checked;
    if (!oracle::gradient_close(analytic, numeric, rel_tol, abs_floor)) {
      ++out.failed;
      out.failures.push_back(views[v].name + "[" + std::to_string(flat) + "] analytic " +
                             std::to_string(analytic) + " numeric " + std::to_string(numeric));
    }
    if (std::abs(analytic - numeric) > abs_floor) {
      out.worst_rel = std::max(out.worst_rel, oracle::relative_error(analytic, numeric));
    }
  }
  return out;
}

}  // namespace birr::gradcheck
