#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <json.hpp>
#include <variant>
#include <vector>

#include "dmm/context.hpp"
#include "dmm/error.hpp"

namespace dmm {

// w'x + b, fit by ordinary least squares.
struct LinearCombiner {
  Eigen::VectorXd w;
  double b = 0.0;
};

// x'(w0 + sum_k r_k v_k) + b, fit by ridge on the expanded design
// [X | X.r_1 | ... | X.r_K | 1] with the intercept penalized like every
// other coefficient.
struct ContextualLinearCombiner {
  Eigen::VectorXd w0;
  Eigen::MatrixXd V;  // K x d deviation vectors
  double b = 0.0;
  double alpha = 1.0;
  double temperature = 1.0;
};

struct MLPConfig {
  double learning_rate = 1e-3;
  int batch_size = 32;
  int epochs = 100;
  double dropout = 0.2;
};

// d -> 64 -> 32 -> 1 ReLU net trained with MSE + Adam; inverted dropout at
// train time so inference is a plain forward pass.
struct MLPCombiner {
  std::vector<Eigen::MatrixXd> W;  // layer l: (out x in)
  std::vector<Eigen::VectorXd> b;
  MLPConfig config;
  std::uint64_t seed = 0;
  std::vector<double> epoch_mse;  // full-train MSE (dropout off) after each epoch; not serialized
};

// Nonnegative box-constrained weights found by GP Bayesian optimization of
// Kendall tau-b against human scores. No intercept.
struct WeightCombiner {
  Eigen::VectorXd w;
  double objective_value = 0.0;
};

struct GpConfig {
  int n_init = 5;
  int n_iter = 100;
  int n_candidates = 1000;
  double length_scale = 0.2;
  double noise = 1e-6;
};

LinearCombiner fit_ols(const Eigen::MatrixXd& X, const Eigen::VectorXd& y);
double predict_linear(const LinearCombiner& model, const Eigen::VectorXd& x);

ContextualLinearCombiner fit_contextual_linear(const Eigen::MatrixXd& X,
                                               const Eigen::MatrixXd& R,
                                               const Eigen::VectorXd& y, double alpha,
                                               double temperature);
double predict_contextual(const ContextualLinearCombiner& model, const Eigen::VectorXd& x,
                          const Responsibilities& r);

MLPCombiner fit_mlp(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const MLPConfig& config,
                    std::uint64_t seed);
double predict_mlp(const MLPCombiner& model, const Eigen::VectorXd& x);
// d(output)/d(input) at x, dropout off. Used for feature attribution.
Eigen::VectorXd mlp_input_gradient(const MLPCombiner& model, const Eigen::VectorXd& x);

struct MLPGradients {
  std::vector<Eigen::MatrixXd> dW;
  std::vector<Eigen::VectorXd> db;
};

// Mean-squared-error loss over (X, y) with dropout off; when grads is
// non-null, fills analytic gradients for every parameter.
double mlp_loss_and_gradients(const MLPCombiner& model, const Eigen::MatrixXd& X,
                              const Eigen::VectorXd& y, MLPGradients* grads);

WeightCombiner fit_gp_weights(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                              std::uint64_t seed, const GpConfig& config = {});
double predict_weighted(const WeightCombiner& model, const Eigen::VectorXd& x);

using Combiner =
    std::variant<LinearCombiner, ContextualLinearCombiner, MLPCombiner, WeightCombiner>;

// Serialization with a "kind" tag; MLP layers as {"W": [[...]], "b": [...]}
// in forward order.
nlohmann::ordered_json combiner_to_json(const Combiner& combiner);
Combiner combiner_from_json(const nlohmann::json& j);

}  // namespace dmm
