#include "dmm/combiners.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dmm/json_util.hpp"
#include "dmm/metaeval.hpp"
#include "dmm/rng.hpp"

namespace dmm {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

// Solves (A'A + jitter I) theta = A'y. LDLT handles the rank-deficient case.
Eigen::VectorXd normal_equations(const Eigen::MatrixXd& A, const Eigen::VectorXd& y,
                                 double jitter) {
  Eigen::MatrixXd gram = A.transpose() * A;
  gram.diagonal().array() += jitter;
  return gram.ldlt().solve(A.transpose() * y);
}

}  // namespace

LinearCombiner fit_ols(const Eigen::MatrixXd& X, const Eigen::VectorXd& y) {
  const Eigen::Index n = X.rows();
  const Eigen::Index d = X.cols();
  if (y.size() != n) throw InputError("fit_ols: X/y row mismatch");
  if (n < d + 1)
    throw InputError("fit_ols needs n >= d+1 rows (got n=" + std::to_string(n) +
                     ", d=" + std::to_string(d) + ")");

  Eigen::MatrixXd A(n, d + 1);
  A.leftCols(d) = X;
  A.col(d).setOnes();
  const Eigen::VectorXd theta = normal_equations(A, y, 1e-10);

  LinearCombiner model;
  model.w = theta.head(d);
  model.b = theta[d];
  return model;
}

double predict_linear(const LinearCombiner& model, const Eigen::VectorXd& x) {
  if (x.size() != model.w.size()) throw InputError("predict_linear: dimension mismatch");
  return model.w.dot(x) + model.b;
}

ContextualLinearCombiner fit_contextual_linear(const Eigen::MatrixXd& X,
                                               const Eigen::MatrixXd& R,
                                               const Eigen::VectorXd& y, double alpha,
                                               double temperature) {
  const Eigen::Index n = X.rows();
  const Eigen::Index d = X.cols();
  const Eigen::Index K = R.cols();
  if (R.rows() != n || y.size() != n)
    throw InputError("fit_contextual_linear: X/R/y row mismatch");
  if (alpha < 0.0) throw InputError("fit_contextual_linear: alpha must be >= 0");
  if (K < 1) throw InputError("fit_contextual_linear: R needs at least one column");
  for (Eigen::Index i = 0; i < n; ++i)
    if (std::abs(R.row(i).sum() - 1.0) > 1e-9)
      throw InputError("fit_contextual_linear: responsibilities in row " + std::to_string(i) +
                       " do not sum to 1");

  // Expanded design [X | X.r_1 | ... | X.r_K | 1]; the intercept is penalized
  // with the same alpha as every other coefficient.
  Eigen::MatrixXd A(n, d * (K + 1) + 1);
  A.leftCols(d) = X;
  for (Eigen::Index k = 0; k < K; ++k)
    A.block(0, d * (k + 1), n, d) = X.array().colwise() * R.col(k).array();
  A.col(d * (K + 1)).setOnes();
  const Eigen::VectorXd theta = normal_equations(A, y, alpha);

  ContextualLinearCombiner model;
  model.w0 = theta.head(d);
  model.V.resize(K, d);
  for (Eigen::Index k = 0; k < K; ++k) model.V.row(k) = theta.segment(d * (k + 1), d).transpose();
  model.b = theta[d * (K + 1)];
  model.alpha = alpha;
  model.temperature = temperature;
  return model;
}

double predict_contextual(const ContextualLinearCombiner& model, const Eigen::VectorXd& x,
                          const Responsibilities& r) {
  if (x.size() != model.w0.size()) throw InputError("predict_contextual: feature dim mismatch");
  if (r.r.size() != model.V.rows())
    throw InputError("predict_contextual: responsibility length does not match K");
  if (r.temperature != model.temperature)
    throw InputError("predict_contextual: responsibility temperature does not match the model");
  const Eigen::VectorXd w_eff = model.w0 + model.V.transpose() * r.r;
  return x.dot(w_eff) + model.b;
}

// ---------------------------------------------------------------------------
// MLP
// ---------------------------------------------------------------------------

namespace {

constexpr int kHidden1 = 64;
constexpr int kHidden2 = 32;

struct ForwardCache {
  Eigen::MatrixXd z1, h1, z2, h2;  // post-dropout activations in h1/h2
  Eigen::VectorXd pred;
};

// One pass over a batch. Masks (already scaled by 1/(1-p)) are applied after
// each hidden ReLU when given.
ForwardCache mlp_forward(const MLPCombiner& net, const Eigen::MatrixXd& X,
                         const Eigen::MatrixXd* mask1, const Eigen::MatrixXd* mask2) {
  ForwardCache c;
  c.z1 = (X * net.W[0].transpose()).rowwise() + net.b[0].transpose();
  c.h1 = c.z1.cwiseMax(0.0);
  if (mask1) c.h1 = c.h1.cwiseProduct(*mask1);
  c.z2 = (c.h1 * net.W[1].transpose()).rowwise() + net.b[1].transpose();
  c.h2 = c.z2.cwiseMax(0.0);
  if (mask2) c.h2 = c.h2.cwiseProduct(*mask2);
  c.pred = (c.h2 * net.W[2].transpose()).col(0).array() + net.b[2][0];
  return c;
}

// MSE backward; fills grads and optionally the gradient w.r.t. the inputs.
void mlp_backward(const MLPCombiner& net, const Eigen::MatrixXd& X, const ForwardCache& c,
                  const Eigen::VectorXd& dpred, const Eigen::MatrixXd* mask1,
                  const Eigen::MatrixXd* mask2, MLPGradients& g, Eigen::MatrixXd* dX) {
  g.dW.assign(3, Eigen::MatrixXd());
  g.db.assign(3, Eigen::VectorXd());

  g.dW[2] = dpred.transpose() * c.h2;
  g.db[2] = Eigen::VectorXd::Constant(1, dpred.sum());

  Eigen::MatrixXd dh2 = dpred * net.W[2];
  if (mask2) dh2 = dh2.cwiseProduct(*mask2);
  const Eigen::MatrixXd dz2 = dh2.cwiseProduct((c.z2.array() > 0.0).cast<double>().matrix());
  g.dW[1] = dz2.transpose() * c.h1;
  g.db[1] = dz2.colwise().sum();

  Eigen::MatrixXd dh1 = dz2 * net.W[1];
  if (mask1) dh1 = dh1.cwiseProduct(*mask1);
  const Eigen::MatrixXd dz1 = dh1.cwiseProduct((c.z1.array() > 0.0).cast<double>().matrix());
  g.dW[0] = dz1.transpose() * X;
  g.db[0] = dz1.colwise().sum();

  if (dX) *dX = dz1 * net.W[0];
}

Eigen::MatrixXd draw_mask(Rng& rng, Eigen::Index rows, Eigen::Index cols, double p) {
  Eigen::MatrixXd mask(rows, cols);
  const double scale = 1.0 / (1.0 - p);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j)
      mask(i, j) = rng.next_double() >= p ? scale : 0.0;
  return mask;
}

struct AdamState {
  std::vector<Eigen::MatrixXd> mW, vW;
  std::vector<Eigen::VectorXd> mb, vb;
  long long t = 0;
};

void adam_step(MLPCombiner& net, const MLPGradients& g, AdamState& state, double lr) {
  constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  ++state.t;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.t));
  for (std::size_t l = 0; l < net.W.size(); ++l) {
    state.mW[l] = beta1 * state.mW[l] + (1.0 - beta1) * g.dW[l];
    state.vW[l] = beta2 * state.vW[l].array().matrix() +
                  (1.0 - beta2) * g.dW[l].array().square().matrix();
    net.W[l].array() -=
        lr * (state.mW[l].array() / bc1) / ((state.vW[l].array() / bc2).sqrt() + eps);
    state.mb[l] = beta1 * state.mb[l] + (1.0 - beta1) * g.db[l];
    state.vb[l] = beta2 * state.vb[l].array().matrix() +
                  (1.0 - beta2) * g.db[l].array().square().matrix();
    net.b[l].array() -=
        lr * (state.mb[l].array() / bc1) / ((state.vb[l].array() / bc2).sqrt() + eps);
  }
}

}  // namespace

MLPCombiner fit_mlp(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const MLPConfig& config,
                    std::uint64_t seed) {
  const Eigen::Index n = X.rows();
  const Eigen::Index d = X.cols();
  if (y.size() != n) throw InputError("fit_mlp: X/y row mismatch");
  if (n < 1) throw InputError("fit_mlp needs at least one row");
  if (!(config.dropout >= 0.0 && config.dropout < 1.0))
    throw InputError("fit_mlp: dropout must be in [0, 1)");

  MLPCombiner net;
  net.config = config;
  net.seed = seed;
  const std::vector<Eigen::Index> sizes = {d, kHidden1, kHidden2, 1};
  Rng rng(derive_seed(seed, "mlp"));
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    const Eigen::Index in = sizes[l], out = sizes[l + 1];
    const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
    Eigen::MatrixXd W(out, in);
    for (Eigen::Index i = 0; i < out; ++i)
      for (Eigen::Index j = 0; j < in; ++j) W(i, j) = rng.uniform(-limit, limit);
    net.W.push_back(std::move(W));
    net.b.push_back(Eigen::VectorXd::Zero(out));
  }

  AdamState adam;
  for (const auto& W : net.W) {
    adam.mW.push_back(Eigen::MatrixXd::Zero(W.rows(), W.cols()));
    adam.vW.push_back(Eigen::MatrixXd::Zero(W.rows(), W.cols()));
  }
  for (const auto& b : net.b) {
    adam.mb.push_back(Eigen::VectorXd::Zero(b.size()));
    adam.vb.push_back(Eigen::VectorXd::Zero(b.size()));
  }

  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  const bool use_dropout = config.dropout > 0.0;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(order);
    for (Eigen::Index start = 0; start < n; start += config.batch_size) {
      const Eigen::Index bsize = std::min<Eigen::Index>(config.batch_size, n - start);
      Eigen::MatrixXd Xb(bsize, d);
      Eigen::VectorXd yb(bsize);
      for (Eigen::Index i = 0; i < bsize; ++i) {
        Xb.row(i) = X.row(order[static_cast<std::size_t>(start + i)]);
        yb[i] = y[order[static_cast<std::size_t>(start + i)]];
      }
      Eigen::MatrixXd mask1, mask2;
      const Eigen::MatrixXd* m1 = nullptr;
      const Eigen::MatrixXd* m2 = nullptr;
      if (use_dropout) {
        mask1 = draw_mask(rng, bsize, kHidden1, config.dropout);
        mask2 = draw_mask(rng, bsize, kHidden2, config.dropout);
        m1 = &mask1;
        m2 = &mask2;
      }
      const ForwardCache cache = mlp_forward(net, Xb, m1, m2);
      const Eigen::VectorXd dpred =
          2.0 * (cache.pred - yb) / static_cast<double>(bsize);
      MLPGradients grads;
      mlp_backward(net, Xb, cache, dpred, m1, m2, grads, nullptr);
      adam_step(net, grads, adam, config.learning_rate);
    }
    const ForwardCache eval = mlp_forward(net, X, nullptr, nullptr);
    net.epoch_mse.push_back((eval.pred - y).squaredNorm() / static_cast<double>(n));
  }
  return net;
}

double predict_mlp(const MLPCombiner& model, const Eigen::VectorXd& x) {
  if (model.W.empty() || x.size() != model.W[0].cols())
    throw InputError("predict_mlp: dimension mismatch");
  const ForwardCache c = mlp_forward(model, x.transpose(), nullptr, nullptr);
  return c.pred[0];
}

Eigen::VectorXd mlp_input_gradient(const MLPCombiner& model, const Eigen::VectorXd& x) {
  if (model.W.empty() || x.size() != model.W[0].cols())
    throw InputError("mlp_input_gradient: dimension mismatch");
  const Eigen::MatrixXd X = x.transpose();
  const ForwardCache c = mlp_forward(model, X, nullptr, nullptr);
  MLPGradients grads;
  Eigen::MatrixXd dX;
  mlp_backward(model, X, c, Eigen::VectorXd::Ones(1), nullptr, nullptr, grads, &dX);
  return dX.row(0).transpose();
}

double mlp_loss_and_gradients(const MLPCombiner& model, const Eigen::MatrixXd& X,
                              const Eigen::VectorXd& y, MLPGradients* grads) {
  if (X.rows() != y.size()) throw InputError("mlp_loss_and_gradients: X/y row mismatch");
  const ForwardCache c = mlp_forward(model, X, nullptr, nullptr);
  const double n = static_cast<double>(X.rows());
  const double loss = (c.pred - y).squaredNorm() / n;
  if (grads) {
    const Eigen::VectorXd dpred = 2.0 * (c.pred - y) / n;
    mlp_backward(model, X, c, dpred, nullptr, nullptr, *grads, nullptr);
  }
  return loss;
}

// ---------------------------------------------------------------------------
// GP-driven Bayesian optimization of box-constrained weights
// ---------------------------------------------------------------------------

namespace {

double matern52(double r, double length_scale) {
  const double s = std::sqrt(5.0) * r / length_scale;
  return (1.0 + s + s * s / 3.0) * std::exp(-s);
}

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }
double normal_pdf(double z) {
  return std::exp(-0.5 * z * z) / std::sqrt(2.0 * 3.14159265358979323846);
}

// Kendall tau of the weighted score against y; a constant score column has
// no ranking information and scores 0.
double tau_objective(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                     const Eigen::VectorXd& w) {
  const Eigen::VectorXd s = X * w;
  if ((s.array() == s[0]).all()) return 0.0;
  return kendall_tau_b(std::span<const double>(s.data(), static_cast<std::size_t>(s.size())),
                       std::span<const double>(y.data(), static_cast<std::size_t>(y.size())));
}

}  // namespace

WeightCombiner fit_gp_weights(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                              std::uint64_t seed, const GpConfig& config) {
  const Eigen::Index n = X.rows();
  const Eigen::Index d = X.cols();
  if (y.size() != n) throw InputError("fit_gp_weights: X/y row mismatch");
  if (n < 3) throw InputError("fit_gp_weights needs at least 3 rows");
  if ((y.array() == y[0]).all())
    throw InputError("fit_gp_weights: y is fully tied, Kendall tau is undefined");

  Rng rng(derive_seed(seed, "gp"));
  std::vector<Eigen::VectorXd> observed_w;
  std::vector<double> observed_f;

  auto evaluate = [&](const Eigen::VectorXd& w) {
    observed_w.push_back(w);
    observed_f.push_back(tau_objective(X, y, w));
  };

  // Small uniform vector first (avoids the degenerate all-zero combiner),
  // then the random initial design.
  evaluate(Eigen::VectorXd::Constant(d, 0.01));
  for (int i = 0; i < config.n_init; ++i) {
    Eigen::VectorXd w(d);
    for (Eigen::Index j = 0; j < d; ++j) w[j] = rng.next_double();
    evaluate(w);
  }

  for (int iter = 0; iter < config.n_iter; ++iter) {
    const Eigen::Index m = static_cast<Eigen::Index>(observed_w.size());
    const double f_best = *std::max_element(observed_f.begin(), observed_f.end());
    const double f_min = *std::min_element(observed_f.begin(), observed_f.end());
    const double mean_f =
        std::accumulate(observed_f.begin(), observed_f.end(), 0.0) / static_cast<double>(m);
    const double range = f_best - f_min;
    const double signal_var = std::max(range * range, 1e-8);

    Eigen::MatrixXd K(m, m);
    for (Eigen::Index i = 0; i < m; ++i) {
      for (Eigen::Index j = i; j < m; ++j) {
        const double k = signal_var * matern52((observed_w[static_cast<std::size_t>(i)] -
                                                observed_w[static_cast<std::size_t>(j)])
                                                   .norm(),
                                               config.length_scale);
        K(i, j) = k;
        K(j, i) = k;
      }
      K(i, i) += config.noise;
    }

    Eigen::VectorXd resid(m);
    for (Eigen::Index i = 0; i < m; ++i) resid[i] = observed_f[static_cast<std::size_t>(i)] - mean_f;

    Eigen::LLT<Eigen::MatrixXd> llt(K);
    Eigen::VectorXd alpha;
    bool have_llt = llt.info() == Eigen::Success;
    Eigen::LDLT<Eigen::MatrixXd> ldlt;
    if (have_llt) {
      alpha = llt.solve(resid);
    } else {
      ldlt.compute(K);
      alpha = ldlt.solve(resid);
    }

    // Candidate pool for the acquisition; expected improvement over f_best.
    Eigen::MatrixXd candidates(config.n_candidates, d);
    for (int c = 0; c < config.n_candidates; ++c)
      for (Eigen::Index j = 0; j < d; ++j) candidates(c, j) = rng.next_double();

    Eigen::MatrixXd k_cross(m, config.n_candidates);
    for (Eigen::Index i = 0; i < m; ++i)
      for (int c = 0; c < config.n_candidates; ++c)
        k_cross(i, c) = signal_var * matern52((observed_w[static_cast<std::size_t>(i)] -
                                               candidates.row(c).transpose())
                                                  .norm(),
                                              config.length_scale);

    Eigen::VectorXd quad(config.n_candidates);
    if (have_llt) {
      const Eigen::MatrixXd v = llt.matrixL().solve(k_cross);
      quad = v.colwise().squaredNorm();
    } else {
      const Eigen::MatrixXd solved = ldlt.solve(k_cross);
      quad = (k_cross.array() * solved.array()).colwise().sum();
    }

    int best_c = 0;
    double best_ei = -1.0;
    for (int c = 0; c < config.n_candidates; ++c) {
      const double mu = mean_f + k_cross.col(c).dot(alpha);
      const double var = std::max(signal_var + config.noise - quad[c], 0.0);
      const double sd = std::sqrt(var);
      double ei;
      if (sd < 1e-12) {
        ei = std::max(mu - f_best, 0.0);
      } else {
        const double z = (mu - f_best) / sd;
        ei = (mu - f_best) * normal_cdf(z) + sd * normal_pdf(z);
      }
      if (ei > best_ei) {
        best_ei = ei;
        best_c = c;
      }
    }
    evaluate(candidates.row(best_c).transpose());
  }

  std::size_t best = 0;
  for (std::size_t i = 1; i < observed_f.size(); ++i)
    if (observed_f[i] > observed_f[best]) best = i;

  WeightCombiner model;
  model.w = observed_w[best];
  model.objective_value = observed_f[best];
  return model;
}

double predict_weighted(const WeightCombiner& model, const Eigen::VectorXd& x) {
  if (x.size() != model.w.size()) throw InputError("predict_weighted: dimension mismatch");
  return model.w.dot(x);
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

ordered_json combiner_to_json(const Combiner& combiner) {
  ordered_json j;
  if (const auto* lin = std::get_if<LinearCombiner>(&combiner)) {
    j["kind"] = "ols";
    j["w"] = vector_to_json(lin->w);
    j["b"] = lin->b;
  } else if (const auto* cl = std::get_if<ContextualLinearCombiner>(&combiner)) {
    j["kind"] = "cl";
    j["w0"] = vector_to_json(cl->w0);
    j["V"] = matrix_to_json(cl->V);
    j["b"] = cl->b;
    j["alpha"] = cl->alpha;
    j["T"] = cl->temperature;
  } else if (const auto* mlp = std::get_if<MLPCombiner>(&combiner)) {
    j["kind"] = "mlp";
    ordered_json layers = ordered_json::array();
    for (std::size_t l = 0; l < mlp->W.size(); ++l) {
      ordered_json layer;
      layer["W"] = matrix_to_json(mlp->W[l]);
      layer["b"] = vector_to_json(mlp->b[l]);
      layers.push_back(std::move(layer));
    }
    j["layers"] = std::move(layers);
    j["config"] = {{"learning_rate", mlp->config.learning_rate},
                   {"batch_size", mlp->config.batch_size},
                   {"epochs", mlp->config.epochs},
                   {"dropout", mlp->config.dropout}};
    j["seed"] = mlp->seed;
  } else {
    const auto& gp = std::get<WeightCombiner>(combiner);
    j["kind"] = "gp";
    j["w"] = vector_to_json(gp.w);
    j["objective_value"] = gp.objective_value;
  }
  return j;
}

Combiner combiner_from_json(const json& j) {
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "ols") {
    LinearCombiner lin;
    lin.w = vector_from_json(j.at("w"));
    lin.b = j.at("b").get<double>();
    return lin;
  }
  if (kind == "cl") {
    ContextualLinearCombiner cl;
    cl.w0 = vector_from_json(j.at("w0"));
    cl.V = matrix_from_json(j.at("V"));
    cl.b = j.at("b").get<double>();
    cl.alpha = j.at("alpha").get<double>();
    cl.temperature = j.at("T").get<double>();
    return cl;
  }
  if (kind == "mlp") {
    MLPCombiner mlp;
    for (const auto& layer : j.at("layers")) {
      mlp.W.push_back(matrix_from_json(layer.at("W")));
      mlp.b.push_back(vector_from_json(layer.at("b")));
    }
    const auto& cfg = j.at("config");
    mlp.config.learning_rate = cfg.at("learning_rate").get<double>();
    mlp.config.batch_size = cfg.at("batch_size").get<int>();
    mlp.config.epochs = cfg.at("epochs").get<int>();
    mlp.config.dropout = cfg.at("dropout").get<double>();
    mlp.seed = j.at("seed").get<std::uint64_t>();
    return mlp;
  }
  if (kind == "gp") {
    WeightCombiner gp;
    gp.w = vector_from_json(j.at("w"));
    gp.objective_value = j.at("objective_value").get<double>();
    return gp;
  }
  throw InputError("unknown combiner kind '" + kind + "'");
}

}  // namespace dmm
