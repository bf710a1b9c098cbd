#include "sslface/classify.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "sslface/error.hpp"

namespace sslface {
namespace {

double softplus(double z) { return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

void check_training_data(const Eigen::MatrixXd& x, std::span<const int> y, const char* who) {
  if (x.rows() == 0) throw NumericError(std::string(who) + ": no training data");
  if (static_cast<std::size_t>(x.rows()) != y.size()) throw InvalidInput(std::string(who) + ": label count mismatch");
  if (!x.allFinite()) throw NumericError(std::string(who) + ": non-finite feature value");
  bool has0 = false, has1 = false;
  for (int label : y) {
    if (label == 0) {
      has0 = true;
    } else if (label == 1) {
      has1 = true;
    } else {
      throw InvalidInput(std::string(who) + ": labels must be 0 or 1");
    }
  }
  if (!has0 || !has1) throw NumericError(std::string(who) + ": training data contains a single class");
}

double resolve_lambda(const TrainHyper& h, Eigen::Index n) { return h.lambda < 0.0 ? 1.0 / static_cast<double>(n) : h.lambda; }

Eigen::VectorXd signed_labels(std::span<const int> y) {
  Eigen::VectorXd s(static_cast<Eigen::Index>(y.size()));
  for (std::size_t i = 0; i < y.size(); ++i) s(static_cast<Eigen::Index>(i)) = y[i] == 1 ? 1.0 : -1.0;
  return s;
}

}  // namespace

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double LinearModel::score(const Eigen::Ref<const Eigen::VectorXd>& x) const {
  if (x.size() != weights.size()) {
    throw InvalidInput("linear model expects " + std::to_string(weights.size()) + " features, got " +
                       std::to_string(x.size()));
  }
  return weights.dot(x) + bias;
}

double logistic_objective(const Eigen::VectorXd& w, double b, const Eigen::MatrixXd& x, std::span<const int> y,
                          double lambda, Eigen::VectorXd* grad_w, double* grad_b) {
  const Eigen::VectorXd s = signed_labels(y);
  const Eigen::VectorXd z = ((x * w).array() + b).matrix();
  const double n = static_cast<double>(x.rows());
  double loss = 0.0;
  Eigen::VectorXd coeff(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double m = s(i) * z(i);
    loss += softplus(-m);
    coeff(i) = -s(i) * sigmoid(-m) / n;
  }
  loss = loss / n + 0.5 * lambda * w.squaredNorm();
  if (grad_w) *grad_w = x.transpose() * coeff + lambda * w;
  if (grad_b) *grad_b = coeff.sum();
  return loss;
}

double hinge_objective(const Eigen::VectorXd& w, double b, const Eigen::MatrixXd& x, std::span<const int> y,
                       double lambda, Eigen::VectorXd* grad_w, double* grad_b) {
  const Eigen::VectorXd s = signed_labels(y);
  const Eigen::VectorXd z = ((x * w).array() + b).matrix();
  const double n = static_cast<double>(x.rows());
  double loss = 0.0;
  Eigen::VectorXd coeff = Eigen::VectorXd::Zero(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double slack = 1.0 - s(i) * z(i);
    if (slack > 0.0) {
      loss += slack;
      coeff(i) = -s(i) / n;
    }
  }
  loss = loss / n + 0.5 * lambda * (w.squaredNorm() + b * b);
  if (grad_w) *grad_w = x.transpose() * coeff + lambda * w;
  if (grad_b) *grad_b = coeff.sum() + lambda * b;
  return loss;
}

LinearModel train_logistic(const Eigen::MatrixXd& x, std::span<const int> y, const TrainHyper& hyper,
                           TrainTrace* trace) {
  check_training_data(x, y, "train_logistic");
  const double lambda = resolve_lambda(hyper, x.rows());
  LinearModel model;
  model.kind = ClassifierKind::kLogistic;
  model.hyper = hyper;
  model.weights = Eigen::VectorXd::Zero(x.cols());

  Eigen::VectorXd gw;
  double gb = 0.0;
  double loss = logistic_objective(model.weights, model.bias, x, y, lambda, &gw, &gb);
  if (trace) trace->objective.push_back(loss);
  double step = 1.0;
  int it = 0;
  double gnorm2 = gw.squaredNorm() + gb * gb;
  for (; it < hyper.max_iterations && std::sqrt(gnorm2) > hyper.tolerance; ++it) {
    step *= 2.0;
    Eigen::VectorXd w_next;
    double b_next = 0.0;
    double next = 0.0;
    for (;;) {
      w_next = model.weights - step * gw;
      b_next = model.bias - step * gb;
      next = logistic_objective(w_next, b_next, x, y, lambda);
      if (next <= loss - 1e-4 * step * gnorm2) break;
      step *= 0.5;
      if (step < 1e-30) break;
    }
    if (!(next <= loss)) break;  // no descent possible at machine precision
    model.weights = std::move(w_next);
    model.bias = b_next;
    loss = logistic_objective(model.weights, model.bias, x, y, lambda, &gw, &gb);
    gnorm2 = gw.squaredNorm() + gb * gb;
    if (trace) trace->objective.push_back(loss);
  }
  if (!model.weights.allFinite() || !std::isfinite(model.bias)) throw NumericError("train_logistic: diverged");
  if (trace) {
    trace->iterations = it;
    trace->final_gradient_norm = std::sqrt(gnorm2);
  }
  return model;
}

LinearModel train_linear_svm(const Eigen::MatrixXd& x, std::span<const int> y, const TrainHyper& hyper,
                             TrainTrace* trace) {
  check_training_data(x, y, "train_linear_svm");
  const Eigen::Index n = x.rows();
  const double lambda = resolve_lambda(hyper, n);
  const double c = 1.0 / (lambda * static_cast<double>(n));
  const Eigen::VectorXd s = signed_labels(y);

  // Bias handled as an extra constant feature.
  Eigen::VectorXd q(n);
  for (Eigen::Index i = 0; i < n; ++i) q(i) = x.row(i).squaredNorm() + 1.0;
  Eigen::VectorXd alpha = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd w = Eigen::VectorXd::Zero(x.cols());
  double b = 0.0;

  int sweep = 0;
  double gap = 0.0;
  for (; sweep < hyper.max_iterations; ++sweep) {
    double pg_max = -std::numeric_limits<double>::infinity();
    double pg_min = std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < n; ++i) {
      const double g = s(i) * (x.row(i).dot(w) + b) - 1.0;
      double pg = g;
      if (alpha(i) == 0.0) {
        pg = std::min(g, 0.0);
      } else if (alpha(i) == c) {
        pg = std::max(g, 0.0);
      }
      pg_max = std::max(pg_max, pg);
      pg_min = std::min(pg_min, pg);
      if (pg != 0.0) {
        const double old = alpha(i);
        alpha(i) = std::clamp(old - g / q(i), 0.0, c);
        const double d = (alpha(i) - old) * s(i);
        w += d * x.row(i).transpose();
        b += d;
      }
    }
    gap = pg_max - pg_min;
    if (trace) trace->objective.push_back(hinge_objective(w, b, x, y, lambda));
    if (gap <= hyper.tolerance) {
      ++sweep;
      break;
    }
  }
  // w = sum alpha_i y_i x_i minimizes 0.5|w|^2 + C*sum(hinge), which with
  // C = 1/(lambda n) is the hinge objective scaled by 1/lambda.
  LinearModel model;
  model.kind = ClassifierKind::kLinearSvm;
  model.hyper = hyper;
  model.weights = w;
  model.bias = b;
  if (trace) {
    trace->iterations = sweep;
    trace->final_gradient_norm = gap;
  }
  return model;
}

double predict_proba(const LinearModel& model, const Eigen::Ref<const Eigen::VectorXd>& x) {
  // kept strictly inside (0, 1) so entropies and log-odds stay finite
  const double p = sigmoid(model.score(x));
  return std::clamp(p, std::numeric_limits<double>::min(), std::nextafter(1.0, 0.0));
}

int predict_label(const LinearModel& model, const Eigen::Ref<const Eigen::VectorXd>& x) {
  return model.score(x) >= 0.0 ? 1 : 0;
}

double accuracy(const LinearModel& model, const Eigen::MatrixXd& x, std::span<const int> y) {
  if (x.rows() == 0) return 0.0;
  std::size_t correct = 0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    correct += predict_label(model, x.row(i).transpose()) == y[static_cast<std::size_t>(i)] ? 1 : 0;
  }
  return static_cast<double>(correct) / static_cast<double>(x.rows());
}

MinMaxScaler MinMaxScaler::fit(const Eigen::MatrixXd& x) {
  if (x.rows() == 0) throw InvalidInput("MinMaxScaler: no data");
  return {x.colwise().minCoeff().transpose(), x.colwise().maxCoeff().transpose()};
}

Eigen::VectorXd MinMaxScaler::transform(const Eigen::Ref<const Eigen::VectorXd>& v) const {
  if (v.size() != lo.size()) throw InvalidInput("MinMaxScaler: dimension mismatch");
  Eigen::VectorXd out(v.size());
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    const double range = hi(i) - lo(i);
    out(i) = range > 0.0 ? (v(i) - lo(i)) / range : 0.0;
  }
  return out;
}

Eigen::MatrixXd MinMaxScaler::transform_rows(const Eigen::MatrixXd& x) const {
  Eigen::MatrixXd out(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) out.row(r) = transform(x.row(r).transpose()).transpose();
  return out;
}

nlohmann::json linear_model_to_container(const LinearModel& model, ContainerWriter& writer) {
  return {{"kind", model.kind == ClassifierKind::kLogistic ? "logistic" : "linear_svm"},
          {"weights", writer.add_array({model.weights.data(), static_cast<std::size_t>(model.weights.size())})},
          {"bias", writer.add_value(model.bias)},
          {"lambda", model.hyper.lambda},
          {"max_iterations", model.hyper.max_iterations},
          {"tolerance", model.hyper.tolerance}};
}

LinearModel linear_model_from_container(const nlohmann::json& j, const ContainerReader& reader) {
  try {
    LinearModel m;
    const std::string kind = j.at("kind");
    if (kind == "logistic") {
      m.kind = ClassifierKind::kLogistic;
    } else if (kind == "linear_svm") {
      m.kind = ClassifierKind::kLinearSvm;
    } else {
      throw LoadError(LoadError::Reason::kFormat, "unknown classifier kind " + kind);
    }
    const auto w = reader.array(j.at("weights"));
    m.weights = Eigen::Map<const Eigen::VectorXd>(w.data(), static_cast<Eigen::Index>(w.size()));
    m.bias = reader.value(j.at("bias"));
    m.hyper.lambda = j.at("lambda");
    m.hyper.max_iterations = j.at("max_iterations");
    m.hyper.tolerance = j.at("tolerance");
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(LoadError::Reason::kFormat, std::string("classifier section: ") + e.what());
  }
}

nlohmann::json scaler_to_container(const MinMaxScaler& s, ContainerWriter& writer) {
  return {{"lo", writer.add_array({s.lo.data(), static_cast<std::size_t>(s.lo.size())})},
          {"hi", writer.add_array({s.hi.data(), static_cast<std::size_t>(s.hi.size())})}};
}

MinMaxScaler scaler_from_container(const nlohmann::json& j, const ContainerReader& reader) {
  try {
    const auto lo = reader.array(j.at("lo"));
    const auto hi = reader.array(j.at("hi"));
    if (lo.size() != hi.size()) throw LoadError(LoadError::Reason::kFormat, "scaler bounds differ in size");
    MinMaxScaler s;
    s.lo = Eigen::Map<const Eigen::VectorXd>(lo.data(), static_cast<Eigen::Index>(lo.size()));
    s.hi = Eigen::Map<const Eigen::VectorXd>(hi.data(), static_cast<Eigen::Index>(hi.size()));
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(LoadError::Reason::kFormat, std::string("scaler section: ") + e.what());
  }
}

}  // namespace sslface
