#pragma once

#include <span>
#include <vector>

#include <Eigen/Dense>

#include "sslface/container.hpp"

namespace sslface {

enum class ClassifierKind { kLogistic, kLinearSvm };

struct TrainHyper {
  /// L2 strength; a negative value means 1/n.
  double lambda = -1.0;
  int max_iterations = 500;
  double tolerance = 1e-6;
};

struct LinearModel {
  Eigen::VectorXd weights;
  double bias = 0.0;
  ClassifierKind kind = ClassifierKind::kLogistic;
  TrainHyper hyper;

  double score(const Eigen::Ref<const Eigen::VectorXd>& x) const;
  int parameter_count() const { return static_cast<int>(weights.size()) + 1; }
};

/// Per-iteration record of the training objective.
struct TrainTrace {
  std::vector<double> objective;
  int iterations = 0;
  double final_gradient_norm = 0.0;
};

/// Mean logistic loss over rows of `x` (labels in {0,1}) plus (lambda/2)|w|^2.
/// The bias is not regularized. Gradients are written when requested.
double logistic_objective(const Eigen::VectorXd& w, double b, const Eigen::MatrixXd& x, std::span<const int> y,
                          double lambda, Eigen::VectorXd* grad_w = nullptr, double* grad_b = nullptr);

/// (lambda/2)(|w|^2 + b^2) plus the mean hinge loss. Gradients are the
/// subgradient taking 0 at the hinge.
double hinge_objective(const Eigen::VectorXd& w, double b, const Eigen::MatrixXd& x, std::span<const int> y,
                       double lambda, Eigen::VectorXd* grad_w = nullptr, double* grad_b = nullptr);

/// Full-batch gradient descent with Armijo backtracking from zero weights.
/// Stops when the gradient norm drops below the tolerance.
LinearModel train_logistic(const Eigen::MatrixXd& x, std::span<const int> y, const TrainHyper& hyper = {},
                           TrainTrace* trace = nullptr);

/// Dual coordinate descent on the hinge objective, coordinates visited in
/// index order; stops on the projected-gradient gap.
LinearModel train_linear_svm(const Eigen::MatrixXd& x, std::span<const int> y, const TrainHyper& hyper = {},
                             TrainTrace* trace = nullptr);

double sigmoid(double z);

double predict_proba(const LinearModel& model, const Eigen::Ref<const Eigen::VectorXd>& x);

/// Hard vote: 1 when the linear score is >= 0.
int predict_label(const LinearModel& model, const Eigen::Ref<const Eigen::VectorXd>& x);

double accuracy(const LinearModel& model, const Eigen::MatrixXd& x, std::span<const int> y);

/// Per-dimension min-max scaling to [0, 1] using training extremes.
/// Constant dimensions map to 0.
struct MinMaxScaler {
  Eigen::VectorXd lo;
  Eigen::VectorXd hi;

  static MinMaxScaler fit(const Eigen::MatrixXd& x);
  Eigen::VectorXd transform(const Eigen::Ref<const Eigen::VectorXd>& v) const;
  Eigen::MatrixXd transform_rows(const Eigen::MatrixXd& x) const;
};

nlohmann::json linear_model_to_container(const LinearModel& model, ContainerWriter& writer);
LinearModel linear_model_from_container(const nlohmann::json& section, const ContainerReader& reader);
nlohmann::json scaler_to_container(const MinMaxScaler& scaler, ContainerWriter& writer);
MinMaxScaler scaler_from_container(const nlohmann::json& section, const ContainerReader& reader);

}  // namespace sslface
