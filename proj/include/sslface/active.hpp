#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"
#include "sslface/classify.hpp"
#include "sslface/error.hpp"

namespace sslface {

enum class Strategy { kEntropy, kQbc, kCoreSet };

const char* to_string(Strategy s);
Strategy parse_strategy(const std::string& name);

struct ActiveConfig {
  Strategy strategy = Strategy::kEntropy;
  std::size_t batch_size = 100;
  std::size_t budget = 0;
  std::uint64_t seed = 0;
  std::vector<ClassifierKind> committee{ClassifierKind::kLogistic, ClassifierKind::kLinearSvm};
  double seed_fraction = 0.05;
  TrainHyper hyper;
  unsigned threads = 0;

  struct Problem {
    std::string reason;  // machine-readable code
    std::string message;
  };
  /// Requires 0 < batch <= budget <= pool_size.
  std::optional<Problem> check(std::size_t pool_size) const;
  /// Throws InvalidInput carrying the first problem.
  void validate(std::size_t pool_size) const;
};

nlohmann::json to_json(const ActiveConfig& config);
ActiveConfig active_config_from_json(const nlohmann::json& j);

/// Natural-log entropy of each probability row; 0 log 0 = 0.
std::vector<double> entropy_scores(const std::vector<std::vector<double>>& probs);

/// Entropy of committee vote fractions per sample.
std::vector<double> vote_entropy_scores(const std::vector<std::vector<int>>& votes, std::size_t committee_size);

/// Greedy core-set selection. Returns candidate row indices in pick order.
/// Ties resolve to the lowest index; with no labeled rows the first pick is
/// the candidate farthest from the candidate centroid.
std::vector<std::size_t> k_center_greedy(const Eigen::MatrixXd& candidates, const Eigen::MatrixXd& labeled,
                                         std::size_t b);

/// Feature rows with labels; labels may be -1 in a pool served to a human.
struct LabeledSet {
  Eigen::MatrixXd x;
  std::vector<int> y;
};

/// Min-max scales pool and test with extremes taken from the pool.
void scale_active_data(LabeledSet& pool, LabeledSet& test);

struct TracePoint {
  int round = 0;
  std::size_t labeled_count = 0;
  double test_accuracy = 0.0;
};

struct ActiveState {
  ActiveConfig config;
  std::size_t pool_size = 0;
  std::vector<std::size_t> labeled;  // acquisition order
  std::vector<int> labels;           // parallel to `labeled`
  std::vector<std::size_t> pending;  // queried, awaiting labels
  std::vector<int> pending_labels;   // -1 until answered
  int round = 0;
  std::vector<TracePoint> trace;
  bool done = false;
  bool suspended = false;

  std::vector<std::size_t> unlabeled() const;
};

nlohmann::json to_json(const ActiveState& state);
ActiveState active_state_from_json(const nlohmann::json& j);
void save_active_state(const ActiveState& state, const std::filesystem::path& path);
ActiveState load_active_state(const std::filesystem::path& path);

/// Step-wise query loop. start() queues the seed set; answer() records
/// labels; once every pending pair is answered, advance() retrains, appends
/// a trace point and queues the next batch (or finishes).
class ActiveSession {
 public:
  ActiveSession(const LabeledSet& pool, const LabeledSet& test, ActiveConfig config);
  ActiveSession(const LabeledSet& pool, const LabeledSet& test, ActiveState state);

  void start();
  void answer(std::size_t index, int label);
  bool batch_complete() const;
  void advance();

  const ActiveState& state() const { return state_; }
  const std::vector<std::size_t>& pending() const { return state_.pending; }
  bool done() const { return state_.done; }

  /// Passive baseline: the same trainer on every pool row.
  static double passive_accuracy(const LabeledSet& pool, const LabeledSet& test, const TrainHyper& hyper);

 private:
  std::vector<std::size_t> select(const std::vector<LinearModel>& committee, std::size_t count) const;

  const LabeledSet& pool_;
  const LabeledSet& test_;
  ActiveState state_;
};

/// A label refers to a pair that is not pending or was already answered.
class LabelConflict : public InvalidInput {
 public:
  using InvalidInput::InvalidInput;
};

class OracleUnavailable : public Error {
 public:
  explicit OracleUnavailable(const std::string& what) : Error(Category::kData, what) {}
};

class Oracle {
 public:
  virtual ~Oracle() = default;
  virtual std::vector<int> label(std::span<const std::size_t> indices) = 0;
};

class GroundTruthOracle : public Oracle {
 public:
  explicit GroundTruthOracle(std::vector<int> truth) : truth_(std::move(truth)) {}
  std::vector<int> label(std::span<const std::size_t> indices) override;

 private:
  std::vector<int> truth_;
};

using TraceCallback = std::function<void(const TracePoint&)>;

/// Runs until the budget is spent. If the oracle throws OracleUnavailable the
/// state is returned with `suspended` set and, when a path is given, saved.
ActiveState run_active_loop(const LabeledSet& pool, const LabeledSet& test, const ActiveConfig& config, Oracle& oracle,
                            const std::optional<std::filesystem::path>& state_path = std::nullopt,
                            const TraceCallback& on_point = {});

ActiveState resume_active_loop(const LabeledSet& pool, const LabeledSet& test, ActiveState state, Oracle& oracle,
                               const std::optional<std::filesystem::path>& state_path = std::nullopt,
                               const TraceCallback& on_point = {});

void write_trace_csv(const std::vector<TracePoint>& trace, std::ostream& out);
std::string trace_csv(const std::vector<TracePoint>& trace);

/// Smallest labeled count whose accuracy reaches `target`.
std::optional<std::size_t> labels_to_reach(const std::vector<TracePoint>& trace, double target);

}  // namespace sslface
