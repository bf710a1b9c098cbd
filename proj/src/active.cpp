#include "sslface/active.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

#include "sslface/parallel.hpp"
#include "sslface/random.hpp"

namespace sslface {
namespace {

double row_entropy(std::span<const double> p) {
  double h = 0.0;
  for (double v : p) {
    if (v > 0.0) h -= v * std::log(v);
  }
  return h;
}

const char* kind_name(ClassifierKind k) { return k == ClassifierKind::kLogistic ? "logistic" : "linear_svm"; }

ClassifierKind parse_kind(const std::string& s) {
  if (s == "logistic") return ClassifierKind::kLogistic;
  if (s == "linear_svm") return ClassifierKind::kLinearSvm;
  throw InvalidInput("unknown committee member '" + s + "'");
}

Eigen::MatrixXd gather_rows(const Eigen::MatrixXd& x, const std::vector<std::size_t>& rows) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), x.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = x.row(static_cast<Eigen::Index>(rows[i]));
  return out;
}

// A single-class labeled set gets a constant model voting for that class.
LinearModel train_member(ClassifierKind kind, const Eigen::MatrixXd& x, const std::vector<int>& y,
                         const TrainHyper& hyper) {
  const bool one_class = std::all_of(y.begin(), y.end(), [&](int v) { return v == y.front(); });
  if (one_class) {
    LinearModel m;
    m.weights = Eigen::VectorXd::Zero(x.cols());
    m.bias = y.front() == 1 ? 1.0 : -1.0;
    m.kind = kind;
    m.hyper = hyper;
    return m;
  }
  return kind == ClassifierKind::kLogistic ? train_logistic(x, y, hyper) : train_linear_svm(x, y, hyper);
}

}  // namespace

const char* to_string(Strategy s) {
  switch (s) {
    case Strategy::kEntropy: return "entropy";
    case Strategy::kQbc: return "qbc";
    case Strategy::kCoreSet: return "coreset";
  }
  return "?";
}

Strategy parse_strategy(const std::string& name) {
  if (name == "entropy") return Strategy::kEntropy;
  if (name == "qbc") return Strategy::kQbc;
  if (name == "coreset") return Strategy::kCoreSet;
  throw InvalidInput("unknown strategy '" + name + "' (expected entropy, qbc or coreset)");
}

std::optional<ActiveConfig::Problem> ActiveConfig::check(std::size_t pool_size) const {
  if (batch_size == 0) return Problem{"batch_size_zero", "batch_size must be positive"};
  if (budget < batch_size) return Problem{"budget_below_batch", "budget must be at least batch_size"};
  if (budget > pool_size) {
    return Problem{"budget_exceeds_pool", "budget exceeds pool size " + std::to_string(pool_size)};
  }
  if (!(seed_fraction > 0.0 && seed_fraction <= 1.0)) {
    return Problem{"seed_fraction_range", "seed_fraction must be in (0, 1]"};
  }
  if (strategy == Strategy::kQbc && committee.empty()) return Problem{"empty_committee", "qbc needs a committee"};
  return std::nullopt;
}

void ActiveConfig::validate(std::size_t pool_size) const {
  if (auto p = check(pool_size)) throw InvalidInput(p->message);
}

nlohmann::json to_json(const ActiveConfig& c) {
  nlohmann::json committee = nlohmann::json::array();
  for (auto k : c.committee) committee.push_back(kind_name(k));
  return {{"strategy", to_string(c.strategy)},
          {"batch_size", c.batch_size},
          {"budget", c.budget},
          {"seed", c.seed},
          {"committee", committee},
          {"seed_fraction", c.seed_fraction},
          {"lambda", c.hyper.lambda},
          {"max_iterations", c.hyper.max_iterations},
          {"tolerance", c.hyper.tolerance}};
}

ActiveConfig active_config_from_json(const nlohmann::json& j) {
  ActiveConfig c;
  try {
    if (j.contains("strategy")) c.strategy = parse_strategy(j.at("strategy").get<std::string>());
    if (j.contains("batch_size")) c.batch_size = j.at("batch_size").get<std::size_t>();
    if (j.contains("budget")) c.budget = j.at("budget").get<std::size_t>();
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("committee")) {
      c.committee.clear();
      for (const auto& k : j.at("committee")) c.committee.push_back(parse_kind(k.get<std::string>()));
    }
    if (j.contains("seed_fraction")) c.seed_fraction = j.at("seed_fraction").get<double>();
    if (j.contains("lambda")) c.hyper.lambda = j.at("lambda").get<double>();
    if (j.contains("max_iterations")) c.hyper.max_iterations = j.at("max_iterations").get<int>();
    if (j.contains("tolerance")) c.hyper.tolerance = j.at("tolerance").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput(std::string("active config: ") + e.what());
  }
  return c;
}

std::vector<double> entropy_scores(const std::vector<std::vector<double>>& probs) {
  std::vector<double> out;
  out.reserve(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i) {
    double sum = 0.0;
    for (double v : probs[i]) {
      if (!(v >= 0.0 && v <= 1.0)) throw InvalidInput("entropy_scores: row " + std::to_string(i) + " has an entry outside [0,1]");
      sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-6) throw InvalidInput("entropy_scores: row " + std::to_string(i) + " does not sum to 1");
    out.push_back(row_entropy(probs[i]));
  }
  return out;
}

std::vector<double> vote_entropy_scores(const std::vector<std::vector<int>>& votes, std::size_t committee_size) {
  if (committee_size == 0) throw InvalidInput("vote_entropy_scores: empty committee");
  std::vector<double> out;
  out.reserve(votes.size());
  for (std::size_t i = 0; i < votes.size(); ++i) {
    if (votes[i].size() != committee_size) {
      throw InvalidInput("vote_entropy_scores: sample " + std::to_string(i) + " has " +
                         std::to_string(votes[i].size()) + " votes, expected " + std::to_string(committee_size));
    }
    std::map<int, std::size_t> counts;
    for (int v : votes[i]) ++counts[v];
    double h = 0.0;
    for (const auto& [label, n] : counts) {
      const double f = static_cast<double>(n) / static_cast<double>(committee_size);
      h -= f * std::log(f);
    }
    out.push_back(h);
  }
  return out;
}

std::vector<std::size_t> k_center_greedy(const Eigen::MatrixXd& candidates, const Eigen::MatrixXd& labeled,
                                         std::size_t b) {
  const auto n = static_cast<std::size_t>(candidates.rows());
  if (b > n) throw InvalidInput("k_center_greedy: b exceeds the candidate count");
  if (labeled.rows() > 0 && labeled.cols() != candidates.cols()) {
    throw InvalidInput("k_center_greedy: labeled and candidate dimensions differ");
  }
  std::vector<std::size_t> picked;
  if (b == 0) return picked;

  constexpr double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> nearest(n, kInf);
  std::vector<char> taken(n, 0);

  auto relax = [&](const Eigen::Ref<const Eigen::RowVectorXd>& center) {
    for (std::size_t i = 0; i < n; ++i) {
      if (taken[i]) continue;
      nearest[i] = std::min(nearest[i], (candidates.row(static_cast<Eigen::Index>(i)) - center).squaredNorm());
    }
  };
  auto farthest = [&](const std::vector<double>& d) {
    std::size_t best = n;
    for (std::size_t i = 0; i < n; ++i) {
      if (!taken[i] && (best == n || d[i] > d[best])) best = i;
    }
    return best;
  };

  for (Eigen::Index r = 0; r < labeled.rows(); ++r) relax(labeled.row(r));
  if (labeled.rows() == 0) {
    const Eigen::RowVectorXd centroid = candidates.colwise().mean();
    std::vector<double> d(n);
    for (std::size_t i = 0; i < n; ++i) d[i] = (candidates.row(static_cast<Eigen::Index>(i)) - centroid).squaredNorm();
    const std::size_t first = farthest(d);
    taken[first] = 1;
    picked.push_back(first);
    relax(candidates.row(static_cast<Eigen::Index>(first)));
  }
  while (picked.size() < b) {
    const std::size_t next = farthest(nearest);
    taken[next] = 1;
    picked.push_back(next);
    relax(candidates.row(static_cast<Eigen::Index>(next)));
  }
  return picked;
}

void scale_active_data(LabeledSet& pool, LabeledSet& test) {
  const MinMaxScaler s = MinMaxScaler::fit(pool.x);
  pool.x = s.transform_rows(pool.x);
  if (test.x.rows() > 0) test.x = s.transform_rows(test.x);
}

std::vector<std::size_t> ActiveState::unlabeled() const {
  std::vector<char> used(pool_size, 0);
  for (auto i : labeled) used[i] = 1;
  for (auto i : pending) used[i] = 1;
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < pool_size; ++i) {
    if (!used[i]) out.push_back(i);
  }
  return out;
}

nlohmann::json to_json(const ActiveState& s) {
  nlohmann::json trace = nlohmann::json::array();
  for (const auto& p : s.trace) {
    trace.push_back({{"round", p.round}, {"labeled_count", p.labeled_count}, {"test_accuracy", p.test_accuracy}});
  }
  return {{"config", to_json(s.config)}, {"pool_size", s.pool_size}, {"labeled", s.labeled},
          {"labels", s.labels},          {"pending", s.pending},     {"pending_labels", s.pending_labels},
          {"round", s.round},            {"trace", trace},           {"done", s.done},
          {"suspended", s.suspended}};
}

ActiveState active_state_from_json(const nlohmann::json& j) {
  ActiveState s;
  try {
    s.config = active_config_from_json(j.at("config"));
    s.pool_size = j.at("pool_size").get<std::size_t>();
    s.labeled = j.at("labeled").get<std::vector<std::size_t>>();
    s.labels = j.at("labels").get<std::vector<int>>();
    s.pending = j.at("pending").get<std::vector<std::size_t>>();
    s.pending_labels = j.at("pending_labels").get<std::vector<int>>();
    s.round = j.at("round").get<int>();
    for (const auto& p : j.at("trace")) {
      s.trace.push_back({p.at("round").get<int>(), p.at("labeled_count").get<std::size_t>(),
                         p.at("test_accuracy").get<double>()});
    }
    s.done = j.at("done").get<bool>();
    s.suspended = j.value("suspended", false);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("active state: ") + e.what());
  }
  if (s.labels.size() != s.labeled.size() || s.pending_labels.size() != s.pending.size()) {
    throw DataError("active state: index and label lists differ in length");
  }
  return s;
}

void save_active_state(const ActiveState& state, const std::filesystem::path& path) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw DataError("cannot write " + tmp);
    out << to_json(state).dump(1) << '\n';
    if (!out) throw DataError("cannot write " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

ActiveState load_active_state(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  return active_state_from_json(j);
}

ActiveSession::ActiveSession(const LabeledSet& pool, const LabeledSet& test, ActiveConfig config)
    : pool_(pool), test_(test) {
  if (pool.y.size() != static_cast<std::size_t>(pool.x.rows())) throw InvalidInput("pool labels and rows differ");
  if (test.y.size() != static_cast<std::size_t>(test.x.rows())) throw InvalidInput("test labels and rows differ");
  if (test.x.rows() > 0 && test.x.cols() != pool.x.cols()) throw InvalidInput("pool and test dimensions differ");
  config.validate(pool.y.size());
  state_.config = std::move(config);
  state_.pool_size = pool.y.size();
}

ActiveSession::ActiveSession(const LabeledSet& pool, const LabeledSet& test, ActiveState state)
    : ActiveSession(pool, test, state.config) {
  if (state.pool_size != state_.pool_size) throw DataError("saved state was made for a different pool");
  std::vector<char> seen(state_.pool_size, 0);
  for (const auto* list : {&state.labeled, &state.pending}) {
    for (auto i : *list) {
      if (i >= state_.pool_size || seen[i]) throw DataError("saved state has an invalid or repeated index");
      seen[i] = 1;
    }
  }
  state.suspended = false;
  state_ = std::move(state);
}

void ActiveSession::start() {
  if (!state_.labeled.empty() || !state_.pending.empty() || state_.done) throw InvalidInput("session already started");
  const std::size_t n = state_.pool_size;
  auto n0 = static_cast<std::size_t>(std::floor(state_.config.seed_fraction * static_cast<double>(n)));
  n0 = std::clamp<std::size_t>(n0, 1, state_.config.budget);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(state_.config.seed);
  rng.shuffle(order);
  state_.pending.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n0));
  state_.pending_labels.assign(n0, -1);
  state_.round = 0;
}

void ActiveSession::answer(std::size_t index, int label) {
  if (label != 0 && label != 1) throw InvalidInput("labels must be 0 or 1");
  const auto it = std::find(state_.pending.begin(), state_.pending.end(), index);
  if (it == state_.pending.end()) throw LabelConflict("pair " + std::to_string(index) + " is not pending");
  int& slot = state_.pending_labels[static_cast<std::size_t>(it - state_.pending.begin())];
  if (slot >= 0) throw LabelConflict("pair " + std::to_string(index) + " is already labeled");
  slot = label;
}

bool ActiveSession::batch_complete() const {
  return !state_.pending.empty() &&
         std::all_of(state_.pending_labels.begin(), state_.pending_labels.end(), [](int l) { return l >= 0; });
}

void ActiveSession::advance() {
  if (!batch_complete()) throw InvalidInput("pending batch is not fully labeled");
  state_.labeled.insert(state_.labeled.end(), state_.pending.begin(), state_.pending.end());
  state_.labels.insert(state_.labels.end(), state_.pending_labels.begin(), state_.pending_labels.end());
  state_.pending.clear();
  state_.pending_labels.clear();

  std::vector<std::size_t> order(state_.labeled.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return state_.labeled[a] < state_.labeled[b]; });
  std::vector<std::size_t> rows;
  std::vector<int> y;
  for (auto k : order) {
    rows.push_back(state_.labeled[k]);
    y.push_back(state_.labels[k]);
  }
  const Eigen::MatrixXd x = gather_rows(pool_.x, rows);
  const TrainHyper& hyper = state_.config.hyper;

  const LinearModel lr = train_member(ClassifierKind::kLogistic, x, y, hyper);
  const double acc = test_.x.rows() > 0 ? accuracy(lr, test_.x, test_.y) : 0.0;
  state_.trace.push_back({state_.round, state_.labeled.size(), acc});

  const std::size_t remaining = state_.config.budget - std::min(state_.config.budget, state_.labeled.size());
  const std::size_t available = state_.pool_size - state_.labeled.size();
  const std::size_t count = std::min({state_.config.batch_size, remaining, available});
  if (count == 0) {
    state_.done = true;
    return;
  }

  std::vector<LinearModel> committee;
  if (state_.config.strategy == Strategy::kQbc) {
    for (auto kind : state_.config.committee) {
      committee.push_back(kind == ClassifierKind::kLogistic ? lr : train_member(kind, x, y, hyper));
    }
  } else {
    committee.push_back(lr);
  }
  ++state_.round;
  state_.pending = select(committee, count);
  state_.pending_labels.assign(state_.pending.size(), -1);
}

std::vector<std::size_t> ActiveSession::select(const std::vector<LinearModel>& committee, std::size_t count) const {
  const std::vector<std::size_t> unlabeled = state_.unlabeled();
  if (state_.config.strategy == Strategy::kCoreSet) {
    std::vector<std::size_t> labeled = state_.labeled;
    std::sort(labeled.begin(), labeled.end());
    const auto picks = k_center_greedy(gather_rows(pool_.x, unlabeled), gather_rows(pool_.x, labeled), count);
    std::vector<std::size_t> out;
    for (auto p : picks) out.push_back(unlabeled[p]);
    return out;
  }

  std::vector<double> score(unlabeled.size());
  const bool qbc = state_.config.strategy == Strategy::kQbc;
  parallel_for(unlabeled.size(), state_.config.threads, [&](std::size_t i) {
    const auto row = pool_.x.row(static_cast<Eigen::Index>(unlabeled[i])).transpose();
    if (qbc) {
      std::size_t ones = 0;
      for (const auto& m : committee) ones += static_cast<std::size_t>(predict_label(m, row));
      const double f = static_cast<double>(ones) / static_cast<double>(committee.size());
      const double p[2] = {f, 1.0 - f};
      score[i] = row_entropy(p);
    } else {
      const double p1 = predict_proba(committee.front(), row);
      const double p[2] = {p1, 1.0 - p1};
      score[i] = row_entropy(p);
    }
  });
  std::vector<std::size_t> order(unlabeled.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return score[a] > score[b]; });
  std::vector<std::size_t> out;
  for (std::size_t k = 0; k < count; ++k) out.push_back(unlabeled[order[k]]);
  return out;
}

double ActiveSession::passive_accuracy(const LabeledSet& pool, const LabeledSet& test, const TrainHyper& hyper) {
  const LinearModel lr = train_member(ClassifierKind::kLogistic, pool.x, pool.y, hyper);
  return accuracy(lr, test.x, test.y);
}

std::vector<int> GroundTruthOracle::label(std::span<const std::size_t> indices) {
  std::vector<int> out;
  out.reserve(indices.size());
  for (auto i : indices) {
    if (i >= truth_.size() || truth_[i] < 0) throw OracleUnavailable("no ground truth for pair " + std::to_string(i));
    out.push_back(truth_[i]);
  }
  return out;
}

ActiveState resume_active_loop(const LabeledSet& pool, const LabeledSet& test, ActiveState state, Oracle& oracle,
                               const std::optional<std::filesystem::path>& state_path, const TraceCallback& on_point) {
  ActiveSession session(pool, test, std::move(state));
  if (session.state().labeled.empty() && session.pending().empty() && !session.done()) session.start();
  while (!session.done()) {
    std::vector<std::size_t> ask;
    const auto& s = session.state();
    for (std::size_t k = 0; k < s.pending.size(); ++k) {
      if (s.pending_labels[k] < 0) ask.push_back(s.pending[k]);
    }
    try {
      const auto labels = oracle.label(ask);
      if (labels.size() != ask.size()) throw OracleUnavailable("oracle returned the wrong number of labels");
      for (std::size_t k = 0; k < ask.size(); ++k) session.answer(ask[k], labels[k]);
    } catch (const OracleUnavailable&) {
      ActiveState out = session.state();
      out.suspended = true;
      if (state_path) save_active_state(out, *state_path);
      return out;
    }
    session.advance();
    if (on_point) on_point(session.state().trace.back());
    if (state_path) save_active_state(session.state(), *state_path);
  }
  return session.state();
}

ActiveState run_active_loop(const LabeledSet& pool, const LabeledSet& test, const ActiveConfig& config, Oracle& oracle,
                            const std::optional<std::filesystem::path>& state_path, const TraceCallback& on_point) {
  ActiveState fresh;
  fresh.config = config;
  fresh.pool_size = pool.y.size();
  return resume_active_loop(pool, test, std::move(fresh), oracle, state_path, on_point);
}

void write_trace_csv(const std::vector<TracePoint>& trace, std::ostream& out) {
  out << "round,labeled_count,test_accuracy\n";
  char buf[64];
  for (const auto& p : trace) {
    std::snprintf(buf, sizeof buf, "%d,%zu,%.6f\n", p.round, p.labeled_count, p.test_accuracy);
    out << buf;
  }
}

std::string trace_csv(const std::vector<TracePoint>& trace) {
  std::ostringstream out;
  write_trace_csv(trace, out);
  return out.str();
}

std::optional<std::size_t> labels_to_reach(const std::vector<TracePoint>& trace, double target) {
  for (const auto& p : trace) {
    if (p.test_accuracy >= target) return p.labeled_count;
  }
  return std::nullopt;
}

}  // namespace sslface
