#include "sslface/service.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <future>
#include <map>
#include <mutex>
#include <random>
#include <set>
#include <sstream>
#include <unordered_map>

#include "httplib.h"
#include "json.hpp"
#include "sslface/active_data.hpp"
#include "sslface/error.hpp"
#include "sslface/imageio.hpp"
#include "sslface/random.hpp"

namespace sslface {

namespace fs = std::filesystem;
using nlohmann::json;

std::string pair_id(const FacePair& pair, std::size_t occurrence) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&](std::string_view s) {
    for (unsigned char c : s) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
    h ^= 0xff;
    h *= 0x100000001b3ULL;
  };
  feed(pair.a.key());
  feed(pair.b.key());
  char buf[40];
  if (occurrence == 0) {
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  } else {
    std::snprintf(buf, sizeof buf, "%016llx-%zu", static_cast<unsigned long long>(h), occurrence);
  }
  return buf;
}

namespace {

constexpr const char* kProblemType = "application/problem+json";

struct HttpProblem {
  int status;
  std::string reason;
  std::string detail;
};

void send_problem(httplib::Response& res, const HttpProblem& p) {
  res.status = p.status;
  const json body = {{"type", "about:blank"},
                     {"title", httplib::status_message(p.status)},
                     {"status", p.status},
                     {"reason", p.reason},
                     {"detail", p.detail}};
  res.set_content(body.dump(), kProblemType);
}

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

json parse_body(const httplib::Request& req) {
  if (req.body.empty()) return json::object();
  try {
    json j = json::parse(req.body);
    if (!j.is_object()) throw HttpProblem{400, "bad_json", "request body must be a JSON object"};
    return j;
  } catch (const json::parse_error& e) {
    throw HttpProblem{400, "bad_json", e.what()};
  }
}

std::string random_token() {
  std::random_device rd;
  const std::uint64_t v = (static_cast<std::uint64_t>(rd()) << 32) ^ rd() ^
                          static_cast<std::uint64_t>(std::chrono::steady_clock::now().time_since_epoch().count());
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(mix64(v)));
  return buf;
}

struct Dataset {
  ActiveDataset data;
  std::vector<std::string> pair_ids;
  std::unordered_map<std::string, std::size_t> index_of;
};

enum class Phase { kAwaitingLabels, kRetraining, kDone, kFailed };

const char* phase_name(Phase p) {
  switch (p) {
    case Phase::kAwaitingLabels: return "awaiting_labels";
    case Phase::kRetraining: return "retraining";
    case Phase::kDone: return "done";
    case Phase::kFailed: return "failed";
  }
  return "?";
}

struct Session {
  std::string id;
  std::string idempotency_key;
  json dataset_ref;
  std::shared_ptr<const Dataset> dataset;
  std::unique_ptr<ActiveSession> engine;
  std::set<std::string> request_ids;
  Phase phase = Phase::kAwaitingLabels;
  std::string failure;
  ActiveState published;  // copy readable while retraining
  std::future<void> job;
  std::mutex mu;
};

}  // namespace

struct Service::Impl {
  ServiceConfig config;
  std::shared_ptr<const VerificationModel> model;
  ImageStore store{8192};
  httplib::Server server;

  std::mutex mu;  // sessions, keys, datasets, pairs
  std::map<std::string, std::shared_ptr<Session>> sessions;
  std::map<std::string, std::string> by_key;
  std::map<std::string, std::shared_ptr<const Dataset>> datasets;
  std::unordered_map<std::string, FacePair> pairs;
  std::mutex dataset_build_mu;

  fs::path sessions_dir() const { return config.store_path / "sessions"; }
  fs::path snapshot_path(const std::string& id) const { return sessions_dir() / (id + ".json"); }
  fs::path wal_path(const std::string& id) const { return sessions_dir() / (id + ".wal"); }

  // ---- datasets ----

  std::shared_ptr<const Dataset> dataset_for(const json& ref) {
    std::string pairs_name;
    int test_fold = -1;
    try {
      pairs_name = ref.value("pairs", std::string("pairs.txt"));
      test_fold = ref.value("test_fold", -1);
    } catch (const json::exception& e) {
      throw HttpProblem{400, "bad_dataset", e.what()};
    }
    const fs::path pairs_path = config.data_root / pairs_name;
    const std::string key = pairs_path.string() + "#" + std::to_string(test_fold);
    std::lock_guard build(dataset_build_mu);
    {
      std::lock_guard lock(mu);
      if (auto it = datasets.find(key); it != datasets.end()) return it->second;
    }
    PairProtocol protocol;
    try {
      protocol = parse_pairs_file(pairs_path, ImageLayout{config.data_root});
    } catch (const Error& e) {
      throw HttpProblem{422, "dataset_unreadable", e.what()};
    }
    if (protocol.folds.size() < 2) throw HttpProblem{422, "too_few_folds", "dataset needs at least two folds"};
    const std::size_t held = test_fold < 0 ? protocol.folds.size() - 1 : static_cast<std::size_t>(test_fold);
    if (held >= protocol.folds.size()) throw HttpProblem{400, "bad_test_fold", "test_fold out of range"};
    SplitPairs split = kfold_split(protocol, held);

    auto d = std::make_shared<Dataset>();
    d->data = build_active_dataset(*model, std::move(split.train), std::move(split.test), store, config.threads);
    std::map<std::string, std::size_t> seen;
    for (std::size_t i = 0; i < d->data.pool_pairs.size(); ++i) {
      const std::string base = pair_id(d->data.pool_pairs[i]);
      const std::string pid = pair_id(d->data.pool_pairs[i], seen[base]++);
      d->pair_ids.push_back(pid);
      d->index_of.emplace(pid, i);
    }
    std::lock_guard lock(mu);
    for (std::size_t i = 0; i < d->pair_ids.size(); ++i) pairs.emplace(d->pair_ids[i], d->data.pool_pairs[i]);
    datasets.emplace(key, d);
    return d;
  }

  // ---- persistence ----

  void persist(Session& s) {
    if (config.store_path.empty()) return;
    const json snap = {{"id", s.id},
                       {"idempotency_key", s.idempotency_key},
                       {"dataset", s.dataset_ref},
                       {"state", to_json(s.engine->state())},
                       {"request_ids", s.request_ids}};
    const fs::path path = snapshot_path(s.id);
    const fs::path tmp = path.string() + ".tmp";
    {
      std::ofstream out(tmp, std::ios::trunc);
      out << snap.dump() << '\n';
      if (!out) throw DataError("cannot write " + tmp.string());
    }
    fs::rename(tmp, path);
    std::ofstream(wal_path(s.id), std::ios::trunc);
  }

  void append_wal(const Session& s, const json& entry) {
    if (config.store_path.empty()) return;
    std::ofstream out(wal_path(s.id), std::ios::app);
    out << entry.dump() << '\n';
    out.flush();
    if (!out) throw DataError("cannot append to the label log of session " + s.id);
  }

  void restore() {
    if (config.store_path.empty()) return;
    fs::create_directories(sessions_dir());
    std::vector<fs::path> snapshots;
    for (const auto& e : fs::directory_iterator(sessions_dir())) {
      if (e.path().extension() == ".json") snapshots.push_back(e.path());
    }
    std::sort(snapshots.begin(), snapshots.end());
    for (const auto& path : snapshots) {
      json snap;
      std::ifstream(path) >> snap;
      auto s = std::make_shared<Session>();
      s->id = snap.at("id").get<std::string>();
      s->idempotency_key = snap.at("idempotency_key").get<std::string>();
      s->dataset_ref = snap.at("dataset");
      s->request_ids = snap.at("request_ids").get<std::set<std::string>>();
      s->dataset = dataset_for(s->dataset_ref);
      s->engine = std::make_unique<ActiveSession>(s->dataset->data.pool, s->dataset->data.test,
                                                  active_state_from_json(snap.at("state")));
      std::ifstream wal(wal_path(s->id));
      std::string line;
      while (std::getline(wal, line)) {
        if (line.empty()) continue;
        json entry;
        try {
          entry = json::parse(line);
        } catch (const json::parse_error&) {
          break;  // torn final write
        }
        const auto rid = entry.at("request_id").get<std::string>();
        if (!rid.empty() && !s->request_ids.insert(rid).second) continue;
        for (const auto& item : entry.at("labels")) {
          try {
            s->engine->answer(item.at(0).get<std::size_t>(), item.at(1).get<int>());
          } catch (const LabelConflict&) {
          }
        }
      }
      s->published = s->engine->state();
      s->phase = s->engine->done() ? Phase::kDone : Phase::kAwaitingLabels;
      {
        std::lock_guard lock(mu);
        if (!s->idempotency_key.empty()) by_key[s->idempotency_key] = s->id;
        sessions[s->id] = s;
      }
      std::lock_guard lock(s->mu);
      if (s->engine->batch_complete()) launch_retrain(s);
    }
  }

  // ---- session mechanics; callers hold s->mu ----

  void launch_retrain(const std::shared_ptr<Session>& s) {
    s->phase = Phase::kRetraining;
    s->job = std::async(std::launch::async, [this, s] {
      try {
        s->engine->advance();
        std::lock_guard lock(s->mu);
        s->published = s->engine->state();
        s->phase = s->engine->done() ? Phase::kDone : Phase::kAwaitingLabels;
        persist(*s);
      } catch (const std::exception& e) {
        std::lock_guard lock(s->mu);
        s->phase = Phase::kFailed;
        s->failure = e.what();
      }
    });
  }

  std::shared_ptr<Session> find(const std::string& id) {
    std::lock_guard lock(mu);
    auto it = sessions.find(id);
    if (it == sessions.end()) throw HttpProblem{404, "unknown_session", "no session " + id};
    return it->second;
  }

  json status_of(const Session& s) const {
    const ActiveState& st = s.published;
    json j = {{"id", s.id},
              {"state", phase_name(s.phase)},
              {"round", st.round},
              {"labeled_count", st.labeled.size()},
              {"budget", st.config.budget},
              {"pool_size", st.pool_size},
              {"config", to_json(st.config)}};
    if (s.phase == Phase::kFailed) j["failure"] = s.failure;
    return j;
  }

  // ---- handlers ----

  void create_session(const httplib::Request& req, httplib::Response& res) {
    const json body = parse_body(req);
    std::string key = req.get_header_value("Idempotency-Key");
    if (key.empty()) key = body.value("idempotency_key", std::string());
    if (!key.empty()) {
      std::lock_guard lock(mu);
      if (auto it = by_key.find(key); it != by_key.end()) {
        auto s = sessions.at(it->second);
        std::lock_guard slock(s->mu);
        send_json(res, 200, status_of(*s));
        return;
      }
    }
    ActiveConfig cfg;
    try {
      cfg = active_config_from_json(body.value("config", json::object()));
    } catch (const InvalidInput& e) {
      throw HttpProblem{400, "invalid_config", e.what()};
    }
    cfg.threads = config.threads;
    const json ref = body.value("dataset", json::object());
    auto dataset = dataset_for(ref);
    if (auto p = cfg.check(dataset->data.pool.y.size())) throw HttpProblem{400, p->reason, p->message};

    auto s = std::make_shared<Session>();
    s->id = random_token();
    s->idempotency_key = key;
    s->dataset_ref = ref;
    s->dataset = dataset;
    s->engine = std::make_unique<ActiveSession>(dataset->data.pool, dataset->data.test, cfg);
    s->engine->start();

    std::lock_guard slock(s->mu);
    const auto& truth = dataset->data.pool.y;
    const auto seed = s->engine->pending();
    const bool known = std::all_of(seed.begin(), seed.end(), [&](std::size_t i) { return truth[i] >= 0; });
    if (known) {
      for (auto i : seed) s->engine->answer(i, truth[i]);
    }
    s->published = s->engine->state();
    {
      std::lock_guard lock(mu);
      if (!key.empty()) {
        if (auto it = by_key.find(key); it != by_key.end()) {
          // lost a creation race with the same key
          auto other = sessions.at(it->second);
          send_json(res, 200, {{"id", other->id}});
          return;
        }
        by_key[key] = s->id;
      }
      sessions[s->id] = s;
    }
    persist(*s);
    if (known) launch_retrain(s);
    send_json(res, 201, status_of(*s));
  }

  void get_status(const httplib::Request& req, httplib::Response& res) {
    auto s = find(req.matches[1]);
    std::lock_guard lock(s->mu);
    send_json(res, 200, status_of(*s));
  }

  void check_open(const Session& s, httplib::Response& res) {
    if (s.phase == Phase::kDone) throw HttpProblem{410, "session_done", "session " + s.id + " has finished"};
    if (s.phase == Phase::kFailed) throw HttpProblem{500, "retrain_failed", s.failure};
    if (s.phase == Phase::kRetraining) {
      res.set_header("Retry-After", "1");
      throw HttpProblem{503, "retraining", "session is retraining; retry shortly"};
    }
  }

  void get_queries(const httplib::Request& req, httplib::Response& res) {
    auto s = find(req.matches[1]);
    std::lock_guard lock(s->mu);
    check_open(*s, res);
    const ActiveState& st = s->engine->state();
    json items = json::array();
    for (std::size_t k = 0; k < st.pending.size(); ++k) {
      const std::string& pid = s->dataset->pair_ids[st.pending[k]];
      items.push_back({{"pair_id", pid},
                       {"labeled", st.pending_labels[k] >= 0},
                       {"images",
                        {{"a", "/api/pairs/" + pid + "/images/a"}, {"b", "/api/pairs/" + pid + "/images/b"}}}});
    }
    send_json(res, 200, {{"session", s->id}, {"round", st.round}, {"state", phase_name(s->phase)}, {"queries", items}});
  }

  void post_labels(const httplib::Request& req, httplib::Response& res) {
    auto s = find(req.matches[1]);
    const json body = parse_body(req);
    const std::string rid = body.value("request_id", std::string());
    std::lock_guard lock(s->mu);
    if (!rid.empty() && s->request_ids.count(rid)) {
      json j = status_of(*s);
      j["replayed"] = true;
      send_json(res, 200, j);
      return;
    }
    check_open(*s, res);
    if (!body.contains("labels") || !body["labels"].is_array()) {
      throw HttpProblem{400, "bad_labels", "body needs a labels array"};
    }
    const ActiveState& st = s->engine->state();
    std::vector<std::pair<std::size_t, int>> batch;
    std::set<std::size_t> in_post;
    for (const auto& item : body["labels"]) {
      if (!item.is_object() || !item.contains("pair_id")) throw HttpProblem{400, "bad_labels", "each label needs pair_id"};
      int label = -1;
      if (item.contains("match") && item["match"].is_boolean()) label = item["match"].get<bool>() ? 1 : 0;
      if (item.contains("label") && item["label"].is_number_integer()) label = item["label"].get<int>();
      if (label != 0 && label != 1) throw HttpProblem{400, "bad_labels", "label must be 0/1 or match must be boolean"};
      const std::string pid = item["pair_id"].is_string() ? item["pair_id"].get<std::string>() : "";
      auto it = s->dataset->index_of.find(pid);
      if (it == s->dataset->index_of.end()) throw HttpProblem{409, "unknown_pair", "pair " + pid + " is not in this session"};
      const std::size_t idx = it->second;
      const auto pos = std::find(st.pending.begin(), st.pending.end(), idx);
      if (pos == st.pending.end()) {
        const bool labeled = std::find(st.labeled.begin(), st.labeled.end(), idx) != st.labeled.end();
        throw HttpProblem{409, labeled ? "already_labeled" : "not_pending", "pair " + pid + " is not awaiting a label"};
      }
      if (st.pending_labels[static_cast<std::size_t>(pos - st.pending.begin())] >= 0 || !in_post.insert(idx).second) {
        throw HttpProblem{409, "already_labeled", "pair " + pid + " is already labeled"};
      }
      batch.emplace_back(idx, label);
    }
    json entry = {{"request_id", rid}, {"labels", json::array()}};
    for (const auto& [i, l] : batch) entry["labels"].push_back({i, l});
    append_wal(*s, entry);
    for (const auto& [i, l] : batch) s->engine->answer(i, l);
    if (!rid.empty()) s->request_ids.insert(rid);
    s->published = s->engine->state();

    std::size_t remaining = 0;
    for (int l : s->engine->state().pending_labels) remaining += l < 0 ? 1 : 0;
    if (s->engine->batch_complete()) launch_retrain(s);
    json j = status_of(*s);
    j["accepted"] = batch.size();
    j["remaining"] = remaining;
    send_json(res, 200, j);
  }

  void get_metrics(const httplib::Request& req, httplib::Response& res) {
    auto s = find(req.matches[1]);
    std::lock_guard lock(s->mu);
    const bool csv = req.get_param_value("format") == "csv" ||
                     (req.get_param_value("format").empty() &&
                      req.get_header_value("Accept").find("text/csv") != std::string::npos);
    if (csv) {
      res.set_content(trace_csv(s->published.trace), "text/csv");
      return;
    }
    json trace = json::array();
    for (const auto& p : s->published.trace) {
      trace.push_back({{"round", p.round}, {"labeled_count", p.labeled_count}, {"test_accuracy", p.test_accuracy}});
    }
    json j = status_of(*s);
    j["trace"] = trace;
    send_json(res, 200, j);
  }

  void get_image(const httplib::Request& req, httplib::Response& res) {
    const std::string pid = req.matches[1];
    const std::string side = req.matches[2];
    FacePair pair;
    {
      std::lock_guard lock(mu);
      auto it = pairs.find(pid);
      if (it == pairs.end()) throw HttpProblem{404, "unknown_pair", "no pair " + pid};
      pair = it->second;
    }
    const RgbImage img = normalized_rgb(store.load(side == "a" ? pair.a : pair.b), model->preprocess);
    const auto png = encode_png(img);
    res.set_content(std::string(png.begin(), png.end()), "image/png");
  }

  void post_verify(const httplib::Request& req, httplib::Response& res) {
    if (!req.is_multipart_form_data() || !req.has_file("a") || !req.has_file("b")) {
      throw HttpProblem{400, "missing_images", "multipart fields a and b are required"};
    }
    auto decode = [&](const char* field) {
      const auto& content = req.get_file_value(field).content;
      try {
        return decode_image(std::span(reinterpret_cast<const std::uint8_t*>(content.data()), content.size()));
      } catch (const Error& e) {
        throw HttpProblem{400, "bad_image", std::string(field) + ": " + e.what()};
      }
    };
    const auto a = preprocess_face(decode("a"), model->preprocess);
    const auto b = preprocess_face(decode("b"), model->preprocess);
    const VerifyResult r = verify(*model, a, b);
    send_json(res, 200, {{"probability", r.probability}, {"match", r.match}, {"p_y", r.p_y}, {"p_crcb", r.p_crcb}});
  }

  bool authorized(const httplib::Request& req) const {
    if (config.token.empty()) return true;
    if (req.get_header_value("Authorization") == "Bearer " + config.token) return true;
    return req.get_param_value("token") == config.token;
  }

  template <typename Fn>
  httplib::Server::Handler wrap(Fn fn) {
    return [this, fn](const httplib::Request& req, httplib::Response& res) {
      try {
        if (!authorized(req)) throw HttpProblem{401, "unauthorized", "missing or wrong bearer token"};
        (this->*fn)(req, res);
      } catch (const HttpProblem& p) {
        send_problem(res, p);
      } catch (const InvalidInput& e) {
        send_problem(res, {400, "invalid_input", e.what()});
      } catch (const DataError& e) {
        send_problem(res, {422, "data_error", e.what()});
      } catch (const std::exception& e) {
        send_problem(res, {500, "internal", e.what()});
      }
    };
  }

  void routes() {
    server.Post("/api/sessions", wrap(&Impl::create_session));
    server.Get(R"(/api/sessions/([0-9a-f]+))", wrap(&Impl::get_status));
    server.Get(R"(/api/sessions/([0-9a-f]+)/queries)", wrap(&Impl::get_queries));
    server.Post(R"(/api/sessions/([0-9a-f]+)/labels)", wrap(&Impl::post_labels));
    server.Get(R"(/api/sessions/([0-9a-f]+)/metrics)", wrap(&Impl::get_metrics));
    server.Get(R"(/api/pairs/([0-9a-f]+(?:-[0-9]+)?)/images/(a|b))", wrap(&Impl::get_image));
    server.Post("/api/verify", wrap(&Impl::post_verify));
    server.Get("/api/health", [](const httplib::Request&, httplib::Response& res) {
      res.set_content(R"({"status":"ok"})", "application/json");
    });
  }

  void wait_idle() {
    for (;;) {
      std::vector<std::shared_ptr<Session>> all;
      {
        std::lock_guard lock(mu);
        for (auto& [id, s] : sessions) all.push_back(s);
      }
      bool busy = false;
      for (auto& s : all) {
        std::future<void> job;
        {
          std::lock_guard lock(s->mu);
          if (s->job.valid()) job = std::move(s->job);
        }
        if (job.valid()) {
          job.wait();
          busy = true;
        }
      }
      if (!busy) return;
    }
  }
};

Service::Service(ServiceConfig config, std::shared_ptr<const VerificationModel> model) : impl_(std::make_unique<Impl>()) {
  impl_->config = std::move(config);
  impl_->model = model ? std::move(model)
                       : std::make_shared<const VerificationModel>(load_verification_model(impl_->config.model_path));
  impl_->routes();
  impl_->restore();
}

Service::~Service() {
  stop();
  impl_->wait_idle();
}

int Service::bind() {
  if (impl_->config.port == 0) return impl_->server.bind_to_any_port(impl_->config.host);
  if (!impl_->server.bind_to_port(impl_->config.host, impl_->config.port)) {
    throw InvalidInput("cannot bind " + impl_->config.host + ":" + std::to_string(impl_->config.port));
  }
  return impl_->config.port;
}

void Service::run() { impl_->server.listen_after_bind(); }

void Service::stop() { impl_->server.stop(); }

void Service::wait_idle() { impl_->wait_idle(); }

}  // namespace sslface
