#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <chrono>
#include <map>
#include <set>
#include <thread>

#include "json.hpp"
#include "sslface/active_data.hpp"
#include "sslface/imageio.hpp"
#include "sslface/service.hpp"
#include "test_util.hpp"

// after Eigen: <resolv.h> defines _res
#include "httplib.h"

using namespace sslface;
using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

// Synthetic dataset on disk plus a model trained on its pool folds.
struct World {
  testutil::TempDir dir{"sslf_service"};
  fs::path data;
  std::shared_ptr<const VerificationModel> model;
  PairProtocol protocol;
  SplitPairs split;
  std::map<std::string, int> truth;  // pair id -> label
  ImageStore store;

  World() {
    data = dir.path / "data";
    SyntheticSpec spec;
    spec.n_identities = 12;
    spec.images_per_identity = 6;
    spec.intra_class_noise = 6.0;
    spec.n_pairs = 400;
    spec.seed = 21;
    write_synthetic(make_synthetic(spec), data, 4);
    protocol = parse_pairs_file(data / "pairs.txt", ImageLayout{data});
    split = kfold_split(protocol, 3);
    auto cfg = VerificationTrainConfig::defaults();
    model = std::make_shared<VerificationModel>(train_verification(split.train, store, cfg));
    std::map<std::string, std::size_t> seen;
    for (const auto& p : split.train) {
      const auto base = pair_id(p);
      truth[pair_id(p, seen[base]++)] = *p.match ? 1 : 0;
    }
  }
};

World& world() {
  static World w;
  return w;
}

struct Running {
  std::unique_ptr<Service> service;
  std::thread thread;
  int port = 0;

  explicit Running(const fs::path& store, const std::string& token = "") {
    ServiceConfig c;
    c.port = 0;
    c.data_root = world().data;
    c.store_path = store;
    c.token = token;
    service = std::make_unique<Service>(c, world().model);
    port = service->bind();
    thread = std::thread([this] { service->run(); });
  }
  ~Running() {
    service->stop();
    thread.join();
  }
  httplib::Client client() const {
    httplib::Client c("127.0.0.1", port);
    c.set_read_timeout(60, 0);
    return c;
  }
};

json body_of(const httplib::Result& r) { return json::parse(r->body); }

json create(const httplib::Client& c, std::size_t batch, std::size_t budget, std::uint64_t seed, const std::string& key = "",
            int* status = nullptr) {
  json b = {{"config", {{"strategy", "entropy"}, {"batch_size", batch}, {"budget", budget}, {"seed", seed}}},
            {"dataset", {{"pairs", "pairs.txt"}}}};
  httplib::Headers h;
  if (!key.empty()) h.emplace("Idempotency-Key", key);
  auto r = const_cast<httplib::Client&>(c).Post("/api/sessions", h, b.dump(), "application/json");
  REQUIRE(r);
  if (status) *status = r->status;
  return body_of(r);
}

// Polls the query endpoint through retraining.
httplib::Result queries(httplib::Client& c, const std::string& id) {
  for (int i = 0; i < 600; ++i) {
    auto r = c.Get("/api/sessions/" + id + "/queries");
    if (!r || r->status != 503) return r;
    CHECK(r->get_header_value("Retry-After") == "1");
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
  }
  FAIL("session stuck retraining");
  return httplib::Result{};
}

httplib::Result post_labels(httplib::Client& c, const std::string& id, const std::vector<std::string>& pids,
                            const std::string& rid = "", bool as_bool = false) {
  json labels = json::array();
  for (const auto& p : pids) {
    if (as_bool) {
      labels.push_back({{"pair_id", p}, {"match", world().truth.at(p) == 1}});
    } else {
      labels.push_back({{"pair_id", p}, {"label", world().truth.at(p)}});
    }
  }
  json b = {{"labels", labels}};
  if (!rid.empty()) b["request_id"] = rid;
  return c.Post("/api/sessions/" + id + "/labels", b.dump(), "application/json");
}

std::vector<std::string> pending_ids(const json& q, bool unlabeled_only = true) {
  std::vector<std::string> out;
  for (const auto& item : q["queries"]) {
    if (!unlabeled_only || !item["labeled"].get<bool>()) out.push_back(item["pair_id"]);
  }
  return out;
}

std::string reference_csv(std::size_t batch, std::size_t budget, std::uint64_t seed) {
  auto& w = world();
  const auto ds = build_active_dataset(*w.model, w.split.train, w.split.test, w.store);
  ActiveConfig c;
  c.strategy = Strategy::kEntropy;
  c.batch_size = batch;
  c.budget = budget;
  c.seed = seed;
  GroundTruthOracle oracle(ds.pool.y);
  return trace_csv(run_active_loop(ds.pool, ds.test, c, oracle).trace);
}

}  // namespace

TEST_CASE("pair ids are stable and distinguish repeats") {
  const FacePair p{{"x/a.png"}, {"y/b.png"}, true};
  CHECK(pair_id(p) == pair_id(p));
  CHECK(pair_id(p).size() == 16);
  CHECK(pair_id(p, 1) == pair_id(p) + "-1");
  FacePair q = p;
  q.a.mirrored = true;
  CHECK(pair_id(q) != pair_id(p));
}

TEST_CASE("health, validation and unknown sessions") {
  testutil::TempDir store("sslf_store");
  Running s(store.path);
  auto c = s.client();
  auto h = c.Get("/api/health");
  REQUIRE(h);
  CHECK(h->status == 200);

  int status = 0;
  auto bad = create(c, 0, 50, 1, "", &status);
  CHECK(status == 400);
  CHECK(bad["reason"] == "batch_size_zero");
  bad = create(c, 100, 50, 1, "", &status);
  CHECK(status == 400);
  CHECK(bad["reason"] == "budget_below_batch");
  bad = create(c, 10, 100000, 1, "", &status);
  CHECK(status == 400);
  CHECK(bad["reason"] == "budget_exceeds_pool");

  auto r = c.Post("/api/sessions", "{not json", "application/json");
  REQUIRE(r);
  CHECK(r->status == 400);
  CHECK(r->get_header_value("Content-Type").find("application/problem+json") != std::string::npos);

  json missing = {{"config", {{"batch_size", 10}, {"budget", 50}}}, {"dataset", {{"pairs", "nope.txt"}}}};
  r = c.Post("/api/sessions", missing.dump(), "application/json");
  REQUIRE(r);
  CHECK(r->status == 422);

  r = c.Get("/api/sessions/deadbeef/queries");
  REQUIRE(r);
  CHECK(r->status == 404);
}

TEST_CASE("idempotent creation") {
  testutil::TempDir store("sslf_store");
  Running s(store.path);
  auto c = s.client();
  int st1 = 0, st2 = 0;
  const auto a = create(c, 10, 40, 3, "key-1", &st1);
  const auto b = create(c, 10, 40, 3, "key-1", &st2);
  CHECK(st1 == 201);
  CHECK(st2 == 200);
  CHECK(a["id"] == b["id"]);
  const auto other = create(c, 10, 40, 3, "key-2", &st2);
  CHECK(st2 == 201);
  CHECK(other["id"] != a["id"]);
  s.service->wait_idle();
}

TEST_CASE("full scripted run matches the in-process loop") {
  testutil::TempDir store("sslf_store");
  Running s(store.path);
  auto c = s.client();
  const std::size_t batch = 20, budget = 100;
  const std::uint64_t seed = 5;
  const auto created = create(c, batch, budget, seed);
  const std::string id = created["id"];
  CHECK(created["pool_size"] == 300);

  std::set<std::string> asked;
  int rounds = 0;
  bool partial_done = false, replay_done = false, conflict_done = false;
  while (true) {
    auto r = queries(c, id);
    REQUIRE(r);
    if (r->status == 410) {
      CHECK(body_of(r)["reason"] == "session_done");
      break;
    }
    REQUIRE(r->status == 200);
    const auto q = body_of(r);
    CHECK(q["state"] == "awaiting_labels");
    auto pids = pending_ids(q);
    REQUIRE(!pids.empty());
    for (const auto& p : pids) CHECK(asked.insert(p).second);
    ++rounds;

    if (!partial_done) {
      // two partial posts, the first replayed
      const std::vector<std::string> first(pids.begin(), pids.begin() + 5), rest(pids.begin() + 5, pids.end());
      auto p1 = post_labels(c, id, first, "req-a");
      REQUIRE(p1);
      CHECK(p1->status == 200);
      CHECK(body_of(p1)["remaining"] == pids.size() - 5);
      auto again = post_labels(c, id, first, "req-a");
      REQUIRE(again);
      CHECK(again->status == 200);
      CHECK(body_of(again)["replayed"] == true);
      auto conflict = post_labels(c, id, {first[0]});
      REQUIRE(conflict);
      CHECK(conflict->status == 409);
      CHECK(body_of(conflict)["reason"] == "already_labeled");
      auto unknown = c.Post("/api/sessions/" + id + "/labels",
                            json{{"labels", {{{"pair_id", "0000000000000000"}, {"label", 1}}}}}.dump(), "application/json");
      REQUIRE(unknown);
      CHECK(unknown->status == 409);
      CHECK(body_of(unknown)["reason"] == "unknown_pair");
      auto requery = queries(c, id);
      CHECK(pending_ids(body_of(requery)).size() == rest.size());
      auto p2 = post_labels(c, id, rest, "req-b", true);
      REQUIRE(p2);
      CHECK(p2->status == 200);
      CHECK(body_of(p2)["remaining"] == 0);
      partial_done = replay_done = true;
    } else {
      auto p = post_labels(c, id, pids, "req-" + std::to_string(rounds));
      REQUIRE(p);
      CHECK(p->status == 200);
      if (!conflict_done) {
        // a previously labeled pair, once the retrain has finished
        queries(c, id);
        auto old = post_labels(c, id, {*asked.begin()});
        REQUIRE(old);
        CHECK(old->status == 409);
        conflict_done = true;
      }
    }
  }
  CHECK(partial_done);
  CHECK(replay_done);
  CHECK(rounds == 5);  // 15 -> 35 -> 55 -> 75 -> 95 -> 100

  auto m = c.Get("/api/sessions/" + id + "/metrics?format=csv");
  REQUIRE(m);
  CHECK(m->get_header_value("Content-Type").find("text/csv") != std::string::npos);
  CHECK(m->body == reference_csv(batch, budget, seed));
  auto mj = c.Get("/api/sessions/" + id + "/metrics");
  REQUIRE(mj);
  CHECK(body_of(mj)["trace"].size() == 6);
  CHECK(body_of(mj)["state"] == "done");
  httplib::Headers accept{{"Accept", "text/csv"}};
  auto ma = c.Get("/api/sessions/" + id + "/metrics", accept);
  REQUIRE(ma);
  CHECK(ma->body == m->body);

  auto late = post_labels(c, id, {*asked.begin()});
  REQUIRE(late);
  CHECK(late->status == 410);
}

TEST_CASE("accepted labels survive a restart") {
  testutil::TempDir store("sslf_store");
  std::string id;
  std::vector<std::string> rest;
  {
    Running s(store.path);
    auto c = s.client();
    id = create(c, 20, 60, 9)["id"];
    auto q = body_of(queries(c, id));
    auto pids = pending_ids(q);
    REQUIRE(pids.size() == 20);
    auto r = post_labels(c, id, std::vector<std::string>(pids.begin(), pids.begin() + 7), "before-crash");
    REQUIRE(r);
    CHECK(r->status == 200);
    rest.assign(pids.begin() + 7, pids.end());
  }
  CHECK(fs::exists(store.path / "sessions" / (id + ".wal")));
  {
    Running s(store.path);
    auto c = s.client();
    auto st = c.Get("/api/sessions/" + id);
    REQUIRE(st);
    CHECK(st->status == 200);
    const auto q = body_of(queries(c, id));
    CHECK(pending_ids(q) == rest);
    auto replay = post_labels(c, id, {}, "before-crash");
    REQUIRE(replay);
    CHECK(body_of(replay)["replayed"] == true);
    REQUIRE(post_labels(c, id, rest)->status == 200);
    while (true) {
      auto r = queries(c, id);
      if (r->status == 410) break;
      REQUIRE(post_labels(c, id, pending_ids(body_of(r)))->status == 200);
    }
    CHECK(c.Get("/api/sessions/" + id + "/metrics?format=csv")->body == reference_csv(20, 60, 9));
  }
}

TEST_CASE("images and verification") {
  testutil::TempDir store("sslf_store");
  Running s(store.path);
  auto c = s.client();
  const std::string id = create(c, 10, 30, 2)["id"];
  const auto q = body_of(queries(c, id));
  const std::string url = q["queries"][0]["images"]["a"];
  const std::string pid = q["queries"][0]["pair_id"];
  auto r = c.Get(url);
  REQUIRE(r);
  CHECK(r->status == 200);
  CHECK(r->get_header_value("Content-Type") == "image/png");
  const auto img = decode_image(std::span(reinterpret_cast<const std::uint8_t*>(r->body.data()), r->body.size()));
  CHECK(img.width == 32);

  auto& w = world();
  std::map<std::string, std::size_t> seen;
  const FacePair* pair = nullptr;
  for (const auto& p : w.split.train) {
    const auto base = pair_id(p);
    if (pair_id(p, seen[base]++) == pid) pair = &p;
  }
  REQUIRE(pair);
  CHECK(img == normalized_rgb(w.store.load(pair->a), w.model->preprocess));
  CHECK(c.Get("/api/pairs/0123456789abcdef/images/a")->status == 404);

  const auto bytes_a = encode_png(w.store.load(pair->a)), bytes_b = encode_png(w.store.load(pair->b));
  httplib::MultipartFormDataItems items = {
      {"a", std::string(bytes_a.begin(), bytes_a.end()), "a.png", "image/png"},
      {"b", std::string(bytes_b.begin(), bytes_b.end()), "b.png", "image/png"},
  };
  auto v = c.Post("/api/verify", items);
  REQUIRE(v);
  CHECK(v->status == 200);
  const auto expected = verify(*w.model, preprocess_face(w.store.load(pair->a)), preprocess_face(w.store.load(pair->b)));
  CHECK(body_of(v)["probability"].get<double>() == doctest::Approx(expected.probability).epsilon(1e-12));
  CHECK(body_of(v)["match"] == expected.match);

  httplib::MultipartFormDataItems one = {{"a", std::string(bytes_a.begin(), bytes_a.end()), "a.png", "image/png"}};
  CHECK(c.Post("/api/verify", one)->status == 400);
  httplib::MultipartFormDataItems junk = {{"a", "xx", "a.png", "image/png"}, {"b", "yy", "b.png", "image/png"}};
  auto j = c.Post("/api/verify", junk);
  CHECK(j->status == 400);
  CHECK(body_of(j)["reason"] == "bad_image");
  s.service->wait_idle();
}

TEST_CASE("bearer token") {
  testutil::TempDir store("sslf_store");
  Running s(store.path, "s3cret");
  auto c = s.client();
  auto r = c.Get("/api/sessions/abc");
  REQUIRE(r);
  CHECK(r->status == 401);
  CHECK(body_of(r)["reason"] == "unauthorized");
  httplib::Headers auth{{"Authorization", "Bearer s3cret"}};
  r = c.Get("/api/sessions/abc", auth);
  CHECK(r->status == 404);
  r = c.Get("/api/sessions/abc?token=s3cret");
  CHECK(r->status == 404);
  r = c.Get("/api/sessions/abc?token=wrong");
  CHECK(r->status == 401);
}
