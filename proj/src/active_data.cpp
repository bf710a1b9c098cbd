#include "sslface/active_data.hpp"

namespace sslface {
namespace {

LabeledSet to_labeled(const PairFeatureTable& t) {
  LabeledSet s;
  s.x.resize(t.y.rows(), t.y.cols() + t.crcb.cols());
  s.x << t.y, t.crcb;
  s.y = t.labels;
  return s;
}

}  // namespace

ActiveDataset build_active_dataset(const VerificationModel& model, std::vector<FacePair> pool_pairs,
                                   std::vector<FacePair> test_pairs, const ImageStore& store, unsigned threads) {
  ActiveDataset d;
  d.pool = to_labeled(compute_pair_features(model, pool_pairs, store, threads));
  d.test = to_labeled(compute_pair_features(model, test_pairs, store, threads));
  for (int l : d.test.y) {
    if (l < 0) throw InvalidInput("test pairs must be labeled");
  }
  scale_active_data(d.pool, d.test);
  d.pool_pairs = std::move(pool_pairs);
  d.test_pairs = std::move(test_pairs);
  return d;
}

}  // namespace sslface
