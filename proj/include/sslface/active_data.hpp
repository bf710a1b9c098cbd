#pragma once

#include <vector>

#include "sslface/active.hpp"
#include "sslface/verification.hpp"

namespace sslface {

/// Pool and test pairs with their pair features, [Y | CrCb] concatenated and
/// min-max scaled on the pool. Pool labels are -1 where the pair has none.
struct ActiveDataset {
  std::vector<FacePair> pool_pairs;
  std::vector<FacePair> test_pairs;
  LabeledSet pool;
  LabeledSet test;
};

ActiveDataset build_active_dataset(const VerificationModel& model, std::vector<FacePair> pool_pairs,
                                   std::vector<FacePair> test_pairs, const ImageStore& store, unsigned threads = 0);

}  // namespace sslface
