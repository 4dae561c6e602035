#pragma once

#include <cstdint>
#include <utility>

#include "dietnlu/data.hpp"

namespace dietnlu {

// Templated toy grammar: up to 8 intents drawing slot values from up to 5
// entity types. Texts are unique across both splits, so train/test are
// disjoint by construction. noise > 0 randomly substitutes single characters
// (length-preserving, so span offsets survive).
struct SyntheticSpec {
  std::uint64_t seed = 42;
  int num_intents = 5;
  int num_entity_types = 3;
  int train_count = 400;
  int test_count = 100;
  double noise = 0.0;
};

std::pair<Dataset, Dataset> generate_synthetic(const SyntheticSpec& spec);

}  // namespace dietnlu
