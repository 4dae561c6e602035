#pragma once

#include <string>

#include "dietnlu/featurizer.hpp"
#include "dietnlu/model.hpp"

namespace dietnlu {

// Everything inference needs: parameters, config, inventories, vocab and the
// dense-feature source. Serialized as a versioned JSON container with
// base64-packed little-endian float64 parameter arrays; no paths into the
// writing machine and no timestamps, so identical runs produce identical bytes.
struct ModelBundle {
  DietModel model;
  SparseVocab vocab;
  DenseSource dense;
};

inline constexpr const char* kCheckpointFormat = "dietnlu.checkpoint";
inline constexpr int kCheckpointVersion = 1;

std::string checkpoint_to_json(const ModelBundle& bundle);
void save_checkpoint(const ModelBundle& bundle, const std::string& path);

// reload_dense: re-read the dense table/sidecar from its recorded path
// (disable for parameter-only inspection).
ModelBundle checkpoint_from_json(const std::string& text, bool reload_dense = true);
ModelBundle load_checkpoint(const std::string& path, bool reload_dense = true);

// exposed for tests
std::string base64_encode(const std::string& bytes);
std::string base64_decode(const std::string& text);

}  // namespace dietnlu
