#pragma once

#include <string>
#include <vector>

#include "dietnlu/featurizer.hpp"
#include "dietnlu/model.hpp"
#include "dietnlu/training.hpp"

namespace dietnlu {

// One JSON document drives a whole run: featurization toggles, model shape,
// loss toggles and the training schedule. Every ablation cell (sparse on/off
// x dense source x mask loss on/off) is expressible here, and to_json()
// round-trips losslessly for the resolved-config snapshot.
struct PipelineConfig {
  ModelConfig model;
  TrainConfig train;
  std::string data_path;
  std::string dense_table_path;
  std::string dense_sidecar_path;
  std::string output_dir = ".";

  static PipelineConfig from_json_text(const std::string& text,
                                       std::vector<std::string>* warnings = nullptr);
  static PipelineConfig from_file(const std::string& path,
                                  std::vector<std::string>* warnings = nullptr);
  std::string to_json() const;

  // require_data: train/evaluate need a dataset; predict does not
  void validate(bool require_data) const;
  DenseSource load_dense(std::vector<std::string>* warnings = nullptr) const;
};

}  // namespace dietnlu
