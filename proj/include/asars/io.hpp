#pragma once

#include <string>
#include <utility>
#include <vector>

#include "asars/config.hpp"
#include "asars/eval.hpp"

namespace asars {

// ---- corpus file: versioned binary, little-endian, magic ASARS-CORPUS-1 ----

void write_corpus(const std::string& path, const Corpus& corpus);
Corpus read_corpus(const std::string& path);

// Human-readable sidecar mirroring the dataset-details table fields.
std::string corpus_summary_json(const Corpus& corpus, const FilterThresholds& t);

// ---- checkpoint file: magic ASARS-CKPT-1, config JSON + named f32 arrays ----

struct CheckpointData {
  std::string config_json;
  std::vector<std::pair<std::string, Mat<float>>> arrays;
};

void write_checkpoint_file(const std::string& path, const CheckpointData& data);
CheckpointData read_checkpoint_file(const std::string& path);

std::string model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const std::string& text);

uint64_t file_hash(const std::string& path);

template <typename S>
void save_checkpoint(const std::string& path, const Model<S>& m) {
  CheckpointData data;
  data.config_json = model_config_to_json(m.cfg);
  for (size_t i = 0; i < m.params.count(); ++i) {
    const Tensor<S>& t = m.params.at(i);
    data.arrays.push_back({t.name, t.value.template cast<float>()});
  }
  write_checkpoint_file(path, data);
}

// Rebuilds the model from the stored config, then overwrites every array
// with the stored values; name or shape drift is a hard error.
template <typename S>
Model<S> load_checkpoint(const std::string& path) {
  CheckpointData data = read_checkpoint_file(path);
  ModelConfig cfg = model_config_from_json(data.config_json);
  Model<S> m = make_model<S>(cfg, /*seed=*/0);
  if (data.arrays.size() != m.params.count())
    throw IoError("checkpoint: expected " + std::to_string(m.params.count()) +
                  " arrays, file has " + std::to_string(data.arrays.size()));
  for (const auto& [name, value] : data.arrays) {
    Tensor<S>& t = m.params.get(name);
    if (t.rows() != value.rows() || t.cols() != value.cols())
      throw IoError("checkpoint: shape mismatch for '" + name + "': model " +
                    shape_str(t.rows(), t.cols()) + " vs file " +
                    shape_str(value.rows(), value.cols()));
    t.value = value.template cast<S>();
  }
  return m;
}

// ---- reports and logs ----

std::string report_to_json(const MetricsReport& rep);
std::string report_to_csv(const MetricsReport& rep);
std::string epoch_log_line(const EpochStats& stats);

}  // namespace asars
