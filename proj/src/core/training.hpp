// SPDX-License-Identifier: Apache-2.0
//
// Normalisation, task models, the training loop, evaluation and the
// isometry audit for trained surrogates.
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "core/dataset.hpp"
#include "core/isoam_builder.hpp"
#include "core/nn.hpp"

namespace isogcn {

/// Rank-0 fields: per-feature mean and std. Rank >= 1 fields: one global
/// std over every component, no mean. `componentwise` replaces the latter by
/// per-component standardisation and exists only for negative controls.
struct FieldNorm {
  int rank = 0;
  bool componentwise = false;
  std::vector<double> mean;
  std::vector<double> scale;
};

struct NormalizerOptions {
  std::set<std::string> componentwise_fields;
};

class Normalizer {
 public:
  static Normalizer fit(const std::vector<const FieldMap*>& maps, const NormalizerOptions& options = {});

  TensorField apply(const std::string& name, const TensorField& field) const;
  TensorField invert(const std::string& name, const TensorField& field) const;
  FieldMap apply(const FieldMap& fields) const;
  FieldMap invert(const FieldMap& fields) const;

  nlohmann::json to_json() const;
  static Normalizer from_json(const nlohmann::json& j);

  std::map<std::string, FieldNorm> fields;
  std::vector<std::string> warnings;
};

struct TaskModelOptions {
  std::size_t width = 16;
  /// Heat: number of propagation blocks.
  int blocks = 2;
};

/// Encode-process-decode graphs for "0->1", "0->2", "1->0", "1->2" and "heat".
nn::ModelSpec build_task_model(const std::string& task, const TaskModelOptions& options = {});

/// Input fields of the heat model and the snapshot target.
inline constexpr const char* kHeatTarget = "T";

struct Surrogate {
  std::string task;
  nn::Model model;
  Normalizer input_norm;
  Normalizer target_norm;
  double isoam_factor = 1.0;
  IsoAMOptions isoam_options;
  nn::AdamState adam;
  std::uint64_t seed = 0;
};

/// A sample in the model's working units: normalised fields and the scaled
/// IsoAM with its transpose.
struct PreparedSample {
  FieldMap inputs;
  FieldMap targets;
  IsoAM isoam;
  IsoAM isoam_t;
  std::vector<double> positions;

  nn::GraphContext context() const { return {&isoam, &isoam_t, positions}; }
};

/// Fits normalisers and the IsoAM scaling factor on the training samples.
void fit_preprocessing(Surrogate& s, std::vector<Sample>& train, const NormalizerOptions& norm = {});

PreparedSample prepare(const Surrogate& s, const Sample& sample, bool with_targets = true);

/// Original-scale prediction for raw inputs on a mesh with its unscaled D~.
FieldMap predict(const Surrogate& s, const Mesh& mesh, const FieldMap& raw_inputs, const IsoAM& unscaled);
FieldMap predict(const Surrogate& s, const Sample& sample);

/// Mean over target fields of the per-field mean squared error; grad receives
/// dLoss/dPrediction when non-null.
double mse_loss(const FieldMap& prediction, const FieldMap& target, FieldMap* grad = nullptr);

struct TrainConfig {
  double learning_rate = 1e-3;
  std::size_t batch_size = 4;
  std::size_t epochs = 100;
  std::uint64_t seed = 0;
  /// Epochs without validation improvement before stopping; 0 disables.
  std::size_t patience = 0;
  double divergence_threshold = 1e6;
};

struct TrainHistory {
  /// Index 0 holds the loss before the first update.
  std::vector<double> train_loss;
  std::vector<double> val_loss;
  std::size_t best_epoch = 0;
  bool stopped_early = false;
};

/// Trains in place. When validation samples are given the parameters with
/// the best validation loss are restored at the end.
TrainHistory train(Surrogate& s, const std::vector<PreparedSample>& train_set,
                   const std::vector<PreparedSample>* val_set, const TrainConfig& config);

/// Mean normalised loss over prepared samples.
double dataset_loss(const Surrogate& s, const std::vector<PreparedSample>& samples);

struct EvalOptions {
  /// Restrict every target to one feature channel (the heat model scores T1.0).
  std::optional<std::size_t> feature;
};

struct EvalResult {
  double mse = 0.0;
  double sem = 0.0;
  std::size_t n_samples = 0;
  std::size_t n_entries = 0;
};

/// Pooled squared errors of every target entry in the original scale.
EvalResult evaluate(const Surrogate& s, const std::vector<Sample>& samples, const EvalOptions& options = {});
EvalResult evaluate_predictions(const std::vector<FieldMap>& predictions, const std::vector<Sample>& samples,
                                const EvalOptions& options = {});
/// MSE of predicting the pooled target mean, i.e. the pooled target variance.
double constant_predictor_mse(const std::vector<Sample>& samples, const EvalOptions& options = {});

struct EquivarianceReport {
  std::size_t trials = 0;
  double max_deviation = 0.0;
  double tolerance = 0.0;
  bool passed = false;
  std::map<std::string, double> per_output;
};

/// Random isometries applied to the mesh and to rank >= 1 inputs; outputs are
/// compared with the transformed original prediction.
EquivarianceReport check_equivariance(const Surrogate& s, const Sample& sample, std::size_t n_trials,
                                      double tolerance, std::uint64_t seed = 0);

/// Replaces the rank-0 input `field` by `value` everywhere and returns the
/// largest spread (max - min over vertices) of any predicted component.
double constant_input_drift(const Surrogate& s, const Sample& sample, const std::string& field, double value);

/// max |a - b| / max |b| over all entries.
double relative_deviation(const TensorField& a, const TensorField& b);

/// Checkpoint directory: model.json (spec, normalisers, IsoAM options and
/// factor, parameter table) and weights.bin (little-endian float64).
void save_checkpoint(const Surrogate& s, const std::filesystem::path& dir);
Surrogate load_checkpoint(const std::filesystem::path& dir);

}  // namespace isogcn
