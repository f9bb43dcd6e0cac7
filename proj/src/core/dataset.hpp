// SPDX-License-Identifier: Apache-2.0
//
// Samples, datasets, and their on-disk layout:
//
//   <root>/dataset.json                 kind, task, split membership
//   <root>/<split>/<sample>/mesh.json   mesh
//   <root>/<split>/<sample>/fields.json named tensors with rank/shape header
//   <root>/<split>/<sample>/isoam.bin   cached unscaled D~
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "core/isoam_builder.hpp"
#include "core/mesh.hpp"
#include "core/tensor_field.hpp"

namespace isogcn {

using FieldMap = std::map<std::string, TensorField>;

struct Sample {
  std::string id;
  /// Samples sharing a group come from the same shape; splits never cut a group.
  std::uint64_t group = 0;
  Mesh mesh;
  FieldMap inputs;
  FieldMap targets;
  nlohmann::json meta = nlohmann::json::object();
  std::optional<IsoAM> isoam;
};

struct Dataset {
  std::string kind;  // "diffop" or "heat"
  std::string task;
  std::map<std::string, std::vector<Sample>> splits;
  nlohmann::json config = nlohmann::json::object();

  std::size_t total_samples() const;
};

nlohmann::json field_to_json(const TensorField& field);
TensorField field_from_json(const nlohmann::json& j);
nlohmann::json fields_to_json(const FieldMap& fields);
FieldMap fields_from_json(const nlohmann::json& j);

void save_sample(const Sample& sample, const std::filesystem::path& dir);
/// Loads mesh, fields and, when present, the cached isoam.bin.
Sample load_sample(const std::filesystem::path& dir);

void save_dataset(const Dataset& dataset, const std::filesystem::path& root);
nlohmann::json load_dataset_manifest(const std::filesystem::path& root);
std::vector<Sample> load_split(const std::filesystem::path& root, const std::string& split);

/// Builds and attaches the unscaled D~ for samples that lack one.
void ensure_isoams(std::vector<Sample>& samples, const IsoAMOptions& options);

}  // namespace isogcn
