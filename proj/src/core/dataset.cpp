// SPDX-License-Identifier: Apache-2.0
#include "core/dataset.hpp"

#include <fstream>
#include <sstream>

namespace isogcn {

namespace fs = std::filesystem;

std::size_t Dataset::total_samples() const {
  std::size_t n = 0;
  for (const auto& [name, samples] : splits) n += samples.size();
  return n;
}

nlohmann::json field_to_json(const TensorField& field) {
  return {{"rank", field.rank()},
          {"dim", field.dim()},
          {"n_vertices", field.n_vertices()},
          {"n_features", field.n_features()},
          {"data", std::vector<double>(field.data().begin(), field.data().end())}};
}

TensorField field_from_json(const nlohmann::json& j) {
  try {
    return TensorField(j.at("rank").get<int>(), j.at("n_vertices").get<std::size_t>(),
                       j.at("n_features").get<std::size_t>(), j.value("dim", 3),
                       j.at("data").get<std::vector<double>>());
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::Parse, std::string("tensor field JSON: ") + e.what());
  }
}

nlohmann::json fields_to_json(const FieldMap& fields) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [name, f] : fields) j[name] = field_to_json(f);
  return j;
}

FieldMap fields_from_json(const nlohmann::json& j) {
  FieldMap out;
  for (auto it = j.begin(); it != j.end(); ++it) out.emplace(it.key(), field_from_json(it.value()));
  return out;
}

namespace {

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorCode::NotFound, "cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return nlohmann::json::parse(ss.str());
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorCode::Parse, "invalid JSON in " + path.string() + ": " + e.what());
  }
}

void write_json(const nlohmann::json& j, const fs::path& path) {
  std::ofstream out(path);
  require(static_cast<bool>(out), ErrorCode::Io, "cannot write " + path.string());
  out << j.dump() << '\n';
}

}  // namespace

void save_sample(const Sample& sample, const fs::path& dir) {
  fs::create_directories(dir);
  save_mesh(sample.mesh, dir / "mesh.json");
  nlohmann::json j{{"version", 1},
                   {"id", sample.id},
                   {"group", sample.group},
                   {"meta", sample.meta},
                   {"inputs", fields_to_json(sample.inputs)},
                   {"targets", fields_to_json(sample.targets)}};
  write_json(j, dir / "fields.json");
  if (sample.isoam) save_isoam(*sample.isoam, 1.0, dir / "isoam.bin");
}

Sample load_sample(const fs::path& dir) {
  Sample s;
  s.mesh = load_mesh(dir / "mesh.json");
  const auto j = read_json(dir / "fields.json");
  s.id = j.value("id", dir.filename().string());
  s.group = j.value("group", std::uint64_t{0});
  s.meta = j.value("meta", nlohmann::json::object());
  s.inputs = fields_from_json(j.at("inputs"));
  s.targets = fields_from_json(j.at("targets"));
  if (fs::exists(dir / "isoam.bin")) s.isoam = load_isoam(dir / "isoam.bin").isoam;
  return s;
}

void save_dataset(const Dataset& dataset, const fs::path& root) {
  fs::create_directories(root);
  nlohmann::json manifest{{"version", 1},
                          {"kind", dataset.kind},
                          {"task", dataset.task},
                          {"config", dataset.config},
                          {"splits", nlohmann::json::object()}};
  for (const auto& [split, samples] : dataset.splits) {
    auto& ids = manifest["splits"][split] = nlohmann::json::array();
    for (const auto& s : samples) {
      save_sample(s, root / split / s.id);
      ids.push_back(s.id);
    }
  }
  write_json(manifest, root / "dataset.json");
}

nlohmann::json load_dataset_manifest(const fs::path& root) {
  return read_json(root / "dataset.json");
}

std::vector<Sample> load_split(const fs::path& root, const std::string& split) {
  const auto manifest = load_dataset_manifest(root);
  const auto& splits = manifest.at("splits");
  require(splits.contains(split), ErrorCode::NotFound,
          "dataset " + root.string() + " has no split '" + split + "'");
  std::vector<Sample> out;
  for (const auto& id : splits.at(split)) out.push_back(load_sample(root / split / id.get<std::string>()));
  return out;
}

void ensure_isoams(std::vector<Sample>& samples, const IsoAMOptions& options) {
  for (auto& s : samples) {
    if (!s.isoam) s.isoam = build_isoam(s.mesh, options);
  }
}

}  // namespace isogcn
