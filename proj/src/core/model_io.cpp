// SPDX-License-Identifier: Apache-2.0
#include <bit>
#include <fstream>
#include <sstream>

#include "core/training.hpp"

namespace isogcn {

namespace fs = std::filesystem;

namespace {

static_assert(std::endian::native == std::endian::little, "weights.bin is written in native little-endian order");

constexpr int kCheckpointVersion = 1;

void write_doubles(std::ofstream& out, const std::vector<double>& v) {
  out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
}

void read_doubles(std::ifstream& in, std::vector<double>& v, const fs::path& path) {
  in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
  require(static_cast<bool>(in), ErrorCode::Parse, "truncated weight file " + path.string());
}

}  // namespace

void save_checkpoint(const Surrogate& s, const fs::path& dir) {
  fs::create_directories(dir);
  nlohmann::json params = nlohmann::json::array();
  for (const auto& p : s.model.parameters()) params.push_back({{"name", p.name}, {"rows", p.rows}, {"cols", p.cols}});
  const bool has_moments = s.adam.m.size() == s.model.parameters().size();
  nlohmann::json j{
      {"format", "isogcn-model"},
      {"version", kCheckpointVersion},
      {"task", s.task},
      {"seed", s.seed},
      {"spec", nn::spec_to_json(s.model.spec())},
      {"enforce_rank_rules", s.model.options().enforce_rank_rules},
      {"normalizer", {{"inputs", s.input_norm.to_json()}, {"targets", s.target_norm.to_json()}}},
      {"isoam",
       {{"factor", s.isoam_factor},
        {"m_hops", s.isoam_options.m_hops},
        {"weights", weight_kind_name(s.isoam_options.weights)},
        {"rcond", s.isoam_options.rcond}}},
      {"params", params},
      {"adam",
       {{"step", s.adam.step},
        {"beta1", s.adam.beta1},
        {"beta2", s.adam.beta2},
        {"eps", s.adam.eps},
        {"moments", has_moments}}},
      {"weights_file", "weights.bin"}};
  {
    std::ofstream out(dir / "model.json");
    require(static_cast<bool>(out), ErrorCode::Io, "cannot write " + (dir / "model.json").string());
    out << j.dump(1) << '\n';
  }
  std::ofstream bin(dir / "weights.bin", std::ios::binary);
  require(static_cast<bool>(bin), ErrorCode::Io, "cannot write " + (dir / "weights.bin").string());
  for (const auto& p : s.model.parameters()) write_doubles(bin, p.values);
  if (has_moments) {
    for (const auto& m : s.adam.m) write_doubles(bin, m);
    for (const auto& v : s.adam.v) write_doubles(bin, v);
  }
  require(static_cast<bool>(bin), ErrorCode::Io, "failed writing " + (dir / "weights.bin").string());
}

Surrogate load_checkpoint(const fs::path& dir) {
  const auto meta_path = dir / "model.json";
  require(fs::exists(meta_path), ErrorCode::NotFound, "checkpoint not found: " + meta_path.string());
  std::ifstream in(meta_path);
  require(static_cast<bool>(in), ErrorCode::Io, "cannot open " + meta_path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(ss.str());
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorCode::Parse, "invalid checkpoint JSON: " + std::string(e.what()));
  }
  Surrogate s;
  try {
    require(j.at("format") == "isogcn-model", ErrorCode::Parse, "not an isogcn model checkpoint");
    const int version = j.at("version").get<int>();
    require(version == kCheckpointVersion, ErrorCode::Parse,
            "unsupported checkpoint version " + std::to_string(version));
    s.task = j.at("task").get<std::string>();
    s.seed = j.value("seed", std::uint64_t{0});
    nn::BuildOptions opts;
    opts.enforce_rank_rules = j.value("enforce_rank_rules", true);
    s.model = nn::Model(nn::spec_from_json(j.at("spec")), s.seed, opts);
    s.input_norm = Normalizer::from_json(j.at("normalizer").at("inputs"));
    s.target_norm = Normalizer::from_json(j.at("normalizer").at("targets"));
    const auto& iso = j.at("isoam");
    s.isoam_factor = iso.at("factor").get<double>();
    s.isoam_options.m_hops = iso.at("m_hops").get<int>();
    s.isoam_options.weights = weight_kind_from_name(iso.at("weights").get<std::string>());
    s.isoam_options.rcond = iso.value("rcond", kDefaultRcond);
    const auto& params = j.at("params");
    auto& model_params = s.model.parameters();
    require(params.size() == model_params.size(), ErrorCode::Parse, "parameter table does not match the model spec");
    for (std::size_t k = 0; k < params.size(); ++k) {
      require(params[k].at("name").get<std::string>() == model_params[k].name &&
                  params[k].at("rows").get<std::size_t>() == model_params[k].rows &&
                  params[k].at("cols").get<std::size_t>() == model_params[k].cols,
              ErrorCode::Parse, "parameter table entry " + std::to_string(k) + " does not match the model spec");
    }
    const auto& adam = j.at("adam");
    s.adam.step = adam.at("step").get<std::int64_t>();
    s.adam.beta1 = adam.at("beta1").get<double>();
    s.adam.beta2 = adam.at("beta2").get<double>();
    s.adam.eps = adam.at("eps").get<double>();
    const auto bin_path = dir / j.value("weights_file", std::string("weights.bin"));
    std::ifstream bin(bin_path, std::ios::binary);
    require(static_cast<bool>(bin), ErrorCode::NotFound, "missing weight file " + bin_path.string());
    for (auto& p : model_params) read_doubles(bin, p.values, bin_path);
    if (adam.value("moments", false)) {
      for (const auto& p : model_params) {
        s.adam.m.emplace_back(p.values.size());
        read_doubles(bin, s.adam.m.back(), bin_path);
      }
      for (const auto& p : model_params) {
        s.adam.v.emplace_back(p.values.size());
        read_doubles(bin, s.adam.v.back(), bin_path);
      }
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::Parse, "malformed checkpoint: " + std::string(e.what()));
  }
  return s;
}

}  // namespace isogcn
