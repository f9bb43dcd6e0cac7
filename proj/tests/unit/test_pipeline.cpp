// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cstdlib>
#include <functional>
#include <filesystem>

#include <gtest/gtest.h>

#include "core/dataset.hpp"
#include "core/pipeline.hpp"

using namespace isogcn;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return static_cast<ErrorCode>(0);
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST(Schema, EveryCommandHasDescribedKeys) {
  const auto names = command_names();
  for (const char* c : {"gen-diffop", "gen-heat", "preprocess", "train", "eval", "equivariance", "bench", "infer"})
    EXPECT_NE(std::find(names.begin(), names.end(), c), names.end()) << c;
  for (const auto& n : names) {
    EXPECT_FALSE(command_description(n).empty());
    for (const auto& k : command_schema(n)) EXPECT_FALSE(k.help.empty()) << n << " " << k.name;
  }
  EXPECT_EQ(code_of([] { command_schema("fly"); }), ErrorCode::InvalidArgument);
}

TEST(Schema, DefaultsFilledAndUnknownKeysRejected) {
  const auto c = validate_config("train", {{"dataset", "d"}, {"out", "o"}});
  EXPECT_EQ(c.at("epochs"), 100);
  EXPECT_EQ(c.at("lr"), 1e-3);
  EXPECT_TRUE(c.at("task").is_null());
  EXPECT_EQ(code_of([] { validate_config("train", {{"dataset", "d"}, {"out", "o"}, {"epoch", 3}}); }),
            ErrorCode::InvalidArgument);
  EXPECT_EQ(code_of([] { validate_config("train", {{"dataset", "d"}}); }), ErrorCode::InvalidArgument);
  EXPECT_EQ(code_of([] { validate_config("train", {{"dataset", "d"}, {"out", "o"}, {"epochs", "many"}}); }),
            ErrorCode::InvalidArgument);
  EXPECT_EQ(code_of([] { validate_config("train", json::array()); }), ErrorCode::InvalidArgument);
}

TEST(Schema, NumbersAcceptIntegersButIntegersRejectFractions) {
  EXPECT_NO_THROW(validate_config("train", {{"dataset", "d"}, {"out", "o"}, {"lr", 1}}));
  EXPECT_EQ(code_of([] { validate_config("train", {{"dataset", "d"}, {"out", "o"}, {"epochs", 1.5}}); }),
            ErrorCode::InvalidArgument);
  EXPECT_EQ(code_of([] { validate_config("gen-heat", {{"out", "o"}, {"resolutions", {1, "x"}}}); }),
            ErrorCode::InvalidArgument);
}

TEST(CacheDir, ConfigThenEnvironmentThenDataset) {
  ::unsetenv("ISOGCN_CACHE_DIR");
  EXPECT_EQ(resolve_cache_dir("", "/data/x"), (fs::path("/data/x") / "cache").string());
  ::setenv("ISOGCN_CACHE_DIR", "/tmp/envcache", 1);
  EXPECT_EQ(resolve_cache_dir("", "/data/x"), "/tmp/envcache");
  EXPECT_EQ(resolve_cache_dir("/explicit", "/data/x"), "/explicit");
  ::unsetenv("ISOGCN_CACHE_DIR");
}

TEST(Commands, MissingDatasetIsNotFound) {
  EXPECT_EQ(code_of([] { run_command("preprocess", {{"dataset", "/nonexistent/isogcn"}}); }), ErrorCode::NotFound);
  EXPECT_EQ(code_of([] { run_command("eval", {{"checkpoint", "/nonexistent/ck"}, {"dataset", "/nonexistent/d"}}); }),
            ErrorCode::NotFound);
}

TEST(Commands, GeneratePreprocessTrainEvaluateAudit) {
  TempDir tmp("isogcn_pipeline_test");
  const auto ds = (tmp.path / "ds").string();
  const auto gen = run_command("gen-diffop", {{"out", ds}, {"task", "0->1"}, {"n_train", 4}, {"n_val", 2},
                                              {"n_test", 2}, {"grid_min", 3}, {"grid_max", 4}, {"seed", 1}});
  EXPECT_EQ(gen.at("splits").at("train"), 4);
  EXPECT_FALSE(gen.at("summary").get<std::string>().empty());
  EXPECT_EQ(load_split(ds, "test").size(), 2u);

  const auto pre = run_command("preprocess", {{"dataset", ds}, {"cache_dir", (tmp.path / "cache").string()}});
  EXPECT_EQ(pre.at("n_samples"), 8);
  EXPECT_GT(pre.at("factor").get<double>(), 0.0);
  EXPECT_TRUE(fs::exists(fs::path(pre.at("cache").get<std::string>()) / "preprocess.json"));

  const auto ck = (tmp.path / "ck").string();
  const auto tr = run_command("train", {{"dataset", ds}, {"out", ck}, {"epochs", 3}, {"width", 4}});
  EXPECT_EQ(tr.at("history").at("train_loss").size(), 4u);
  EXPECT_TRUE(fs::exists(fs::path(ck) / "metrics.json"));
  const double mse = tr.at("metrics").at("mse").get<double>();

  const auto ev = run_command("eval", {{"checkpoint", ck}, {"dataset", ds}});
  EXPECT_DOUBLE_EQ(ev.at("mse").get<double>(), mse);
  EXPECT_EQ(ev.at("n_samples"), 2);

  const auto eq = run_command("equivariance", {{"checkpoint", ck}, {"dataset", ds}, {"trials", 5}});
  EXPECT_TRUE(eq.at("passed").get<bool>());
  const auto neg = run_command("equivariance", {{"dataset", ds}, {"trials", 5}, {"negative_control", "rank1_bias"}});
  EXPECT_FALSE(neg.at("passed").get<bool>());
  EXPECT_EQ(code_of([&] {
              run_command("equivariance", {{"checkpoint", ck}, {"dataset", ds}, {"negative_control", "rank1_bias"}});
            }),
            ErrorCode::InvalidArgument);
}
