// SPDX-License-Identifier: Apache-2.0
//
// isogcn command-line front end. Talks to the library through the C API only;
// the flags of every subcommand are generated from the config schema.
#include <cstdint>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "isogcn/isogcn.h"

namespace {

using nlohmann::json;

struct OwnedString {
  char* p = nullptr;
  ~OwnedString() { isogcn_string_free(p); }
};

int exit_code_for(isogcn_status s) {
  switch (s) {
    case ISOGCN_OK: return 0;
    case ISOGCN_ERR_INVALID_ARGUMENT:
    case ISOGCN_ERR_NOT_FOUND:
    case ISOGCN_ERR_PARSE: return 2;
    default: return 1;
  }
}

void print_error(const std::string& code, int status, const std::string& message) {
  std::cerr << json{{"error", {{"code", code}, {"status", status}, {"message", message}}}}.dump() << '\n';
}

json call_json(isogcn_status (*fn)(char**)) {
  OwnedString out;
  if (fn(&out.p) != ISOGCN_OK) throw std::runtime_error(isogcn_last_error());
  return json::parse(out.p);
}

json schema_of(const std::string& command) {
  OwnedString out;
  if (isogcn_command_schema(command.c_str(), &out.p) != ISOGCN_OK) throw std::runtime_error(isogcn_last_error());
  return json::parse(out.p);
}

// Storage for one generated flag.
struct Flag {
  std::string key;
  std::string type;
  std::string text;
  double number = 0.0;
  std::int64_t integer = 0;
  bool boolean = false;
  std::vector<std::int64_t> list;
  CLI::Option* option = nullptr;
};

struct Subcommand {
  CLI::App* app = nullptr;
  std::string config_path;
  bool json_output = false;
  std::vector<std::unique_ptr<Flag>> flags;
};

std::string describe_default(const json& d) {
  if (d.is_null()) return "";
  if (d.is_string()) return d.get<std::string>().empty() ? "" : " [default: " + d.get<std::string>() + "]";
  return " [default: " + d.dump() + "]";
}

void add_flags(Subcommand& sc, const json& schema) {
  for (const auto& k : schema.at("keys")) {
    auto f = std::make_unique<Flag>();
    f->key = k.at("name").get<std::string>();
    f->type = k.at("type").get<std::string>();
    const std::string name = "--" + f->key;
    std::string help = k.at("help").get<std::string>() + describe_default(k.at("default"));
    if (k.at("required").get<bool>()) help += " (required)";
    if (f->type == "string") {
      f->option = sc.app->add_option(name, f->text, help);
    } else if (f->type == "integer") {
      f->option = sc.app->add_option(name, f->integer, help);
    } else if (f->type == "number") {
      f->option = sc.app->add_option(name, f->number, help);
    } else if (f->type == "boolean") {
      f->option = sc.app->add_flag(name, f->boolean, help);
    } else {
      f->option = sc.app->add_option(name, f->list, help)->delimiter(',');
    }
    sc.flags.push_back(std::move(f));
  }
}

json build_config(const Subcommand& sc) {
  json config = json::object();
  if (!sc.config_path.empty()) {
    std::ifstream in(sc.config_path);
    if (!in) throw std::invalid_argument("cannot open config file " + sc.config_path);
    std::stringstream ss;
    ss << in.rdbuf();
    try {
      config = json::parse(ss.str());
    } catch (const json::parse_error& e) {
      throw std::invalid_argument("config file " + sc.config_path + " is not valid JSON: " + e.what());
    }
    if (!config.is_object()) throw std::invalid_argument("config file must hold a JSON object");
  }
  for (const auto& f : sc.flags) {
    if (f->option->count() == 0) continue;
    if (f->type == "string") config[f->key] = f->text;
    else if (f->type == "integer") config[f->key] = f->integer;
    else if (f->type == "number") config[f->key] = f->number;
    else if (f->type == "boolean") config[f->key] = f->boolean;
    else config[f->key] = f->list;
  }
  return config;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"isogcn: isometric-transformation invariant and equivariant graph convolution toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(isogcn_version()));
  std::map<std::string, Subcommand> subs;
  try {
    for (const auto& name : call_json(isogcn_command_list)) {
      const auto cmd = name.get<std::string>();
      const auto schema = schema_of(cmd);
      auto& sc = subs[cmd];
      sc.app = app.add_subcommand(cmd, schema.at("description").get<std::string>());
      sc.app->add_option("--config", sc.config_path, "JSON config file; flags override its values");
      sc.app->add_flag("--json", sc.json_output, "print the full JSON result instead of the summary");
      add_flags(sc, schema);
    }
  } catch (const std::exception& e) {
    print_error("internal", ISOGCN_ERR_INTERNAL, e.what());
    return 1;
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    print_error("usage", ISOGCN_ERR_INVALID_ARGUMENT, e.what());
    return 2;
  }

  for (auto& [cmd, sc] : subs) {
    if (!sc.app->parsed()) continue;
    json config;
    try {
      config = build_config(sc);
    } catch (const std::exception& e) {
      print_error("invalid_argument", ISOGCN_ERR_INVALID_ARGUMENT, e.what());
      return 2;
    }
    OwnedString out;
    const auto status = isogcn_run(cmd.c_str(), config.dump().c_str(), &out.p);
    if (status != ISOGCN_OK) {
      print_error(isogcn_status_name(status), static_cast<int>(status), isogcn_last_error());
      return exit_code_for(status);
    }
    const auto result = json::parse(out.p);
    if (sc.json_output) {
      std::cout << result.dump(1) << '\n';
    } else {
      std::cout << result.value("summary", std::string()) << '\n';
    }
    if (result.contains("passed") && !result.at("passed").get<bool>()) return 1;
    return 0;
  }
  return 2;
}
