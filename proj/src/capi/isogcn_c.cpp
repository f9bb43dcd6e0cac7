// SPDX-License-Identifier: Apache-2.0
#include "isogcn/isogcn.h"

#include <algorithm>
#include <cstdlib>
#include <cstring>
#include <exception>
#include <new>
#include <string>

#include <nlohmann/json.hpp>

#include "core/dataset.hpp"
#include "core/diffop.hpp"
#include "core/isoam_builder.hpp"
#include "core/mesh.hpp"
#include "core/pipeline.hpp"
#include "core/training.hpp"

struct isogcn_mesh {
  isogcn::Mesh mesh;
};
struct isogcn_isoam {
  isogcn::IsoAM g;
};
struct isogcn_field {
  isogcn::TensorField f;
};
struct isogcn_model {
  isogcn::Surrogate s;
};

namespace {

thread_local std::string g_last_error;

isogcn_status set_error(isogcn_status status, const std::string& msg) {
  g_last_error = msg;
  return status;
}

template <class F>
isogcn_status guarded(F&& body) {
  try {
    g_last_error.clear();
    body();
    return ISOGCN_OK;
  } catch (const isogcn::Error& e) {
    return set_error(static_cast<isogcn_status>(static_cast<int>(e.code())), e.what());
  } catch (const nlohmann::json::exception& e) {
    return set_error(ISOGCN_ERR_PARSE, e.what());
  } catch (const std::bad_alloc&) {
    return set_error(ISOGCN_ERR_RESOURCE, "out of memory");
  } catch (const std::exception& e) {
    return set_error(ISOGCN_ERR_INTERNAL, e.what());
  } catch (...) {
    return set_error(ISOGCN_ERR_INTERNAL, "unknown error");
  }
}

void need(const void* p, const char* what) {
  isogcn::require(p != nullptr, isogcn::ErrorCode::InvalidArgument, std::string(what) + " must not be NULL");
}

char* dup_string(const std::string& s) {
  auto* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

nlohmann::json parse_config(const char* config_json) {
  if (!config_json || !*config_json) return nlohmann::json::object();
  try {
    return nlohmann::json::parse(config_json);
  } catch (const nlohmann::json::parse_error& e) {
    isogcn::fail(isogcn::ErrorCode::Parse, std::string("config is not valid JSON: ") + e.what());
  }
}

isogcn_status run(const char* command, const char* config_json, char** result_json) {
  return guarded([&] {
    need(command, "command");
    need(result_json, "result_json");
    *result_json = nullptr;
    const auto result = isogcn::run_command(command, parse_config(config_json));
    *result_json = dup_string(result.dump());
  });
}

template <class Make>
isogcn_status make_field(isogcn_field** out, Make&& make) {
  return guarded([&] {
    need(out, "out");
    *out = nullptr;
    *out = new isogcn_field{make()};
  });
}

}  // namespace

extern "C" {

const char* isogcn_version(void) { return "1.0.0"; }

const char* isogcn_last_error(void) { return g_last_error.c_str(); }

const char* isogcn_status_name(isogcn_status status) {
  switch (status) {
    case ISOGCN_OK: return "ok";
    case ISOGCN_ERR_INTERNAL: return "internal";
    default: return isogcn::error_code_name(static_cast<isogcn::ErrorCode>(static_cast<int>(status)));
  }
}

void isogcn_string_free(char* s) { std::free(s); }

isogcn_status isogcn_set_threads(int n) {
  return guarded([&] {
    isogcn::require(n >= 1, isogcn::ErrorCode::InvalidArgument, "thread count must be >= 1");
    isogcn::set_num_threads(n);
  });
}

isogcn_status isogcn_command_list(char** result_json) {
  return guarded([&] {
    need(result_json, "result_json");
    *result_json = dup_string(nlohmann::json(isogcn::command_names()).dump());
  });
}

isogcn_status isogcn_command_schema(const char* command, char** result_json) {
  return guarded([&] {
    need(command, "command");
    need(result_json, "result_json");
    nlohmann::json keys = nlohmann::json::array();
    for (const auto& k : isogcn::command_schema(command)) {
      keys.push_back({{"name", k.name},
                      {"type", isogcn::config_type_name(k.type)},
                      {"help", k.help},
                      {"default", k.default_value},
                      {"required", k.required}});
    }
    *result_json = dup_string(
        nlohmann::json{{"description", isogcn::command_description(command)}, {"keys", keys}}.dump());
  });
}

isogcn_status isogcn_run(const char* command, const char* config_json, char** result_json) {
  return run(command, config_json, result_json);
}

isogcn_status isogcn_cmd_gen_diffop(const char* c, char** r) { return run("gen-diffop", c, r); }
isogcn_status isogcn_cmd_gen_heat(const char* c, char** r) { return run("gen-heat", c, r); }
isogcn_status isogcn_cmd_preprocess(const char* c, char** r) { return run("preprocess", c, r); }
isogcn_status isogcn_cmd_train(const char* c, char** r) { return run("train", c, r); }
isogcn_status isogcn_cmd_eval(const char* c, char** r) { return run("eval", c, r); }
isogcn_status isogcn_cmd_equivariance(const char* c, char** r) { return run("equivariance", c, r); }
isogcn_status isogcn_cmd_bench(const char* c, char** r) { return run("bench", c, r); }
isogcn_status isogcn_cmd_infer(const char* c, char** r) { return run("infer", c, r); }
isogcn_status isogcn_cmd_export_vtk(const char* c, char** r) { return run("export-vtk", c, r); }

isogcn_status isogcn_mesh_load(const char* path, isogcn_mesh** out) {
  return guarded([&] {
    need(path, "path");
    need(out, "out");
    *out = nullptr;
    *out = new isogcn_mesh{isogcn::load_mesh(path)};
  });
}

isogcn_status isogcn_mesh_save(const isogcn_mesh* mesh, const char* path) {
  return guarded([&] {
    need(mesh, "mesh");
    need(path, "path");
    isogcn::save_mesh(mesh->mesh, path);
  });
}

isogcn_status isogcn_mesh_grid(int nx, int ny, uint64_t seed, isogcn_mesh** out) {
  return guarded([&] {
    need(out, "out");
    *out = nullptr;
    *out = new isogcn_mesh{isogcn::generate_grid_mesh(nx, ny, seed)};
  });
}

isogcn_status isogcn_mesh_tet(int nx, int ny, int nz, double jitter, uint64_t seed, isogcn_mesh** out) {
  return guarded([&] {
    need(out, "out");
    *out = nullptr;
    *out = new isogcn_mesh{isogcn::generate_tet_mesh(nx, ny, nz, jitter, seed)};
  });
}

isogcn_status isogcn_mesh_n_vertices(const isogcn_mesh* mesh, size_t* out) {
  return guarded([&] {
    need(mesh, "mesh");
    need(out, "out");
    *out = mesh->mesh.n_vertices();
  });
}

isogcn_status isogcn_mesh_n_cells(const isogcn_mesh* mesh, size_t* out) {
  return guarded([&] {
    need(mesh, "mesh");
    need(out, "out");
    *out = mesh->mesh.n_cells();
  });
}

isogcn_status isogcn_mesh_positions(const isogcn_mesh* mesh, double* buf, size_t capacity) {
  return guarded([&] {
    need(mesh, "mesh");
    need(buf, "buf");
    const auto p = mesh->mesh.positions();
    isogcn::require(capacity >= p.size(), isogcn::ErrorCode::Shape, "buffer too small for mesh positions");
    std::copy(p.begin(), p.end(), buf);
  });
}

void isogcn_mesh_free(isogcn_mesh* mesh) { delete mesh; }

isogcn_status isogcn_isoam_build(const isogcn_mesh* mesh, int m_hops, const char* weights, isogcn_isoam** out) {
  return guarded([&] {
    need(mesh, "mesh");
    need(out, "out");
    *out = nullptr;
    isogcn::IsoAMOptions o;
    o.m_hops = m_hops;
    o.weights = isogcn::weight_kind_from_name(weights ? weights : "constant_one");
    *out = new isogcn_isoam{isogcn::build_isoam(mesh->mesh, o)};
  });
}

isogcn_status isogcn_isoam_nnz(const isogcn_isoam* g, size_t* out) {
  return guarded([&] {
    need(g, "isoam");
    need(out, "out");
    *out = g->g.nnz();
  });
}

isogcn_status isogcn_isoam_n_vertices(const isogcn_isoam* g, size_t* out) {
  return guarded([&] {
    need(g, "isoam");
    need(out, "out");
    *out = g->g.n_vertices();
  });
}

isogcn_status isogcn_isoam_coeff(const isogcn_isoam* g, size_t i, size_t j, int k, double* out) {
  return guarded([&] {
    need(g, "isoam");
    need(out, "out");
    isogcn::require(i < g->g.n_vertices() && j < g->g.n_vertices() && k >= 0 && k < g->g.dim(),
                    isogcn::ErrorCode::InvalidArgument, "index out of range");
    *out = g->g.coeff(i, j, k);
  });
}

isogcn_status isogcn_isoam_save(const isogcn_isoam* g, double factor, const char* path) {
  return guarded([&] {
    need(g, "isoam");
    need(path, "path");
    isogcn::save_isoam(g->g, factor, path);
  });
}

isogcn_status isogcn_isoam_load(const char* path, isogcn_isoam** out, double* factor) {
  return guarded([&] {
    need(path, "path");
    need(out, "out");
    *out = nullptr;
    auto loaded = isogcn::load_isoam(path);
    if (factor) *factor = loaded.factor;
    *out = new isogcn_isoam{std::move(loaded.isoam)};
  });
}

void isogcn_isoam_free(isogcn_isoam* g) { delete g; }

isogcn_status isogcn_field_create(int rank, size_t n_vertices, size_t n_features, const double* data,
                                  isogcn_field** out) {
  return make_field(out, [&] {
    isogcn::require(rank >= 0 && rank <= 8, isogcn::ErrorCode::Rank, "rank must be within 0..8");
    isogcn::TensorField f(rank, n_vertices, n_features, 3);
    if (data) std::copy(data, data + f.size(), f.data().begin());
    return f;
  });
}

isogcn_status isogcn_field_rank(const isogcn_field* f, int* out) {
  return guarded([&] {
    need(f, "field");
    need(out, "out");
    *out = f->f.rank();
  });
}

isogcn_status isogcn_field_size(const isogcn_field* f, size_t* out) {
  return guarded([&] {
    need(f, "field");
    need(out, "out");
    *out = f->f.size();
  });
}

isogcn_status isogcn_field_n_features(const isogcn_field* f, size_t* out) {
  return guarded([&] {
    need(f, "field");
    need(out, "out");
    *out = f->f.n_features();
  });
}

isogcn_status isogcn_field_copy_data(const isogcn_field* f, double* buf, size_t capacity) {
  return guarded([&] {
    need(f, "field");
    need(buf, "buf");
    isogcn::require(capacity >= f->f.size(), isogcn::ErrorCode::Shape, "buffer too small for field data");
    std::copy(f->f.data().begin(), f->f.data().end(), buf);
  });
}

void isogcn_field_free(isogcn_field* f) { delete f; }

isogcn_status isogcn_convolve(const isogcn_isoam* g, const isogcn_field* h, isogcn_field** out) {
  return make_field(out, [&] {
    need(g, "isoam");
    need(h, "field");
    return isogcn::convolve(g->g, h->f);
  });
}

isogcn_status isogcn_contract(const isogcn_isoam* g, const isogcn_field* h, isogcn_field** out) {
  return make_field(out, [&] {
    need(g, "isoam");
    need(h, "field");
    return isogcn::contract(g->g, h->f);
  });
}

isogcn_status isogcn_tensor_prod(const isogcn_isoam* g, const isogcn_field* h, isogcn_field** out) {
  return make_field(out, [&] {
    need(g, "isoam");
    need(h, "field");
    return isogcn::tensor_prod(g->g, h->f);
  });
}

isogcn_status isogcn_power_apply(const isogcn_isoam* g, int p, const isogcn_field* h, isogcn_field** out) {
  return make_field(out, [&] {
    need(g, "isoam");
    need(h, "field");
    return isogcn::power_apply(g->g, p, h->f);
  });
}

isogcn_status isogcn_power_contract(const isogcn_isoam* g, int p, const isogcn_field* h, isogcn_field** out) {
  return make_field(out, [&] {
    need(g, "isoam");
    need(h, "field");
    return isogcn::power_contract(g->g, p, h->f);
  });
}

isogcn_status isogcn_diffop(const char* op, const isogcn_isoam* g, const isogcn_field* h, isogcn_field** out) {
  return make_field(out, [&] {
    need(op, "op");
    need(g, "isoam");
    need(h, "field");
    const std::string name = op;
    if (name == "gradient") return isogcn::gradient(g->g, h->f);
    if (name == "divergence") return isogcn::divergence(g->g, h->f);
    if (name == "laplacian") return isogcn::laplacian(g->g, h->f);
    if (name == "jacobian") return isogcn::jacobian(g->g, h->f);
    if (name == "hessian") return isogcn::hessian(g->g, h->f);
    isogcn::fail(isogcn::ErrorCode::InvalidArgument, "unknown operator '" + name + "'");
  });
}

isogcn_status isogcn_model_load(const char* checkpoint_dir, isogcn_model** out) {
  return guarded([&] {
    need(checkpoint_dir, "checkpoint_dir");
    need(out, "out");
    *out = nullptr;
    *out = new isogcn_model{isogcn::load_checkpoint(checkpoint_dir)};
  });
}

isogcn_status isogcn_model_info(const isogcn_model* m, char** result_json) {
  return guarded([&] {
    need(m, "model");
    need(result_json, "result_json");
    nlohmann::json j{{"task", m->s.task},
                     {"parameters", m->s.model.parameter_count()},
                     {"isoam_factor", m->s.isoam_factor},
                     {"m_hops", m->s.isoam_options.m_hops},
                     {"weights", isogcn::weight_kind_name(m->s.isoam_options.weights)},
                     {"spec", isogcn::nn::spec_to_json(m->s.model.spec())}};
    *result_json = dup_string(j.dump());
  });
}

isogcn_status isogcn_model_predict(const isogcn_model* m, const isogcn_mesh* mesh, const char* inputs_json,
                                   char** result_json) {
  return guarded([&] {
    need(m, "model");
    need(mesh, "mesh");
    need(inputs_json, "inputs_json");
    need(result_json, "result_json");
    auto j = nlohmann::json::parse(inputs_json);
    if (j.contains("inputs") && j.at("inputs").is_object()) j = j.at("inputs");
    const auto inputs = isogcn::fields_from_json(j);
    const auto pred =
        isogcn::predict(m->s, mesh->mesh, inputs, isogcn::build_isoam(mesh->mesh, m->s.isoam_options));
    *result_json = dup_string(isogcn::fields_to_json(pred).dump());
  });
}

void isogcn_model_free(isogcn_model* m) { delete m; }

}  // extern "C"
