/* SPDX-License-Identifier: Apache-2.0 */
/*
 * isogcn C API.
 *
 * Every function returns an isogcn_status; on failure the thread-local message
 * from isogcn_last_error() describes the problem. Strings returned through
 * `char**` out-parameters are owned by the caller and must be released with
 * isogcn_string_free(). Handles are opaque and released with their *_free
 * function; passing NULL to a *_free function is a no-op.
 */
#ifndef ISOGCN_ISOGCN_H
#define ISOGCN_ISOGCN_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#  if defined(ISOGCN_BUILDING_LIBRARY)
#    define ISOGCN_API __declspec(dllexport)
#  else
#    define ISOGCN_API __declspec(dllimport)
#  endif
#else
#  define ISOGCN_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum isogcn_status {
  ISOGCN_OK = 0,
  ISOGCN_ERR_INVALID_ARGUMENT = 1,
  ISOGCN_ERR_SHAPE = 2,
  ISOGCN_ERR_RANK = 3,
  ISOGCN_ERR_IO = 4,
  ISOGCN_ERR_PARSE = 5,
  ISOGCN_ERR_RESOURCE = 6,
  ISOGCN_ERR_NUMERIC = 7,
  ISOGCN_ERR_CONSTRUCTION = 8,
  ISOGCN_ERR_NOT_FOUND = 9,
  ISOGCN_ERR_INTERNAL = 100
} isogcn_status;

typedef struct isogcn_mesh isogcn_mesh;
typedef struct isogcn_isoam isogcn_isoam;
typedef struct isogcn_field isogcn_field;
typedef struct isogcn_model isogcn_model;

ISOGCN_API const char* isogcn_version(void);
ISOGCN_API const char* isogcn_last_error(void);
ISOGCN_API const char* isogcn_status_name(isogcn_status status);
ISOGCN_API void isogcn_string_free(char* s);
ISOGCN_API isogcn_status isogcn_set_threads(int n);

/* ---- subcommands: JSON config in, JSON result out ---- */

/* JSON array of command names. */
ISOGCN_API isogcn_status isogcn_command_list(char** result_json);
/* JSON object {description, keys:[{name,type,help,default,required}]}. */
ISOGCN_API isogcn_status isogcn_command_schema(const char* command, char** result_json);
ISOGCN_API isogcn_status isogcn_run(const char* command, const char* config_json, char** result_json);

ISOGCN_API isogcn_status isogcn_cmd_gen_diffop(const char* config_json, char** result_json);
ISOGCN_API isogcn_status isogcn_cmd_gen_heat(const char* config_json, char** result_json);
ISOGCN_API isogcn_status isogcn_cmd_preprocess(const char* config_json, char** result_json);
ISOGCN_API isogcn_status isogcn_cmd_train(const char* config_json, char** result_json);
ISOGCN_API isogcn_status isogcn_cmd_eval(const char* config_json, char** result_json);
ISOGCN_API isogcn_status isogcn_cmd_equivariance(const char* config_json, char** result_json);
ISOGCN_API isogcn_status isogcn_cmd_bench(const char* config_json, char** result_json);
ISOGCN_API isogcn_status isogcn_cmd_infer(const char* config_json, char** result_json);
ISOGCN_API isogcn_status isogcn_cmd_export_vtk(const char* config_json, char** result_json);

/* ---- meshes ---- */

ISOGCN_API isogcn_status isogcn_mesh_load(const char* path, isogcn_mesh** out);
ISOGCN_API isogcn_status isogcn_mesh_save(const isogcn_mesh* mesh, const char* path);
ISOGCN_API isogcn_status isogcn_mesh_grid(int nx, int ny, uint64_t seed, isogcn_mesh** out);
ISOGCN_API isogcn_status isogcn_mesh_tet(int nx, int ny, int nz, double jitter, uint64_t seed, isogcn_mesh** out);
ISOGCN_API isogcn_status isogcn_mesh_n_vertices(const isogcn_mesh* mesh, size_t* out);
ISOGCN_API isogcn_status isogcn_mesh_n_cells(const isogcn_mesh* mesh, size_t* out);
/* Copies |V| x 3 positions into buf (capacity in doubles). */
ISOGCN_API isogcn_status isogcn_mesh_positions(const isogcn_mesh* mesh, double* buf, size_t capacity);
ISOGCN_API void isogcn_mesh_free(isogcn_mesh* mesh);

/* ---- IsoAM (D~) ---- */

/* weights: "constant_one" or "volume_ratio". Returns the unscaled D~. */
ISOGCN_API isogcn_status isogcn_isoam_build(const isogcn_mesh* mesh, int m_hops, const char* weights,
                                            isogcn_isoam** out);
ISOGCN_API isogcn_status isogcn_isoam_nnz(const isogcn_isoam* g, size_t* out);
ISOGCN_API isogcn_status isogcn_isoam_n_vertices(const isogcn_isoam* g, size_t* out);
/* Component k of entry (i, j), 0 outside the pattern. */
ISOGCN_API isogcn_status isogcn_isoam_coeff(const isogcn_isoam* g, size_t i, size_t j, int k, double* out);
ISOGCN_API isogcn_status isogcn_isoam_save(const isogcn_isoam* g, double factor, const char* path);
ISOGCN_API isogcn_status isogcn_isoam_load(const char* path, isogcn_isoam** out, double* factor);
ISOGCN_API void isogcn_isoam_free(isogcn_isoam* g);

/* ---- tensor fields ---- */

/* data may be NULL (zero field); otherwise n_vertices * n_features * 3^rank doubles. */
ISOGCN_API isogcn_status isogcn_field_create(int rank, size_t n_vertices, size_t n_features, const double* data,
                                             isogcn_field** out);
ISOGCN_API isogcn_status isogcn_field_rank(const isogcn_field* f, int* out);
ISOGCN_API isogcn_status isogcn_field_size(const isogcn_field* f, size_t* out);
ISOGCN_API isogcn_status isogcn_field_n_features(const isogcn_field* f, size_t* out);
ISOGCN_API isogcn_status isogcn_field_copy_data(const isogcn_field* f, double* buf, size_t capacity);
ISOGCN_API void isogcn_field_free(isogcn_field* f);

/* Equivariant algebra; results are new handles. */
ISOGCN_API isogcn_status isogcn_convolve(const isogcn_isoam* g, const isogcn_field* h, isogcn_field** out);
ISOGCN_API isogcn_status isogcn_contract(const isogcn_isoam* g, const isogcn_field* h, isogcn_field** out);
ISOGCN_API isogcn_status isogcn_tensor_prod(const isogcn_isoam* g, const isogcn_field* h, isogcn_field** out);
ISOGCN_API isogcn_status isogcn_power_apply(const isogcn_isoam* g, int p, const isogcn_field* h, isogcn_field** out);
ISOGCN_API isogcn_status isogcn_power_contract(const isogcn_isoam* g, int p, const isogcn_field* h,
                                               isogcn_field** out);
/* operator: "gradient", "divergence", "laplacian", "jacobian" or "hessian". */
ISOGCN_API isogcn_status isogcn_diffop(const char* op, const isogcn_isoam* g, const isogcn_field* h,
                                       isogcn_field** out);

/* ---- trained models ---- */

ISOGCN_API isogcn_status isogcn_model_load(const char* checkpoint_dir, isogcn_model** out);
ISOGCN_API isogcn_status isogcn_model_info(const isogcn_model* m, char** result_json);
/* Runs the model on a mesh with input fields given as JSON (fields.json
   layout); the prediction is returned in the same layout. */
ISOGCN_API isogcn_status isogcn_model_predict(const isogcn_model* m, const isogcn_mesh* mesh,
                                              const char* inputs_json, char** result_json);
ISOGCN_API void isogcn_model_free(isogcn_model* m);

#ifdef __cplusplus
}
#endif

#endif /* ISOGCN_ISOGCN_H */
