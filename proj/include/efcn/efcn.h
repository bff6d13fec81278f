#ifndef EFCN_H
#define EFCN_H

/* C interface to the efcn core.  Everything crosses the boundary as plain C:
 * opaque handles, status codes, and heap strings released through
 * efcn_string_free.  The last error message is kept per thread. */

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum efcn_status {
  EFCN_OK = 0,
  EFCN_ERR_SHAPE = 1,      /* tensor shapes disagree */
  EFCN_ERR_VALIDATION = 2, /* arguments break a documented precondition */
  EFCN_ERR_CONFIG = 3,     /* configuration value out of range */
  EFCN_ERR_FORMAT = 4,     /* malformed JSON or weight file */
  EFCN_ERR_IO = 5,         /* file system failure */
  EFCN_ERR_NUMERIC = 6,    /* NaN or divergence */
  EFCN_ERR_NULL_ARG = 7,   /* required pointer was NULL */
  EFCN_ERR_UNKNOWN = 8
} efcn_status;

/* Short identifier for a status code ("ok", "shape", ...). */
const char* efcn_status_name(efcn_status s);

/* Message from the most recent failing call on this thread; empty string if
 * none.  The pointer stays valid until the thread's next failing call. */
const char* efcn_last_error(void);

/* Library version, e.g. "1.0.0". */
const char* efcn_version(void);

/* Releases a string returned through a char** out-parameter. */
void efcn_string_free(char* s);

/* ------------------------------------------------------------------ model */

typedef struct efcn_model efcn_model;

/* Builds a freshly initialized model.  config_json is a harness config
 * document (its backbone and hgd sections are used); NULL takes the toy
 * defaults.  seed drives parameter initialization. */
efcn_status efcn_model_create(const char* config_json, uint64_t seed,
                              efcn_model** out);

/* Restores a checkpoint written by efcn_model_save; expects the weight file
 * and its '<path>.json' config sidecar. */
efcn_status efcn_model_load(const char* weights_path, efcn_model** out);

efcn_status efcn_model_save(efcn_model* m, const char* weights_path);

/* Model configuration as a JSON document. */
efcn_status efcn_model_config_json(efcn_model* m, char** json_out);

void efcn_model_free(efcn_model* m);

/* The toy defaults as a full harness config document, a template for
 * efcn_model_create and efcn_train_toy. */
efcn_status efcn_default_config_json(char** json_out);

/* --------------------------------------------------------------- training */

/* Runs the full toy training loop described by config_json (NULL for the
 * defaults).  jsonl_path, when given, receives one JSON record per eval
 * step; weights_out, when given, receives the final checkpoint.  seed_override
 * >= 0 replaces the config's training seed.  summary_json_out reports the
 * final loss and metrics. */
efcn_status efcn_train_toy(const char* config_json, const char* jsonl_path,
                           const char* weights_out, int64_t seed_override,
                           char** summary_json_out);

/* -------------------------------------------------------------- inference */

/* Multi-scale inference over one PGM/PPM image; writes the argmax label mask
 * as a binary PGM.  scales_csv like "0.5,1.0,2.0"; NULL means single scale
 * 1.0.  flip adds mirrored passes. */
efcn_status efcn_infer_image(efcn_model* m, const char* image_path,
                             const char* mask_out_path, const char* scales_csv,
                             int flip);

/* Evaluates the model over the synthetic dataset (dataset section of
 * config_json; NULL for defaults) and returns metrics as JSON.  scales_csv
 * NULL evaluates the standard scale set. */
efcn_status efcn_evaluate(efcn_model* m, const char* config_json,
                          const char* scales_csv, int flip,
                          char** metrics_json_out);

/* Writes each codeword weighting map for one image (NULL: first synthetic
 * sample) as an 8-bit PGM under out_dir, plus an index.json. */
efcn_status efcn_export_weightmaps(efcn_model* m, const char* image_path,
                                   const char* out_dir);

/* ----------------------------------------------------------- cost analysis */

/* Cost report for one model id (fcn32s, dilatedfcn8s, unet_bilinear,
 * unet_deconv, efficientfcn) at input h x w.  Counting convention flags
 * mirror the core's CountingConvention. */
efcn_status efcn_cost_report_json(const char* model_id, int h, int w,
                                  int n_codewords, int n_classes,
                                  int flops_per_mac, int include_bn_relu,
                                  int include_pool_resize, int include_bias,
                                  char** json_out);

/* Total GFLOPs of the guided-decoder network per codeword count; ns_csv like
 * "32,64,128". */
efcn_status efcn_sweep_codewords_json(const char* ns_csv, int h, int w,
                                      int n_classes, char** json_out);

/* ---------------------------------------------------------------- checking */

/* Finite-difference check of every differentiable op; the report lists each
 * op's worst relative error and an overall "all_pass" flag.  The call only
 * fails on invalid arguments, not on a failing check. */
efcn_status efcn_gradcheck(int shapes_per_op, double tol, char** report_json_out);

#ifdef __cplusplus
}
#endif

#endif /* EFCN_H */
