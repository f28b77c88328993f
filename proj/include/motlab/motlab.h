/* motlab — FLOP-matched multi-modal transformer lab.
 *
 * C interface over the C++ core. Every function returns a motlab_status;
 * on failure motlab_last_error() holds a one-line message for the calling
 * thread. Strings returned through char** out-parameters are heap-allocated
 * and must be released with motlab_string_free().
 */
#ifndef MOTLAB_H
#define MOTLAB_H

#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef int32_t motlab_status;
#define MOTLAB_OK 0
#define MOTLAB_ERR_CONFIG 2
#define MOTLAB_ERR_NUMERIC 3
#define MOTLAB_ERR_IO 4

const char* motlab_version(void);

/* Thread-local message describing the most recent failure. */
const char* motlab_last_error(void);

void motlab_string_free(char* s);

/* ------------------------------------------------------------------ */
/* Path-level operations                                               */
/* ------------------------------------------------------------------ */

/* Trains per the JSON config, writing metrics.jsonl and checkpoints into
 * out_dir. steps_override/seed_override < 0 keep the config's values;
 * ckpt_every_override < 0 keeps the config's cadence. */
motlab_status motlab_train(const char* config_path, const char* out_dir,
                           int64_t steps_override, int64_t seed_override,
                           int64_t ckpt_every_override);

/* CostReport JSON for the config's model (probe length = seq_len). */
motlab_status motlab_flops(const char* config_path, char** json_out);

/* Gradient certification table for the config's model on a small fixed
 * batch; *passed is 1 when every tensor is within tolerance. */
motlab_status motlab_gradcheck(const char* config_path, double h, double tol_rel,
                               int32_t probes_per_tensor, char** table_out, int32_t* passed);

/* Step-matching between two metrics.jsonl files; CSV (ref_step,
 * matched_step, ratio) via csv_out. modality may be "total". */
motlab_status motlab_step_match(const char* ref_metrics_path, const char* cand_metrics_path,
                                const char* modality, int32_t halflife, const char* split,
                                char** csv_out);

/* Writes n corpus sequences as JSONL (one MixedSequence per line). */
motlab_status motlab_gen_data(const char* config_path, int64_t n, const char* out_path);

/* ------------------------------------------------------------------ */
/* Checkpoint-backed operations (opaque model handle)                  */
/* ------------------------------------------------------------------ */

typedef struct motlab_model motlab_model;

motlab_status motlab_model_load(const char* ckpt_dir, motlab_model** out);
void motlab_model_free(motlab_model* m);

/* Config echo of the loaded checkpoint as JSON. */
motlab_status motlab_model_config(const motlab_model* m, char** json_out);

/* Per-modality losses on the named split ("train" or "valid") as JSON. */
motlab_status motlab_model_eval(const motlab_model* m, const char* split, char** json_out);

/* Mixed-mode generation from a prompt MixedSequence JSON file; the result
 * sequence is written to out_path as JSON. cfg_scale < 0 uses the config's
 * value; temperature <= 0 decodes greedily. */
motlab_status motlab_model_sample(const motlab_model* m, const char* prompt_path,
                                  double cfg_scale, int64_t max_tokens, int64_t image_patches,
                                  double temperature, uint64_t sample_seed,
                                  const char* out_path);

/* PCA-2 projection of post-layer hidden states on the validation batch:
 * CSV rows (row, modality, pc1, pc2); *silhouette is NaN when undefined. */
motlab_status motlab_model_probe(const motlab_model* m, int32_t layer, char** csv_out,
                                 double* silhouette);

#ifdef __cplusplus
}
#endif

#endif /* MOTLAB_H */
