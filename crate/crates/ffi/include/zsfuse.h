#ifndef ZSFUSE_H
#define ZSFUSE_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum ZsStatus {
  ZS_STATUS_OK = 0,
  ZS_STATUS_NULL_POINTER = 1,
  ZS_STATUS_INVALID_ARGUMENT = 2,
  ZS_STATUS_IO = 3,
  ZS_STATUS_FORMAT = 4,
  ZS_STATUS_NOT_FOUND = 5,
  ZS_STATUS_DIMENSION_MISMATCH = 6,
  ZS_STATUS_NON_FINITE = 7,
  ZS_STATUS_BUFFER_TOO_SMALL = 8,
  ZS_STATUS_PANIC = 99,
} ZsStatus;

// Embedding table handle.
typedef struct ZsEmbeddingTable ZsEmbeddingTable;

// Prompt matrix handle, rows flattened template-major.
typedef struct ZsPromptMatrix ZsPromptMatrix;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or an empty string.
// The pointer stays valid until the next call on the same thread.
const char *zs_last_error_message(void);

const char *zs_version(void);

enum ZsStatus zs_table_new(const char *encoder_id, size_t dim, struct ZsEmbeddingTable **out);

enum ZsStatus zs_table_read(const char *path, struct ZsEmbeddingTable **out);

enum ZsStatus zs_table_write(const struct ZsEmbeddingTable *table, const char *path);

enum ZsStatus zs_table_insert(struct ZsEmbeddingTable *table,
                              const char *id,
                              const float *values,
                              size_t len);

// 0 for a null handle.
size_t zs_table_dim(const struct ZsEmbeddingTable *table);

// 0 for a null handle.
size_t zs_table_len(const struct ZsEmbeddingTable *table);

// Copies the vector stored under `id` into `out`, which must hold at least
// `zs_table_dim` floats.
enum ZsStatus zs_table_get(const struct ZsEmbeddingTable *table,
                           const char *id,
                           float *out,
                           size_t out_len);

void zs_table_free(struct ZsEmbeddingTable *table);

enum ZsStatus zs_cosine(const double *u, const double *v, size_t len, double *out);

// Writes `len` normalised values into `out`.
enum ZsStatus zs_layer_norm(const double *s, size_t len, double epsilon, double *out);

// `out` receives `h_len + s_len` values: `h` followed by its normalised `s`.
enum ZsStatus zs_fuse(const double *h,
                      size_t h_len,
                      const double *s,
                      size_t s_len,
                      double epsilon,
                      double *out,
                      size_t out_len);

enum ZsStatus zs_uar(const size_t *preds,
                     const size_t *labels,
                     size_t len,
                     size_t n_classes,
                     bool lenient,
                     double *out);

// Builds the prompt matrix for comma-separated class codes at text repeat `t`.
enum ZsStatus zs_prompt_matrix_new(const char *classes, uint32_t t, struct ZsPromptMatrix **out);

// Number of prompts (templates × classes); 0 for a null handle.
size_t zs_prompt_matrix_len(const struct ZsPromptMatrix *matrix);

// Null for a null handle or an index past the end. Owned by the handle.
const char *zs_prompt_matrix_id(const struct ZsPromptMatrix *matrix, size_t index);

// Null for a null handle or an index past the end. Owned by the handle.
const char *zs_prompt_matrix_text(const struct ZsPromptMatrix *matrix, size_t index);

void zs_prompt_matrix_free(struct ZsPromptMatrix *matrix);

// Ensemble score vector of one utterance; `out` receives one value per
// class.
enum ZsStatus zs_score_utterance(const struct ZsEmbeddingTable *audio,
                                 const char *utterance_id,
                                 uint32_t a,
                                 const struct ZsPromptMatrix *prompts,
                                 const struct ZsEmbeddingTable *text,
                                 double *out,
                                 size_t out_len);

// Index of the largest score, lowest index on ties.
enum ZsStatus zs_predict(const double *s, size_t len, size_t *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ZSFUSE_H */
