#ifndef CC_EMBED_H
#define CC_EMBED_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Which entity of a triplet to rank.
typedef enum CcSide {
  CC_SIDE_HEAD = 0,
  CC_SIDE_TAIL = 1,
} CcSide;

// Result of every fallible call.
typedef enum CcStatus {
  CC_STATUS_OK = 0,
  CC_STATUS_NULL_POINTER = 1,
  CC_STATUS_INVALID_UTF8 = 2,
  CC_STATUS_CONFIG = 3,
  CC_STATUS_DATA = 4,
  CC_STATUS_IO = 5,
  CC_STATUS_NOT_FOUND = 6,
  CC_STATUS_BUFFER_TOO_SMALL = 7,
  CC_STATUS_UNSUPPORTED = 8,
  CC_STATUS_INTERNAL = 9,
  CC_STATUS_PANIC = 10,
} CcStatus;

// A loaded model with its concept lexicon and optional sentence index.
typedef struct CcModel CcModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *cc_version(void);

// Message of the last failing call on this thread, or NULL if none. The
// pointer stays valid until the next failing call on this thread.
const char *cc_last_error_message(void);

// Loads a checkpoint and the concept file it was trained with. `index` is
// a serialized sentence index and may be NULL; CC-LSTM models need it to
// place names in context. On success `*out` owns a new handle; on failure
// it is set to NULL.
//
// # Safety
// String arguments must be NUL-terminated; `out` must be writable.
enum CcStatus cc_model_load(const char *checkpoint,
                            const char *concepts,
                            const char *index,
                            struct CcModel **out);

// Releases a handle from [`cc_model_load`]. NULL is ignored.
//
// # Safety
// `model` must come from [`cc_model_load`] and not be used afterwards.
void cc_model_free(struct CcModel *model);

// Embedding dimension, or 0 for NULL.
//
// # Safety
// `model` must be NULL or a live handle.
size_t cc_model_dim(const struct CcModel *model);

// Number of concepts in the lexicon, or 0 for NULL.
//
// # Safety
// `model` must be NULL or a live handle.
size_t cc_model_num_concepts(const struct CcModel *model);

// Writes the embedding of a concept, encoded as in evaluation, into the
// first `dim` floats of `out`.
//
// # Safety
// `out` must point to `len` writable floats.
enum CcStatus cc_model_encode_concept(const struct CcModel *model,
                                      const char *concept_id,
                                      float *out,
                                      size_t len);

// Encodes free text as a concept name. CC-LSTM places it in the best
// matching indexed sentence when there is one. TransE cannot encode text.
//
// # Safety
// `out` must point to `len` writable floats.
enum CcStatus cc_model_encode_text(const struct CcModel *model,
                                   const char *text,
                                   float *out,
                                   size_t len);

// `||h + r - t||` for a triplet of concept ids and a relation label.
//
// # Safety
// String arguments must be NUL-terminated; `out` must be writable.
enum CcStatus cc_model_score(const struct CcModel *model,
                             const char *head,
                             const char *relation,
                             const char *tail,
                             double *out);

// Raw rank of the true `side` entity among all concepts, ties counted
// against it.
//
// # Safety
// String arguments must be NUL-terminated; `out` must be writable.
enum CcStatus cc_model_rank(const struct CcModel *model,
                            const char *head,
                            const char *relation,
                            const char *tail,
                            enum CcSide side,
                            size_t *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CC_EMBED_H */
