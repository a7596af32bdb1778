#ifndef STARS_H
#define STARS_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum StarsStatus {
  STARS_STATUS_OK = 0,
  STARS_STATUS_NULL_POINTER = 1,
  STARS_STATUS_INVALID_UTF8 = 2,
  STARS_STATUS_INVALID_ARGUMENT = 3,
  STARS_STATUS_PARSE = 4,
  STARS_STATUS_IO = 5,
  STARS_STATUS_DIMENSION_MISMATCH = 6,
  STARS_STATUS_ZERO_NORM = 7,
  STARS_STATUS_EMPTY_POOL = 8,
  STARS_STATUS_NOT_FOUND = 9,
  STARS_STATUS_BUFFER_TOO_SMALL = 10,
  STARS_STATUS_PANIC = 11,
  STARS_STATUS_INTERNAL = 12,
} StarsStatus;

/**
 * Deterministic feature-hashing embedder.
 */
typedef struct StarsHashEmbedder StarsHashEmbedder;

/**
 * Loaded technology lexicon.
 */
typedef struct StarsLexicon StarsLexicon;

/**
 * TF-IDF index over caller-supplied documents; items are addressed by
 * their position at build time.
 */
typedef struct StarsTfIdf StarsTfIdf;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Why the most recent call on this thread failed, or null if it
 * succeeded. Free with `stars_string_free`.
 */
char *stars_last_error_message(void);

/**
 * Release a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed already.
 */
void stars_string_free(char *s);

/**
 * Cosine similarity of two vectors of length `len`.
 *
 * # Safety
 * `a` and `b` must point to `len` doubles; `out` must be writable.
 */
enum StarsStatus stars_cosine(const double *a, const double *b, size_t len, double *out);

/**
 * Precision at `k` of a ranked id list against a relevant id set.
 * `out_degenerate` (may be null) is set when nothing was retrieved.
 *
 * # Safety
 * Array arguments must hold the stated number of NUL-terminated strings.
 */
enum StarsStatus stars_precision_at_k(const char *const *ranked,
                                      size_t n_ranked,
                                      const char *const *relevant,
                                      size_t n_relevant,
                                      size_t k,
                                      double *out,
                                      bool *out_degenerate);

/**
 * Best `k` rows of a row-major `n x dim` pool by cosine to `query`, ties
 * broken by lower row index. Writes up to `k` entries and their count.
 *
 * # Safety
 * `pool` must hold `n * dim` doubles; the output arrays must hold `k`.
 */
enum StarsStatus stars_top_k(const double *query,
                             size_t dim,
                             const double *pool,
                             size_t n,
                             size_t k,
                             size_t *out_indices,
                             double *out_scores,
                             size_t *out_len);

/**
 * Load a lexicon from a JSONL file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum StarsStatus stars_lexicon_load(const char *path, struct StarsLexicon **out);

/**
 * Number of technologies in the lexicon; 0 for null.
 *
 * # Safety
 * `lexicon` must be null or a live handle.
 */
size_t stars_lexicon_len(const struct StarsLexicon *lexicon);

/**
 * Id of the technology a surface form refers to. Returns
 * `STARS_STATUS_NOT_FOUND` when the form is unknown. Free the id with
 * `stars_string_free`.
 *
 * # Safety
 * `lexicon` must be a live handle; `surface_form` NUL-terminated.
 */
enum StarsStatus stars_lexicon_lookup(const struct StarsLexicon *lexicon,
                                      const char *surface_form,
                                      char **out_id);

/**
 * # Safety
 * `lexicon` must be null or a handle not freed before.
 */
void stars_lexicon_free(struct StarsLexicon *lexicon);

/**
 * # Safety
 * `out` must be writable.
 */
enum StarsStatus stars_hash_embedder_new(size_t dimension,
                                         uint64_t seed,
                                         struct StarsHashEmbedder **out);

/**
 * # Safety
 * `embedder` must be null or a live handle.
 */
size_t stars_hash_embedder_dimension(const struct StarsHashEmbedder *embedder);

/**
 * Embed `text` into `out`, which must have room for `capacity` doubles
 * (at least the embedder's dimension).
 *
 * # Safety
 * `embedder` must be a live handle; `text` NUL-terminated; `out` must hold
 * `capacity` doubles.
 */
enum StarsStatus stars_hash_embed(const struct StarsHashEmbedder *embedder,
                                  const char *text,
                                  double *out,
                                  size_t capacity);

/**
 * # Safety
 * `embedder` must be null or a handle not freed before.
 */
void stars_hash_embedder_free(struct StarsHashEmbedder *embedder);

/**
 * Index `n` documents. Ids must be unique.
 *
 * # Safety
 * `ids` and `texts` must each hold `n` NUL-terminated strings.
 */
enum StarsStatus stars_tfidf_new(const char *const *ids,
                                 const char *const *texts,
                                 size_t n,
                                 struct StarsTfIdf **out);

/**
 * Normalized weight of `token` in document `id`; 0 when the document
 * lacks the token, `STARS_STATUS_NOT_FOUND` when either is unknown.
 *
 * # Safety
 * `index` must be a live handle; strings NUL-terminated.
 */
enum StarsStatus stars_tfidf_weight(const struct StarsTfIdf *index,
                                    const char *id,
                                    const char *token,
                                    double *out);

/**
 * Rank indexed documents by TF-IDF cosine to `query`. Writes up to `k`
 * document positions (build order) and scores, and their count. A query
 * with no known token yields zero results.
 *
 * # Safety
 * `index` must be a live handle; output arrays must hold `k` entries.
 */
enum StarsStatus stars_tfidf_rank(const struct StarsTfIdf *index,
                                  const char *query,
                                  size_t k,
                                  size_t *out_indices,
                                  double *out_scores,
                                  size_t *out_len);

/**
 * # Safety
 * `index` must be null or a handle not freed before.
 */
void stars_tfidf_free(struct StarsTfIdf *index);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* STARS_H */
