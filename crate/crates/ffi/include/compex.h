#ifndef COMPEX_H
#define COMPEX_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum CompexStatus {
  COMPEX_STATUS_OK = 0,
  COMPEX_STATUS_NULL_POINTER = 1,
  COMPEX_STATUS_INVALID_UTF8 = 2,
  /**
   * Malformed input: taxonomy, checkpoint, text.
   */
  COMPEX_STATUS_DATA_ERROR = 3,
  COMPEX_STATUS_RUNTIME_ERROR = 4,
  /**
   * A Rust panic was caught at the boundary.
   */
  COMPEX_STATUS_PANIC = 5,
} CompexStatus;

/**
 * A loaded checkpoint.
 */
typedef struct CompexModel CompexModel;

/**
 * A loaded taxonomy together with its compiled matcher.
 */
typedef struct CompexTaxonomy CompexTaxonomy;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Owned by the
 * library and valid until the next call on this thread.
 */
const char *compex_last_error(void);

/**
 * Parses a taxonomy from JSONL text.
 *
 * # Safety
 * `jsonl` must be a NUL-terminated string; `out` must be writable.
 */
enum CompexStatus compex_taxonomy_load(const char *jsonl, struct CompexTaxonomy **out);

/**
 * The built-in toy taxonomy.
 *
 * # Safety
 * `out` must be writable.
 */
enum CompexStatus compex_taxonomy_toy(struct CompexTaxonomy **out);

/**
 * # Safety
 * `handle` must come from a taxonomy constructor, or be null.
 */
void compex_taxonomy_free(struct CompexTaxonomy *handle);

/**
 * Annotates `text` against the taxonomy and writes the annotated sentence
 * as a JSON string to `out`.
 *
 * # Safety
 * Pointers must be valid; free `*out` with [`compex_string_free`].
 */
enum CompexStatus compex_annotate_json(const struct CompexTaxonomy *handle,
                                       const char *text,
                                       char **out);

/**
 * Loads a checkpoint from its JSON text.
 *
 * # Safety
 * `checkpoint` must be a NUL-terminated string; `out` must be writable.
 */
enum CompexStatus compex_model_load(const char *checkpoint, struct CompexModel **out);

/**
 * # Safety
 * `handle` must come from [`compex_model_load`], or be null.
 */
void compex_model_free(struct CompexModel *handle);

/**
 * Extracts and classifies competences in `text`. Writes a JSON object
 * `{"text", "entities": [{"first", "last", "surface", "class", "prob"}]}`.
 *
 * # Safety
 * Pointers must be valid; free `*out` with [`compex_string_free`].
 */
enum CompexStatus compex_predict_json(const struct CompexModel *handle,
                                      const char *text,
                                      char **out);

/**
 * # Safety
 * `s` must come from this library, or be null.
 */
void compex_string_free(char *s);

/**
 * Number of competence classes.
 */
size_t compex_class_count(void);

/**
 * Code of class `index` (e.g. "K06"), or null when out of range. The string
 * is static.
 */
const char *compex_class_code(size_t index);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* COMPEX_H */
