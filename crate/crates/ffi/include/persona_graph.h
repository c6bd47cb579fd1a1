#ifndef PERSONA_GRAPH_H
#define PERSONA_GRAPH_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

// Call outcome; the nonzero values match the CLI exit codes.
typedef enum PgStatus {
  PG_STATUS_OK = 0,
  // Panic or other internal failure.
  PG_STATUS_INTERNAL = 1,
  PG_STATUS_INPUT = 2,
  PG_STATUS_NUMERIC = 3,
  PG_STATUS_TRANSPORT = 4,
  PG_STATUS_CONSISTENCY = 5,
  // Null pointer or invalid UTF-8 argument.
  PG_STATUS_USAGE = 64,
} PgStatus;

// One user's graph plus the settings it was built with.
typedef struct PgGraph PgGraph;

// A loaded checkpoint with its provider.
typedef struct PgModel PgModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failure on this thread, or null. Valid until the
// next failing call on the same thread.
const char *pg_last_error(void);

// # Safety
// `s` must be null or a string returned by this library.
void pg_string_free(char *s);

// Loads a checkpoint file.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum PgStatus pg_model_load(const char *path, struct PgModel **out);

// # Safety
// `model` must be null or a handle from [`pg_model_load`], freed once.
void pg_model_free(struct PgModel *model);

// Predicts a type code; writes `{"type": ..., "probs": ...}` JSON.
//
// # Safety
// `posts` must point to `count` NUL-terminated strings.
enum PgStatus pg_predict(const struct PgModel *model,
                         const char *const *posts,
                         uintptr_t count,
                         char **out_json);

// Builds a graph. `config` is null or flat `key = value` text; `model`
// is null (uniform attention) or supplies the trained attention vector
// and base settings.
//
// # Safety
// Pointer arguments must be valid as described.
enum PgStatus pg_graph_build(const struct PgModel *model,
                             const char *config,
                             const char *const *posts,
                             uintptr_t count,
                             struct PgGraph **out);

// Adds one post in place.
//
// # Safety
// `graph` must be a live handle; `post` a NUL-terminated string.
enum PgStatus pg_graph_add_post(struct PgGraph *graph, const char *post);

// Node count including the user node; 0 for a null handle.
//
// # Safety
// `graph` must be null or a live handle.
uintptr_t pg_graph_node_count(const struct PgGraph *graph);

// Writes the graph export JSON.
//
// # Safety
// `graph` must be a live handle; `out_json` writable.
enum PgStatus pg_graph_to_json(const struct PgGraph *graph, char **out_json);

// # Safety
// `graph` must be null or a handle from [`pg_graph_build`], freed once.
void pg_graph_free(struct PgGraph *graph);

// Macro-F1 (%) of binary predictions against labels.
//
// # Safety
// `preds` and `labels` must each point to `count` bytes.
enum PgStatus pg_macro_f1(const uint8_t *preds,
                          const uint8_t *labels,
                          uintptr_t count,
                          double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PERSONA_GRAPH_H */
