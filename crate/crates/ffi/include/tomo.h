#ifndef TOMO_H
#define TOMO_H

/* Generated by cbindgen. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every call.
 */
typedef enum TomoStatus {
  TOMO_STATUS_OK = 0,
  TOMO_STATUS_NULL_POINTER = 1,
  TOMO_STATUS_CONFIG = 2,
  TOMO_STATUS_DATA = 3,
  TOMO_STATUS_INTERNAL = 4,
  TOMO_STATUS_UTF8 = 5,
} TomoStatus;

/**
 * A pairwise covariance matrix in ms².
 */
typedef struct TomoCovariance TomoCovariance;

/**
 * A parsed measurement log.
 */
typedef struct TomoLog TomoLog;

/**
 * An inferred or reference routing tree.
 */
typedef struct TomoTree TomoTree;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *tomo_last_error(void);

/**
 * Library version as a static string.
 */
const char *tomo_version(void);

/**
 * Releases a string returned by this library.
 *
 * # Safety
 * `s` must be null or a string obtained from this library, not yet freed.
 */
void tomo_string_free(char *s);

/**
 * Parses a newline-delimited JSON log held in memory.
 *
 * # Safety
 * `text` must be a nul-terminated string; `out` must be writable.
 */
enum TomoStatus tomo_log_parse(const char *text, struct TomoLog **out);

/**
 * Reads a newline-delimited JSON log from a file.
 *
 * # Safety
 * `path` must be a nul-terminated string; `out` must be writable.
 */
enum TomoStatus tomo_log_load(const char *path, struct TomoLog **out);

/**
 * Number of receivers in the log.
 *
 * # Safety
 * `log` must be a live handle; `out` must be writable.
 */
enum TomoStatus tomo_log_receiver_count(const struct TomoLog *log, size_t *out);

/**
 * # Safety
 * `log` must be null or a live handle.
 */
void tomo_log_free(struct TomoLog *log);

/**
 * Covariance matrix over every receiver in the log, ordered by id.
 *
 * # Safety
 * `log` must be a live handle; `out` must be writable.
 */
enum TomoStatus tomo_covariance_build(const struct TomoLog *log, struct TomoCovariance **out);

/**
 * Number of receivers (rows) in the matrix.
 *
 * # Safety
 * `cov` must be a live handle; `out` must be writable.
 */
enum TomoStatus tomo_covariance_len(const struct TomoCovariance *cov, size_t *out);

/**
 * Entry (i, j) in ms².
 *
 * # Safety
 * `cov` must be a live handle; `out` must be writable.
 */
enum TomoStatus tomo_covariance_get(const struct TomoCovariance *cov,
                                    size_t i,
                                    size_t j,
                                    double *out);

/**
 * Id of receiver `i`. Free the result with [`tomo_string_free`].
 *
 * # Safety
 * `cov` must be a live handle; `out` must be writable.
 */
enum TomoStatus tomo_covariance_receiver(const struct TomoCovariance *cov, size_t i, char **out);

/**
 * # Safety
 * `cov` must be null or a live handle.
 */
void tomo_covariance_free(struct TomoCovariance *cov);

/**
 * Infers the routing tree rooted at `source`. A `rho` that is not positive
 * selects the threshold from the matrix.
 *
 * # Safety
 * `cov` must be a live handle, `source` a nul-terminated string, `out` writable.
 */
enum TomoStatus tomo_recover(const struct TomoCovariance *cov,
                             const char *source,
                             double rho,
                             struct TomoTree **out);

/**
 * Parses a tree from its nested JSON form.
 *
 * # Safety
 * `json` must be a nul-terminated string; `out` must be writable.
 */
enum TomoStatus tomo_tree_from_json(const char *json, struct TomoTree **out);

/**
 * Nested JSON form of the tree. Free the result with [`tomo_string_free`].
 *
 * # Safety
 * `tree` must be a live handle; `out` must be writable.
 */
enum TomoStatus tomo_tree_to_json(const struct TomoTree *tree, char **out);

/**
 * Number of leaves in the tree.
 *
 * # Safety
 * `tree` must be a live handle; `out` must be writable.
 */
enum TomoStatus tomo_tree_leaf_count(const struct TomoTree *tree, size_t *out);

/**
 * Adds `peer` to the tree using covariances drawn from `log`.
 *
 * # Safety
 * `tree` and `log` must be live handles; `peer` a nul-terminated string.
 */
enum TomoStatus tomo_tree_join(struct TomoTree *tree,
                               const struct TomoLog *log,
                               const char *peer,
                               double rho);

/**
 * Removes leaf `peer` from the tree.
 *
 * # Safety
 * `tree` must be a live handle; `peer` a nul-terminated string.
 */
enum TomoStatus tomo_tree_remove(struct TomoTree *tree, const char *peer);

/**
 * Tomography accuracy of `recovered` against `truth` over the leaves of
 * `recovered`.
 *
 * # Safety
 * Both trees must be live handles; `out` must be writable.
 */
enum TomoStatus tomo_accuracy(const struct TomoTree *recovered,
                              const struct TomoTree *truth,
                              double *out);

/**
 * # Safety
 * `tree` must be null or a live handle.
 */
void tomo_tree_free(struct TomoTree *tree);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* TOMO_H */
