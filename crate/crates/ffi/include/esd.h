#ifndef ESD_H
#define ESD_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum EsdStatus {
  ESD_STATUS_OK = 0,
  ESD_STATUS_NULL_POINTER = 1,
  ESD_STATUS_INVALID_UTF8 = 2,
  ESD_STATUS_INVALID_ARGUMENT = 3,
  ESD_STATUS_PARSE = 4,
  ESD_STATUS_INFEASIBLE = 5,
  ESD_STATUS_FAILED = 6,
  ESD_STATUS_PANIC = 7,
} EsdStatus;

typedef enum EsdRoomType {
  ESD_ROOM_TYPE_LIVING_ROOM = 0,
  ESD_ROOM_TYPE_KITCHEN = 1,
  ESD_ROOM_TYPE_BEDROOM = 2,
  ESD_ROOM_TYPE_BATHROOM = 3,
} EsdRoomType;

typedef struct EsdLexicon EsdLexicon;

typedef struct EsdPolicy EsdPolicy;

typedef struct EsdScene EsdScene;

/**
 * Grid cell plus heading in 45 degree steps (0 faces +y, clockwise).
 */
typedef struct EsdPose {
  uint32_t x;
  uint32_t y;
  uint8_t h;
} EsdPose;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null after a
 * successful call. Valid until the next call on the same thread.
 */
const char *esd_last_error(void);

/**
 * # Safety
 * `s` must be null or a string returned by this library and not yet freed.
 */
void esd_string_free(char *s);

/**
 * Procedurally generates a scene with the default size and object ranges.
 *
 * # Safety
 * `out_scene` must be a valid pointer to writable storage for one handle.
 */
enum EsdStatus esd_scene_generate(enum EsdRoomType room,
                                  uint64_t seed,
                                  struct EsdScene **out_scene);

/**
 * # Safety
 * `json` must be a NUL-terminated string; `out_scene` must be writable.
 */
enum EsdStatus esd_scene_from_json(const char *json, struct EsdScene **out_scene);

/**
 * # Safety
 * `scene` must be a live handle; `out_json` must be writable.
 */
enum EsdStatus esd_scene_to_json(const struct EsdScene *scene, char **out_json);

/**
 * # Safety
 * `scene` must be null or a handle not yet freed.
 */
void esd_scene_free(struct EsdScene *scene);

/**
 * # Safety
 * `scene` must be a live handle; `width` and `height` must be writable.
 */
enum EsdStatus esd_scene_size(const struct EsdScene *scene, size_t *width, size_t *height);

/**
 * Writes 72 feasibility flags indexed by `move_slot * 8 + rotation`.
 *
 * # Safety
 * `scene` must be a live handle and `mask` must point to `len` writable bools.
 */
enum EsdStatus esd_scene_feasible_actions(const struct EsdScene *scene,
                                          struct EsdPose pose,
                                          bool *mask,
                                          size_t len);

/**
 * # Safety
 * `scene` must be a live handle; `out_pose` must be writable.
 */
enum EsdStatus esd_scene_apply_action(const struct EsdScene *scene,
                                      struct EsdPose pose,
                                      uint32_t action,
                                      struct EsdPose *out_pose);

/**
 * ASCII map of the scene.
 *
 * # Safety
 * `scene` must be a live handle; `out_text` must be writable.
 */
enum EsdStatus esd_scene_render(const struct EsdScene *scene, char **out_text);

/**
 * # Safety
 * `out_lexicon` must be writable.
 */
enum EsdStatus esd_lexicon_build(uint64_t seed, struct EsdLexicon **out_lexicon);

/**
 * # Safety
 * `lexicon` must be null or a handle not yet freed.
 */
void esd_lexicon_free(struct EsdLexicon *lexicon);

/**
 * Observation at `pose` with default sensor noise, as JSON.
 *
 * # Safety
 * `scene` and `lexicon` must be live handles; `out_json` must be writable.
 */
enum EsdStatus esd_observe(const struct EsdScene *scene,
                           const struct EsdLexicon *lexicon,
                           struct EsdPose pose,
                           uint64_t episode_seed,
                           char **out_json);

/**
 * Caption-mode viewpoint score of the observation at `pose`.
 *
 * # Safety
 * `scene` and `lexicon` must be live handles; `out_score` must be writable.
 */
enum EsdStatus esd_viewpoint_score(const struct EsdScene *scene,
                                   const struct EsdLexicon *lexicon,
                                   struct EsdPose pose,
                                   uint64_t episode_seed,
                                   double lambda,
                                   double *out_score);

/**
 * Maximum-weight matching of a row-major `rows x cols` non-negative matrix.
 * `assignment[i]` receives the matched column of row `i`, or -1.
 *
 * # Safety
 * `weights` must point to `rows * cols` doubles, `assignment` to `rows`
 * writable entries, and `out_total` must be writable.
 */
enum EsdStatus esd_hungarian(const double *weights,
                             size_t rows,
                             size_t cols,
                             ptrdiff_t *assignment,
                             double *out_total);

/**
 * Freshly initialized policy sized for `lexicon`.
 *
 * # Safety
 * `lexicon` must be a live handle; `out_policy` must be writable.
 */
enum EsdStatus esd_policy_init(const struct EsdLexicon *lexicon,
                               size_t hidden,
                               uint64_t seed,
                               struct EsdPolicy **out_policy);

/**
 * Loads a JSON checkpoint.
 *
 * # Safety
 * `json` must be a NUL-terminated string; `out_policy` must be writable.
 */
enum EsdStatus esd_policy_from_json(const char *json, struct EsdPolicy **out_policy);

/**
 * # Safety
 * `policy` must be a live handle; `out_json` must be writable.
 */
enum EsdStatus esd_policy_to_json(const struct EsdPolicy *policy, char **out_json);

/**
 * # Safety
 * `policy` must be null or a handle not yet freed.
 */
void esd_policy_free(struct EsdPolicy *policy);

/**
 * Runs one episode (horizon 40) and returns it as JSON.
 *
 * # Safety
 * All handles must be live; `out_json` must be writable.
 */
enum EsdStatus esd_policy_rollout(const struct EsdPolicy *policy,
                                  const struct EsdScene *scene,
                                  const struct EsdLexicon *lexicon,
                                  struct EsdPose start,
                                  uint64_t episode_seed,
                                  bool greedy,
                                  char **out_json);

/**
 * BLEU-n of a whitespace-tokenized candidate against newline-separated references.
 *
 * # Safety
 * `candidate` and `references` must be NUL-terminated; `out_score` writable.
 */
enum EsdStatus esd_bleu(const char *candidate,
                        const char *references,
                        uint32_t n,
                        double *out_score);

/**
 * ROUGE-L of a candidate against newline-separated references.
 *
 * # Safety
 * `candidate` and `references` must be NUL-terminated; `out_score` writable.
 */
enum EsdStatus esd_rouge_l(const char *candidate, const char *references, double *out_score);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ESD_H */
