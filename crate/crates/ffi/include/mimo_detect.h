#ifndef MIMO_DETECT_H
#define MIMO_DETECT_H

#include <stddef.h>
#include <stdint.h>

typedef enum MimoStatus {
  MIMO_STATUS_OK = 0,
  MIMO_STATUS_NULL_POINTER = 1,
  MIMO_STATUS_INVALID_ARGUMENT = 2,
  MIMO_STATUS_SINGULAR = 3,
  MIMO_STATUS_DIVERGENCE = 4,
  MIMO_STATUS_CAPACITY = 5,
  MIMO_STATUS_NUMERICAL = 6,
  MIMO_STATUS_FORMAT = 7,
  MIMO_STATUS_RANGE = 8,
  MIMO_STATUS_DEGENERATE = 9,
  MIMO_STATUS_IO = 10,
  MIMO_STATUS_PANIC = 11,
} MimoStatus;

typedef struct MimoConstellation MimoConstellation;

typedef struct MimoDetector MimoDetector;

typedef struct MimoModel MimoModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the last failure message of this thread (NUL-terminated,
 * truncated to `len`) and returns its full length in bytes.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t mimo_last_error_message(char *buf, size_t len);

/**
 * Library version as a static NUL-terminated string.
 */
const char *mimo_version(void);

/**
 * Square QAM of order 4, 16 or 64 with unit average energy.
 *
 * # Safety
 * `out` must be a valid pointer to write the handle to.
 */
enum MimoStatus mimo_constellation_new(uint32_t order, struct MimoConstellation **out);

/**
 * # Safety
 * `c` must be null or a handle from `mimo_constellation_new`, freed once.
 */
void mimo_constellation_free(struct MimoConstellation *c);

/**
 * Writes the complex point of symbol `index` to `out[0..2]`.
 *
 * # Safety
 * `c` must be a live handle and `out` must hold two doubles.
 */
enum MimoStatus mimo_constellation_point(const struct MimoConstellation *c,
                                         uint32_t index,
                                         double *out);

/**
 * Noise variance for `snr_db` on the given channel.
 *
 * # Safety
 * `h` must hold `2 * n_r * n_t` doubles and `out` must be writable.
 */
enum MimoStatus mimo_sigma2_from_snr(const double *h,
                                     size_t n_r,
                                     size_t n_t,
                                     double snr_db,
                                     double *out);

/**
 * Prepares a classical detector (`"zf"`, `"mf"`, `"mmse"`, `"vblast"`,
 * `"amp"`, `"oamp"`, `"ml"`) for channel `h`.
 *
 * # Safety
 * `name` must be a NUL-terminated string, `h` must hold `2 * n_r * n_t`
 * doubles, and `c` must be a live constellation handle.
 */
enum MimoStatus mimo_detector_new(const char *name,
                                  const double *h,
                                  size_t n_r,
                                  size_t n_t,
                                  double sigma2,
                                  const struct MimoConstellation *c,
                                  struct MimoDetector **out);

/**
 * Binds trained parameters to channel `h`.
 *
 * # Safety
 * As for `mimo_detector_new`; `model` must be a live model handle.
 */
enum MimoStatus mimo_detector_new_learned(const struct MimoModel *model,
                                          const double *h,
                                          size_t n_r,
                                          size_t n_t,
                                          double sigma2,
                                          const struct MimoConstellation *c,
                                          struct MimoDetector **out);

/**
 * Detects one received vector. `y` holds `2 * n_r` doubles, `symbols`
 * receives `n_t` indices and `soft` (optional) `2 * n_t` doubles.
 *
 * # Safety
 * Pointers must be valid for the sizes above; `soft` may be null.
 */
enum MimoStatus mimo_detector_detect(const struct MimoDetector *det,
                                     const double *y,
                                     uint32_t *symbols,
                                     double *soft);

/**
 * # Safety
 * `det` must be null or a detector handle, freed once.
 */
void mimo_detector_free(struct MimoDetector *det);

/**
 * Loads MPARM1 parameters.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` writable.
 */
enum MimoStatus mimo_model_load(const char *path, struct MimoModel **out);

/**
 * # Safety
 * `model` must be a live handle and `path` a NUL-terminated string.
 */
enum MimoStatus mimo_model_save(const struct MimoModel *model, const char *path);

/**
 * Number of unrolled layers, or 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t mimo_model_layers(const struct MimoModel *model);

/**
 * # Safety
 * `model` must be null or a model handle, freed once.
 */
void mimo_model_free(struct MimoModel *model);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MIMO_DETECT_H */
