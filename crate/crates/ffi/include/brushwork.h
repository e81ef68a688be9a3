/* C ABI for the brushwork authorship-attribution toolkit. */

#ifndef BRUSHWORK_H
#define BRUSHWORK_H

/* Generated by cbindgen; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

#define BW_OK 0

// The conditional-entropy content gate excluded the patch.
#define BW_EXCLUDED 1

#define BW_ERR_NULL_ARGUMENT -1

#define BW_ERR_USAGE -2

#define BW_ERR_IO -3

#define BW_ERR_FORMAT -4

#define BW_ERR_NUMERIC -5

#define BW_ERR_BUFFER_TOO_SMALL -6

// A loaded classifier checkpoint. Opaque to C.
typedef struct BwModel BwModel;

// One scored patch: grid position, argmax class (0 blank, 1 human,
// 2 robot) and the softmax posterior.
typedef struct BwPatchScore {
  uint32_t x;
  uint32_t y;
  int32_t predicted_class;
  double p_blank;
  double p_human;
  double p_robot;
} BwPatchScore;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the most recent error on this thread. The pointer stays
// valid until the next failing call on the same thread.
const char *bw_last_error(void);

// Crate version as a static NUL-terminated string.
const char *bw_version(void);

// Conditional human-robot entropy of a (blank, human, robot) posterior.
// Writes the entropy in bits to `out_entropy` and returns `BW_OK`, or
// returns `BW_EXCLUDED` when `p_human + p_robot <= tau`.
//
// # Safety
// `out_entropy` must point to a writable `double`.
int32_t bw_conditional_entropy(double p_blank,
                               double p_human,
                               double p_robot,
                               double tau,
                               double *out_entropy);

// Mann-Whitney U test over two samples. Writes `min(U_a, U_b)` and the
// two-sided p-value (exact for pooled sizes up to 12, a tie- and
// continuity-corrected normal approximation beyond).
//
// # Safety
// `a` and `b` must point to `a_len` / `b_len` readable doubles; `out_u`
// and `out_p` must be writable.
int32_t bw_mann_whitney_u(const double *a,
                          uintptr_t a_len,
                          const double *b,
                          uintptr_t b_len,
                          double *out_u,
                          double *out_p);

// 256-bin LBP histogram (L1-normalized) of a grayscale patch with
// intensities in [0,1].
//
// # Safety
// `pixels` must point to `width * height` readable floats and
// `out_histogram` to 256 writable doubles.
int32_t bw_lbp_features(const float *pixels,
                        uintptr_t width,
                        uintptr_t height,
                        double *out_histogram);

// Number of extraction-grid patches for an image of the given size.
//
// # Safety
// `out_count` must point to a writable `size_t`.
int32_t bw_grid_patch_count(uintptr_t width,
                            uintptr_t height,
                            uintptr_t patch_size,
                            uintptr_t stride,
                            uintptr_t *out_count);

// Loads a checkpoint from disk into an opaque handle. Free it with
// `bw_model_free`.
//
// # Safety
// `path` must be a NUL-terminated string; `out_model` must be writable.
int32_t bw_model_load(const char *path, struct BwModel **out_model);

// Releases a model handle. Passing NULL is a no-op.
//
// # Safety
// `model` must be a pointer returned by `bw_model_load`, not yet freed.
void bw_model_free(struct BwModel *model);

// The square input edge length the model expects after patch resizing.
//
// # Safety
// `model` must be a live handle; `out_size` must be writable.
int32_t bw_model_input_size(const struct BwModel *model, uintptr_t *out_size);

// Scores every extraction-grid patch of an image file with a loaded
// model. Call with `capacity = 0` to query the patch count through
// `out_count`, then call again with a buffer at least that large.
//
// # Safety
// `model` must be a live handle, `image_path` a NUL-terminated string,
// `out_scores` writable for `capacity` entries (or NULL when `capacity`
// is 0), and `out_count` writable.
int32_t bw_classify_image(const struct BwModel *model,
                          const char *image_path,
                          uintptr_t patch_size,
                          uintptr_t stride,
                          struct BwPatchScore *out_scores,
                          uintptr_t capacity,
                          uintptr_t *out_count);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* BRUSHWORK_H */
