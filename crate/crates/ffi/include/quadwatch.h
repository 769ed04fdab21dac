#ifndef QUADWATCH_H
#define QUADWATCH_H

/* Generated by cbindgen from crates/ffi/src. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum QwStatus {
  QW_STATUS_OK = 0,
  QW_STATUS_NULL_POINTER = 1,
  QW_STATUS_INVALID_ARGUMENT = 2,
  QW_STATUS_IMAGE = 3,
  QW_STATUS_CONFIG = 4,
  QW_STATUS_PIPELINE = 5,
  QW_STATUS_CLASSIFY = 6,
  QW_STATUS_WIRE = 7,
  QW_STATUS_IO = 8,
  QW_STATUS_BUFFER_TOO_SMALL = 9,
  QW_STATUS_PANIC = 10,
} QwStatus;

typedef enum QwMode {
  QW_MODE_DETECT = 0,
  QW_MODE_DETECT_TRACK = 1,
  QW_MODE_CLASSIFY = 2,
  QW_MODE_FULL = 3,
} QwMode;

/**
 * Opaque pipeline session.
 */
typedef struct QwSession QwSession;

typedef struct QwLabel {
  uint8_t roi;
  uint8_t class_id;
  float confidence;
} QwLabel;

/**
 * One frame's verdict. Bit `i` of `occupied` is ROI `i`; `latched` is a
 * subset of `occupied`. The first `label_count` entries of `labels` are
 * valid, in ascending ROI order.
 */
typedef struct QwVerdict {
  uint64_t frame_index;
  uint16_t occupied;
  uint16_t latched;
  uint8_t label_count;
  struct QwLabel labels[12];
} QwVerdict;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Last error message on this thread, or NULL. Valid until the next failing
 * call on the same thread.
 */
const char *qw_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *qw_version(void);

/**
 * Creates a session for `width` x `height` quad frames.
 *
 * `roi_json`, `weights_path`, `detect_json` and `track_json` may be NULL.
 * Without `roi_json` the built-in layout is used. The JSON parameter
 * objects override individual fields of the defaults.
 *
 * # Safety
 * String arguments must be NULL or NUL-terminated; `out` must be writable.
 */
enum QwStatus qw_session_new(size_t width,
                             size_t height,
                             enum QwMode mode,
                             const char *roi_json,
                             const char *weights_path,
                             const char *detect_json,
                             const char *track_json,
                             struct QwSession **out);

/**
 * Frees a session. NULL is ignored.
 *
 * # Safety
 * `session` must come from [`qw_session_new`] and not be used afterwards.
 */
void qw_session_free(struct QwSession *session);

/**
 * Pushes one 8-bit grayscale frame (`stride` bytes per row). The first
 * frame of a session produces no verdict; `has_verdict` reports whether
 * `out` was written.
 *
 * # Safety
 * `pixels` must hold `stride * height` bytes; `out` and `has_verdict`
 * must be writable.
 */
enum QwStatus qw_session_push(struct QwSession *session,
                              const uint8_t *pixels,
                              size_t width,
                              size_t height,
                              size_t stride,
                              uint64_t frame_index,
                              uint64_t timestamp_us,
                              struct QwVerdict *out,
                              bool *has_verdict);

/**
 * Number of classifier classes (0 without a classifier).
 *
 * # Safety
 * `session` must be a live handle or NULL.
 */
size_t qw_session_class_count(const struct QwSession *session);

/**
 * Name of class `class_id`, or NULL. Owned by the session.
 *
 * # Safety
 * `session` must be a live handle or NULL.
 */
const char *qw_session_class_name(const struct QwSession *session, size_t class_id);

/**
 * Encodes a verdict as a QWD1 message. `written` receives the message
 * length; when `cap` is too small nothing is written to `buf`, the status
 * is `BufferTooSmall` and `written` holds the required size.
 *
 * # Safety
 * `verdict` and `written` must be valid; `buf` must hold `cap` bytes.
 */
enum QwStatus qw_wire_encode(const struct QwVerdict *verdict,
                             uint8_t *buf,
                             size_t cap,
                             size_t *written);

/**
 * Decodes one complete QWD1 message.
 *
 * # Safety
 * `buf` must hold `len` bytes; `out` must be writable.
 */
enum QwStatus qw_wire_decode(const uint8_t *buf, size_t len, struct QwVerdict *out);

/**
 * Multiply-accumulates of a standard `d_k` x `d_k` convolution producing
 * `n_out` maps of side `d_f` from `n_in` channels.
 */
uint64_t qw_flops_standard(size_t d_k, size_t n_in, size_t n_out, size_t d_f);

/**
 * Multiply-accumulates of the depthwise plus pointwise factorisation.
 */
uint64_t qw_flops_separable(size_t d_k, size_t n_in, size_t n_out, size_t d_f);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* QUADWATCH_H */
