#ifndef PIDGIN_ADAPT_H
#define PIDGIN_ADAPT_H

/* Generated with cbindgen:0.27.0 */

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Number of sentiment classes: positive, negative, neutral.
 */
#define PA_NUM_LABELS 3

/**
 * Result of every fallible call.
 */
typedef enum {
  PA_STATUS_OK = 0,
  PA_STATUS_NULL_ARGUMENT = 1,
  PA_STATUS_INVALID_UTF8 = 2,
  PA_STATUS_IO = 3,
  PA_STATUS_INVALID_ARGUMENT = 4,
  PA_STATUS_TOKENIZER = 5,
  PA_STATUS_MODEL = 6,
  PA_STATUS_EXPERIMENT = 7,
  /**
   * The output buffer is too small; the required length was written.
   */
  PA_STATUS_BUFFER_TOO_SMALL = 8,
  PA_STATUS_PANIC = 9,
} PaStatus;

/**
 * Opaque model handle.
 */
typedef struct PaModel PaModel;

/**
 * Opaque tokenizer handle.
 */
typedef struct PaTokenizer PaTokenizer;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *pa_version(void);

/**
 * Message describing the last failure on this thread, or null. Valid until
 * the next failing call on the same thread.
 */
const char *pa_last_error_message(void);

/**
 * Releases a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void pa_string_free(char *s);

/**
 * Loads a tokenizer saved by `tokenize-train` or an experiment run.
 *
 * # Safety
 * `dir` must be a NUL-terminated string; `out` must be writable.
 */
PaStatus pa_tokenizer_load(const char *dir, PaTokenizer **out);

/**
 * # Safety
 * `tok` must come from [`pa_tokenizer_load`] and not have been freed.
 */
void pa_tokenizer_free(PaTokenizer *tok);

/**
 * # Safety
 * `tok` must be a live handle.
 */
uintptr_t pa_tokenizer_vocab_size(const PaTokenizer *tok);

/**
 * Encodes `text` without `<bos>`/`<eos>`. `*len` receives the token count;
 * when it exceeds `capacity` nothing is copied and `BUFFER_TOO_SMALL` is
 * returned, so a call with `capacity = 0` queries the size.
 *
 * # Safety
 * `ids` must have room for `capacity` values (it may be null when 0).
 */
PaStatus pa_tokenizer_encode(const PaTokenizer *tok,
                             const char *text_in,
                             uint32_t *ids,
                             uintptr_t capacity,
                             uintptr_t *len);

/**
 * # Safety
 * `ids` must point to `len` values; `out` must be writable.
 */
PaStatus pa_tokenizer_decode(const PaTokenizer *tok,
                             const uint32_t *ids,
                             uintptr_t len,
                             char **out);

/**
 * Loads a checkpoint file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
PaStatus pa_model_load(const char *path, PaModel **out);

/**
 * # Safety
 * `model` must come from [`pa_model_load`] and not have been freed.
 */
void pa_model_free(PaModel *model);

/**
 * Content hash of the model parameters (hex SHA-256).
 *
 * # Safety
 * `model` must be a live handle; `out` must be writable.
 */
PaStatus pa_model_hash(const PaModel *model, char **out);

/**
 * Translates one sentence from `src_lang` to `tgt_lang` (e.g. "eng",
 * "pcm"). `beam_size` 0 decodes greedily.
 *
 * # Safety
 * Handles must be live; strings NUL-terminated; `out` writable.
 */
PaStatus pa_model_translate(const PaModel *model,
                            const PaTokenizer *tok,
                            const char *sentence,
                            const char *src_lang,
                            const char *tgt_lang,
                            uint32_t beam_size,
                            char **out);

/**
 * Class probabilities (positive, negative, neutral) for one sentence and
 * the index of the most probable class.
 *
 * # Safety
 * `probs` must have room for [`PA_NUM_LABELS`] values; `label` may be null.
 */
PaStatus pa_model_classify(const PaModel *model,
                           const PaTokenizer *tok,
                           const char *sentence,
                           double *probs,
                           uint32_t *label);

/**
 * Corpus BLEU over `n` whitespace-tokenized hypothesis/reference pairs.
 * `add_k` > 0 enables add-k smoothing for orders 2 to 4.
 *
 * # Safety
 * `hyps` and `refs` must each point to `n` NUL-terminated strings.
 */
PaStatus pa_bleu(const char *const *hyps,
                 const char *const *refs,
                 uintptr_t n,
                 double add_k,
                 double *score);

/**
 * Macro-averaged F1 over class indices in `[0, PA_NUM_LABELS)`.
 *
 * # Safety
 * `pred` and `gold` must each point to `n` values.
 */
PaStatus pa_macro_f1(const uint32_t *pred, const uint32_t *gold, uintptr_t n, double *out);

/**
 * Maps a spelling variant to its canonical form with the built-in rules.
 *
 * # Safety
 * `token` must be NUL-terminated; `out` writable.
 */
PaStatus pa_normalize_token(const char *token, char **out);

/**
 * Runs an experiment grid file and writes its run directory.
 *
 * # Safety
 * Both arguments must be NUL-terminated strings.
 */
PaStatus pa_experiment_run(const char *grid, const char *out_dir);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PIDGIN_ADAPT_H */
