#ifndef RMLAB_H
#define RMLAB_H

#include <stddef.h>
#include <stdint.h>
#include <stdbool.h>

typedef enum RmlabStatus {
  RMLAB_STATUS_OK = 0,
  RMLAB_STATUS_NULL_POINTER = 1,
  RMLAB_STATUS_INVALID_ARGUMENT = 2,
  RMLAB_STATUS_CONFIG = 3,
  RMLAB_STATUS_DATA = 4,
  RMLAB_STATUS_NUMERIC = 5,
  RMLAB_STATUS_IO = 6,
  /*
   The statistic is undefined for this input; the out value is NaN.
   */
  RMLAB_STATUS_DEGENERATE = 7,
  RMLAB_STATUS_PANIC = 8,
} RmlabStatus;

/*
 A generated corpus with consensus labels.
 */
typedef struct RmlabCorpus RmlabCorpus;

/*
 A loaded reward model.
 */
typedef struct RmlabModel RmlabModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Library version as a static NUL-terminated string.
 */
const char *rmlab_version(void);

/*
 Message of the last failed call on this thread; empty after a success.
 Valid until the next call into the library from this thread.
 */
const char *rmlab_last_error(void);

/*
 `-log σ(r_win - r_lose - margin)`.

 # Safety
 `out` must be valid for writes.
 */
enum RmlabStatus rmlab_bt_loss(double r_win, double r_lose, double margin, double *out);

/*
 Win-tie loss; `tie` selects the tie branch.

 # Safety
 `out` must be valid for writes.
 */
enum RmlabStatus rmlab_bt_wt_loss(double r_i, double r_j, bool tie, double *out);

/*
 Three-outcome loss; `outcome` is 0 (i wins), 1 (j wins) or 2 (tie).

 # Safety
 `out` must be valid for writes.
 */
enum RmlabStatus rmlab_btt_loss(double r_i,
                                double r_j,
                                uint32_t outcome,
                                double theta,
                                double *out);

/*
 Cross-entropy of `σ(r)` against a pass/fail label.

 # Safety
 `out` must be valid for writes.
 */
enum RmlabStatus rmlab_bce_penalty(double r, bool pass, double *out);

/*
 Standardize `n` rewards into `out` (also length `n`).

 # Safety
 `rewards` must be readable and `out` writable for `n` values.
 */
enum RmlabStatus rmlab_group_advantage(const double *rewards,
                                       size_t n,
                                       double epsilon,
                                       double *out);

/*
 Fleiss' kappa from a row-major `items × categories` count matrix.

 # Safety
 `counts` must hold `items * categories` values; `out` must be writable.
 */
enum RmlabStatus rmlab_fleiss_kappa(const uint32_t *counts,
                                    size_t items,
                                    size_t categories,
                                    double *out);

/*
 Nominal Krippendorff's alpha from a row-major `annotators × items` matrix;
 negative entries are missing.

 # Safety
 `ratings` must hold `annotators * items` values; `out` must be writable.
 */
enum RmlabStatus rmlab_krippendorff_alpha(const int32_t *ratings,
                                          size_t annotators,
                                          size_t items,
                                          double *out);

/*
 Mean share of agreeing rater pairs; same layout as the alpha input.

 # Safety
 `ratings` must hold `annotators * items` values; `out` must be writable.
 */
enum RmlabStatus rmlab_raw_agreement(const int32_t *ratings,
                                     size_t annotators,
                                     size_t items,
                                     double *out);

/*
 Load a checkpoint written by `rmlab train`.

 # Safety
 `path` must be a NUL-terminated string; `out` must be writable.
 */
enum RmlabStatus rmlab_model_load(const char *path, struct RmlabModel **out);

/*
 # Safety
 `model` must come from [`rmlab_model_load`] and not be used afterwards.
 */
void rmlab_model_free(struct RmlabModel *model);

/*
 Score `n` samples given as a row-major `n × feature_len` matrix plus one
 shortcut flag each.

 # Safety
 Buffers must hold the stated number of values.
 */
enum RmlabStatus rmlab_model_score(const struct RmlabModel *model,
                                   const double *features,
                                   size_t n,
                                   size_t feature_len,
                                   const bool *shortcut,
                                   double *out);

/*
 Generate a corpus from a JSON configuration; an empty string uses the
 defaults.

 # Safety
 `config_json` must be a NUL-terminated string; `out` must be writable.
 */
enum RmlabStatus rmlab_corpus_generate(const char *config_json, struct RmlabCorpus **out);

/*
 # Safety
 `corpus` must come from [`rmlab_corpus_generate`] and not be used afterwards.
 */
void rmlab_corpus_free(struct RmlabCorpus *corpus);

/*
 Number of samples and of consensus passes.

 # Safety
 `corpus` must be a live handle; out pointers must be writable.
 */
enum RmlabStatus rmlab_corpus_counts(const struct RmlabCorpus *corpus,
                                     size_t *samples,
                                     size_t *passes);

/*
 Agreement of the simulated annotation panel.

 # Safety
 `corpus` must be a live handle; out pointers must be writable.
 */
enum RmlabStatus rmlab_corpus_iaa(const struct RmlabCorpus *corpus,
                                  double *alpha,
                                  double *kappa,
                                  double *agreement);

/*
 Write `samples.jsonl` and `annotations.jsonl` into `dir`.

 # Safety
 `corpus` must be a live handle; `dir` a NUL-terminated string.
 */
enum RmlabStatus rmlab_corpus_write(const struct RmlabCorpus *corpus, const char *dir);

/*
 Score every sample of a corpus, in corpus order, into `out` of length `n`.

 # Safety
 Handles must be live; `out` must hold `n` values.
 */
enum RmlabStatus rmlab_model_score_corpus(const struct RmlabModel *model,
                                          const struct RmlabCorpus *corpus,
                                          double *out,
                                          size_t n);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RMLAB_H */
