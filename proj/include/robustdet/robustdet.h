/* SPDX-License-Identifier: Apache-2.0 */
#ifndef ROBUSTDET_ROBUSTDET_H
#define ROBUSTDET_ROBUSTDET_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(_WIN32)
#define RD_API __declspec(dllexport)
#else
#define RD_API __attribute__((visibility("default")))
#endif

typedef enum rd_status {
  RD_OK = 0,
  RD_ERR_PARAMETER = 1,
  RD_ERR_IO = 2,
  RD_ERR_VALIDATION = 3,
  RD_ERR_ATTACK_INAPPLICABLE = 4,
  RD_ERR_NUMERIC = 5,
  RD_ERR_VERSION = 6,
  RD_ERR_INTEGRITY = 7,
  RD_ERR_UNDEFINED_RATIO = 8,
  RD_ERR_INTERNAL = 9
} rd_status;

/* Message of the last failure on the calling thread; "" after success. */
RD_API const char* rd_last_error(void);
RD_API const char* rd_status_name(rd_status status);

/* Strings returned through char** out-parameters are owned by the caller. */
RD_API void rd_string_free(char* s);

typedef struct rd_dataset rd_dataset;
typedef struct rd_model rd_model;

/* ---- datasets ---------------------------------------------------------- */

RD_API rd_status rd_dataset_generate(int count, uint64_t seed, int height, int width,
                                     int num_classes, rd_dataset** out);
/* `annotation_path` is the annotations.jsonl file of a saved dataset. */
RD_API rd_status rd_dataset_load(const char* annotation_path, rd_dataset** out);
/* Writes images/ and annotations.jsonl under `dir`; the annotation path is
   returned through `annotation_path` when non-null. */
RD_API rd_status rd_dataset_save(const rd_dataset* ds, const char* dir, char** annotation_path);
RD_API rd_status rd_dataset_info(const rd_dataset* ds, int* size, int* height, int* width,
                                 int* num_classes);
/* Per-class object counts as JSON. */
RD_API rd_status rd_dataset_summary(const rd_dataset* ds, char** json);
RD_API void rd_dataset_free(rd_dataset* ds);

/* ---- training ---------------------------------------------------------- */

typedef struct rd_train_options {
  const char* config_text; /* flat key = value text; NULL = defaults */
  const char* variant;     /* standard | at | robustdet | robustdet-cfr; NULL keeps the config's */
  int override_seed;       /* nonzero: use `seed` instead of the config's */
  uint64_t seed;
} rd_train_options;

/* Called after every epoch; return nonzero to stop early (the last
   checkpoint stays resumable). */
typedef int (*rd_epoch_callback)(int epoch, int total_epochs, double mean_l_det, void* user);

RD_API rd_status rd_train(const rd_train_options* options, const rd_dataset* ds,
                          const char* out_dir, rd_epoch_callback callback, void* user,
                          rd_model** out);

RD_API rd_status rd_model_load(const char* checkpoint_path, rd_model** out);
RD_API rd_status rd_model_save(const rd_model* model, const char* checkpoint_path);
/* Model config and training config as JSON. */
RD_API rd_status rd_model_describe(const rd_model* model, char** json);
RD_API void rd_model_free(rd_model* model);

/* ---- attacks and evaluation --------------------------------------------- */

typedef enum rd_loss_kind { RD_LOSS_CLS = 0, RD_LOSS_LOC = 1 } rd_loss_kind;

typedef struct rd_attack_config {
  rd_loss_kind loss_kind;
  int steps;
  double eps;
  double alpha;
  int random_start;
  uint64_t seed;
} rd_attack_config;

/* PGD defaults: cls, 20 steps, eps 8, alpha 2, no random start. */
RD_API rd_attack_config rd_attack_defaults(void);

/* Attacks every image, writes adv_NNNNNN.png files and attack.json under
   `out_dir`. */
RD_API rd_status rd_attack(const rd_model* model, const rd_dataset* ds,
                           const rd_attack_config* attack, const char* out_dir, double* max_linf);

/* `attack` NULL evaluates clean images. The report is JSON; the PR curves
   are CSV. Either output pointer may be NULL. */
RD_API rd_status rd_evaluate(const rd_model* model, const rd_dataset* ds,
                             const rd_attack_config* attack, int eleven_point, double* map,
                             char** report_json, char** pr_csv);

RD_API rd_status rd_attack_sweep(const rd_model* model, const rd_dataset* ds,
                                 const rd_attack_config* attack, const int* steps, size_t n_steps,
                                 char** csv);

/* ---- diagnostics -------------------------------------------------------- */

/* Layerwise entanglement between the first `batch` clean images and their
   adversarial counterparts. */
RD_API rd_status rd_diagnose_entanglement(const rd_model* model, const rd_dataset* ds,
                                          const rd_attack_config* attack, int batch, char** json);

/* direction: clean-clean | clean-adv | adv-clean | all. The probe trains on
   images [0, batch) and evaluates on [batch, 2*batch). learning_rate <= 0
   uses the checkpoint's training rate. */
RD_API rd_status rd_diagnose_conflict(const rd_model* model, const rd_dataset* ds,
                                      const char* direction, int m, double learning_rate,
                                      const rd_attack_config* attack, int batch, char** json);

/* Histograms of retained box confidences for clean, A_cls and A_loc inputs. */
RD_API rd_status rd_diagnose_confidence(const rd_model* model, const rd_dataset* ds,
                                        const rd_attack_config* attack, double threshold,
                                        int bins, char** json);

/* ---- plots -------------------------------------------------------------- */

/* kind: pr | sweep | entanglement | confidence | conflict. `labels` may be
   NULL; one series per input file for sweep plots. */
RD_API rd_status rd_plot(const char* kind, const char* const* inputs, const char* const* labels,
                         size_t n_inputs, const char* output_png);

#ifdef __cplusplus
}
#endif

#endif
