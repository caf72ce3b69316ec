/* lesdet: layer-wise energy separation detector for adversarial examples.
 *
 * C interface over the C++ core. Every function returns a lesdet_status;
 * on failure a message for the calling thread is available from
 * lesdet_last_error() until the next call on that thread. Handles are opaque
 * and owned by the caller, who releases them with the matching *_free.
 */
#ifndef LESDET_LESDET_H
#define LESDET_LESDET_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define LESDET_API __declspec(dllexport)
#else
#define LESDET_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum lesdet_status {
  LESDET_OK = 0,
  LESDET_ERR_INTERNAL = 1,         /* unexpected failure inside the library */
  LESDET_ERR_INVALID_ARGUMENT = 2, /* bad argument value, including NULL handles */
  LESDET_ERR_CONFIG = 3,           /* config does not match the schema */
  LESDET_ERR_IO = 4,               /* missing or unreadable/unwritable file */
  LESDET_ERR_FORMAT = 5,           /* corrupt or foreign artifact file */
  LESDET_ERR_SHAPE = 6,            /* tensor or dataset shape mismatch */
  LESDET_ERR_MISMATCH = 7,         /* artifacts from different datasets combined */
  LESDET_ERR_STATE = 8             /* operation not valid in the current state */
} lesdet_status;

typedef struct lesdet_experiment lesdet_experiment;
typedef struct lesdet_detector lesdet_detector;

typedef void (*lesdet_log_fn)(const char* message, void* user);

LESDET_API const char* lesdet_version(void);
LESDET_API const char* lesdet_status_name(lesdet_status s);
/* Message of the last failed call on this thread ("" if none). */
LESDET_API const char* lesdet_last_error(void);

/* ---- experiments -------------------------------------------------------- */

/* Loads a YAML experiment config. `seed` replaces the config's top-level seed
 * when `override_seed` is nonzero. Dataset paths resolve against `data_root`,
 * or against $LESDET_DATA_ROOT when it is NULL. Outputs go under `out_dir`. */
LESDET_API lesdet_status lesdet_experiment_open(const char* config_path, int override_seed,
                                                uint64_t seed, const char* out_dir,
                                                const char* data_root, lesdet_experiment** out);
LESDET_API void lesdet_experiment_free(lesdet_experiment* e);
LESDET_API void lesdet_experiment_set_log(lesdet_experiment* e, lesdet_log_fn fn, void* user);

/* Short config hash embedded in every artifact and report. The returned
 * string lives as long as the handle. */
LESDET_API const char* lesdet_experiment_config_hash(const lesdet_experiment* e);
/* Canonical JSON form of the effective config; lives as long as the handle. */
LESDET_API const char* lesdet_experiment_config_json(const lesdet_experiment* e);

/* `name` may be NULL or "" to train every substitute. */
LESDET_API lesdet_status lesdet_train_substitute(lesdet_experiment* e, const char* name);
LESDET_API lesdet_status lesdet_gen_attacks(lesdet_experiment* e);
LESDET_API lesdet_status lesdet_train_detector(lesdet_experiment* e);
LESDET_API lesdet_status lesdet_calibrate(lesdet_experiment* e);
/* suite: "grid", "limited-data", "lambda" or "width"; NULL means "grid". */
LESDET_API lesdet_status lesdet_evaluate(lesdet_experiment* e, const char* suite);
LESDET_API lesdet_status lesdet_transfer(lesdet_experiment* e);
LESDET_API lesdet_status lesdet_lipschitz(lesdet_experiment* e);
/* Joins `n` report files (all suite reports present when n == 0). */
LESDET_API lesdet_status lesdet_report(lesdet_experiment* e, const char* const* inputs, size_t n);

/* ---- detectors ---------------------------------------------------------- */

LESDET_API lesdet_status lesdet_detector_load(const char* artifact_path, lesdet_detector** out);
LESDET_API void lesdet_detector_free(lesdet_detector* d);
LESDET_API lesdet_status lesdet_detector_threshold(const lesdet_detector* d, double* threshold);
/* Expected input shape, channels x height x width. */
LESDET_API lesdet_status lesdet_detector_input_shape(const lesdet_detector* d, size_t* c, size_t* h,
                                                     size_t* w);
/* Scores one image in [0,1], laid out channel-major (c, h, w). Sets
 * *adversarial to 1 when the energy is strictly above the threshold. */
LESDET_API lesdet_status lesdet_detector_score(const lesdet_detector* d, const float* image,
                                               size_t c, size_t h, size_t w, double* energy,
                                               int* adversarial);

/* ---- metrics ------------------------------------------------------------ */

/* Probability that an adversarial score exceeds a natural one, ties 1/2. */
LESDET_API lesdet_status lesdet_roc_auc(const double* natural, size_t n_natural,
                                        const double* adversarial, size_t n_adversarial,
                                        double* auc);

#ifdef __cplusplus
}
#endif

#endif /* LESDET_LESDET_H */
