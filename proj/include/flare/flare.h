#ifndef FLARE_FLARE_H
#define FLARE_FLARE_H

/* C interface to the flare purification engine.
 *
 * Every fallible call returns a flare_status. On failure the thread-local
 * message from flare_last_error() names the cause. Handles are opaque and
 * owned by the caller, who releases them with the matching *_free call.
 */

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#  if defined(FLARE_BUILDING_LIBRARY)
#    define FLARE_API __declspec(dllexport)
#  else
#    define FLARE_API __declspec(dllimport)
#  endif
#else
#  define FLARE_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum flare_status {
  FLARE_OK = 0,
  FLARE_MISSING_FILE = 1,
  FLARE_MAGIC_MISMATCH = 2,
  FLARE_SHAPE_MISMATCH = 3,
  FLARE_NON_POSITIVE_VARIANCE = 4,
  FLARE_NON_FINITE_VALUE = 5,
  FLARE_INVALID_MANIFEST = 6,
  FLARE_IO_FAILURE = 7,
  FLARE_INVALID_SPEC = 8,
  FLARE_TRUNCATION_OUT_OF_RANGE = 9,
  FLARE_EMPTY_SPATIAL_EXTENT = 10,
  FLARE_K_TOO_LARGE = 11,
  FLARE_MIN_PTS_TOO_LARGE = 12,
  FLARE_UNKNOWN_CLUSTER = 13,
  FLARE_LENGTH_MISMATCH = 14,
  FLARE_INVALID_ARGUMENT = 15,
  FLARE_MISSING_ARTIFACT = 16,
  FLARE_INTERNAL_ERROR = 99
} flare_status;

typedef enum flare_align {
  FLARE_ALIGN_DENSITY = 0,    /* exp(-(a-mu)^2 / (2 var)) */
  FLARE_ALIGN_LITERAL_EQ2 = 1 /* printed form, kept for comparison */
} flare_align;

typedef struct flare_dump flare_dump;
typedef struct flare_report flare_report;

typedef struct flare_config {
  double xi;
  uint32_t depth;
  uint32_t dims;
  uint32_t neighbors;
  double min_dist;
  uint32_t epochs;
  double negative_sample_rate;
  double learning_rate;
  uint32_t min_pts;
  uint32_t min_cluster_size; /* 0 = max(ceil(0.01 N), 10) */
  flare_align align;
  int deterministic;
  uint32_t threads;
  uint64_t seed;
} flare_config;

typedef struct flare_synth_params {
  uint64_t samples;
  const uint32_t* channels; /* per layer; NULL selects the default four layers of 16 */
  size_t layer_count;
  uint32_t height;
  uint32_t width;
  uint32_t classes;
  uint32_t target_label;
  double poison_rate;
  double benign_spread;
  double poison_spread;
  double trigger_level;
  uint32_t poison_channels;
  uint32_t staged_layers;
  double class_separation;
} flare_synth_params;

FLARE_API const char* flare_version(void);
FLARE_API const char* flare_status_name(flare_status status);
/* Message of the most recent failure on this thread, "" if none. */
FLARE_API const char* flare_last_error(void);

FLARE_API void flare_config_init(flare_config* config);
FLARE_API void flare_synth_params_init(flare_synth_params* params);

FLARE_API flare_status flare_synth(const flare_synth_params* params, uint64_t seed, const char* dir);

FLARE_API flare_status flare_dump_open(const char* dir, flare_dump** out);
FLARE_API void flare_dump_free(flare_dump* dump);
FLARE_API uint64_t flare_dump_sample_count(const flare_dump* dump);
FLARE_API size_t flare_dump_layer_count(const flare_dump* dump);
FLARE_API uint32_t flare_dump_class_count(const flare_dump* dump);
FLARE_API int flare_dump_has_truth(const flare_dump* dump);

FLARE_API flare_status flare_detect(const flare_dump* dump, const flare_config* config,
                                    flare_report** out);

FLARE_API flare_status flare_report_read(const char* path, flare_report** out);
FLARE_API flare_status flare_report_write(const flare_report* report, const char* path);
FLARE_API void flare_report_free(flare_report* report);
FLARE_API uint64_t flare_report_sample_count(const flare_report* report);
FLARE_API size_t flare_report_chosen_k(const flare_report* report);
FLARE_API int flare_report_used_fallback(const flare_report* report);
FLARE_API int flare_report_guard_triggered(const flare_report* report);
FLARE_API size_t flare_report_poisoned_count(const flare_report* report);
/* Copies up to `capacity` ids (ascending) and returns the total count. */
FLARE_API size_t flare_report_poisoned_ids(const flare_report* report, uint32_t* ids, size_t capacity);
/* FLARE_MISSING_ARTIFACT when the report carries no ground-truth metrics. */
FLARE_API flare_status flare_report_metrics(const flare_report* report, double* tpr, double* fpr);
FLARE_API flare_status flare_report_config(const flare_report* report, flare_config* config);

/* Scores a report's poisoned set against a dump's truth flags. */
FLARE_API flare_status flare_evaluate(const flare_report* report, const flare_dump* dump,
                                      double* tpr, double* fpr);

/* Reruns detection on `dump` with the report's configuration (or `config`
 * when no report is given) and writes embedding.csv (x, y, truth_flag),
 * embedding.fltd, condensed_tree.json and representations.fltd into out_dir. */
FLARE_API flare_status flare_inspect(const char* dump_dir, const char* report_path,
                                     const flare_config* config, const char* out_dir);

/* Opens and fully validates a dump, discarding the result. */
FLARE_API flare_status flare_validate(const char* dir);

#ifdef __cplusplus
}
#endif

#endif /* FLARE_FLARE_H */
