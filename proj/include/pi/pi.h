/* C interface to the perceptual-initialization pipeline. */
#ifndef PI_PI_H
#define PI_PI_H

#include <stdint.h>

#if defined(__GNUC__)
#define PI_API __attribute__((visibility("default")))
#else
#define PI_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

/* Status codes, also the CLI exit codes. */
typedef enum pi_status {
    PI_OK = 0,
    PI_ERR_USAGE = 1,      /* bad arguments or a missing required input */
    PI_ERR_VALIDATION = 2, /* config, input or shape validation failed */
    PI_ERR_RUNTIME = 3     /* io, file format or internal failure */
} pi_status;

typedef struct pi_session pi_session;

typedef void (*pi_log_fn)(const char* message, void* user);

PI_API pi_status pi_session_create(pi_session** out);
PI_API void pi_session_destroy(pi_session* session);

/* Message of the last failed call on this session; empty after success. */
PI_API const char* pi_last_error(const pi_session* session);
PI_API const char* pi_version(void);

/* NULL path resets to defaults. */
PI_API pi_status pi_load_config(pi_session* session, const char* path);
PI_API pi_status pi_set_seed(pi_session* session, uint64_t seed);
PI_API pi_status pi_set_fixed_clock(pi_session* session, int enabled);
PI_API pi_status pi_set_command_line(pi_session* session, const char* command_line);
PI_API pi_status pi_set_log(pi_session* session, pi_log_fn fn, void* user);

/* Writes the effective config as text into a buffer owned by the session,
   valid until the next call on it. */
PI_API pi_status pi_config_text(pi_session* session, const char** text);

PI_API pi_status pi_gen_data(pi_session* session, const char* out_dir);

/* stage: stage1 | stage2 | baseline | posthoc. data_dir and init may be NULL;
   posthoc without init is a usage error. */
PI_API pi_status pi_train(pi_session* session, const char* stage, const char* data_dir, const char* init,
                          const char* out_dir);

/* Eval CSV for a checkpoint. data_dir, when given, adds a 2AFC row from its
   validation triplets. */
PI_API pi_status pi_eval(pi_session* session, const char* checkpoint, const char* run_id, const char* data_dir,
                         const char* out_csv);

/* Points and fits CSVs from two metric CSVs. max_samples 0 means no upper bound. */
PI_API pi_status pi_fit_scaling(pi_session* session, const char* pi_metrics, const char* base_metrics, uint64_t min_samples,
                                uint64_t max_samples, const char* out_dir);

/* Markdown report; fits_csv and control_run may be NULL, out_md NULL keeps
   the text in the session (see pi_report_text). */
PI_API pi_status pi_report(pi_session* session, const char* eval_csv, const char* fits_csv, const char* ours_run,
                           const char* baseline_run, const char* control_run, const char* out_md);
PI_API const char* pi_report_text(const pi_session* session);

PI_API pi_status pi_compare(pi_session* session, const char* out_dir);

#ifdef __cplusplus
}
#endif

#endif
