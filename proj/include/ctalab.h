/* C API for the cta-lab computational laboratory.
 *
 * The library runs boundary-determination experiments for semilinear
 * elliptic problems on product manifolds [0,1] x M0: Gaussian-beam
 * quasimodes, linearized-equation hierarchies, direction-vector schemes,
 * stationary-phase recovery, and the supporting discrete solvers.
 *
 * All state lives behind the opaque ctl_experiment handle; every call
 * returns a status code and the last error message is retrievable from the
 * handle. Status values double as process exit codes for CLI use.
 */
#ifndef CTALAB_H
#define CTALAB_H

#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum ctl_status {
  CTL_OK = 0,
  CTL_ERROR_USAGE = 1,
  CTL_ERROR_CONFIG = 2,
  CTL_ERROR_NUMERIC = 3,
  CTL_ERROR_THRESHOLD = 4
} ctl_status;

typedef struct ctl_experiment ctl_experiment;

const char* ctl_version(void);

/* Create an experiment from a config file or from config text. On failure
 * returns the status and leaves *out untouched; the error text can be read
 * with ctl_last_error(NULL). */
ctl_status ctl_experiment_create_from_file(const char* path, ctl_experiment** out);
ctl_status ctl_experiment_create_from_string(const char* text, ctl_experiment** out);
void ctl_experiment_destroy(ctl_experiment* exp);

ctl_status ctl_experiment_set_output_dir(ctl_experiment* exp, const char* dir);
ctl_status ctl_experiment_set_jobs(ctl_experiment* exp, int jobs);
ctl_status ctl_experiment_set_seed(ctl_experiment* exp, uint64_t seed);

/* Run one subcommand: quasimode, forward, linearize, identity, wkb,
 * vectors, recover, boundary, carleman, all. Artifacts are written under
 * the output directory with a manifest.json content-hash listing. */
ctl_status ctl_experiment_run(ctl_experiment* exp, const char* subcommand);

/* Last error message for the handle (or the thread-local creation error
 * when exp is NULL). Returned pointer is owned by the library. */
const char* ctl_last_error(const ctl_experiment* exp);

/* Manifest JSON of the last successful run ("" before any run). */
const char* ctl_manifest_json(const ctl_experiment* exp);

const char* ctl_known_subcommands(void);

#ifdef __cplusplus
}
#endif

#endif /* CTALAB_H */
