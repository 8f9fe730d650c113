/* C interface for the padbench diagnostics library.
 *
 * Every fallible function returns an error code (PAD_OK on success) and
 * writes its result through an out-parameter. On failure, a thread-local
 * message is available from pad_last_error_message(); release it with
 * pad_string_free().
 */

#ifndef PADBENCH_H
#define PADBENCH_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

/* Error codes. */
#define PAD_OK 0
#define PAD_ERR_NULL_POINTER 1
#define PAD_ERR_UTF8 2
#define PAD_ERR_INVALID_ARGUMENT 3
#define PAD_ERR_IO 4
#define PAD_ERR_NUMERICAL 5
#define PAD_ERR_UNKNOWN_VARIABLE 6

/* Statistic selectors for pad_summarize. */
#define PAD_STAT_MEAN 0
#define PAD_STAT_SD 1
#define PAD_STAT_QUANTILE 2
#define PAD_STAT_PROB_BELOW 3

/* Opaque handle over a (chain, draw, variable) tensor. */
typedef struct PadDraws PadDraws;

/* Last error message for this thread, or NULL. Caller frees the string with
 * pad_string_free. */
char *pad_last_error_message(void);
void pad_string_free(char *s);

/* Load draws from a CSV file with header `chain,draw,<var1>,...`. */
int pad_draws_read_csv(const char *path, PadDraws **out);

/* Build a tensor from a chain-major buffer of
 * n_chains * draws_per_chain * n_variables doubles. */
int pad_draws_new(size_t n_chains, size_t draws_per_chain, size_t n_variables,
                  const char *const *names, const double *values,
                  PadDraws **out);

void pad_draws_free(PadDraws *handle);

int pad_draws_chain_count(const PadDraws *handle, size_t *out);
int pad_draws_per_chain(const PadDraws *handle, size_t *out);
int pad_draws_variable_count(const PadDraws *handle, size_t *out);

/* Convergence diagnostics. Pass rank_normal != 0 to rank-normalize first. */
int pad_split_rhat(const PadDraws *handle, const char *variable,
                   int rank_normal, double *out);
int pad_ess(const PadDraws *handle, const char *variable, int rank_normal,
            double *out);
int pad_mcse_mean(const PadDraws *handle, const char *variable, double *out);

/* Pooled posterior summary. `param` is the quantile probability or the
 * probability-below threshold, ignored for mean and sd. */
int pad_summarize(const PadDraws *handle, const char *variable, int stat_kind,
                  double param, double *out);

/* Calibration rank: number of draws at or above the truth. */
int pad_rank_statistic(double truth, const double *draws, size_t len,
                       uint32_t *out);

/* Lyapunov exponent of the logistic map y' = rho * y * (1 - y). */
int pad_lyapunov_logistic(double rho, double y0, size_t t_steps,
                          size_t burn_in, double *out);

#ifdef __cplusplus
}
#endif

#endif /* PADBENCH_H */
