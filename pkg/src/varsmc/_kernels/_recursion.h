#ifndef VARSMC_RECURSION_H
#define VARSMC_RECURSION_H

/* Hot loops of the recurrent VaR recursion, vectorized across particles.
 * theta is row-major (m, 13); h0/hout are row-major (m, 3).
 * Returns 0 on success, -1 on allocation failure. */

int rnnhar_batch_loss(long m, const double *theta,
                      const double *rvd, const double *rvw, const double *rvm,
                      const double *y, long t_start, long t_end, double alpha,
                      const double *h0, double *loss, double *hout);

int rnnhar_batch_step(long m, const double *theta,
                      double rvd_t, double rvw_t, double rvm_t,
                      const double *h, double *hout, double *q);

#endif
