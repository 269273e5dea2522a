/* Batch kernels for the recurrent VaR recursion.
 *
 * The time recursion is sequential, so the vectorizable axis is the
 * particle index: parameters are transposed into per-coefficient arrays
 * and every inner loop runs branch-free across particles. tanh is computed
 * through exp (declared simd so the compiler can use the vector math
 * library): tanh(x) = copysign((1 - e)/(1 + e), x) with e = exp(-2|x|).
 * Absolute error stays at a few ulp, and saturation at |x| ~ 20 matches
 * libm tanh exactly.
 */

#include <math.h>
#include <stdlib.h>

#include "_recursion.h"

#pragma omp declare simd notinbranch
extern double exp(double);

int rnnhar_batch_loss(long m, const double *theta,
                      const double *rvd, const double *rvw, const double *rvm,
                      const double *y, long t_start, long t_end, double alpha,
                      const double *h0, double *loss, double *hout)
{
    double *buf = (double *)malloc((size_t)m * 16 * sizeof(double));
    if (!buf)
        return -1;
    double *b0 = buf, *b1 = buf + m, *b2 = buf + 2 * m, *b3 = buf + 3 * m;
    double *a0d = buf + 4 * m, *a1d = buf + 5 * m, *a2d = buf + 6 * m;
    double *a0w = buf + 7 * m, *a1w = buf + 8 * m, *a2w = buf + 9 * m;
    double *a0m = buf + 10 * m, *a1m = buf + 11 * m, *a2m = buf + 12 * m;
    double *hd = buf + 13 * m, *hw = buf + 14 * m, *hm = buf + 15 * m;

    for (long j = 0; j < m; j++) {
        const double *row = theta + 13 * j;
        b0[j] = row[0]; b1[j] = row[1]; b2[j] = row[2]; b3[j] = row[3];
        a0d[j] = row[4]; a1d[j] = row[5]; a2d[j] = row[6];
        a0w[j] = row[7]; a1w[j] = row[8]; a2w[j] = row[9];
        a0m[j] = row[10]; a1m[j] = row[11]; a2m[j] = row[12];
        hd[j] = h0[3 * j]; hw[j] = h0[3 * j + 1]; hm[j] = h0[3 * j + 2];
        loss[j] = 0.0;
    }

    for (long t = t_start; t < t_end; t++) {
        const double rd = rvd[t - 1], rw = rvw[t - 1], rm = rvm[t - 1];
        const double yt = y[t];
#pragma omp simd
        for (long j = 0; j < m; j++) {
            double xd = a0d[j] + a1d[j] * rd + a2d[j] * hd[j];
            double xw = a0w[j] + a1w[j] * rw + a2w[j] * hw[j];
            double xm = a0m[j] + a1m[j] * rm + a2m[j] * hm[j];
            double ed = exp(-2.0 * fabs(xd));
            double ew = exp(-2.0 * fabs(xw));
            double em = exp(-2.0 * fabs(xm));
            hd[j] = copysign((1.0 - ed) / (1.0 + ed), xd);
            hw[j] = copysign((1.0 - ew) / (1.0 + ew), xw);
            hm[j] = copysign((1.0 - em) / (1.0 + em), xm);
            double q = b0[j] + b1[j] * hd[j] + b2[j] * hw[j] + b3[j] * hm[j];
            double e = yt - q;
            /* (y - q)(alpha - 1[y < q]) == alpha*e - min(e, 0) */
            loss[j] += alpha * e - 0.5 * (e - fabs(e));
        }
    }

    for (long j = 0; j < m; j++) {
        hout[3 * j] = hd[j];
        hout[3 * j + 1] = hw[j];
        hout[3 * j + 2] = hm[j];
    }
    free(buf);
    return 0;
}

int rnnhar_batch_step(long m, const double *theta,
                      double rvd_t, double rvw_t, double rvm_t,
                      const double *h, double *hout, double *q)
{
    for (long j = 0; j < m; j++) {
        const double *row = theta + 13 * j;
        double xd = row[4] + row[5] * rvd_t + row[6] * h[3 * j];
        double xw = row[7] + row[8] * rvw_t + row[9] * h[3 * j + 1];
        double xm = row[10] + row[11] * rvm_t + row[12] * h[3 * j + 2];
        double ed = exp(-2.0 * fabs(xd));
        double ew = exp(-2.0 * fabs(xw));
        double em = exp(-2.0 * fabs(xm));
        double hdj = copysign((1.0 - ed) / (1.0 + ed), xd);
        double hwj = copysign((1.0 - ew) / (1.0 + ew), xw);
        double hmj = copysign((1.0 - em) / (1.0 + em), xm);
        hout[3 * j] = hdj;
        hout[3 * j + 1] = hwj;
        hout[3 * j + 2] = hmj;
        q[j] = row[0] + row[1] * hdj + row[2] * hwj + row[3] * hmj;
    }
    return 0;
}
