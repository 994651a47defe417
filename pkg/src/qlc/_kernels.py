"""Compiled inner loop of the time-domain simulator.

One call advances the discretised loop over a block of noise draws and
accumulates batch sums.  Signal rows (in ``rows``/``vco``/``cst``) are, in
order: r, d, u2, u1 without the actuator feedthrough, e, y.
"""

import numpy as np
from numba import njit

# actuator modes
NONLINEAR = 0
QUASILINEAR = 1

# accumulated signals: e, u1, v, y
N_SIG = 4
# recorded columns: t, r, d, u2, e, u1, v, y
N_REC = 8


@njit(cache=True, nogil=True)
def run_block(x, phi, gv, gc, noise_l, z, rows, vco, cst, mode, par,
              step0, warm, batch_len, n_batches, dt,
              bsum, bsq, bnonsat, bcount, xsum, state_moments,
              rec, rec_stride, rec_start):
    """Advance ``x`` in place over ``z.shape[0]`` steps.

    ``par`` holds (alpha, beta, threshold, kv, n1, n2, m) where ``kv`` is the
    coefficient of the actuator output in u1.  Returns the number of steps
    taken, which is short of the block length only on divergence.
    """
    n = x.shape[0]
    nz = z.shape[1]
    alpha, beta, thr, kv, n1, n2, m = (par[0], par[1], par[2], par[3],
                                       par[4], par[5], par[6])
    nrec = rec.shape[0]
    xn = np.empty(n)
    sig = np.empty(6)
    for k in range(z.shape[0]):
        step = step0 + k
        for s in range(6):
            acc = cst[s]
            for j in range(n):
                acc += rows[s, j] * x[j]
            sig[s] = acc
        u2 = sig[2]
        a = sig[3]
        lo = alpha - u2
        hi = beta + u2
        if mode == NONLINEAR:
            if u2 >= thr:
                v = a / (1.0 - kv)
                if v < lo:
                    v = lo
                elif v > hi:
                    v = hi
            else:
                v = 0.0
        else:
            v = (n1 * a + n2 * u2 + m) / (1.0 - n1 * kv)
        u1 = a + kv * v
        e = sig[4] + vco[4] * v
        y = sig[5] + vco[5] * v

        if step >= warm:
            idx = (step - warm) // batch_len
            if idx < n_batches:
                bsum[idx, 0] += e
                bsum[idx, 1] += u1
                bsum[idx, 2] += v
                bsum[idx, 3] += y
                bsq[idx, 0] += e * e
                bsq[idx, 1] += u1 * u1
                bsq[idx, 2] += v * v
                bsq[idx, 3] += y * y
                bcount[idx] += 1
                if u2 >= thr and u1 > lo and u1 < hi:
                    bnonsat[idx] += 1
                if state_moments:
                    for i in range(n):
                        for j in range(n):
                            xsum[idx, i, j] += x[i] * x[j]
        if nrec > 0 and step >= rec_start and (step - rec_start) % rec_stride == 0:
            r_i = (step - rec_start) // rec_stride
            if r_i < nrec:
                rec[r_i, 0] = step * dt
                rec[r_i, 1] = sig[0]
                rec[r_i, 2] = sig[1]
                rec[r_i, 3] = u2
                rec[r_i, 4] = e
                rec[r_i, 5] = u1
                rec[r_i, 6] = v
                rec[r_i, 7] = y

        big = 0.0
        for i in range(n):
            acc = gc[i] + gv[i] * v
            for j in range(n):
                acc += phi[i, j] * x[j]
            for j in range(nz):
                acc += noise_l[i, j] * z[k, j]
            xn[i] = acc
            if abs(acc) > big:
                big = abs(acc)
        for i in range(n):
            x[i] = xn[i]
        if not big < 1e12:
            return k + 1
    return z.shape[0]
