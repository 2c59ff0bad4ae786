# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled twin of ``_kernel_py.integrate``; keep the two in lockstep."""

from libc.math cimport log, pow, isfinite, M_PI


def integrate(double D, double mass, double v0, double A, double B, double n,
              double C, double eps_dot_ref, double thermal, double ise,
              double rho0, double strain_k, double inertia, double constraint,
              int eos_on, double A1, double A2, double A3,
              double dt, double t_max, double stop_v, long stride,
              double[:, ::1] out):
    cdef Py_ssize_t cap = out.shape[0]
    cdef double R = 0.5 * D
    cdef double h = 0.0, v = v0, t = 0.0, work = 0.0, F = 0.0
    cdef double area, eps, rate, rf, q, mu, acc, dh
    cdef int eroded = 0, status = 0
    cdef Py_ssize_t nrec = 0
    cdef long step = 0

    with nogil:
        while True:
            if v <= stop_v:
                status = 0
                break
            if t >= t_max:
                status = 1
                break

            if h < R:
                area = M_PI * (2.0 * R * h - h * h)
            else:
                area = M_PI * R * R
            eps = strain_k * h / D
            if eps >= ise:
                eroded = 1
                eps = ise
            rate = v / D
            rf = 1.0
            if rate > eps_dot_ref:
                rf = 1.0 + C * log(rate / eps_dot_ref)
            q = constraint * (A + B * pow(eps, n)) * rf * thermal
            F = (q + inertia * rho0 * v * v) * area
            if eos_on:
                mu = q / A1
                F += (A2 * mu * mu + A3 * mu * mu * mu) * area
            if F < 0.0:
                F = 0.0

            if step % stride == 0 and nrec < cap:
                out[nrec, 0] = t
                out[nrec, 1] = h
                out[nrec, 2] = v
                out[nrec, 3] = F
                nrec += 1

            acc = F / mass
            if v - acc * dt <= stop_v:
                dh = (v - stop_v) * (v + stop_v) / (2.0 * acc)
                h += dh
                work += F * dh
                t += (v - stop_v) / acc
                v = stop_v
                status = 0
                break
            v -= acc * dt
            h += v * dt
            work += F * v * dt
            t += dt
            step += 1
            if not (isfinite(h) and isfinite(v)):
                status = 2
                break

        if nrec < cap and status != 2:
            out[nrec, 0] = t
            out[nrec, 1] = h
            out[nrec, 2] = v
            out[nrec, 3] = F
            nrec += 1
    return h, v, t, work, eroded, nrec, status
