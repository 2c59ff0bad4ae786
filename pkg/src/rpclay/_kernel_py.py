"""Pure-Python integrator; mirrors ``_kernel.pyx`` operation for operation."""

import math

ARRESTED, TIMED_OUT, NON_FINITE = 0, 1, 2


def integrate(D, mass, v0, A, B, n, C, eps_dot_ref, thermal, ise, rho0,
              strain_k, inertia, constraint, eos_on, A1, A2, A3,
              dt, t_max, stop_v, stride, out):
    """Advance the lumped indenter until arrest or ``t_max``.

    All arguments are SI. ``out`` is a float64 (capacity, 4) array receiving
    (t, h, v, F) rows. Returns (h, v, t, work, eroded, nrec, status).
    """
    cap = out.shape[0]
    R = 0.5 * D
    pi = math.pi
    h = 0.0
    v = v0
    t = 0.0
    work = 0.0
    eroded = 0
    nrec = 0
    step = 0
    status = ARRESTED
    F = 0.0
    while True:
        if v <= stop_v:
            status = ARRESTED
            break
        if t >= t_max:
            status = TIMED_OUT
            break

        if h < R:
            area = pi * (2.0 * R * h - h * h)
        else:
            area = pi * R * R
        eps = strain_k * h / D
        if eps >= ise:
            eroded = 1
            eps = ise
        rate = v / D
        rf = 1.0
        if rate > eps_dot_ref:
            rf = 1.0 + C * math.log(rate / eps_dot_ref)
        q = constraint * (A + B * math.pow(eps, n)) * rf * thermal
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
            # constant deceleration over the final partial step
            dh = (v - stop_v) * (v + stop_v) / (2.0 * acc)
            h += dh
            work += F * dh
            t += (v - stop_v) / acc
            v = stop_v
            status = ARRESTED
            break
        v -= acc * dt
        h += v * dt
        work += F * v * dt
        t += dt
        step += 1
        if not (math.isfinite(h) and math.isfinite(v)):
            status = NON_FINITE
            break

    if nrec < cap and status != NON_FINITE:
        out[nrec, 0] = t
        out[nrec, 1] = h
        out[nrec, 2] = v
        out[nrec, 3] = F
        nrec += 1
    return h, v, t, work, eroded, nrec, status
