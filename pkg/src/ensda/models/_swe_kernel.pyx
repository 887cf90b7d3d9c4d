# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled shallow-water substep: central fluxes + biharmonic filter, RK2.

Mirrors the numpy fallback in swe.py.  Returns 0 on success, 1 on drying
(h <= 0), 2 on a CFL violation; the caller turns codes into exceptions.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport fabs, sqrt

cnp.import_array()


cdef int _tendency(double[:, ::1] eta, double[:, ::1] hu, double[:, ::1] hv,
                   double[:, ::1] te, double[:, ::1] tu, double[:, ::1] tv,
                   double[:, ::1] u, double[:, ::1] v,
                   double[:, ::1] fxu, double[:, ::1] fyu,
                   double[:, ::1] fxv, double[:, ::1] fyv,
                   double[:, ::1] le, double[:, ::1] lu, double[:, ::1] lv,
                   Py_ssize_t[::1] ip, Py_ssize_t[::1] im,
                   Py_ssize_t[::1] jp, Py_ssize_t[::1] jm,
                   double H, double g, double f,
                   double dx, double dy, double nu4) noexcept nogil:
    cdef Py_ssize_t ny = eta.shape[0], nx = eta.shape[1]
    cdef Py_ssize_t i, j
    cdef double h, ph, rdx2 = 1.0 / (dx * dx), rdy2 = 1.0 / (dy * dy)
    cdef double r2dx = 1.0 / (2.0 * dx), r2dy = 1.0 / (2.0 * dy)

    for j in range(ny):
        for i in range(nx):
            h = H + eta[j, i]
            if h <= 0.0:
                return 1
            u[j, i] = hu[j, i] / h
            v[j, i] = hv[j, i] / h
            ph = 0.5 * g * h * h
            fxu[j, i] = hu[j, i] * u[j, i] + ph
            fyu[j, i] = hu[j, i] * v[j, i]
            fxv[j, i] = hv[j, i] * u[j, i]
            fyv[j, i] = hv[j, i] * v[j, i] + ph

    if nu4 != 0.0:
        for j in range(ny):
            for i in range(nx):
                le[j, i] = (eta[j, ip[i]] - 2.0 * eta[j, i] + eta[j, im[i]]) * rdx2 \
                         + (eta[jp[j], i] - 2.0 * eta[j, i] + eta[jm[j], i]) * rdy2
                lu[j, i] = (hu[j, ip[i]] - 2.0 * hu[j, i] + hu[j, im[i]]) * rdx2 \
                         + (hu[jp[j], i] - 2.0 * hu[j, i] + hu[jm[j], i]) * rdy2
                lv[j, i] = (hv[j, ip[i]] - 2.0 * hv[j, i] + hv[j, im[i]]) * rdx2 \
                         + (hv[jp[j], i] - 2.0 * hv[j, i] + hv[jm[j], i]) * rdy2

    for j in range(ny):
        for i in range(nx):
            te[j, i] = -(hu[j, ip[i]] - hu[j, im[i]]) * r2dx \
                       - (hv[jp[j], i] - hv[jm[j], i]) * r2dy
            tu[j, i] = -(fxu[j, ip[i]] - fxu[j, im[i]]) * r2dx \
                       - (fyu[jp[j], i] - fyu[jm[j], i]) * r2dy + f * hv[j, i]
            tv[j, i] = -(fxv[j, ip[i]] - fxv[j, im[i]]) * r2dx \
                       - (fyv[jp[j], i] - fyv[jm[j], i]) * r2dy - f * hu[j, i]
            if nu4 != 0.0:
                te[j, i] -= nu4 * ((le[j, ip[i]] - 2.0 * le[j, i] + le[j, im[i]]) * rdx2
                                   + (le[jp[j], i] - 2.0 * le[j, i] + le[jm[j], i]) * rdy2)
                tu[j, i] -= nu4 * ((lu[j, ip[i]] - 2.0 * lu[j, i] + lu[j, im[i]]) * rdx2
                                   + (lu[jp[j], i] - 2.0 * lu[j, i] + lu[jm[j], i]) * rdy2)
                tv[j, i] -= nu4 * ((lv[j, ip[i]] - 2.0 * lv[j, i] + lv[j, im[i]]) * rdx2
                                   + (lv[jp[j], i] - 2.0 * lv[j, i] + lv[jm[j], i]) * rdy2)
    return 0


def step_n(cnp.ndarray[double, ndim=2] eta, cnp.ndarray[double, ndim=2] hu,
           cnp.ndarray[double, ndim=2] hv, double H, double g, double f,
           double dx, double dy, double dt, double nu4, int n_substeps):
    """Advance the three fields in place by n_substeps RK2 steps."""
    cdef Py_ssize_t ny = eta.shape[0], nx = eta.shape[1]
    cdef Py_ssize_t i, j, s
    cdef double h, cw, cfl, umax, vmax

    idx = np.arange(nx, dtype=np.intp)
    jdx = np.arange(ny, dtype=np.intp)
    cdef Py_ssize_t[::1] ip = np.ascontiguousarray((idx + 1) % nx)
    cdef Py_ssize_t[::1] im = np.ascontiguousarray((idx - 1) % nx)
    cdef Py_ssize_t[::1] jp = np.ascontiguousarray((jdx + 1) % ny)
    cdef Py_ssize_t[::1] jm = np.ascontiguousarray((jdx - 1) % ny)

    cdef double[:, ::1] e = eta, huv = hu, hvv = hv
    cdef double[:, ::1] t1e = np.empty((ny, nx)), t1u = np.empty((ny, nx)), t1v = np.empty((ny, nx))
    cdef double[:, ::1] t2e = np.empty((ny, nx)), t2u = np.empty((ny, nx)), t2v = np.empty((ny, nx))
    cdef double[:, ::1] e1 = np.empty((ny, nx)), u1 = np.empty((ny, nx)), v1 = np.empty((ny, nx))
    cdef double[:, ::1] wu = np.empty((ny, nx)), wv = np.empty((ny, nx))
    cdef double[:, ::1] fxu = np.empty((ny, nx)), fyu = np.empty((ny, nx))
    cdef double[:, ::1] fxv = np.empty((ny, nx)), fyv = np.empty((ny, nx))
    cdef double[:, ::1] le = np.empty((ny, nx)), lu = np.empty((ny, nx)), lv = np.empty((ny, nx))
    cdef int code

    with nogil:
        code = _run(e, huv, hvv, t1e, t1u, t1v, t2e, t2u, t2v, e1, u1, v1,
                    wu, wv, fxu, fyu, fxv, fyv, le, lu, lv,
                    ip, im, jp, jm, H, g, f, dx, dy, dt, nu4, n_substeps)
    return code


cdef int _run(double[:, ::1] e, double[:, ::1] huv, double[:, ::1] hvv,
              double[:, ::1] t1e, double[:, ::1] t1u, double[:, ::1] t1v,
              double[:, ::1] t2e, double[:, ::1] t2u, double[:, ::1] t2v,
              double[:, ::1] e1, double[:, ::1] u1, double[:, ::1] v1,
              double[:, ::1] wu, double[:, ::1] wv,
              double[:, ::1] fxu, double[:, ::1] fyu,
              double[:, ::1] fxv, double[:, ::1] fyv,
              double[:, ::1] le, double[:, ::1] lu, double[:, ::1] lv,
              Py_ssize_t[::1] ip, Py_ssize_t[::1] im,
              Py_ssize_t[::1] jp, Py_ssize_t[::1] jm,
              double H, double g, double f, double dx, double dy,
              double dt, double nu4, int n_substeps) noexcept nogil:
    cdef Py_ssize_t ny = e.shape[0], nx = e.shape[1]
    cdef Py_ssize_t i, j
    cdef int s, code
    cdef double h, cw, cfl, umax, vmax

    for s in range(n_substeps):
        # stability screen, mirroring the fallback's per-substep check
        umax = 0.0
        vmax = 0.0
        for j in range(ny):
            for i in range(nx):
                h = H + e[j, i]
                if h <= 0.0:
                    return 1
                cw = sqrt(g * h)
                if fabs(huv[j, i] / h) + cw > umax:
                    umax = fabs(huv[j, i] / h) + cw
                if fabs(hvv[j, i] / h) + cw > vmax:
                    vmax = fabs(hvv[j, i] / h) + cw
        cfl = dt * (umax / dx + vmax / dy)
        if cfl > 1.0:
            return 2

        code = _tendency(e, huv, hvv, t1e, t1u, t1v, wu, wv,
                         fxu, fyu, fxv, fyv, le, lu, lv,
                         ip, im, jp, jm, H, g, f, dx, dy, nu4)
        if code != 0:
            return code
        for j in range(ny):
            for i in range(nx):
                e1[j, i] = e[j, i] + dt * t1e[j, i]
                u1[j, i] = huv[j, i] + dt * t1u[j, i]
                v1[j, i] = hvv[j, i] + dt * t1v[j, i]
        code = _tendency(e1, u1, v1, t2e, t2u, t2v, wu, wv,
                         fxu, fyu, fxv, fyv, le, lu, lv,
                         ip, im, jp, jm, H, g, f, dx, dy, nu4)
        if code != 0:
            return code
        for j in range(ny):
            for i in range(nx):
                e[j, i] = e[j, i] + 0.5 * dt * (t1e[j, i] + t2e[j, i])
                huv[j, i] = huv[j, i] + 0.5 * dt * (t1u[j, i] + t2u[j, i])
                hvv[j, i] = hvv[j, i] + 0.5 * dt * (t1v[j, i] + t2v[j, i])
    return 0
