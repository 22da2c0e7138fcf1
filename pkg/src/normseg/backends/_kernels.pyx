# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled twins of the reference kernels.

Same iteration order, same thresholds, same Armijo policy as
``normseg.backends.reference``; explicit per-entity loops instead of
vectorized masks.  KKT systems are solved in place with LAPACK ``dgesv``.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport acos, cos, fabs, sin, sqrt
from libc.string cimport memcpy
from scipy.linalg.cython_lapack cimport dgesv

from ..errors import GeometryError, SolverError
from .. import _qp as _qp_mod
from .. import sphere as _sphere

cnp.import_array()

ctypedef cnp.int64_t i64

cdef double _TINY = 1e-14
cdef double _SV_SMALL = 1e-9
cdef double _PI = 3.14159265358979323846
# predicted decreases below this multiple of eps*|f| cannot be verified in
# double precision
cdef double _OBJ_FLOOR = 32.0 * 2.220446049250313e-16
# shared thresholds; must agree with the python modules
cdef double _ANTIPODAL_MARGIN = _sphere.ANTIPODAL_MARGIN
cdef double _SIGN_SLACK = _qp_mod._SIGN_SLACK


cdef inline double _dot3(const double* a, const double* b) noexcept nogil:
    return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]


cdef inline double _clip1(double x) noexcept nogil:
    if x > 1.0:
        return 1.0
    if x < -1.0:
        return -1.0
    return x


cdef inline void _sph_exp_row(const double* base, const double* x, double* out) noexcept nogil:
    # cos(|x|) base + sin(|x|) x/|x|, renormalized; base itself for |x| ~ 0
    cdef double nrm = sqrt(_dot3(x, x))
    cdef double cn, sn, inv
    cdef int j
    if nrm > _TINY:
        cn = cos(nrm)
        sn = sin(nrm) / nrm
        for j in range(3):
            out[j] = cn * base[j] + sn * x[j]
    else:
        for j in range(3):
            out[j] = base[j]
    inv = 1.0 / sqrt(_dot3(out, out))
    for j in range(3):
        out[j] *= inv


cdef inline void _transport_row(const double* src, const double* dst, const double* x,
                                double* out) noexcept nogil:
    # minimal rotation: x - ((src+dst).x / (1+src.dst))(src+dst) + 2(src.x) dst
    cdef double q[3]
    cdef double c = _dot3(src, dst)
    cdef double qx, ax
    cdef int j
    for j in range(3):
        q[j] = src[j] + dst[j]
    qx = _dot3(q, x)
    ax = _dot3(src, x)
    for j in range(3):
        out[j] = x[j] - (qx / (1.0 + c)) * q[j] + 2.0 * ax * dst[j]


cdef inline void _transport_adjoint_row(const double* base, const double* dst,
                                        const double* x, const double* z,
                                        double* out) noexcept nogil:
    # transpose of (d/d dst) of the minimal-rotation transport, applied to z
    cdef double q[3]
    cdef double c = _dot3(base, dst)
    cdef double opc = 1.0 + c
    cdef double qx, qz, ax
    cdef int j
    for j in range(3):
        q[j] = base[j] + dst[j]
    qx = _dot3(q, x)
    qz = _dot3(q, z)
    ax = _dot3(base, x)
    for j in range(3):
        out[j] = -(qz / opc) * x[j] + (qx * qz / (opc * opc)) * base[j] \
            - (qx / opc) * z[j] + 2.0 * ax * z[j]


# ---------------------------------------------------------------------------
# assignment-space primal-dual loop


cdef void _proj_simplex_row(double* v, double* srt, Py_ssize_t L) noexcept nogil:
    # sort-and-threshold Euclidean projection, single row, in place
    cdef Py_ssize_t i, j, rho = 0
    cdef double key, css = 0.0, css_rho = 1.0, lam
    for i in range(L):
        key = v[i]
        j = i
        while j > 0 and srt[j - 1] < key:
            srt[j] = srt[j - 1]
            j -= 1
        srt[j] = key
    for i in range(L):
        css += srt[i]
        if srt[i] > (css - 1.0) / (i + 1):
            rho = i + 1
            css_rho = css
    lam = (css_rho - 1.0) / rho
    for i in range(L):
        key = v[i] - lam
        v[i] = key if key > 0.0 else 0.0


def cp_solve(s, areas, elens, eplus, eminus, double beta, double tau, double sigma,
             double theta, Py_ssize_t max_iters, double primal_tol, phi0, d0):
    """Primal-dual iteration for the assignment-space model.

    Returns (phi, d, iterations, history, converged) where history holds the
    relative primal change per iteration (length = iterations).
    """
    cdef double[:, ::1] sv = np.ascontiguousarray(s, dtype=np.float64)
    cdef double[::1] area = np.ascontiguousarray(areas, dtype=np.float64)
    cdef double[::1] elen = np.ascontiguousarray(elens, dtype=np.float64)
    cdef i64[::1] ep = np.ascontiguousarray(eplus, dtype=np.int64)
    cdef i64[::1] em = np.ascontiguousarray(eminus, dtype=np.int64)
    cdef Py_ssize_t T = sv.shape[0]
    cdef Py_ssize_t L = sv.shape[1]
    cdef Py_ssize_t E = elen.shape[0]

    phi_arr = np.array(phi0, dtype=np.float64, order="C")
    d_arr = np.array(d0, dtype=np.float64, order="C")
    history_arr = np.empty(max_iters, dtype=np.float64)
    cdef double[:, ::1] phi = phi_arr
    cdef double[:, ::1] d = d_arr
    cdef double[::1] history = history_arr
    cdef double[:, ::1] bar = phi_arr.copy()
    cdef double[:, ::1] acc = np.zeros((T, L), dtype=np.float64)
    cdef double[::1] coefp = np.empty(E, dtype=np.float64)
    cdef double[::1] coefm = np.empty(E, dtype=np.float64)
    cdef double[::1] row = np.empty(L, dtype=np.float64)
    cdef double[::1] srt = np.empty(L, dtype=np.float64)

    cdef double sb = sigma * beta
    cdef Py_ssize_t k, e, t, l
    cdef double w, num, den, rel
    cdef Py_ssize_t iters = 0
    cdef bint converged = False

    for e in range(E):
        coefp[e] = beta * elen[e] / area[ep[e]]
        coefm[e] = beta * elen[e] / area[em[e]]

    with nogil:
        for k in range(max_iters):
            iters = k + 1
            for e in range(E):
                for l in range(L):
                    d[e, l] = _clip1(d[e, l] + sb * (bar[ep[e], l] - bar[em[e], l]))
            for t in range(T):
                for l in range(L):
                    acc[t, l] = 0.0
            for e in range(E):
                for l in range(L):
                    acc[ep[e], l] += coefp[e] * d[e, l]
                    acc[em[e], l] -= coefm[e] * d[e, l]
            num = 0.0
            den = 0.0
            for t in range(T):
                for l in range(L):
                    row[l] = phi[t, l] - tau * acc[t, l] - tau * sv[t, l]
                _proj_simplex_row(&row[0], &srt[0], L)
                for l in range(L):
                    w = row[l] - phi[t, l]
                    num += area[t] * w * w
                    den += area[t] * phi[t, l] * phi[t, l]
                    bar[t, l] = row[l] + theta * w
                    phi[t, l] = row[l]
            rel = sqrt(num) / sqrt(den)
            history[k] = rel
            if rel <= primal_tol:
                converged = True
                break

    return phi_arr, d_arr, int(iters), history_arr[:iters].copy(), converged


# ---------------------------------------------------------------------------
# Karcher means


cdef double _karcher_obj_row(const double* m, const double* labels,
                             const double* w, Py_ssize_t L) noexcept nogil:
    cdef double f = 0.0, th
    cdef Py_ssize_t l
    for l in range(L):
        th = acos(_clip1(_dot3(m, labels + 3 * l)))
        f += w[l] * th * th
    return f


cdef int _log_sum_row(const double* m, const double* labels, const double* w,
                      Py_ssize_t L, double* v) noexcept nogil:
    # v = sum_l w_l log_m(g_l), zero-weight labels skipped; -1 on antipodal
    cdef double dot, th, nrm, scale
    cdef double perp[3]
    cdef Py_ssize_t l
    cdef int j
    v[0] = 0.0
    v[1] = 0.0
    v[2] = 0.0
    for l in range(L):
        if w[l] <= 0.0:
            continue
        dot = _clip1(_dot3(m, labels + 3 * l))
        th = acos(dot)
        if th > _PI - _ANTIPODAL_MARGIN:
            return -1
        for j in range(3):
            perp[j] = labels[3 * l + j] - dot * m[j]
        nrm = sqrt(_dot3(perp, perp))
        if nrm > _TINY:
            scale = w[l] * th / nrm
            for j in range(3):
                v[j] += scale * perp[j]
    return 0


def karcher_batch(weights, labels, init, double tol, Py_ssize_t max_iters=200,
                  double armijo_c=1e-4, Py_ssize_t max_halvings=60):
    """Weighted Karcher means, one solve per row of ``weights``.

    Returns (means, residuals, iterations).  Raises SolverError if any row
    fails to reach ``tol`` within ``max_iters`` or exhausts the line search.
    """
    cdef double[:, ::1] w = np.ascontiguousarray(weights, dtype=np.float64)
    cdef double[:, ::1] g = np.ascontiguousarray(labels, dtype=np.float64)
    m_arr = np.array(init, dtype=np.float64, order="C")
    cdef double[:, ::1] m = m_arr
    cdef Py_ssize_t N = m.shape[0]
    cdef Py_ssize_t L = w.shape[1]
    resid_arr = np.zeros(N, dtype=np.float64)
    iters_arr = np.zeros(N, dtype=np.int64)
    cdef double[::1] resid = resid_arr
    cdef i64[::1] iters = iters_arr
    if N == 0:
        return m_arr, resid_arr, iters_arr

    cdef double v[3]
    cdef double step[3]
    cdef double cand[3]
    cdef double f, rn, eta, fc, drop
    cdef Py_ssize_t n, it, h
    cdef int j
    cdef bint done, accepted
    cdef bint failed_armijo = False, antipodal = False
    cdef Py_ssize_t not_converged = 0

    with nogil:
        for n in range(N):
            f = _karcher_obj_row(&m[n, 0], &g[0, 0], &w[n, 0], L)
            done = False
            for it in range(max_iters):
                if _log_sum_row(&m[n, 0], &g[0, 0], &w[n, 0], L, v) < 0:
                    antipodal = True
                    break
                rn = sqrt(_dot3(v, v))
                resid[n] = rn
                if rn <= tol:
                    iters[n] = it
                    done = True
                    break
                if 2.0 * rn * rn <= _OBJ_FLOOR * (f if f > 1e-300 else 1e-300):
                    # sub-roundoff decrease: plain fixed-point step, no search
                    _sph_exp_row(&m[n, 0], v, cand)
                    for j in range(3):
                        m[n, j] = cand[j]
                    f = _karcher_obj_row(&m[n, 0], &g[0, 0], &w[n, 0], L)
                    continue
                drop = armijo_c * 2.0 * rn * rn
                eta = 1.0
                accepted = False
                for h in range(max_halvings):
                    for j in range(3):
                        step[j] = eta * v[j]
                    _sph_exp_row(&m[n, 0], step, cand)
                    fc = _karcher_obj_row(cand, &g[0, 0], &w[n, 0], L)
                    if fc <= f - eta * drop:
                        for j in range(3):
                            m[n, j] = cand[j]
                        f = fc
                        accepted = True
                        break
                    eta *= 0.5
                if not accepted:
                    failed_armijo = True
                    break
            if antipodal or failed_armijo:
                break
            if not done:
                not_converged += 1
    if antipodal:
        raise GeometryError("Karcher iterate antipodal to a positive-weight label")
    if failed_armijo:
        raise SolverError(f"Karcher mean: Armijo failed after {max_halvings} halvings")
    if not_converged > 0:
        raise SolverError(
            f"Karcher mean: {not_converged} rows not converged after {max_iters} iterations"
        )
    return m_arr, resid_arr, iters_arr


# ---------------------------------------------------------------------------
# Y subproblem


cdef double _y_obj_row(const double* phi, const double* Y, const double* mu,
                       const double* nu, const double* m, const double* labels,
                       Py_ssize_t L) noexcept nogil:
    cdef double q[3]
    cdef double e[3]
    cdef double wv[3]
    cdef double r, sc, f
    cdef Py_ssize_t l
    cdef int j
    for j in range(3):
        q[j] = mu[j]
    for l in range(L):
        for j in range(3):
            q[j] += phi[l] * Y[3 * l + j]
    f = _dot3(q, q)
    for l in range(L):
        r = sqrt(_dot3(Y + 3 * l, Y + 3 * l))
        if r > _TINY:
            sc = sin(r) / r
            for j in range(3):
                e[j] = cos(r) * m[j] + sc * Y[3 * l + j]
        else:
            for j in range(3):
                e[j] = m[j]
        for j in range(3):
            wv[j] = e[j] - labels[3 * l + j] + nu[3 * l + j]
        f += _dot3(wv, wv)
    return f


cdef double _y_grad_row(const double* phi, const double* Y, const double* mu,
                        const double* nu, const double* m, const double* labels,
                        Py_ssize_t L, double* grad) noexcept nogil:
    # returns squared gradient norm; tangent-projected rows in ``grad``
    cdef double q[3]
    cdef double u[3]
    cdef double e[3]
    cdef double wv[3]
    cdef double r, safe, sinc, cr, sr, uw, mw, coef, gm, gn2
    cdef Py_ssize_t l
    cdef int j
    for j in range(3):
        q[j] = mu[j]
    for l in range(L):
        for j in range(3):
            q[j] += phi[l] * Y[3 * l + j]
    gn2 = 0.0
    for l in range(L):
        r = sqrt(_dot3(Y + 3 * l, Y + 3 * l))
        safe = r if r > _TINY else _TINY
        cr = cos(r)
        sr = sin(r)
        for j in range(3):
            u[j] = Y[3 * l + j] / safe
        if r > _TINY:
            sinc = sr / safe
            for j in range(3):
                e[j] = cr * m[j] + sr * u[j]
        else:
            sinc = 1.0
            for j in range(3):
                e[j] = m[j]
        for j in range(3):
            wv[j] = e[j] - labels[3 * l + j] + nu[3 * l + j]
        uw = _dot3(u, wv)
        mw = _dot3(m, wv)
        # (d exp / d Y)^T w = sinc(r) w + [(cos r - sinc r)(u.w) - sin(r)(m.w)] u
        coef = (cr - sinc) * uw - sr * mw if r > _TINY else 0.0
        for j in range(3):
            grad[3 * l + j] = 2.0 * phi[l] * q[j] + 2.0 * (sinc * wv[j] + coef * u[j])
        gm = _dot3(m, grad + 3 * l)
        for j in range(3):
            grad[3 * l + j] -= gm * m[j]
        gn2 += _dot3(grad + 3 * l, grad + 3 * l)
    return gn2


def y_step(phi, Y, mu, nu, m, labels, double tol, double armijo_c=1e-4,
           Py_ssize_t max_halvings=60, Py_ssize_t max_inner=200):
    """Per-triangle gradient descent on the Y blocks; converged rows drop out.

    The Armijo trial step is the Barzilai-Borwein quotient from the last
    accepted step; plain descent would need hundreds of inner iterations at
    the tight end of the outer tolerance schedule.

    Returns (Y_new, inner_steps_total).
    """
    cdef double[:, ::1] p = np.ascontiguousarray(phi, dtype=np.float64)
    Y_arr = np.array(Y, dtype=np.float64, order="C")
    cdef double[:, :, ::1] Yv = Y_arr
    cdef double[:, ::1] muv = np.ascontiguousarray(mu, dtype=np.float64)
    cdef double[:, :, ::1] nuv = np.ascontiguousarray(nu, dtype=np.float64)
    cdef double[:, ::1] mv = np.ascontiguousarray(m, dtype=np.float64)
    cdef double[:, ::1] g = np.ascontiguousarray(labels, dtype=np.float64)
    cdef Py_ssize_t T = p.shape[0]
    cdef Py_ssize_t L = p.shape[1]

    cdef double[::1] grad = np.empty(3 * L, dtype=np.float64)
    cdef double[::1] cand = np.empty(3 * L, dtype=np.float64)
    cdef double[::1] gprev = np.empty(3 * L, dtype=np.float64)
    cdef double[::1] sprev = np.empty(3 * L, dtype=np.float64)
    cdef double[::1] yold = np.empty(3 * L, dtype=np.float64)
    cdef double* yrow
    cdef double f, gn2, fc, eta, drop, sy, ss
    cdef Py_ssize_t t, it, h, i
    cdef long total = 0
    cdef Py_ssize_t failed_t = -1
    cdef bint accepted, have_bb

    with nogil:
        for t in range(T):
            yrow = &Yv[t, 0, 0]
            f = _y_obj_row(&p[t, 0], yrow, &muv[t, 0], &nuv[t, 0, 0],
                           &mv[t, 0], &g[0, 0], L)
            have_bb = False
            for it in range(max_inner):
                gn2 = _y_grad_row(&p[t, 0], yrow, &muv[t, 0], &nuv[t, 0, 0],
                                  &mv[t, 0], &g[0, 0], L, &grad[0])
                if sqrt(gn2) <= tol:
                    break
                # decrease of at most ~gn2 is below the objective roundoff:
                # the Armijo test is undecidable, row is numerically optimal
                if 2.0 * gn2 <= _OBJ_FLOOR * (f if f > 1e-300 else 1e-300):
                    break
                drop = armijo_c * gn2
                eta = 1.0
                if have_bb:
                    sy = 0.0
                    ss = 0.0
                    for i in range(3 * L):
                        sy += sprev[i] * (grad[i] - gprev[i])
                        ss += sprev[i] * sprev[i]
                    if sy > 1e-30:
                        eta = ss / sy
                        if eta < 1e-8:
                            eta = 1e-8
                        elif eta > 100.0:
                            eta = 100.0
                for i in range(3 * L):
                    yold[i] = yrow[i]
                accepted = False
                for h in range(max_halvings):
                    for i in range(3 * L):
                        cand[i] = yrow[i] - eta * grad[i]
                    fc = _y_obj_row(&p[t, 0], &cand[0], &muv[t, 0], &nuv[t, 0, 0],
                                    &mv[t, 0], &g[0, 0], L)
                    if fc <= f - eta * drop:
                        for i in range(3 * L):
                            yrow[i] = cand[i]
                        f = fc
                        accepted = True
                        break
                    eta *= 0.5
                if not accepted:
                    failed_t = t
                    break
                for i in range(3 * L):
                    sprev[i] = yrow[i] - yold[i]
                    gprev[i] = grad[i]
                have_bb = True
                total += 1
            if failed_t >= 0:
                break
    if failed_t >= 0:
        raise SolverError(f"Y subproblem: Armijo failed on triangles {[int(failed_t)]}")
    return Y_arr, int(total)


# ---------------------------------------------------------------------------
# phi subproblem (two-stage)


cdef int _simplex_exp_row(const double* p, const double* x, double* out,
                          double* xs, Py_ssize_t L) noexcept nogil:
    # Fisher-Rao exponential map, single row; -1 on non-interior base
    cdef double nx = 0.0, cn, sn, total, u2
    cdef Py_ssize_t l
    for l in range(L):
        if p[l] <= 0.0:
            return -1
        xs[l] = x[l] / sqrt(p[l])
        nx += xs[l] * xs[l]
    nx = sqrt(nx)
    if nx > _TINY:
        cn = cos(nx)
        sn = sin(nx) / nx
        for l in range(L):
            u2 = (xs[l] / nx) * (xs[l] / nx)
            out[l] = 0.5 * (p[l] + u2) + 0.5 * (p[l] - u2) * cn + sn * xs[l] * sqrt(p[l])
    else:
        for l in range(L):
            out[l] = p[l]
    total = 0.0
    for l in range(L):
        if out[l] < 0.0:
            out[l] = 0.0
        total += out[l]
    for l in range(L):
        out[l] /= total
    return 0


cdef int _kkt_accept_row(const double* s, const double* Y, const double* mu,
                         double rho, const double* stage1, double tol3,
                         Py_ssize_t L, unsigned char* active, i64* free_idx,
                         double* M, double* Mlu, double* rhs, double* sol,
                         int* ipiv, double* phi, double* alpha) noexcept nogil:
    # bounded active-set repair around the bordered KKT solve; 1 = accepted
    cdef Py_ssize_t rep, i, k, l, nfree, worst
    cdef int n, nrhs = 1, info
    cdef double r3[3]
    cdef double gamma, resid, nrm_rhs, val, smallest, total
    cdef bint solve_fail, any_neg
    cdef int j

    for l in range(L):
        active[l] = 1 if stage1[l] <= tol3 else 0

    for rep in range(2 * L + 2):
        nfree = 0
        for l in range(L):
            if not active[l]:
                free_idx[nfree] = l
                nfree += 1
        if nfree == 0:
            return 0
        n = <int> (nfree + 1)
        # bordered stationarity system, column-major for LAPACK
        for i in range(nfree):
            for k in range(nfree):
                M[k + n * i] = rho * _dot3(Y + 3 * free_idx[i], Y + 3 * free_idx[k])
            M[nfree + n * i] = 1.0
            M[i + n * nfree] = -1.0
        M[nfree + n * nfree] = 0.0
        nrm_rhs = 0.0
        for i in range(nfree):
            rhs[i] = -(s[free_idx[i]] + rho * _dot3(Y + 3 * free_idx[i], mu))
            nrm_rhs += rhs[i] * rhs[i]
        rhs[nfree] = 1.0
        nrm_rhs = sqrt(nrm_rhs + 1.0)
        memcpy(Mlu, M, n * n * sizeof(double))
        memcpy(sol, rhs, n * sizeof(double))
        dgesv(&n, &nrhs, Mlu, &n, ipiv, sol, &n, &info)
        solve_fail = info != 0
        if not solve_fail:
            # residual guard against ill-conditioned solves
            resid = 0.0
            for i in range(n):
                val = -rhs[i]
                for k in range(n):
                    val += M[i + n * k] * sol[k]
                resid += val * val
            if not (resid == resid) or sqrt(resid) > 1e-8 * (1.0 + nrm_rhs):
                solve_fail = True
        if solve_fail:
            # singular: shed the free component with the smallest stage-1 weight
            if nfree <= 1:
                return 0
            worst = 0
            smallest = stage1[free_idx[0]]
            for i in range(1, nfree):
                if stage1[free_idx[i]] < smallest:
                    smallest = stage1[free_idx[i]]
                    worst = i
            active[free_idx[worst]] = 1
            continue
        for l in range(L):
            phi[l] = 0.0
        for i in range(nfree):
            phi[free_idx[i]] = sol[i]
        gamma = sol[nfree]
        any_neg = False
        for l in range(L):
            if phi[l] < -_SIGN_SLACK:
                active[l] = 1
                any_neg = True
        if any_neg:
            continue
        for j in range(3):
            r3[j] = mu[j]
        for l in range(L):
            for j in range(3):
                r3[j] += phi[l] * Y[3 * l + j]
        worst = -1
        smallest = -_SIGN_SLACK
        for l in range(L):
            if active[l]:
                alpha[l] = s[l] + rho * _dot3(Y + 3 * l, r3) - gamma
                if alpha[l] < smallest:
                    smallest = alpha[l]
                    worst = l
        if worst >= 0:
            active[worst] = 0
            continue
        total = 0.0
        for l in range(L):
            if phi[l] < 0.0:
                phi[l] = 0.0
            total += phi[l]
        for l in range(L):
            phi[l] /= total
        return 1
    return 0


def phi_step(s, Y, mu, phi_in, double rho, double eps=1e-3, double tol1=1e-8,
             double tol2=1e-8, double tol3=1e-6, Py_ssize_t max_stage1=200,
             double armijo_c=1e-4, Py_ssize_t max_halvings=60):
    """Two-stage assignment update per triangle.

    Stage 1 recentralizes and runs Fisher-Rao gradient descent inside the open
    simplex; stage 2 fixes near-zero components and solves the reduced KKT
    system with bounded active-set repair, falling back to the stage-1 iterate
    when the repair budget runs out.

    Returns (phi_new, fallback_count).
    """
    cdef double[:, ::1] sv = np.ascontiguousarray(s, dtype=np.float64)
    cdef double[:, :, ::1] Yv = np.ascontiguousarray(Y, dtype=np.float64)
    cdef double[:, ::1] muv = np.ascontiguousarray(mu, dtype=np.float64)
    cdef double[:, ::1] pin = np.ascontiguousarray(phi_in, dtype=np.float64)
    cdef Py_ssize_t T = sv.shape[0]
    cdef Py_ssize_t L = sv.shape[1]

    out_arr = np.empty((T, L), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef double[::1] p = np.empty(L, dtype=np.float64)
    cdef double[::1] g = np.empty(L, dtype=np.float64)
    cdef double[::1] gr = np.empty(L, dtype=np.float64)
    cdef double[::1] cnd = np.empty(L, dtype=np.float64)
    cdef double[::1] xs = np.empty(L, dtype=np.float64)
    cdef double[::1] phi2 = np.empty(L, dtype=np.float64)
    cdef double[::1] alpha = np.empty(L, dtype=np.float64)
    cdef unsigned char[::1] active = np.empty(L, dtype=np.uint8)
    cdef i64[::1] free_idx = np.empty(L, dtype=np.int64)
    cdef double[::1] Mbuf = np.empty((L + 1) * (L + 1), dtype=np.float64)
    cdef double[::1] Mlu = np.empty((L + 1) * (L + 1), dtype=np.float64)
    cdef double[::1] rhs = np.empty(L + 1, dtype=np.float64)
    cdef double[::1] sol = np.empty(L + 1, dtype=np.float64)
    cdef int[::1] ipiv = np.empty(L + 1, dtype=np.int32)

    cdef double r3[3]
    cdef double f, fc, inner, gn, pmin, drop, eta, sy, ss
    cdef Py_ssize_t t, it, h, l
    cdef int j
    cdef long fallbacks = 0
    cdef Py_ssize_t failed_t = -1
    cdef bint accepted, have_bb, interior_fail = False
    cdef double[::1] gbb = np.empty(L, dtype=np.float64)
    cdef double[::1] sbb = np.empty(L, dtype=np.float64)
    cdef double[::1] pold = np.empty(L, dtype=np.float64)

    with nogil:
        for t in range(T):
            for l in range(L):
                p[l] = (pin[t, l] + eps) / (1.0 + eps * L)
            for j in range(3):
                r3[j] = muv[t, j]
            for l in range(L):
                for j in range(3):
                    r3[j] += p[l] * Yv[t, l, j]
            f = 0.5 * rho * _dot3(r3, r3)
            for l in range(L):
                f += p[l] * sv[t, l]
            have_bb = False
            for it in range(max_stage1):
                for j in range(3):
                    r3[j] = muv[t, j]
                for l in range(L):
                    for j in range(3):
                        r3[j] += p[l] * Yv[t, l, j]
                inner = 0.0
                for l in range(L):
                    g[l] = sv[t, l] + rho * _dot3(&Yv[t, l, 0], r3)
                    inner += p[l] * g[l]
                gn = 0.0
                pmin = p[0]
                for l in range(L):
                    gr[l] = g[l] * p[l] - inner * p[l]
                    gn += gr[l] * gr[l]
                    if p[l] < pmin:
                        pmin = p[l]
                if sqrt(gn) <= tol1 or pmin <= tol2:
                    break
                # directional derivative along -gr is -<g, gr>
                drop = 0.0
                for l in range(L):
                    drop += g[l] * gr[l]
                drop = drop if drop > 0.0 else 0.0
                # below the objective roundoff the Armijo test is undecidable
                if 2.0 * drop <= _OBJ_FLOOR * (fabs(f) if fabs(f) > 1e-300 else 1e-300):
                    break
                drop = armijo_c * drop
                eta = 1.0
                if have_bb:
                    sy = 0.0
                    ss = 0.0
                    for l in range(L):
                        sy += sbb[l] * (gr[l] - gbb[l])
                        ss += sbb[l] * sbb[l]
                    if sy > 1e-30:
                        eta = ss / sy
                        if eta < 1e-8:
                            eta = 1e-8
                        elif eta > 100.0:
                            eta = 100.0
                for l in range(L):
                    pold[l] = p[l]
                accepted = False
                for h in range(max_halvings):
                    for l in range(L):
                        cnd[l] = -eta * gr[l]
                    if _simplex_exp_row(&p[0], &cnd[0], &cnd[0], &xs[0], L) < 0:
                        interior_fail = True
                        break
                    for j in range(3):
                        r3[j] = muv[t, j]
                    for l in range(L):
                        for j in range(3):
                            r3[j] += cnd[l] * Yv[t, l, j]
                    fc = 0.5 * rho * _dot3(r3, r3)
                    for l in range(L):
                        fc += cnd[l] * sv[t, l]
                    if fc <= f - eta * drop:
                        for l in range(L):
                            p[l] = cnd[l]
                        f = fc
                        accepted = True
                        break
                    eta *= 0.5
                if interior_fail:
                    break
                if not accepted:
                    failed_t = t
                    break
                for l in range(L):
                    sbb[l] = p[l] - pold[l]
                    gbb[l] = gr[l]
                have_bb = True
            if interior_fail or failed_t >= 0:
                break
            if _kkt_accept_row(&sv[t, 0], &Yv[t, 0, 0], &muv[t, 0], rho, &p[0], tol3,
                               L, &active[0], &free_idx[0], &Mbuf[0], &Mlu[0],
                               &rhs[0], &sol[0], &ipiv[0], &phi2[0], &alpha[0]) == 1:
                for l in range(L):
                    out[t, l] = phi2[l]
            else:
                fallbacks += 1
                for l in range(L):
                    out[t, l] = p[l]
    if interior_fail:
        raise GeometryError("simplex_exp requires a strictly interior base point")
    if failed_t >= 0:
        raise SolverError(f"assignment subproblem: Armijo failed on triangles {[int(failed_t)]}")
    return out_arr, int(fallbacks)


# ---------------------------------------------------------------------------
# m subproblem (coupled over the mesh)


cdef double _m_obj_c(const double* m, const double* base, const double* Y,
                     const double* nu, const double* r, const double* wedge,
                     const double* labels, const double* areas, const double* elens,
                     const i64* ep, const i64* em, Py_ssize_t T, Py_ssize_t L,
                     Py_ssize_t E, int* status) noexcept nogil:
    cdef double ty[3]
    cdef double e[3]
    cdef double wv[3]
    cdef double z[3]
    cdef double svec[3]
    cdef double vv[3]
    cdef double f = 0.0, tri, rv, sc, c, theta, sv, lg
    cdef Py_ssize_t t, l, ei, ip, im
    cdef int j
    status[0] = 0
    for t in range(T):
        tri = 0.0
        for l in range(L):
            _transport_row(base + 3 * t, m + 3 * t, Y + 3 * (t * L + l), ty)
            rv = r[t * L + l]
            if rv > _TINY:
                sc = sin(rv) / rv
                for j in range(3):
                    e[j] = cos(rv) * m[3 * t + j] + sc * ty[j]
            else:
                for j in range(3):
                    e[j] = m[3 * t + j]
            for j in range(3):
                wv[j] = e[j] - labels[3 * l + j] + nu[3 * (t * L + l) + j]
            tri += _dot3(wv, wv)
        f += areas[t] * tri
    for ei in range(E):
        ip = ep[ei]
        im = em[ei]
        c = _clip1(_dot3(m + 3 * ip, m + 3 * im))
        theta = acos(c)
        if theta > _PI - _ANTIPODAL_MARGIN:
            status[0] = -1
            return 0.0
        for j in range(3):
            vv[j] = m[3 * im + j] - c * m[3 * ip + j]
        sv = sqrt(_dot3(vv, vv))
        lg = theta / sv if sv > _TINY else 0.0
        _transport_row(base + 3 * ip, m + 3 * ip, wedge + 3 * ei, svec)
        for j in range(3):
            z[j] = lg * vv[j] + svec[j]
        f += elens[ei] * _dot3(z, z)
    return f


cdef int _m_grad_c(const double* m, const double* base, const double* Y,
                   const double* nu, const double* r, const double* wedge,
                   const double* labels, const double* areas, const double* elens,
                   const i64* ep, const i64* em, Py_ssize_t T, Py_ssize_t L,
                   Py_ssize_t E, double* grad) noexcept nogil:
    cdef double ty[3]
    cdef double e[3]
    cdef double wv[3]
    cdef double dtw[3]
    cdef double z[3]
    cdef double svec[3]
    cdef double vv[3]
    cdef double vhat[3]
    cdef double pvz[3]
    cdef double mq[3]
    cdef double mp[3]
    cdef double dts[3]
    cdef double rv, sc, cr, sr, c, theta, sv, safe, ts, vz, pz, inv_sv, gm, lg
    cdef Py_ssize_t t, l, ei, ip, im
    cdef int j
    for t in range(T):
        for j in range(3):
            grad[3 * t + j] = 0.0
        for l in range(L):
            _transport_row(base + 3 * t, m + 3 * t, Y + 3 * (t * L + l), ty)
            rv = r[t * L + l]
            cr = cos(rv)
            sr = sin(rv)
            sc = sr / rv if rv > _TINY else 1.0
            for j in range(3):
                e[j] = cr * m[3 * t + j] + sc * ty[j]
            for j in range(3):
                wv[j] = e[j] - labels[3 * l + j] + nu[3 * (t * L + l) + j]
            _transport_adjoint_row(base + 3 * t, m + 3 * t, Y + 3 * (t * L + l), wv, dtw)
            for j in range(3):
                grad[3 * t + j] += 2.0 * areas[t] * (cr * wv[j] + sc * dtw[j])
    for ei in range(E):
        ip = ep[ei]
        im = em[ei]
        c = _clip1(_dot3(m + 3 * ip, m + 3 * im))
        theta = acos(c)
        if theta > _PI - _ANTIPODAL_MARGIN:
            return -1
        for j in range(3):
            vv[j] = m[3 * im + j] - c * m[3 * ip + j]
        sv = sqrt(_dot3(vv, vv))
        safe = sv if sv > _TINY else _TINY
        lg = theta / sv if sv > _TINY else 0.0
        _transport_row(base + 3 * ip, m + 3 * ip, wedge + 3 * ei, svec)
        for j in range(3):
            vhat[j] = vv[j] / safe
            z[j] = lg * vv[j] + svec[j]
        ts = theta / safe if sv > _TINY else 1.0
        vz = _dot3(vhat, z)
        pz = _dot3(m + 3 * ip, z)
        inv_sv = 1.0 / safe
        for j in range(3):
            pvz[j] = z[j] - vz * vhat[j]
        if sv <= _SV_SMALL:
            # coincident-point limits of the restricted log-map adjoints
            for j in range(3):
                mq[j] = z[j] - pz * m[3 * ip + j]
                mp[j] = -mq[j]
        else:
            for j in range(3):
                mq[j] = -(vz * inv_sv) * m[3 * ip + j] + ts * pvz[j] - ts * pz * m[3 * ip + j]
                mp[j] = -(vz * inv_sv) * m[3 * im + j] - ts * pz * m[3 * im + j] - c * ts * pvz[j]
        _transport_adjoint_row(base + 3 * ip, m + 3 * ip, wedge + 3 * ei, z, dts)
        for j in range(3):
            grad[3 * im + j] += 2.0 * elens[ei] * mq[j]
            grad[3 * ip + j] += 2.0 * elens[ei] * (mp[j] + dts[j])
    for t in range(T):
        gm = _dot3(grad + 3 * t, m + 3 * t)
        for j in range(3):
            grad[3 * t + j] -= gm * m[3 * t + j]
    return 0


def m_step(m_base, Y, nu, wedge, labels, areas, elens, eplus, eminus, double tol,
           Py_ssize_t max_steps=20, double armijo_c=1e-4, Py_ssize_t max_halvings=60):
    """Coupled Riemannian descent on the mean field, starting at ``m_base``.

    Y, nu index tangent data at the base means; ``wedge`` rows (xi - X) live
    at base[eplus].  Transports to the accepted iterate happen inside the
    objective; the caller re-anchors the state afterwards.

    Returns (m_new, last_gradient_norm, steps_taken).
    """
    cdef double[:, ::1] base = np.ascontiguousarray(m_base, dtype=np.float64)
    cdef double[:, :, ::1] Yv = np.ascontiguousarray(Y, dtype=np.float64)
    cdef double[:, :, ::1] nuv = np.ascontiguousarray(nu, dtype=np.float64)
    cdef double[:, ::1] wv = np.ascontiguousarray(wedge, dtype=np.float64)
    cdef double[:, ::1] g = np.ascontiguousarray(labels, dtype=np.float64)
    cdef double[::1] area = np.ascontiguousarray(areas, dtype=np.float64)
    cdef double[::1] elen = np.ascontiguousarray(elens, dtype=np.float64)
    cdef i64[::1] ep = np.ascontiguousarray(eplus, dtype=np.int64)
    cdef i64[::1] em = np.ascontiguousarray(eminus, dtype=np.int64)
    cdef Py_ssize_t T = base.shape[0]
    cdef Py_ssize_t L = g.shape[0]
    cdef Py_ssize_t E = elen.shape[0]

    m_arr = np.array(m_base, dtype=np.float64, order="C")
    cdef double[:, ::1] m = m_arr
    cdef double[:, ::1] r = np.ascontiguousarray(
        np.linalg.norm(np.asarray(Y, dtype=np.float64), axis=2)
    )
    cdef double[:, ::1] grad = np.empty((T, 3), dtype=np.float64)
    cdef double[:, ::1] cand = np.empty((T, 3), dtype=np.float64)
    cdef double[:, ::1] gbb = np.empty((T, 3), dtype=np.float64)
    cdef double[:, ::1] sbb = np.empty((T, 3), dtype=np.float64)

    cdef double step[3]
    cdef double f, fc, gn, gn2, eta, sy, ss
    cdef Py_ssize_t it, h, t
    cdef int j, ostatus = 0
    cdef long steps = 0
    cdef bint accepted, have_bb = False, grad_antipodal = False

    f = _m_obj_c(&m[0, 0], &base[0, 0], &Yv[0, 0, 0], &nuv[0, 0, 0], &r[0, 0],
                 &wv[0, 0], &g[0, 0], &area[0], &elen[0], &ep[0], &em[0],
                 T, L, E, &ostatus)
    if ostatus < 0:
        raise GeometryError("neighbouring means antipodal during m update")
    gn = 0.0
    with nogil:
        for it in range(max_steps):
            if _m_grad_c(&m[0, 0], &base[0, 0], &Yv[0, 0, 0], &nuv[0, 0, 0], &r[0, 0],
                         &wv[0, 0], &g[0, 0], &area[0], &elen[0], &ep[0], &em[0],
                         T, L, E, &grad[0, 0]) < 0:
                grad_antipodal = True
                break
            gn2 = 0.0
            for t in range(T):
                gn2 += _dot3(&grad[t, 0], &grad[t, 0])
            gn = sqrt(gn2)
            if gn <= tol:
                break
            # Barzilai-Borwein trial step (ambient differences; Armijo guards it)
            eta = 1.0
            if have_bb:
                sy = 0.0
                ss = 0.0
                for t in range(T):
                    for j in range(3):
                        sy += sbb[t, j] * (grad[t, j] - gbb[t, j])
                        ss += sbb[t, j] * sbb[t, j]
                if sy > 1e-30:
                    eta = ss / sy
                    if eta < 1e-8:
                        eta = 1e-8
                    elif eta > 100.0:
                        eta = 100.0
            accepted = False
            for h in range(max_halvings):
                for t in range(T):
                    for j in range(3):
                        step[j] = -eta * grad[t, j]
                    _sph_exp_row(&m[t, 0], step, &cand[t, 0])
                fc = _m_obj_c(&cand[0, 0], &base[0, 0], &Yv[0, 0, 0], &nuv[0, 0, 0],
                              &r[0, 0], &wv[0, 0], &g[0, 0], &area[0], &elen[0],
                              &ep[0], &em[0], T, L, E, &ostatus)
                if ostatus < 0:
                    # candidate swung a pair of neighbouring means antipodal
                    eta *= 0.5
                    continue
                if fc <= f - armijo_c * eta * gn2:
                    accepted = True
                    break
                eta *= 0.5
            if not accepted:
                # no decrease beyond roundoff; the reference twin documents why
                # this is the step's numerical optimum rather than an error
                break
            for t in range(T):
                for j in range(3):
                    sbb[t, j] = -eta * grad[t, j]
                    gbb[t, j] = grad[t, j]
                    m[t, j] = cand[t, j]
            have_bb = True
            f = fc
            steps += 1
    if grad_antipodal:
        raise GeometryError("neighbouring means antipodal during m update")
    return m_arr, float(gn), int(steps)
