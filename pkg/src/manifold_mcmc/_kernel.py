"""Compiled chain kernels for polynomial problems.

These mirror the pure-Python iteration functions in `sampler` step for step,
including the exact order in which the four random streams are consumed, so
a chain started from the same seed follows the same trajectory on either
path (up to floating-point associativity in glue arithmetic).  Constraint,
potential and line-restriction evaluations go through the same jitted
primitives as the Python path and are therefore bit-identical.
"""

import numpy as np
from numba import njit

from .errors import ChainAbort
from .polys import poly_eval, poly_grad, poly_line_coeffs, system_jac, system_eval
from .rootfind import _real_roots

_JIT = dict(cache=True, nogil=True)

# counter slots (int64 array)
C_INVOKED = 0
C_PASSED = 1
C_ACCEPTED = 2
C_LARGE = 3
C_EXPENSIVE = 4
C_ACC_EXP = 5
C_MMISMATCH = 6
C_RANKFB = 7
C_ABORT_ITER = 8
N_COUNTERS = 9

# float accumulator slots
F_SUMJ = 0
F_SUMJ_EXP = 1
N_FCOUNTERS = 2

# abort codes
ABORT_SINGULAR = 1
ABORT_NAN = 2
ABORT_COMPONENT = 3

_ABORT_MESSAGES = {
    ABORT_SINGULAR: "singular Gram matrix at the current state",
    ABORT_NAN: "non-finite state",
    ABORT_COMPONENT: "sign pattern impossible on the surface; corrupt state",
}


@njit(**_JIT)
def _lu2_solve(a, b, out):
    """2x2 solve by partially pivoted LU (the LAPACK elimination order)."""
    a11, a12 = a[0, 0], a[0, 1]
    a21, a22 = a[1, 0], a[1, 1]
    b1, b2 = b[0], b[1]
    if abs(a21) > abs(a11):
        a11, a21 = a21, a11
        a12, a22 = a22, a12
        b1, b2 = b2, b1
    if a11 == 0.0:
        return False
    l21 = a21 / a11
    u22 = a22 - l21 * a12
    if u22 == 0.0:
        return False
    y2 = b2 - l21 * b1
    out[1] = y2 / u22
    out[0] = (b1 - a12 * out[1]) / a11
    return True


@njit(**_JIT)
def _newton_delta(a, b, out):
    """Guarded Newton linear solve; mirrors rootfind._guarded_solve."""
    k = a.shape[0]
    for i in range(k):
        for j in range(k):
            if not np.isfinite(a[i, j]):
                return False
    if k == 1:
        den = a[0, 0]
        if abs(den) < 1e-280:
            return False
        out[0] = b[0] / den
    elif k == 2:
        det = a[0, 0] * a[1, 1] - a[0, 1] * a[1, 0]
        scale = max(np.max(np.abs(a)), 1e-30)
        if not np.isfinite(det) or abs(det) <= 1e-14 * scale * scale:
            return False
        if not _lu2_solve(a, b, out):
            return False
    else:
        det = np.linalg.det(a)
        scale = max(np.max(np.abs(a)), 1e-30)
        if not np.isfinite(det) or abs(det) <= 1e-14 * scale**k:
            return False
        sol = np.linalg.solve(a, b)
        for i in range(k):
            out[i] = sol[i]
    for i in range(k):
        if not np.isfinite(out[i]) or abs(out[i]) > 1e12:
            return False
    return True


@njit(**_JIT)
def _gram_solve(a, b, out):
    """Solve with a symmetric positive definite k-by-k Gram matrix."""
    k = a.shape[0]
    scale = max(np.max(np.abs(a)), 0.0)
    if scale == 0.0 or not np.isfinite(scale):
        return False
    if k == 1:
        den = a[0, 0]
        if den <= 1e-10 * max(1.0, scale):
            return False
        out[0] = b[0] / den
    elif k == 2:
        det = a[0, 0] * a[1, 1] - a[0, 1] * a[1, 0]
        if not np.isfinite(det) or det <= (1e-10 * max(1.0, scale)) * scale:
            return False
        if not _lu2_solve(a, b, out):
            return False
    else:
        det = np.linalg.det(a)
        # det / scale^(k-1) lower-bounds the smallest eigenvalue scale
        if not np.isfinite(det) or det <= (1e-10 * max(1.0, scale)) * scale ** (k - 1):
            return False
        sol = np.linalg.solve(a, b)
        for i in range(k):
            out[i] = sol[i]
    for i in range(k):
        if not np.isfinite(out[i]):
            return False
    return True


@njit(**_JIT)
def _pm_apply(xi_c, xi_e, xi_s, x, minv, vec, out, jac, gram, kvec, kvec2):
    """out = P_M(x) vec; False when the Gram matrix is singular."""
    d = x.shape[0]
    k = xi_s.shape[0] - 1
    system_jac(xi_c, xi_e, xi_s, x, jac)
    for a in range(k):
        for b in range(k):
            acc = 0.0
            for i in range(d):
                acc += jac[i, a] * minv[i] * jac[i, b]
            gram[a, b] = acc
    for a in range(k):
        acc = 0.0
        for i in range(d):
            acc += jac[i, a] * (minv[i] * vec[i])
        kvec[a] = acc
    if not _gram_solve(gram, kvec, kvec2):
        return False
    for i in range(d):
        acc = vec[i]
        for a in range(k):
            acc -= jac[i, a] * kvec2[a]
        out[i] = acc
    return True


@njit(**_JIT)
def _det_kk(a):
    k = a.shape[0]
    if k == 1:
        return a[0, 0]
    if k == 2:
        return a[0, 0] * a[1, 1] - a[0, 1] * a[1, 0]
    return np.linalg.det(a)


@njit(**_JIT)
def _select(n, r, omega_kind, rank_rows):
    """(index, probability, uniform-fallback flag) for one selection draw."""
    ranked = omega_kind == 1
    if ranked and n <= rank_rows.shape[0] and not np.isnan(rank_rows[n - 1, 0]):
        cum = 0.0
        for i in range(n):
            cum += rank_rows[n - 1, i]
            if r < cum:
                return i, rank_rows[n - 1, i], False
        return n - 1, rank_rows[n - 1, n - 1], False
    idx = int(r * n)
    if idx > n - 1:
        idx = n - 1
    return idx, 1.0 / n, ranked


@njit(**_JIT)
def _omega_prob(n, i, omega_kind, rank_rows):
    if omega_kind == 1 and n <= rank_rows.shape[0] and not np.isnan(rank_rows[n - 1, 0]):
        return rank_rows[n - 1, i]
    return 1.0 / n


@njit(**_JIT)
def _sphere_comp(x):
    pos1 = x[0] > 0.0
    pos2 = x[1] > 0.0
    pos3 = x[2] > 0.0
    if pos1 and pos2 and pos3:
        return 0
    if pos1 and not pos2 and not pos3:
        return 1
    if not pos1 and pos2 and not pos3:
        return 2
    if not pos1 and not pos2 and pos3:
        return 3
    return -1


@njit(**_JIT)
def _sort_solutions(count, d, k, sx, sp, slx, slp, sdist, trow, trowk, has_p):
    """Insertion sort by (distance, lexicographic position); stable."""
    for i in range(1, count):
        j = i
        while j > 0:
            less = False
            if sdist[j] < sdist[j - 1]:
                less = True
            elif sdist[j] == sdist[j - 1]:
                for t in range(d):
                    if sx[j, t] < sx[j - 1, t]:
                        less = True
                        break
                    if sx[j, t] > sx[j - 1, t]:
                        break
            if not less:
                break
            # swap rows j-1 and j
            tmp = sdist[j]
            sdist[j] = sdist[j - 1]
            sdist[j - 1] = tmp
            for t in range(d):
                trow[t] = sx[j, t]
                sx[j, t] = sx[j - 1, t]
                sx[j - 1, t] = trow[t]
            if has_p:
                for t in range(d):
                    trow[t] = sp[j, t]
                    sp[j, t] = sp[j - 1, t]
                    sp[j - 1, t] = trow[t]
            for t in range(k):
                trowk[t] = slx[j, t]
                slx[j, t] = slx[j - 1, t]
                slx[j - 1, t] = trowk[t]
            for t in range(k):
                trowk[t] = slp[j, t]
                slp[j, t] = slp[j - 1, t]
                slp[j - 1, t] = trowk[t]
            j -= 1


@njit(**_JIT)
def _constraint_newton(
    lam, offset, dirs, xi_c, xi_e, xi_s, max_iter, newton_tol,
    x1, xib, jac1, jkk, kvec,
):
    """Full-step Newton on the position constraint; mirrors newton_solve."""
    d = offset.shape[0]
    k = lam.shape[0]
    for i in range(d):
        acc = offset[i]
        for j in range(k):
            acc += dirs[i, j] * lam[j]
        x1[i] = acc
    system_eval(xi_c, xi_e, xi_s, x1, xib)
    for _ in range(max_iter):
        rn = 0.0
        for a in range(k):
            rn += xib[a] * xib[a]
        if np.sqrt(rn) <= newton_tol:
            return True
        system_jac(xi_c, xi_e, xi_s, x1, jac1)
        for a in range(k):
            for b in range(k):
                acc = 0.0
                for i in range(d):
                    acc += jac1[i, a] * dirs[i, b]
                jkk[a, b] = acc
        if not _newton_delta(jkk, xib, kvec):
            return False
        ok = True
        for j in range(k):
            lam[j] -= kvec[j]
            if not np.isfinite(lam[j]):
                ok = False
        if not ok:
            return False
        for i in range(d):
            acc = offset[i]
            for j in range(k):
                acc += dirs[i, j] * lam[j]
            x1[i] = acc
        system_eval(xi_c, xi_e, xi_s, x1, xib)
    rn = 0.0
    for a in range(k):
        rn += xib[a] * xib[a]
    return np.sqrt(rn) <= newton_tol


@njit(**_JIT)
def _try_add_rattle(
    count, lam, x, p, jac_x, gvbx,
    xi_c, xi_e, xi_s, vb_c, vb_e, minv, tau, tol_constraint,
    sx1, sp1m, slx, slp, sdist,
    x1, xib, jac1, gram, kvec, kvec2, qb, gvb1,
):
    """Complete a candidate multiplier into a stored solution, or drop it.

    Applies the residual filter, the tangential-branch filter and position
    dedup, exactly like the Python set builder.
    """
    d = x.shape[0]
    k = lam.shape[0]
    # p_half and the resulting position (same expression shapes as rattle_step)
    for i in range(d):
        ph = p[i] - 0.5 * tau * gvbx[i]
        for j in range(k):
            ph += jac_x[i, j] * lam[j]
        qb[i] = ph
        x1[i] = x[i] + tau * (minv[i] * ph)
    system_eval(xi_c, xi_e, xi_s, x1, xib)
    res = 0.0
    for a in range(k):
        res += xib[a] * xib[a]
    if np.sqrt(res) > tol_constraint:
        return count
    system_jac(xi_c, xi_e, xi_s, x1, jac1)
    for a in range(k):
        for b in range(k):
            acc = 0.0
            for i in range(d):
                acc += jac1[i, a] * (minv[i] * jac_x[i, b])
            gram[a, b] = acc
    if abs(_det_kk(gram)) <= 1e-10:
        return count
    for s in range(count):
        dd = 0.0
        for i in range(d):
            dd += (x1[i] - sx1[s, i]) ** 2
        if np.sqrt(dd) <= 1e-6:
            return count
    # momentum completion by the closed form
    poly_grad(vb_c, vb_e, x1, gvb1)
    for i in range(d):
        qb[i] = qb[i] - 0.5 * tau * gvb1[i]
    for a in range(k):
        for b in range(k):
            acc = 0.0
            for i in range(d):
                acc += jac1[i, a] * minv[i] * jac1[i, b]
            gram[a, b] = acc
    for a in range(k):
        acc = 0.0
        for i in range(d):
            acc += jac1[i, a] * (minv[i] * qb[i])
        kvec[a] = acc
    if not _gram_solve(gram, kvec, kvec2):
        return count
    dd = 0.0
    for i in range(d):
        acc = qb[i]
        for a in range(k):
            acc -= jac1[i, a] * kvec2[a]
        sp1m[count, i] = -acc
        sx1[count, i] = x1[i]
        dd += (x1[i] - x[i]) ** 2
    for j in range(k):
        slx[count, j] = lam[j]
        slp[count, j] = -kvec2[j]
    sdist[count] = np.sqrt(dd)
    return count + 1


@njit(**_JIT)
def _rattle_set(
    x, p, kind,
    xi_c, xi_e, xi_s, vb_c, vb_e, minv, tau,
    max_iter, newton_tol, n_starts, start_scale, tol_constraint,
    rng_ms,
    sx1, sp1m, slx, slp, sdist,
    gvbx, gvb1, offset, dirs, jac_x, jac1, coeffs, roots,
    lam, xib, x1, qb, jkk, gram, kvec, kvec2, starts, trow, trowk,
):
    """All projection solutions of one integrator step, sorted by distance."""
    d = x.shape[0]
    k = xi_s.shape[0] - 1
    poly_grad(vb_c, vb_e, x, gvbx)
    system_jac(xi_c, xi_e, xi_s, x, jac_x)
    for i in range(d):
        offset[i] = x[i] + tau * (minv[i] * (p[i] - 0.5 * tau * gvbx[i]))
        for j in range(k):
            dirs[i, j] = tau * (minv[i] * jac_x[i, j])
    count = 0
    if kind == 1:
        poly_line_coeffs(
            xi_c[xi_s[0]:xi_s[1]], xi_e[xi_s[0]:xi_s[1]], offset, dirs[:, 0], coeffs
        )
        nreal = _real_roots(coeffs, roots)
        for t in range(nreal):
            lam[0] = roots[t]
            count = _try_add_rattle(
                count, lam, x, p, jac_x, gvbx,
                xi_c, xi_e, xi_s, vb_c, vb_e, minv, tau, tol_constraint,
                sx1, sp1m, slx, slp, sdist,
                x1, xib, jac1, gram, kvec, kvec2, qb, gvb1,
            )
    else:
        n_try = 1 if kind == 0 else n_starts
        if kind == 2:
            for s in range(n_starts - 1):
                for j in range(k):
                    starts[s, j] = start_scale * rng_ms.standard_normal()
        for s in range(n_try):
            if s == 0:
                for j in range(k):
                    lam[j] = 0.0
            else:
                for j in range(k):
                    lam[j] = starts[s - 1, j]
            if _constraint_newton(
                lam, offset, dirs, xi_c, xi_e, xi_s, max_iter, newton_tol,
                x1, xib, jac1, jkk, kvec,
            ):
                count = _try_add_rattle(
                    count, lam, x, p, jac_x, gvbx,
                    xi_c, xi_e, xi_s, vb_c, vb_e, minv, tau, tol_constraint,
                    sx1, sp1m, slx, slp, sdist,
                    x1, xib, jac1, gram, kvec, kvec2, qb, gvb1,
                )
    _sort_solutions(count, d, k, sx1, sp1m, slx, slp, sdist, trow, trowk, True)
    return count


@njit(**_JIT)
def _rattle_lam_ref(
    y, py, x_target, xi_c, xi_e, xi_s, vb_c, vb_e, minv, tau,
    jac1, gram, kvec, kvec2, gvb1,
):
    """Closed-form position multiplier carrying (y, py) to position x_target."""
    d = y.shape[0]
    k = xi_s.shape[0] - 1
    poly_grad(vb_c, vb_e, y, gvb1)
    system_jac(xi_c, xi_e, xi_s, y, jac1)
    for a in range(k):
        for b in range(k):
            acc = 0.0
            for i in range(d):
                acc += jac1[i, a] * minv[i] * jac1[i, b]
            gram[a, b] = acc
    for a in range(k):
        acc = 0.0
        for i in range(d):
            rhs = x_target[i] - y[i] - tau * (minv[i] * py[i]) + 0.5 * tau * tau * (
                minv[i] * gvb1[i]
            )
            acc += jac1[i, a] * rhs
        kvec[a] = acc
    if not _gram_solve(gram, kvec, kvec2):
        return False
    for j in range(k):
        kvec2[j] = kvec2[j] / tau
    return True


@njit(**_JIT)
def _hmc_kernel(
    # problem data
    xi_c, xi_e, xi_s, v_c, v_e, vb_c, vb_e, mass, minv, sqrtm, poly_degree,
    # config
    tau, beta, alpha,
    solver_kind, period, newton_max_iter, newton_tol, n_starts, start_scale,
    omega_kind, rank_rows,
    tol_constraint, reversibility_tol,
    n_iter, record_every, track_comp,
    # state (mutated)
    x, p,
    # random streams
    rng_vel, rng_sel, rng_mh, rng_ms,
    # outputs
    rec_x, rec_iter, rec_acc, rec_nf, rec_nb, rec_jump, rec_stage,
    rec_exp, rec_mm, rec_fb,
    counters, fcounters, fwd_hist, bwd_hist, comp_occ, comp_tr,
):
    d = x.shape[0]
    k = xi_s.shape[0] - 1
    max_sol = max(poly_degree, n_starts, 1)

    # scratch
    w = np.empty(d)
    eta = np.empty(d)
    gvbx = np.empty(d)
    gvb1 = np.empty(d)
    offset = np.empty(d)
    x1 = np.empty(d)
    qb = np.empty(d)
    trow = np.empty(d)
    dirs = np.empty((d, k))
    jac_x = np.empty((d, k))
    jac1 = np.empty((d, k))
    coeffs = np.empty(poly_degree + 1)
    roots = np.empty(max(poly_degree, 1))
    lam = np.empty(k)
    xib = np.empty(k)
    kvec = np.empty(k)
    kvec2 = np.empty(k)
    trowk = np.empty(k)
    jkk = np.empty((k, k))
    gram = np.empty((k, k))
    starts = np.empty((max(n_starts - 1, 1), k))
    ax1 = np.empty((max_sol, d))
    ap = np.empty((max_sol, d))
    alx = np.empty((max_sol, k))
    alp = np.empty((max_sol, k))
    adist = np.empty(max_sol)
    bx1 = np.empty((max_sol, d))
    bp = np.empty((max_sol, d))
    blx = np.empty((max_sol, k))
    blp = np.empty((max_sol, k))
    bdist = np.empty(max_sol)

    refresh_scale = np.sqrt((1.0 - alpha * alpha) / beta)
    hist_cap = fwd_hist.shape[0] - 1
    ri = 0
    prev_comp = -1
    if track_comp:
        prev_comp = _sphere_comp(x)
        if prev_comp < 0:
            counters[C_ABORT_ITER] = 0
            return ABORT_COMPONENT

    for it in range(n_iter):
        # momentum refresh (first of two)
        for i in range(d):
            w[i] = sqrtm[i] * rng_vel.standard_normal()
        if not _pm_apply(xi_c, xi_e, xi_s, x, minv, w, eta, jac_x, gram, kvec, kvec2):
            counters[C_ABORT_ITER] = it
            return ABORT_SINGULAR
        for i in range(d):
            p[i] = alpha * p[i] + refresh_scale * eta[i]

        # solver effective this iteration
        if solver_kind == 0:
            kind = 0
            expensive = False
        elif period <= 1 or it % period == 0:
            kind = solver_kind
            expensive = True
        else:
            kind = 0
            expensive = False
        if expensive:
            counters[C_EXPENSIVE] += 1

        nf = _rattle_set(
            x, p, kind,
            xi_c, xi_e, xi_s, vb_c, vb_e, minv, tau,
            newton_max_iter, newton_tol, n_starts, start_scale, tol_constraint,
            rng_ms,
            ax1, ap, alx, alp, adist,
            gvbx, gvb1, offset, dirs, jac_x, jac1, coeffs, roots,
            lam, xib, x1, qb, jkk, gram, kvec, kvec2, starts, trow, trowk,
        )
        fwd_hist[nf if nf < hist_cap else hist_cap] += 1

        stage = 0
        nb = -1
        jump = 0.0
        accepted = False
        mm = False
        fb = False
        if nf > 0:
            r_sel = rng_sel.random()
            idx, prob_fwd, fb = _select(nf, r_sel, omega_kind, rank_rows)
            if fb:
                counters[C_RANKFB] += 1
            nb = _rattle_set(
                ax1[idx], ap[idx], kind,
                xi_c, xi_e, xi_s, vb_c, vb_e, minv, tau,
                newton_max_iter, newton_tol, n_starts, start_scale, tol_constraint,
                rng_ms,
                bx1, bp, blx, blp, bdist,
                gvbx, gvb1, offset, dirs, jac_x, jac1, coeffs, roots,
                lam, xib, x1, qb, jkk, gram, kvec, kvec2, starts, trow, trowk,
            )
            counters[C_INVOKED] += 1
            bwd_hist[nb if nb < hist_cap else hist_cap] += 1
            match = -1
            mdist = np.inf
            for j in range(nb):
                dd = 0.0
                for i in range(d):
                    dd += (bx1[j, i] - x[i]) ** 2
                dd = np.sqrt(dd)
                if dd < mdist:
                    mdist = dd
                    match = j
            passed = nb > 0 and (mdist <= reversibility_tol or kind == 1)
            if not passed:
                stage = 1
            else:
                counters[C_PASSED] += 1
                if _rattle_lam_ref(
                    ax1[idx], ap[idx], x, xi_c, xi_e, xi_s, vb_c, vb_e, minv, tau,
                    jac1, gram, kvec, kvec2, gvb1,
                ):
                    dd = 0.0
                    for j in range(k):
                        dd += (blx[match, j] - kvec2[j]) ** 2
                    if np.sqrt(dd) > 1e-6:
                        mm = True
                        counters[C_MMISMATCH] += 1
                prob_bwd = _omega_prob(nb, match, omega_kind, rank_rows)
                h_new = poly_eval(v_c, v_e, ax1[idx])
                h_old = poly_eval(v_c, v_e, x)
                acc_new = 0.0
                acc_old = 0.0
                for i in range(d):
                    acc_new += ap[idx, i] * (minv[i] * ap[idx, i])
                    acc_old += p[i] * (minv[i] * p[i])
                h_new += 0.5 * acc_new
                h_old += 0.5 * acc_old
                ratio = (prob_bwd / prob_fwd) * np.exp(-beta * (h_new - h_old))
                r_mh = rng_mh.random()
                if r_mh <= ratio:
                    stage = 3
                    accepted = True
                    jump = adist[idx]
                    if jump > 0.0:
                        counters[C_ACCEPTED] += 1
                        fcounters[F_SUMJ] += jump
                        if expensive:
                            counters[C_ACC_EXP] += 1
                            fcounters[F_SUMJ_EXP] += jump
                        if x[0] * ax1[idx, 0] < 0.0:
                            counters[C_LARGE] += 1
                    for i in range(d):
                        x[i] = ax1[idx, i]
                        p[i] = ap[idx, i]
                else:
                    stage = 2

        # momentum flip then second refresh (always)
        for i in range(d):
            p[i] = -p[i]
            w[i] = sqrtm[i] * rng_vel.standard_normal()
        if not _pm_apply(xi_c, xi_e, xi_s, x, minv, w, eta, jac_x, gram, kvec, kvec2):
            counters[C_ABORT_ITER] = it
            return ABORT_SINGULAR
        for i in range(d):
            p[i] = alpha * p[i] + refresh_scale * eta[i]

        for i in range(d):
            if not (np.isfinite(x[i]) and np.isfinite(p[i])):
                counters[C_ABORT_ITER] = it
                return ABORT_NAN

        if track_comp:
            comp = _sphere_comp(x)
            if comp < 0:
                counters[C_ABORT_ITER] = it
                return ABORT_COMPONENT
            comp_occ[comp] += 1
            if prev_comp >= 0 and comp != prev_comp:
                comp_tr[prev_comp, comp] += 1
            prev_comp = comp

        if (it + 1) % record_every == 0:
            rec_iter[ri] = it + 1
            for i in range(d):
                rec_x[ri, i] = x[i]
            rec_acc[ri] = 1 if accepted else 0
            rec_nf[ri] = nf
            rec_nb[ri] = nb
            rec_jump[ri] = jump
            rec_stage[ri] = stage
            rec_exp[ri] = 1 if expensive else 0
            rec_mm[ri] = 1 if mm else 0
            rec_fb[ri] = 1 if fb else 0
            ri += 1
    return 0


@njit(**_JIT)
def _frame_standard(xi_c, xi_e, xi_s, x, jac, gram, cols, used, frame):
    """Pivoted Gram-Schmidt frame of the tangent space (standard metric)."""
    d = x.shape[0]
    k = xi_s.shape[0] - 1
    system_jac(xi_c, xi_e, xi_s, x, jac)
    for a in range(k):
        for b in range(k):
            acc = 0.0
            for i in range(d):
                acc += jac[i, a] * jac[i, b]
            gram[a, b] = acc
    # cols = I - J G^-1 J^T, built column by column
    scale = max(np.max(np.abs(gram)), 0.0)
    if scale == 0.0 or not np.isfinite(scale):
        return False
    if k == 1:
        den = gram[0, 0]
        if den <= 1e-10 * max(1.0, scale):
            return False
        for c in range(d):
            s0 = jac[c, 0] / den
            for i in range(d):
                cols[i, c] = (1.0 if i == c else 0.0) - jac[i, 0] * s0
    else:
        det = np.linalg.det(gram)
        if not np.isfinite(det) or det <= (1e-10 * max(1.0, scale)) * scale ** (k - 1):
            return False
        sol = np.linalg.solve(gram, jac.T.copy())
        for c in range(d):
            for i in range(d):
                acc = 1.0 if i == c else 0.0
                for a in range(k):
                    acc -= jac[i, a] * sol[a, c]
                cols[i, c] = acc
    for i in range(d):
        used[i] = 0
    for step in range(d - k):
        best = -1
        bestn = -1.0
        for c in range(d):
            if used[c] == 1:
                continue
            nn = 0.0
            for i in range(d):
                nn += cols[i, c] * cols[i, c]
            nn = np.sqrt(max(nn, 0.0))
            if nn > bestn:
                bestn = nn
                best = c
        if bestn < 1e-10:
            return False
        used[best] = 1
        for i in range(d):
            frame[i, step] = cols[i, best] / bestn
        for c in range(d):
            if used[c] == 0:
                dot = 0.0
                for i in range(d):
                    dot += frame[i, step] * cols[i, c]
                for i in range(d):
                    cols[i, c] = cols[i, c] - dot * frame[i, step]
    return True


@njit(**_JIT)
def _try_add_mala(
    count, cvec, x, base, jac_x,
    xi_c, xi_e, xi_s, tol_constraint,
    sy, sc, sdist,
    y, xib, jac1, gram,
):
    d = x.shape[0]
    k = cvec.shape[0]
    for i in range(d):
        acc = base[i]
        for j in range(k):
            acc += jac_x[i, j] * cvec[j]
        y[i] = acc
    system_eval(xi_c, xi_e, xi_s, y, xib)
    res = 0.0
    for a in range(k):
        res += xib[a] * xib[a]
    if np.sqrt(res) > tol_constraint:
        return count
    system_jac(xi_c, xi_e, xi_s, y, jac1)
    for a in range(k):
        for b in range(k):
            acc = 0.0
            for i in range(d):
                acc += jac1[i, a] * jac_x[i, b]
            gram[a, b] = acc
    if abs(_det_kk(gram)) <= 1e-10:
        return count
    for s in range(count):
        dd = 0.0
        for i in range(d):
            dd += (y[i] - sy[s, i]) ** 2
        if np.sqrt(dd) <= 1e-6:
            return count
    dd = 0.0
    for i in range(d):
        sy[count, i] = y[i]
        dd += (y[i] - x[i]) ** 2
    for j in range(k):
        sc[count, j] = cvec[j]
    sdist[count] = np.sqrt(dd)
    return count + 1


@njit(**_JIT)
def _mala_set(
    x, frame, v, kind,
    xi_c, xi_e, xi_s, vb_c, vb_e, tau,
    max_iter, newton_tol, n_starts, start_scale, tol_constraint, poly_degree,
    rng_ms,
    sy, sc, sdist,
    gvbx, base, jac_x, jac1, coeffs, roots,
    cvec, xib, y, jkk, gram, kvec, starts, trow, trowk, slp_dummy,
):
    """All projection solutions of one tangent-move proposal, sorted."""
    d = x.shape[0]
    k = xi_s.shape[0] - 1
    poly_grad(vb_c, vb_e, x, gvbx)
    system_jac(xi_c, xi_e, xi_s, x, jac_x)
    s2t = np.sqrt(2.0 * tau)
    for i in range(d):
        acc = 0.0
        for j in range(d - k):
            acc += frame[i, j] * v[j]
        base[i] = x[i] - tau * gvbx[i] + s2t * acc
    count = 0
    if kind == 1:
        poly_line_coeffs(
            xi_c[xi_s[0]:xi_s[1]], xi_e[xi_s[0]:xi_s[1]], base, jac_x[:, 0], coeffs
        )
        nreal = _real_roots(coeffs, roots)
        for t in range(nreal):
            cvec[0] = roots[t]
            count = _try_add_mala(
                count, cvec, x, base, jac_x, xi_c, xi_e, xi_s, tol_constraint,
                sy, sc, sdist, y, xib, jac1, gram,
            )
    else:
        n_try = 1 if kind == 0 else n_starts
        if kind == 2:
            for s in range(n_starts - 1):
                for j in range(k):
                    starts[s, j] = start_scale * rng_ms.standard_normal()
        for s in range(n_try):
            if s == 0:
                for j in range(k):
                    cvec[j] = 0.0
            else:
                for j in range(k):
                    cvec[j] = starts[s - 1, j]
            if _constraint_newton(
                cvec, base, jac_x, xi_c, xi_e, xi_s, max_iter, newton_tol,
                y, xib, jac1, jkk, kvec,
            ):
                count = _try_add_mala(
                    count, cvec, x, base, jac_x, xi_c, xi_e, xi_s, tol_constraint,
                    sy, sc, sdist, y, xib, jac1, gram,
                )
    _sort_solutions(count, d, k, sy, slp_dummy, sc, slp_dummy, sdist, trow, trowk, False)
    return count


@njit(**_JIT)
def _mala_kernel(
    xi_c, xi_e, xi_s, v_c, v_e, vb_c, vb_e, poly_degree,
    tau, beta,
    solver_kind, period, newton_max_iter, newton_tol, n_starts, start_scale,
    omega_kind, rank_rows,
    tol_constraint, reversibility_tol,
    n_iter, record_every, track_comp,
    x,
    rng_vel, rng_sel, rng_mh, rng_ms,
    rec_x, rec_iter, rec_acc, rec_nf, rec_nb, rec_jump, rec_stage,
    rec_exp, rec_mm, rec_fb,
    counters, fcounters, fwd_hist, bwd_hist, comp_occ, comp_tr,
):
    d = x.shape[0]
    k = xi_s.shape[0] - 1
    max_sol = max(poly_degree, n_starts, 1)
    inv_sqrt_beta = 1.0 / np.sqrt(beta)

    gvbx = np.empty(d)
    base = np.empty(d)
    y = np.empty(d)
    trow = np.empty(d)
    v = np.empty(d - k)
    vback = np.empty(d - k)
    jac_x = np.empty((d, k))
    jac1 = np.empty((d, k))
    frame = np.empty((d, d - k))
    frame_y = np.empty((d, d - k))
    cols = np.empty((d, d))
    used = np.zeros(d, dtype=np.uint8)
    coeffs = np.empty(poly_degree + 1)
    roots = np.empty(max(poly_degree, 1))
    cvec = np.empty(k)
    xib = np.empty(k)
    kvec = np.empty(k)
    kvec2 = np.empty(k)
    trowk = np.empty(k)
    jkk = np.empty((k, k))
    gram = np.empty((k, k))
    starts = np.empty((max(n_starts - 1, 1), k))
    ay = np.empty((max_sol, d))
    ac = np.empty((max_sol, k))
    adist = np.empty(max_sol)
    by = np.empty((max_sol, d))
    bc = np.empty((max_sol, k))
    bdist = np.empty(max_sol)
    slp_dummy = np.empty((max_sol, k))

    hist_cap = fwd_hist.shape[0] - 1
    ri = 0
    prev_comp = -1
    if track_comp:
        prev_comp = _sphere_comp(x)
        if prev_comp < 0:
            counters[C_ABORT_ITER] = 0
            return ABORT_COMPONENT

    for it in range(n_iter):
        for j in range(d - k):
            v[j] = rng_vel.standard_normal() * inv_sqrt_beta
        if not _frame_standard(xi_c, xi_e, xi_s, x, jac_x, gram, cols, used, frame):
            counters[C_ABORT_ITER] = it
            return ABORT_SINGULAR

        if solver_kind == 0:
            kind = 0
            expensive = False
        elif period <= 1 or it % period == 0:
            kind = solver_kind
            expensive = True
        else:
            kind = 0
            expensive = False
        if expensive:
            counters[C_EXPENSIVE] += 1

        nf = _mala_set(
            x, frame, v, kind,
            xi_c, xi_e, xi_s, vb_c, vb_e, tau,
            newton_max_iter, newton_tol, n_starts, start_scale, tol_constraint,
            poly_degree, rng_ms,
            ay, ac, adist,
            gvbx, base, jac_x, jac1, coeffs, roots,
            cvec, xib, y, jkk, gram, kvec, starts, trow, trowk, slp_dummy,
        )
        fwd_hist[nf if nf < hist_cap else hist_cap] += 1

        stage = 0
        nb = -1
        jump = 0.0
        accepted = False
        mm = False
        fb = False
        if nf > 0:
            r_sel = rng_sel.random()
            idx, prob_fwd, fb = _select(nf, r_sel, omega_kind, rank_rows)
            if fb:
                counters[C_RANKFB] += 1
            if not _frame_standard(xi_c, xi_e, xi_s, ay[idx], jac_x, gram, cols, used, frame_y):
                counters[C_ABORT_ITER] = it
                return ABORT_SINGULAR
            # unique tangential velocity at the proposal that reaches x
            poly_grad(vb_c, vb_e, ay[idx], gvbx)
            s2t = np.sqrt(2.0 * tau)
            for j in range(d - k):
                acc = 0.0
                for i in range(d):
                    acc += frame_y[i, j] * (x[i] - ay[idx, i] + tau * gvbx[i])
                vback[j] = acc / s2t
            nb = _mala_set(
                ay[idx], frame_y, vback, kind,
                xi_c, xi_e, xi_s, vb_c, vb_e, tau,
                newton_max_iter, newton_tol, n_starts, start_scale, tol_constraint,
                poly_degree, rng_ms,
                by, bc, bdist,
                gvbx, base, jac_x, jac1, coeffs, roots,
                cvec, xib, y, jkk, gram, kvec, starts, trow, trowk, slp_dummy,
            )
            counters[C_INVOKED] += 1
            bwd_hist[nb if nb < hist_cap else hist_cap] += 1
            match = -1
            mdist = np.inf
            for j in range(nb):
                dd = 0.0
                for i in range(d):
                    dd += (by[j, i] - x[i]) ** 2
                dd = np.sqrt(dd)
                if dd < mdist:
                    mdist = dd
                    match = j
            passed = nb > 0 and (mdist <= reversibility_tol or kind == 1)
            if not passed:
                stage = 1
            else:
                counters[C_PASSED] += 1
                # closed-form multiplier from the proposal back to x
                poly_grad(vb_c, vb_e, ay[idx], gvbx)
                system_jac(xi_c, xi_e, xi_s, ay[idx], jac1)
                for a in range(k):
                    for b in range(k):
                        acc = 0.0
                        for i in range(d):
                            acc += jac1[i, a] * jac1[i, b]
                        gram[a, b] = acc
                for a in range(k):
                    acc = 0.0
                    for i in range(d):
                        acc += jac1[i, a] * (x[i] - ay[idx, i] + tau * gvbx[i])
                    kvec[a] = acc
                if _gram_solve(gram, kvec, kvec2):
                    dd = 0.0
                    for j in range(k):
                        dd += (bc[match, j] - kvec2[j]) ** 2
                    if np.sqrt(dd) > 1e-6:
                        mm = True
                        counters[C_MMISMATCH] += 1
                prob_bwd = _omega_prob(nb, match, omega_kind, rank_rows)
                e_new = poly_eval(v_c, v_e, ay[idx])
                e_old = poly_eval(v_c, v_e, x)
                acc_new = 0.0
                acc_old = 0.0
                for j in range(d - k):
                    acc_new += vback[j] * vback[j]
                    acc_old += v[j] * v[j]
                e_new += 0.5 * acc_new
                e_old += 0.5 * acc_old
                ratio = (prob_bwd / prob_fwd) * np.exp(-beta * (e_new - e_old))
                r_mh = rng_mh.random()
                if r_mh <= ratio:
                    stage = 3
                    accepted = True
                    jump = adist[idx]
                    if jump > 0.0:
                        counters[C_ACCEPTED] += 1
                        fcounters[F_SUMJ] += jump
                        if expensive:
                            counters[C_ACC_EXP] += 1
                            fcounters[F_SUMJ_EXP] += jump
                        if x[0] * ay[idx, 0] < 0.0:
                            counters[C_LARGE] += 1
                    for i in range(d):
                        x[i] = ay[idx, i]
                else:
                    stage = 2

        for i in range(d):
            if not np.isfinite(x[i]):
                counters[C_ABORT_ITER] = it
                return ABORT_NAN

        if track_comp:
            comp = _sphere_comp(x)
            if comp < 0:
                counters[C_ABORT_ITER] = it
                return ABORT_COMPONENT
            comp_occ[comp] += 1
            if prev_comp >= 0 and comp != prev_comp:
                comp_tr[prev_comp, comp] += 1
            prev_comp = comp

        if (it + 1) % record_every == 0:
            rec_iter[ri] = it + 1
            for i in range(d):
                rec_x[ri, i] = x[i]
            rec_acc[ri] = 1 if accepted else 0
            rec_nf[ri] = nf
            rec_nb[ri] = nb
            rec_jump[ri] = jump
            rec_stage[ri] = stage
            rec_exp[ri] = 1 if expensive else 0
            rec_mm[ri] = 1 if mm else 0
            rec_fb[ri] = 1 if fb else 0
            ri += 1
    return 0


_SOLVER_CODES = {"newton_single": 0, "poly_all_roots": 1, "newton_multistart": 2}


def run_chain_kernel(cm, cfg, x, p, rngs, stats, sinks, record_every, component_of):
    """Drive one compiled chain and translate buffers into `ChainStats`."""
    from .sampler import IterationRecord, Stage

    d, k = cm.ambient_dim, cm.codim
    poly = cm.poly
    mass = cfg.mass_for(d)
    solver = cfg.solver
    solver_kind = _SOLVER_CODES[solver.kind]
    poly_degree = poly.components[0].degree if k == 1 else 0
    omega_kind = 1 if cfg.omega.kind == "ranked" else 0
    if omega_kind == 1:
        n_max = max(cfg.omega.rank_table.keys())
        rank_rows = np.full((n_max, n_max), np.nan)
        for n, row in cfg.omega.rank_table.items():
            rank_rows[n - 1, : len(row)] = row
    else:
        rank_rows = np.full((1, 1), np.nan)

    n_iter = cfg.n_iterations
    n_rec = n_iter // record_every
    rec_x = np.empty((n_rec, d))
    rec_iter = np.empty(n_rec, dtype=np.int64)
    rec_acc = np.empty(n_rec, dtype=np.int8)
    rec_nf = np.empty(n_rec, dtype=np.int32)
    rec_nb = np.empty(n_rec, dtype=np.int32)
    rec_jump = np.empty(n_rec)
    rec_stage = np.empty(n_rec, dtype=np.int8)
    rec_exp = np.empty(n_rec, dtype=np.int8)
    rec_mm = np.empty(n_rec, dtype=np.int8)
    rec_fb = np.empty(n_rec, dtype=np.int8)
    counters = np.zeros(N_COUNTERS, dtype=np.int64)
    fcounters = np.zeros(N_FCOUNTERS)
    max_sol = max(poly_degree, solver.n_starts, 1)
    fwd_hist = np.zeros(max_sol + 2, dtype=np.int64)
    bwd_hist = np.zeros(max_sol + 2, dtype=np.int64)
    comp_occ = np.zeros(4, dtype=np.int64)
    comp_tr = np.zeros((4, 4), dtype=np.int64)
    track = component_of is not None

    x = np.ascontiguousarray(np.asarray(x, dtype=np.float64))
    start_scale = solver.resolved_start_scale(d)
    if cfg.algorithm == "hmc":
        p = np.ascontiguousarray(np.asarray(p, dtype=np.float64))
        code = _hmc_kernel(
            poly.coeffs, poly.expts, poly.starts,
            cfg.potential.poly.coeffs, cfg.potential.poly.expts,
            cfg.proposal_potential.poly.coeffs, cfg.proposal_potential.poly.expts,
            mass.diag, mass.inv_diag, mass.sqrt_diag,
            poly_degree,
            cfg.tau, cfg.beta, cfg.alpha,
            solver_kind, solver.period, solver.max_iter, solver.newton_tol,
            solver.n_starts, start_scale,
            omega_kind, rank_rows,
            cfg.tol_constraint, cfg.reversibility_tol,
            n_iter, record_every, track,
            x, p,
            rngs.velocity, rngs.selection, rngs.metropolis, rngs.multistart,
            rec_x, rec_iter, rec_acc, rec_nf, rec_nb, rec_jump, rec_stage,
            rec_exp, rec_mm, rec_fb,
            counters, fcounters, fwd_hist, bwd_hist, comp_occ, comp_tr,
        )
    else:
        code = _mala_kernel(
            poly.coeffs, poly.expts, poly.starts,
            cfg.potential.poly.coeffs, cfg.potential.poly.expts,
            cfg.proposal_potential.poly.coeffs, cfg.proposal_potential.poly.expts,
            poly_degree,
            cfg.tau, cfg.beta,
            solver_kind, solver.period, solver.max_iter, solver.newton_tol,
            solver.n_starts, start_scale,
            omega_kind, rank_rows,
            cfg.tol_constraint, cfg.reversibility_tol,
            n_iter, record_every, track,
            x,
            rngs.velocity, rngs.selection, rngs.metropolis, rngs.multistart,
            rec_x, rec_iter, rec_acc, rec_nf, rec_nb, rec_jump, rec_stage,
            rec_exp, rec_mm, rec_fb,
            counters, fcounters, fwd_hist, bwd_hist, comp_occ, comp_tr,
        )
    if code != 0:
        raise ChainAbort(int(counters[C_ABORT_ITER]), _ABORT_MESSAGES[int(code)])

    stats.n_total += n_iter
    for i, c in enumerate(fwd_hist):
        if c:
            stats.n_forward_hist[i] = stats.n_forward_hist.get(i, 0) + int(c)
    for i, c in enumerate(bwd_hist):
        if c:
            stats.n_backward_hist[i] = stats.n_backward_hist.get(i, 0) + int(c)
    stats.n_reversibility_invoked += int(counters[C_INVOKED])
    stats.n_reversibility_passed += int(counters[C_PASSED])
    stats.n_accepted_moves += int(counters[C_ACCEPTED])
    stats.sum_jump_distance += float(fcounters[F_SUMJ])
    stats.n_large_jumps += int(counters[C_LARGE])
    stats.n_expensive += int(counters[C_EXPENSIVE])
    stats.n_accepted_expensive += int(counters[C_ACC_EXP])
    stats.sum_jump_expensive += float(fcounters[F_SUMJ_EXP])
    stats.n_multiplier_mismatch += int(counters[C_MMISMATCH])
    stats.n_rank_fallback += int(counters[C_RANKFB])
    if track:
        for i in range(4):
            if comp_occ[i]:
                stats.component_occupancy[i] = (
                    stats.component_occupancy.get(i, 0) + int(comp_occ[i])
                )
            for j in range(4):
                if comp_tr[i, j]:
                    stats.component_transitions[(i, j)] = (
                        stats.component_transitions.get((i, j), 0) + int(comp_tr[i, j])
                    )

    if sinks:
        for ri in range(n_rec):
            rec = IterationRecord(
                iteration=int(rec_iter[ri]),
                x=rec_x[ri].copy(),
                accepted=bool(rec_acc[ri]),
                n_forward=int(rec_nf[ri]),
                n_backward=int(rec_nb[ri]),
                jump_distance=float(rec_jump[ri]),
                stage=Stage(int(rec_stage[ri])),
                expensive=bool(rec_exp[ri]),
                multiplier_mismatch=bool(rec_mm[ri]),
                rank_fallback=bool(rec_fb[ri]),
            )
            for sink in sinks:
                sink(rec)
    return x, (p if cfg.algorithm == "hmc" else None)
