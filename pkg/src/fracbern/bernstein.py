"""Auxiliary functions and the inequality/identity suite built on them.

The composite functions checked here all have the shape

    cutoff^2 * (derivative-like term)^2 + weight * (zeroth-order term)^2

with the derivative slot filled by a directional derivative, its
positive part, the full gradient, or an incremental quotient.  The
algebraic identity relating the operator applied to such a composite to
the operator applied to its pieces holds exactly; the inequalities
derived from it hold once the zeroth-order weight passes a threshold,
which this module locates by doubling plus bisection and then verifies
honestly (fresh quadrature of the whole composite at the final weights).

Every verdict compares a residual against the summed quadrature error
estimates; thresholds that do not exist below the search cap produce a
counterexample report instead of a silent failure.
"""

import numpy as np

from .kernels import fractional_kernel, as_points, MeasureOnUnit
from .funcspace import (SmoothFunction, constant, directional_derivative,
                        positive_part_square, incremental_quotient,
                        averaged_square, averaged_square_root, make_cutoff)
from .nonlocal_ops import (singular_integral, singular_integral_batch,
                           apply_fractional, apply_nonlocal, default_plan,
                           QuadraturePlan)
from ._quad import geometric_edges, panel_nodes, gl_rule

__all__ = [
    "InequalityReport", "DeltaSigmaSelection", "SearchFailure",
    "doubling_bisection", "check_first_order_fraclap",
    "check_second_order_fraclap", "check_positive_part_global",
    "check_supert_identity", "check_conto_traccia", "compute_J_terms",
    "check_kernel_radial_identity", "check_downstairs_sharmonic",
    "check_incremental_classical", "odd_taper", "sigma_affinity",
]

SIGMA_CAP = 1e8


class SearchFailure(Exception):
    """No admissible threshold below the cap; carries the counterexample."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class InequalityReport:
    """Per-probe left/right sides with quadrature errors and a verdict."""

    def __init__(self, probes, lhs, rhs, errors, params, slack=0.0):
        self.probes = np.asarray(probes)
        self.lhs = np.asarray(lhs, dtype=float)
        self.rhs = np.asarray(rhs, dtype=float)
        self.errors = np.asarray(errors, dtype=float)
        self.params = dict(params)
        self.residual = self.lhs - self.rhs
        self.margins = self.rhs + self.errors + slack - self.lhs
        self.verdict = bool(np.all(self.margins >= 0.0))
        self.worst_margin = float(np.min(self.margins))

    def to_dict(self):
        return {
            "check": self.params.get("check", ""),
            "variant": self.params.get("variant", ""),
            "params": {k: v for k, v in self.params.items()
                       if isinstance(v, (int, float, str, bool))},
            "probes": self.probes.tolist(),
            "residuals": self.residual.tolist(),
            "errors": self.errors.tolist(),
            "verdict": self.verdict,
            "thresholds": {k: self.params[k] for k in
                           ("sigma0", "tau0", "sigma_eps", "delta")
                           if k in self.params},
        }


class DeltaSigmaSelection:
    """Outcome of the taper-scale selection: delta with |J3| <= eps^2."""

    def __init__(self, delta, J3, sigma_eps, eps):
        if abs(J3) > eps * eps * (1 + 1e-9):
            raise ValueError("selection rule violated: |J3| > eps^2")
        self.delta = float(delta)
        self.J3 = float(J3)
        self.sigma_eps = float(sigma_eps)
        self.eps = float(eps)


def doubling_bisection(feasible, cap=SIGMA_CAP, steps=20):
    """Smallest weight passing `feasible`, by doubling then bisection."""
    sigma = 1.0
    while not feasible(sigma):
        sigma *= 2.0
        if sigma > cap:
            raise SearchFailure("no admissible weight below cap %g" % cap)
    lo, hi = 0.0, sigma
    for _ in range(steps):
        mid = 0.5 * (lo + hi)
        if feasible(mid):
            hi = mid
        else:
            lo = mid
    return hi


def _si(kernel, G, x, plan):
    """singular_integral that degrades gracefully on kinked integrands:
    a tolerance miss returns the partial value with its honest (larger)
    error estimate, which the verdicts then have to absorb."""
    from .nonlocal_ops import QuadratureFailure
    try:
        return singular_integral(kernel, G, x, plan)
    except QuadratureFailure as qf:
        return qf.partial


def _lenient(n):
    return default_plan(n).scaled(strict=False, max_refine=2)


def _apply(op_kernel, func, x, plan):
    """L applied to func at x: kernel, measure, or fractional order."""
    if isinstance(op_kernel, MeasureOnUnit):
        from .nonlocal_ops import apply_superposition
        return apply_superposition(op_kernel, func, x, plan)
    if np.isscalar(op_kernel):
        return apply_fractional(float(op_kernel), func, x, plan)
    return apply_nonlocal(op_kernel, func, x, plan)


# -- first-order key inequality -------------------------------------------------

def _first_order_pieces(op, u, eta, e, probes, plan):
    """Per-probe split residual(sigma) = A + sigma * S for the composite
    eta^2 (d_e u)^2 + sigma u^2 against its two-term majorant."""
    du = directional_derivative(u, e)
    aux1 = (eta * eta) * (du * du)
    u2 = u * u
    A = np.empty(len(probes))
    S = np.empty(len(probes))
    errA = np.empty(len(probes))
    errS = np.empty(len(probes))
    for i, x in enumerate(probes):
        l_aux1 = _apply(op, aux1, x, plan)
        l_du = _apply(op, du, x, plan)
        l_u = _apply(op, u, x, plan)
        l_u2 = _apply(op, u2, x, plan)
        ev = float(eta(np.atleast_2d(x))[0]) if eta.n == u.n else 1.0
        dv = float(du(np.atleast_2d(x))[0])
        uv = float(u(np.atleast_2d(x))[0])
        A[i] = l_aux1.value - 2 * ev ** 2 * dv * l_du.value
        S[i] = l_u2.value - 2 * uv * l_u.value
        errA[i] = l_aux1.error + 2 * ev ** 2 * abs(dv) * l_du.error
        errS[i] = l_u2.error + 2 * abs(uv) * l_u.error
    return A, S, errA, errS


def check_first_order_fraclap(u, eta, e, s, probes, plan=None,
                              verify_multipliers=(1.0, 2.0, 4.0)):
    """Threshold sigma0 for the gradient-flavored key inequality.

    Finds the smallest sigma with

      (-Delta)^s (eta^2 (d_e u)^2 + sigma u^2)
          <= 2 eta^2 d_e u (-Delta)^s d_e u + 2 sigma u (-Delta)^s u

    at every probe, then re-verifies at sigma0 times the given
    multipliers with a fresh quadrature of the full composite.
    """
    if plan is None:
        plan = _lenient(u.n)
    probes = as_points(probes, u.n)
    A, S, errA, errS = _first_order_pieces(s, u, eta, e, probes, plan)

    def feasible(sig):
        return np.all(A + sig * S <= errA + sig * errS)

    sigma0 = doubling_bisection(feasible)
    reports = []
    du = directional_derivative(u, e)
    u2 = u * u
    for mult in verify_multipliers:
        sig = sigma0 * mult
        aux = (eta * eta) * (du * du) + u2 * sig
        lhs = np.empty(len(probes))
        rhs = np.empty(len(probes))
        err = np.empty(len(probes))
        for i, x in enumerate(probes):
            l_aux = _apply(s, aux, x, plan)
            l_du = _apply(s, du, x, plan)
            l_u = _apply(s, u, x, plan)
            ev = float(eta(np.atleast_2d(x))[0])
            dv = float(du(np.atleast_2d(x))[0])
            uv = float(u(np.atleast_2d(x))[0])
            lhs[i] = l_aux.value
            rhs[i] = 2 * ev ** 2 * dv * l_du.value + 2 * sig * uv * l_u.value
            err[i] = l_aux.error + 2 * ev ** 2 * abs(dv) * l_du.error \
                + 2 * sig * abs(uv) * l_u.error
        reports.append(InequalityReport(
            probes, lhs, rhs, err,
            {"check": "first-order", "variant": "directional", "s": s,
             "sigma": sig, "sigma0": sigma0}))
    return sigma0, reports


def check_first_order_batch(u, eta, e, s, probes, plan=None):
    """Batched variant of the sigma0 search (values only, budgeted errors)."""
    if plan is None:
        plan = _lenient(u.n)
    probes = as_points(probes, u.n)
    du = directional_derivative(u, e)
    aux1 = (eta * eta) * (du * du)
    u2 = u * u
    K = fractional_kernel(u.n, s)
    v_aux1, e_aux1 = singular_integral_batch(K, aux1, probes, plan)
    v_du, e_du = singular_integral_batch(K, du, probes, plan)
    v_u, e_u = singular_integral_batch(K, u, probes, plan)
    v_u2, e_u2 = singular_integral_batch(K, u2, probes, plan)
    ev = eta(probes)
    dv = du(probes)
    uv = u(probes)
    A = -v_aux1 + 2 * ev ** 2 * dv * v_du
    S = -v_u2 + 2 * uv * v_u
    errA = e_aux1 + 2 * ev ** 2 * np.abs(dv) * e_du
    errS = e_u2 + 2 * np.abs(uv) * e_u
    return A, S, errA, errS


def sigma_affinity(u, eta, e, s, x, sigmas, plan=None, op=None):
    """Full-quadrature residuals at three weights plus the slope oracle.

    Returns (residuals, collinearity, slope_fit, slope_direct) where
    collinearity is the relative defect of the middle residual from the
    line through the outer two, and slope_direct is the independently
    quadratured -integral of |u(x) - u(y)|^2 K.
    """
    if plan is None:
        plan = _lenient(u.n)
    if len(sigmas) != 3:
        raise ValueError("need exactly three weights")
    du = directional_derivative(u, e)
    u2 = u * u
    res = []
    for sig in sigmas:
        aux = (eta * eta) * (du * du) + u2 * float(sig)
        l_aux = _apply(s if op is None else op, aux, x, plan)
        l_du = _apply(s if op is None else op, du, x, plan)
        l_u = _apply(s if op is None else op, u, x, plan)
        ev = float(eta(np.atleast_2d(x))[0])
        dv = float(du(np.atleast_2d(x))[0])
        uv = float(u(np.atleast_2d(x))[0])
        res.append(l_aux.value - 2 * ev ** 2 * dv * l_du.value
                   - 2 * sig * uv * l_u.value)
    res = np.asarray(res)
    lam = (sigmas[1] - sigmas[0]) / (sigmas[2] - sigmas[0])
    mid_line = res[0] + lam * (res[2] - res[0])
    scale = max(np.max(np.abs(res)), 1e-300)
    collinearity = abs(res[1] - mid_line) / scale
    slope_fit = (res[2] - res[0]) / (sigmas[2] - sigmas[0])
    K = fractional_kernel(u.n, s) if op is None or np.isscalar(op) else op
    uc = float(u(np.atleast_2d(x))[0])
    sq = (u - uc) * (u - uc)
    slope_direct = -_si(K, sq, x, plan).value
    return res, float(collinearity), float(slope_fit), float(slope_direct)


# -- second-order (positive part, two cutoffs) ---------------------------------

def _second_directional(u, e):
    return directional_derivative(directional_derivative(u, e), e)


def _second_order_pieces(order_s, u, eta_R, etab_R, kappa, e, R, probes, plan):
    """Residual(tau, sigma) = P0 + tau*P1 + sigma*P2 per probe."""
    du = directional_derivative(u, e)
    ddu = _second_directional(u, e)
    pps = positive_part_square(ddu)
    aux2 = (etab_R * etab_R) * pps
    aux1 = (eta_R * eta_R) * (du * du)
    ushift = u - float(kappa)
    u2s = ushift * ushift
    m = len(probes)
    P0 = np.empty(m); P1 = np.empty(m); P2 = np.empty(m)
    E0 = np.empty(m); E1 = np.empty(m); E2 = np.empty(m)
    for i, x in enumerate(probes):
        xm = np.atleast_2d(x)
        l_aux2 = _apply(order_s, aux2, x, plan)
        l_ddu = _apply(order_s, ddu, x, plan)
        l_aux1 = _apply(order_s, aux1, x, plan)
        l_du = _apply(order_s, du, x, plan)
        l_u2s = _apply(order_s, u2s, x, plan)
        l_us = _apply(order_s, ushift, x, plan)
        bv = float(etab_R(xm)[0])
        ev = float(eta_R(xm)[0])
        ddv = max(float(ddu(xm)[0]), 0.0)
        dv = float(du(xm)[0])
        usv = float(ushift(xm)[0])
        P0[i] = l_aux2.value - 2 * bv ** 2 * ddv * l_ddu.value
        E0[i] = l_aux2.error + 2 * bv ** 2 * ddv * l_ddu.error
        P1[i] = (l_aux1.value - 2 * ev ** 2 * dv * l_du.value) / R ** 2
        E1[i] = (l_aux1.error + 2 * ev ** 2 * abs(dv) * l_du.error) / R ** 2
        P2[i] = (l_u2s.value - 2 * usv * l_us.value) / R ** 4
        E2[i] = (l_u2s.error + 2 * abs(usv) * l_us.error) / R ** 4
    return (P0, P1, P2), (E0, E1, E2)


def check_second_order_fraclap(u, s, R=1.0, e=None, kappa=None, probes=None,
                               eta_R=None, etab_R=None, plan=None,
                               measure=None):
    """Threshold pair (tau0, sigma0) for the three-term composite

        etabar^2 (dd_e u)_+^2 + tau R^-2 eta^2 (d_e u)^2
            + sigma R^-4 (u - kappa)^2

    against its term-by-term majorant, for a single order s in [0, 1] or
    a measure on [0, 1] (atomwise integration).  kappa defaults to the
    sampled supremum of u over B_R.
    """
    if plan is None:
        plan = _lenient(u.n)
    if e is None:
        e = np.zeros(u.n); e[0] = 1.0
    if eta_R is None:
        eta_R = make_cutoff(R / 2.0, R, n=u.n)
    if etab_R is None:
        etab_R = make_cutoff(R / 8.0, R / 2.0, n=u.n)
    if kappa is None:
        grid = np.linspace(-R, R, 81)
        pts = grid.reshape(-1, 1) if u.n == 1 else \
            np.stack(np.meshgrid(grid, grid), -1).reshape(-1, 2)
        pts = pts[np.linalg.norm(pts, axis=1) <= R]
        kappa = float(np.max(u(pts)))
    if probes is None:
        probes = np.linspace(-1.4 * R, 1.4 * R, 15).reshape(-1, 1)
    probes = as_points(probes, u.n)

    orders = [(float(s), 1.0)] if measure is None else list(measure)
    acc_P = None
    for s_i, w_i in orders:
        (P0, P1, P2), (E0, E1, E2) = _second_order_pieces(
            s_i, u, eta_R, etab_R, kappa, e, R, probes, plan)
        if acc_P is None:
            acc_P = [w_i * P0, w_i * P1, w_i * P2]
            acc_E = [w_i * E0, w_i * E1, w_i * E2]
        else:
            for k, arr in enumerate((P0, P1, P2)):
                acc_P[k] += w_i * arr
            for k, arr in enumerate((E0, E1, E2)):
                acc_E[k] += w_i * arr
    P0, P1, P2 = acc_P
    E0, E1, E2 = acc_E

    def feasible_pair(tau, sig_ratio):
        sig = sig_ratio * tau
        return np.all(P0 + tau * P1 + sig * P2
                      <= E0 + tau * E1 + sig * E2)

    tau = 1.0
    found = None
    while tau <= SIGMA_CAP and found is None:
        try:
            ratio = doubling_bisection(lambda r: feasible_pair(tau, r))
            found = (tau, ratio)
        except SearchFailure:
            tau *= 2.0
    if found is None:
        raise SearchFailure("no (tau, sigma) thresholds below cap")
    tau0, ratio0 = found
    resid = P0 + tau0 * P1 + ratio0 * tau0 * P2
    err = E0 + tau0 * E1 + ratio0 * tau0 * E2
    resid2 = P0 + 2 * tau0 * P1 + 2 * ratio0 * 2 * tau0 * P2
    err2 = E0 + 2 * tau0 * E1 + 4 * ratio0 * tau0 * E2
    rep = InequalityReport(
        probes, resid, np.zeros_like(resid), err,
        {"check": "second-order", "variant": "positive-part",
         "s": (s if measure is None else "measure"), "R": R,
         "tau0": tau0, "sigma0": ratio0 * tau0, "kappa": kappa,
         "repass_at_doubled": bool(np.all(resid2 <= err2))})
    return (tau0, ratio0 * tau0), rep


def check_positive_part_global(v, eta, e, s, probes, plan=None):
    """sigma0 for the global positive-part composite
    eta^2 (d_e v)_+^2 + sigma v^2 (one-sided convention at zeros)."""
    if plan is None:
        plan = _lenient(v.n)
    probes = as_points(probes, v.n)
    dv = directional_derivative(v, e)
    pps = positive_part_square(dv)
    aux1 = (eta * eta) * pps
    v2 = v * v
    m = len(probes)
    A = np.empty(m); S = np.empty(m); errA = np.empty(m); errS = np.empty(m)
    for i, x in enumerate(probes):
        xm = np.atleast_2d(x)
        l_aux1 = _apply(s, aux1, x, plan)
        l_dv = _apply(s, dv, x, plan)
        l_v = _apply(s, v, x, plan)
        l_v2 = _apply(s, v2, x, plan)
        ev = float(eta(xm)[0])
        dvp = max(float(dv(xm)[0]), 0.0)   # 0 * (unbounded) := 0 convention
        vv = float(v(xm)[0])
        A[i] = l_aux1.value - 2 * ev ** 2 * dvp * l_dv.value
        S[i] = l_v2.value - 2 * vv * l_v.value
        errA[i] = l_aux1.error + 2 * ev ** 2 * dvp * l_dv.error
        errS[i] = l_v2.error + 2 * abs(vv) * l_v.error

    def feasible(sig):
        return np.all(A + sig * S <= errA + sig * errS)

    sigma0 = doubling_bisection(feasible)
    rep = InequalityReport(
        probes, A + sigma0 * S, np.zeros(m), errA + sigma0 * errS,
        {"check": "positive-part-global", "variant": "positive-part",
         "s": s, "sigma0": sigma0})
    return sigma0, rep


# -- the exact identity (all variants) ------------------------------------------

def check_supert_identity(kernel, base, eta, weight, variant, x, e=None,
                          h=0.1, plan=None):
    """|D1 - D2| for the exact composite identity at one probe.

    D1 is the operator route: L(aux) minus twice the composite pieces
    times L of each piece.  D2 is the bilinear route: the cross term
    with the cutoff increment, minus the two squared-difference
    integrals.  The two agree exactly; the returned residual must sit
    inside the summed quadrature error budget.

    variant: directional | positive-part | gradient | incremental.
    """
    if plan is None:
        plan = _lenient(base.n)
    if e is None:
        e = np.zeros(base.n); e[0] = 1.0
    x = as_points(x, base.n).reshape(-1)
    xm = x.reshape(1, -1)
    n = base.n

    if variant == "directional":
        gs = [directional_derivative(base, e)]
        gsq = gs[0] * gs[0]
        zeroth = base
    elif variant == "positive-part":
        dv = directional_derivative(base, e)
        gsq = positive_part_square(dv)
        gs = ["pp", dv]
        zeroth = base
    elif variant == "gradient":
        gs = [directional_derivative(base, np.eye(n)[i]) for i in range(n)]
        gsq = gs[0] * gs[0]
        for gi in gs[1:]:
            gsq = gsq + gi * gi
        zeroth = base
    elif variant == "incremental":
        gs = [incremental_quotient(base, h, e)]
        gsq = gs[0] * gs[0]
        zeroth = averaged_square_root(base, h, e)
    else:
        raise ValueError("unknown variant %r" % variant)

    aux = (eta * eta) * gsq
    if variant == "incremental":
        z2 = averaged_square(base, h, e)
    else:
        z2 = zeroth * zeroth
    aux_full = aux + z2 * float(weight)

    errors = 0.0
    l_aux = apply_nonlocal(kernel, aux_full, x, plan)
    errors += l_aux.error
    ev = float(eta(xm)[0])
    zv = float(zeroth(xm)[0])
    l_z = apply_nonlocal(kernel, zeroth, x, plan)
    errors += 2 * weight * abs(zv) * l_z.error
    D1 = l_aux.value - 2 * weight * zv * l_z.value

    if variant == "positive-part":
        dv = gs[1]
        gval = max(float(dv(xm)[0]), 0.0)
        gfun_pp = _positive_part(dv)
        if gval > 0.0:
            l_g = apply_nonlocal(kernel, gfun_pp, x, plan)
            D1 -= 2 * ev ** 2 * gval * l_g.value
            errors += 2 * ev ** 2 * gval * l_g.error
        gpair = [(gfun_pp, gval)]
    else:
        gpair = []
        for gi in gs:
            gv = float(gi(xm)[0])
            l_g = apply_nonlocal(kernel, gi, x, plan)
            D1 -= 2 * ev ** 2 * gv * l_g.value
            errors += 2 * ev ** 2 * abs(gv) * l_g.error
            gpair.append((gi, gv))

    # bilinear route
    cross = 0.0
    diff_eg = 0.0
    for gi, gv in gpair:
        if abs(2.0 * ev * gv) * gi.sup > 1e-300:
            W = (constant(ev, n) - eta) * gi * (2.0 * ev * gv)
            si = _si(kernel, W, x, plan)
            cross += si.value
            errors += si.error
        egx = constant(ev * gv, n) - eta * gi
        si2 = _si(kernel, egx * egx, x, plan)
        diff_eg += si2.value
        errors += si2.error
    zc = constant(zv, n) - zeroth
    si3 = _si(kernel, zc * zc, x, plan)
    diff_z = si3.value
    errors += weight * si3.error
    D2 = cross - diff_eg - weight * diff_z
    return {
        "D1": D1, "D2": D2, "residual": abs(D1 - D2),
        "error_budget": errors, "pass": bool(abs(D1 - D2) <= 10 * errors),
        "variant": variant,
    }


def _positive_part(f):
    """(f)_+ as a composite (C^{1,1} from below; fine a.e.)."""

    def val(x):
        return np.maximum(f._value(x), 0.0)

    def grad(x):
        ind = (f._value(x) > 0).astype(float)
        return ind[:, None] * f._gradient(x)

    def hess(x):
        ind = (f._value(x) > 0).astype(float)
        return ind[:, None, None] * f._hessian(x)

    t = f.tail
    return SmoothFunction(f.n, val, grad, hess, sup=f.sup,
                          grad_sup=f.grad_sup, hess_sup=f.hess_sup,
                          tail=type(t)(max(t.limit, 0.0), t.resid,
                                       t.period, t.amp))


# -- the inequality with remainder for general kernels --------------------------

def odd_taper(delta):
    """Odd C^2 taper: identity on (-delta, delta), zero beyond 2 delta.

    Profile xi(t) = t on (-1, 1), quintic Hermite ramp down on [1, 2],
    |xi| <= 2; the scaled copy is delta * xi(t / delta).  Returns value
    and first two derivative callables of the scaled taper.
    """
    d = float(delta)
    # quintic ramp p(t) = 1 + t + a t^3 + b t^4 + c t^5 on [0, 1] with
    # value/slope/curvature (1, 1, 0) at 0 and (0, 0, 0) at 1
    Amat = np.array([[1.0, 1.0, 1.0], [3.0, 4.0, 5.0], [6.0, 12.0, 20.0]])
    rhs = np.array([-2.0, -1.0, 0.0])
    abc = np.linalg.solve(Amat, rhs)

    def p(t):
        return 1.0 + t + abc[0] * t ** 3 + abc[1] * t ** 4 + abc[2] * t ** 5

    def p1(t):
        return 1.0 + 3 * abc[0] * t ** 2 + 4 * abc[1] * t ** 3 + 5 * abc[2] * t ** 4

    def p2(t):
        return 6 * abc[0] * t + 12 * abc[1] * t ** 2 + 20 * abc[2] * t ** 3

    def xi(t):
        t = np.asarray(t, dtype=float)
        a = np.abs(t) / d
        out = np.where(a <= 1.0, t, 0.0)
        mid = (a > 1.0) & (a < 2.0)
        out = np.where(mid, np.sign(t) * d * p(a - 1.0), out)
        return out

    def xi1(t):
        t = np.asarray(t, dtype=float)
        a = np.abs(t) / d
        out = np.where(a <= 1.0, 1.0, 0.0)
        mid = (a > 1.0) & (a < 2.0)
        return np.where(mid, p1(a - 1.0), out)

    def xi2(t):
        t = np.asarray(t, dtype=float)
        a = np.abs(t) / d
        mid = (a > 1.0) & (a < 2.0)
        return np.where(mid, np.sign(t) * p2(a - 1.0) / d, 0.0)

    return xi, xi1, xi2


def _plain_kernel_integral(kernel, W, r_lo, r_hi, plan, order=None, ppd=None):
    """integral over r_lo < |y| < r_hi of W(y) K(y) dy (even-paired)."""
    order = order or plan.order
    ppd = ppd or plan.panels_per_decade
    edges = geometric_edges(r_lo, r_hi, ppd)
    t, wt = panel_nodes(edges, order)
    n = kernel.n
    if n == 1:
        pts = t.reshape(-1, 1)
        vals = 0.5 * (W(pts) + W(-pts)) * kernel(pts)
        return 2.0 * float(np.dot(wt, vals))
    from .kernels import sphere_directions
    m = plan.n_angular
    dirs = sphere_directions(2, m)
    pts = (t[:, None, None] * dirs[None, :, :]).reshape(-1, 2)
    vals = (W(pts) * kernel(pts)).reshape(t.size, m)
    return float(np.dot(wt * t, vals.sum(axis=1) * (2 * np.pi / m)))


def taper_moment(kernel, delta, plan=None):
    """J3 = integral over B_1 of |y| |Z_delta(y)| K(y) dy."""
    if plan is None:
        plan = _lenient(kernel.n)
    xi, _, _ = odd_taper(delta)

    def W(y):
        r = np.linalg.norm(y, axis=1)
        z = np.linalg.norm(xi(y), axis=1)
        return r * z

    val = _plain_kernel_integral(kernel, W, 1e-10, 1.0, plan)
    return val


def select_delta(kernel, eps, deltas=None, plan=None):
    """First dyadic taper scale with |J3| <= eps^2 (decreasing sweep)."""
    if deltas is None:
        deltas = 0.5 ** np.arange(1, 13)
    vals = []
    for d in deltas:
        j3 = taper_moment(kernel, d, plan)
        vals.append((d, j3))
        if abs(j3) <= eps * eps:
            return d, j3, vals
    raise SearchFailure("no admissible taper scale: J3 stays above eps^2",
                        vals)


def check_conto_traccia(kernel, u, eta, eps, e=None, probes=None, plan=None):
    """The key inequality with remainder for a validated general kernel.

    Selects the taper scale delta with |J3| <= eps^2, then finds the
    weight sigma_eps making, at every probe xbar in B_2,

      2 int eta(xb)(eta(xb) - eta(y)) d_e u(xb) d_e u(y) K(xb - y) dy
        <= int |eta(xb) d_e u(xb) - eta(y) d_e u(y)|^2 K dy
           + sigma_eps int |u(xb) - u(y)|^2 K dy
           + eps^2 sup_{B_3} |d_e u|^2.

    The report also records, per probe, whether the inequality holds
    with the remainder dropped (exploration data, never asserted).
    """
    if plan is None:
        plan = _lenient(kernel.n)
    n = kernel.n
    if e is None:
        e = np.zeros(n); e[0] = 1.0
    if probes is None:
        g = np.linspace(-1.8, 1.8, 9)
        probes = g.reshape(-1, 1) if n == 1 else \
            np.stack(np.meshgrid(g, g), -1).reshape(-1, 2)
        probes = probes[np.linalg.norm(probes, axis=1) < 2.0]
    probes = as_points(probes, n)

    delta, J3, sweep = select_delta(kernel, eps, plan=plan)

    du = directional_derivative(u, e)
    grid = np.linspace(-3.0, 3.0, 301)
    pts3 = grid.reshape(-1, 1) if n == 1 else \
        np.stack(np.meshgrid(grid[::4], grid[::4]), -1).reshape(-1, 2)
    pts3 = pts3[np.linalg.norm(pts3, axis=1) <= 3.0]
    du_sup3 = float(np.max(np.abs(du(pts3))))
    E_allow = eps ** 2 * du_sup3 ** 2

    m = len(probes)
    lhs = np.empty(m); r1 = np.empty(m); r2 = np.empty(m); err = np.empty(m)
    for i, x in enumerate(probes):
        xm = x.reshape(1, -1)
        ev = float(eta(xm)[0])
        gv = float(du(xm)[0])
        W = (constant(ev, n) - eta) * du * (2.0 * ev * gv)
        si_c = _si(kernel, W, x, plan)
        egx = constant(ev * gv, n) - eta * du
        si_1 = _si(kernel, egx * egx, x, plan)
        uc = constant(float(u(xm)[0]), n) - u
        si_2 = _si(kernel, uc * uc, x, plan)
        lhs[i] = si_c.value
        r1[i] = si_1.value
        r2[i] = si_2.value
        err[i] = si_c.error + si_1.error + si_2.error

    def feasible(sig):
        return np.all(lhs <= r1 + sig * r2 + E_allow + err)

    sigma_eps = doubling_bisection(feasible)
    sel = DeltaSigmaSelection(delta, J3, sigma_eps, eps)
    holds_without = lhs <= r1 + sigma_eps * r2 + err
    rep = InequalityReport(
        probes, lhs, r1 + sigma_eps * r2 + E_allow, err,
        {"check": "traccia", "variant": "directional", "eps": eps,
         "delta": delta, "J3": J3, "sigma_eps": sigma_eps,
         "du_sup3": du_sup3,
         "eps0_hold_fraction": float(np.mean(holds_without))})
    return sel, rep


def compute_J_terms(kernel, u, eta, delta, e=None, plan=None, r_max=None):
    """The two integrated-by-parts remainder terms and the taper moment.

    J1 pairs the derivative of (taper-corrected cutoff increment times
    kernel) with the mixed difference; J2 carries the second transported
    derivative against the squared difference; J3 is the small moment
    driving the selection rule.  Also returns the direct evaluation of
    the original (pre-integration-by-parts) integral for a two-route
    consistency check, and the fitted constant in the bound
    |J1| + |J2| <= (1/8) R1 + C R2.
    """
    if plan is None:
        plan = _lenient(kernel.n)
    n = kernel.n
    if e is None:
        e = np.zeros(n); e[0] = 1.0
    x0 = np.zeros(n)
    xm = x0.reshape(1, -1)
    xi, xi1, xi2 = odd_taper(delta)
    eta0 = float(eta(xm)[0])
    geta0 = eta.gradient(xm)[0]
    du = directional_derivative(u, e)
    du0 = float(du(xm)[0])
    u0 = float(u(xm)[0])

    def phi(y):
        return eta0 - eta(y) + xi(y) @ geta0

    def dphi_e(y):
        ge = eta.gradient(y) @ e
        return -ge + (xi1(y) * geta0[None, :]) @ e

    def d2phi_e(y):
        he = np.einsum("i,mij,j->m", e, eta.hessian(y), e)
        return -he + (xi2(y) * geta0[None, :] * e[None, :] ** 2).sum(axis=1)

    def rho1(y):
        return (kernel.grad(y) @ e) / kernel(y)

    def rho2(y):
        return np.einsum("i,mij,j->m", e, kernel.hess(y), e) / kernel(y)

    def psi(y):
        return (eta(y) * du(y) - eta0 * du0) * (u(y) - u0)

    def W1(y):
        return (dphi_e(y) + phi(y) * rho1(y)) * psi(y)

    def eta_e(y):
        return eta.gradient(y) @ e

    def W2(y):
        sq = 0.5 * (u(y) - u0) ** 2
        inner = (d2phi_e(y) * eta(y) + dphi_e(y) * eta_e(y)
                 + (2 * dphi_e(y) * eta(y) + phi(y) * eta_e(y)) * rho1(y)
                 + phi(y) * eta(y) * rho2(y))
        return inner * sq

    r_hi = r_max if r_max is not None else _decay_radius(u)
    J1 = _plain_kernel_integral(kernel, W1, 1e-9, r_hi, plan)
    J2 = _plain_kernel_integral(kernel, W2, 1e-9, r_hi, plan)
    J3 = taper_moment(kernel, delta, plan)

    # direct route: integral of I1 = eta(0) phi(y) d_e u(0) d_e u(y) K(y)
    def WI1(y):
        return eta0 * phi(y) * du0 * du(y)

    I1 = _plain_kernel_integral(kernel, WI1, 1e-9, r_hi, plan)

    egx = constant(eta0 * du0, n) - eta * du
    R1 = _si(kernel, egx * egx, x0, plan).value
    uc = constant(u0, n) - u
    R2 = _si(kernel, uc * uc, x0, plan).value
    fitted_C = max((abs(J1) + abs(J2) - R1 / 8.0) / max(R2, 1e-300), 0.0)
    phi0 = float(phi(xm)[0])
    dphi0 = float(dphi_e(xm)[0])
    return {
        "J1": J1, "J2": J2, "J3": J3, "I1_direct": I1,
        "route_gap": abs(I1 - (J1 + J2)),
        "fitted_C": fitted_C, "R1": R1, "R2": R2,
        "phi0": phi0, "dphi0": dphi0,
        "bound_holds": abs(J1) + abs(J2) <= R1 / 8.0 + fitted_C * R2 + 1e-12,
    }


def _decay_radius(u, floor=1e-12):
    r = 8.0
    for _ in range(12):
        if u.tail.resid(r) <= floor and u.tail.period is None:
            return r
        if u.tail.period is not None:
            return 40.0
        r *= 2.0
    return r


# -- fractional-kernel radial identity -------------------------------------------

def check_kernel_radial_identity(s, n=1, probes=None, kernel=None, fd=True):
    """Residual of 2(s+1) grad K + z Laplacian(K) (zero for pure powers).

    With fd=True the Laplacian comes from centered differences, keeping
    the check independent of the analytic derivative formulas.  For a
    non-power kernel the residual is genuinely nonzero and is returned
    for the record.
    """
    K = kernel if kernel is not None else fractional_kernel(n, s)
    if probes is None:
        rng = np.random.default_rng(5)
        r = np.exp(rng.uniform(np.log(0.1), np.log(10.0), 40))
        if n == 1:
            probes = (r * rng.choice([-1.0, 1.0], 40)).reshape(-1, 1)
        else:
            th = rng.uniform(0, 2 * np.pi, 40)
            probes = np.stack([r * np.cos(th), r * np.sin(th)], axis=1)
    if fd:
        g = _fd_grad(K, probes)
        H = _fd_hess(K, probes)
    else:
        g = K.grad(probes)
        H = K.hess(probes)
    lap = np.trace(H, axis1=1, axis2=2)
    resid = 2 * (K.s + 1) * g + probes * lap[:, None]
    rel = np.linalg.norm(resid, axis=1) / np.linalg.norm(g, axis=1)
    return float(np.max(rel))


def _fd_grad(K, z, step=1e-6):
    g = np.empty_like(z)
    r = np.linalg.norm(z, axis=1)
    for i in range(z.shape[1]):
        dz = np.zeros_like(z)
        dz[:, i] = step * r
        g[:, i] = (K(z + dz) - K(z - dz)) / (2 * step * r)
    return g


def _fd_hess(K, z, step=1e-4):
    n = z.shape[1]
    H = np.empty((z.shape[0], n, n))
    r = np.linalg.norm(z, axis=1)
    k0 = K(z)
    for i in range(n):
        for j in range(i, n):
            di = np.zeros_like(z); di[:, i] = step * r
            dj = np.zeros_like(z); dj[:, j] = step * r
            if i == j:
                H[:, i, i] = (K(z + di) + K(z - di) - 2 * k0) / (step * r) ** 2
            else:
                H[:, i, j] = H[:, j, i] = (
                    K(z + di + dj) - K(z + di - dj)
                    - K(z - di + dj) + K(z - di - dj)) / (2 * step * r) ** 2
    return H


# -- the identity route for grid-born harmonic-type functions -------------------

def check_downstairs_sharmonic(u_sh, s, eta=None, x=None, hyp_tol=None,
                               plan=None):
    """Gradient-flavored key inequality at a point where the function is
    annihilated by the operator (hypothesis gated, not assumed).

    u_sh: promoted grid solution; the operator residual at the probe is
    recomputed by quadrature and must sit under hyp_tol, otherwise a
    hypothesis error is raised (the claim is simply out of scope there).
    """
    n = u_sh.n
    if plan is None:
        plan = default_plan(n).scaled(rel_tol=1e-3)
    if eta is None:
        eta = make_cutoff(0.25, 0.5, n=n)
    if x is None:
        x = np.zeros(n)
    x = as_points(x, n).reshape(-1)
    star = apply_fractional(s, u_sh, x, plan)
    scale = max(u_sh.sup, 1.0)
    if hyp_tol is None:
        hyp_tol = 5e-2 * scale
    if abs(star.value) > hyp_tol:
        raise SearchFailure(
            "hypothesis fails: operator value %.3g at the probe "
            "(tolerance %.3g)" % (star.value, hyp_tol))
    K = fractional_kernel(n, s)
    xm = x.reshape(1, -1)
    ev = float(eta(xm)[0])
    lhs = 0.0
    r1 = 0.0
    errs = 0.0
    for i in range(n):
        gi = directional_derivative(u_sh, np.eye(n)[i])
        gv = float(gi(xm)[0])
        W = (constant(ev, n) - eta) * gi * (2.0 * ev * gv)
        si = _si(K, W, x, plan)
        lhs += si.value
        errs += si.error
        egx = constant(ev * gv, n) - eta * gi
        si1 = _si(K, egx * egx, x, plan)
        r1 += si1.value
        errs += si1.error
    uc = constant(float(u_sh(xm)[0]), n) - u_sh
    si2 = _si(K, uc * uc, x, plan)
    r2 = si2.value
    errs += si2.error

    def feasible(sig):
        return lhs <= r1 + sig * r2 + errs

    sigma0 = doubling_bisection(feasible)
    margin = r1 + sigma0 * r2 + errs - lhs
    return {"sigma0": sigma0, "margin": float(margin),
            "operator_residual": float(star.value),
            "lhs": lhs, "r1": r1, "r2": r2, "pass": True}


# -- classical incremental-quotient checks --------------------------------------

def check_incremental_classical(u_h, eta, h, e, probes, sigma=None,
                                positive_part_of=None):
    """Nonnegative Laplacian of the incremental composite on harmonic data.

    phi_{h,e} = eta^2 (delta_{h,e} u)^2 + sigma * segment-average of u^2;
    for the one-sided variant the quotient of `positive_part_of` enters
    through its positive part.  Everything is evaluated with analytic
    second derivatives of the composite; returns the report and the
    sigma used (searched once when not supplied).
    """
    probes = as_points(probes, u_h.n)
    dq = incremental_quotient(u_h, h, e)
    if positive_part_of is not None:
        vq = incremental_quotient(positive_part_of, h, e)
        head = (eta * eta) * positive_part_square(vq)
        zavg = averaged_square(positive_part_of, h, e)
    else:
        head = (eta * eta) * (dq * dq)
        zavg = averaged_square(u_h, h, e)

    def lap_at(sig):
        comp = head + zavg * float(sig)
        return np.trace(comp.hessian(probes), axis1=1, axis2=2)

    if sigma is None:
        sigma = doubling_bisection(lambda sg: np.all(lap_at(sg) >= -1e-10))
    lap = lap_at(sigma)
    rep = InequalityReport(probes, -lap, np.zeros(len(probes)),
                           np.full(len(probes), 1e-10),
                           {"check": "incremental-classical",
                            "variant": ("positive-part" if positive_part_of
                                        is not None else "incremental"),
                            "h": h, "sigma0": sigma})
    return sigma, rep
