"""Globally defined test functions with exact derivatives and tail metadata.

The central object is SmoothFunction: bounded value/gradient/Hessian
evaluators plus the bookkeeping the singular-integral quadrature needs,
namely sup-norm bounds and an asymptotic tail description
(limit at infinity, a certified bound on the decaying residual, and an
optional 1d oscillation period for trigonometric tails).

Arithmetic (+, -, *, squares, directional derivatives, translations,
affine precomposition) is closed and propagates both derivatives and
metadata, so auxiliary functions like eta^2 (d_e u)^2 + sigma u^2 remain
first-class citizens that the operators can be applied to.
"""

from fractions import Fraction

import numpy as np
from scipy.interpolate import CubicSpline, RectBivariateSpline
from numpy.polynomial import hermite_e

from ._quad import gl_rule
from .kernels import as_points

__all__ = [
    "Tail", "SmoothFunction", "Cutoff", "GridFunction", "Direction",
    "constant", "gaussian_bump", "polynomial_gaussian", "modulated_gaussian",
    "plane_wave", "tensor_product", "translate", "affine_precompose",
    "directional_derivative", "positive_part_square", "make_cutoff",
    "incremental_quotient", "averaged_square", "averaged_square_root",
    "harmonic_polynomial",
]


# -- tail structure -----------------------------------------------------------

def _combine_periods(p1, p2):
    if p1 is None:
        return p2
    if p2 is None:
        return p1
    ratio = Fraction(p1 / p2).limit_denominator(48)
    if ratio.numerator == 0 or abs(p1 / p2 - float(ratio)) > 1e-9:
        return -1.0  # incommensurate marker
    return p2 * ratio.numerator  # == p1 * denominator


class Tail:
    """Asymptotic structure: u = limit + (periodic part) + residual.

    resid(r) bounds sup_{|x| >= r} of the residual; amp bounds the
    periodic part (zero when period is None).  resid must be exact zero
    beyond the support radius for compactly supported residuals.
    """

    def __init__(self, limit=0.0, resid=None, period=None, amp=0.0):
        self.limit = float(limit)
        self.resid = resid if resid is not None else (lambda r: 0.0)
        self.period = period
        self.amp = float(amp)

    @staticmethod
    def compact(radius, bound):
        return Tail(0.0, lambda r: bound if r < radius else 0.0)

    @staticmethod
    def bounded(bound):
        return Tail(0.0, lambda r: bound)

    def __add__(self, other):
        period = _combine_periods(self.period, other.period)
        rs, ro = self.resid, other.resid
        if period == -1.0:
            return Tail(self.limit + other.limit,
                        lambda r: rs(r) + ro(r) + self.amp + other.amp)
        return Tail(self.limit + other.limit, lambda r: rs(r) + ro(r),
                    period, self.amp + other.amp)

    def scaled(self, c):
        rs = self.resid
        return Tail(c * self.limit, lambda r: abs(c) * rs(r),
                    self.period, abs(c) * self.amp)

    def product(self, other, mean_of_periodic_product=0.0):
        """Tail of a pointwise product; the periodic x periodic mean must
        be supplied by the caller when both factors oscillate."""
        period = _combine_periods(self.period, other.period)
        lf, lg = self.limit, other.limit
        af, ag = self.amp, other.amp
        rf, rg = self.resid, other.resid
        resid = lambda r: rf(r) * (abs(lg) + ag + rg(r)) + rg(r) * (abs(lf) + af)
        if period == -1.0:
            bump = af * ag + abs(lf) * ag + abs(lg) * af
            return Tail(lf * lg, lambda r: resid(r) + bump)
        amp = abs(lf) * ag + abs(lg) * af + af * ag + abs(mean_of_periodic_product)
        return Tail(lf * lg + mean_of_periodic_product, resid, period, amp)


# -- core container -----------------------------------------------------------

class SmoothFunction:
    def __init__(self, n, value, gradient, hessian, d3=None,
                 sup=np.inf, grad_sup=np.inf, hess_sup=np.inf,
                 tail=None, fourier=None, fourier_radius=None,
                 harmonics=None):
        self.n = int(n)
        self._value = value
        self._gradient = gradient
        self._hessian = hessian
        self._d3 = d3
        self.sup = float(sup)
        self.grad_sup = float(grad_sup)
        self.hess_sup = float(hess_sup)
        self.tail = tail if tail is not None else Tail.bounded(sup)
        self.fourier = fourier            # xi (m, n) -> complex (m,)
        self.fourier_radius = fourier_radius
        self.harmonics = harmonics        # [(amp, kvec, phase)] for trig

    # evaluation ------------------------------------------------------------

    def __call__(self, x):
        return self._value(as_points(x, self.n))

    def value(self, x):
        return self._value(as_points(x, self.n))

    def gradient(self, x):
        return self._gradient(as_points(x, self.n))

    def hessian(self, x):
        return self._hessian(as_points(x, self.n))

    def d3(self, x):
        x = as_points(x, self.n)
        if self._d3 is not None:
            return self._d3(x)
        h = 1e-5
        out = np.empty((x.shape[0], self.n, self.n, self.n))
        for i in range(self.n):
            dx = np.zeros((1, self.n))
            dx[0, i] = h
            out[:, i] = (self._hessian(x + dx) - self._hessian(x - dx)) / (2 * h)
        return out

    def third_bound(self, x, r):
        """Crude certified-ish bound on sup of |D^3| over B_r(x)."""
        x = as_points(x, self.n)
        pts = [x]
        for i in range(self.n):
            dx = np.zeros((1, self.n))
            dx[0, i] = r
            pts += [x + dx, x - dx]
        worst = 0.0
        for p in pts:
            t = self.d3(p)
            worst = max(worst, float(np.max(np.sum(np.abs(t), axis=(1, 2, 3)))))
        return 1.5 * worst + 1e-12

    # algebra ----------------------------------------------------------------

    def __add__(self, other):
        if np.isscalar(other):
            other = constant(float(other), self.n)
        f, g = self, other
        harm = None
        if f.harmonics is not None and g.harmonics is not None:
            harm = f.harmonics + g.harmonics
        four = None
        if f.fourier is not None and g.fourier is not None:
            four = lambda xi: f.fourier(xi) + g.fourier(xi)
        frad = None
        if four is not None:
            frad = max(f.fourier_radius, g.fourier_radius)
        return SmoothFunction(
            f.n,
            lambda x: f._value(x) + g._value(x),
            lambda x: f._gradient(x) + g._gradient(x),
            lambda x: f._hessian(x) + g._hessian(x),
            sup=f.sup + g.sup, grad_sup=f.grad_sup + g.grad_sup,
            hess_sup=f.hess_sup + g.hess_sup, tail=f.tail + g.tail,
            fourier=four, fourier_radius=frad, harmonics=harm)

    __radd__ = __add__

    def __neg__(self):
        return self * (-1.0)

    def __sub__(self, other):
        if np.isscalar(other):
            other = constant(float(other), self.n)
        return self + (other * (-1.0))

    def __rsub__(self, other):
        return (self * (-1.0)) + other

    def __mul__(self, other):
        if np.isscalar(other):
            c = float(other)
            f = self
            harm = None
            if f.harmonics is not None:
                harm = [(c * a, k, p) for a, k, p in f.harmonics]
            four = None
            if f.fourier is not None:
                four = lambda xi: c * f.fourier(xi)
            return SmoothFunction(
                f.n, lambda x: c * f._value(x), lambda x: c * f._gradient(x),
                lambda x: c * f._hessian(x),
                d3=(None if f._d3 is None else (lambda x: c * f._d3(x))),
                sup=abs(c) * f.sup, grad_sup=abs(c) * f.grad_sup,
                hess_sup=abs(c) * f.hess_sup, tail=f.tail.scaled(c),
                fourier=four, fourier_radius=f.fourier_radius, harmonics=harm)
        f, g = self, other
        mean = 0.0
        if f.tail.period is not None and g.tail.period is not None:
            mean = _periodic_product_mean(f, g)
        harm = None
        if f.harmonics is not None and g.harmonics is not None:
            harm = _harmonic_product(f.harmonics, g.harmonics)

        def val(x):
            return f._value(x) * g._value(x)

        def grad(x):
            return (f._gradient(x) * g._value(x)[:, None]
                    + g._gradient(x) * f._value(x)[:, None])

        def hess(x):
            gf, gg = f._gradient(x), g._gradient(x)
            cross = gf[:, :, None] * gg[:, None, :]
            return (f._hessian(x) * g._value(x)[:, None, None]
                    + g._hessian(x) * f._value(x)[:, None, None]
                    + cross + np.swapaxes(cross, 1, 2))

        return SmoothFunction(
            f.n, val, grad, hess,
            sup=f.sup * g.sup,
            grad_sup=f.sup * g.grad_sup + g.sup * f.grad_sup,
            hess_sup=(f.sup * g.hess_sup + g.sup * f.hess_sup
                      + 2 * f.grad_sup * g.grad_sup),
            tail=f.tail.product(g.tail, mean), harmonics=harm)

    __rmul__ = __mul__

    def squared(self):
        return self * self

    def shifted_square(self, kappa):
        """(u - kappa)^2 with exact tail handling of the constant shift."""
        return (self - float(kappa)).squared()


def _periodic_product_mean(f, g):
    period = _combine_periods(f.tail.period, g.tail.period)
    if period in (None, -1.0) or f.n != 1:
        return 0.0
    x, w = gl_rule(64)
    # mean over one far period of (f - lim)(g - lim); radius large enough
    # that decaying residuals are negligible for catalog functions
    t0 = 0.0
    pts = (t0 + 0.5 * period * (x + 1.0)).reshape(-1, 1)
    fv = f._value(pts) - f.tail.limit
    gv = g._value(pts) - g.tail.limit
    return float(np.dot(w, fv * gv) * 0.5)


def _harmonic_product(h1, h2):
    out = []
    for a1, k1, p1 in h1:
        for a2, k2, p2 in h2:
            k1 = np.asarray(k1, dtype=float)
            k2 = np.asarray(k2, dtype=float)
            out.append((0.5 * a1 * a2, k1 + k2, p1 + p2))
            out.append((0.5 * a1 * a2, k1 - k2, p1 - p2))
    return _merge_harmonics(out)


def _merge_harmonics(harm):
    merged = {}
    for a, k, p in harm:
        k = np.asarray(k, dtype=float)
        if np.all(k == 0) and abs(a) > 0:
            key = (tuple(k), 0.0)
            amp = a * np.cos(p)
            a, p = amp, 0.0
        else:
            if (k < 0).any() and (k[k != 0][0] < 0 if (k != 0).any() else False):
                k, p = -k, -p
            key = (tuple(np.round(k, 12)), round(p % (2 * np.pi), 12))
        if key in merged:
            merged[key] = (merged[key][0] + a, k, p)
        else:
            merged[key] = (a, k, p)
    return [v for v in merged.values() if abs(v[0]) > 1e-15]


# -- catalog ------------------------------------------------------------------

def constant(c, n):
    c = float(c)

    def val(x):
        return np.full(x.shape[0], c)

    def grad(x):
        return np.zeros((x.shape[0], n))

    def hess(x):
        return np.zeros((x.shape[0], n, n))

    return SmoothFunction(n, val, grad, hess,
                          d3=lambda x: np.zeros((x.shape[0], n, n, n)),
                          sup=abs(c), grad_sup=0.0, hess_sup=0.0,
                          tail=Tail(c), harmonics=[(c, np.zeros(n), 0.0)],
                          fourier=None)


def gaussian_bump(n, center=None, width=1.0, height=1.0):
    """height * exp(-|x - center|^2 / (2 width^2))."""
    c = np.zeros(n) if center is None else np.atleast_1d(np.asarray(center, dtype=float))
    w = float(width)
    h = float(height)

    def val(x):
        d = x - c
        return h * np.exp(-np.sum(d * d, axis=1) / (2 * w * w))

    def grad(x):
        d = x - c
        return -val(x)[:, None] * d / (w * w)

    def hess(x):
        d = x - c
        v = val(x)
        dd = d[:, :, None] * d[:, None, :]
        return v[:, None, None] * (dd / w ** 4 - np.eye(n)[None] / w ** 2)

    def d3(x):
        d = (x - c) / (w * w)
        v = val(x)
        eye = np.eye(n)
        t = -d[:, :, None, None] * d[:, None, :, None] * d[:, None, None, :]
        sym = (eye[None, :, :, None] * d[:, None, None, :]
               + eye[None, :, None, :] * d[:, None, :, None]
               + eye[None, None, :, :] * d[:, :, None, None]) / (w * w)
        return v[:, None, None, None] * (t + sym)

    rc = np.linalg.norm(c)
    resid = lambda r: abs(h) * np.exp(-max(r - rc, 0.0) ** 2 / (2 * w * w))
    fac = abs(h) / (w * w)

    def fourier(xi):
        q = np.sum(xi * xi, axis=1)
        phase = np.exp(-1j * (xi @ c))
        return h * (2 * np.pi) ** (n / 2.0) * w ** n * np.exp(-w * w * q / 2) * phase

    return SmoothFunction(
        n, val, grad, hess, d3=d3, sup=abs(h),
        grad_sup=abs(h) * np.exp(-0.5) / w,
        hess_sup=fac, tail=Tail(0.0, resid),
        fourier=fourier, fourier_radius=12.0 / w)


def polynomial_gaussian(coeffs, center=0.0, width=1.0):
    """1d p(t) exp(-t^2/2) with t = (x - center)/width; exact Fourier data."""
    coeffs = np.asarray(coeffs, dtype=float)
    c, w = float(center), float(width)
    p = np.polynomial.Polynomial(coeffs)
    dp, d2p, d3p = p.deriv(), p.deriv(2), p.deriv(3)

    def t_of(x):
        return (x[:, 0] - c) / w

    def val(x):
        t = t_of(x)
        return p(t) * np.exp(-t * t / 2)

    def grad(x):
        t = t_of(x)
        return ((dp(t) - t * p(t)) * np.exp(-t * t / 2) / w)[:, None]

    def hess(x):
        t = t_of(x)
        core = d2p(t) - 2 * t * dp(t) + (t * t - 1) * p(t)
        return (core * np.exp(-t * t / 2) / w ** 2)[:, None, None]

    def d3(x):
        t = t_of(x)
        core = (d3p(t) - 3 * t * d2p(t) + 3 * (t * t - 1) * dp(t)
                - t * (t * t - 3) * p(t))
        return (core * np.exp(-t * t / 2) / w ** 3)[:, None, None, None]

    # Fourier of t^m e^{-t^2/2} is sqrt(2pi) (-i)^m He_m(eta) e^{-eta^2/2}
    m = coeffs.size
    he = [hermite_e.HermiteE.basis(k) for k in range(m)]

    def fourier(xi):
        eta = w * xi[:, 0]
        env = np.exp(-eta * eta / 2)
        tot = np.zeros(xi.shape[0], dtype=complex)
        for k, a in enumerate(coeffs):
            if a:
                tot += a * (-1j) ** k * he[k](eta)
        return np.sqrt(2 * np.pi) * w * tot * env * np.exp(-1j * xi[:, 0] * c)

    grid = np.linspace(-12, 12, 20001)
    pad = 1.0005  # dense-grid maxima padded into certified upper bounds
    pv = np.abs(p(grid) * np.exp(-grid * grid / 2))
    sup = float(pv.max()) * pad
    resid = lambda r: (sup if r < abs(c) + 12 * w else
                       float(np.max(pv) * np.exp(-(max((r - abs(c)) / w, 12.0) ** 2 - 144) / 2)))
    gs = float(np.max(np.abs(dp(grid) - grid * p(grid))
                      * np.exp(-grid ** 2 / 2))) / w * pad
    hs = float(np.max(np.abs(d2p(grid) - 2 * grid * dp(grid)
                             + (grid ** 2 - 1) * p(grid))
                      * np.exp(-grid ** 2 / 2))) / w ** 2 * pad
    return SmoothFunction(1, val, grad, hess, d3=d3, sup=sup, grad_sup=gs,
                          hess_sup=hs, tail=Tail(0.0, resid),
                          fourier=fourier, fourier_radius=(12.0 + m) / w)


def modulated_gaussian(center, width, freq, phase=0.0, n=1):
    """Gaussian bump times cos(freq . x + phase); Fourier by shift."""
    g = gaussian_bump(n, center, width)
    k = np.atleast_1d(np.asarray(freq, dtype=float))

    def val(x):
        return g._value(x) * np.cos(x @ k + phase)

    def grad(x):
        cosv = np.cos(x @ k + phase)
        sinv = np.sin(x @ k + phase)
        return g._gradient(x) * cosv[:, None] - g._value(x)[:, None] * sinv[:, None] * k

    def hess(x):
        cosv = np.cos(x @ k + phase)
        sinv = np.sin(x @ k + phase)
        gg = g._gradient(x)
        cross = gg[:, :, None] * k[None, None, :]
        kk = k[:, None] * k[None, :]
        return (g._hessian(x) * cosv[:, None, None]
                - (cross + np.swapaxes(cross, 1, 2)) * sinv[:, None, None]
                - g._value(x)[:, None, None] * kk[None] * cosv[:, None, None])

    gf = g.fourier

    def fourier(xi):
        return 0.5 * (np.exp(1j * phase) * gf(xi - k[None, :])
                      + np.exp(-1j * phase) * gf(xi + k[None, :]))

    kn = np.linalg.norm(k)
    return SmoothFunction(n, val, grad, hess, sup=g.sup,
                          grad_sup=g.grad_sup + g.sup * kn,
                          hess_sup=g.hess_sup + 2 * g.grad_sup * kn + g.sup * kn * kn,
                          tail=g.tail.product(Tail.bounded(1.0)),
                          fourier=fourier,
                          fourier_radius=g.fourier_radius + kn)


def plane_wave(freq, phase=0.0, amp=1.0, n=None):
    """amp * cos(freq . x + phase); exact symbol data, periodic 1d tail."""
    k = np.atleast_1d(np.asarray(freq, dtype=float))
    if n is None:
        n = k.size
    a, ph = float(amp), float(phase)
    kk = k[:, None] * k[None, :]

    def val(x):
        return a * np.cos(x @ k + ph)

    def grad(x):
        return -a * np.sin(x @ k + ph)[:, None] * k[None, :]

    def hess(x):
        return -a * np.cos(x @ k + ph)[:, None, None] * kk[None]

    def d3(x):
        s = a * np.sin(x @ k + ph)
        return s[:, None, None, None] * (kk[None, :, :, None] * k[None, None, None, :])

    kn = np.linalg.norm(k)
    period = 2 * np.pi / kn if (n == 1 and kn > 0) else None
    return SmoothFunction(n, val, grad, hess, d3=d3, sup=abs(a),
                          grad_sup=abs(a) * kn, hess_sup=abs(a) * kn * kn,
                          tail=Tail(0.0, lambda r: 0.0, period, abs(a)),
                          harmonics=[(a, k.copy(), ph)])


def tensor_product(f1, f2):
    """f(x1, x2) = f1(x1) f2(x2) for 1d factors; keeps Fourier data."""
    if f1.n != 1 or f2.n != 1:
        raise ValueError("tensor factors must be 1d")

    def split(x):
        return x[:, :1], x[:, 1:]

    def val(x):
        a, b = split(x)
        return f1._value(a) * f2._value(b)

    def grad(x):
        a, b = split(x)
        v1, v2 = f1._value(a), f2._value(b)
        g = np.empty((x.shape[0], 2))
        g[:, 0] = f1._gradient(a)[:, 0] * v2
        g[:, 1] = f2._gradient(b)[:, 0] * v1
        return g

    def hess(x):
        a, b = split(x)
        v1, v2 = f1._value(a), f2._value(b)
        g1, g2 = f1._gradient(a)[:, 0], f2._gradient(b)[:, 0]
        H = np.empty((x.shape[0], 2, 2))
        H[:, 0, 0] = f1._hessian(a)[:, 0, 0] * v2
        H[:, 1, 1] = f2._hessian(b)[:, 0, 0] * v1
        H[:, 0, 1] = H[:, 1, 0] = g1 * g2
        return H

    four = None
    frad = None
    if f1.fourier is not None and f2.fourier is not None:
        four = lambda xi: f1.fourier(xi[:, :1]) * f2.fourier(xi[:, 1:])
        frad = max(f1.fourier_radius, f2.fourier_radius)
    r1, r2 = f1.tail.resid, f2.tail.resid
    tail = Tail(0.0, lambda r: (r1(r / np.sqrt(2)) * f2.sup
                                + r2(r / np.sqrt(2)) * f1.sup))
    return SmoothFunction(2, val, grad, hess,
                          sup=f1.sup * f2.sup,
                          grad_sup=f1.grad_sup * f2.sup + f2.grad_sup * f1.sup,
                          hess_sup=(f1.hess_sup * f2.sup + f2.hess_sup * f1.sup
                                    + 2 * f1.grad_sup * f2.grad_sup),
                          tail=tail, fourier=four, fourier_radius=frad)


def harmonic_polynomial(n, kind):
    """Small catalog of harmonic polynomials, clipped metadata on B_4."""
    if n == 2:
        table = {
            "x1": (lambda x: x[:, 0],
                   lambda x: np.stack([np.ones(len(x)), np.zeros(len(x))], 1),
                   lambda x: np.zeros((len(x), 2, 2))),
            "re_z2": (lambda x: x[:, 0] ** 2 - x[:, 1] ** 2,
                      lambda x: np.stack([2 * x[:, 0], -2 * x[:, 1]], 1),
                      lambda x: np.broadcast_to(np.diag([2.0, -2.0]),
                                                (len(x), 2, 2)).copy()),
            "im_z2": (lambda x: 2 * x[:, 0] * x[:, 1],
                      lambda x: np.stack([2 * x[:, 1], 2 * x[:, 0]], 1),
                      lambda x: np.broadcast_to(np.array([[0.0, 2.0], [2.0, 0.0]]),
                                                (len(x), 2, 2)).copy()),
            "re_z3": (lambda x: x[:, 0] ** 3 - 3 * x[:, 0] * x[:, 1] ** 2,
                      lambda x: np.stack([3 * x[:, 0] ** 2 - 3 * x[:, 1] ** 2,
                                          -6 * x[:, 0] * x[:, 1]], 1),
                      lambda x: np.stack([
                          np.stack([6 * x[:, 0], -6 * x[:, 1]], 1),
                          np.stack([-6 * x[:, 1], -6 * x[:, 0]], 1)], 1)),
        }
    else:
        table = {
            "x1": (lambda x: x[:, 0],
                   lambda x: np.ones((len(x), 1)),
                   lambda x: np.zeros((len(x), 1, 1))),
        }
    val, grad, hess = table[kind]
    R = 4.0
    return SmoothFunction(n, val, grad, hess, sup=60.0, grad_sup=60.0,
                          hess_sup=40.0, tail=Tail.bounded(60.0))


# -- transforms ---------------------------------------------------------------

def translate(f, a):
    """f(. + a)."""
    a = np.atleast_1d(np.asarray(a, dtype=float))
    shift = np.linalg.norm(a)
    rs = f.tail.resid
    tail = Tail(f.tail.limit, lambda r: rs(max(r - shift, 0.0)),
                f.tail.period, f.tail.amp)
    harm = None
    if f.harmonics is not None:
        harm = [(amp, k, p + float(np.dot(k, a))) for amp, k, p in f.harmonics]
    four = None
    if f.fourier is not None:
        four = lambda xi: f.fourier(xi) * np.exp(1j * (xi @ a))
    return SmoothFunction(
        f.n, lambda x: f._value(x + a), lambda x: f._gradient(x + a),
        lambda x: f._hessian(x + a),
        d3=(None if f._d3 is None else (lambda x: f._d3(x + a))),
        sup=f.sup, grad_sup=f.grad_sup, hess_sup=f.hess_sup, tail=tail,
        fourier=four, fourier_radius=f.fourier_radius, harmonics=harm)


def affine_precompose(f, A):
    """x -> f(A x) for an invertible matrix A."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    ev = np.linalg.svd(A, compute_uv=False)
    rs = f.tail.resid
    tail = Tail(f.tail.limit, lambda r: rs(r * ev.min()), None,
                f.tail.amp + (0.0 if f.tail.period is None else 0.0))
    if f.tail.period is not None and f.n == 1:
        tail = Tail(f.tail.limit, lambda r: rs(r * ev.min()),
                    f.tail.period / ev.min(), f.tail.amp)

    def val(x):
        return f._value(x @ A.T)

    def grad(x):
        return f._gradient(x @ A.T) @ A

    def hess(x):
        return np.einsum("ki,mkl,lj->mij", A, f._hessian(x @ A.T), A)

    return SmoothFunction(f.n, val, grad, hess,
                          sup=f.sup, grad_sup=f.grad_sup * ev.max(),
                          hess_sup=f.hess_sup * ev.max() ** 2, tail=tail)


def directional_derivative(f, e):
    """d_e f as a SmoothFunction; Hessian uses f.d3 (FD fallback)."""
    e = np.atleast_1d(np.asarray(e, dtype=float))

    def val(x):
        return f._gradient(x) @ e

    def grad(x):
        return f._hessian(x) @ e

    def hess(x):
        return f.d3(x) @ e

    harm = None
    if f.harmonics is not None:
        harm = [(a * float(np.dot(k, e)), k, p + np.pi / 2)
                for a, k, p in f.harmonics if np.dot(k, e) != 0]
    four = None
    if f.fourier is not None:
        four = lambda xi: 1j * (xi @ e) * f.fourier(xi)
    rs = f.tail.resid
    # derivative of the residual is not controlled by resid alone; fall
    # back to the gradient bound outside the catalog-certified region
    tail = Tail(0.0, lambda r: min(f.grad_sup, 50.0 * rs(max(r - 1.0, 0.0))),
                f.tail.period, f.grad_sup if f.tail.period else 0.0)
    if f.harmonics is not None and f.tail.period is not None:
        amp = sum(abs(a * np.dot(k, e)) for a, k, p in f.harmonics)
        tail = Tail(0.0, lambda r: 0.0, f.tail.period, amp)
    return SmoothFunction(f.n, val, grad, hess, sup=f.grad_sup,
                          grad_sup=f.hess_sup, hess_sup=np.inf, tail=tail,
                          fourier=four, fourier_radius=f.fourier_radius,
                          harmonics=harm)


def positive_part_square(f):
    """(f_+)^2; C^{1,1} composite with one-sided Hessian on {f = 0}."""

    def val(x):
        return np.maximum(f._value(x), 0.0) ** 2

    def grad(x):
        fp = np.maximum(f._value(x), 0.0)
        return 2 * fp[:, None] * f._gradient(x)

    def hess(x):
        v = f._value(x)
        fp = np.maximum(v, 0.0)
        ind = (v > 0).astype(float)
        g = f._gradient(x)
        gg = g[:, :, None] * g[:, None, :]
        return 2 * fp[:, None, None] * f._hessian(x) + 2 * ind[:, None, None] * gg

    lim = max(f.tail.limit, 0.0) ** 2
    rs, amp = f.tail.resid, f.tail.amp
    bound = abs(f.tail.limit) + amp
    tail = Tail(lim, lambda r: rs(r) * 2 * (bound + rs(r)) + 2 * amp * bound + amp ** 2
                if f.tail.period else rs(r) * (2 * bound + rs(r)))
    return SmoothFunction(f.n, val, grad, hess, sup=f.sup ** 2,
                          grad_sup=2 * f.sup * f.grad_sup,
                          hess_sup=2 * f.sup * f.hess_sup + 2 * f.grad_sup ** 2,
                          tail=tail)


# -- cutoffs ------------------------------------------------------------------

def _profile(t):
    """C-infinity step: 1 for t <= 0, 0 for t >= 1 (exp-based)."""
    t = np.asarray(t, dtype=float)
    out = np.empty_like(t)
    lo, hi = t <= 1e-12, t >= 1 - 1e-12
    mid = ~(lo | hi)
    out[lo], out[hi] = 1.0, 0.0
    tm = t[mid]
    h = np.clip(1.0 / (1.0 - tm) - 1.0 / tm, -700.0, 700.0)
    out[mid] = 1.0 / (1.0 + np.exp(h))
    return out


def _profile_d1(t):
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    mid = (t > 1e-9) & (t < 1 - 1e-9)
    tm = t[mid]
    h = np.clip(1.0 / (1.0 - tm) - 1.0 / tm, -700.0, 700.0)
    rho = 1.0 / (1.0 + np.exp(h))
    hp = 1.0 / (1.0 - tm) ** 2 + 1.0 / tm ** 2
    out[mid] = -hp * rho * (1.0 - rho)
    return out


def _profile_d2(t):
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    mid = (t > 1e-9) & (t < 1 - 1e-9)
    tm = t[mid]
    h = np.clip(1.0 / (1.0 - tm) - 1.0 / tm, -700.0, 700.0)
    rho = 1.0 / (1.0 + np.exp(h))
    hp = 1.0 / (1.0 - tm) ** 2 + 1.0 / tm ** 2
    hpp = 2.0 / (1.0 - tm) ** 3 - 2.0 / tm ** 3
    d1 = -hp * rho * (1.0 - rho)
    out[mid] = -hpp * rho * (1.0 - rho) - hp * d1 * (1.0 - 2.0 * rho)
    return out


class Cutoff(SmoothFunction):
    """Radially symmetric plateau bump: 1 on B_{r_in}, 0 outside B_{r_out}."""

    def __init__(self, n, r_in, r_out):
        if not 0 < r_in < r_out:
            raise ValueError("need 0 < r_in < r_out")
        self.r_in, self.r_out = float(r_in), float(r_out)
        dr = self.r_out - self.r_in

        def tval(x):
            return (np.linalg.norm(x, axis=1) - r_in) / dr

        def val(x):
            return _profile(tval(x))

        def grad(x):
            r = np.linalg.norm(x, axis=1)
            t = (r - r_in) / dr
            out = np.zeros_like(x)
            mid = (t > 0) & (t < 1)
            out[mid] = (_profile_d1(t[mid]) / dr / r[mid])[:, None] * x[mid]
            return out

        def hess(x):
            m = x.shape[0]
            r = np.linalg.norm(x, axis=1)
            t = (r - r_in) / dr
            H = np.zeros((m, n, n))
            mid = (t > 0) & (t < 1)
            if mid.any():
                xm = x[mid]
                rm = r[mid][:, None, None]
                om = xm / r[mid][:, None]
                oo = om[:, :, None] * om[:, None, :]
                p1 = _profile_d1(t[mid])[:, None, None]
                p2 = _profile_d2(t[mid])[:, None, None]
                eye = np.eye(n)[None]
                H[mid] = p2 / dr ** 2 * oo + p1 / dr * (eye - oo) / rm
            return H

        ts = np.linspace(1e-6, 1 - 1e-6, 20001)
        g1 = np.max(np.abs(_profile_d1(ts))) / dr
        rad = r_in + ts * dr
        if n == 1:
            op2 = np.max(np.abs(_profile_d2(ts))) / dr ** 2
        else:
            op2 = max(np.max(np.abs(_profile_d2(ts))) / dr ** 2,
                      np.max(np.abs(_profile_d1(ts)) / (dr * rad)))
        self.c2_norm = 1.0 + g1 + op2
        super().__init__(n, val, grad, hess, sup=1.0, grad_sup=g1,
                         hess_sup=op2, tail=Tail.compact(self.r_out, 1.0))


def make_cutoff(r_in, r_out, n=1):
    return Cutoff(n, r_in, r_out)


# -- directions, quotients, segment averages ---------------------------------

class Direction:
    def __init__(self, e):
        e = np.atleast_1d(np.asarray(e, dtype=float))
        nrm = np.linalg.norm(e)
        if abs(nrm - 1.0) > 1e-14:
            e = e / nrm
        self.e = e

    def __array__(self, dtype=None):
        return self.e.astype(dtype) if dtype else self.e


def incremental_quotient(u, h, e):
    """(u(x + h e) - u(x)) / h; sup bound inherited from the gradient."""
    h = float(h)
    if h == 0.0:
        raise ValueError("step h must be nonzero")
    if abs(h) >= 0.5:
        raise ValueError("incremental step must satisfy |h| < 1/2")
    e = np.atleast_1d(np.asarray(e, dtype=float))
    diff = (translate(u, h * e) - u) * (1.0 / h)
    diff.sup = min(diff.sup, u.grad_sup)
    return diff


def averaged_square(u, h, e, order=16):
    """A(x) = integral over t in [0,1] of u^2(x + t h e) dt (GL nodes)."""
    if order < 16:
        raise ValueError("use at least 16 quadrature nodes")
    h = float(h)
    e = np.atleast_1d(np.asarray(e, dtype=float))
    tq, wq = gl_rule(order)
    tq = 0.5 * (tq + 1.0)
    wq = 0.5 * wq
    shifts = [t * h * e for t in tq]
    u2 = u * u

    def val(x):
        return sum(w * u2._value(x + a) for w, a in zip(wq, shifts))

    def grad(x):
        return sum(w * u2._gradient(x + a) for w, a in zip(wq, shifts))

    def hess(x):
        return sum(w * u2._hessian(x + a) for w, a in zip(wq, shifts))

    rs = u2.tail.resid
    tail = Tail(u2.tail.limit, lambda r: rs(max(r - abs(h), 0.0)),
                u2.tail.period, u2.tail.amp)
    return SmoothFunction(u.n, val, grad, hess, sup=u.sup ** 2,
                          grad_sup=u2.grad_sup, hess_sup=u2.hess_sup,
                          tail=tail)


def averaged_square_root(u, h, e, order=16, floor=1e-300):
    """u_{h,e}(x) = sqrt(integral of u^2 along the segment)."""
    A = averaged_square(u, h, e, order)

    def val(x):
        return np.sqrt(np.maximum(A._value(x), 0.0))

    def grad(x):
        a = np.maximum(A._value(x), floor)
        return A._gradient(x) / (2 * np.sqrt(a))[:, None]

    def hess(x):
        a = np.maximum(A._value(x), floor)
        g = A._gradient(x)
        gg = g[:, :, None] * g[:, None, :]
        sq = np.sqrt(a)
        return A._hessian(x) / (2 * sq)[:, None, None] \
            - gg / (4 * a ** 1.5)[:, None, None]

    lim = np.sqrt(max(A.tail.limit, 0.0))
    rs = A.tail.resid
    tail = Tail(lim, (lambda r: np.sqrt(rs(r))) if lim == 0.0
                else (lambda r: rs(r) / lim), A.tail.period,
                np.sqrt(A.tail.amp + A.tail.limit) if A.tail.period else 0.0)
    return SmoothFunction(u.n, val, grad, hess, sup=u.sup,
                          grad_sup=u.grad_sup, hess_sup=np.inf, tail=tail)


# -- grid functions -----------------------------------------------------------

class GridFunction:
    """Values on a uniform lattice over [-L, L]^n plus an exterior closure."""

    def __init__(self, n, L, values, exterior):
        self.n = int(n)
        self.L = float(L)
        self.values = np.asarray(values, dtype=float)
        if self.n == 1 and self.values.ndim != 1:
            raise ValueError("1d grid values must be a vector")
        if self.n == 2 and self.values.ndim != 2:
            raise ValueError("2d grid values must be a matrix")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("grid values must be finite")
        self.N = self.values.shape[0]
        self.h = 2 * self.L / (self.N - 1)
        self.exterior = exterior
        self.axis = np.linspace(-L, L, self.N)

    def nodes(self):
        if self.n == 1:
            return self.axis.reshape(-1, 1)
        X, Y = np.meshgrid(self.axis, self.axis, indexing="ij")
        return np.stack([X.ravel(), Y.ravel()], axis=1)

    def promote(self):
        """Cubic-spline SmoothFunction: spline inside, closure outside."""
        ext = self.exterior
        if self.n == 1:
            sp = CubicSpline(self.axis, self.values, bc_type="clamped")
            d1, d2 = sp.derivative(1), sp.derivative(2)

            def val(x):
                t = x[:, 0]
                inside = np.abs(t) <= self.L
                out = np.where(inside, sp(np.clip(t, -self.L, self.L)), 0.0)
                if (~inside).any():
                    out[~inside] = ext._value(x[~inside])
                return out

            def grad(x):
                t = x[:, 0]
                inside = np.abs(t) <= self.L
                g = np.where(inside, d1(np.clip(t, -self.L, self.L)), 0.0)
                g = g[:, None]
                if (~inside).any():
                    g[~inside] = ext._gradient(x[~inside])
                return g

            def hess(x):
                t = x[:, 0]
                inside = np.abs(t) <= self.L
                h2 = np.where(inside, d2(np.clip(t, -self.L, self.L)), 0.0)
                h2 = h2[:, None, None]
                if (~inside).any():
                    h2[~inside] = ext._hessian(x[~inside])
                return h2
        else:
            sp = RectBivariateSpline(self.axis, self.axis, self.values,
                                     kx=3, ky=3)

            def _inside(x):
                return (np.abs(x[:, 0]) <= self.L) & (np.abs(x[:, 1]) <= self.L)

            def val(x):
                inside = _inside(x)
                xc = np.clip(x, -self.L, self.L)
                out = sp.ev(xc[:, 0], xc[:, 1])
                if (~inside).any():
                    out[~inside] = ext._value(x[~inside])
                return out

            def grad(x):
                inside = _inside(x)
                xc = np.clip(x, -self.L, self.L)
                g = np.stack([sp.ev(xc[:, 0], xc[:, 1], dx=1),
                              sp.ev(xc[:, 0], xc[:, 1], dy=1)], axis=1)
                if (~inside).any():
                    g[~inside] = ext._gradient(x[~inside])
                return g

            def hess(x):
                inside = _inside(x)
                xc = np.clip(x, -self.L, self.L)
                H = np.empty((x.shape[0], 2, 2))
                H[:, 0, 0] = sp.ev(xc[:, 0], xc[:, 1], dx=2)
                H[:, 1, 1] = sp.ev(xc[:, 0], xc[:, 1], dy=2)
                H[:, 0, 1] = H[:, 1, 0] = sp.ev(xc[:, 0], xc[:, 1], dx=1, dy=1)
                if (~inside).any():
                    H[~inside] = ext._hessian(x[~inside])
                return H

        sup = max(float(np.max(np.abs(self.values))), ext.sup)
        rs = ext.tail.resid
        tail = Tail(ext.tail.limit,
                    lambda r: (rs(r) if r > self.L * np.sqrt(self.n)
                               else rs(r) + sup + abs(ext.tail.limit)),
                    ext.tail.period, ext.tail.amp)
        return SmoothFunction(self.n, val, grad, hess, sup=sup,
                              grad_sup=np.inf, hess_sup=np.inf, tail=tail)

    def boundary_mismatch(self):
        """Gap between interior values and the exterior closure at the rim."""
        ext = self.exterior
        if self.n == 1:
            pts = np.array([[-self.L], [self.L]])
            vals = np.array([self.values[0], self.values[-1]])
        else:
            idx = [0, self.N - 1]
            pts, vals = [], []
            for i in idx:
                for j in range(self.N):
                    pts.append([self.axis[i], self.axis[j]])
                    vals.append(self.values[i, j])
                    pts.append([self.axis[j], self.axis[i]])
                    vals.append(self.values[j, i])
            pts, vals = np.asarray(pts), np.asarray(vals)
        return float(np.max(np.abs(vals - ext._value(as_points(pts, self.n)))))
