"""Stability certificates for the closed loop.

Two nested matrix conditions are checked here.  The primary condition is
a passivity certificate for a generation block under droop feedback: a
positive definite P and a damping allowance lambda_hat < Lambda such that
an (n+1)-dimensional symmetric matrix is negative semidefinite.  The
secondary condition extends that matrix by one row/column carrying the
command-coupling gains; it is what the averaging controller needs.  The
primary matrix is the trailing principal submatrix of the secondary one,
so a secondary pass implies a primary pass with the same (P, k_d,
lambda_hat).

For the two worked generator models there are exact diagonal certificates
with closed-form feasibility thresholds on the bus damping; for anything
else a deterministic diagonal search runs.  Eigenvalues of the symmetric
matrices come from a hand-rolled cyclic Jacobi solver so the check has no
dependencies beyond basic arithmetic.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .control import ControllerGains, default_kf
from .generation import (LtiGenerator, dc_gain, first_order_params,
                         second_order_params)

#: "<= 0" for the certificate matrices means max eigenvalue <= TOL_PSD.
TOL_PSD = 1e-9

#: "> 0" for P means min eigenvalue > TOL_PD_PER_DIM * dim.
TOL_PD_PER_DIM = 1e-12

#: Default relative shave applied to the bus damping when picking
#: lambda_hat inside the search: lambda_hat = Lambda * (1 - LAMBDA_SHAVE).
LAMBDA_SHAVE = 1e-3

_JACOBI_OFF_TOL = 1e-12
_JACOBI_MAX_SWEEPS = 60


@dataclass(frozen=True)
class SymmetricMatrix:
    """Exactly symmetric matrix; only the upper triangle is stored.

    entries holds the upper triangle row-major: (0,0), (0,1), ...,
    (0,dim-1), (1,1), ...  Reads below the diagonal mirror the stored
    value, so entry(i, j) == entry(j, i) holds identically, not just up
    to rounding.
    """

    dim: int
    entries: Tuple[float, ...]

    def __post_init__(self):
        want = self.dim * (self.dim + 1) // 2
        if len(self.entries) != want:
            raise ValueError(f"expected {want} packed entries for dim {self.dim}")

    @staticmethod
    def _index(i: int, j: int, dim: int) -> int:
        if i > j:
            i, j = j, i
        # offset of row i's diagonal in the packed upper triangle
        return i * dim - i * (i - 1) // 2 + (j - i)

    def entry(self, i: int, j: int) -> float:
        if not (0 <= i < self.dim and 0 <= j < self.dim):
            raise IndexError("index out of range")
        return self.entries[self._index(i, j, self.dim)]

    @classmethod
    def from_upper(cls, dim: int, upper: Sequence[float]) -> "SymmetricMatrix":
        return cls(dim=dim, entries=tuple(float(v) for v in upper))

    @classmethod
    def from_rows(cls, rows) -> "SymmetricMatrix":
        """Build from a full square array, reading only the upper triangle."""
        n = len(rows)
        packed = []
        for i in range(n):
            if len(rows[i]) != n:
                raise ValueError("rows must form a square matrix")
            for j in range(i, n):
                packed.append(float(rows[i][j]))
        return cls(dim=n, entries=tuple(packed))

    @classmethod
    def diagonal(cls, values: Sequence[float]) -> "SymmetricMatrix":
        n = len(values)
        rows = [[0.0] * n for _ in range(n)]
        for i, v in enumerate(values):
            rows[i][i] = float(v)
        return cls.from_rows(rows)

    def to_lists(self) -> List[List[float]]:
        return [[self.entry(i, j) for j in range(self.dim)] for i in range(self.dim)]

    def to_array(self) -> np.ndarray:
        return np.array(self.to_lists(), dtype=float)


@dataclass(frozen=True)
class Certificate:
    """Witness for the secondary condition at one generator bus.

    p_matrix is the positive definite block, k_f the certified frequency
    feedback gain, lambda_hat the damping allowance consumed by the
    matrix, and margin the strict slack Lambda - lambda_hat kept against
    the actual bus damping.
    """

    p_matrix: SymmetricMatrix
    k_f: float
    lambda_hat: float
    margin: float = 0.0


def sym_eigenvalues(m: SymmetricMatrix) -> List[float]:
    """All eigenvalues, ascending, via cyclic Jacobi rotations.

    Sweeps run until every off-diagonal magnitude falls below 1e-12 (or
    below roundoff relative to the matrix norm, whichever is larger); for
    the small dimensions used here that takes a handful of sweeps.
    """
    n = m.dim
    if n == 1:
        return [m.entry(0, 0)]
    a = m.to_lists()
    fro = math.sqrt(sum(a[i][j] ** 2 for i in range(n) for j in range(n)))
    stop = max(_JACOBI_OFF_TOL, 1e-15 * fro)
    for _ in range(_JACOBI_MAX_SWEEPS):
        off = 0.0
        for p in range(n - 1):
            for q in range(p + 1, n):
                off = max(off, abs(a[p][q]))
        if off < stop:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p][q]
                if abs(apq) < stop * 1e-2:
                    continue
                theta = (a[q][q] - a[p][p]) / (2.0 * apq)
                t = math.copysign(1.0, theta) / (abs(theta) + math.hypot(theta, 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                for k in range(n):
                    if k == p or k == q:
                        continue
                    akp = a[k][p]
                    akq = a[k][q]
                    a[k][p] = a[p][k] = c * akp - s * akq
                    a[k][q] = a[q][k] = s * akp + c * akq
                a[p][p] -= t * apq
                a[q][q] += t * apq
                a[p][q] = a[q][p] = 0.0
    return sorted(a[i][i] for i in range(n))


def is_positive_definite(m: SymmetricMatrix) -> bool:
    return sym_eigenvalues(m)[0] > TOL_PD_PER_DIM * m.dim


def primary_lmi_matrix(gen: LtiGenerator, k_d: float, p: SymmetricMatrix,
                       lambda_hat: float) -> SymmetricMatrix:
    """The (n+1)-dimensional passivity matrix for droop feedback.

    Layout: leading n x n block sym(P A), coupling column
    (k_d P B - C^T)/2, corner -lambda_hat - D k_d.  Negative
    semidefiniteness of this matrix (with P positive definite and
    lambda_hat < Lambda) is the primary-control stability condition.
    """
    n = gen.order
    if p.dim != n:
        raise ValueError(f"P has dim {p.dim}, generator has order {n}")
    pa = p.to_array() @ np.array(gen.a_matrix, dtype=float)
    sym_pa = (pa + pa.T) / 2.0
    col = (k_d * (p.to_array() @ np.array(gen.b_vector, dtype=float))
           - np.array(gen.c_vector, dtype=float)) / 2.0
    rows = [[0.0] * (n + 1) for _ in range(n + 1)]
    for i in range(n):
        for j in range(n):
            rows[i][j] = sym_pa[i][j]
        rows[i][n] = rows[n][i] = col[i]
    rows[n][n] = -lambda_hat - gen.d_scalar * k_d
    return SymmetricMatrix.from_rows(rows)


def check_primary_lmi(gen: LtiGenerator, k_d: float, cert: Certificate,
                      lambda_bus: float) -> bool:
    """Does the certificate witness the primary (droop) condition?"""
    if not cert.lambda_hat < lambda_bus:
        raise ValueError("certificate lambda_hat must be below the bus damping")
    if not is_positive_definite(cert.p_matrix):
        return False
    m = primary_lmi_matrix(gen, k_d, cert.p_matrix, cert.lambda_hat)
    return sym_eigenvalues(m)[-1] <= TOL_PSD


def secondary_lmi_matrix(gen: LtiGenerator, params: ControllerGains,
                         p: SymmetricMatrix, lambda_hat: float,
                         k_f: Optional[float] = None) -> SymmetricMatrix:
    """The (n+2)-dimensional matrix for the averaging controller.

    Row/column 0 carries the command coupling: corner -K k_c + D k_c and
    border r = [(k_c B^T P + C)/2, (k_f - k_d K + D k_d - D k_c)/2].  The
    trailing (n+1) block is exactly the primary matrix (same floats, same
    construction).  ``k_f`` overrides params.k_f when given, since the
    certifier treats it as a free variable.
    """
    n = gen.order
    if p.dim != n:
        raise ValueError(f"P has dim {p.dim}, generator has order {n}")
    kf = params.k_f if k_f is None else k_f
    k_gain = dc_gain(gen)
    base = primary_lmi_matrix(gen, params.k_d, p, lambda_hat)
    r_state = (params.k_c * (np.array(gen.b_vector, dtype=float) @ p.to_array())
               + np.array(gen.c_vector, dtype=float)) / 2.0
    r_freq = (kf - params.k_d * k_gain + gen.d_scalar * params.k_d
              - gen.d_scalar * params.k_c) / 2.0
    rows = [[0.0] * (n + 2) for _ in range(n + 2)]
    rows[0][0] = -k_gain * params.k_c + gen.d_scalar * params.k_c
    for i in range(n):
        rows[0][i + 1] = rows[i + 1][0] = r_state[i]
    rows[0][n + 1] = rows[n + 1][0] = r_freq
    for i in range(n + 1):
        for j in range(n + 1):
            rows[i + 1][j + 1] = base.entry(i, j)
    return SymmetricMatrix.from_rows(rows)


def check_secondary_lmi(gen: LtiGenerator, params: ControllerGains,
                        cert: Certificate, lambda_bus: float) -> bool:
    """Does the certificate witness the secondary (averaging) condition?"""
    if not cert.lambda_hat < lambda_bus:
        raise ValueError("certificate lambda_hat must be below the bus damping")
    if not is_positive_definite(cert.p_matrix):
        return False
    m = secondary_lmi_matrix(gen, params, cert.p_matrix, cert.lambda_hat,
                             k_f=cert.k_f)
    return sym_eigenvalues(m)[-1] <= TOL_PSD


def second_order_min_damping(k_gain: float, k_c: float, k_d: float) -> float:
    """Exact damping threshold for the turbine-governor model.

    Above K/(3 k_c) * (k_c^2 - k_c k_d + k_d^2) the analytic certificate
    passes the secondary condition for every pair of time constants; below
    it, no choice of lambda_hat saves that certificate.  Minimized over
    k_d at k_d = k_c/2, where it equals K * k_c / 4.
    """
    if not (k_gain > 0.0 and k_c > 0.0 and k_d > 0.0):
        raise ValueError("gains must be strictly positive")
    return k_gain / (3.0 * k_c) * (k_c * k_c - k_c * k_d + k_d * k_d)


def first_order_min_damping(k_gain: float, k_c: float, k_d: float) -> float:
    """Exact damping threshold for the first-order lag model.

    The first-order secondary matrix is feasible only at the single point
    P = tau/(K k_c), k_f = K k_c, where it needs
    Lambda >= K (k_c - k_d)^2 / (4 k_c).  Zero when k_c = k_d.
    """
    if not (k_gain > 0.0 and k_c > 0.0 and k_d > 0.0):
        raise ValueError("gains must be strictly positive")
    return k_gain * (k_c - k_d) ** 2 / (4.0 * k_c)


def second_order_certificate(tau_a: float, tau_p: float, k_gain: float,
                             k_c: float, k_d: float,
                             lambda_hat: float = 0.0) -> Certificate:
    """Analytic certificate for the turbine-governor model.

    P = diag(tau_a, tau_p)/(K k_c) and k_f = K k_c.  With these choices
    the secondary matrix is independent of the time constants, and it is
    negative semidefinite exactly when lambda_hat reaches
    second_order_min_damping.  lambda_hat defaults to 0; callers position
    it below their bus damping.
    """
    if not (tau_a > 0.0 and tau_p > 0.0 and k_gain > 0.0 and k_c > 0.0
            and k_d > 0.0):
        raise ValueError("all certificate parameters must be strictly positive")
    scale = 1.0 / (k_gain * k_c)
    p = SymmetricMatrix.diagonal([tau_a * scale, tau_p * scale])
    return Certificate(p_matrix=p, k_f=k_gain * k_c, lambda_hat=lambda_hat)


def first_order_certificate(tau: float, k_gain: float, k_c: float,
                            lambda_hat: float = 0.0) -> Certificate:
    """Analytic certificate for the first-order lag model.

    The only certifiable point: P = tau/(K k_c), k_f = K k_c.
    """
    if not (tau > 0.0 and k_gain > 0.0 and k_c > 0.0):
        raise ValueError("all certificate parameters must be strictly positive")
    p = SymmetricMatrix.diagonal([tau / (k_gain * k_c)])
    return Certificate(p_matrix=p, k_f=k_gain * k_c, lambda_hat=lambda_hat)


def _max_eig(gen: LtiGenerator, params: ControllerGains, diag: Sequence[float],
             k_f: float, lambda_hat: float) -> float:
    p = SymmetricMatrix.diagonal(diag)
    m = secondary_lmi_matrix(gen, params, p, lambda_hat, k_f=k_f)
    return sym_eigenvalues(m)[-1]


def _golden_min(f, lo: float, hi: float, iters: int = 32) -> float:
    """Golden-section minimizer; returns the best argument found."""
    inv_phi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - inv_phi * (b - a)
    d = a + inv_phi * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(iters):
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - inv_phi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + inv_phi * (b - a)
            fd = f(d)
    return c if fc < fd else d


def search_certificate(gen: LtiGenerator, params: ControllerGains,
                       lambda_bus: float) -> Optional[Certificate]:
    """Deterministic search for a diagonal-P certificate.

    Tries the exact analytic certificates first when the block matches one
    of the worked model structures, then a log-spaced grid over diagonal P
    with a handful of k_f candidates, then cyclic coordinate descent on
    (log diag P, k_f) minimizing the max eigenvalue.  Returns None when no
    diagonal certificate is found; that is a statement about this search
    family, not infeasibility of the condition.
    """
    if not lambda_bus > 0.0:
        return None
    lambda_hat = lambda_bus * (1.0 - LAMBDA_SHAVE)
    margin = lambda_bus - lambda_hat
    k_gain = dc_gain(gen)
    n = gen.order

    def finish(diag: Sequence[float], k_f: float) -> Optional[Certificate]:
        cert = Certificate(p_matrix=SymmetricMatrix.diagonal(diag), k_f=k_f,
                           lambda_hat=lambda_hat, margin=margin)
        if check_secondary_lmi(gen, params, cert, lambda_bus):
            return cert
        return None

    kf_candidates = []
    for kf in (params.k_f, k_gain * params.k_c,
               default_kf(k_gain, params.k_c, params.k_d)):
        if kf > 0.0 and kf not in kf_candidates:
            kf_candidates.append(kf)

    # Exact analytic candidates for the worked model structures.
    analytic_diags: List[Tuple[float, ...]] = []
    fo = first_order_params(gen)
    if fo is not None:
        tau, _k = fo
        analytic_diags.append((tau / (k_gain * params.k_c),))
    so = second_order_params(gen)
    if so is not None:
        tau_a, tau_p, _k = so
        scale = 1.0 / (k_gain * params.k_c)
        analytic_diags.append((tau_a * scale, tau_p * scale))
    for diag in analytic_diags:
        for kf in kf_candidates:
            cert = finish(diag, kf)
            if cert is not None:
                return cert

    # Coarse grid over diagonal P, with extra k_f points around the default.
    base_kf = default_kf(k_gain, params.k_c, params.k_d)
    for mult in (0.25, 0.5, 2.0, 4.0):
        kf = base_kf * mult
        if kf not in kf_candidates:
            kf_candidates.append(kf)
    grid = [10.0 ** (-3.0 + 0.5 * i) for i in range(13)]  # 1e-3 .. 1e3
    diag_candidates: List[Tuple[float, ...]] = []
    if n == 1:
        diag_candidates = [(g,) for g in grid]
    elif n == 2:
        diag_candidates = [(g1, g2) for g1 in grid for g2 in grid]
    else:
        diag_candidates = [(g,) * n for g in grid]

    best = None  # (max_eig, diag, k_f)
    for diag in analytic_diags + diag_candidates:
        for kf in kf_candidates:
            val = _max_eig(gen, params, diag, kf, lambda_hat)
            if best is None or val < best[0]:
                best = (val, diag, kf)
            if val <= TOL_PSD:
                return finish(diag, kf)

    # Coordinate descent from the best grid point.
    _, diag, kf = best
    logd = [math.log10(v) for v in diag]
    val = best[0]
    for _ in range(200):
        improved = False
        for i in range(n):
            def f_logp(x, i=i):
                d = list(logd)
                d[i] = x
                return _max_eig(gen, params, [10.0 ** v for v in d], kf, lambda_hat)
            xi = _golden_min(f_logp, logd[i] - 1.0, logd[i] + 1.0)
            vi = f_logp(xi)
            if vi < val - 1e-15:
                logd[i] = xi
                val = vi
                improved = True

        def f_kf(x):
            return _max_eig(gen, params, [10.0 ** v for v in logd], x, lambda_hat)
        xk = _golden_min(f_kf, kf * 0.25, kf * 4.0)
        vk = f_kf(xk)
        if vk < val - 1e-15:
            kf = xk
            val = vk
            improved = True
        if val <= TOL_PSD:
            return finish([10.0 ** v for v in logd], kf)
        if not improved:
            break
    return None
