"""Stiff time integration for the full Galerkin system.

The main integrator is a variable-step, variable-order BDF method (orders
1-5) stored in Nordsieck form ``z = [y, h y', h^2 y''/2, ...]``.  The
corrector is solved by a modified Newton iteration with the analytic KS
Jacobian.  A fixed-step classical RK4 integrator is provided as an
independent reference.

Error weights are ``atol + tol * |y_i|``; a step is accepted when the
weighted max-norm of the local error estimate is at most one.  The reported
``error_estimate`` is that normalised value multiplied by ``tol``, so an
accepted step always satisfies ``error_estimate <= tol``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from .spectral import ModeState, SpectralParams, pack, reality_fill, rhs_array, unpack

log = logging.getLogger(__name__)

MAX_ORDER = 5


class IntegrationError(RuntimeError):
    """Raised when the step size would drop below ``dt_min``."""


@dataclass(frozen=True)
class BdfConfig:
    tol: float = 1e-7
    max_order: int = 5
    dt_init: float = 1e-4
    dt_min: float = 1e-12
    dt_max: float = 0.1
    newton_tol: float | None = None
    newton_max_iter: int = 4
    atol: float | None = None

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if not 1 <= self.max_order <= MAX_ORDER:
            raise ValueError(f"max_order must lie in 1..{MAX_ORDER}")
        if not self.dt_min <= self.dt_init <= self.dt_max:
            raise ValueError("need dt_min <= dt_init <= dt_max")

    @property
    def newton_tol_value(self) -> float:
        return self.tol / 10 if self.newton_tol is None else self.newton_tol

    @property
    def atol_value(self) -> float:
        return self.tol if self.atol is None else self.atol


def _bdf_l(q: int) -> np.ndarray:
    # coefficients of prod_{i=1..q} (1 + x/i), ascending powers
    l = np.array([1.0])
    for i in range(1, q + 1):
        l = np.convolve(l, [1.0, 1.0 / i])
    return l


_L = {q: _bdf_l(q) for q in range(1, MAX_ORDER + 2)}
# e = y_n - y_pred is close to h^(q+1) y^(q+1); the order-q local error is e / (q + 1)
_ERRC = {q: 1.0 / (q + 1) for q in range(1, MAX_ORDER + 2)}
_PASCAL = {
    q: np.array([[math.comb(i, j) for i in range(q + 1)] for j in range(q + 1)], dtype=float)
    for q in range(0, MAX_ORDER + 2)
}


class OdeSystem:
    """Real autonomous system y' = f(y) with Jacobian."""

    def rhs(self, y: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def jac(self, y: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class LinearSystem(OdeSystem):
    def __init__(self, A):
        self.A = np.atleast_2d(np.asarray(A, dtype=float))

    def rhs(self, y):
        return self.A @ y

    def jac(self, y):
        return self.A


class KsSystem(OdeSystem):
    """KS Galerkin system over the independent real unknowns."""

    def __init__(self, params: SpectralParams):
        self.params = params

    def rhs(self, y):
        p = self.params
        return pack(rhs_array(unpack(y, p), p), p)

    def jac(self, y):
        return ks_jacobian(unpack(y, self.params), self.params)


def _as_system(system) -> OdeSystem:
    return KsSystem(system) if isinstance(system, SpectralParams) else system


def complex_jacobian(u: np.ndarray, params: SpectralParams) -> np.ndarray:
    """dR_k/du_l = -i k u_{k-l} + delta_kl (k^2 - nu k^4) over all N wavenumbers."""
    k = params.wavenumbers
    diff = k[:, None] - k[None, :]
    inside = (diff >= -params.N // 2) & (diff < params.N // 2)
    shifted = np.where(inside, u[np.clip(params.index(diff), 0, params.N - 1)], 0.0)
    J = -1j * k[:, None] * shifted + np.diag(params.linear_rates)
    J[params.pinned, :] = 0.0
    return J


def ks_jacobian(state, params: SpectralParams) -> np.ndarray:
    """Real Jacobian of the packed RHS with respect to the packed unknowns."""
    u = state.coeffs if isinstance(state, ModeState) else state
    Jc = complex_jacobian(u, params)
    pos = params.index(params.positive)
    neg = params.index(-params.positive)
    Jp = Jc[np.ix_(pos, pos)]
    Jn = Jc[np.ix_(pos, neg)]
    dx = Jp + Jn
    dy = 1j * (Jp - Jn)
    return np.block([[dx.real, dy.real], [dx.imag, dy.imag]])


@dataclass
class NordsieckState:
    z: np.ndarray
    h: float
    order: int
    t: float
    steps_at_h: int = 0
    e_prev: np.ndarray | None = None
    jac: np.ndarray | None = None
    jac_age: int = 0
    lu: tuple | None = None
    lu_gamma: float = math.nan
    last_poly: tuple | None = None
    stats: dict = field(default_factory=lambda: dict(steps=0, rejected=0, newton_fail=0, jac=0))

    @property
    def y(self) -> np.ndarray:
        return self.z[0]

    def interpolate(self, t: float) -> np.ndarray:
        """Evaluate the polynomial of the last accepted step at time ``t``."""
        z, h, tn = self.last_poly if self.last_poly is not None else (self.z, self.h, self.t)
        x = (t - tn) / h
        return np.polynomial.polynomial.polyval(x, z)


def nordsieck_start(y0, t0: float, h: float, system, derivatives=None) -> NordsieckState:
    """Order-1 start, or order-q start from supplied exact derivatives y', y'', ..."""
    system = _as_system(system)
    y0 = np.asarray(y0, dtype=float)
    if derivatives is None:
        z = np.stack([y0, h * system.rhs(y0)])
    else:
        cols = [y0] + [h**j / math.factorial(j) * np.asarray(d, dtype=float) for j, d in enumerate(derivatives, 1)]
        z = np.stack(cols)
    return NordsieckState(z=z, h=h, order=z.shape[0] - 1, t=t0)


def _rescale(ns: NordsieckState, h_new: float) -> None:
    eta = h_new / ns.h
    ns.z = ns.z * (eta ** np.arange(ns.order + 1))[:, None]
    ns.h = h_new
    ns.steps_at_h = 0


def _refresh_jacobian(ns, system, y):
    ns.jac = np.asarray(system.jac(y), dtype=float)
    ns.jac_age = 0
    ns.lu = None
    ns.stats["jac"] += 1


def _newton(ns, cfg, system, zp, l1, gamma, w):
    if ns.lu is None or ns.lu_gamma != gamma:
        n = zp.shape[1]
        ns.lu = lu_factor(np.eye(n) - gamma * ns.jac)
        ns.lu_gamma = gamma
    target = zp[1] / l1
    e = np.zeros_like(zp[0])
    y = zp[0].copy()
    tol = cfg.newton_tol_value / cfg.tol
    prev = None
    for _ in range(cfg.newton_max_iter):
        r = gamma * system.rhs(y) - target - e
        d = lu_solve(ns.lu, r)
        e += d
        y = zp[0] + e
        dn = float(np.max(np.abs(d) / w))
        if not np.isfinite(dn):
            return False, e, y, math.inf
        rate = dn / prev if prev else 0.0
        if dn <= tol or (prev and dn * rate / max(1.0 - rate, 1e-12) <= tol and rate < 0.9):
            return True, e, y, rate
        if prev and rate > 0.9:
            return False, e, y, rate
        prev = dn
    return False, e, y, math.inf


def bdf_step(ns: NordsieckState, cfg: BdfConfig, system):
    """Attempt one step of size ``ns.h``.

    Returns ``(ns, accepted, error_estimate)``.  On rejection the solution is
    untouched and ``ns.h`` holds the reduced step for the retry.
    """
    system = _as_system(system)
    q, h = ns.order, ns.h
    l = _L[q]
    gamma = h / l[1]
    zp = _PASCAL[q] @ ns.z
    w = cfg.atol_value + cfg.tol * np.abs(zp[0])

    if ns.jac is None:
        _refresh_jacobian(ns, system, zp[0])
    ok, e, y, rate = _newton(ns, cfg, system, zp, l[1], gamma, w)
    if not ok and ns.jac_age > 0:
        _refresh_jacobian(ns, system, zp[0])
        ok, e, y, rate = _newton(ns, cfg, system, zp, l[1], gamma, w)
    if not ok:
        ns.stats["newton_fail"] += 1
        _shrink(ns, cfg, 0.5 * h)
        return ns, False, math.inf

    err = float(np.max(np.abs(_ERRC[q] * e) / w))
    fixed = cfg.dt_min == cfg.dt_max
    if fixed and err > 1.0:
        ns.stats["over_tol"] = ns.stats.get("over_tol", 0) + 1
    elif err > 1.0:
        ns.stats["rejected"] += 1
        eta = max(0.2, (0.9 / err) ** (1.0 / (q + 1)))
        _shrink(ns, cfg, h * eta)
        return ns, False, err * cfg.tol

    ns.z = zp + np.outer(l, e)
    ns.t += h
    ns.last_poly = (ns.z.copy(), h, ns.t)
    ns.steps_at_h += 1
    ns.jac_age += 1
    ns.stats["steps"] += 1
    if rate > 0.5 or ns.jac_age > 20:
        ns.jac = None
    _adapt(ns, cfg, e, err)
    return ns, True, err * cfg.tol


def _shrink(ns, cfg, h_new):
    if h_new < cfg.dt_min:
        if ns.h > cfg.dt_min:
            h_new = cfg.dt_min
        else:
            raise IntegrationError(f"step size below dt_min={cfg.dt_min:g} at t={ns.t:.6g}")
    _rescale(ns, min(h_new, cfg.dt_max))
    ns.e_prev = None


def _adapt(ns: NordsieckState, cfg: BdfConfig, e: np.ndarray, err: float) -> None:
    q = ns.order
    if cfg.dt_min == cfg.dt_max:
        ns.e_prev = e
        return
    if ns.steps_at_h < q + 1:
        ns.e_prev = e
        return
    w = cfg.atol_value + cfg.tol * np.abs(ns.z[0])
    tiny = 1e-10
    # LSODE-style biases favour keeping the current order
    eta_same = 1.0 / (1.2 * max(err, tiny) ** (1.0 / (q + 1)))
    eta_down = eta_up = 0.0
    if q > 1:
        err_down = float(np.max(np.abs(math.factorial(q - 1) * ns.z[q]) / w))
        eta_down = 1.0 / (1.3 * max(err_down, tiny) ** (1.0 / q))
    if q < cfg.max_order and ns.e_prev is not None:
        err_up = float(np.max(np.abs(e - ns.e_prev) / w)) / (q + 2)
        eta_up = 1.0 / (1.4 * max(err_up, tiny) ** (1.0 / (q + 2)))
    ns.e_prev = e

    eta, new_q = max((eta_same, q), (eta_down, q - 1), (eta_up, q + 1))
    if eta < 1.2:
        return
    eta = min(eta, 10.0)
    h_new = min(ns.h * eta, cfg.dt_max)
    if h_new <= ns.h and new_q == q:
        return
    if new_q > q:
        ns.z = np.vstack([ns.z, e * _L[q][q] / (q + 1)])
    elif new_q < q:
        ns.z = ns.z[:-1]
    ns.order = new_q
    ns.lu = None
    _rescale(ns, h_new)
    ns.e_prev = None


# -- trajectories ---------------------------------------------------------------


@dataclass
class Trajectory:
    times: np.ndarray
    coeffs: np.ndarray  # (T, N) complex
    stats: dict = field(default_factory=dict)

    def state(self, i: int) -> ModeState:
        return ModeState(self.coeffs[i], float(self.times[i]))


def sample_grid(t0: float, t_end: float, sample_dt: float) -> np.ndarray:
    n = int(round((t_end - t0) / sample_dt))
    return t0 + sample_dt * np.arange(n + 1)


def integrate_packed(y0, t0: float, t_end: float, cfg: BdfConfig, system, times) -> tuple[np.ndarray, dict]:
    """Integrate a real system with BDF and return values at ``times``."""
    system = _as_system(system)
    times = np.asarray(times, dtype=float)
    out = np.empty((len(times), len(y0)))
    h0 = min(cfg.dt_init, max(t_end - t0, cfg.dt_min))
    ns = nordsieck_start(y0, t0, h0, system)
    i = 0
    while i < len(times) and times[i] <= t0:
        out[i] = y0
        i += 1
    while i < len(times):
        ns, accepted, _ = bdf_step(ns, cfg, system)
        if not accepted:
            continue
        while i < len(times) and times[i] <= ns.t + 1e-12 * max(1.0, abs(ns.t)):
            out[i] = ns.interpolate(times[i])
            i += 1
    return out, dict(ns.stats)


def integrate_full(
    ic: ModeState,
    t_end: float,
    cfg: BdfConfig,
    params: SpectralParams,
    sample_dt: float,
) -> Trajectory:
    """BDF integration of the full system with output every ``sample_dt``."""
    if not t_end > ic.time:
        raise ValueError("t_end must exceed the initial time")
    times = sample_grid(ic.time, t_end, sample_dt)
    y0 = pack(ic.coeffs, params)
    ys, stats = integrate_packed(y0, ic.time, t_end, cfg, KsSystem(params), times)
    coeffs = reality_fill(unpack(ys, params), params)
    return Trajectory(times, coeffs, stats)


def final_state(ic: ModeState, t_end: float, cfg: BdfConfig, params: SpectralParams) -> ModeState:
    if t_end <= ic.time:
        return ic.copy()
    traj = integrate_full(ic, t_end, cfg, params, t_end - ic.time)
    return traj.state(-1)


def rk4_integrate(f, y0, t0: float, h: float, n_steps: int, every: int = 1) -> np.ndarray:
    """Fixed-step classical RK4; returns every ``every``-th state including y0."""
    y = np.array(y0, copy=True)
    out = [y.copy()]
    for s in range(1, n_steps + 1):
        k1 = f(y)
        k2 = f(y + 0.5 * h * k1)
        k3 = f(y + 0.5 * h * k2)
        k4 = f(y + h * k3)
        y = y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if s % every == 0:
            out.append(y.copy())
    return np.array(out)


def rk4_full(ic: ModeState, t_end: float, h: float, params: SpectralParams) -> ModeState:
    """Reference fixed-step RK4 solution of the full system at ``t_end``."""
    n = int(round((t_end - ic.time) / h))
    ys = rk4_integrate(lambda u: rhs_array(u, params), ic.coeffs, ic.time, h, n, every=n)
    return ModeState(reality_fill(ys[-1], params), ic.time + n * h)
