"""SCA-based alternating optimisation of amplitudes and aggregator."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..aircomp import MseBreakdown, align_phase, aligned_mse, optimal_aggregation


class SCAStepError(RuntimeError):
    """The linearised feasible region (ball and half-space) is empty."""


_BISECT_ITERS = 200
_FEAS_TOL = 1e-12


def _objective(a, b):
    return np.sum((a * b - 1.0) ** 2, axis=-1)


def _bisect(fun, lo, hi, active, iters=_BISECT_ITERS):
    """Vectorised bisection for a decreasing ``fun`` crossing zero in [lo, hi].

    Returns the ``hi`` end, where fun <= 0, so the constraint the root
    encodes is never violated by round-off.
    """
    lo = lo.copy()
    hi = hi.copy()
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        pos = fun(mid) > 0
        lo = np.where(active & pos, mid, lo)
        hi = np.where(active & ~pos, mid, hi)
        if np.all((hi - lo)[active] <= 1e-15 * hi[active]):
            break
    return hi


def solve_p12_sca(a, tx_power, power_floor, reference) -> np.ndarray:
    """Exact solution of the linearised per-device amplitude problem.

    For every device (row) solves

        min  sum_n (a_n b_n - 1)^2
        s.t. sum_n b_n^2 <= P,   2 <ref, b> >= rho' + |ref|^2

    by enumerating the KKT active sets: none, ball only, half-space only and
    both. Each candidate minimises the objective on its active constraints;
    the cheapest primal-feasible one is the optimum of this convex problem.
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    ref = np.atleast_2d(np.asarray(reference, dtype=float))
    K, N = a.shape
    P = np.broadcast_to(np.asarray(tx_power, dtype=float), (K,))
    floor = np.broadcast_to(np.asarray(power_floor, dtype=float), (K,))
    ref_n2 = np.sum(ref**2, axis=1)
    r = 0.5 * (floor + ref_n2)  # half-space: <ref, b> >= r
    if np.any(ref_n2 <= 0):
        raise SCAStepError("reference point must be nonzero")
    if np.any(r**2 > P * ref_n2 * (1 + 1e-10)):
        k = int(np.flatnonzero(r**2 > P * ref_n2 * (1 + 1e-10))[0])
        raise SCAStepError(f"device {k}: linearised sensing floor unreachable within power budget")

    def feasible(b):
        S = np.sum(b**2, axis=1)
        lin = np.sum(ref * b, axis=1)
        ok = np.all(np.isfinite(b), axis=1)
        return ok & (S <= P * (1 + _FEAS_TOL)) & (lin >= r * (1 - _FEAS_TOL))

    best = ref.copy()
    best_obj = _objective(a, ref)

    def consider(b, valid):
        nonlocal best, best_obj
        b = np.where(valid[:, None], b, 0.0)
        ok = valid & feasible(b)
        obj = np.where(ok, _objective(a, b), np.inf)
        take = obj < best_obj
        best = np.where(take[:, None], b, best)
        best_obj = np.where(take, obj, best_obj)
        return ok

    pos = a > 0
    a2 = a**2
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        # unconstrained minimiser
        inv = np.where(pos, 1.0 / np.where(pos, a, 1.0), 0.0)
        done = consider(inv, np.ones(K, bool))
        if np.all(done):
            return best

        # power ball active: b = a / (a^2 + mu)
        need = ~done & (np.sum(inv**2, axis=1) > P)
        if np.any(need):
            hi = np.sqrt(np.sum(a2, axis=1) / P) + 1e-300
            mu = _bisect(lambda m: np.sum(a2 / (a2 + m[:, None]) ** 2, axis=1) - P,
                         np.zeros(K), hi, need)
            done |= consider(a / (a2 + mu[:, None]), need)

        # half-space active: b = (a + t ref) / a^2
        sa = np.sum(np.where(pos, ref / np.where(pos, a, 1.0), np.inf * ref), axis=1)
        sq = np.sum(np.where(pos, (ref / np.where(pos, a, 1.0)) ** 2, np.inf * ref), axis=1)
        t = (r - sa) / sq
        need = ~done & np.isfinite(t) & (t >= 0)
        if np.any(need):
            b3 = (a + t[:, None] * ref) / np.where(pos, a2, np.nan)
            done |= consider(b3, need)

        # both active: b(mu) = (a + t(mu) ref) / (a^2 + mu) on the plane, |b(mu)|^2 = P
        need = ~done
        if np.any(need):
            def plane_point(m):
                d = a2 + m[:, None]
                tm = (r - np.sum(ref * a / d, axis=1)) / np.sum(ref**2 / d, axis=1)
                return (a + tm[:, None] * ref) / d

            def excess(m):
                return np.sum(plane_point(m) ** 2, axis=1) - P

            hi = np.sqrt(np.sum(a2, axis=1) / P) + 1.0
            for _ in range(2000):
                grow = need & (excess(hi) > 0)
                if not np.any(grow) or np.all(hi[grow] > 1e300):
                    break
                hi = np.where(grow, hi * 2.0, hi)
            mu = _bisect(excess, np.zeros(K), hi, need)
            consider(plane_point(mu), need)
            # min-norm point of the plane: feasible whenever the region is
            consider(r[:, None] * ref / ref_n2[:, None], need)
    return best


@dataclass
class AoState:
    amplitudes: np.ndarray
    aggregation: np.ndarray
    reference: np.ndarray
    mse_trace: list[MseBreakdown] = field(default_factory=list)
    iteration: int = 0
    converged: bool = False

    @property
    def mse(self) -> MseBreakdown:
        return self.mse_trace[-1]


def solve_p11(B, H, noise_power: float) -> np.ndarray:
    """Aggregator update: the per-subcarrier MMSE closed form."""
    return optimal_aggregation(B, H, noise_power)


def floor_init(power_floor, n_subcarriers: int) -> np.ndarray:
    """Uniform amplitudes with total power exactly on each device's sensing floor."""
    floor = np.asarray(power_floor, dtype=float)
    return np.repeat(np.sqrt(floor / n_subcarriers)[:, None], n_subcarriers, axis=1)


def run_ao_phase(H, tx_power: float, power_floor, noise_power: float, *,
                 init=None, eps_mse: float = 1e-6, max_iter: int = 20000) -> AoState:
    """Alternate the MMSE aggregator and the linearised amplitude problem.

    The SCA reference point is the previous amplitude iterate, so each
    amplitude step is feasible for the true constraints and can only lower
    the objective. Stops once one round lowers MSE-bar by less than
    ``eps_mse``.
    """
    H = np.asarray(H)
    K, N = H.shape
    floor = np.broadcast_to(np.asarray(power_floor, dtype=float), (K,))
    b = floor_init(floor, N) if init is None else np.array(init, dtype=float)
    # W^0 real positive: the first alignment rotates by conj(H) only
    W = np.ones(N, dtype=complex)
    W = solve_p11(align_phase(b, H, W), H, noise_power)
    state = AoState(b, W, b.copy(), [aligned_mse(b, W, H, noise_power)])
    absH = np.abs(H)
    for it in range(1, max_iter + 1):
        W = solve_p11(align_phase(b, H, W), H, noise_power)
        a = np.abs(W)[None, :] * absH
        b = solve_p12_sca(a, tx_power, floor, b)
        mse = aligned_mse(b, W, H, noise_power)
        prev = state.mse_trace[-1].mse_bar
        state.mse_trace.append(mse)
        state.amplitudes, state.aggregation, state.reference = b, W, b
        state.iteration = it
        if prev - mse.mse_bar < eps_mse:
            state.converged = True
            break
    return state
