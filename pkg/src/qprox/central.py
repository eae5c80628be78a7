"""Centralized solvers.

``exact_reference`` is the deterministic full proximal-gradient oracle
used to pin the optimum ``x*`` that every convergence gap is measured
against.  ``inexact_prox_svrg`` is the semi-stochastic solver: an outer
loop refreshes the full gradient, an inner loop takes variance-reduced
stochastic proximal steps, and a pluggable injector adds a zero-mean
error to each step direction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import rng
from .errors import NonConvergenceError, ParameterError
from .problem import ProblemInstance


# ---------------------------------------------------------------------------
# error injectors

class NoError:
    """Inject nothing; the solver runs its exact semi-stochastic steps."""

    def drawer(self):
        return lambda s, t, dim: None


@dataclass(frozen=True)
class GaussianDecaying:
    """i.i.d. Gaussian error with geometrically decaying energy.

    Per-component deviation is ``sigma0 * rate**(s/2)`` so the summed
    second moment of a round decays like ``rate**s``.
    """

    sigma0: float
    rate: float
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.rate < 1.0:
            raise ParameterError("decay rate must lie in (0, 1)")

    def drawer(self):
        gen = rng.stream(self.seed, "inject")

        def draw(s, t, dim):
            return (self.sigma0 * self.rate ** (s / 2.0)
                    * gen.standard_normal(dim))

        return draw


class Replay:
    """Replay a recorded error sequence exactly: ``errors[s][t]``."""

    def __init__(self, errors):
        self.errors = errors

    def drawer(self):
        return lambda s, t, dim: self.errors[s][t]


# ---------------------------------------------------------------------------
# run trace

@dataclass
class Trace:
    """Per-outer-round run record.

    Row ``s`` holds the objective gap and optimum distance measured at
    the round's start iterate, the realized error energy of the round,
    and cumulative communication counters (zero for centralized runs).
    """

    gap: np.ndarray
    dist: np.ndarray
    gamma: np.ndarray
    bits_cum: np.ndarray
    overflows: np.ndarray
    edge_clamps: np.ndarray
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.gap)


def _as_trace(rows, meta) -> Trace:
    cols = list(zip(*rows)) if rows else [[]] * 6
    return Trace(gap=np.asarray(cols[0], dtype=float),
                 dist=np.asarray(cols[1], dtype=float),
                 gamma=np.asarray(cols[2], dtype=float),
                 bits_cum=np.asarray(cols[3], dtype=float),
                 overflows=np.asarray(cols[4], dtype=float),
                 edge_clamps=np.asarray(cols[5], dtype=float),
                 meta=meta)


# ---------------------------------------------------------------------------
# solvers

def exact_reference(inst: ProblemInstance, eta: float | None = None,
                    tol: float = 1e-12, max_iter: int = 500_000,
                    on_iterate=None) -> np.ndarray:
    """Optimum by full proximal-gradient iteration.

    Runs ``x <- prox(x - eta * grad F(x))`` until the step residual
    ``||x - x_next|| / eta`` drops to ``tol``.  With the default step
    ``1 / L_F`` (inverse of the largest aggregate-Hessian eigenvalue)
    the objective decreases monotonically, so the returned point is a
    deterministic stand-in for the true minimizer.

    Raises
    ------
    NonConvergenceError
        If ``max_iter`` iterations do not reach the tolerance; the
        exception carries the last residual.
    """
    if tol <= 0:
        raise ParameterError("tolerance must be positive")
    M = inst.aggregate_hessian()
    L_F = float(np.linalg.eigvalsh(M)[-1])
    if eta is None:
        eta = 1.0 / L_F
    elif not 0.0 < eta <= 1.0 / L_F + 1e-15:
        raise ParameterError("reference step must satisfy eta <= 1/L_F")
    q = inst.full_gradient(np.zeros(inst.P))
    x = np.zeros(inst.P)
    residual = np.inf
    for _ in range(max_iter):
        x_next = inst.prox(x - eta * (M @ x + q), eta)
        residual = float(np.linalg.norm(x - x_next)) / eta
        x = x_next
        if on_iterate is not None:
            on_iterate(x)
        if residual <= tol:
            return x
    raise NonConvergenceError(
        f"no fixed point after {max_iter} iterations "
        f"(residual {residual:.3e} > tol {tol:.3e})", residual=residual)


def convergence_constants(mu: float, L_bar: float, eta: float, T: int):
    """Contraction and error-transfer constants of the inexact solver.

    Returns ``(alpha, beta, applicable)`` where ``alpha`` is the
    per-round contraction factor of the expected objective gap,
    ``beta`` scales the per-round injected error energy, and
    ``applicable`` is False when ``alpha >= 1`` (the linear-rate
    guarantee is void, runs are still permitted).
    """
    if mu <= 0:
        raise ParameterError("strong convexity missing (mu <= 0)")
    if T < 1:
        raise ParameterError("inner loop length must be >= 1")
    if not 0.0 < eta < 1.0 / (4.0 * L_bar):
        raise ParameterError("step must satisfy 0 < eta < 1/(4 L_bar)")
    denom = 1.0 - 4.0 * L_bar * eta
    alpha = (1.0 / (mu * eta * denom * T)
             + 4.0 * L_bar * eta * (T + 1) / (denom * T))
    beta = eta / (T * denom)
    return alpha, beta, alpha < 1.0


def inexact_prox_svrg(inst: ProblemInstance, eta: float, T: int, S: int,
                      injector=None, seed: int = 0,
                      x_star: np.ndarray | None = None,
                      record_inner: bool = False,
                      force: bool = False, meta: dict | None = None) -> Trace:
    """Semi-stochastic proximal gradient with injected direction errors.

    Per outer round ``s``: anchor the full gradient ``g = grad F(xt)``;
    then for ``T`` inner steps pick a node uniformly, form the
    variance-reduced direction
    ``v = grad f_l(x) + (g - grad f_l(xt)) + e`` (node gradients lifted
    to global coordinates), and move ``x`` through the prox.  The next
    anchor is the average of the ``T`` inner iterates.

    Parameters
    ----------
    inst : ProblemInstance
    eta : float
        Constant step size; must satisfy ``eta < 1/(4 max_i L_i)``
        unless ``force`` is set.
    T, S : int
        Inner steps per round and number of outer rounds.
    injector : optional
        ``NoError()`` (default), ``GaussianDecaying``, or ``Replay``.
    seed : int
        Seed of the node-sampling stream.  Two runs (or a distributed
        twin) sharing this seed draw the identical node sequence.
    x_star : ndarray, optional
        Reference optimum; enables the gap and distance columns.
    record_inner : bool
        Also store every inner iterate on ``trace.inner`` (tests).

    Returns
    -------
    Trace
        One row per outer round; deterministic given the seeds.
    """
    if T < 1 or S < 0:
        raise ParameterError("need T >= 1 and S >= 0")
    L_bar = inst.smoothness().L_bar
    if not force and not 0.0 < eta < 1.0 / (4.0 * L_bar):
        raise ParameterError(
            f"eta*4*L_bar = {eta * 4.0 * L_bar:.6g} >= 1; "
            "pass force=True to run anyway")

    draw = (injector or NoError()).drawer()
    ell_gen = rng.stream(seed, "ell")
    g_star = inst.objective(x_star) if x_star is not None else None

    x_tilde = np.zeros(inst.P)
    rows = []
    inner_log = [] if record_inner else None
    for s in range(S):
        gap = inst.objective(x_tilde) - g_star if g_star is not None else np.nan
        dist = (float(np.linalg.norm(x_tilde - x_star))
                if x_star is not None else np.nan)

        g = inst.full_gradient(x_tilde)
        anchor_grads: dict[int, np.ndarray] = {}
        x = x_tilde.copy()
        acc = np.zeros(inst.P)
        gamma = 0.0
        round_inner = [] if record_inner else None
        for t in range(T):
            ell = int(ell_gen.integers(inst.N))
            if ell not in anchor_grads:
                anchor_grads[ell] = inst.lifted_gradient(ell, x_tilde)
            v = inst.lifted_gradient(ell, x) + (g - anchor_grads[ell])
            e = draw(s, t, inst.P)
            if e is not None:
                v = v + e
                gamma += float(e @ e)
            x = inst.prox(x - eta * v, eta)
            acc += x
            if record_inner:
                round_inner.append(x.copy())
        x_tilde = acc / T
        rows.append((gap, dist, gamma, 0.0, 0.0, 0.0))
        if record_inner:
            inner_log.append(round_inner)

    trace = _as_trace(rows, dict(meta or {}, kind="central", eta=eta, T=T,
                                 S=S, seed_ell=seed))
    trace.final_x = x_tilde
    if record_inner:
        trace.inner = inner_log
    return trace
