"""Convergence constants, error-energy envelopes, and rate fitting."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .central import convergence_constants
from .distributed import QuantLog, reconstruct_round
from .errors import FitRefusedError, ParameterError


@dataclass(frozen=True)
class EnvelopeParams:
    """Everything the closed-form gap and energy envelopes depend on.

    Derived fields ``alpha`` (per-round contraction), ``beta`` (error
    transfer), and ``C`` (error-energy scale) are filled in on
    construction.  ``envelope_applicable`` is False when
    ``alpha >= kappa``; the envelope is then reported as void rather
    than silently evaluated.
    """

    D: int
    T: int
    m_bar: int
    bits: int
    L_bar: float
    mu: float
    eta: float
    kappa: float
    C_a: float
    C_b: float
    C_c: float
    C_d: float
    N: int
    alpha: float = field(init=False)
    beta: float = field(init=False)
    C: float = field(init=False)

    def __post_init__(self):
        if min(self.D, self.T, self.m_bar, self.bits, self.N) <= 0:
            raise ParameterError("envelope parameters must be positive")
        if not 0.0 < self.kappa < 1.0:
            raise ParameterError("kappa must lie in (0, 1)")
        alpha, beta, _ = convergence_constants(self.mu, self.L_bar,
                                               self.eta, self.T)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "C", error_energy_constant(self))

    @property
    def envelope_applicable(self) -> bool:
        return self.alpha < self.kappa


def error_energy_constant(p: EnvelopeParams) -> float:
    """Scale ``C`` of the per-round error-energy envelope ``C kappa**s``.

    Linear in the four interval constants; the state intervals enter
    through the gradient Lipschitz constant squared.
    """
    levels = (1 << p.bits) - 1
    return (p.D * p.T * p.m_bar) / (12.0 * levels ** 2) * (
        2.0 * p.L_bar ** 2 * (p.C_a + p.C_c)
        + 2.0 * ((p.N + 1) / p.N) * p.C_b
        + p.C_d)


def gap_envelope(p: EnvelopeParams, s: int, G0_gap: float) -> float:
    """Bound on the expected objective gap after ``s`` outer rounds.

    Valid only while the per-round contraction beats the refinement
    rate (``alpha < kappa < 1``); otherwise the contraction itself is
    the binding rate and this envelope does not apply.
    """
    if not p.envelope_applicable:
        raise ParameterError(
            f"alpha = {p.alpha:.4g} >= kappa = {p.kappa:.4g}; "
            "gap envelope inapplicable (contraction-limited regime)")
    return p.kappa ** s * (G0_gap + p.beta * p.C / (1.0 - p.alpha / p.kappa))


def error_energy(log: QuantLog, s: int, inst=None) -> float:
    """Realized error energy of round ``s``: the summed squared norms
    of the reconstructed per-step direction errors."""
    errors = reconstruct_round(log, inst, s)
    return float(sum(e @ e for e in errors))


def moment_check(log: QuantLog, s: int, inst=None, L_bar: float | None = None):
    """Mean squared direction error of a round vs its moment bound.

    Returns ``(lhs, rhs)`` where ``lhs`` is the measured mean of
    ``||e||**2`` over the round and ``rhs`` the bound assembled from
    the logged quantization-error energies.
    """
    inst = inst or log.instance
    if L_bar is None:
        L_bar = inst.smoothness().L_bar
    lhs = rhs_c = rhs_a = rhs_d = rhs_bl = 0.0
    a = log.a[s]
    for t in range(log.T):
        ell = int(log.ell[s, t])
        idx = inst.nbhd_index(ell)
        rhs_c += float(log.c[s][t] @ log.c[s][t])
        a_nb = a[idx]
        rhs_a += float(a_nb @ a_nb)
        rhs_d += float(log.d[s][t] @ log.d[s][t])
        bl = log.b[s][ell]
        rhs_bl += float(bl @ bl)
    for e in reconstruct_round(log, inst, s):
        lhs += float(e @ e)
    T = log.T
    b_all = sum(float(bi @ bi) for bi in log.b[s])
    rhs = (2.0 * L_bar ** 2 * (rhs_c + rhs_a) / T
           + rhs_d / T + 2.0 * rhs_bl / T
           + 2.0 / inst.N ** 2 * b_all)
    return lhs / T, rhs


def contraction_recursion(alpha: float, beta: float, G0: float,
                          gammas: np.ndarray) -> np.ndarray:
    """Iterate the gap recursion ``g_{s+1} = alpha g_s + beta Gamma_s``.

    Produces the synthetic worst-case gap series the rate taxonomy is
    stated for: with ``Gamma_s = c r**s`` the series decays at
    ``max(alpha, r)``.
    """
    out = np.empty(len(gammas) + 1)
    out[0] = G0
    for s, g in enumerate(gammas):
        out[s + 1] = alpha * out[s] + beta * g
    return out


def fit_linear_rate(series) -> tuple[float, float]:
    """Least-squares decay rate of a positive series on a log scale.

    The fit window keeps iterations whose value exceeds ten times the
    final value, which trims the noise floor.  Returns ``(rho, r2)``
    with ``rho`` the per-iteration factor.

    Raises
    ------
    FitRefusedError
        If fewer than five points survive the window, or the window
        contains nonpositive values.
    """
    v = np.asarray(series, dtype=float)
    if v.ndim != 1 or v.size == 0:
        raise ParameterError("rate fit needs a one-dimensional series")
    window = np.nonzero(v > 10.0 * v[-1])[0]
    if len(window) < 5:
        raise FitRefusedError(
            f"only {len(window)} points above the floor; need 5")
    y = v[window]
    if np.any(y <= 0):
        raise FitRefusedError("series not strictly positive over the window")
    logy = np.log(y)
    slope, intercept = np.polyfit(window, logy, 1)
    fitted = slope * window + intercept
    ss_res = float(np.sum((logy - fitted) ** 2))
    ss_tot = float(np.sum((logy - logy.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0 else 1.0 - ss_res / ss_tot
    return float(np.exp(slope)), r2
