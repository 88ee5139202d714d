"""Equi-confounding estimators and closed-form bias-bound calculators.

The linear estimator differences the target-vs-donor gap across the two
domains; the logarithmic estimator anchors the target's counterfactual via
the ratio of reference-domain means.  Both operate on per-unit time
aggregates only and never read covariates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .panel import UnitAggregates

LINEAR = "linear"
LOGARITHMIC = "logarithmic"


class PositivityError(ValueError):
    """Raised when the log-scale estimator meets nonpositive reference means."""


@dataclass(frozen=True)
class EquiEstimate:
    method: str
    psi_hat: float
    components: dict

    def reevaluate(self) -> float:
        """Recompute psi_hat from the stored components."""
        c = self.components
        if self.method == LINEAR:
            return (c["Y_bar_target"] - c["F_bar_target"]) - (
                c["donor_mean_Y"] - c["donor_mean_F"]
            )
        return c["Y_bar_target"] - (c["F_bar_target"] / c["donor_sum_F"]) * c["donor_sum_Y"]


def estimate_linear_equi(agg: UnitAggregates) -> EquiEstimate:
    """Difference-of-gaps estimator on the additive scale."""
    if agg.n_donors < 1:
        raise ValueError("need at least one donor unit")
    y, f = agg.Y_bar, agg.F_bar
    donor_mean_y = float(y[1:].mean())
    donor_mean_f = float(f[1:].mean())
    psi = (float(y[0]) - float(f[0])) - (donor_mean_y - donor_mean_f)
    return EquiEstimate(
        method=LINEAR,
        psi_hat=psi,
        components={
            "Y_bar_target": float(y[0]),
            "F_bar_target": float(f[0]),
            "donor_mean_Y": donor_mean_y,
            "donor_mean_F": donor_mean_f,
        },
    )


def estimate_log_equi(agg: UnitAggregates) -> EquiEstimate:
    """Ratio-anchored estimator on the multiplicative scale.

    Uses donor sums; algebraically identical to the donor-mean form since
    the 1/J factors cancel in the ratio.  Requires every aggregated
    reference-domain mean to be strictly positive.
    """
    if agg.n_donors < 1:
        raise ValueError("need at least one donor unit")
    y, f = agg.Y_bar, agg.F_bar
    nonpos = np.flatnonzero(f <= 0)
    if nonpos.size:
        raise PositivityError(
            f"reference-domain mean is nonpositive for unit index {int(nonpos[0])}"
        )
    donor_sum_f = float(f[1:].sum())
    donor_sum_y = float(y[1:].sum())
    psi = float(y[0]) - (float(f[0]) / donor_sum_f) * donor_sum_y
    return EquiEstimate(
        method=LOGARITHMIC,
        psi_hat=psi,
        components={
            "Y_bar_target": float(y[0]),
            "F_bar_target": float(f[0]),
            "donor_sum_Y": donor_sum_y,
            "donor_sum_F": donor_sum_f,
        },
    )


@dataclass(frozen=True)
class LogEquiBoundInputs:
    """Population constants for the log-scale bias bounds.

    ``tau_J`` bounds the average pairwise donor covariance, ``tau1_J`` the
    average target-donor cross covariance, and ``C_J`` the covariance of
    the donor-ratio with the donor outcome mean.  These are assumption
    constants supplied by the analyst, not estimated from data.
    """

    L_y: float
    l_y: float
    L_f: float
    l_f: float
    tau_J: float
    C_J: float
    J: int
    tau1_J: float | None = None

    def __post_init__(self):
        if not (0 < self.l_y <= self.L_y):
            raise ValueError("need 0 < l_y <= L_y")
        if not (0 < self.l_f <= self.L_f):
            raise ValueError("need 0 < l_f <= L_f")
        if self.tau_J < 0 or self.C_J < 0:
            raise ValueError("tau_J and C_J must be nonnegative")
        if self.tau1_J is not None and self.tau1_J < 0:
            raise ValueError("tau1_J must be nonnegative")
        if self.J < 1:
            raise ValueError("J must be a positive integer")

    @property
    def delta_f(self) -> float:
        return self.L_f - self.l_f


def bias_bound_log_equi(inputs: LogEquiBoundInputs) -> float:
    """Absolute-bias bound for the logarithmic estimator."""
    d = inputs.delta_f
    lf = inputs.l_f
    var_b = d * d / (4.0 * inputs.J) + inputs.tau_J
    return (
        inputs.L_y
        * (
            d * d / (4.0 * lf * lf) / math.sqrt(inputs.J)
            + d / (2.0 * lf * lf) * math.sqrt(inputs.tau_J)
            + inputs.L_f / lf**3 * var_b
        )
        + inputs.C_J
    )


def bias_bound_log_equi_refined(inputs: LogEquiBoundInputs) -> float:
    """Refined bound using the target-donor cross-covariance constant."""
    if inputs.tau1_J is None:
        raise ValueError("refined bound requires tau1_J")
    d = inputs.delta_f
    lf = inputs.l_f
    var_b = d * d / (4.0 * inputs.J) + inputs.tau_J
    return (
        inputs.L_y
        * (inputs.tau1_J / (lf * lf) + (d + inputs.L_f) / lf**3 * var_b)
        + inputs.C_J
    )


@dataclass(frozen=True)
class SynthBoundInputs:
    """Factor-model constants for the synthetic-control bias bound.

    theta_bar / vartheta_bar bound the shared-factor loadings in the
    reference and target domains; theta_tilde_bar bounds the loadings on
    reference-only latent factors with variance proxy tau; sigma_bar is
    the reference-noise variance proxy; xi_lower is the per-period lower
    bound on the loading Gram matrix's minimum eigenvalue.
    """

    theta_bar: float
    theta_tilde_bar: float
    vartheta_bar: float
    vartheta_tilde_bar: float
    sigma_bar: float
    tau: float
    xi_lower: float
    T: int
    J: int

    def __post_init__(self):
        for name in ("theta_bar", "vartheta_bar", "vartheta_tilde_bar",
                     "sigma_bar", "xi_lower"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be strictly positive")
        if self.theta_tilde_bar < 0 or self.tau < 0:
            raise ValueError("theta_tilde_bar and tau must be nonnegative")
        if self.T < 1 or self.J < 1:
            raise ValueError("T and J must be >= 1")


def bias_bound_synth(inputs: SynthBoundInputs) -> float:
    """Two-term bias bound for the transferred synthetic control.

    The second term vanishes in the absence of reference-domain-only
    latent factors (theta_tilde_bar = 0 or tau = 0).
    """
    log2j = math.log(2.0 * inputs.J)
    ratio = inputs.vartheta_bar * inputs.theta_bar / inputs.xi_lower
    noise_term = math.sqrt(2.0) * ratio * inputs.sigma_bar * math.sqrt(log2j / inputs.T)
    latent_term = 2.0 * ratio * inputs.theta_tilde_bar * inputs.tau * math.sqrt(log2j)
    return noise_term + latent_term
