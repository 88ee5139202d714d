"""Synthetic data generators and the simulation experiment harness.

Three generators are provided:

* ``generate_dgp`` — the latent-factor model with shared confounders,
  used as the stress generator for all methods;
* ``generate_example31`` — an additive structural model in which the
  linear equi-confounding condition holds exactly;
* ``generate_scaled`` — a multiplicative construction (reference outcomes
  are a scaled copy of the counterfactual means, independent units) under
  which the logarithmic equi-confounding condition holds exactly.

Random streams are keyed by (role, time, seed) through ``SeedSequence``
spawn keys, so extending the reference horizon T keeps all earlier draws
bit-identical and noise replicates never disturb the factor draws.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .equi import estimate_linear_equi, estimate_log_equi
from .fusion import FusionConfig, run_fusion
from .panel import PanelDataset, aggregate, with_pseudo_target
from .solver import nse

METHOD_LINEAR = "linear-eq"
METHOD_LOG = "log-eq"
METHOD_SYNTH = "synth"

# Stream roles.  Factor-level draws are fixed across noise replicates.
_ROLE_X, _ROLE_Z, _ROLE_MU, _ROLE_MU_Y, _ROLE_MU_F = 1, 2, 3, 4, 5
_ROLE_LOAD_TARGET, _ROLE_LOAD_SHARED, _ROLE_LOAD_TILDE = 6, 7, 8
_ROLE_INTERCEPT_TARGET, _ROLE_ALPHA = 9, 10
_ROLE_REF_FACTORS, _ROLE_REF_INTERCEPT = 11, 12
_ROLE_NOISE_TARGET, _ROLE_NOISE_REF = 20, 21
_ROLE_EX31, _ROLE_EX31_NOISE_T, _ROLE_EX31_NOISE_R = 30, 31, 32
_ROLE_EX31_COVARIATES = 33
_ROLE_SCALED, _ROLE_SCALED_NOISE = 40, 41


def _rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=key))


@dataclass(frozen=True)
class DgpConfig:
    T: int
    J: int = 30
    S: int = 5
    d_r: int = 3
    d_t: int = 3
    d_u: int = 3
    d_tilde_Y: int = 0
    d_tilde_F: int = 0
    noise_var_ref: float = 2.0
    noise_var_target: float = 0.5
    loading_range: tuple = (0.0, 10.0)
    covariate_range: tuple = (0.0, 1.0)
    intercept_range_ref: tuple = (0.0, 20.0)
    intercept_range_target: tuple = (0.0, 10.0)
    alpha_range: tuple = (2.0, 5.0)
    tilde_variance_proxy: float = 0.0  # tau^2 of the domain-exclusive factors
    master_seed: int = 0
    # Horizon over which the increasing reference intercept ramp is laid
    # out; keeps rho_t prefix-stable when T grows (must satisfy T <= horizon).
    intercept_horizon: int = 100

    def __post_init__(self):
        if self.J < 1 or self.S < 1 or self.T < 1:
            raise ValueError("need J >= 1, S >= 1, T >= 1")
        for name in ("d_r", "d_t", "d_u", "d_tilde_Y", "d_tilde_F"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.noise_var_ref < 0 or self.noise_var_target < 0:
            raise ValueError("noise variances must be >= 0")
        for name in ("loading_range", "covariate_range", "intercept_range_ref",
                     "intercept_range_target", "alpha_range"):
            lo, hi = getattr(self, name)
            if hi < lo:
                raise ValueError(f"{name} must be ordered (lo, hi)")
        if self.tilde_variance_proxy < 0:
            raise ValueError("tilde_variance_proxy must be >= 0")
        if self.T > self.intercept_horizon:
            raise ValueError("T must not exceed intercept_horizon")


@dataclass(frozen=True)
class SimulatedPanel:
    dataset: PanelDataset
    counterfactual_Y0: np.ndarray  # (J+1, S)
    alpha: np.ndarray  # (S,) target-unit effects
    psi0: float
    latent_mu: np.ndarray  # (J+1, d_u)


def _unit_ids(J: int) -> tuple:
    return ("target",) + tuple(f"donor_{i:03d}" for i in range(1, J + 1))


def _uniform(rng, lo, hi, shape):
    return rng.uniform(lo, hi, size=shape)


def generate_dgp(cfg: DgpConfig, noise_seed: int | None = None) -> SimulatedPanel:
    """Draw one panel from the latent-factor model.

    Factor-level quantities (covariates, latent factors, loadings,
    intercepts, effects) depend only on ``cfg.master_seed``; the noise
    draws are keyed by ``noise_seed`` (defaults to the master seed), so
    replicates with different noise seeds share the same factor draw.
    """
    seed = cfg.master_seed
    if noise_seed is None:
        noise_seed = seed
    n = cfg.J + 1

    X = _uniform(_rng(seed, _ROLE_X), *cfg.covariate_range, (n, cfg.d_t))
    Z = _uniform(_rng(seed, _ROLE_Z), *cfg.covariate_range, (n, cfg.d_r))
    mu = _uniform(_rng(seed, _ROLE_MU), *cfg.covariate_range, (n, cfg.d_u))
    tau = math.sqrt(cfg.tilde_variance_proxy)
    mu_y = _rng(seed, _ROLE_MU_Y).normal(0.0, tau, (n, cfg.d_tilde_Y))
    mu_f = _rng(seed, _ROLE_MU_F).normal(0.0, tau, (n, cfg.d_tilde_F))

    varphi = _uniform(_rng(seed, _ROLE_LOAD_TARGET), *cfg.loading_range, (cfg.S, cfg.d_t))
    r_shared = _rng(seed, _ROLE_LOAD_SHARED)
    vartheta = _uniform(r_shared, *cfg.loading_range, (cfg.S, cfg.d_u))
    vartheta_tilde = _uniform(_rng(seed, _ROLE_LOAD_TILDE), *cfg.loading_range,
                              (cfg.S, cfg.d_tilde_Y))
    varrho = np.sort(_uniform(_rng(seed, _ROLE_INTERCEPT_TARGET),
                              *cfg.intercept_range_target, cfg.S))
    alpha = np.sort(_uniform(_rng(seed, _ROLE_ALPHA), *cfg.alpha_range, cfg.S))

    eps_t = _rng(noise_seed, _ROLE_NOISE_TARGET).normal(
        0.0, math.sqrt(cfg.noise_var_target), (n, cfg.S))

    Y0 = varrho[None, :] + X @ varphi.T + mu @ vartheta.T + mu_y @ vartheta_tilde.T + eps_t
    Y = Y0.copy()
    Y[0, :] += alpha

    lo_r, hi_r = cfg.intercept_range_ref
    F = np.empty((n, cfg.T))
    for t in range(1, cfg.T + 1):
        rf = _rng(seed, _ROLE_REF_FACTORS, t)
        phi_t = _uniform(rf, *cfg.loading_range, cfg.d_r)
        theta_t = _uniform(rf, *cfg.loading_range, cfg.d_u)
        theta_tilde_t = _uniform(rf, *cfg.loading_range, cfg.d_tilde_F)
        u = _rng(seed, _ROLE_REF_INTERCEPT, t).uniform()
        rho_t = lo_r + (hi_r - lo_r) * (t - 1 + u) / cfg.intercept_horizon
        eps_r = _rng(noise_seed, _ROLE_NOISE_REF, t).normal(
            0.0, math.sqrt(cfg.noise_var_ref), n)
        F[:, t - 1] = rho_t + Z @ phi_t + mu @ theta_t + mu_f @ theta_tilde_t + eps_r

    return SimulatedPanel(
        dataset=PanelDataset(unit_ids=_unit_ids(cfg.J), Y=Y, F=F, X=X, Z=Z),
        counterfactual_Y0=Y0,
        alpha=alpha,
        psi0=float(alpha.mean()),
        latent_mu=mu,
    )


def generate_example31(cfg: DgpConfig, effect: float,
                       indicator_shift: float = 1.0,
                       noise_seed: int | None = None) -> SimulatedPanel:
    """Additive structural model under which linear equi-confounding holds.

    Both domains carry the same target-indicator shift, so the indicator
    contrasts cancel exactly.  The treatment effect is the constant
    ``effect`` in every treated period.
    """
    seed = cfg.master_seed
    if noise_seed is None:
        noise_seed = seed
    n = cfg.J + 1

    r = _rng(seed, _ROLE_EX31)
    # The unit-level confounders are i.i.d. across units and redrawn with
    # the noise, so the indicator contrasts cancel only in expectation.
    rc = _rng(noise_seed, _ROLE_EX31_COVARIATES)
    X = _uniform(rc, *cfg.covariate_range, (n, cfg.d_t))
    Z = _uniform(rc, *cfg.covariate_range, (n, cfg.d_r))
    beta_x = _uniform(r, *cfg.loading_range, cfg.d_t)
    beta_z = _uniform(r, *cfg.loading_range, cfg.d_r)
    varrho = np.sort(_uniform(r, *cfg.intercept_range_target, cfg.S))

    shift = np.zeros(n)
    shift[0] = indicator_shift

    eps_t = _rng(noise_seed, _ROLE_EX31_NOISE_T).normal(
        0.0, math.sqrt(cfg.noise_var_target), (n, cfg.S))
    Y0 = varrho[None, :] + (X @ beta_x + shift)[:, None] + eps_t
    Y = Y0.copy()
    Y[0, :] += effect

    F = np.empty((n, cfg.T))
    g_i = Z @ beta_z + shift
    lo_r, hi_r = cfg.intercept_range_ref
    for t in range(1, cfg.T + 1):
        rho_t = _rng(seed, _ROLE_EX31, t).uniform(lo_r, hi_r)
        eps_r = _rng(noise_seed, _ROLE_EX31_NOISE_R, t).normal(
            0.0, math.sqrt(cfg.noise_var_ref), n)
        F[:, t - 1] = rho_t + g_i + eps_r

    alpha = np.full(cfg.S, float(effect))
    return SimulatedPanel(
        dataset=PanelDataset(unit_ids=_unit_ids(cfg.J), Y=Y, F=F, X=X, Z=Z),
        counterfactual_Y0=Y0,
        alpha=alpha,
        psi0=float(effect),
        latent_mu=np.zeros((n, 0)),
    )


SCALED_BASE_RANGE = (2.0, 4.0)
SCALED_NOISE_HALF_WIDTH = 0.5


def generate_scaled(J: int, S: int, T: int, effect: float, scale: float,
                    seed: int) -> SimulatedPanel:
    """Multiplicative construction satisfying log equi-confounding.

    Each unit has an i.i.d. positive base level; target outcomes are the
    base level plus bounded uniform noise, reference outcomes the base
    level scaled by ``scale`` with independent bounded noise.  Units are
    mutually independent, so the donor-covariance constant is exactly
    zero.  All randomness (base levels and noise) is keyed by ``seed``.
    """
    if scale <= 0:
        raise ValueError("scale must be positive")
    n = J + 1
    hw = SCALED_NOISE_HALF_WIDTH
    base = _rng(seed, _ROLE_SCALED).uniform(*SCALED_BASE_RANGE, n)
    rn = _rng(seed, _ROLE_SCALED_NOISE)
    Y0 = base[:, None] + rn.uniform(-hw, hw, (n, S))
    Y = Y0.copy()
    Y[0, :] += effect
    F = scale * (base[:, None] + rn.uniform(-hw, hw, (n, T)))
    return SimulatedPanel(
        dataset=PanelDataset(unit_ids=_unit_ids(J), Y=Y, F=F,
                             X=np.zeros((n, 0)), Z=np.zeros((n, 0))),
        counterfactual_Y0=Y0,
        alpha=np.full(S, float(effect)),
        psi0=float(effect),
        latent_mu=np.zeros((n, 0)),
    )


def _estimate(method: str, panel: SimulatedPanel,
              fusion_cfg: FusionConfig | None) -> float:
    if method == METHOD_LINEAR:
        return estimate_linear_equi(aggregate(panel.dataset)).psi_hat
    if method == METHOD_LOG:
        return estimate_log_equi(aggregate(panel.dataset)).psi_hat
    if method == METHOD_SYNTH:
        return run_fusion(panel.dataset, fusion_cfg).psi_hat_sc
    raise ValueError(f"unknown method {method!r}")


def run_bias_experiment(cfg: DgpConfig, t_grid, M: int, methods,
                        fusion_cfg: FusionConfig | None = None,
                        generator: str = "factor",
                        effect: float = 3.0) -> pd.DataFrame:
    """Tidy per-replicate estimates across a grid of reference horizons.

    Replicate m uses noise seed ``master_seed XOR m``; factor draws are
    shared within a T value, and the nested-stream construction keeps the
    first T1 reference periods identical when T grows.  Estimator
    failures are recorded as NaN rows with an error note.
    """
    if M < 1:
        raise ValueError("M must be >= 1")
    methods = list(methods)
    rows = []
    for T in t_grid:
        t_cfg = _with_T(cfg, T)
        for m in range(1, M + 1):
            noise_seed = cfg.master_seed ^ m
            if generator == "factor":
                panel = generate_dgp(t_cfg, noise_seed=noise_seed)
            elif generator == "example31":
                panel = generate_example31(t_cfg, effect, noise_seed=noise_seed)
            else:
                raise ValueError(f"unknown generator {generator!r}")
            for method in methods:
                try:
                    est = _estimate(method, panel, fusion_cfg)
                    err = ""
                except Exception as exc:  # per-replicate failures are data
                    est = math.nan
                    err = str(exc)
                rows.append({
                    "replicate": m, "T": T, "method": method,
                    "estimate": est, "psi0": panel.psi0,
                    "bias": est - panel.psi0, "error": err,
                })
    return pd.DataFrame(rows)


def _with_T(cfg: DgpConfig, T: int) -> DgpConfig:
    from dataclasses import replace
    return replace(cfg, T=T)


def summarize_bias(table: pd.DataFrame) -> pd.DataFrame:
    """Per (T, method) mean bias, interquartile range, and failure count."""
    def _agg(g):
        ok = g[np.isfinite(g["bias"])]
        q1, q3 = (np.percentile(ok["bias"], [25, 75]) if len(ok) else
                  (math.nan, math.nan))
        return pd.Series({
            "mean_bias": ok["bias"].mean() if len(ok) else math.nan,
            "mean_abs_bias": ok["bias"].abs().mean() if len(ok) else math.nan,
            "iqr_low": q1, "iqr_high": q3,
            "n_ok": len(ok), "n_failed": len(g) - len(ok),
        })
    return (table.groupby(["T", "method"], sort=True)
            .apply(_agg, include_groups=False).reset_index())


@dataclass(frozen=True)
class PlaceboResult:
    rows: tuple  # dicts: unit, psi_hat_sc, failed, error
    gap_target: dict  # unit -> length-S array
    gap_reference: dict  # unit -> length-T array
    target_rank: int  # rank of the true target's |psi_hat| (1 = largest)
    n_runs: int


def run_placebo(dataset: PanelDataset, cfg: FusionConfig | None = None) -> PlaceboResult:
    """Rerun the fusion pipeline with every unit as pseudo-target.

    The true target's run is included; its rank is the position of its
    absolute estimate among all successful runs.
    """
    if dataset.n_donors < 2:
        raise ValueError("placebo test needs at least two donors")
    cfg = cfg or FusionConfig()
    rows, gaps_t, gaps_r = [], {}, {}
    for uid in dataset.unit_ids:
        ds = with_pseudo_target(dataset, uid)
        try:
            res = run_fusion(ds, cfg)
        except Exception as exc:
            rows.append({"unit": uid, "psi_hat_sc": math.nan,
                         "failed": True, "error": str(exc)})
            continue
        rows.append({"unit": uid, "psi_hat_sc": res.psi_hat_sc,
                     "failed": False, "error": ""})
        gaps_t[uid] = res.gap_series_target
        gaps_r[uid] = res.gap_series_reference

    target_id = dataset.unit_ids[0]
    ok = [r for r in rows if not r["failed"]]
    order = sorted(ok, key=lambda r: -abs(r["psi_hat_sc"]))
    rank = next(i + 1 for i, r in enumerate(order) if r["unit"] == target_id)
    return PlaceboResult(rows=tuple(rows), gap_target=gaps_t,
                         gap_reference=gaps_r, target_rank=rank,
                         n_runs=len(ok))


def check_equi_assumptions(cfg: DgpConfig, generator: str = "factor",
                           n_replicates: int = 200, effect: float = 3.0,
                           scale: float = 1.0) -> dict:
    """Monte Carlo estimate of the equi-confounding discrepancies.

    Averages the aggregated counterfactual outcomes over noise replicates
    that share the factor draw, and reports the four anchor points (the
    target and donor-average expectations in each domain) together with
    the additive and log-scale discrepancies.
    """
    sum_y0 = sum_f = None
    J = cfg.J
    for r in range(1, n_replicates + 1):
        noise_seed = cfg.master_seed ^ r
        if generator == "factor":
            p = generate_dgp(cfg, noise_seed=noise_seed)
        elif generator == "example31":
            p = generate_example31(cfg, effect, noise_seed=noise_seed)
        elif generator == "scaled":
            p = generate_scaled(cfg.J, cfg.S, cfg.T, effect, scale,
                                seed=cfg.master_seed ^ r)
        else:
            raise ValueError(f"unknown generator {generator!r}")
        y0_bar = p.counterfactual_Y0.mean(axis=1)
        f_bar = p.dataset.F.mean(axis=1)
        sum_y0 = y0_bar if sum_y0 is None else sum_y0 + y0_bar
        sum_f = f_bar if sum_f is None else sum_f + f_bar
    e_y0 = sum_y0 / n_replicates
    e_f = sum_f / n_replicates

    points = {
        "E_Y1_0": float(e_y0[0]),
        "E_Y0_donor_mean": float(e_y0[1:].mean()),
        "E_F1": float(e_f[0]),
        "E_F_donor_mean": float(e_f[1:].mean()),
    }
    linear = (points["E_Y1_0"] - points["E_Y0_donor_mean"]) - (
        points["E_F1"] - points["E_F_donor_mean"])
    log_disc = math.nan
    if min(e_y0.min(), e_f.min()) > 0:
        log_disc = (
            math.log(points["E_Y1_0"]) - math.log(float(e_y0[1:].sum()))
            - math.log(points["E_F1"]) + math.log(float(e_f[1:].sum()))
        )
    return {
        "generator": generator,
        "n_replicates": n_replicates,
        "points": points,
        "linear_discrepancy": float(linear),
        "log_discrepancy": float(log_disc),
        "J": J,
    }


def latent_match_nse(panel: SimulatedPanel, w) -> float:
    """NSE between the target's latent factors and the weighted donors'."""
    if panel.latent_mu.shape[1] == 0:
        raise ValueError("panel has no latent factors")
    return nse(panel.latent_mu[0], panel.latent_mu[1:], w)
