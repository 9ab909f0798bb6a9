"""Safeguarded alternating minimization with smoothing continuation.

Each iteration proposes a residual two-block candidate step (gradient step
on the data term, then a gradient step on the smoothed regularizer of each
block, z first). The candidate is accepted when it passes the energy
descent conditions; otherwise a backtracked block-coordinate-descent step
guarantees sufficient decrease. The smoothing half-width shrinks
geometrically once the smoothed gradient is small enough at the current
level, driving the iterates toward stationarity of the nonsmooth model.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NumericalError, SolverError
from .objective import (DualState, ProblemSpec, block_lipschitz,
                        composite_lipschitz, grad_f_x, grad_f_z, grad_norm,
                        grad_phi_eps, lipschitz_regularizers, phi_eps,
                        _reg_grad)
from .tomo import Image, Sinogram

BRANCH_EDC = "EDC"
BRANCH_BCD = "BCD"

CSV_COLUMNS = ("k", "eps", "phi_before", "phi_after", "grad_norm", "branch",
               "backtracks", "alpha_used", "beta_used", "eps_reduced")


@dataclass
class SolverParams:
    """All scalar knobs of the solver.

    Candidate step sizes left as None are derived from Lipschitz
    estimates (1/L of the block Hessian for the data steps, the
    proximal-collapsed value for the regularizer steps) and refreshed
    after every smoothing reduction.
    """

    alpha: float | None = None
    beta: float | None = None
    alpha_hat: float | None = None
    beta_hat: float | None = None
    bar_alpha0: float = 1.0
    bar_beta0: float = 1.0
    rho: float = 0.5
    delta: float = 1e-4
    eta: float = 1e-4
    eps0: float = 0.1
    gamma: float = 0.5
    sigma: float = 100.0
    eps_tol: float = 1e-4
    max_iters: int = 1000
    max_backtracks: int = 60
    phase_mode: bool = False
    phases: int = 15

    def validate(self) -> None:
        for name in ("alpha", "beta", "alpha_hat", "beta_hat"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise ConfigError(f"{name} must be positive when given")
        if not (self.bar_alpha0 > 0 and self.bar_beta0 > 0):
            raise ConfigError("safeguard initial steps must be positive")
        if not 0 < self.rho < 1:
            raise ConfigError("rho must lie in (0, 1)")
        if not 0 < self.delta < 1:
            raise ConfigError("delta must lie in (0, 1)")
        if not self.eta > 0:
            raise ConfigError("eta must be positive")
        if not self.eps0 > 0:
            raise ConfigError("eps0 must be positive")
        if not 0 < self.gamma < 1:
            raise ConfigError("gamma must lie in (0, 1)")
        if not self.sigma > 0:
            raise ConfigError("sigma must be positive")
        if self.eps_tol < 0:
            raise ConfigError("eps_tol must be nonnegative")
        if self.max_iters < 0 or self.max_backtracks < 1 or self.phases < 0:
            raise ConfigError("iteration counts out of range")


@dataclass
class IterateRecord:
    k: int
    eps: float
    phi_before: float
    phi_after: float
    grad_norm: float
    branch: str
    backtracks: int
    alpha_used: float
    beta_used: float
    eps_reduced: bool


@dataclass
class IterateLog:
    records: list[IterateRecord] = field(default_factory=list)

    def append(self, rec: IterateRecord) -> None:
        self.records.append(rec)

    def __len__(self) -> int:
        return len(self.records)

    def max_backtracks(self) -> int:
        return max((r.backtracks for r in self.records), default=0)

    def n_eps_reductions(self) -> int:
        return sum(r.eps_reduced for r in self.records)

    def to_rows(self) -> list[list]:
        return [[r.k, repr(r.eps), repr(r.phi_before), repr(r.phi_after),
                 repr(r.grad_norm), r.branch, r.backtracks,
                 repr(r.alpha_used), repr(r.beta_used), int(r.eps_reduced)]
                for r in self.records]

    def write_csv(self, path) -> None:
        with open(str(path), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(CSV_COLUMNS)
            writer.writerows(self.to_rows())

    def to_json_obj(self) -> dict:
        return {
            "columns": list(CSV_COLUMNS),
            "iterations": [
                {
                    "k": r.k, "eps": r.eps, "phi_before": r.phi_before,
                    "phi_after": r.phi_after, "grad_norm": r.grad_norm,
                    "branch": r.branch, "backtracks": r.backtracks,
                    "alpha_used": r.alpha_used, "beta_used": r.beta_used,
                    "eps_reduced": r.eps_reduced,
                }
                for r in self.records
            ],
        }

    def write_json(self, path) -> None:
        with open(str(path), "w") as fh:
            json.dump(self.to_json_obj(), fh, indent=2)
            fh.write("\n")


@dataclass
class StepSizes:
    alpha: float
    beta: float
    alpha_hat: float
    beta_hat: float


def resolve_steps(spec: ProblemSpec, params: SolverParams, eps: float) -> StepSizes:
    """Fill unspecified candidate steps from Lipschitz estimates at eps."""
    need_data = params.alpha is None or params.beta is None
    need_reg = params.alpha_hat is None or params.beta_hat is None
    l_z = l_x = 0.0
    if need_data or need_reg:
        l_z, l_x = block_lipschitz(spec)
    lr = lq = 0.0
    if need_reg:
        lr, lq = lipschitz_regularizers(spec, eps)
    alpha = params.alpha if params.alpha is not None else 1.0 / max(l_z, 1e-12)
    beta = params.beta if params.beta is not None else 1.0 / max(l_x, 1e-12)

    def collapsed(step, l_reg):
        # proximal-collapsed step a*p/(a+p) with p = 0.5/L_reg; always < step
        p = 0.5 / max(l_reg, 1e-12)
        return step * p / (step + p)

    return StepSizes(
        alpha=alpha,
        beta=beta,
        alpha_hat=params.alpha_hat if params.alpha_hat is not None
        else collapsed(alpha, lq),
        beta_hat=params.beta_hat if params.beta_hat is not None
        else collapsed(beta, lr),
    )


def _as_state(spec: ProblemSpec, x_vals: np.ndarray, z_vals: np.ndarray) -> DualState:
    geo = spec.geometry
    return DualState(Image(geo.grid, x_vals),
                     Sinogram(geo, np.arange(geo.n_views_full), z_vals))


def candidate_step(state: DualState, spec: ProblemSpec, steps: StepSizes,
                   eps: float) -> DualState:
    """Residual two-block candidate: z-block first, x-block sees the new z."""
    b = state.z.values - steps.alpha * grad_f_z(state, spec)
    u_z = b - steps.alpha_hat * _reg_grad(b, spec.sino_weights, eps)
    mid = _as_state(spec, state.x.values, u_z)
    c = state.x.values - steps.beta * grad_f_x(mid, spec)
    u_x = c - steps.beta_hat * _reg_grad(c, spec.image_weights, eps)
    if not (np.all(np.isfinite(u_x)) and np.all(np.isfinite(u_z))):
        raise NumericalError("non-finite candidate step")
    return _as_state(spec, u_x, u_z)


def edc_check(state: DualState, candidate: DualState, spec: ProblemSpec,
              params: SolverParams, eps: float,
              phi_old: float | None = None) -> bool:
    """Energy descent conditions on the candidate pair.

    Sufficient decrease proportional to the squared step, plus a bound on
    the gradient norm at the old iterate by the step lengths.
    """
    if phi_old is None:
        phi_old = phi_eps(state, spec, eps)
    dx = candidate.x.values - state.x.values
    dz = candidate.z.values - state.z.values
    sq = float(np.sum(dx**2) + np.sum(dz**2))
    phi_new = phi_eps(candidate, spec, eps)
    if phi_new - phi_old > -params.eta * sq:
        return False
    gnorm = grad_norm(*grad_phi_eps(state, spec, eps))
    step_len = float(np.sqrt(np.sum(dx**2)) + np.sqrt(np.sum(dz**2)))
    return gnorm <= step_len / params.eta


def bcd_safeguard(state: DualState, spec: ProblemSpec, params: SolverParams,
                  eps: float, phi_old: float | None = None,
                  log: "IterateLog | None" = None):
    """Backtracked block-coordinate-descent fallback.

    Returns (new_state, backtracks, bar_alpha, bar_beta) with the accepted
    step sizes; raises SolverError when max_backtracks is exceeded.
    """
    if phi_old is None:
        phi_old = phi_eps(state, spec, eps)
    bar_a, bar_b = params.bar_alpha0, params.bar_beta0
    gz = grad_f_z(state, spec) + _reg_grad(state.z.values, spec.sino_weights, eps)
    for bt in range(params.max_backtracks + 1):
        v_z = state.z.values - bar_a * gz
        mid = _as_state(spec, state.x.values, v_z)
        gx = grad_f_x(mid, spec) + _reg_grad(state.x.values, spec.image_weights, eps)
        v_x = state.x.values - bar_b * gx
        cand = _as_state(spec, v_x, v_z)
        dx = v_x - state.x.values
        dz = v_z - state.z.values
        sq = float(np.sum(dx**2) + np.sum(dz**2))
        if phi_eps(cand, spec, eps) - phi_old <= -params.delta * sq:
            return cand, bt, bar_a, bar_b
        bar_a *= params.rho
        bar_b *= params.rho
    raise SolverError(
        f"safeguard failed to descend within {params.max_backtracks} backtracks",
        log=log)


def smoothing_update(eps: float, gnorm_new: float, params: SolverParams) -> float:
    """Shrink eps by gamma when the new gradient norm is strictly below
    sigma*gamma*eps; otherwise keep it."""
    if gnorm_new < params.sigma * params.gamma * eps:
        return params.gamma * eps
    return eps


def backtrack_bound(params: SolverParams, l_hat: float) -> int:
    """Upper bound on backtracks at Lipschitz level l_hat:
    ceil(log_rho((delta + L/2)^-1 / max(bar steps))) + 1."""
    target = 1.0 / (params.delta + 0.5 * l_hat)
    ratio = target / max(params.bar_alpha0, params.bar_beta0)
    if ratio >= 1.0:
        return 1
    return int(math.ceil(math.log(ratio) / math.log(params.rho))) + 1


def _check_backtrack_budget(spec: ProblemSpec, params: SolverParams) -> None:
    """Configure-time guard: the shrink budget must reach an acceptable step
    at the smallest smoothing level the schedule can visit."""
    eps_min = params.eps_tol if params.eps_tol > 0 else params.eps0 * params.gamma**20
    l_hat = composite_lipschitz(spec, eps_min)
    smallest = params.rho**params.max_backtracks * max(params.bar_alpha0, params.bar_beta0)
    if smallest >= 1.0 / (params.delta + 0.5 * l_hat):
        raise ConfigError(
            "max_backtracks too small for the Lipschitz estimate at the "
            f"smallest scheduled eps ({eps_min:g}); increase max_backtracks")


def run(spec: ProblemSpec, init: DualState, params: SolverParams):
    """Iterate until max_iters, or until eps <= eps_tol with a gradient norm
    below the reduction threshold. Returns (final state, IterateLog)."""
    params.validate()
    _check_backtrack_budget(spec, params)
    log = IterateLog()
    state = init.copy()
    eps = params.eps0
    steps = resolve_steps(spec, params, eps)
    n_iters = params.phases if params.phase_mode else params.max_iters

    for k in range(n_iters):
        phi_old = phi_eps(state, spec, eps)
        try:
            cand = candidate_step(state, spec, steps, eps)
        except NumericalError as exc:
            raise SolverError(f"iteration {k}: {exc}", log=log) from exc
        if edc_check(state, cand, spec, params, eps, phi_old=phi_old):
            new_state = cand
            branch, backtracks = BRANCH_EDC, 0
            a_used, b_used = steps.alpha, steps.beta
        else:
            new_state, backtracks, a_used, b_used = bcd_safeguard(
                state, spec, params, eps, phi_old=phi_old, log=log)
            branch = BRANCH_BCD
        phi_new = phi_eps(new_state, spec, eps)
        gnorm = grad_norm(*grad_phi_eps(new_state, spec, eps))
        eps_next = smoothing_update(eps, gnorm, params)
        log.append(IterateRecord(
            k=k, eps=eps, phi_before=phi_old, phi_after=phi_new,
            grad_norm=gnorm, branch=branch, backtracks=backtracks,
            alpha_used=a_used, beta_used=b_used,
            eps_reduced=eps_next != eps))
        state = new_state
        if (not params.phase_mode and eps <= params.eps_tol
                and gnorm < params.sigma * params.gamma * eps):
            break
        if eps_next != eps:
            eps = eps_next
            steps = resolve_steps(spec, params, eps)
    return state, log
