"""Star-convex path diagnostics computed from a recorded SGD trace.

For a reference point x* the per-step residual is

    e_k = l_{xi_k}(x_k) - l_{xi_k}(x*) + <x* - x_k, grad l_{xi_k}(x_k)>

and the epoch residual e_B sums e_k over one epoch. Gradients are
recomputed in float64 from checkpointed iterates.

Thresholds: star-convex fractions count ``e_k < 0`` (strict); audit
premises use ``e <= 0``.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from starpath.constants import AUDIT_TOLERANCE, DEFAULT_EPS_LOSS
from starpath.errors import CoverageError
from starpath.numcore import ParamVector, axpy, distance, dot
from starpath.problems import FiniteSumProblem, estimate_lipschitz, full_gradient_stats, full_value
from starpath.schedule import EpochSchedule
from starpath.sgdrun import ReferenceMode, Trace, replay_epoch, weight_norm_series

logger = logging.getLogger("starpath")

Series = List[Tuple[int, float]]

QUANTIFIER_NOTE = (
    "Iterationwise star-convexity quantifies over every minimizer of the sampled "
    "component; with a single reference point only that point is tested."
)


# ── Reference point ──────────────────────────────────────────────────


@dataclass(frozen=True, eq=False)
class ReferencePoint:
    x_star: ParamVector
    origin: str
    achieved_loss: float
    component_losses: np.ndarray = field(repr=False)


def reference_from_vector(
    p: FiniteSumProblem, x_star: ParamVector, origin: str, eps_loss: float = DEFAULT_EPS_LOSS,
) -> ReferencePoint:
    p.check_x(x_star)
    losses = np.array([p.component_value(i, x_star) for i in range(p.n)], dtype=np.float64)
    achieved = float(losses.mean())
    if achieved > eps_loss:
        logger.warning(
            "Reference point %s has f(x*) = %.4g > eps_loss = %.1g; it only approximates a common minimizer",
            origin, achieved, eps_loss,
        )
    return ReferencePoint(x_star=x_star, origin=origin, achieved_loss=achieved, component_losses=losses)


def make_reference(
    trace: Trace,
    p: FiniteSumProblem,
    mode: Optional[ReferenceMode] = None,
    eps_loss: float = DEFAULT_EPS_LOSS,
) -> ReferencePoint:
    """Resolve the reference point named by *mode* (default: the trace's own)."""
    mode = mode or trace.config.reference_mode
    if mode.kind == "final_iterate":
        x_star = trace.final_iterate
    elif mode.kind == "planted":
        if p.planted_minimizer is None:
            raise ValueError(f"{p.family} problem has no planted minimizer")
        x_star = p.planted_minimizer
    else:
        x_star = trace.iterate(trace.n * mode.epoch)
    return reference_from_vector(p, x_star, mode.label(), eps_loss)


# ── Residuals ────────────────────────────────────────────────────────


def star_residual(
    loss_k: float, grad_k: ParamVector, x_k: ParamVector, x_star: ParamVector, loss_star: float,
) -> float:
    """Signed residual; ``<= 0`` means the step is star-convex toward x*."""
    return loss_k - loss_star + dot(axpy(-1.0, x_k, x_star), grad_k)


@dataclass(frozen=True)
class StepResidual:
    k: int
    epoch: int
    t: int
    xi: int
    e_k: float
    component_loss: float


def _require_epoch(trace: Trace, B: int, include_end: bool = False) -> None:
    if B >= trace.epochs_completed:
        raise CoverageError(list(trace.epoch_span(B)), what="iterates (epoch not run)")
    missing = trace.missing_in_epoch(B, include_end=include_end)
    if missing:
        raise CoverageError(missing)


def step_residual(trace: Trace, p: FiniteSumProblem, k: int, ref: ReferencePoint) -> StepResidual:
    x_k = trace.iterate(k)
    xi = int(trace.xis[k])
    loss, grad = p.component_value_and_grad(xi, x_k)
    e_k = star_residual(loss, grad, x_k, ref.x_star, float(ref.component_losses[xi]))
    B, t = divmod(k, trace.n)
    return StepResidual(k=k, epoch=B, t=t, xi=xi, e_k=e_k, component_loss=loss)


def iteration_residuals(trace: Trace, p: FiniteSumProblem, B: int, ref: ReferencePoint) -> List[StepResidual]:
    _require_epoch(trace, B)
    return [step_residual(trace, p, k, ref) for k in trace.epoch_span(B)]


def epoch_residual(trace: Trace, p: FiniteSumProblem, B: int, ref: ReferencePoint) -> float:
    """e_B recomputed from every iterate of epoch ``B``."""
    return math.fsum(s.e_k for s in iteration_residuals(trace, p, B, ref))


def epoch_residual_from_boundaries(trace: Trace, p: FiniteSumProblem, B: int, ref: ReferencePoint) -> float:
    """e_B for an epoch of which only the two boundary iterates were kept.

    The epoch is replayed from x_nB along the recorded sample order and
    checked against x_n(B+1), so the value matches :func:`epoch_residual`
    on the same iterates.
    """
    return math.fsum(
        star_residual(s.loss, s.grad, s.x, ref.x_star, float(ref.component_losses[s.xi]))
        for s in replay_epoch(trace, p, B)
    )


def sc_fraction(trace: Trace, p: FiniteSumProblem, epoch: int, ref: ReferencePoint) -> float:
    """Share of the epoch's steps with ``e_k < 0``."""
    steps = iteration_residuals(trace, p, epoch, ref)
    return sum(1 for s in steps if s.e_k < 0.0) / trace.n


def distance_series(trace: Trace, ref: ReferencePoint) -> Series:
    """``(B, ||x_nB - x*||)`` for ``B = 0 .. epochs``."""
    boundaries = [trace.n * B for B in range(trace.epochs_completed + 1)]
    missing = [k for k in boundaries if k not in trace.checkpoints]
    if missing:
        raise CoverageError(missing, what="epoch-boundary checkpoints")
    return [(k // trace.n, distance(trace.checkpoints[k], ref.x_star)) for k in boundaries]


def variance_series(trace: Trace, p: FiniteSumProblem) -> Series:
    """Stochastic-gradient variance at each epoch boundary, over all n components."""
    boundaries = [trace.n * B for B in range(trace.epochs_completed + 1)]
    missing = [k for k in boundaries if k not in trace.checkpoints]
    if missing:
        raise CoverageError(missing, what="epoch-boundary checkpoints")
    return [(k // trace.n, full_gradient_stats(p, trace.checkpoints[k]).variance) for k in boundaries]


# ── Minimizing subsequences ──────────────────────────────────────────


@dataclass
class SubsequenceSeries:
    """Losses of component ``v`` along the iterations where it is sampled.

    ``pre_update`` is evaluated at ``x_{nB + pos - 1}`` (the iterate at which
    l_v is sampled, taken from the recorded loss table); ``post_update`` at
    ``x_{nB + pos}``, available only where that iterate was checkpointed.
    """

    v: int
    pre_update: Series = field(default_factory=list)
    post_update: Series = field(default_factory=list)
    sampled_at: List[int] = field(default_factory=list)
    floor: float = 0.0


def subsequence_losses(
    trace: Trace,
    p: FiniteSumProblem,
    v: int,
    ref: Optional[ReferencePoint] = None,
    schedule: Optional[EpochSchedule] = None,
) -> SubsequenceSeries:
    schedule = schedule or trace.schedule
    p.check_index(v)
    out = SubsequenceSeries(v=v, floor=float(ref.component_losses[v]) if ref is not None else 0.0)
    for B in range(trace.epochs_completed):
        pos = schedule.inverse_position(B, v)
        k_pre = trace.n * B + pos - 1
        out.sampled_at.append(k_pre)
        out.pre_update.append((B, float(trace.losses[k_pre])))
        x_post = trace.checkpoints.get(k_pre + 1)
        if x_post is not None:
            out.post_update.append((B, p.component_value(v, x_post)))
    return out


# ── Audits ───────────────────────────────────────────────────────────


@dataclass
class AuditCounts:
    checked: int = 0
    vacuous: int = 0
    violated: int = 0
    violated_raw: int = 0
    slack_used: float = 0.0

    def merge(self, other: "AuditCounts") -> None:
        self.checked += other.checked
        self.vacuous += other.vacuous
        self.violated += other.violated
        self.violated_raw += other.violated_raw
        self.slack_used = max(self.slack_used, other.slack_used)


@dataclass
class AuditReport:
    """Per-epoch counts plus totals. ``violated`` allows the reference-point
    slack 2*eta*l(x*); ``violated_raw`` does not."""

    name: str
    eta: float
    lipschitz: float
    per_epoch: Dict[int, AuditCounts] = field(default_factory=dict)
    outcomes: List[Dict[str, object]] = field(default_factory=list)

    @property
    def total(self) -> AuditCounts:
        agg = AuditCounts()
        for counts in self.per_epoch.values():
            agg.merge(counts)
        return agg


def resolve_lipschitz(
    trace: Trace, p: FiniteSumProblem, trials: int = 3, seed: int = 0,
) -> Tuple[float, str]:
    """``(L_hat, source)``: the problem's bound, else a sampled estimate over the trace's bounding ball."""
    if p.lipschitz_bound is not None:
        return p.lipschitz_bound, "problem"
    points = np.stack([trace.checkpoints[k] for k in sorted(trace.checkpoints)])
    center = points.mean(axis=0)
    radius = float(np.max(np.linalg.norm(points - center, axis=1)))
    radius = max(radius, 1e-8)
    estimate = estimate_lipschitz(p, center, radius, trials=trials, seed=seed)
    return estimate, "estimated"


def _step_size_ok(eta: float, L_hat: float) -> bool:
    return eta * L_hat < 1.0


def epoch_monotonicity_audit(
    trace: Trace,
    p: FiniteSumProblem,
    ref: ReferencePoint,
    eta: float,
    L_hat: float,
    epoch_residuals: Optional[Dict[int, float]] = None,
    tol: float = AUDIT_TOLERANCE,
) -> AuditReport:
    """Where e_B <= 0 and eta < 1/L_hat, require ||x_n(B+1) - x*|| <= ||x_nB - x*||.

    Epochs whose premise fails are counted vacuous and are never violations.
    """
    report = AuditReport(name="epoch_distance", eta=eta, lipschitz=L_hat)
    slack = 2.0 * eta * math.fsum(ref.component_losses)
    step_ok = _step_size_ok(eta, L_hat)
    for B in range(trace.epochs_completed):
        counts = report.per_epoch.setdefault(B, AuditCounts())
        if epoch_residuals is not None and B in epoch_residuals:
            e_B = epoch_residuals[B]
        elif trace.epoch_recorded(B):
            e_B = epoch_residual(trace, p, B, ref)
        else:
            e_B = epoch_residual_from_boundaries(trace, p, B, ref)
        if not (step_ok and e_B <= 0.0):
            counts.vacuous += 1
            continue
        d0 = distance(trace.iterate(trace.n * B), ref.x_star)
        d1 = distance(trace.iterate(trace.n * (B + 1)), ref.x_star)
        counts.checked += 1
        counts.slack_used = slack
        raw = d1 > d0 + tol
        adjusted = d1 > math.sqrt(d0 * d0 + slack) + tol
        counts.violated_raw += int(raw)
        counts.violated += int(adjusted)
        if raw:
            report.outcomes.append({"epoch": B, "e_B": e_B, "dist_before": d0, "dist_after": d1,
                                    "slack": slack, "violated": adjusted})
    return report


def per_step_audit(
    trace: Trace,
    p: FiniteSumProblem,
    ref: ReferencePoint,
    eta: float,
    L_hat: float,
    eps_loss: float = DEFAULT_EPS_LOSS,
    tol: float = AUDIT_TOLERANCE,
) -> AuditReport:
    """Per-step distance decrease and the one-step descent bound, on recorded epochs.

    Premise per step: e_k <= 0, eta < 1/L_hat, and l_{xi_k}(x*) <= eps_loss
    (x* approximates a minimizer of the sampled component). Under it:

        ||x_{k+1} - x*|| <= ||x_k - x*||
        l(x_{k+1}) <= l(x*) + (||x_k - x*||^2 - ||x_{k+1} - x*||^2) / (2 eta)
    """
    report = AuditReport(name="per_step", eta=eta, lipschitz=L_hat)
    step_ok = _step_size_ok(eta, L_hat)
    for B in trace.recorded_epochs():
        counts = report.per_epoch.setdefault(B, AuditCounts())
        for k in trace.epoch_span(B):
            step = step_residual(trace, p, k, ref)
            loss_star = float(ref.component_losses[step.xi])
            if not (step_ok and step.e_k <= 0.0 and loss_star <= eps_loss):
                counts.vacuous += 1
                continue
            x_next = trace.iterate(k + 1)
            d0 = distance(trace.iterate(k), ref.x_star)
            d1 = distance(x_next, ref.x_star)
            slack = 2.0 * eta * loss_star
            descent_rhs = loss_star + (d0 * d0 - d1 * d1) / (2.0 * eta)
            descent_lhs = p.component_value(step.xi, x_next)
            descent_bad = descent_lhs > descent_rhs + tol
            raw = d1 > d0 + tol or descent_bad
            adjusted = d1 > math.sqrt(d0 * d0 + slack) + tol or descent_bad
            counts.checked += 1
            counts.slack_used = max(counts.slack_used, slack)
            counts.violated_raw += int(raw)
            counts.violated += int(adjusted)
            if raw:
                report.outcomes.append({"k": k, "e_k": step.e_k, "dist_before": d0, "dist_after": d1,
                                        "descent_lhs": descent_lhs, "descent_rhs": descent_rhs,
                                        "violated": adjusted})
    return report


# ── Full report ──────────────────────────────────────────────────────


@dataclass
class EpochRow:
    epoch: int
    e_B: float
    method: str  # recomputed | replayed
    dist: float
    full_loss: float
    variance: float
    weight_norm: float


@dataclass
class PathReport:
    reference: ReferencePoint
    epochs: List[EpochRow]
    iter_residuals: List[StepResidual]
    sc_fraction: Series
    distance_series: Series
    variance_series: Series
    weight_norms: Series
    subsequences: Dict[int, SubsequenceSeries]
    epoch_audit: Optional[AuditReport]
    step_audit: Optional[AuditReport]
    lipschitz: float
    lipschitz_source: str
    eps_loss: float
    notes: List[str] = field(default_factory=list)

    @property
    def epoch_residuals(self) -> Series:
        return [(row.epoch, row.e_B) for row in self.epochs]

    def audit_rows(self) -> List[Tuple[int, AuditCounts]]:
        rows = []
        for B in range(len(self.epochs)):
            counts = AuditCounts()
            for audit in (self.epoch_audit, self.step_audit):
                if audit is not None and B in audit.per_epoch:
                    counts.merge(audit.per_epoch[B])
            rows.append((B, counts))
        return rows


def _epoch_pass(trace, p, ref, B) -> Tuple[int, float, str, List[StepResidual]]:
    if not trace.missing_in_epoch(B):
        steps = iteration_residuals(trace, p, B, ref)
        return B, math.fsum(s.e_k for s in steps), "recomputed", steps
    return B, epoch_residual_from_boundaries(trace, p, B, ref), "replayed", []


def analyze(
    trace: Trace,
    p: FiniteSumProblem,
    ref: ReferencePoint,
    eps_loss: float = DEFAULT_EPS_LOSS,
    audits: bool = True,
    subsequences: bool = True,
    lipschitz: Optional[Tuple[float, str]] = None,
    workers: int = 1,
) -> PathReport:
    """Compute every diagnostic for *trace* against *ref*.

    Epochs are evaluated independently (optionally on a thread pool) and
    merged by epoch index, so the result does not depend on *workers*.
    """
    epochs = range(trace.epochs_completed)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            passes = list(pool.map(lambda B: _epoch_pass(trace, p, ref, B), epochs))
    else:
        passes = [_epoch_pass(trace, p, ref, B) for B in epochs]
    passes.sort(key=lambda item: item[0])

    distances = distance_series(trace, ref)
    variances = variance_series(trace, p)
    norms = weight_norm_series(trace)
    rows = []
    steps: List[StepResidual] = []
    fractions: Series = []
    for B, e_B, method, epoch_steps in passes:
        x_B = trace.checkpoints[trace.n * B]
        rows.append(EpochRow(
            epoch=B, e_B=e_B, method=method, dist=distances[B][1],
            full_loss=full_value(p, x_B), variance=variances[B][1], weight_norm=norms[B][1],
        ))
        if epoch_steps:
            steps.extend(epoch_steps)
            fractions.append((B, sum(1 for s in epoch_steps if s.e_k < 0.0) / trace.n))

    if lipschitz is None:
        lipschitz = resolve_lipschitz(trace, p)
    L_hat, source = lipschitz
    eta = trace.config.eta
    epoch_audit = step_audit = None
    if audits:
        epoch_audit = epoch_monotonicity_audit(
            trace, p, ref, eta, L_hat, epoch_residuals={row.epoch: row.e_B for row in rows},
        )
        step_audit = per_step_audit(trace, p, ref, eta, L_hat, eps_loss=eps_loss)

    subseq: Dict[int, SubsequenceSeries] = {}
    if subsequences:
        schedule = trace.schedule
        subseq = {v: subsequence_losses(trace, p, v, ref, schedule=schedule) for v in range(p.n)}

    notes = [QUANTIFIER_NOTE]
    if not _step_size_ok(eta, L_hat):
        notes.append(f"eta = {eta:.4g} is not below 1/L_hat = {1.0 / L_hat:.4g}; audit premises fail")
    return PathReport(
        reference=ref, epochs=rows, iter_residuals=steps, sc_fraction=fractions,
        distance_series=distances, variance_series=variances, weight_norms=norms,
        subsequences=subseq, epoch_audit=epoch_audit, step_audit=step_audit,
        lipschitz=L_hat, lipschitz_source=source, eps_loss=eps_loss, notes=notes,
    )


def alternate_reference_residuals(
    trace: Trace, p: FiniteSumProblem, epochs: Sequence[int], eps_loss: float = DEFAULT_EPS_LOSS,
) -> Dict[int, Series]:
    """e_B series against x* taken at the end of each epoch in *epochs*."""
    out: Dict[int, Series] = {}
    for e in epochs:
        ref = make_reference(trace, p, ReferenceMode("epoch_end", e), eps_loss=eps_loss)
        out[e] = [(B, _epoch_pass(trace, p, ref, B)[1]) for B in range(trace.epochs_completed)]
    return out
