"""Constant-step SGD under cyclic sampling with reshuffle, plus trace recording.

    x_{k+1} = x_k - eta * grad l_{xi_k}(x_k)

Every iteration appends ``(k, xi_k, l_{xi_k}(x_k))`` to the trace. Iterates
are checkpointed at every epoch boundary ``k = n*B`` and, in recorded
epochs, at every ``k`` of the epoch. Gradients are never stored; the
analyzer recomputes them from the checkpoints once the reference point is
known, replaying unrecorded epochs from their opening boundary.

Trace file layout (little-endian)::

    "SPTH" | version u32 | n u64 | d u64
    config block:  eta f64 | epochs u64 | seed i64 | policy u8 | m u64
                   | reference u8 | reference epoch u64 | diverged u8
                   | completed iterations u64 | fingerprint len u16 + utf-8
    checkpoint count u64, then per checkpoint: k u64 | d x f64
    iteration count u64, then per iteration: k u64 | xi u32 | loss f64
    final iterate d x f64

Wall-clock metadata lives in a JSON sidecar (``<trace>.meta.json``) so the
binary file is a pure function of (problem, x0, config).
"""

from __future__ import annotations

import logging
import platform
import struct
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple, Union

import numpy as np
import numpy.typing as npt

from starpath.constants import (
    DEFAULT_RECORD_EVERY,
    DIVERGENCE_THRESHOLD,
    REPLAY_TOLERANCE,
    SEED_LIMIT,
    TRACE_MAGIC,
    TRACE_META_SUFFIX,
    TRACE_VERSION,
)
from starpath.errors import (
    CoverageError,
    DimensionMismatchError,
    DivergenceError,
    ReplayMismatchError,
    TraceFormatError,
    UnsupportedTraceVersionError,
)
from starpath.numcore import ParamVector, axpy, is_finite, norm2
from starpath.problems import FiniteSumProblem
from starpath.schedule import EpochSchedule
from starpath.utils import safe_read_json, write_json

logger = logging.getLogger("starpath")

POLICY_KINDS = ("epoch_boundaries", "every_mth", "full")
REFERENCE_KINDS = ("final_iterate", "planted", "epoch_end")

ITERATION_DTYPE = np.dtype([("k", "<u8"), ("xi", "<u4"), ("loss", "<f8")])


# ── Configuration ────────────────────────────────────────────────────


@dataclass(frozen=True)
class RecordPolicy:
    """Which iterates are checkpointed. Epoch boundaries are always kept."""

    kind: str = "every_mth"  # epoch_boundaries | every_mth | full
    m: int = DEFAULT_RECORD_EVERY

    def __post_init__(self) -> None:
        if self.kind not in POLICY_KINDS:
            raise ValueError(f"record policy must be one of {POLICY_KINDS}, got {self.kind!r}")
        if self.m < 1:
            raise ValueError(f"record interval m must be >= 1, got {self.m}")

    def records_epoch(self, B: int) -> bool:
        """True if every iterate of epoch ``B`` is checkpointed."""
        if self.kind == "full":
            return True
        if self.kind == "every_mth":
            return B % self.m == 0
        return False


@dataclass(frozen=True)
class ReferenceMode:
    kind: str = "final_iterate"  # final_iterate | planted | epoch_end
    epoch: int = 0

    def __post_init__(self) -> None:
        if self.kind not in REFERENCE_KINDS:
            raise ValueError(f"reference mode must be one of {REFERENCE_KINDS}, got {self.kind!r}")
        if self.epoch < 0:
            raise ValueError(f"reference epoch must be >= 0, got {self.epoch}")

    def label(self) -> str:
        return f"epoch_end({self.epoch})" if self.kind == "epoch_end" else self.kind


@dataclass(frozen=True)
class RunConfig:
    eta: float
    epochs: int
    seed: int
    record_policy: RecordPolicy = field(default_factory=RecordPolicy)
    reference_mode: ReferenceMode = field(default_factory=ReferenceMode)

    def __post_init__(self) -> None:
        if not self.eta > 0:
            raise ValueError(f"learning rate must be positive, got {self.eta}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if not 0 <= self.seed < SEED_LIMIT:
            raise ValueError(f"seed must lie in [0, 2**63), got {self.seed}")


# ── Trace ────────────────────────────────────────────────────────────


@dataclass(eq=False)
class Trace:
    """Everything recorded by one SGD run."""

    fingerprint: str
    config: RunConfig
    n: int
    d: int
    iterations: npt.NDArray  # structured ITERATION_DTYPE rows, k ascending
    checkpoints: Dict[int, ParamVector]
    final_iterate: ParamVector
    diverged: bool = False
    wall: Dict[str, object] = field(default_factory=dict)

    @property
    def schedule(self) -> EpochSchedule:
        return EpochSchedule(self.n, self.config.seed)

    @property
    def completed(self) -> int:
        return int(self.iterations.shape[0])

    @property
    def epochs_completed(self) -> int:
        return self.completed // self.n

    @property
    def xis(self) -> npt.NDArray:
        return self.iterations["xi"]

    @property
    def losses(self) -> npt.NDArray[np.float64]:
        return self.iterations["loss"]

    def iterate(self, k: int) -> ParamVector:
        x = self.checkpoints.get(k)
        if x is None:
            raise CoverageError([k])
        return x

    def epoch_span(self, B: int) -> range:
        return range(self.n * B, self.n * (B + 1))

    def missing_in_epoch(self, B: int, include_end: bool = False) -> List[int]:
        end = self.n * (B + 1) + (1 if include_end else 0)
        return [k for k in range(self.n * B, end) if k not in self.checkpoints]

    def epoch_recorded(self, B: int) -> bool:
        return B < self.epochs_completed and not self.missing_in_epoch(B, include_end=True)

    def recorded_epochs(self) -> List[int]:
        return [B for B in range(self.epochs_completed) if self.epoch_recorded(B)]

    def epoch_mean_loss(self, B: int) -> float:
        return float(self.losses[self.n * B:self.n * (B + 1)].mean())


def weight_norm_series(t: Trace) -> List[Tuple[int, float]]:
    """``(B, ||x_{nB}||)`` for every completed epoch boundary, ``B = 0 .. epochs``."""
    boundaries = [t.n * B for B in range(t.epochs_completed + 1)]
    missing = [k for k in boundaries if k not in t.checkpoints]
    if missing:
        raise CoverageError(missing, what="epoch-boundary checkpoints")
    return [(k // t.n, norm2(t.checkpoints[k])) for k in boundaries]


# ── The SGD loop ─────────────────────────────────────────────────────


EpochCallback = Callable[[int, float], None]


def _partial_trace(p, cfg, rows, count, checkpoints, x_last) -> Trace:
    return Trace(
        fingerprint=p.fingerprint, config=cfg, n=p.n, d=p.d,
        iterations=rows[:count].copy(),
        checkpoints=checkpoints, final_iterate=x_last, diverged=True,
    )


def run(
    p: FiniteSumProblem,
    x0: ParamVector,
    cfg: RunConfig,
    on_epoch: Optional[EpochCallback] = None,
) -> Trace:
    """Run ``cfg.epochs * p.n`` SGD iterations from *x0* and record the trace.

    Raises :class:`DivergenceError` carrying the partial trace when an
    iterate or loss leaves the finite range or exceeds the divergence
    threshold.
    """
    if x0.shape != (p.d,):
        raise DimensionMismatchError(p.d, int(np.size(x0)), what="x0")
    if not is_finite(x0):
        raise ValueError("x0 contains NaN or Inf")
    if p.lipschitz_bound is not None and cfg.eta * p.lipschitz_bound >= 1.0:
        logger.warning(
            "eta = %.4g >= 1/L = %.4g: the step-size hypothesis eta < 1/L does not hold",
            cfg.eta, 1.0 / p.lipschitz_bound,
        )

    schedule = EpochSchedule(p.n, cfg.seed)
    total = cfg.epochs * p.n
    rows = np.zeros(total, dtype=ITERATION_DTYPE)
    x = np.array(x0, dtype=np.float64)
    checkpoints: Dict[int, ParamVector] = {0: x}
    started = time.perf_counter()
    started_at = datetime.now(timezone.utc).isoformat()

    for B in range(cfg.epochs):
        perm = schedule.permutation(B)
        keep_all = cfg.record_policy.records_epoch(B)
        for t in range(p.n):
            k = p.n * B + t
            i = int(perm[t])
            loss, grad = p.component_value_and_grad(i, x)
            if not np.isfinite(loss) or loss > DIVERGENCE_THRESHOLD:
                checkpoints[k] = x
                raise DivergenceError(k, f"component loss {loss:.4g}",
                                      trace=_partial_trace(p, cfg, rows, k, checkpoints, x))
            rows[k] = (k, i, loss)
            x_next = axpy(-cfg.eta, grad, x)
            if not is_finite(x_next) or norm2(x_next) > DIVERGENCE_THRESHOLD:
                # x_{k+1} is never stored, so step k stays out of the partial trace
                checkpoints[k] = x
                raise DivergenceError(k + 1, "iterate norm left the finite range",
                                      trace=_partial_trace(p, cfg, rows, k, checkpoints, x))
            x = x_next
            if keep_all or t == p.n - 1:
                checkpoints[k + 1] = x
        if on_epoch is not None:
            on_epoch(B, float(rows["loss"][p.n * B:p.n * (B + 1)].mean()))

    elapsed = time.perf_counter() - started
    logger.debug("SGD finished %d iterations in %.2fs", total, elapsed)
    return Trace(
        fingerprint=p.fingerprint, config=cfg, n=p.n, d=p.d,
        iterations=rows, checkpoints=checkpoints,
        final_iterate=x, diverged=False,
        wall={"started_at": started_at, "elapsed_seconds": round(elapsed, 6),
              "python": platform.python_version(), "numpy": np.__version__},
    )


@dataclass(frozen=True)
class ReplayedStep:
    k: int
    xi: int
    x: ParamVector
    loss: float
    grad: ParamVector


def replay_epoch(t: Trace, p: FiniteSumProblem, B: int, tol: float = REPLAY_TOLERANCE) -> List[ReplayedStep]:
    """Re-run epoch ``B`` from its opening checkpoint with the update :func:`run` applies.

    Only the two boundary checkpoints are needed. Raises
    :class:`ReplayMismatchError` if a replayed loss or the closing iterate
    drifts from the trace by more than *tol* (relative).
    """
    lo, hi = t.n * B, t.n * (B + 1)
    if B >= t.epochs_completed:
        raise CoverageError([lo, hi], what="epoch-boundary checkpoints")
    missing = [k for k in (lo, hi) if k not in t.checkpoints]
    if missing:
        raise CoverageError(missing, what="epoch-boundary checkpoints")
    eta = t.config.eta
    x = t.checkpoints[lo]
    steps: List[ReplayedStep] = []
    for k in range(lo, hi):
        i = int(t.xis[k])
        loss, grad = p.component_value_and_grad(i, x)
        recorded = float(t.losses[k])
        if abs(loss - recorded) > tol * (1.0 + abs(recorded)):
            raise ReplayMismatchError(k, f"loss {loss!r} but the trace recorded {recorded!r}")
        steps.append(ReplayedStep(k=k, xi=i, x=x, loss=loss, grad=grad))
        x = axpy(-eta, grad, x)
    closing = t.checkpoints[hi]
    drift = norm2(x - closing)
    if drift > tol * (1.0 + norm2(closing)):
        raise ReplayMismatchError(hi, f"closing iterate is {drift:.3g} away from the checkpoint")
    return steps


# ── Persistence ──────────────────────────────────────────────────────

_HEAD = struct.Struct("<4sIQQ")
_CONFIG = struct.Struct("<dQqBQBQBQH")
_U64 = struct.Struct("<Q")


def _encode(t: Trace) -> bytes:
    cfg = t.config
    fp = t.fingerprint.encode("utf-8")
    parts = [
        _HEAD.pack(TRACE_MAGIC, TRACE_VERSION, t.n, t.d),
        _CONFIG.pack(
            cfg.eta, cfg.epochs, cfg.seed,
            POLICY_KINDS.index(cfg.record_policy.kind), cfg.record_policy.m,
            REFERENCE_KINDS.index(cfg.reference_mode.kind), cfg.reference_mode.epoch,
            int(t.diverged), t.completed, len(fp),
        ),
        fp,
        _U64.pack(len(t.checkpoints)),
    ]
    for k in sorted(t.checkpoints):
        parts.append(_U64.pack(k))
        parts.append(np.asarray(t.checkpoints[k], dtype="<f8").tobytes())
    parts.append(_U64.pack(t.completed))
    parts.append(np.asarray(t.iterations, dtype=ITERATION_DTYPE).tobytes())
    parts.append(np.asarray(t.final_iterate, dtype="<f8").tobytes())
    return b"".join(parts)


class _Reader:
    """Sequential byte reader that reports the offset of a truncation."""

    def __init__(self, raw: bytes):
        self.raw = raw
        self.offset = 0

    def take(self, size: int) -> bytes:
        end = self.offset + size
        if end > len(self.raw):
            raise TraceFormatError(f"truncated trace: need {size} bytes", offset=self.offset)
        chunk = self.raw[self.offset:end]
        self.offset = end
        return chunk

    def unpack(self, st: struct.Struct) -> tuple:
        return st.unpack(self.take(st.size))

    def array(self, dtype, count: int) -> np.ndarray:
        dtype = np.dtype(dtype)
        return np.frombuffer(self.take(dtype.itemsize * count), dtype=dtype).copy()


def _decode(raw: bytes) -> Trace:
    r = _Reader(raw)
    if len(raw) < 4 or raw[:4] != TRACE_MAGIC:
        raise TraceFormatError("bad magic, not a starpath trace", offset=0)
    magic, version, n, d = r.unpack(_HEAD)
    if version != TRACE_VERSION:
        raise UnsupportedTraceVersionError(version, TRACE_VERSION)
    (eta, epochs, seed, policy, m, ref_kind, ref_epoch,
     diverged, completed, fp_len) = r.unpack(_CONFIG)
    if policy >= len(POLICY_KINDS) or ref_kind >= len(REFERENCE_KINDS):
        raise TraceFormatError("corrupt config block", offset=_HEAD.size)
    fingerprint = r.take(fp_len).decode("utf-8")
    cfg = RunConfig(
        eta=eta, epochs=epochs, seed=seed,
        record_policy=RecordPolicy(POLICY_KINDS[policy], m),
        reference_mode=ReferenceMode(REFERENCE_KINDS[ref_kind], ref_epoch),
    )
    (count,) = r.unpack(_U64)
    checkpoints: Dict[int, ParamVector] = {}
    for _ in range(count):
        (k,) = r.unpack(_U64)
        checkpoints[int(k)] = r.array("<f8", d).astype(np.float64)
    (iters,) = r.unpack(_U64)
    if iters != completed:
        raise TraceFormatError("iteration table length disagrees with header", offset=r.offset - 8)
    rows = r.array(ITERATION_DTYPE, iters)
    final = r.array("<f8", d).astype(np.float64)
    if r.offset != len(raw):
        raise TraceFormatError(f"{len(raw) - r.offset} trailing bytes", offset=r.offset)
    return Trace(
        fingerprint=fingerprint, config=cfg, n=int(n), d=int(d),
        iterations=rows, checkpoints=checkpoints,
        final_iterate=final, diverged=bool(diverged),
    )


def _meta_path(path: Path) -> Path:
    return path.with_name(path.name + TRACE_META_SUFFIX)


def save_trace(t: Trace, path: Union[str, Path]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(_encode(t))
    if t.wall:
        write_json(_meta_path(path), t.wall)
    logger.debug("Wrote trace %s (%d checkpoints)", path, len(t.checkpoints))


def load_trace(path: Union[str, Path]) -> Trace:
    path = Path(path)
    trace = _decode(path.read_bytes())
    trace.wall = safe_read_json(_meta_path(path), default={}) or {}
    return trace
