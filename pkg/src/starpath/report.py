"""Write a PathReport to its CSV tables and report.json.

Floats are written with ``repr`` so a rerun produces identical bytes.
"""

from __future__ import annotations

import csv
import logging
from pathlib import Path
from typing import Dict, Iterable, List, Sequence, Tuple, Union

from starpath.analyzer import AuditReport, PathReport
from starpath.constants import (
    ALT_EPOCHS_HEADER,
    AUDITS_CSV,
    AUDITS_HEADER,
    EPOCHS_CSV,
    EPOCHS_HEADER,
    ITERS_CSV,
    ITERS_HEADER,
    REPORT_JSON,
    SUBSEQ_CSV,
    SUBSEQ_HEADER,
)
from starpath.utils import VERSION, write_json

logger = logging.getLogger("starpath")


def _fmt(value: object) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence[object]]) -> int:
    """Write *rows* under *header*; returns the number of data rows."""
    path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])
            count += 1
    return count


def _audit_summary(audit: Union[AuditReport, None]) -> Dict[str, object]:
    if audit is None:
        return {"enabled": False}
    total = audit.total
    return {
        "enabled": True,
        "checked": total.checked,
        "vacuous": total.vacuous,
        "violated": total.violated,
        "violated_raw": total.violated_raw,
        "max_slack": total.slack_used,
        "outcomes": audit.outcomes[:50],
    }


def report_summary(report: PathReport) -> Dict[str, object]:
    epochs = report.epochs
    nonpositive = sum(1 for row in epochs if row.e_B <= 0.0)
    return {
        "version": VERSION,
        "reference": {
            "origin": report.reference.origin,
            "achieved_loss": report.reference.achieved_loss,
        },
        "lipschitz": {"value": report.lipschitz, "source": report.lipschitz_source},
        "thresholds": {
            "sc_fraction": "e_k < 0",
            "audit_premise": "e <= 0",
            "eps_loss": report.eps_loss,
        },
        "epochs": len(epochs),
        "epochs_nonpositive_e_B": nonpositive,
        "e_B_methods": {
            method: sum(1 for row in epochs if row.method == method)
            for method in sorted({row.method for row in epochs})
        },
        "audits": {
            "epoch_distance": _audit_summary(report.epoch_audit),
            "per_step": _audit_summary(report.step_audit),
        },
        "notes": report.notes,
    }


def write_report(report: PathReport, out_dir: Union[str, Path]) -> List[Path]:
    """Write epochs/iters/audits/subsequences CSVs plus report.json into *out_dir*."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    path = out / EPOCHS_CSV
    write_csv(path, EPOCHS_HEADER, (
        (r.epoch, r.e_B, r.dist, r.full_loss, r.variance, r.weight_norm) for r in report.epochs
    ))
    written.append(path)

    path = out / ITERS_CSV
    write_csv(path, ITERS_HEADER, (
        (s.k, s.epoch, s.t, s.xi, s.e_k, s.component_loss) for s in report.iter_residuals
    ))
    written.append(path)

    path = out / AUDITS_CSV
    write_csv(path, AUDITS_HEADER, (
        (B, c.checked, c.vacuous, c.violated, c.slack_used) for B, c in report.audit_rows()
    ))
    written.append(path)

    path = out / SUBSEQ_CSV
    write_csv(path, SUBSEQ_HEADER, _subsequence_rows(report))
    written.append(path)

    path = out / REPORT_JSON
    write_json(path, report_summary(report))
    written.append(path)
    logger.info("Wrote %d report files to %s", len(written), out)
    return written


def _subsequence_rows(report: PathReport) -> Iterable[Tuple[object, ...]]:
    for v in sorted(report.subsequences):
        series = report.subsequences[v]
        post = dict(series.post_update)
        for B, pre in series.pre_update:
            yield (v, B, post.get(B, ""), pre)


def alt_epochs_name(e: int) -> str:
    return f"alt_epochs_e{e}.csv"


def write_alternate(series: Dict[int, List[Tuple[int, float]]], out_dir: Union[str, Path]) -> List[Path]:
    """One ``alt_epochs_e<e>.csv`` per alternate reference epoch."""
    out = Path(out_dir)
    written = []
    for e in sorted(series):
        path = out / alt_epochs_name(e)
        write_csv(path, ALT_EPOCHS_HEADER, series[e])
        written.append(path)
    return written
