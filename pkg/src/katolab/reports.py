"""Residual reports shared by the verification routines."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

PASS = "pass"
PASS_TAINT = "pass-with-taint"
FAIL = "fail"
INCONCLUSIVE = "inconclusive"
VERDICTS = (PASS, PASS_TAINT, FAIL, INCONCLUSIVE)


def _clean(v):
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating, float)):
        v = float(v)
        return v if math.isfinite(v) else repr(v)
    if isinstance(v, np.ndarray):
        return [_clean(x) for x in v.tolist()]
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    if isinstance(v, dict):
        return {str(k): _clean(x) for k, x in v.items()}
    return v


@dataclass
class VerificationReport:
    """Margins of one inequality over a sample; negative margin = violation.

    ``margins`` are already scaled so that the verdict compares them with
    ``-tolerance``.  ``locations`` labels each sample (e.g. ``(t, x)``) and
    ``tainted`` marks samples computed from clamped or truncated data.
    """

    name: str
    margins: np.ndarray
    tolerance: float
    locations: list = field(default_factory=list)
    tainted: np.ndarray | None = None
    taints: set = field(default_factory=set)
    samples: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)
    reason: str | None = None

    def __post_init__(self):
        self.margins = np.atleast_1d(np.asarray(self.margins, dtype=float))
        if self.tainted is None:
            self.tainted = np.zeros(len(self.margins), dtype=bool)
        self.tainted = np.asarray(self.tainted, dtype=bool)
        if not self.locations:
            self.locations = list(range(len(self.margins)))
        self.taints = set(self.taints)

    @property
    def min_margin(self) -> float:
        return float(self.margins.min()) if self.margins.size else float("nan")

    @property
    def mean_margin(self) -> float:
        return float(self.margins.mean()) if self.margins.size else float("nan")

    @property
    def violations(self) -> list:
        bad = np.flatnonzero(self.margins < -self.tolerance)
        return [{"location": _clean(self.locations[i]), "margin": float(self.margins[i]),
                 "tainted": bool(self.tainted[i])} for i in bad]

    @property
    def worst_location(self):
        if not self.margins.size:
            return None
        return self.locations[int(np.argmin(self.margins))]

    @property
    def verdict(self) -> str:
        if self.reason is not None:
            return INCONCLUSIVE
        if not self.margins.size:
            return INCONCLUSIVE
        bad = self.margins < -self.tolerance
        if np.any(bad & ~self.tainted):
            return FAIL
        if np.any(bad) or self.taints or np.any(self.tainted):
            return PASS_TAINT
        return PASS

    @property
    def passed(self) -> bool:
        return self.verdict in (PASS, PASS_TAINT)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "samples": _clean({**self.samples, "count": int(self.margins.size)}),
            "min_margin": _clean(self.min_margin),
            "mean_margin": _clean(self.mean_margin),
            "violations": self.violations,
            "tolerance": float(self.tolerance),
            "taints": sorted(self.taints),
            "verdict": self.verdict,
            **({"reason": self.reason} if self.reason else {}),
            **({"extra": _clean(self.extra)} if self.extra else {}),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["index", "location", "margin", "tainted"])
        for i, (loc, m, tnt) in enumerate(zip(self.locations, self.margins, self.tainted)):
            w.writerow([i, json.dumps(_clean(loc)), repr(float(m)), int(tnt)])
        return buf.getvalue()

    def __str__(self):
        return f"{self.name}: {self.verdict} (min margin {self.min_margin:.3g}, tol {self.tolerance:.3g})"


def combine_verdicts(verdicts) -> str:
    verdicts = list(verdicts)
    if not verdicts:
        return PASS
    if FAIL in verdicts:
        return FAIL
    if all(v == INCONCLUSIVE for v in verdicts):
        return INCONCLUSIVE
    if PASS_TAINT in verdicts or INCONCLUSIVE in verdicts:
        return PASS_TAINT
    return PASS


def stability_report(name: str, values, factor: float = 2.0) -> VerificationReport:
    """Spread of positive values across a refinement family, in units of ``log factor``.

    The margin is ``1 - log(max/min) / log(factor)``; an all-zero family is
    trivially stable.
    """
    v = np.abs(np.asarray(values, dtype=float))
    if v.size < 2:
        return VerificationReport(name, [], 0.0, reason="needs at least two levels")
    if np.all(v == 0):
        spread = 1.0
    elif np.any(v == 0):
        spread = float("inf")
    else:
        spread = float(v.max() / v.min())
    margin = 1.0 - math.log(spread) / math.log(factor)
    return VerificationReport(name, [margin], 0.0, samples={"levels": int(v.size)},
                              extra={"values": v, "spread": spread, "factor": factor})
