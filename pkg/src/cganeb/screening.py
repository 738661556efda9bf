"""Hotspot ranking and period-to-period consistency tests.

Sites are ranked by EB crashes per mile.  A good screening method flags
the same sites, in a similar order and with similar EB values, in two
consecutive periods when nothing about the sites has changed:

* SCT - period-2 crashes per mile among the period-1 top-R sites (higher is better)
* MCT - size of the overlap of the two periods' top-R sets (higher is better)
* RDT - summed absolute rank shift of period-1 top-R sites (lower is better)
* PDT - summed absolute EB change of period-1 top-R sites (lower is better)
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .data import SiteTable

THRESHOLDS = (0.025, 0.05, 0.075, 0.10)
TESTS = ("SCT", "MCT", "RDT", "PDT")
HIGHER_IS_BETTER = {"SCT": True, "MCT": True, "RDT": False, "PDT": False}


class ScreeningError(ValueError):
    pass


@dataclass(frozen=True)
class RankEntry:
    rank: int
    site_id: str
    eb: float
    crash_rate: float


@dataclass(frozen=True)
class Ranking:
    entries: tuple[RankEntry, ...]
    method: str = ""
    period: str = ""

    def __len__(self):
        return len(self.entries)

    @property
    def site_ids(self) -> list[str]:
        return [e.site_id for e in self.entries]

    def top(self, r: int) -> list[str]:
        return [e.site_id for e in self.entries[:r]]

    def rank_of(self) -> dict[str, int]:
        return {e.site_id: e.rank for e in self.entries}


def _eb_map(estimates) -> dict[str, float]:
    if isinstance(estimates, Mapping):
        return {str(k): float(v) for k, v in estimates.items()}
    return {e.site_id: float(e.eb) for e in estimates}


def _check_sites(expected: Sequence[str], got, what: str) -> None:
    exp, have = set(expected), set(got)
    if exp != have:
        missing = sorted(exp - have)
        extra = sorted(have - exp)
        parts = []
        if missing:
            parts.append(f"missing site {missing[0]}" + (f" (+{len(missing) - 1} more)" if len(missing) > 1 else ""))
        if extra:
            parts.append(f"unexpected site {extra[0]}" + (f" (+{len(extra) - 1} more)" if len(extra) > 1 else ""))
        raise ScreeningError(f"{what}: " + "; ".join(parts))


def rank_sites(estimates, table: SiteTable, method: str = "", period: str = "") -> Ranking:
    """Rank by EB per mile, descending; ties go to the smaller site_id."""
    eb = _eb_map(estimates)
    _check_sites(table.site_ids, eb, "EB estimates do not match the site table")
    rows = []
    for r in table.records:
        rows.append((-(eb[r.site_id] / r.length_mi), r.site_id, eb[r.site_id]))
    rows.sort(key=lambda t: (t[0], t[1]))
    entries = tuple(RankEntry(i + 1, sid, v, -neg) for i, (neg, sid, v) in enumerate(rows))
    return Ranking(entries, method, period)


def hotspot_count(tau: float, n: int) -> int:
    """R = round(tau * N) with halves rounded up, at least 1."""
    return max(1, int(math.floor(tau * n + 0.5)))


def _check_r(r: int, n: int) -> None:
    if not 1 <= r <= n:
        raise ScreeningError(f"R={r} outside 1..{n}")


def _check_pair(a: Ranking, b: Ranking) -> None:
    _check_sites(a.site_ids, b.site_ids, "rankings cover different sites")


def sct(ranking_p1: Ranking, table: SiteTable, period2: str, r: int) -> float:
    _check_r(r, len(ranking_p1))
    table.check_period(period2)
    index = {rec.site_id: rec for rec in table.records}
    top = ranking_p1.top(r)
    try:
        crashes = sum(index[s].crashes[period2] for s in top)
        length = sum(index[s].length_mi for s in top)
    except KeyError as exc:
        raise ScreeningError(f"site {exc.args[0]} not in table") from None
    return crashes / length


def mct(ranking_p1: Ranking, ranking_p2: Ranking, r: int) -> int:
    _check_pair(ranking_p1, ranking_p2)
    _check_r(r, len(ranking_p1))
    return len(set(ranking_p1.top(r)) & set(ranking_p2.top(r)))


def rdt(ranking_p1: Ranking, ranking_p2: Ranking, r: int) -> int:
    _check_pair(ranking_p1, ranking_p2)
    _check_r(r, len(ranking_p1))
    later = ranking_p2.rank_of()
    return sum(abs(e.rank - later[e.site_id]) for e in ranking_p1.entries[:r])


def pdt(eb_p1, eb_p2, ranking_p1: Ranking, r: int) -> float:
    a, b = _eb_map(eb_p1), _eb_map(eb_p2)
    _check_sites(ranking_p1.site_ids, a, "period-1 EB estimates do not match the ranking")
    _check_sites(ranking_p1.site_ids, b, "period-2 EB estimates do not match the ranking")
    _check_r(r, len(ranking_p1))
    return float(sum(abs(a[s] - b[s]) for s in ranking_p1.top(r)))


def improvement(test: str, baseline: float, challenger: float) -> float:
    """Percent improvement of ``challenger`` over ``baseline`` (positive favours the challenger)."""
    if baseline == challenger:
        return 0.0
    if baseline == 0:
        return float("nan")
    sign = 1.0 if HIGHER_IS_BETTER[test] else -1.0
    return 100.0 * sign * (challenger - baseline) / abs(baseline)


@dataclass
class ScoreRow:
    test: str
    threshold: float
    r: int
    scores: dict[str, float]
    improvements: dict[str, float] = field(default_factory=dict)


@dataclass
class ScreeningReport:
    methods: list[str]
    baseline: str
    rows: list[ScoreRow]
    n_sites: int

    def row(self, test: str, threshold: float) -> ScoreRow:
        for r in self.rows:
            if r.test == test and math.isclose(r.threshold, threshold):
                return r
        raise KeyError((test, threshold))

    def average_improvement(self, test: str) -> dict[str, float]:
        rows = [r for r in self.rows if r.test == test]
        return {m: float(np.mean([r.improvements[m] for r in rows]))
                for m in self.methods if m != self.baseline}

    @property
    def challengers(self) -> list[str]:
        return [m for m in self.methods if m != self.baseline]

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["test", "threshold", "R", *self.methods,
                        *(f"improvement_{m}_pct" for m in self.challengers)])
            for r in self.rows:
                w.writerow([r.test, repr(r.threshold), r.r, *(repr(float(r.scores[m])) for m in self.methods),
                            *(repr(r.improvements[m]) for m in self.challengers)])
            for t in TESTS:
                avg = self.average_improvement(t)
                w.writerow([t, "AVG", "", *([""] * len(self.methods)),
                            *(repr(avg[m]) for m in self.challengers)])

    def to_text(self) -> str:
        head = ["Test", "Top % Hotspots", "R", *self.methods, *(f"Improvement ({m})" for m in self.challengers)]
        body = []
        for t in TESTS:
            for r in (x for x in self.rows if x.test == t):
                body.append([t, f"{100 * r.threshold:.1f}%", str(r.r),
                             *(_fmt(r.scores[m]) for m in self.methods),
                             *(_pct(r.improvements[m]) for m in self.challengers)])
            avg = self.average_improvement(t)
            body.append([t, "AVG", "", *([""] * len(self.methods)), *(_pct(avg[m]) for m in self.challengers)])
        widths = [max(len(row[i]) for row in [head, *body]) for i in range(len(head))]
        lines = ["  ".join(c.rjust(wd) for c, wd in zip(head, widths))]
        lines.append("  ".join("-" * wd for wd in widths))
        lines += ["  ".join(c.rjust(wd) for c, wd in zip(row, widths)) for row in body]
        return "\n".join(lines) + "\n"


def _fmt(v: float) -> str:
    return str(int(v)) if float(v).is_integer() else f"{v:.3g}" if abs(v) < 10 else f"{v:.1f}"


def _pct(v: float) -> str:
    return "undefined" if not np.isfinite(v) else f"{v:.1f}%"


def compare(methods: Mapping[str, tuple], table: SiteTable, thresholds: Sequence[float] = THRESHOLDS,
            periods: tuple[str, str] | None = None, baseline: str | None = None) -> ScreeningReport:
    """Score every method at every threshold.

    ``methods`` maps a method name to its (period-1, period-2) EB estimates.
    Improvements are relative to ``baseline`` (default: the first method).
    """
    if not methods:
        raise ScreeningError("no methods to compare")
    p1, p2 = periods or table.period_ids[:2]
    names = list(methods)
    baseline = baseline or names[0]
    if baseline not in methods:
        raise ScreeningError(f"unknown baseline method {baseline!r}")
    n = len(table)
    ranks = {}
    for name, (e1, e2) in methods.items():
        try:
            ranks[name] = (rank_sites(e1, table, name, p1), rank_sites(e2, table, name, p2))
        except ScreeningError as exc:
            raise ScreeningError(f"{name}: {exc}") from None
    rows = []
    for test in TESTS:
        for tau in thresholds:
            r = hotspot_count(tau, n)
            scores = {}
            for name in names:
                a, b = ranks[name]
                if test == "SCT":
                    scores[name] = sct(a, table, p2, r)
                elif test == "MCT":
                    scores[name] = mct(a, b, r)
                elif test == "RDT":
                    scores[name] = rdt(a, b, r)
                else:
                    scores[name] = pdt(methods[name][0], methods[name][1], a, r)
            imp = {m: improvement(test, scores[baseline], scores[m]) for m in names if m != baseline}
            rows.append(ScoreRow(test, float(tau), r, scores, imp))
    return ScreeningReport(names, baseline, rows, n)


def random_ranking(table: SiteTable, rng) -> Ranking:
    """Uniformly random order of the table's sites (a no-information screen)."""
    rng = np.random.default_rng(rng)
    order = rng.permutation(len(table))
    entries = tuple(RankEntry(i + 1, table.records[j].site_id, float("nan"), float("nan"))
                    for i, j in enumerate(order))
    return Ranking(entries, "random")


__all__ = [
    "HIGHER_IS_BETTER", "RankEntry", "Ranking", "ScoreRow", "ScreeningError",
    "ScreeningReport", "TESTS", "THRESHOLDS", "compare", "hotspot_count", "improvement", "mct",
    "pdt", "random_ranking", "rank_sites", "rdt", "sct",
]
