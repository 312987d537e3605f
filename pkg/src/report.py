"""CSV, summary and SVG output of a benchmark run, and reading it back."""

from __future__ import annotations

import csv
import logging
import math
from collections import (defaultdict)
from pathlib import (Path)
from typing import (Iterable, TextIO)

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from bench import (  # noqa: E402
    RunRecord, SuiteResult, family, iteration_gap, summarize,
    summarize_timing, value_gap
)
from config import (METHODS)  # noqa: E402
from errors import (ConfigError)  # noqa: E402

logger = logging.getLogger(__name__)

SERIES_HEADER = ["system_id", "k_or_t", "residual_K", "residual_P",
                 "wall_ns"]
SUMMARY_HEADER = ["method", "runs", "failed", "mean", "median", "q1", "q3",
                  "min", "max"]
TIMING_HEADER = ["method", "unit", "samples", "mean_ns", "median_ns"]
STATUS_HEADER = ["system_id", "method", "status", "points", "value"]

# Same file bytes for the same figure.
plt.rcParams.update({
    "svg.hashsalt": "ddlqr",
    "svg.fonttype": "path",
    "font.size": 11,
    "axes.labelsize": 12,
})

LABELS = {
    "pi": ("iteration k", r"$\|K_k - K^*\|_F / \|K_0 - K^*\|_F$"),
    "vi": ("iteration k", r"$\|P_k - P^*\|_F / \|P^*\|_F$"),
    "flow": ("time t", r"$\|K(t) - K^*\|_F / \|K_0 - K^*\|_F$"),
    "ricflow": ("time t", r"$\|P(t) - P^*\|_F / \|P^*\|_F$"),
}


def fmt(x: float) -> str:
    """Round-trip float formatting."""
    return "%.17g" % x


def _writable(out: Path) -> Path:
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as err:
        raise ConfigError(f"cannot create output directory {out}: {err}") \
            from err
    return out


# SECTION CSV

def write_series(f: TextIO, records: Iterable[RunRecord]) -> int:
    """Write the residual series of records; returns the row count."""
    w = csv.writer(f, lineterminator="\n")
    w.writerow(SERIES_HEADER)
    rows = 0
    for rec in records:
        for at, rk, rp, ns in zip(rec.points, rec.residual_K,
                                  rec.residual_P, rec.wall_ns, strict=True):
            w.writerow([rec.system_id, fmt(at), fmt(rk), fmt(rp), ns])
            rows += 1
    return rows


def write_status(f: TextIO, records: Iterable[RunRecord]) -> None:
    """One line per (system, method) with the outcome."""
    w = csv.writer(f, lineterminator="\n")
    w.writerow(STATUS_HEADER)
    for rec in records:
        w.writerow([rec.system_id, rec.method, rec.status, len(rec),
                    fmt(rec.value)])


def write_summary(f: TextIO, records: list[RunRecord],
                  methods: Iterable[str]) -> None:
    """Final-residual statistics per method."""
    w = csv.writer(f, lineterminator="\n")
    w.writerow(SUMMARY_HEADER)
    for method in methods:
        s = summarize(records, method)
        w.writerow([s.method, s.runs, s.failed, fmt(s.mean), fmt(s.median),
                    fmt(s.q1), fmt(s.q3), fmt(s.minimum), fmt(s.maximum)])


def write_gaps(f: TextIO, records: list[RunRecord]) -> None:
    """Per-iteration CL/IRL gaps and the value gap of the CL programs."""
    w = csv.writer(f, lineterminator="\n")
    w.writerow(["quantity", "value"])
    for fam in ("pi", "vi", "flow", "ricflow"):
        w.writerow([f"{fam}_max_gap",
                    fmt(iteration_gap(records, f"{fam}-cl", f"{fam}-irl"))])
    gaps = [g for _, g in value_gap(records)]
    w.writerow(["cl1_cl2_value_gap_mean",
                fmt(float(np.mean(gaps)) if gaps else math.nan)])
    w.writerow(["cl1_cl2_value_gap_max",
                fmt(max(gaps) if gaps else math.nan)])


def write_timing(f: TextIO, suite: SuiteResult) -> None:
    """Mean and median wall time per measured unit."""
    w = csv.writer(f, lineterminator="\n")
    w.writerow(TIMING_HEADER)
    for method in suite.config.methods:
        t = summarize_timing(suite.timings, method)
        if t is not None:
            w.writerow([t.method, t.unit, t.samples, fmt(t.mean_ns),
                        fmt(t.median_ns)])

# !SECTION


# SECTION Figures

def mean_curve(records: list[RunRecord]) -> tuple[list[float], list[float]]:
    """Mean of the positive tracked residuals at each point."""
    by_point: dict[float, list[float]] = defaultdict(list)
    for rec in records:
        for at, r in zip(rec.points, rec.series):
            if math.isfinite(r) and r > 0:
                by_point[at].append(r)
    xs = sorted(by_point)
    return xs, [float(np.mean(by_point[x])) for x in xs]


def plot_series(path: Path, method: str, records: list[RunRecord]) -> None:
    """Light line per run, dark mean line, log-scale residuals."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for rec in records:
        if rec.points:
            ax.plot(rec.points, rec.series, color="0.75", lw=0.6)
    xs, ys = mean_curve(records)
    if xs:
        ax.plot(xs, ys, color="k", lw=2, label="mean")
        ax.legend(loc="upper right")
    ax.set_yscale("log", nonpositive="mask")
    xlabel, ylabel = LABELS[family(method)]
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_title(method)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def plot_programs(path: Path, records: list[RunRecord],
                  methods: list[str]) -> None:
    """Box plot of the absolute gain errors of the SDP solves."""
    data, labels = [], []
    for method in methods:
        finals = [r.final_residual for r in records if r.method == method]
        finals = [x for x in finals if math.isfinite(x) and x > 0]
        if finals:
            data.append(finals)
            labels.append(method)
    fig, ax = plt.subplots(figsize=(6, 4))
    if data:
        ax.boxplot(data)
        ax.set_xticks(range(1, len(labels) + 1), labels)
        ax.set_yscale("log")
    ax.set_ylabel(r"$\|K - K^*\|_F$")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)

# !SECTION


def emit(suite: SuiteResult, out: Path) -> list[Path]:
    """Write every CSV and SVG of a run into `out`."""
    out = _writable(out)
    written: list[Path] = []
    methods = list(suite.config.methods)

    def dump(name: str, write) -> None:  # type: ignore[no-untyped-def]
        path = out / name
        with path.open("w", newline="") as f:
            write(f)
        written.append(path)

    (out / "config.txt").write_text(suite.config.dumps())
    written.append(out / "config.txt")
    for method in methods:
        records = suite.by_method(method)
        dump(f"{method}.csv", lambda f: write_series(f, records))
    dump("status.csv", lambda f: write_status(f, suite.records))
    dump("summary.csv",
         lambda f: write_summary(f, suite.records, methods))
    dump("gaps.csv", lambda f: write_gaps(f, suite.records))
    if suite.config.record_timing:
        dump("timing.csv", lambda f: write_timing(f, suite))

    for method in methods:
        if family(method) != "sdp":
            path = out / f"{method}.svg"
            plot_series(path, method, suite.by_method(method))
            written.append(path)
    programs = [mid for mid in methods if family(mid) == "sdp"]
    if programs:
        plot_programs(out / "sdp.svg", suite.records, programs)
        written.append(out / "sdp.svg")
    logger.info("wrote %d files to %s", len(written), out)
    return written


# SECTION Reading results back

def read_series(path: Path, method: str) -> list[RunRecord]:
    """Rebuild records (without status) from a per-method CSV."""
    by_id: dict[int, RunRecord] = {}
    with path.open(newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != SERIES_HEADER:
            raise ConfigError(f"{path}: not a residual series file")
        for row in reader:
            sid = int(row[0])
            rec = by_id.setdefault(sid, RunRecord(sid, method))
            rec.points.append(float(row[1]))
            rec.residual_K.append(float(row[2]))
            rec.residual_P.append(float(row[3]))
            rec.wall_ns.append(int(row[4]))
    return [by_id[k] for k in sorted(by_id)]


def read_results(out: Path) -> list[RunRecord]:
    """All records of a finished run, with statuses when present."""
    if not out.is_dir():
        raise ConfigError(f"no results directory {out}")
    records: list[RunRecord] = []
    for method in METHODS:
        path = out / f"{method}.csv"
        if path.exists():
            records.extend(read_series(path, method))

    status = out / "status.csv"
    if status.exists():
        index = {(r.system_id, r.method): r for r in records}
        with status.open(newline="") as f:
            for row in csv.DictReader(f):
                key = (int(row["system_id"]), row["method"])
                rec = index.get(key)
                if rec is None:
                    rec = RunRecord(*key)
                    records.append(rec)
                rec.status = row["status"]
                rec.value = float(row["value"])
    if not records:
        raise ConfigError(f"{out} holds no benchmark results")
    return records


def compare(out: Path) -> str:
    """Text report of final residuals and CL/IRL gaps of a finished run."""
    records = read_results(out)
    present = [m for m in METHODS if any(r.method == m for r in records)]
    width = max(len(m) for m in present)
    lines = [f"{'method':<{width}}  {'runs':>4}  {'failed':>6}  "
             f"{'mean':>10}  {'median':>10}  {'q1':>10}  {'q3':>10}"]
    for method in present:
        s = summarize(records, method)
        lines.append(f"{method:<{width}}  {s.runs:>4}  {s.failed:>6}  "
                     f"{s.mean:>10.3e}  {s.median:>10.3e}  "
                     f"{s.q1:>10.3e}  {s.q3:>10.3e}")
    lines.append("")
    for fam in ("pi", "vi", "flow", "ricflow"):
        a, b = f"{fam}-cl", f"{fam}-irl"
        if a in present and b in present:
            lines.append(f"max per-iteration gap {a} vs {b}: "
                         f"{iteration_gap(records, a, b):.3e}")
    gaps = value_gap(records)
    if gaps:
        lines.append(f"cl1 vs cl2 value gap: mean "
                     f"{np.mean([g for _, g in gaps]):.3e}, max "
                     f"{max(g for _, g in gaps):.3e}")
    return "\n".join(lines) + "\n"

# !SECTION
