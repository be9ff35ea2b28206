"""File formats: study CSV input, long-format results, figure panel files.

Numbers are written with ``%.12g``; non-finite values use the tokens
``inf`` / ``-inf`` and ``na``.
"""

from __future__ import annotations

import csv
import io
import math
from collections import defaultdict
from pathlib import Path

from .errors import ValidationError
from .sim import MU_CI_METHODS, MU_METHODS, TAU2_CI_METHODS, TAU2_METHODS, AggregateMetrics
from .study import StudySummary

DATASET_COLUMNS = ("study_id", "n_t", "mean_t", "sd_t", "n_c", "mean_c", "sd_c")
RESULT_COLUMNS = ("K", "n_pattern", "q", "sigma2_c", "sigma2_t", "tau2", "mu", "method", "metric", "value", "mc_se")
METRIC_ORDER = ("bias_tau2", "cov_tau2", "bias_mu", "mse_mu", "cov_mu", "width", "mse_ratio", "nonconverged")


class ParseError(ValidationError):
    """Malformed input file; ``line`` and ``column`` are 1-based."""

    def __init__(self, message, line=None, column=None):
        where = f"line {line}" + (f", column {column}" if column is not None else "") if line else ""
        super().__init__(f"{where}: {message}" if where else message)
        self.line = line
        self.column = column


def fmt(x) -> str:
    if isinstance(x, int):
        return str(x)
    x = float(x)
    if math.isnan(x):
        return "na"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return format(x, ".12g")


def parse_num(tok: str) -> float:
    tok = tok.strip()
    if tok == "na":
        return math.nan
    return float(tok)


# ---------------------------------------------------------------------------
# Dataset input
# ---------------------------------------------------------------------------


def read_dataset(path) -> tuple[list[str], list[StudySummary]]:
    """Read the study CSV; standard deviations become variances."""
    text = Path(path).read_text(encoding="utf-8")
    return parse_dataset(text)


def parse_dataset(text: str) -> tuple[list[str], list[StudySummary]]:
    rows = list(csv.reader(io.StringIO(text)))
    rows = [(i + 1, r) for i, r in enumerate(rows) if any(c.strip() for c in r)]
    if not rows:
        raise ParseError("empty dataset file")
    line, header = rows[0]
    header = [h.strip() for h in header]
    if tuple(header) != DATASET_COLUMNS:
        raise ParseError(f"header must be {','.join(DATASET_COLUMNS)}", line=line)
    ids, studies = [], []
    for line, r in rows[1:]:
        if len(r) != len(DATASET_COLUMNS):
            raise ParseError(f"expected {len(DATASET_COLUMNS)} fields, got {len(r)}", line=line)
        vals = {}
        for col, (name, tok) in enumerate(zip(DATASET_COLUMNS, r), start=1):
            if name == "study_id":
                continue
            try:
                v = float(tok)
            except ValueError:
                raise ParseError(f"{name}: cannot parse {tok.strip()!r} as a number", line=line, column=col) from None
            if not math.isfinite(v):
                raise ParseError(f"{name}: value must be finite", line=line, column=col)
            if name.startswith("sd_") and v <= 0:
                raise ParseError(f"{name}: standard deviation must be positive", line=line, column=col)
            if name.startswith("n_"):
                if not v.is_integer():
                    raise ParseError(f"{name}: must be an integer", line=line, column=col)
                v = int(v)
            vals[name] = v
        try:
            studies.append(StudySummary(vals["n_t"], vals["mean_t"], vals["sd_t"] ** 2,
                                        vals["n_c"], vals["mean_c"], vals["sd_c"] ** 2))
        except ValidationError as exc:
            col = DATASET_COLUMNS.index(exc.field.replace("var", "sd")) + 1 if exc.field else None
            raise ParseError(str(exc), line=line, column=col) from None
        ids.append(r[0].strip())
    if len(studies) < 2:
        raise ParseError(f"insufficient studies: got {len(studies)}, need at least 2")
    return ids, studies


# ---------------------------------------------------------------------------
# Results file
# ---------------------------------------------------------------------------


def _method_key(tag: str):
    fam, m = tag.split(".", 1)
    order = {"tau2": TAU2_METHODS, "tau2ci": TAU2_CI_METHODS, "mu": MU_METHODS, "muci": MU_CI_METHODS}
    fams = ("tau2", "tau2ci", "mu", "muci")
    names = order[fam]
    return (fams.index(fam), names.index(m) if m in names else len(names), m)


def result_rows(metrics: list[AggregateMetrics]) -> list[list[str]]:
    out = []
    for agg in sorted(metrics, key=lambda a: a.scenario.sort_key()):
        sc = agg.scenario
        keys = [fmt(sc.K), sc.n_label, fmt(sc.q), fmt(sc.sigma2_c), fmt(sc.sigma2_t), fmt(sc.tau2), fmt(sc.mu)]
        items = sorted(agg.rows.items(), key=lambda kv: (_method_key(kv[0][0]), METRIC_ORDER.index(kv[0][1])))
        for (tag, metric), (value, se) in items:
            out.append(keys + [tag, metric, fmt(value), fmt(se)])
    return out


def write_results(metrics: list[AggregateMetrics], dest) -> None:
    """Write the long-format results CSV to a path or text stream."""
    rows = result_rows(metrics)
    if hasattr(dest, "write"):
        _write_csv(dest, RESULT_COLUMNS, rows)
        return
    with open(dest, "w", encoding="utf-8", newline="") as fh:
        _write_csv(fh, RESULT_COLUMNS, rows)


def _write_csv(fh, header, rows):
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)


def read_results(path) -> list[dict]:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty results file") from None
        if tuple(header) != RESULT_COLUMNS:
            raise ParseError(f"header must be {','.join(RESULT_COLUMNS)}", line=1)
        out = []
        for line, r in enumerate(reader, start=2):
            if len(r) != len(RESULT_COLUMNS):
                raise ParseError(f"expected {len(RESULT_COLUMNS)} fields, got {len(r)}", line=line)
            row = dict(zip(RESULT_COLUMNS, r))
            try:
                row["K"] = int(row["K"])
                for k in ("q", "sigma2_c", "sigma2_t", "tau2", "mu", "value", "mc_se"):
                    row[k] = parse_num(row[k])
            except ValueError as exc:
                raise ParseError(str(exc), line=line) from None
            out.append(row)
    return out


# ---------------------------------------------------------------------------
# Figure panels
# ---------------------------------------------------------------------------

_COARSE = [k / 10 for k in range(11)]
_FINE = [k / 100 for k in range(11)]


def _family(metric, fam, methods, sigma2_c, grid):
    return {"metric": metric, "family": fam, "methods": methods, "sigma2_c": sigma2_c, "grid": grid}


FAMILIES = {
    "A1": _family("bias_tau2", "tau2", TAU2_METHODS, 1.0, _COARSE),
    "A2": _family("cov_tau2", "tau2ci", TAU2_CI_METHODS, 1.0, _COARSE),
    "A3": _family("bias_tau2", "tau2", TAU2_METHODS, 1.0, _FINE),
    "A4": _family("cov_tau2", "tau2ci", TAU2_CI_METHODS, 1.0, _FINE),
    "A5": _family("bias_tau2", "tau2", TAU2_METHODS, 10.0, _COARSE),
    "A6": _family("cov_tau2", "tau2ci", TAU2_CI_METHODS, 10.0, _COARSE),
    "B1": _family("bias_mu", "mu", MU_METHODS, 1.0, _COARSE),
    "B2": _family("cov_mu", "muci", MU_CI_METHODS, 1.0, _COARSE),
    "B3": _family("bias_mu", "mu", MU_METHODS, 1.0, _FINE),
    "B4": _family("cov_mu", "muci", MU_CI_METHODS, 1.0, _FINE),
    "B5": _family("bias_mu", "mu", MU_METHODS, 10.0, _COARSE),
    "B6": _family("cov_mu", "muci", MU_CI_METHODS, 10.0, _COARSE),
}
RATIO_COLUMNS = ("SSW/IV-MP", "SSW/IV-WT")


def _on_grid(t, grid):
    return any(math.isclose(t, g, abs_tol=1e-9) for g in grid)


def _in_family(row, spec):
    return math.isclose(row["sigma2_c"], spec["sigma2_c"]) and _on_grid(row["tau2"], spec["grid"])


def available_panels(rows, family=None) -> list[tuple[str, str, int]]:
    fams = [family] if family else list(FAMILIES)
    out = set()
    for fam in fams:
        spec = FAMILIES[fam]
        for r in rows:
            if r["metric"] == spec["metric"] and _in_family(r, spec):
                out.add((fam, r["n_pattern"], r["K"]))
    return sorted(out, key=lambda p: (p[0], p[2], p[1]))


def figure_panels(rows, family: str, n: str, K: int) -> dict:
    """Pivot results into panel tables keyed by (q, sigma2_t, mu).

    Each table is ``(header, rows)`` with x = tau2 and one column per method;
    bias-of-mu families also yield the MSE-ratio table under key
    ``(q, sigma2_t, mu, "mse_ratio")``.
    """
    if family not in FAMILIES:
        raise ValidationError(f"unknown figure family {family!r}; choose from {', '.join(FAMILIES)}")
    spec = FAMILIES[family]
    sel = [r for r in rows if r["n_pattern"] == str(n) and r["K"] == int(K) and _in_family(r, spec)]
    cells = defaultdict(dict)
    ratios = defaultdict(dict)
    for r in sel:
        fam, m = r["method"].split(".", 1)
        key = (r["q"], r["sigma2_t"], r["mu"])
        if r["metric"] == spec["metric"] and fam == spec["family"] and m in spec["methods"]:
            cells[key].setdefault(r["tau2"], {})[m] = r["value"]
        elif spec["metric"] == "bias_mu" and r["metric"] == "mse_ratio" and m in RATIO_COLUMNS:
            ratios[key].setdefault(r["tau2"], {})[m] = r["value"]
    if not cells:
        avail = available_panels(rows, family)
        listing = ", ".join(f"{f} n={nn} K={k}" for f, nn, k in avail) or "none"
        raise ValidationError(f"no results for {family} n={n} K={K}; available panels: {listing}")
    out = {}
    for key, by_tau in cells.items():
        cols = list(spec["methods"])
        out[key] = (["tau2"] + cols, [[t] + [by_tau[t].get(c, math.nan) for c in cols] for t in sorted(by_tau)])
    for key, by_tau in ratios.items():
        cols = list(RATIO_COLUMNS)
        out[key + ("mse_ratio",)] = (["tau2"] + cols, [[t] + [by_tau[t].get(c, math.nan) for c in cols] for t in sorted(by_tau)])
    return out


def panel_filename(family, n, K, key) -> str:
    q, s2t, mu = key[:3]
    stem = f"{family}_n{n}_K{K}_q{fmt(q)}_s2t{fmt(s2t)}_mu{fmt(mu)}"
    return stem + ("_mse_ratio" if len(key) > 3 else "") + ".csv"


def write_figure_data(results_path, family: str, n: str, K: int, outdir) -> list[Path]:
    rows = read_results(results_path)
    panels = figure_panels(rows, family, n, K)
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    paths = []
    for key in sorted(panels, key=lambda k: (k[:3], len(k))):
        header, body = panels[key]
        p = outdir / panel_filename(family, n, K, key)
        with open(p, "w", encoding="utf-8", newline="") as fh:
            _write_csv(fh, header, [[fmt(v) for v in r] for r in body])
        paths.append(p)
    return paths
