"""Fit and report files: fit.json, school effect CSVs, SVG figures, report.md."""

from __future__ import annotations

import csv
import json
from itertools import combinations
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from .core import RESPONSES
from .posthoc import SchoolEffectSummary, StandardizedTable

LABELS = {"attainment": "Attainment", "log_absences": "Log Absences", "exclusions": "Exclusions"}
SCHOOL_EFFECT_FIELDS = ("school_id", "response", "mean", "sd", "lo", "hi", "rank", "significant")
CATERPILLAR_FIELDS = ("rank", "school_id", "mean", "lo", "hi", "significant")


def _f(x) -> float:
    return float(x)


def fit_record(meta: dict, chain, table: StandardizedTable, corr_u, corr_e,
               effects: SchoolEffectSummary) -> dict:
    """Flat dotted-key map of every reported quantity."""
    out = {f"meta.{k}": v for k, v in meta.items()}
    for (kind, a, b), s in chain.summaries().items():
        if kind == "beta":
            prefix = f"beta.{RESPONSES[a]}.{b}"
        else:
            prefix = f"{kind}.{a + 1}.{b + 1}"
        for stat, v in s.items():
            out[f"{prefix}.{stat}"] = _f(v)
    for r, resp in enumerate(RESPONSES):
        for name, est, sd in zip(table.names[r], table.coefficients[r], table.coefficient_sd[r]):
            out[f"std.beta.{resp}.{name}.est"] = _f(est)
            out[f"std.beta.{resp}.{name}.sd"] = _f(sd)
        out[f"std.{resp}.school_var"] = _f(table.school_var[r])
        out[f"std.{resp}.school_var_sd"] = _f(table.school_var_sd[r])
        out[f"std.{resp}.student_var"] = _f(table.student_var[r])
        out[f"std.{resp}.student_var_sd"] = _f(table.student_var_sd[r])
        out[f"std.{resp}.D"] = _f(table.D[r])
        out[f"std.{resp}.fixed_var"] = _f(table.fixed_var[r])
        out[f"vpc.{resp}"] = _f(table.vpc[r])
        out[f"r2.{resp}"] = _f(table.r_squared[r])
        out[f"school_effects.{resp}.prop_significant"] = _f(effects.proportion_significant[r])
        out[f"covariates.{resp}"] = list(table.names[r])
    for r, s in combinations(range(3), 2):
        out[f"corr_u.{r + 1}.{s + 1}"] = _f(corr_u[r, s])
        out[f"corr_e.{r + 1}.{s + 1}"] = _f(corr_e[r, s])
    return out


def write_json(path, record: dict):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(record, fh, indent=1, sort_keys=True)
        fh.write("\n")


def read_json(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def write_school_effects(path, effects: SchoolEffectSummary):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SCHOOL_EFFECT_FIELDS)
        for r, resp in enumerate(RESPONSES):
            for j, sid in enumerate(effects.school_ids):
                w.writerow([sid, resp, repr(_f(effects.mean[j, r])), repr(_f(effects.sd[j, r])),
                            repr(_f(effects.lo[j, r])), repr(_f(effects.hi[j, r])),
                            int(effects.rank[j, r]), int(effects.significant[j, r])])


def read_school_effects(path, interval: str = "quantile") -> SchoolEffectSummary:
    rows = {resp: [] for resp in RESPONSES}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != SCHOOL_EFFECT_FIELDS:
            raise ValueError(f"{path}: unexpected header")
        for row in reader:
            rows[row["response"]].append(row)
    ids = tuple(row["school_id"] for row in rows[RESPONSES[0]])
    for resp in RESPONSES:
        if tuple(row["school_id"] for row in rows[resp]) != ids:
            raise ValueError(f"{path}: school lists differ between responses")

    def col(name, cast):
        return np.array([[cast(rows[resp][j][name]) for resp in RESPONSES] for j in range(len(ids))])

    return SchoolEffectSummary(
        school_ids=ids,
        mean=col("mean", float),
        sd=col("sd", float),
        lo=col("lo", float),
        hi=col("hi", float),
        rank=col("rank", int),
        significant=col("significant", int).astype(bool),
        interval=interval,
    )


def write_diagnostics(path, per_chain: list):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["chain", "parameter", "ess", "geweke_z", "lag1_autocorr", "degenerate"])
        for c, diags in enumerate(per_chain, start=1):
            for d in diags:
                w.writerow([c, d.name, repr(d.ess), repr(d.geweke_z), repr(d.lag1), int(d.degenerate)])


def write_chains(path, chain):
    """Stored draws of coefficients and covariance entries, one row per draw."""
    cols, names = [], []
    for k, (r, name) in enumerate(chain.beta_names):
        names.append(f"beta.{RESPONSES[r]}.{name}")
        cols.append(chain.beta[:, k])
    for label, arr in (("omega_u", chain.omega_u), ("sigma_e", chain.sigma_e)):
        for r in range(3):
            for s in range(r, 3):
                names.append(f"{label}.{r + 1}.{s + 1}")
                cols.append(arr[:, r, s])
    data = np.column_stack(cols)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["draw"] + names)
        for k, row in enumerate(data):
            w.writerow([k + 1] + [repr(float(v)) for v in row])


# ------------------------------------------------------------------- SVG

W, H = 640, 360
ML, MR, MT, MB = 60, 20, 30, 45


def _scale(lo, hi, a, b):
    if hi == lo:
        lo, hi = lo - 1.0, hi + 1.0
    return lambda v: a + (v - lo) * (b - a) / (hi - lo)


def _ticks(lo, hi, k=5):
    return [lo + i * (hi - lo) / (k - 1) for i in range(k)]


def _axes(sx, sy, xlo, xhi, ylo, yhi, xlabel, ylabel, title):
    parts = [
        f'<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>',
        f'<text x="{W / 2:.1f}" y="18" text-anchor="middle" font-size="13">{escape(title)}</text>',
        f'<line x1="{ML}" y1="{H - MB}" x2="{W - MR}" y2="{H - MB}" stroke="black"/>',
        f'<line x1="{ML}" y1="{MT}" x2="{ML}" y2="{H - MB}" stroke="black"/>',
        f'<text x="{W / 2:.1f}" y="{H - 8}" text-anchor="middle" font-size="11">{escape(xlabel)}</text>',
        f'<text x="14" y="{H / 2:.1f}" text-anchor="middle" font-size="11" '
        f'transform="rotate(-90 14 {H / 2:.1f})">{escape(ylabel)}</text>',
    ]
    for t in _ticks(ylo, yhi):
        y = sy(t)
        parts.append(f'<line x1="{ML - 4}" y1="{y:.2f}" x2="{ML}" y2="{y:.2f}" stroke="black"/>')
        parts.append(f'<text x="{ML - 6}" y="{y + 3:.2f}" text-anchor="end" font-size="9">{t:.3g}</text>')
    for t in _ticks(xlo, xhi):
        x = sx(t)
        parts.append(f'<line x1="{x:.2f}" y1="{H - MB}" x2="{x:.2f}" y2="{H - MB + 4}" stroke="black"/>')
        parts.append(f'<text x="{x:.2f}" y="{H - MB + 14}" text-anchor="middle" font-size="9">{t:.3g}</text>')
    return parts


def _svg(parts) -> str:
    head = f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">'
    return "\n".join([head, *parts, "</svg>", ""])


def caterpillar_svg(rows, title) -> str:
    """Schools in rank order with interval bars; significant ones in red."""
    n = len(rows)
    ylo = min(min(r["lo"] for r in rows), 0.0)
    yhi = max(max(r["hi"] for r in rows), 0.0)
    sx = _scale(0.5, n + 0.5, ML, W - MR)
    sy = _scale(ylo, yhi, H - MB, MT)
    parts = _axes(sx, sy, 1, n, ylo, yhi, "Rank", "School effect", title)
    parts.append(f'<line x1="{ML}" y1="{sy(0):.2f}" x2="{W - MR}" y2="{sy(0):.2f}" '
                 'stroke="grey" stroke-dasharray="4 3"/>')
    for r in rows:
        x = sx(r["rank"])
        colour = "firebrick" if r["significant"] else "steelblue"
        parts.append(f'<line x1="{x:.2f}" y1="{sy(r["lo"]):.2f}" x2="{x:.2f}" y2="{sy(r["hi"]):.2f}" '
                     f'stroke="{colour}" stroke-width="1"/>')
        parts.append(f'<circle cx="{x:.2f}" cy="{sy(r["mean"]):.2f}" r="2" fill="{colour}"/>')
    return _svg(parts)


def scatter_svg(xs, ys, xlabel, ylabel, annotation, title) -> str:
    xlo, xhi = float(np.min(xs)), float(np.max(xs))
    ylo, yhi = float(np.min(ys)), float(np.max(ys))
    sx = _scale(xlo, xhi, ML + 5, W - MR - 5)
    sy = _scale(ylo, yhi, H - MB - 5, MT + 5)
    parts = _axes(sx, sy, xlo, xhi, ylo, yhi, xlabel, ylabel, title)
    parts.append(f'<text x="{W - MR - 4}" y="{MT + 12}" text-anchor="end" font-size="11">{escape(annotation)}</text>')
    for x, y in zip(xs, ys):
        parts.append(f'<circle cx="{sx(x):.2f}" cy="{sy(y):.2f}" r="2.5" fill="steelblue" fill-opacity="0.7"/>')
    return _svg(parts)


# ------------------------------------------------------------ report files


def caterpillar_rows(effects: SchoolEffectSummary, r: int) -> list[dict]:
    order = np.argsort(effects.rank[:, r], kind="stable")
    return [
        {
            "rank": int(effects.rank[j, r]),
            "school_id": effects.school_ids[j],
            "mean": float(effects.mean[j, r]),
            "lo": float(effects.lo[j, r]),
            "hi": float(effects.hi[j, r]),
            "significant": int(effects.significant[j, r]),
        }
        for j in order
    ]


def read_caterpillar(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [
            {"rank": int(r["rank"]), "school_id": r["school_id"], "mean": float(r["mean"]),
             "lo": float(r["lo"]), "hi": float(r["hi"]), "significant": int(r["significant"])}
            for r in csv.DictReader(fh)
        ]


def read_scatter(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        return [dict(zip(header, [row[0], float(row[1]), float(row[2])])) for row in reader]


def _write_rows(path, fields, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(fields)
        for row in rows:
            w.writerow([repr(row[f]) if isinstance(row[f], float) else row[f] for f in fields])


def _fmt_est(est, sd=None, dp=3):
    s = f"{est:.{dp}f}"
    if sd is None:
        return s
    return s + (f" ({sd:.{dp}f})" if sd >= 0.5 * 10**-dp else f" (<{10**-dp:.{dp}f})")


def _coef_table(fit, standardized: bool) -> list[str]:
    names = [fit[f"covariates.{resp}"] for resp in RESPONSES]
    rows = []
    header = "| | " + " | ".join(LABELS[r] for r in RESPONSES) + " |"
    rows += [header, "|---|" + "---|" * len(RESPONSES), "| *Fixed* | | | |"]
    all_names = list(dict.fromkeys(n for ns in names for n in ns))
    for name in all_names:
        cells = []
        for resp in RESPONSES:
            if standardized:
                k = f"std.beta.{resp}.{name}"
                cells.append(_fmt_est(fit[k + ".est"], fit[k + ".sd"]) if k + ".est" in fit else "")
            else:
                k = f"beta.{resp}.{name}"
                cells.append(_fmt_est(fit[k + ".mean"], fit[k + ".sd"]) if k + ".mean" in fit else "")
        rows.append(f"| {name.replace('_', ' ').capitalize()} | " + " | ".join(cells) + " |")
    rows.append("| *Random* | | | |")
    for label, key, okey in (("School variance", "school_var", "omega_u"), ("Student variance", "student_var", "sigma_e")):
        cells = []
        for r, resp in enumerate(RESPONSES):
            fixed = okey == "sigma_e" and r == 2
            if standardized:
                sd = None if fixed else fit[f"std.{resp}.{key}_sd"]
                cells.append(_fmt_est(fit[f"std.{resp}.{key}"], sd) + (" ." if fixed else ""))
            else:
                k = f"{okey}.{r + 1}.{r + 1}"
                sd = None if fixed else fit[k + ".sd"]
                cells.append(_fmt_est(fit[k + ".mean"], sd) + (" ." if fixed else ""))
        rows.append(f"| {label} | " + " | ".join(cells) + " |")
    if standardized:
        rows.append("| *Statistics* | | | |")
        rows.append("| VPC | " + " | ".join(f"{100 * fit[f'vpc.{r}']:.0f}%" for r in RESPONSES) + " |")
        rows.append("| R-Squared | " + " | ".join(f"{fit[f'r2.{r}']:.2f}" for r in RESPONSES) + " |")
    return rows


def _corr_table(fit, prefix, level) -> list[str]:
    rows = [f"| *{level}* | " + " | ".join(LABELS[r] for r in RESPONSES) + " |", "|---|---|---|---|"]
    for r, resp in enumerate(RESPONSES):
        cells = []
        for s in range(3):
            if s < r:
                cells.append(f"{fit[f'{prefix}.{s + 1}.{r + 1}']:.3f}")
            elif s == r:
                cells.append("1")
            else:
                cells.append("")
        rows.append(f"| {LABELS[resp]} | " + " | ".join(cells) + " |")
    return rows


def report_markdown(fit: dict, effects: SchoolEffectSummary) -> str:
    preset = fit.get("meta.preset", "custom")
    lines = [
        f"# School value-added fit: preset `{preset}`",
        "",
        f"{fit.get('meta.N')} students in {fit.get('meta.J')} schools; "
        f"burn-in {fit.get('meta.burn_in')}, {fit.get('meta.iterations')} iterations, "
        f"thin {fit.get('meta.thin')}, {fit.get('meta.chains', 1)} chain(s), seed {fit.get('meta.seed')}.",
        "",
        "## Standardized coefficients and variance components",
        "",
        "Estimates on a common response scale (posterior mean, posterior SD in brackets).",
        "",
        *_coef_table(fit, standardized=True),
        "",
        "## Unstandardized coefficients and variance components",
        "",
        *_coef_table(fit, standardized=False),
        "",
        "## Correlations between outcomes",
        "",
        *_corr_table(fit, "corr_u", "Level 2: School"),
        "",
        *_corr_table(fit, "corr_e", "Level 1: Student"),
        "",
        "## School effects",
        "",
        f"Intervals: {'2.5%/97.5% posterior quantiles' if effects.interval == 'quantile' else 'mean +/- 1.96 SD'}.",
        "",
    ]
    J = len(effects.school_ids)
    for r, resp in enumerate(RESPONSES):
        k = int(effects.significant[:, r].sum())
        lines.append(f"- {LABELS[resp]}: {100 * k / J:.1f}% of schools significantly different from average ({k} of {J})")
    lines.append("")
    lines.append("Figures: " + ", ".join(f"`caterpillar_{r + 1}.svg`" for r in range(3)) + "; "
                 + ", ".join(f"`scatter_{r + 1}_{s + 1}.svg`" for r, s in combinations(range(3), 2)) + ".")
    lines.append("")
    return "\n".join(lines)


def write_report(fit: dict, effects: SchoolEffectSummary, outdir) -> list[Path]:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    written = []
    for r, resp in enumerate(RESPONSES):
        rows = caterpillar_rows(effects, r)
        csv_path = outdir / f"caterpillar_{r + 1}.csv"
        _write_rows(csv_path, CATERPILLAR_FIELDS, rows)
        svg_path = outdir / f"caterpillar_{r + 1}.svg"
        svg_path.write_text(caterpillar_svg(rows, f"{LABELS[resp]}: school effects in rank order"), encoding="utf-8")
        written += [csv_path, svg_path]
    for r, s in combinations(range(3), 2):
        a, b = RESPONSES[r], RESPONSES[s]
        fields = ("school_id", f"mean_{r + 1}", f"mean_{s + 1}")
        rows = [{"school_id": sid, fields[1]: float(effects.mean[j, r]), fields[2]: float(effects.mean[j, s])}
                for j, sid in enumerate(effects.school_ids)]
        csv_path = outdir / f"scatter_{r + 1}_{s + 1}.csv"
        _write_rows(csv_path, fields, rows)
        rho = fit[f"corr_u.{r + 1}.{s + 1}"]
        annotation = f"rho_u = {rho:.2f}"
        svg = scatter_svg(effects.mean[:, r], effects.mean[:, s], LABELS[a], LABELS[b], annotation,
                          f"School effects: {LABELS[a]} vs {LABELS[b]}")
        svg_path = outdir / f"scatter_{r + 1}_{s + 1}.svg"
        svg_path.write_text(svg, encoding="utf-8")
        written += [csv_path, svg_path]
    md = outdir / "report.md"
    md.write_text(report_markdown(fit, effects), encoding="utf-8")
    written.append(md)
    return written
