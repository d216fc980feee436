//! Generated matplotlib script over the emitted CSVs.

use crate::runner::RunSummary;
use crate::spec::{ExperimentSpec, SweepKind};

/// Python source plotting every run CSV in the output directory. Layouts:
/// adaptive runs plot iteration against `e_rel` (and `J`), the `J` sweep plots
/// `J` against `e_app`, the `α` sweep plots `α` against `e_app`, and the rate
/// sweep plots `δ` against the error.
pub fn plot_script(spec: &ExperimentSpec, runs: &[RunSummary]) -> String {
    let (x, ys, logx, title) = match spec.sweep {
        SweepKind::Adaptive => ("k", vec!["e_rel", "J"], false, "adaptive EKI"),
        SweepKind::FixedAlphaVaryJ => ("J", vec!["e_app"], true, "fixed alpha, varying J"),
        SweepKind::FixedJVaryAlpha => ("alpha", vec!["e_app"], true, "fixed J, varying alpha"),
        SweepKind::RateVsDelta => ("delta", vec!["error"], true, "error vs noise level"),
    };
    let files: Vec<String> = runs
        .iter()
        .map(|r| format!("    ({:?}, {:?}, {}),", r.file, r.backend, r.seed))
        .collect();
    let panels: Vec<String> = ys.iter().map(|y| format!("{y:?}")).collect();
    format!(
        r#"#!/usr/bin/env python3
# Generated by eki. Run from this directory: python3 plot.py
import csv
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

HERE = os.path.dirname(os.path.abspath(__file__))
RUNS = [
{files}
]
X = {x:?}
PANELS = [{panels}]
LOGX = {logx}


def read(name):
    with open(os.path.join(HERE, name), newline="") as fh:
        rows = list(csv.DictReader(fh))
    return rows


def value(row, key):
    v = row.get(key, "")
    return float(v) if v not in ("", None) else float("nan")


fig, axes = plt.subplots(1, len(PANELS), figsize=(6 * len(PANELS), 4.5), squeeze=False)
for ax, y in zip(axes[0], PANELS):
    for name, backend, seed in RUNS:
        rows = read(name)
        xs = [value(r, X) for r in rows]
        ys = [value(r, y) for r in rows]
        ax.plot(xs, ys, marker="o", ms=3, label=f"{{backend}} (seed {{seed}})")
    if LOGX:
        ax.set_xscale("log")
    if y != "J":
        ax.set_yscale("log")
    ax.set_xlabel(X)
    ax.set_ylabel(y)
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(fontsize=7)
fig.suptitle({title:?})
fig.tight_layout()
fig.savefig(os.path.join(HERE, "figure.png"), dpi=150)
print("wrote", os.path.join(HERE, "figure.png"))
"#,
        files = files.join("\n"),
        logx = if logx { "True" } else { "False" },
        panels = panels.join(", "),
    )
}
