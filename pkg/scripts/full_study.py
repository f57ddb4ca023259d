"""End-to-end study through the CLI: catalogues, column runs, picking, fits and statistics.

    python scripts/full_study.py [--config scripts/desk_study.txt] [--out study_out] [--quick]

--quick shrinks every stage to a few seconds for a smoke run.
"""

import argparse
import os
import sys

from click.testing import CliRunner

from tanglepick.cli import main


def step(*args) -> None:
    print("$ tanglepick " + " ".join(map(str, args)))
    res = CliRunner().invoke(main, [str(a) for a in args])
    print(res.output, end="")
    if res.exit_code != 0:
        sys.exit(res.exit_code)


if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--config", default=os.path.join(os.path.dirname(__file__), "desk_study.txt"))
    ap.add_argument("--out", default="study_out")
    ap.add_argument("--quick", action="store_true")
    a = ap.parse_args()
    cfg = a.config
    if a.quick:
        cfg = os.path.join(a.out, "quick.txt")
        os.makedirs(a.out, exist_ok=True)
        with open(cfg, "w") as fh:
            fh.write("iterations = 2\ngrain_count = 30\nsegments = 30\nshake_duration_s = 0.05\n")
    out = a.out
    step("gen", "--config", cfg, "--out", out)
    step("pack", "--config", cfg, "--seed", 0, "--out", os.path.join(out, "pack"))
    step("integrity", "--config", cfg, "--seed", 0, "--out", os.path.join(out, "integrity"))
    run_dir = os.path.join(out, "run")
    step("pick", "--config", cfg, "--seed", 0, "--out", run_dir)
    step("replay", run_dir)
    data = os.path.join(run_dir, "dataset.csv")
    step("report", data, "--out", os.path.join(out, "report"))
    step("dominance", data, "--out", os.path.join(out, "dominance"))
    for c in ("nonspiky", "spiky"):
        fit_dir = os.path.join(out, f"fit_{c}")
        step("fit", data, "--cohort", c, "--out", fit_dir)
        step("predict", os.path.join(fit_dir, "model.txt"), data, "--out", fit_dir)
