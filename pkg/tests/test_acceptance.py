"""Acceptance run: one check per criterion, each reporting a single PASS/FAIL line.

Run under pytest (lines are printed in the "acceptance" summary section) or
directly with ``python tests/test_acceptance.py [n ...]``.
Criteria 6-8 run the simulator at desk scale and take several minutes each.
"""

import math
import os
import sys
import tempfile
import time

import numpy as np
import pytest
import scipy.stats as ss

sys.path.insert(0, os.path.dirname(__file__))

from conftest import ACCEPTANCE_LINES  # noqa: E402
from test_geometry import random_capsule, sampled_distance  # noqa: E402

from tanglepick import dataio, model, stats  # noqa: E402
from tanglepick.config import Config, dump_config, parse_config  # noqa: E402
from tanglepick.entangle import escape_oracle, interlock_test  # noqa: E402
from tanglepick.fixtures import interlock_corpus  # noqa: E402
from tanglepick.geometry import bending_stiffness, capsule_closest_distance  # noqa: E402
from tanglepick.pick import Protocol, picked_units  # noqa: E402
from tanglepick.simulate import integrity, packing_fraction  # noqa: E402
from tanglepick.study import medians_by_type, run_integrity, run_study  # noqa: E402


def rel_ok(got, want, rel=1e-9):
    return abs(got - want) <= rel * max(abs(want), 1e-300) if want != 0 else abs(got) <= 1e-300


# ---------------------------------------------------------------------------
# criteria
# ---------------------------------------------------------------------------


def criterion_1():
    cases = {
        "integrity": [((100.0, 5.0), 0.95), ((80.0, 20.0), 0.75), ((50.0, 0.0), 1.0), ((10.0, 10.0), 0.0),
                      ((3.0, 1.0), 2.0 / 3.0), ((64.0, 16.0), 0.75)],
        "packing_fraction": [((50.0, 100.0), 0.5), ((0.0, 7.0), 0.0), ((1.0, 3.0), 1.0 / 3.0),
                             ((math.pi, 4 * math.pi), 0.25), ((12.5, 20.0), 0.625)],
        "bending_stiffness": [((2.0, 1.5), 3.0), ((3.2, 0.0267), 0.08544), ((0.5, 0.5), 0.25), ((1.0, 7.0), 7.0),
                              ((2.5, 0.004), 0.01)],
        "picked_units": [((0.4, 0.04), 10), ((0.44, 0.04), 11), ((0.0, 0.04), 0), ((9.0, 0.04), 100),
                         ((1.0, 0.3), 3), ((0.0144 * 7, 0.0144), 7)],
        "nmse": [(([0, 2], [0, 0], 2.0), 1.0), (([0, 2], [0, 0], 4.0), 0.5), (([1, 1, 1], [1, 1, 1], 1.0), 0.0),
                 (([3], [0], 3.0), 3.0), (([1, 2, 3, 4], [2, 2, 2, 2], 27.44), 1.5 / 27.44)],
        "mcfadden_r2": [((-50.0, -100.0), 0.5), ((-20.6, -100.0), 0.794), ((-100.0, -100.0), 0.0),
                        ((-1.0, -4.0), 0.75), ((-30.0, -20.0), -0.5)],
        "normalized_std": [([1, 2, 3], 0.5), ([2, 4], math.sqrt(2) / 3), ([10, 10, 10], 0.0),
                           ([1, 3], math.sqrt(2) / 2), ([5, 7, 9], 2.0 / 7.0)],
    }
    fns = {"integrity": integrity, "packing_fraction": packing_fraction, "bending_stiffness": bending_stiffness,
           "picked_units": picked_units, "nmse": model.nmse, "mcfadden_r2": stats.mcfadden_r2,
           "normalized_std": lambda x: stats.normalized_std(x)}
    bad = []
    for name, rows in cases.items():
        for args, want in rows:
            got = fns[name](args) if name == "normalized_std" else fns[name](*args)
            if not rel_ok(got, want):
                bad.append(f"{name}{args}={got!r}, want {want!r}")
    n = sum(len(v) for v in cases.values())
    return not bad, f"{n - len(bad)}/{n} hand values within 1e-9 relative" + (f"; {bad}" if bad else "")


def criterion_2():
    got = stats.relative_importance({"length": 0.591, "thickness": 0.130, "spikes": 0.072}, 0.794)
    want = {"length": 74.41, "thickness": 16.45, "spikes": 9.14}
    err = {k: abs(got[k] - want[k]) for k in want}
    detail = ", ".join(f"{k} {got[k]:.2f}% vs {want[k]:.2f}% (off {err[k]:.3f} pp)" for k in want)
    return max(err.values()) <= 0.05, detail


def criterion_3():
    counts = {}
    worst = {}
    for spiky, gen in ((False, model.SYNTH_NONSPIKY), (True, model.SYNTH_SPIKY)):
        c = model.synthetic_cohort(gen, np.random.default_rng(303 + spiky))
        scores = [model.fit(c, spiky, split_seed=k).nmse_test for k in range(10)]
        counts[spiky] = sum(s <= 0.12 for s in scores)
        worst[spiky] = (min(scores), float(np.median(scores)))
    ok = all(v >= 9 for v in counts.values())
    detail = "; ".join(f"{'spiky' if k else 'non-spiky'}: {counts[k]}/10 splits with test NMSE <= 0.12 "
                       f"(min {worst[k][0]:.3f}, median {worst[k][1]:.3f})" for k in (False, True))
    return ok, detail


def criterion_4():
    inside = total = 0
    for trial in range(500):
        gen = model.SYNTH_SPIKY if trial % 2 else model.SYNTH_NONSPIKY
        c = model.synthetic_cohort(gen, np.random.default_rng(4000 + trial))
        tr, te = model.split(len(c), trial)
        post = model.bayes_fit(c.take(tr), gen)
        test = c.take(te)
        mean, sd = post.predictive(test.tau, test.lam)
        inside += int(np.sum(np.abs(test.y - mean) <= sd))
        total += len(test)
    pct = 100.0 * inside / total
    return abs(pct - 66.7) <= 5.0, f"{pct:.2f}% of {total} held-out points inside +-1 predictive std (target 66.7 +- 5)"


def criterion_5():
    rng = np.random.default_rng(20240601)
    worst_d = 0.0
    for _ in range(1000):
        a, b = random_capsule(rng), random_capsule(rng)
        worst_d = max(worst_d, abs(capsule_closest_distance(a, b).distance - sampled_distance(a, b)))
    rng = np.random.default_rng(55)
    worst_p = 0.0
    for _ in range(100):
        a = rng.normal(10, rng.uniform(0.5, 4), rng.integers(3, 40))
        b = rng.normal(11, rng.uniform(0.5, 4), rng.integers(3, 40))
        worst_p = max(worst_p, abs(stats.t_test_mean(a, b).p_value - ss.ttest_ind(a, b, equal_var=False).pvalue))
        # larger variance over smaller, upper tail doubled
        (v1, n1), (v2, n2) = sorted(((a.var(ddof=1), a.size), (b.var(ddof=1), b.size)), reverse=True)
        ref = min(1.0, 2.0 * ss.f.sf(v1 / v2, n1 - 1, n2 - 1))
        worst_p = max(worst_p, abs(stats.f_test_variance(a, b).p_value - ref))
    corpus = interlock_corpus()
    agree = sum(interlock_test(f.a, f.b, f.state).entangled == escape_oracle(f.a, f.b, f.state) for f in corpus)
    ok = worst_d <= 1e-3 and worst_p <= 1e-6 and agree >= 0.9 * len(corpus)
    return ok, (f"capsule distance max err {worst_d:.2e} mm over 1000 pairs; t/F p-value max err {worst_p:.2e}; "
                f"interlock vs oracle {agree}/{len(corpus)}")


def criterion_6():
    rows = run_integrity(Config(seeds=tuple(range(10)), segments=100, grain_types=("I", "V", "IV", "VII")))
    med = medians_by_type(rows)
    ok = med["V"] >= med["IV"] and med["V"] >= med["VII"] and med["V"] > med["I"] and med["I"] < 0.6
    return ok, "median integrity " + ", ".join(f"{k} {v:.3f}" for k, v in med.items()) + \
        f"; {sum(r.converged for r in rows)}/{len(rows)} runs settled"


def criterion_7():
    ds = run_study(Config(grid="full", seeds=tuple(range(10))))
    cells: dict[tuple, list[int]] = {}
    for r in ds:
        cells.setdefault((r.tau_mm, r.lambda_mm, r.spikes), []).append(r.picked_units)
    keys = sorted(cells)
    means = np.array([np.mean(cells[k]) for k in keys])
    parts, ok = [], True
    for axis, (name, sign) in enumerate((("tau", -1), ("lambda", 1), ("sigma", 1))):
        rho, p = ss.spearmanr([k[axis] for k in keys], means)
        good = bool(np.sign(rho) == sign and p < 0.05)
        ok &= good
        parts.append(f"{name} rho {rho:+.3f} p {p:.2g}")
    return ok, f"{len(ds)} records over {len(keys)} cells; " + "; ".join(parts)


GRAIN_COUNTS = (25, 50, 75, 100, 125, 150)
# mid-grid cell whose picks rise with grain count without saturating (chosen on seeds 100+, disjoint from these)
TREND_CFG = Config(grid="single", tau_mm=0.4, lambda_mm=60.0, spikes=0, seeds=tuple(range(10)))


def criterion_8():
    meds = []
    for g in GRAIN_COUNTS:
        meds.append(float(np.median([r.picked_units for r in run_study(TREND_CFG.with_overrides(grain_count=g))])))
    monotone = all(b >= a for a, b in zip(meds, meds[1:]))
    mag = [r.picked_units for r in run_study(TREND_CFG.with_overrides(grain_count=100))]
    grip = [r.picked_units for r in run_study(TREND_CFG.with_overrides(protocol=Protocol.GRIPPER.value))]
    ns_m, ns_g = stats.normalized_std(mag), stats.normalized_std(grip)
    return monotone and ns_m < ns_g, (
        "median units " + ", ".join(f"{g}:{m:g}" for g, m in zip(GRAIN_COUNTS, meds)) +
        f"; normalized std magnet {ns_m:.3f} vs gripper {ns_g:.3f}")


def criterion_9():
    cfg = Config(grid="single", iterations=3, grain_count=20, seeds=(11,))
    a, b = run_study(cfg), run_study(cfg)
    same_seed = dataio.emit(a) == dataio.emit(b)
    csv_rt = dataio.loads_dataset(dataio.emit(a)).records == a.records
    fit = model.fit(model.synthetic_cohort(model.SYNTH_SPIKY, np.random.default_rng(9)), True).params
    model_rt = model.loads_params(model.dumps_params(fit)) == fit
    cfg_rt = parse_config(dump_config(cfg)) == cfg
    with tempfile.TemporaryDirectory() as root:
        path = dataio.save_run(dataio.ExperimentRun("acc", cfg, a, dataio.Provenance.SIMULATED, dataio.now_utc()),
                               root)
        replay_ok = dataio.emit(dataio.replay(path)) == dataio.emit(a)
    checks = {"replay": replay_ok, "model file": model_rt, "dataset csv": csv_rt, "config": cfg_rt,
              "same seed": same_seed}
    return all(checks.values()), ", ".join(f"{k} {'ok' if v else 'MISMATCH'}" for k, v in checks.items())


# name, budget in seconds
CRITERIA = {1: (criterion_1, 1), 2: (criterion_2, 1), 3: (criterion_3, 30), 4: (criterion_4, 60),
            5: (criterion_5, 120), 6: (criterion_6, 600), 7: (criterion_7, 1200), 8: (criterion_8, 600),
            9: (criterion_9, 60)}


def evaluate(n: int) -> tuple[bool, str]:
    fn, budget = CRITERIA[n]
    t0 = time.perf_counter()
    ok, detail = fn()
    dt = time.perf_counter() - t0
    in_time = dt < budget
    line = f"CRITERION {n}: {'PASS' if ok and in_time else 'FAIL'} {detail} [{dt:.1f} s, budget {budget} s" + \
        ("" if in_time else ", over budget") + "]"
    ACCEPTANCE_LINES[n] = line
    print(line)
    return ok and in_time, line


@pytest.mark.parametrize("n", sorted(CRITERIA))
def test_criterion(n):
    ok, line = evaluate(n)
    assert ok, line


if __name__ == "__main__":
    picked = [int(a) for a in sys.argv[1:]] or sorted(CRITERIA)
    results = [evaluate(n)[0] for n in picked]
    sys.exit(0 if all(results) else 1)
