"""Acceptance criteria, one test each.

Run under pytest, or directly (``python3 tests/test_acceptance.py``) to get
one PASS/FAIL line per criterion. Criteria 3 and 5 take about a minute.
"""
import math
import sys
import time
import warnings
from pathlib import Path

import numpy as np
import pytest

from superchem import ModelParams, TimeGrid, initial_state
from superchem.cli_io import first_local_minimum, main, parse_config, plateau_interval, run
from superchem.fock_oracle import evolve_coherent
from superchem.meanfield import integrate_mf, rabi_reference
from superchem.positive_p import simulate_ensemble
from superchem.raman_reduction import RF_CEILING_HZ, RamanParams, ReductionValidityWarning, reduce

try:
    from conftest import ACCEPTANCE
except ImportError:  # run as a script
    ACCEPTANCE = {}

LAMBDA = 1e-3
# Rounding floor for comparisons where the ensemble stderr is exactly zero.
ROUNDOFF = 1e-12


def record(k, ok, detail):
    ACCEPTANCE[k] = (bool(ok), detail)
    return bool(ok), detail


def criterion_1():
    p = ModelParams(g_rf=28, lambda_a=LAMBDA, lambda_b=LAMBDA)
    t0 = time.perf_counter()
    tr = integrate_mf(initial_state(1000), p, TimeGrid(0.29, 1e-4, 10))
    elapsed = time.perf_counter() - t0
    total = tr.column("n_total")
    drift = float(np.max(np.abs(total - total[0])) / total[0])
    return record(1, drift < 1e-8 and elapsed < 1.0, f"relative drift {drift:.2e} (< 1e-8), {elapsed:.2f} s (< 1 s)")


def criterion_2():
    g, n0 = 28.0, 1000.0
    p = ModelParams(g_rf=g, lambda_a=0, lambda_b=0, pa_enabled=False)
    t0 = time.perf_counter()
    grid = TimeGrid(math.pi / g, math.pi / g / 2000, 10)
    tr = integrate_mf(initial_state(n0), p, grid)
    elapsed = time.perf_counter() - t0
    n1_ref, _ = rabi_reference(n0, g, grid.taus)
    err = float(np.max(np.abs(tr.column("n1") - n1_ref)))
    return record(2, err < 1e-6 and elapsed < 1.0, f"max |n1 - N0 cos^2(G tau)| {err:.2e} (< 1e-6), {elapsed:.2f} s")


def _oracle_config():
    return ModelParams(g_rf=2, lambda_a=LAMBDA, lambda_b=LAMBDA), 10.0, 0.5


def criterion_3():
    p, n0, tau_end = _oracle_config()
    # Samples every 0.025. Euler-Maruyama's O(dt) bias in nb at the first
    # samples is far larger than the tiny stderr there, so every trajectory
    # is extrapolated over dt and dt/2 on the same Brownian path.
    pp_grid = TimeGrid(tau_end, 1e-4, 250)
    ex_grid = TimeGrid(tau_end, 1e-3, 25)
    ex = evolve_coherent(p, n0, 1e-8, ex_grid)
    st = simulate_ensemble(initial_state(n0), p, pp_grid, 10_000, master_seed=20240917, n_workers=4, extrapolate=True)
    assert np.allclose(ex_grid.taus, pp_grid.taus)
    # The oracle's own truncation error is bounded by its dropped Poisson tail.
    tail = ex.tail_bound(1)
    fractions = {}
    for j, name in enumerate(("n1", "n2", "nb")):
        diff = np.abs(st.mean[:, j] - ex.column(name))
        ok = diff <= 3 * st.stderr[:, j] + tail + ROUNDOFF * n0
        fractions[name] = float(ok.mean())
    tot, tot_se = st.series("n_total")
    tot_ok = bool(np.all(np.abs(tot - n0) <= 3 * tot_se + ROUNDOFF * n0))
    ok = all(f >= 0.95 for f in fractions.values()) and tot_ok
    detail = ", ".join(f"{k} {100 * v:.0f}%" for k, v in fractions.items())
    return record(3, ok, f"points within 3 SE: {detail} (>= 95%); n_total within 3 SE of 10: {tot_ok}")


def criterion_4():
    nb_at = {}
    series = {}
    grid = TimeGrid(0.145, 1e-4, 25)
    k = int(round(0.1 / (grid.dt * grid.sample_stride)))
    for g in (4, 12, 28):
        p = ModelParams(g_rf=g, lambda_a=LAMBDA, lambda_b=LAMBDA)
        st = simulate_ensemble(initial_state(1000), p, grid, 2000, master_seed=4000 + g, n_workers=4)
        nb_at[g] = float(st.mean[k, 2])
        series[g] = st.mean[:, 2]
    mono = nb_at[4] < nb_at[12] < nb_at[28]
    length, a, b = plateau_interval(grid.taus, series[28], frac=0.1)
    has_plateau = length >= 0.01
    ok = mono and has_plateau
    return record(
        4, ok,
        f"nb(0.1) for G=4,12,28: {nb_at[4]:.1f} < {nb_at[12]:.1f} < {nb_at[28]:.1f}: {mono}; "
        f"G=28 plateau [{a:.4g}, {b:.4g}] length {length:.4f} (>= 0.01): {has_plateau}",
    )


COMPARE_CONFIG = """\
mode: compare
g_rf: 28
lambda_a: 1.0e-3
lambda_b: 1.0e-3
n0: 1000
tau_end: 0.29
dt: 1.0e-4
sample_stride: 50
n_traj: 2000
master_seed: 29
n_workers: 4
extrapolate: true
"""


def criterion_5():
    p = ModelParams(g_rf=28, lambda_a=LAMBDA, lambda_b=LAMBDA)
    tr = integrate_mf(initial_state(1000), p, TimeGrid(0.29, 1e-4, 10))
    n2 = tr.column("n2")
    i_min = first_local_minimum(n2)
    revival = i_min is not None and n2[i_min:].max() > n2[i_min] * 1.5
    (cmp_,) = run(parse_config(COMPARE_CONFIG))
    meta = cmp_.metadata
    z_before = meta["max_z_before_min"]
    tracks = all(v is not None and v <= 3 for v in z_before.values())
    reported = meta["max_z_after_min"] is not None and "divergence_fraction" in meta
    ok = revival and tracks and reported
    with np.errstate(invalid="ignore", divide="ignore"):  # stderr is 0 at tau = 0
        z = np.column_stack([
            np.abs(cmp_.column(f"pp_{n}") - cmp_.column(f"mf_{n}")) / cmp_.column(f"pp_{n}_se")
            for n in ("n1", "n2", "nb")
        ])
    beyond = np.nonzero(np.nan_to_num(z, nan=0.0).max(axis=1) > 3)[0]
    first = f"{cmp_.column('tau')[beyond[0]]:.4g}" if len(beyond) else "none"
    tau_min = None if i_min is None else float(tr.column("tau")[i_min])
    zs = ", ".join(f"{k} {v:.1f}" for k, v in z_before.items())
    return record(
        5, ok,
        f"MF n2 minimum at tau={tau_min:.4g} then revival: {revival}; "
        f"pp within 3 SE before minimum (max |z|: {zs}; first |z| > 3 at tau={first}): {tracks}; "
        f"divergence metric reported: {reported}",
    )


def criterion_6():
    rep = reduce(RamanParams(gamma_pa=145e3, omega=10e9, delta=1000 * 10e9))
    rel = abs(rep.chi - 145.0) / 145.0
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        at = reduce(RamanParams(145e3, 10e9, 1e13, g_rf=RF_CEILING_HZ)).rf_over_ceiling
        above = reduce(RamanParams(145e3, 10e9, 1e13, g_rf=2 * RF_CEILING_HZ)).rf_over_ceiling
    below = reduce(RamanParams(145e3, 10e9, 1e13, g_rf=0.9 * RF_CEILING_HZ)).rf_over_ceiling
    warned = sum(issubclass(w.category, ReductionValidityWarning) for w in caught) == 2
    ok = rel < 1e-12 and at and above and not below and warned
    return record(6, ok, f"chi={rep.chi!r} Hz (rel err {rel:.1e} < 1e-12); G' >= 4 sqrt(6) kHz flagged: {at and above and warned}")


DETERMINISM_CONFIG = """\
mode: pp
g_rf: 28
lambda_a: 1.0e-3
lambda_b: 1.0e-3
n0: 1000
tau_end: 0.05
dt: 1.0e-4
sample_stride: 10
n_traj: 5000
master_seed: 77
"""


def criterion_7(tmp_dir):
    cfg = Path(tmp_dir) / "det.yaml"
    cfg.write_text(DETERMINISM_CONFIG)
    outputs = []
    for w in (1, 4, 16):
        out = Path(tmp_dir) / f"det_{w}.csv"
        code = main(["pp", "--config", str(cfg), "--workers", str(w), "--output", str(out)])
        outputs.append(out.read_bytes() if code == 0 else b"")
    same = all(o == outputs[0] for o in outputs) and bool(outputs[0])
    return record(7, same, f"n_workers 1/4/16 byte-identical: {same} ({len(outputs[0])} bytes)")


def criterion_8():
    p, n0, tau_end = _oracle_config()
    h = 0.01
    n_steps = int(round(tau_end / h))
    seed, n = 8080, 10_000

    def nb_end(div):
        # refine keeps every run on the same Brownian paths as the dt/8 one
        grid = TimeGrid(tau_end, h / div, n_steps * div)
        st = simulate_ensemble(initial_state(n0), p, grid, n, seed, n_workers=4, refine=8 // div)
        return float(st.mean[-1, 2])

    ref = nb_end(8)
    b1, b2 = nb_end(1) - ref, nb_end(2) - ref
    ratio = b1 / b2
    return record(8, 1.5 <= ratio <= 3.0, f"bias ratio dt/(dt/2) = {ratio:.3f} in [1.5, 3] (biases {b1:.4g}, {b2:.4g})")


def test_criterion_1_conservation():
    ok, detail = criterion_1()
    assert ok, detail


def test_criterion_2_rabi():
    ok, detail = criterion_2()
    assert ok, detail


def test_criterion_3_oracle_equivalence():
    ok, detail = criterion_3()
    assert ok, detail


def test_criterion_4_molecular_step():
    ok, detail = criterion_4()
    assert ok, detail


def test_criterion_5_revival_and_tracking():
    ok, detail = criterion_5()
    assert ok, detail


def test_criterion_6_raman_reduction():
    ok, detail = criterion_6()
    assert ok, detail


def test_criterion_7_determinism(tmp_path):
    ok, detail = criterion_7(tmp_path)
    assert ok, detail


def test_criterion_8_weak_order():
    ok, detail = criterion_8()
    assert ok, detail


if __name__ == "__main__":
    import tempfile

    checks = [criterion_1, criterion_2, criterion_3, criterion_4, criterion_5, criterion_6, None, criterion_8]
    failed = 0
    for k, fn in enumerate(checks, start=1):
        if fn is None:
            with tempfile.TemporaryDirectory() as d:
                ok, detail = criterion_7(d)
        else:
            ok, detail = fn()
        failed += not ok
        print(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}", flush=True)
    sys.exit(1 if failed else 0)
