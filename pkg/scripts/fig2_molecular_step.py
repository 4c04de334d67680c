"""Molecular output step: nb(tau) from positive-P ensembles at G = 4, 12, 28.

Writes one CSV per coupling and prints nb(0.1) plus the longest plateau of
the G = 28 curve. ``--plot`` needs matplotlib.
"""
import argparse
from pathlib import Path

import numpy as np

from superchem import ModelParams, TimeGrid, initial_state
from superchem.cli_io import SeriesFile, dumps_csv, plateau_interval
from superchem.positive_p import simulate_ensemble


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n-traj", type=int, default=2000)
    ap.add_argument("--workers", type=int, default=4)
    ap.add_argument("--seed", type=int, default=4000)
    ap.add_argument("--lam", type=float, default=1e-3, help="lambda_a = lambda_b")
    ap.add_argument("--out", default="out/fig2")
    ap.add_argument("--plot", action="store_true")
    args = ap.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    grid = TimeGrid(0.145, 1e-4, 25)
    k = int(round(0.1 / (grid.dt * grid.sample_stride)))
    curves = {}
    for g in (4, 12, 28):
        p = ModelParams(g_rf=g, lambda_a=args.lam, lambda_b=args.lam)
        st = simulate_ensemble(initial_state(1000), p, grid, args.n_traj, args.seed + g, args.workers)
        nb, se = st.series("nb")
        curves[g] = (nb, se)
        rows = np.column_stack([grid.taus, nb, se, st.n_surviving])
        meta = {"g_rf": g, "lambda": args.lam, "n_traj": args.n_traj, "master_seed": args.seed + g,
                "n_diverged": st.n_diverged}
        (out / f"nb_G{g}.csv").write_text(dumps_csv(SeriesFile(meta, ("tau", "nb", "nb_se", "n_surviving"), rows)))
        print(f"G={g:2d}  nb(0.1) = {nb[k]:8.2f} +- {se[k]:.2f}  diverged {st.n_diverged}")

    length, a, b = plateau_interval(grid.taus, curves[28][0])
    print(f"G=28 plateau: [{a}, {b}], length {length:.4f}")

    if args.plot:
        import matplotlib.pyplot as plt

        fig, ax = plt.subplots(figsize=(5, 3.5))
        for g, (nb, se) in curves.items():
            ax.plot(grid.taus, nb, label=f"G={g}")
            ax.fill_between(grid.taus, nb - 3 * se, nb + 3 * se, alpha=0.3)
        ax.set_xlabel("tau")
        ax.set_ylabel("n_b")
        ax.legend()
        fig.tight_layout()
        fig.savefig(out / "fig2.png", dpi=150)


if __name__ == "__main__":
    main()
