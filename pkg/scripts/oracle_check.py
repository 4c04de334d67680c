"""Positive-P ensemble against exact number-basis evolution for a small coherent state."""
import argparse

import numpy as np

from superchem import ModelParams, TimeGrid, initial_state
from superchem.fock_oracle import evolve_coherent
from superchem.positive_p import simulate_ensemble


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n0", type=float, default=10.0)
    ap.add_argument("--g", type=float, default=2.0)
    ap.add_argument("--lam", type=float, default=1e-3)
    ap.add_argument("--tau-end", type=float, default=0.5)
    ap.add_argument("--dt", type=float, default=1e-4)
    ap.add_argument("--n-traj", type=int, default=10_000)
    ap.add_argument("--seed", type=int, default=20240917)
    ap.add_argument("--workers", type=int, default=4)
    ap.add_argument("--no-extrapolate", action="store_true")
    args = ap.parse_args()

    p = ModelParams(g_rf=args.g, lambda_a=args.lam, lambda_b=args.lam)
    stride = int(round(0.025 / args.dt))
    grid = TimeGrid(args.tau_end, args.dt, stride)
    ex = evolve_coherent(p, args.n0, 1e-8, TimeGrid(args.tau_end, 1e-3, 25))
    st = simulate_ensemble(initial_state(args.n0), p, grid, args.n_traj, args.seed, args.workers,
                           extrapolate=not args.no_extrapolate)
    tail = ex.tail_bound(1)
    print(f"oracle n_max={ex.n_max} dropped_mass={ex.dropped_mass:.2e} tail_bound={tail:.2e}")
    print("tau    " + "".join(f"{n:>22s}" for n in ("n1 (exact, z)", "n2 (exact, z)", "nb (exact, z)")))
    hits = np.zeros(3)
    for i, tau in enumerate(grid.taus):
        cells = []
        for j, name in enumerate(("n1", "n2", "nb")):
            exact = ex.column(name)[i]
            d = st.mean[i, j] - exact
            z = d / st.stderr[i, j] if st.stderr[i, j] > 0 else 0.0
            hits[j] += abs(d) <= 3 * st.stderr[i, j] + tail + 1e-11
            cells.append(f"{exact:12.5f} {z:+8.2f}")
        print(f"{tau:.3f} " + " ".join(cells))
    print("fraction within 3 SE:", dict(zip(("n1", "n2", "nb"), np.round(hits / len(grid.taus), 3))))


if __name__ == "__main__":
    main()
