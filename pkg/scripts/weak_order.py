"""Weak-order check of the Euler-Maruyama ensemble on matched Brownian paths.

Runs at dt, dt/2 and a dt/8 reference; the bias ratio should be near 2.
"""
import argparse

from superchem import ModelParams, TimeGrid, initial_state
from superchem.positive_p import simulate_ensemble


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--dt", type=float, default=0.01)
    ap.add_argument("--tau-end", type=float, default=0.5)
    ap.add_argument("--n-traj", type=int, default=10_000)
    ap.add_argument("--seed", type=int, default=8080)
    ap.add_argument("--workers", type=int, default=4)
    args = ap.parse_args()

    p = ModelParams(g_rf=2, lambda_a=1e-3, lambda_b=1e-3)
    n_steps = int(round(args.tau_end / args.dt))
    nb = {}
    for div in (1, 2, 4, 8):
        grid = TimeGrid(args.tau_end, args.dt / div, n_steps * div)
        st = simulate_ensemble(initial_state(10), p, grid, args.n_traj, args.seed, args.workers, refine=8 // div)
        nb[div] = st.mean[-1, 2]
        print(f"dt/{div}: nb(tau_end) = {nb[div]:.6f} +- {st.stderr[-1, 2]:.4f}")
    b1, b2 = nb[1] - nb[8], nb[2] - nb[8]
    print(f"bias(dt) = {b1:.5f}, bias(dt/2) = {b2:.5f}, ratio = {b1 / b2:.3f}")


if __name__ == "__main__":
    main()
