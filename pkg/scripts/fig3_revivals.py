"""Atomic revivals at G = 28: mean field against the positive-P ensemble.

Runs compare mode from a config file (default ``configs/compare_g28.yaml``),
writes the series and prints the summary metrics.
"""
import argparse
import json
from pathlib import Path

import numpy as np

from superchem.cli_io import dumps_csv, parse_config, run

ROOT = Path(__file__).resolve().parents[1]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=str(ROOT / "configs" / "compare_g28.yaml"))
    ap.add_argument("--workers", type=int, default=4)
    ap.add_argument("--out", default="out/fig3")
    ap.add_argument("--plot", action="store_true")
    args = ap.parse_args()

    spec = parse_config(Path(args.config).read_text(), "compare")
    spec.n_workers = args.workers
    (series,) = run(spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "compare.csv").write_text(dumps_csv(series))

    keys = ("tau_n2_min", "max_z_before_min", "max_z_after_min", "max_abs_dnb", "divergence_fraction")
    print(json.dumps({k: series.metadata[k] for k in keys}, indent=2))
    tau = series.column("tau")
    z = np.abs(series.column("dnb_over_se"))
    print("tau     mf_n2     pp_n2     mf_nb     pp_nb   |dnb|/se")
    for i in range(0, len(tau), max(1, len(tau) // 30)):
        print(f"{tau[i]:.3f} {series.column('mf_n2')[i]:9.2f} {series.column('pp_n2')[i]:9.2f} "
              f"{series.column('mf_nb')[i]:9.2f} {series.column('pp_nb')[i]:9.2f} {z[i]:8.2f}")

    if args.plot:
        import matplotlib.pyplot as plt

        fig, axes = plt.subplots(2, 1, sharex=True, figsize=(5, 5))
        for ax, name in zip(axes, ("n2", "nb")):
            ax.plot(tau, series.column(f"mf_{name}"), "k--", label="MF")
            ax.plot(tau, series.column(f"pp_{name}"), label="positive-P")
            ax.set_ylabel(name)
        axes[0].legend()
        axes[1].set_xlabel("tau")
        fig.tight_layout()
        fig.savefig(out / "fig3.png", dpi=150)


if __name__ == "__main__":
    main()
