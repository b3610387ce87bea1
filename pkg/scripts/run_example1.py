#!/usr/bin/env python3
"""Run the fifth-order aircraft benchmark end to end and report containment.

Writes traces and per-figure plot data under --out (default out/example1),
then runs a small Monte Carlo sweep over random admissible initial states
and inputs.
"""

import argparse

from smobserver.pipeline import (emit_plot_data, emit_traces,
                                 monte_carlo_containment, run_algorithm1)
from smobserver.scenario import example1


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="out/example1")
    ap.add_argument("--mc-runs", type=int, default=50)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    import os
    os.makedirs(args.out, exist_ok=True)
    cfg = example1()
    run = run_algorithm1(cfg)
    emit_traces(run.traces, os.path.join(args.out, "traces.csv"))
    emit_plot_data(run, args.out)
    print(f"nominal run: {len(run.traces)} rows, worst quadratic form "
          f"{run.worst_q:.3e}, envelope margin {run.eps1_margin:.3e}")

    mc = monte_carlo_containment(cfg, runs=args.mc_runs, seed=args.seed)
    print(f"monte carlo ({args.mc_runs} runs): containment rate "
          f"{mc['containment_rate']}, worst quadratic form "
          f"{mc['worst_q']:.6f}, envelope violations "
          f"{mc['eps1_violations']}")


if __name__ == "__main__":
    main()
