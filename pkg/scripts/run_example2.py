#!/usr/bin/env python3
"""Run the third-order unstable benchmark and emit projected set slices.

The interesting geometry lives in the (x2, x3) plane of the weakly
unobservable block, so the ellipse polylines are projected there.
"""

import argparse

from smobserver.pipeline import (emit_plot_data, emit_traces, run_algorithm1)
from smobserver.scenario import example2


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="out/example2")
    args = ap.parse_args()

    import os
    os.makedirs(args.out, exist_ok=True)
    cfg = example2()
    run = run_algorithm1(cfg)
    emit_traces(run.traces, os.path.join(args.out, "traces.csv"))
    emit_plot_data(run, args.out, ellipse_axes=(1, 2))
    last = run.traces[-1]
    print(f"{len(run.traces)} rows; final trace(P) {last.trP:.3e}, "
          f"final envelope {last.eps1:.3e}")
    print(f"containment {'OK' if run.containment_ok else 'VIOLATED'}, "
          f"worst quadratic form {run.worst_q:.3e}")


if __name__ == "__main__":
    main()
