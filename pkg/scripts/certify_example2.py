#!/usr/bin/env python3
"""Evaluate the boundedness certificate for the third-order benchmark and
cross-check it against the realized run."""

import numpy as np
import yaml

from smobserver.pipeline import certify_scenario
from smobserver.scenario import example2


def main() -> None:
    rep, run = certify_scenario(example2())
    print(yaml.safe_dump(rep.to_dict(), sort_keys=False))
    if rep.case == "none":
        print(f"certificate unavailable: {rep.reason}")
        raise SystemExit(2)

    worst_lo = np.inf
    worst_hi = 0.0
    for ws in run.weak_states:
        lam = np.linalg.eigvalsh(ws.P2hat)
        worst_lo = min(worst_lo, lam[0] / rep.p2_lo)
        worst_hi = max(worst_hi, lam[-1] / rep.p2_hi)
    print(f"case {rep.case}: realized lambda_min/p2_lo >= {worst_lo:.4f}, "
          f"lambda_max/p2_hi <= {worst_hi:.4g} (both must respect 1)")
    ok = worst_lo >= 1.0 - 1e-9 and worst_hi <= 1.0 + 1e-9
    print("certificate consistent with the realized run"
          if ok else "certificate INCONSISTENT")
    raise SystemExit(0 if ok else 2)


if __name__ == "__main__":
    main()
