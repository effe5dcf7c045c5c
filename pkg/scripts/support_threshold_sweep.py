"""Conversion error of TEAK against the TCCO support threshold and noise level.

The pointwise residual constraints only apply where the regressor exceeds
the threshold times its maximum.  Prints chi RMS error per (noise, threshold)
and the value the automatic rule picks.
"""
import argparse

import numpy as np

from common import oxidation, true_conversion
from teak.config import ExperimentConfig
from teak.pipeline import SUPPORT_FLOOR, SUPPORT_SLOPE, run_teak


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--noise", type=float, nargs="+", default=[0.0, 5e-4, 1e-3, 5e-3])
    ap.add_argument("--thresholds", type=float, nargs="+", default=[0.1, 0.14, 0.2, 0.3, 0.5])
    ap.add_argument("--seeds", type=int, nargs="+", default=[3, 4, 5])
    ap.add_argument("--pulses", type=int, default=8)
    args = ap.parse_args()

    print("noise     " + "".join(f"{t:>9.2f}" for t in args.thresholds) + "     auto")
    for noise in args.noise:
        runs = [oxidation(args.pulses, shared={"noise_std": noise}, seed=s) for s in args.seeds]
        row = []
        for thr in [*args.thresholds, "auto"]:
            err = []
            for sc, raw, truth in runs:
                d = sc.experiment_config().to_dict()
                d["tcco"]["support_threshold"] = thr
                r = run_teak(raw, ExperimentConfig.from_dict(d))
                err.append(r.conversion["O2"] - true_conversion(truth))
            row.append(float(np.sqrt(np.mean(np.square(err)))))
        print(f"{noise:<10.1e}" + "".join(f"{e:9.4f}" for e in row))
    print(f"auto = {SUPPORT_FLOOR} + {SUPPORT_SLOPE} * sqrt(sigma / peak)")


if __name__ == "__main__":
    main()
