"""Fused versus single-modality accuracy when 40% of the optical scene is clouded.

Each checkpoint is evaluated three times: as trained, with the SAR input
zeroed and with the optical input zeroed.

    python demos/cloud_robustness.py [--cloud 0.4] [--seeds 0 1 2]
"""

import argparse

from claire.harness.trends import run_trend


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--cloud", type=float, default=0.4)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    args = ap.parse_args()

    res = run_trend(["rift"], args.seeds, cloud_fraction=args.cloud,
                    progress=lambda r: print(f"seed {r.seed}  fused {r.oa:.3f}  optical-only "
                                             f"{r.optical_only_oa:.3f}  SAR-only {r.sar_only_oa:.3f}"))
    print(f"\nmean OA  fused {res.mean('rift', 'oa'):.3f}  optical-only {res.mean('rift', 'optical_only_oa'):.3f}"
          f"  SAR-only {res.mean('rift', 'sar_only_oa'):.3f}")


if __name__ == "__main__":
    main()
