"""Rebuild the bundled C=32 operating point and LUT from oracle traces.

    python3 scripts/build_default_lut.py --seed 0
"""

import argparse
import json
from pathlib import Path

from gavsim import experiments


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", type=Path, default=experiments.DATA_DIR)
    args = ap.parse_args()
    rep = experiments.build_error_model(args.seed)
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "operating_point_c32.json").write_text(json.dumps(rep.op.to_json(), indent=2))
    rep.lut.save(args.out / "lut_c32.json")
    print(f"delay_scale={rep.op.delay_scale:.6f} tune_ber={rep.tune_ber:.4f} "
          f"trace_ber={rep.trace_ber:.4f} records={rep.n_records}")


if __name__ == "__main__":
    main()
