"""Run every spec of one scale, then write tables and figures.

    python3 scripts/run_experiments.py --scale desk --out runs/desk

Safe to interrupt: a second invocation resumes where the log stops.
Set EMCOMM_WORKERS to spread seeds over several processes.
"""

import argparse
import sys
from pathlib import Path

from emcomm.cli import main as cli

ROOT = Path(__file__).resolve().parent.parent
COMMANDS = {
    "learning-alone-sender": "train-alone",
    "learning-alone-receiver": "train-alone",
    "communication-game": "train-game",
    "capacity-sweep": "sweep-capacity",
}


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--scale", choices=["desk", "paper"], default="desk")
    ap.add_argument("--out", default=None)
    ap.add_argument("--only", nargs="*", help="spec file stems to run, e.g. game alone_receiver")
    args = ap.parse_args()

    from emcomm.runner import load_spec

    out = args.out or str(ROOT / "runs" / args.scale)
    specs = sorted((ROOT / "experiments" / args.scale).glob("*.ini"))
    if args.only:
        specs = [s for s in specs if s.stem in args.only]
    for path in specs:
        command = COMMANDS[load_spec(path).kind]
        print(f"## {path.name}", flush=True)
        code = cli([command, "--spec", str(path), "--out", out, "--resume"])
        if code:
            return code
    return cli(["report", "--out", out]) or cli(["plot", "--out", out])


if __name__ == "__main__":
    sys.exit(main())
