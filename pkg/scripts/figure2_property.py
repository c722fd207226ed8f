"""Check the generalization-vs-compositionality ordering on recorded game runs.

Runs that generalize (OOD >= 0.5) should never have lower posdis than the
best posdis among runs that fail outright (OOD <= 0.05).

    python3 scripts/figure2_property.py runs/desk
"""

import sys

from emcomm.runner import load_records


def ordering(records, hi=0.5, lo=0.05):
    good = [r.metrics["posdis"] for r in records if r.final["ood"] >= hi and r.metrics]
    bad = [r.metrics["posdis"] for r in records if r.final["ood"] <= lo and r.metrics]
    ok = not good or not bad or min(good) >= max(bad)
    return ok, good, bad


def main(out_dir: str) -> int:
    games = [r for recs in load_records(out_dir).values() for r in recs if r.kind == "communication-game"]
    if not games:
        print("no game runs recorded")
        return 1
    for r in sorted(games, key=lambda r: r.final["ood"]):
        m = r.metrics or {}
        print(f"{r.label:14s} seed {r.seed:3d}  ood {r.final['ood']:.3f}  posdis {m.get('posdis', float('nan')):.3f}  topsim {m.get('topsim')}")
    ok, good, bad = ordering(games)
    print(f"generalizing runs: {len(good)}, failing runs: {len(bad)}, ordering holds: {ok}")
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main(sys.argv[1] if len(sys.argv) > 1 else "runs/desk"))
