#!/usr/bin/env python3
import argparse
import sys
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from services.reports import read_series  # noqa: E402

STYLES = {
    "f1": {"color": "0.6", "linestyle": "--"},
    "g0": {"color": "tab:orange", "linestyle": ":"},
    "g": {"color": "tab:blue"},
    "g1": {"color": "tab:green"},
}


def collect(paths):
    """cross_<name>.csv files from the given files or directories, keyed by <name>."""
    found = {}
    for raw in paths:
        p = Path(raw)
        files = sorted(p.glob("cross_*.csv")) if p.is_dir() else [p]
        for f in files:
            if not f.exists():
                raise FileNotFoundError(f"Plot data not found: {f}")
            found[f.stem.replace("cross_", "", 1)] = f
    return found


def render(series, out_path, title):
    fig, ax = plt.subplots(figsize=(7, 4))
    for name, path in series.items():
        xs, ys = read_series(path)
        ax.plot(xs, ys, label=name, **STYLES.get(name, {}))
    ax.set_xlabel("t along the A column")
    ax.set_ylabel("value")
    ax.set_title(title)
    ax.legend(loc="best")
    fig.tight_layout()
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path, format="svg")
    plt.close(fig)


def main():
    ap = argparse.ArgumentParser(description="Render cross-section plot data (cross_*.csv) to SVG.")
    ap.add_argument("inputs", nargs="+", help="cross_*.csv files or run directories")
    ap.add_argument("--out", default="cross_sections.svg")
    ap.add_argument("--title", default="cross-sections of f1, g0, g and g1")
    args = ap.parse_args()

    series = collect(args.inputs)
    if not series:
        print("❌ no cross_*.csv files found", file=sys.stderr)
        sys.exit(2)
    out_path = Path(args.out)
    render(series, out_path, args.title)
    print(f"✅ Wrote {out_path.resolve()} ({len(series)} curves)")


if __name__ == "__main__":
    main()
