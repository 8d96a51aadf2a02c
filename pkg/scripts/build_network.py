"""Regenerate the bundled synthetic network (7 vertiports, 126 paths)."""

import argparse
from pathlib import Path

from aam_congestion.network import build_synthetic_network, save_network

DEFAULT = Path(__file__).resolve().parents[1] / "src" / "aam_congestion" / "data" / "network_default.json"


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default=str(DEFAULT))
    args = ap.parse_args()
    net = build_synthetic_network()
    save_network(net, args.out)
    print(f"{len(net.vertiports)} vertiports, {len(net.paths)} paths, {len(net.sectors)} sectors -> {args.out}")


if __name__ == "__main__":
    main()
