"""Surrogate accuracy in the restricted toll space versus every path and vertiport.

For each frame of one historical day both surrogates get the same sample
budget and architecture; they are scored at the toll vector the HLP picks
with the restricted surrogate.
"""

import argparse
from dataclasses import replace

import numpy as np

from aam_congestion.harness import CANDIDATES, SURROGATE, Context, load_scenario, stream_seed
from aam_congestion.hlp import solve_hlp
from aam_congestion.llp import solve_llp
from aam_congestion.surrogate import approx_ratio, full_toll_space, generate_dataset, train


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default="default")
    ap.add_argument("--day", type=int, default=0)
    ap.add_argument("--samples", type=int, help="override the training-set size")
    args = ap.parse_args()
    cfg = load_scenario(args.config)
    if args.samples:
        cfg = replace(cfg, train_size=args.samples)
    ctx = Context.build(cfg)
    lc = cfg.llp_config()
    full = full_toll_space(ctx.net, cap=cfg.toll_max)
    print(f"restricted dim {ctx.space.dim}, full dim {full.dim}, {cfg.train_size} samples, hidden {cfg.hidden}")
    small_r, full_r = [], []
    for m, flights in enumerate(ctx.historical_schedule(args.day).frames):
        if not flights:
            continue
        seed = stream_seed(cfg.seed, SURROGATE, args.day, m)
        out = []
        for space in (ctx.space, full):
            scfg = cfg.surrogate_config(space.dim)
            out.append(train(generate_dataset(ctx.net, flights, scfg, seed, space, lc), scfg,
                             stream_seed(cfg.seed, SURROGATE, args.day, m, 1)))
        dec = solve_hlp(ctx.net, flights, out[0], ctx.space, cfg.hlp_config(),
                        seed=stream_seed(cfg.seed, CANDIDATES, args.day, m), llp_config=lc)
        phi = solve_llp(ctx.net, flights, dec.tolls, config=lc).objective
        small_r.append(approx_ratio(out[0], dec.toll_array, phi))
        full_r.append(approx_ratio(out[1], full.to_array(dec.tolls), phi))
        print(f"frame {m}: {len(flights)} flights, phi {phi:.1f}, "
              f"ratio restricted {100 * small_r[-1]:.2f}% full {100 * full_r[-1]:.2f}%", flush=True)
    print(f"median restricted {100 * np.median(small_r):.2f}%  full {100 * np.median(full_r):.2f}%")


if __name__ == "__main__":
    main()
