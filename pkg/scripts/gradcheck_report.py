"""Finite-difference check of the full training objective.

Perturbs a random subset of every encoder and decoder parameter and compares
central differences (float64) against backward() run at float32.

    python3 scripts/gradcheck_report.py --seeds 0 1 2 --coords 3
"""

import argparse
import re

import numpy as np

from deepangio import tensor as T
from deepangio.gradcheck import gradient_check
from deepangio.losses import total_loss
from deepangio.nets import build_decoder, build_encoder, decoder_config, encoder_config

CANCELLED = re.compile(r"res\.conv\d\.bias$|up0\.res\.skip\.bias$")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--coords", type=int, default=3, help="coordinates probed per parameter")
    ap.add_argument("--size", type=int, default=16)
    args = ap.parse_args()

    worst = 0.0
    for seed in args.seeds:
        rng = np.random.default_rng(seed)
        enc = build_encoder(encoder_config(base_channels=4, depth=2), seed=seed)
        dec = build_decoder(decoder_config(base_channels=4, depth=1), seed=seed + 1)
        x = T.Tensor(rng.random((2, 3, args.size, args.size)))
        xa = T.Tensor(rng.random((2, 3, args.size, args.size)))
        y = (rng.random((2, 1, args.size, args.size)) > 0.8).astype(np.float32)
        named = {f"E.{k}": v for k, v in enc.params.items()} | {f"D.{k}": v for k, v in dec.params.items()}
        # these convs feed an instance norm directly, which cancels their bias:
        # the true gradient is 0, so only its absolute size is reported
        cancelled = [v for k, v in named.items() if CANCELLED.search(k)]
        params = [v for v in named.values() if not any(v is c for c in cancelled)]
        loss = lambda: total_loss(x, xa, y, enc, dec)[0]
        rep = gradient_check(loss, params, step=1e-6, tolerance=1e-3,
                             max_coords=args.coords, seed=seed, reference_dtype=np.float64, extra=[x, xa])
        worst = max(worst, rep.max_rel_error)
        scale = max(float(np.abs(p.grad).max()) for p in params)
        leak = max(float(np.abs(c.grad).max()) for c in cancelled) / scale
        print(f"seed {seed}: {len(params)} tensors, max rel err {rep.max_rel_error:.2e} "
              f"{'ok' if rep.passed else 'FAIL'}; {len(cancelled)} norm-cancelled biases, "
              f"max |grad| / max other |grad| = {leak:.1e}")
    print(f"worst {worst:.2e}")


if __name__ == "__main__":
    main()
