"""Desk-scale phantom benchmark: contrastive model vs green-channel U-Net.

Trains both models per seed on 12 phantoms and reports held-out Dice at
gamma 1.0 / 0.6 / 1.6 plus the latent stability under CLAHE.

    python3 scripts/desk_benchmark.py --seeds 0 1 2
"""

import argparse

import numpy as np

from deepangio.benchmark import GAMMAS, desk_config, desk_data, run_seed


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--phantom-seed", type=int, default=0)
    ap.add_argument("--epochs", type=int, default=None)
    ap.add_argument("--no-baseline", action="store_true")
    args = ap.parse_args()

    train_set, test_set = desk_data(args.phantom_seed)
    results = []
    for seed in args.seeds:
        overrides = {"seed": seed}
        if args.epochs is not None:
            overrides["epochs"] = args.epochs
        r = run_seed(seed, train_set, test_set, desk_config(**overrides), baseline=not args.no_baseline)
        results.append(r)
        print(f"seed {seed}  vae {r.seconds['vae']:.0f}s" +
              (f"  green {r.seconds['green']:.0f}s" if "green" in r.seconds else ""))
        for g in GAMMAS:
            line = f"  gamma {g:<4} vae {np.mean(r.vae_dice[g]):.3f}"
            if r.green_dice:
                line += f"  green {np.mean(r.green_dice[g]):.3f}"
            print(line)
        print(f"  latent ssim trained {r.ssim_trained:.4f}  untrained {r.ssim_untrained:.4f}")

    print("median over seeds (shifted gammas)")
    print(f"  vae   {np.median([np.median(r.shifted('vae')) for r in results]):.3f}")
    if not args.no_baseline:
        print(f"  green {np.median([np.median(r.shifted('green')) for r in results]):.3f}")


if __name__ == "__main__":
    main()
