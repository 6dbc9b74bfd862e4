import numpy as np

from deepangio.benchmark import GAMMAS, N_TRAIN, SeedResult, desk_config, desk_data, dice_of, latent_stability, score
from deepangio.nets import build_encoder


def test_desk_data_split_and_determinism():
    train, test = desk_data()
    assert len(train) == N_TRAIN and len(test) == 4
    img, lbl, fov = train[0]
    assert img.shape == (3, 64, 64) and lbl.shape == (64, 64) and fov.min() == 1
    again, _ = desk_data()
    assert all(np.array_equal(a[0], b[0]) for a, b in zip(train, again))
    other, _ = desk_data(phantom_seed=1)
    assert not np.array_equal(train[0][0], other[0][0])


def test_desk_config_respects_overrides():
    cfg = desk_config(seed=3, epochs=7)
    assert cfg.seed == 3 and cfg.epochs == 7 and cfg.epochs <= desk_config().epochs


def test_dice_of_extremes():
    lbl = np.zeros((8, 8))
    lbl[2:5, 2:5] = 1
    assert dice_of(lbl, lbl) == 1.0
    assert dice_of(1 - lbl, lbl) == 0.0


def test_score_and_stability_shapes():
    _, test = desk_data(count=14, size=32)
    cfg = desk_config(encoder_base_channels=4, encoder_depth=2)
    enc = build_encoder(cfg.encoder_config(), seed=0)
    s = score("vae", enc, test)
    assert set(s) == set(GAMMAS) and all(len(v) == len(test) for v in s.values())
    assert all(0.0 <= d <= 1.0 for v in s.values() for d in v)
    a = latent_stability(enc, test, seed=0, tiles=2)
    assert a == latent_stability(enc, test, seed=0, tiles=2)
    assert -1.0 <= a <= 1.0


def test_seed_result_shifted_pools_shifted_gammas():
    d = {1.0: [0.9], 0.6: [0.1, 0.2], 1.6: [0.3]}
    r = SeedResult(0, vae_dice=d, green_dice={g: [x + 1 for x in v] for g, v in d.items()},
                   ssim_trained=0.0, ssim_untrained=0.0)
    assert r.shifted("vae") == [0.1, 0.2, 0.3]
    assert r.shifted("green") == [1.1, 1.2, 1.3]
