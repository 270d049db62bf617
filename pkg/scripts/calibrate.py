#!/usr/bin/env python3
"""Scratch calibration of the synthetic benchmark against pipeline oracles."""

import time

import numpy as np

from caae.anonymizer import AaeConfig, anonymize_batch, train_aae, LATENT_STEPS
from caae.codec import CodecConfig, decode_frame, encode_block
from caae.dataio import SensorWindow, SplitPlan, SyntheticConfig, make_split, synthesize, window
from caae.dpnoise import FeatureNoiser
from caae.estimators import ClassifierConfig, accuracy, macro_f1, predict, train_classifier
from caae.features import extract_matrix
from caae.seeding import derive_rng, derive_seed


def stratified_kfold(labels, k, seed):
    rng = np.random.default_rng(seed)
    folds = [[] for _ in range(k)]
    labels = np.asarray(labels)
    for cls in np.unique(labels):
        idx = np.where(labels == cls)[0]
        rng.shuffle(idx)
        for i, j in enumerate(idx):
            folds[i % k].append(j)
    return [np.sort(np.array(f)) for f in folds]


def cv_f1(X, y, k=5, seed=0, kind="logreg"):
    folds = stratified_kfold(y, k, seed)
    scores = []
    for i, fold in enumerate(folds):
        test_mask = np.zeros(len(y), dtype=bool)
        test_mask[fold] = True
        model = train_classifier(X[~test_mask], y[~test_mask], ClassifierConfig(kind=kind, seed=seed + i))
        _, pred = predict(model, X[test_mask])
        k_classes = len(np.unique(y))
        dense = {c: i for i, c in enumerate(sorted(np.unique(y)))}
        p = np.array([dense[v] for v in pred])
        t = np.array([dense[v] for v in y[test_mask]])
        scores.append(macro_f1(p, t, k_classes))
    return float(np.mean(scores))


def codec_roundtrip_windows(wins, cfg):
    out = []
    for w in wins:
        frame = encode_block(w.values, cfg)
        out.append(SensorWindow(values=decode_frame(frame), user_id=w.user_id, activity_id=w.activity_id))
    return out


def blocks_to_windows(blocks):
    return [SensorWindow(values=b.values, user_id=b.user_id, activity_id=b.activity_id) for b in blocks]


def main():
    t0 = time.time()
    cfg = SyntheticConfig(n_users=8, n_activities=4, windows_per_cell=30, seed=7)
    wins = []
    for rec in synthesize(cfg):
        wins.extend(window(rec, cfg.window_seconds))
    print(f"{len(wins)} windows, {time.time()-t0:.1f}s")

    rate = cfg.sample_rate_hz
    X, y_act, y_user = extract_matrix(wins, rate)
    print(f"features {X.shape}, {time.time()-t0:.1f}s")

    base_act = cv_f1(X, y_act, seed=1)
    base_user = cv_f1(X, y_user, seed=1)
    print(f"baseline: act={base_act:.3f} user={base_user:.3f}  ({time.time()-t0:.1f}s)")

    # ADPCM on raw windows
    ccfg = CodecConfig(bits_per_code=4, alpha=0.9, beta=1.0, s0=1.0)
    dec_wins = codec_roundtrip_windows(wins, ccfg)
    Xa, _, _ = extract_matrix(dec_wins, rate)
    a_act = cv_f1(Xa, y_act, seed=1)
    a_user = cv_f1(Xa, y_user, seed=1)
    print(f"adpcm_only: act={a_act:.3f} ({base_act - a_act:+.3f}) user={a_user:.3f} ({base_user - a_user:+.3f})  ({time.time()-t0:.1f}s)")

    # AAE
    split = make_split(wins, SplitPlan(mode="user_ratio", train_fraction=0.8, seed=3))
    acfg = AaeConfig(latent_channels=8, epochs=30, seed=5)
    model, log = train_aae(split.train, acfg)
    print(f"aae trained ({time.time()-t0:.1f}s) rec_loss {log.reconstruction[0]:.3f}->{log.reconstruction[-1]:.3f} act {log.activity[-1]:.3f} user {log.user[-1]:.3f}")
    latents = anonymize_batch(wins, model)
    lat_rate = LATENT_STEPS / cfg.window_seconds
    Xl, _, _ = extract_matrix(blocks_to_windows(latents), lat_rate)
    l_act = cv_f1(Xl, y_act, seed=1)
    l_user = cv_f1(Xl, y_user, seed=1)
    print(f"aae: act={l_act:.3f} user={l_user:.3f}  ({time.time()-t0:.1f}s)")

    # C-AAE
    dec_lat = codec_roundtrip_windows(blocks_to_windows(latents), ccfg)
    Xc, _, _ = extract_matrix(dec_lat, lat_rate)
    c_act = cv_f1(Xc, y_act, seed=1)
    c_user = cv_f1(Xc, y_user, seed=1)
    print(f"c_aae: act={c_act:.3f} user={c_user:.3f}  ({time.time()-t0:.1f}s)")
    print(f"orderings: user base {base_user:.3f} > aae {l_user:.3f} > caae {c_user:.3f}; caae-aae gap {l_user - c_user:+.3f}")
    print(f"activity: caae within {base_act - c_act:+.3f} of baseline")

    # DP sweep
    print("dp sweep:")
    for eps in (0.1, 0.5, 1.0, 3.0):
        folds = stratified_kfold(y_act, 5, 11)
        act_scores, user_scores = [], []
        for i, fold in enumerate(folds):
            mask = np.zeros(len(y_act), dtype=bool)
            mask[fold] = True
            noiser = FeatureNoiser.fit(X[~mask], eps)
            Xtr = noiser.apply(X[~mask], seed=derive_seed(1, "dp", eps, i, "train"))
            Xte = noiser.apply(X[mask], seed=derive_seed(1, "dp", eps, i, "test"))
            m_act = train_classifier(Xtr, y_act[~mask], ClassifierConfig(seed=i))
            m_user = train_classifier(Xtr, y_user[~mask], ClassifierConfig(seed=i))
            _, pa = predict(m_act, Xte)
            _, pu = predict(m_user, Xte)
            act_scores.append(macro_f1(pa, y_act[mask], 4))
            user_scores.append(macro_f1(pu, y_user[mask], 8))
        print(f"  eps={eps}: act={np.mean(act_scores):.3f} user={np.mean(user_scores):.3f} ({time.time()-t0:.1f}s)")


if __name__ == "__main__":
    main()
