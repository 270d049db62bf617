import numpy as np
import pytest

from caae import codec
from caae.anonymizer import (
    LATENT_STEPS,
    AaeConfig,
    AaeModel,
    LatentBlock,
    anonymize,
    anonymize_batch,
    bundle_from_bytes,
    bundle_to_bytes,
    load_bundle,
    reconstruct,
    reconstruction_mse,
    save_bundle,
    train_aae,
)
from caae.dataio import SensorWindow, SyntheticConfig, synthesize, window
from caae.errors import ConfigError, DataError


def tiny_windows(n_users=3, n_activities=2, per_cell=4, seconds=0.64, seed=0):
    cfg = SyntheticConfig(
        n_users=n_users,
        n_activities=n_activities,
        windows_per_cell=per_cell,
        window_seconds=seconds,
        seed=seed,
    )
    wins = []
    for rec in synthesize(cfg):
        wins.extend(window(rec, seconds))
    return wins


def tiny_config(**overrides):
    base = dict(
        latent_channels=4,
        encoder_widths=(32,),
        decoder_widths=(32,),
        head_widths=(16,),
        epochs=5,
        batch_size=16,
        lr=0.02,
        seed=1,
    )
    base.update(overrides)
    return AaeConfig(**base)


@pytest.fixture(scope="module")
def trained():
    wins = tiny_windows()
    model, log = train_aae(wins, tiny_config())
    return wins, model, log


class TestTraining:
    def test_deterministic_per_seed(self):
        wins = tiny_windows(per_cell=2)
        cfg = tiny_config(epochs=3)
        m1, _ = train_aae(wins, cfg)
        m2, _ = train_aae(wins, cfg)
        for n1, n2 in zip(
            (m1.encoder, m1.decoder, m1.activity_head, m1.user_head),
            (m2.encoder, m2.decoder, m2.activity_head, m2.user_head),
        ):
            for l1, l2 in zip(n1.layers, n2.layers):
                np.testing.assert_array_equal(l1.weights, l2.weights)
                np.testing.assert_array_equal(l1.biases, l2.biases)

    def test_pure_autoencoder_mse_decreases(self):
        wins = tiny_windows(per_cell=6)
        cfg = tiny_config(lambda_act=0.0, lambda_id=0.0, epochs=10, lr=0.05)
        _, log = train_aae(wins, cfg)
        rec = log.reconstruction
        assert len(rec) == 10
        assert all(b < a for a, b in zip(rec, rec[1:]))

    def test_trained_beats_untrained_reconstruction(self, trained):
        wins, model, _ = trained
        cfg = tiny_config(epochs=1)
        fresh_cfg = tiny_config(epochs=1, seed=99)
        untrained, _ = train_aae(wins[:20], AaeConfig(**{**fresh_cfg.__dict__, "epochs": 1, "lr": 1e-9}))
        trained_model, _ = train_aae(wins, tiny_config(lambda_act=0.0, lambda_id=0.0, epochs=15, lr=0.05))
        assert reconstruction_mse(wins[:20], trained_model) < reconstruction_mse(wins[:20], untrained)

    def test_rejects_single_class(self):
        wins = [w for w in tiny_windows() if w.user_id == 0]
        with pytest.raises(DataError):
            train_aae(wins, tiny_config())

    def test_rejects_mixed_shapes(self):
        wins = tiny_windows(per_cell=2)
        wins.append(SensorWindow(values=np.zeros((6, 10)), user_id=0, activity_id=0))
        with pytest.raises(DataError):
            train_aae(wins, tiny_config())

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            AaeConfig(latent_channels=0)
        with pytest.raises(ConfigError):
            AaeConfig(lambda_id=-0.5)

    def test_gradient_reversal_isolated_to_user_term(self):
        # instrument the latent gradient on a fixed batch: raising lambda_id
        # from 0 must leave the reconstruction and activity contributions
        # untouched and only add the sign-flipped user-head gradient
        from caae.neural import LossSpec, backward, forward, grad_reverse

        wins = tiny_windows(per_cell=2)
        model, _ = train_aae(wins, tiny_config(epochs=2))
        X = np.stack([w.values for w in wins[:8]])
        Xn = (X - model.norm_mean[None, :, None]) / model.norm_sd[None, :, None]
        flat = Xn.reshape(8, -1)
        z = forward(model.encoder, flat).output
        dec_cache = forward(model.decoder, z)
        act_cache = forward(model.activity_head, z)
        user_cache = forward(model.user_head, z)
        y = np.array([model.activity_classes.index(w.activity_id) for w in wins[:8]])
        u = np.array([model.user_classes.index(w.user_id) for w in wins[:8]])
        _, dz_rec = backward(model.decoder, dec_cache, LossSpec("mse", 1.0), flat)
        _, dz_act = backward(model.activity_head, act_cache, LossSpec("cross_entropy", 1.0), y)
        _, dz_user = backward(model.user_head, user_cache, LossSpec("cross_entropy", 1.0), u)

        total_at_zero = dz_rec + dz_act + grad_reverse(dz_user, 0.0)
        total_at_two = dz_rec + dz_act + grad_reverse(dz_user, 2.0)
        np.testing.assert_array_equal(total_at_zero, dz_rec + dz_act)
        np.testing.assert_allclose(total_at_two - total_at_zero, -2.0 * dz_user, atol=1e-15)


class TestAnonymize:
    def test_canonical_shape_contract(self):
        wins = []
        rng = np.random.default_rng(0)
        for u in range(2):
            for a in range(2):
                for _ in range(3):
                    wins.append(
                        SensorWindow(values=rng.normal(size=(6, 128)), user_id=u, activity_id=a)
                    )
        cfg = tiny_config(latent_channels=8, epochs=1)
        model, _ = train_aae(wins, cfg)
        block = anonymize(wins[0], model)
        assert block.values.shape == (8, 16)
        assert LATENT_STEPS == 16

    def test_identical_windows_identical_latents(self, trained):
        wins, model, _ = trained
        a = anonymize(wins[0], model)
        b = anonymize(wins[0], model)
        np.testing.assert_array_equal(a.values, b.values)

    def test_labels_copied(self, trained):
        wins, model, _ = trained
        block = anonymize(wins[5], model)
        assert (block.user_id, block.activity_id) == (wins[5].user_id, wins[5].activity_id)

    def test_latent_feeds_codec_directly(self, trained):
        wins, model, _ = trained
        block = anonymize(wins[0], model)
        frame = codec.encode_block(block.values, codec.CodecConfig())
        assert frame.channel_count == model.latent_channels
        assert frame.block_length == LATENT_STEPS

    def test_batch_matches_single(self, trained):
        wins, model, _ = trained
        batch = anonymize_batch(wins[:5], model)
        for w, blk in zip(wins[:5], batch):
            np.testing.assert_allclose(blk.values, anonymize(w, model).values, atol=1e-10)

    def test_shape_mismatch_rejected(self, trained):
        _, model, _ = trained
        with pytest.raises(DataError):
            anonymize(SensorWindow(values=np.zeros((6, 10)), user_id=0, activity_id=0), model)


class TestReconstruct:
    def test_roundtrip_finite(self, trained):
        wins, model, _ = trained
        rec = reconstruct(anonymize(wins[0], model), model)
        assert rec.values.shape == wins[0].values.shape
        assert np.all(np.isfinite(rec.values))

    def test_zero_window_no_nans(self, trained):
        _, model, _ = trained
        zero = SensorWindow(
            values=np.zeros((model.input_channels, model.input_length)), user_id=0, activity_id=0
        )
        rec = reconstruct(anonymize(zero, model), model)
        assert np.all(np.isfinite(rec.values))

    def test_latent_shape_checked(self, trained):
        _, model, _ = trained
        with pytest.raises(DataError):
            reconstruct(LatentBlock(values=np.zeros((2, 2)), user_id=0, activity_id=0), model)


class TestBundle:
    def test_roundtrip(self, trained, tmp_path):
        wins, model, _ = trained
        path = tmp_path / "model.aae"
        save_bundle(model, path)
        back = load_bundle(path)
        assert back.config == model.config
        assert back.input_channels == model.input_channels
        assert back.activity_classes == model.activity_classes
        assert back.user_classes == model.user_classes
        # float32 storage: encoder outputs stay close
        a = anonymize(wins[0], model).values
        b = anonymize(wins[0], back).values
        np.testing.assert_allclose(a, b, atol=1e-4)

    def test_stable_bytes(self, trained):
        _, model, _ = trained
        assert bundle_to_bytes(model) == bundle_to_bytes(model)

    def test_garbage_rejected(self):
        with pytest.raises(DataError):
            bundle_from_bytes(b"not a bundle")

    def test_version_checked(self, trained):
        import json

        _, model, _ = trained
        doc = json.loads(bundle_to_bytes(model))
        doc["format_version"] = 99
        with pytest.raises(DataError):
            bundle_from_bytes(json.dumps(doc).encode())
