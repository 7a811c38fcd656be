"""Process-wide session: singleton rule, conditioning cache, environment."""

import concurrent.futures

import pytest
import torch

import denoiser_bridge as db


def _z(seed: int, shape=(4, 6, 6)) -> torch.Tensor:
    return torch.randn(shape, generator=torch.Generator().manual_seed(seed))


class TestConditioningVector:
    def test_empty_id_is_zeros(self):
        assert torch.equal(db.conditioning_vector(""), torch.zeros(16))

    def test_deterministic(self):
        assert torch.equal(db.conditioning_vector("a cat"), db.conditioning_vector("a cat"))

    def test_distinct_ids_distinct_vectors(self):
        assert not torch.equal(db.conditioning_vector("a cat"), db.conditioning_vector("a dog"))


class TestConditioningCache:
    def test_cache_fills_and_evicts_at_limit(self, session):
        z = _z(0)
        for i in range(db.COND_CACHE_SIZE + 10):
            session.predict_eps(z, 101, f"prompt-{i}")
        assert session.cached_conditionings == db.COND_CACHE_SIZE
        assert "prompt-0" not in session._cond_cache
        assert f"prompt-{db.COND_CACHE_SIZE + 9}" in session._cond_cache

    def test_reuse_refreshes_entry(self, session):
        z = _z(1)
        session.predict_eps(z, 101, "keep")
        for i in range(db.COND_CACHE_SIZE - 1):
            session.predict_eps(z, 101, f"filler-{i}")
        session.predict_eps(z, 101, "keep")  # touch: now most recent
        session.predict_eps(z, 101, "one-more")
        assert "keep" in session._cond_cache
        assert "filler-0" not in session._cond_cache

    def test_cached_and_uncached_results_agree(self, session):
        z = _z(2)
        first = session.predict_eps(z, 101, "same prompt")
        second = session.predict_eps(z, 101, "same prompt")
        assert torch.equal(first, second)


class TestProcessSingleton:
    def test_first_call_creates_then_returns_same_object(self):
        a = db.get_session("toy-v1")
        b = db.get_session("toy-v1")
        c = db.get_session()
        assert a is b is c

    def test_second_model_id_is_an_error(self):
        db.get_session("toy-v1")
        with pytest.raises(RuntimeError, match="one model per process"):
            db.get_session("toy-v2")

    def test_reset_allows_a_new_model(self):
        db.get_session("toy-v1")
        db.reset_session()
        assert db.get_session("toy-v2").model_id == "toy-v2"

    def test_unknown_model_id_fails_at_startup(self):
        with pytest.raises(ValueError, match="unknown model id"):
            db.get_session("resnet-9000")


class TestEnvironment:
    def test_device_from_environment(self, monkeypatch):
        monkeypatch.setenv("BRIDGE_DEVICE", "cpu")
        assert db.BridgeSession().device == "cpu"

    def test_device_argument_wins(self, monkeypatch):
        monkeypatch.setenv("BRIDGE_DEVICE", "meta")
        assert db.BridgeSession(device="cpu").device == "cpu"

    def test_weights_dir_from_environment(self, monkeypatch, tmp_path):
        monkeypatch.setenv("BRIDGE_MODEL_PATH", str(tmp_path))
        session = db.BridgeSession()
        session.predict_eps(_z(3), 101, "")
        assert list(tmp_path.glob("eps-seed1-c4.pt"))


class TestSessionOps:
    def test_encode_decode_roundtrip(self, session, smooth_image):
        image = smooth_image(4)
        latent = session.encode(image)
        assert latent.shape == (12, 16, 16)
        assert (session.decode(latent) - image).abs().mean().item() < db.RECONSTRUCTION_ERROR_BOUND

    def test_score_shape_and_range(self, session, smooth_image):
        scores = session.score(smooth_image(5))
        assert scores.shape == (32, 32)
        assert 0.0 <= scores.min().item() and scores.max().item() <= 1.0

    def test_concurrent_predictions_are_serialized_safely(self, session):
        z = _z(6)
        expected = session.predict_eps(z, 181, "shared")

        def call(i: int) -> bool:
            out = session.predict_eps(z, 181, "shared")
            return torch.equal(out, expected)

        with concurrent.futures.ThreadPoolExecutor(max_workers=8) as pool:
            assert all(pool.map(call, range(32)))
