import numpy as np
import pytest
import torch

from glyphdiff.errors import ContractError
from glyphdiff.vae import GlyphVae, VaeConfig, train_vae


@pytest.fixture(scope="module")
def vae():
    torch.manual_seed(3)
    return GlyphVae()


class TestShapes:
    def test_encode_shape(self, vae):
        z = vae.encode(torch.rand(3, 64, 64) * 2 - 1)
        assert z.shape == (4, 16, 16)

    def test_batched_roundtrip_shapes(self, vae):
        x = torch.rand(5, 3, 64, 64) * 2 - 1
        z = vae.encode(x)
        assert z.shape == (5, 4, 16, 16)
        assert vae.decode(z).shape == (5, 3, 64, 64)

    def test_wrong_shape_rejected(self, vae):
        with pytest.raises(ContractError):
            vae.encode(torch.zeros(3, 32, 32))
        with pytest.raises(ContractError):
            vae.decode(torch.zeros(4, 8, 8))

    def test_non_finite_rejected(self, vae):
        x = torch.zeros(3, 64, 64)
        x[0, 0, 0] = float("nan")
        with pytest.raises(ContractError):
            vae.encode(x)
        z = torch.zeros(4, 16, 16)
        z[0, 0, 0] = float("inf")
        with pytest.raises(ContractError):
            vae.decode(z)

    def test_encode_deterministic(self, vae):
        x = torch.rand(3, 64, 64) * 2 - 1
        assert torch.equal(vae.encode(x), vae.encode(x))


class TestTraining:
    def test_one_step_changes_parameters(self):
        images = np.random.default_rng(0).uniform(-1, 1, (8, 3, 64, 64)).astype(np.float32)
        model, losses = train_vae(images, steps=1, seed=5, batch_size=4)
        torch.manual_seed(5)
        fresh = GlyphVae()
        assert any(
            not torch.equal(a, b) for a, b in zip(fresh.parameters(), model.parameters())
        )
        assert len(losses) == 1 and np.isfinite(losses[0])

    def test_empty_corpus_rejected(self):
        with pytest.raises(ContractError):
            train_vae(np.zeros((0, 3, 64, 64), dtype=np.float32), steps=1, seed=0)

    def test_training_deterministic(self):
        images = np.random.default_rng(1).uniform(-1, 1, (8, 3, 64, 64)).astype(np.float32)
        m1, l1 = train_vae(images, steps=3, seed=9, batch_size=4)
        m2, l2 = train_vae(images, steps=3, seed=9, batch_size=4)
        assert l1 == l2
        assert all(torch.equal(a, b) for a, b in zip(m1.parameters(), m2.parameters()))
        assert torch.equal(m1.latent_scale, m2.latent_scale)
