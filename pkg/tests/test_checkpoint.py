import numpy as np
import pytest
import torch

from glyphdiff.checkpoint import (
    CheckpointError,
    checkpoint_hash,
    load_checkpoint,
    load_section,
    save_checkpoint,
)
from glyphdiff import modelio
from glyphdiff.consistency import CharMaskAdapter, ConsistencyDecoder, TimeGrid
from glyphdiff.denoiser import LatentDenoiser
from glyphdiff.enhance import UpscaleEnhancer
from glyphdiff.schedule import NoiseSchedule
from glyphdiff.vae import GlyphVae


class TestContainer:
    def test_roundtrip_exact(self, tmp_path):
        path = tmp_path / "x.ctxt"
        rng = np.random.default_rng(0)
        sections = {
            "alpha": {"w": rng.standard_normal((3, 4)).astype(np.float32)},
            "beta": {"b": rng.standard_normal(7).astype(np.float32), "s": np.float32(2.5).reshape(())},
        }
        save_checkpoint(path, sections, {"note": 1})
        loaded, meta = load_checkpoint(path)
        assert meta == {"note": 1}
        assert np.array_equal(loaded["alpha"]["w"], sections["alpha"]["w"])
        assert np.array_equal(loaded["beta"]["b"], sections["beta"]["b"])
        assert loaded["beta"]["s"].shape == ()

    def test_magic_enforced(self, tmp_path):
        path = tmp_path / "bad.ctxt"
        path.write_bytes(b"NOPE" + b"\x00" * 16)
        with pytest.raises(CheckpointError, match="magic"):
            load_checkpoint(path)

    def test_truncated_payload(self, tmp_path):
        path = tmp_path / "x.ctxt"
        save_checkpoint(path, {"s": {"w": np.zeros((8, 8), np.float32)}}, {})
        raw = path.read_bytes()
        path.write_bytes(raw[:-16])
        with pytest.raises(CheckpointError, match="truncated"):
            load_checkpoint(path)

    def test_missing_section(self, tmp_path):
        path = tmp_path / "x.ctxt"
        save_checkpoint(path, {"s": {"w": np.zeros(3, np.float32)}}, {})
        with pytest.raises(CheckpointError, match="no section"):
            load_section(path, "other")

    def test_hash_stable_and_content_sensitive(self, tmp_path):
        p1, p2 = tmp_path / "a.ctxt", tmp_path / "b.ctxt"
        arr = np.ones(5, np.float32)
        save_checkpoint(p1, {"s": {"w": arr}}, {})
        save_checkpoint(p2, {"s": {"w": arr}}, {})
        assert checkpoint_hash(p1) == checkpoint_hash(p2)
        save_checkpoint(p2, {"s": {"w": arr * 2}}, {})
        assert checkpoint_hash(p1) != checkpoint_hash(p2)


class TestModelRoundtrips:
    def test_vae(self, tmp_path):
        torch.manual_seed(0)
        model = GlyphVae()
        model.latent_scale.fill_(0.37)
        path = tmp_path / "vae.ctxt"
        modelio.save_vae(path, model)
        again = modelio.load_vae(path)
        x = torch.rand(3, 64, 64) * 2 - 1
        assert torch.equal(model.encode(x), again.encode(x))

    def test_denoiser_with_schedule(self, tmp_path):
        torch.manual_seed(1)
        model = LatentDenoiser()
        sched = NoiseSchedule.linear(T=25)
        path = tmp_path / "den.ctxt"
        modelio.save_denoiser(path, model, sched)
        again, sched2 = modelio.load_denoiser(path)
        assert np.array_equal(sched2.betas, sched.betas)
        x = torch.randn(1, 4, 16, 16)
        args = (
            torch.tensor([0.5]),
            torch.zeros(1, 64, 64, dtype=torch.int64),
            torch.ones(1, 64, 64),
            torch.zeros(1, dtype=torch.int64),
        )
        assert torch.equal(model(x, *args), again(x, *args))

    def test_enhancer(self, tmp_path):
        torch.manual_seed(2)
        model = UpscaleEnhancer()
        with torch.no_grad():
            for p in model.parameters():
                p.normal_()
        path = tmp_path / "enh.ctxt"
        modelio.save_enhancer(path, model)
        again = modelio.load_enhancer(path)
        t = torch.randn(3, 64, 64)
        assert torch.equal(model(t), again(t))

    def test_cm_pair(self, tmp_path):
        torch.manual_seed(3)
        backbone = ConsistencyDecoder()
        adapter = CharMaskAdapter()
        grid = TimeGrid.karras()
        modelio.save_cm_backbone(tmp_path / "bb.ctxt", backbone, grid)
        modelio.save_cm_adapter(tmp_path / "ad.ctxt", adapter)
        bb2, grid2 = modelio.load_cm_backbone(tmp_path / "bb.ctxt")
        ad2 = modelio.load_cm_adapter(tmp_path / "ad.ctxt")
        assert np.array_equal(grid2.levels, grid.levels)
        z = torch.randn(3, 64, 64)
        l = torch.randn(4, 16, 16)
        assert torch.equal(
            backbone(z, torch.tensor([2.0]), l), bb2(z, torch.tensor([2.0]), l)
        )
        m = torch.randint(0, 96, (64, 64))
        for t1, t2 in zip(adapter(m), ad2(m)):
            assert torch.equal(t1, t2)
