import numpy as np
import pytest
import torch
import torch.nn as nn

from glyphdiff.consistency import (
    CharMaskAdapter,
    ConsistencyConfig,
    ConsistencyDecoder,
    TimeGrid,
    consistency_loss,
    control_forward,
    decode_consistent,
    pretrain_backbone,
    train_adapter,
)
from glyphdiff.errors import ContractError, DomainError
from glyphdiff.models import param_checksum

TOY = ConsistencyConfig(
    image_size=4,
    latent_size=1,
    base_channels=3,
    mid_channels=4,
    deep_channels=5,
    time_dim=8,
)


@pytest.fixture(scope="module")
def backbone():
    torch.manual_seed(0)
    return ConsistencyDecoder()


@pytest.fixture(scope="module")
def adapter():
    torch.manual_seed(1)
    return CharMaskAdapter()


class TestTimeGrid:
    def test_karras_endpoints_and_count(self):
        grid = TimeGrid.karras()
        assert grid.n == 18
        assert grid.t_min == pytest.approx(0.002, rel=1e-12)
        assert grid.t_max == pytest.approx(80.0, rel=1e-12)
        assert np.all(np.diff(grid.levels) > 0)

    def test_rho7_power_rule(self):
        """Level i follows the interpolated-1/rho-power formula exactly."""
        n, t_min, t_max, rho = 18, 0.002, 80.0, 7.0
        grid = TimeGrid.karras(n, t_min, t_max, rho)
        for i in range(n):
            frac = i / (n - 1)
            want = (t_min ** (1 / rho) + frac * (t_max ** (1 / rho) - t_min ** (1 / rho))) ** rho
            assert grid.levels[i] == pytest.approx(want, rel=1e-12)

    def test_serialization_roundtrip(self):
        grid = TimeGrid.karras()
        assert np.array_equal(TimeGrid.from_dict(grid.to_dict()).levels, grid.levels)


class TestZeroInitTransparency:
    def test_fresh_adapter_is_exact_identity(self, backbone, adapter):
        rng = np.random.default_rng(0)
        for _ in range(5):
            z = torch.tensor(rng.standard_normal((3, 64, 64)), dtype=torch.float32)
            l = torch.tensor(rng.standard_normal((4, 16, 16)), dtype=torch.float32)
            m = torch.tensor(rng.integers(0, 96, (64, 64)))
            sigma = torch.tensor([float(rng.uniform(0.002, 80.0))])
            plain = backbone(z, sigma, l)
            guided = control_forward(backbone, adapter, z, sigma, l, m)
            assert torch.equal(plain, guided)

    def test_all_zero_mask_taps_zero(self, adapter):
        z_scaled = torch.randn(1, 3, 64, 64)
        l_up = torch.randn(1, 4, 64, 64)
        taps = adapter(z_scaled, l_up, torch.tensor([1.0]), torch.zeros(64, 64, dtype=torch.int64))
        assert all(float(t.abs().max()) == 0.0 for t in taps)

    def test_adapter_requires_mask(self, backbone, adapter):
        z = torch.randn(3, 64, 64)
        l = torch.randn(4, 16, 16)
        with pytest.raises(ContractError):
            control_forward(backbone, adapter, z, torch.tensor([1.0]), l, None)


class TestBoundaryCondition:
    def test_exact_at_t_min_any_parameters(self):
        torch.manual_seed(5)
        model = ConsistencyDecoder()
        with torch.no_grad():
            for p in model.parameters():
                p.normal_()
        z = torch.randn(3, 64, 64)
        l = torch.randn(4, 16, 16)
        out = model(z, torch.tensor([model.config.t_min]), l)
        assert torch.equal(out, z)

    def test_away_from_t_min_differs(self, backbone):
        z = torch.randn(3, 64, 64)
        l = torch.randn(4, 16, 16)
        out = backbone(z, torch.tensor([80.0]), l)
        assert not torch.equal(out, z)


class _StubDecoder(nn.Module):
    """Outputs a constant that shifts by +0.1 at the higher noise level."""

    def __init__(self, t_lo):
        super().__init__()
        self.config = ConsistencyConfig(image_size=2, latent_size=1)
        self.t_lo = t_lo
        self.dummy = nn.Parameter(torch.zeros(1))

    def forward(self, z, sigma, latent, taps=None):
        base = torch.zeros(z.shape[0], 3, 2, 2) + self.dummy * 0
        shift = (sigma.reshape(-1, 1, 1, 1) > self.t_lo).float() * 0.1
        return base + shift


class TestConsistencyLoss:
    def test_degenerate_grid_zero_loss(self, backbone):
        grid = TimeGrid(levels=np.array([0.5, 0.5, 80.0]))
        x = torch.randn(1, 3, 64, 64)
        l = torch.randn(1, 4, 16, 16)
        eps = torch.randn(1, 3, 64, 64)
        loss = consistency_loss(backbone, None, x, l, None, 1, eps, grid)
        assert float(loss) == 0.0

    def test_squared_l2_sum_arithmetic(self):
        """Branches differing by 0.1 in each of 12 entries: loss = 0.12."""
        grid = TimeGrid(levels=np.array([1.0, 2.0]))
        stub = _StubDecoder(t_lo=1.5)
        x = torch.zeros(1, 3, 2, 2)
        eps = torch.zeros(1, 3, 2, 2)
        l = torch.zeros(1, 4, 1, 1)
        loss = consistency_loss(stub, None, x, l, None, 1, eps, grid)
        assert float(loss) == pytest.approx(0.12, abs=1e-7)

    def test_lambda_weighting(self):
        grid = TimeGrid(levels=np.array([1.0, 2.0]))
        stub = _StubDecoder(t_lo=1.5)
        x = torch.zeros(1, 3, 2, 2)
        eps = torch.zeros(1, 3, 2, 2)
        l = torch.zeros(1, 4, 1, 1)
        loss = consistency_loss(stub, None, x, l, None, 1, eps, grid, weight_fn=lambda t: 2.0)
        assert float(loss) == pytest.approx(0.24, abs=1e-7)

    def test_n_out_of_range(self, backbone):
        grid = TimeGrid.karras()
        x = torch.randn(1, 3, 64, 64)
        with pytest.raises(DomainError):
            consistency_loss(backbone, None, x, torch.randn(1, 4, 16, 16), None, 0, x, grid)
        with pytest.raises(DomainError):
            consistency_loss(backbone, None, x, torch.randn(1, 4, 16, 16), None, 18, x, grid)


def toy_instance(seed=3):
    torch.manual_seed(seed)
    backbone = ConsistencyDecoder(TOY).double()
    adapter = CharMaskAdapter(TOY, embed_dim=2).double()
    with torch.no_grad():
        for p in adapter.parameters():
            p.normal_(std=0.3)  # move off zero init to a generic point
    x = torch.randn(1, 3, 4, 4, dtype=torch.float64)
    l = torch.randn(1, 4, 1, 1, dtype=torch.float64)
    m = torch.randint(0, 96, (1, 4, 4))
    eps = torch.randn(1, 3, 4, 4, dtype=torch.float64)
    return backbone, adapter, x, l, m, eps


class TestGradientAndStopgrad:
    def test_adapter_gradient_matches_frozen_target_fd(self):
        """Autograd of the stopgrad loss must equal finite differences of
        the online branch against a frozen target (the two coincide only
        if the target真 carries no gradient)."""
        backbone, adapter, x, l, m, eps = toy_instance()
        grid = TimeGrid.karras(n=6)
        n = 3
        t_lo, t_hi = float(grid.levels[n - 1]), float(grid.levels[n])

        loss = consistency_loss(backbone, adapter, x, l, m, n, eps, grid)
        grads = torch.autograd.grad(loss, list(adapter.parameters()), allow_unused=True)

        with torch.no_grad():
            target = control_forward(
                backbone, adapter, x + t_lo * eps, torch.tensor([t_lo]), l, m
            )

        def frozen_loss():
            with torch.no_grad():
                online = control_forward(
                    backbone, adapter, x + t_hi * eps, torch.tensor([t_hi]), l, m
                )
                return float(((online - target) ** 2).sum())

        rng = np.random.default_rng(1)
        eps_fd = 1e-6
        checked = 0
        for p, g in zip(adapter.parameters(), grads):
            if g is None:
                continue
            count = min(3, p.numel())
            for flat_idx in rng.choice(p.numel(), size=count, replace=False):
                idx = np.unravel_index(flat_idx, p.shape)
                orig = float(p.data[idx])
                p.data[idx] = orig + eps_fd
                hi = frozen_loss()
                p.data[idx] = orig - eps_fd
                lo = frozen_loss()
                p.data[idx] = orig
                fd = (hi - lo) / (2 * eps_fd)
                auto = float(g[idx])
                denom = max(abs(fd), abs(auto), 1e-6)
                assert abs(fd - auto) / denom <= 1e-2, (fd, auto)
                checked += 1
        assert checked >= 10

    def test_target_branch_carries_no_gradient(self):
        backbone, adapter, x, l, m, eps = toy_instance(seed=4)
        grid = TimeGrid.karras(n=6)
        for p in backbone.parameters():
            p.requires_grad_(False)
        loss = consistency_loss(backbone, adapter, x, l, m, 2, eps, grid)
        loss.backward()
        # gradient exists (online path) ...
        assert any(
            p.grad is not None and p.grad.abs().sum() > 0 for p in adapter.parameters()
        )
        # ... and shrinking the loss to zero by collapsing both branches
        # to the same level keeps every adapter grad at exactly zero
        for p in adapter.parameters():
            p.grad = None
        degenerate = TimeGrid(levels=np.array([1.0, 1.0, 2.0]))
        loss2 = consistency_loss(backbone, adapter, x, l, m, 1, eps, degenerate)
        loss2.backward()
        for p in adapter.parameters():
            if p.grad is not None:
                assert float(p.grad.abs().max()) == 0.0


class TestTraining:
    @pytest.fixture(scope="class")
    def toy_corpus(self):
        torch.manual_seed(9)
        images = torch.zeros(6, 3, 64, 64)
        images[:, 0] = 0.5
        images[:, :, 24:40, 24:40] = -0.8
        latents = torch.randn(6, 4, 16, 16) * 0.5
        masks = torch.zeros(6, 64, 64, dtype=torch.int64)
        masks[:, 24:40, 24:40] = 34
        return images, latents, masks

    def test_pretrain_boundary_preserved_and_loss_logged(self, toy_corpus):
        images, latents, _ = toy_corpus
        grid = TimeGrid.karras(n=6)
        model, losses = pretrain_backbone(
            images, latents, grid, steps=5, seed=0, config=ConsistencyConfig(), batch_size=3
        )
        assert len(losses) == 5 and all(np.isfinite(v) for v in losses)
        z = torch.randn(3, 64, 64)
        out = model(z, torch.tensor([model.config.t_min]), torch.randn(4, 16, 16))
        assert torch.equal(out, z)

    def test_adapter_training_freezes_backbone(self, toy_corpus):
        images, latents, masks = toy_corpus
        torch.manual_seed(2)
        backbone = ConsistencyDecoder()
        before = param_checksum(backbone)
        grid = TimeGrid.karras(n=6)
        adapter, losses = train_adapter(
            backbone, images, latents, masks, grid, steps=4, seed=0, batch_size=3
        )
        assert param_checksum(backbone) == before
        assert len(losses) == 4
        # training moved the adapter off exact-zero injection
        taps = adapter(
            torch.randn(1, 3, 64, 64),
            torch.randn(1, 4, 64, 64),
            torch.tensor([1.0]),
            masks[:1],
        )
        assert any(float(t.abs().max()) > 0 for t in taps)

    def test_empty_corpus_rejected(self):
        grid = TimeGrid.karras(n=6)
        with pytest.raises(ContractError):
            pretrain_backbone(torch.zeros(0, 3, 64, 64), torch.zeros(0, 4, 16, 16), grid, 1, 0)
        torch.manual_seed(0)
        with pytest.raises(ContractError):
            train_adapter(
                ConsistencyDecoder(),
                torch.zeros(0, 3, 64, 64),
                torch.zeros(0, 4, 16, 16),
                torch.zeros(0, 64, 64, dtype=torch.int64),
                grid,
                1,
                0,
            )


class TestDecode:
    def test_deterministic_given_seed(self, backbone, adapter):
        l = torch.randn(4, 16, 16)
        m = torch.randint(0, 96, (64, 64))
        a = decode_consistent(backbone, adapter, l, m, n_steps=1, seed=3)
        b = decode_consistent(backbone, adapter, l, m, n_steps=1, seed=3)
        assert torch.equal(a, b)

    def test_zero_adapter_equals_backbone_decode(self, backbone, adapter):
        l = torch.randn(4, 16, 16)
        m = torch.randint(0, 96, (64, 64))
        guided = decode_consistent(backbone, adapter, l, m, n_steps=2, seed=3)
        plain = decode_consistent(backbone, None, l, None, n_steps=2, seed=3)
        assert torch.equal(guided, plain)

    def test_multistep_shapes(self, backbone):
        l = torch.randn(4, 16, 16)
        out = decode_consistent(backbone, None, l, None, n_steps=4, seed=0)
        assert out.shape == (3, 64, 64)

    def test_bad_steps(self, backbone):
        with pytest.raises(DomainError):
            decode_consistent(backbone, None, torch.randn(4, 16, 16), None, n_steps=0)
