"""DDPM noise schedule with the clean-signal convention at t=0.

``alpha_bar`` has T+1 entries so that index t is the product over steps
1..t and index 0 is exactly 1: forward-noising at t=0 returns the input
unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from .errors import ContractError, DomainError


@dataclass(frozen=True)
class NoiseSchedule:
    betas: np.ndarray  # (T,) float64, strictly in (0,1), non-decreasing

    def __post_init__(self) -> None:
        betas = np.asarray(self.betas, dtype=np.float64)
        if betas.ndim != 1 or betas.size == 0:
            raise ContractError("betas must be a non-empty 1-D array")
        if np.any(betas <= 0) or np.any(betas >= 1):
            raise ContractError("betas must lie strictly in (0,1)")
        if np.any(np.diff(betas) < 0):
            raise ContractError("betas must be non-decreasing")
        object.__setattr__(self, "betas", betas)

    @property
    def T(self) -> int:
        return int(self.betas.size)

    @property
    def alphas(self) -> np.ndarray:
        return 1.0 - self.betas

    @property
    def alpha_bar(self) -> np.ndarray:
        return np.concatenate([[1.0], np.cumprod(self.alphas)])

    @classmethod
    def linear(
        cls,
        T: int = 50,
        beta_start: float = 1e-4,
        beta_end: float = 0.02,
        ref_steps: int = 1000,
    ) -> "NoiseSchedule":
        """Respacing of a linear ``ref_steps`` schedule down to T steps.

        Each new beta absorbs an equal slice of the reference schedule's
        cumulative log-signal, computed from the continuum limit
        log abar(s) = ref_steps * integral_0^s log(1 - beta(u)) du, which
        keeps betas strictly increasing and inside (0,1) for any T while
        matching the long schedule's terminal signal level.
        """

        def log_abar(s: np.ndarray) -> np.ndarray:
            c0 = 1.0 - beta_start
            delta = beta_end - beta_start
            if delta == 0:
                return ref_steps * s * np.log(c0)
            cs = c0 - delta * s
            return (ref_steps / delta) * (
                c0 * np.log(c0) - c0 - cs * np.log(cs) + cs
            )

        grid = log_abar(np.linspace(0.0, 1.0, T + 1))
        betas = 1.0 - np.exp(np.diff(grid))
        return cls(betas=betas)

    def to_dict(self) -> dict:
        return {"betas": self.betas.tolist()}

    @classmethod
    def from_dict(cls, doc: dict) -> "NoiseSchedule":
        return cls(betas=np.asarray(doc["betas"], dtype=np.float64))


def forward_noise(
    x0: torch.Tensor, t: int, eps: torch.Tensor, sched: NoiseSchedule
) -> torch.Tensor:
    """Closed-form forward diffusion: sqrt(abar_t) x0 + sqrt(1-abar_t) eps."""
    if not 0 <= t <= sched.T:
        raise DomainError(f"t={t} outside [0, {sched.T}]")
    if eps.shape != x0.shape:
        raise ContractError(f"eps shape {tuple(eps.shape)} != x0 shape {tuple(x0.shape)}")
    abar = float(sched.alpha_bar[t])
    return np.sqrt(abar) * x0 + np.sqrt(1.0 - abar) * eps
