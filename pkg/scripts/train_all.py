#!/usr/bin/env python3
"""Run the full desk-scale training pipeline into an artifacts directory.

Stages already finished (matching run-config hash) are skipped, so the
script is safe to re-run after interruptions. The acceptance test suite
reuses the same directory via GLYPHDIFF_TRAIN_CACHE.

Usage:
    python scripts/train_all.py [--root artifacts/desk] [--quick]
"""

import argparse
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from glyphdiff.deskrun import DeskRunConfig, ensure_desk_run


def main() -> int:
    parser = argparse.ArgumentParser()
    parser.add_argument("--root", default="artifacts/desk")
    parser.add_argument(
        "--quick",
        action="store_true",
        help="tiny run for sanity checks, not for the acceptance criteria",
    )
    args = parser.parse_args()
    config = DeskRunConfig()
    if args.quick:
        config = DeskRunConfig(
            train_count=60,
            heldout_count=12,
            small_count=12,
            vae_steps=80,
            denoiser_steps=60,
            enhancer_steps=40,
            backbone_steps=60,
            adapter_steps=40,
        )
    t0 = time.time()
    art = ensure_desk_run(args.root, config)
    print(f"artifacts under {art.root} ({time.time() - t0:.0f}s total)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
