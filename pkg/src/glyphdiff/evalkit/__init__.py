"""Dataset synthesis, image metrics, template OCR, and reporting."""

from .dataset import DatasetConfig, DatasetManifest, generate_dataset, load_manifest
from .metrics import mse, psnr, ssim
from .ocr import ocr_exact_match, template_ocr
from .report import make_report

__all__ = [
    "DatasetConfig",
    "DatasetManifest",
    "generate_dataset",
    "load_manifest",
    "mse",
    "psnr",
    "ssim",
    "template_ocr",
    "ocr_exact_match",
    "make_report",
]
