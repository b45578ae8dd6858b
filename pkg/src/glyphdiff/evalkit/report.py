"""Tabular metric reports with per-column best highlighting."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional

from ..errors import ContractError

COLUMNS = ("mse", "psnr_db", "ssim", "precision", "recall", "f1")
LOWER_IS_BETTER = {"mse"}


def format_value(value: Optional[float]) -> str:
    """Up to four significant digits, no trailing zeros ("0.815", "21.33")."""
    if value is None:
        return "-"
    return format(value, ".4g")


def _validate_row(method: str, row: Mapping[str, float]) -> dict:
    clean = {}
    for col in COLUMNS:
        v = row.get(col)
        if v is None:
            clean[col] = None
            continue
        v = float(v)
        if col == "mse" and v < 0:
            raise ContractError(f"{method}: mse must be >= 0")
        if col == "ssim" and not -1.0 <= v <= 1.0:
            raise ContractError(f"{method}: ssim must be in [-1,1]")
        if col in ("precision", "recall", "f1") and not 0.0 <= v <= 1.0:
            raise ContractError(f"{method}: {col} must be in [0,1]")
        clean[col] = v
    extras = set(row) - set(COLUMNS)
    if extras:
        raise ContractError(f"{method}: unknown columns {sorted(extras)}")
    return clean


@dataclass(frozen=True)
class Report:
    dataset_id: str
    sample_count: int
    rows: dict  # method -> {column -> float|None}
    best: dict  # column -> method

    @property
    def text(self) -> str:
        headers = ["method"] + list(COLUMNS)
        lines = []
        table = [headers]
        for method, row in self.rows.items():
            cells = [method]
            for col in COLUMNS:
                cell = format_value(row[col])
                if row[col] is not None and self.best.get(col) == method:
                    cell += "*"
                cells.append(cell)
            table.append(cells)
        widths = [max(len(r[i]) for r in table) for i in range(len(headers))]
        for r, cells in enumerate(table):
            line = "  ".join(c.ljust(widths[i]) for i, c in enumerate(cells)).rstrip()
            lines.append(line)
            if r == 0:
                lines.append("  ".join("-" * w for w in widths))
        footer = f"dataset={self.dataset_id or '-'} n={self.sample_count} (* best per column)"
        return "\n".join(lines + [footer])

    def to_dict(self) -> dict:
        return {
            "dataset_id": self.dataset_id,
            "sample_count": self.sample_count,
            "rows": self.rows,
            "best": self.best,
        }

    def row_values(self, method: str, columns) -> str:
        """Formatted values of one row joined by ' / ' (for fixtures)."""
        return " / ".join(format_value(self.rows[method][c]) for c in columns)


def make_report(
    rows: Mapping[str, Mapping[str, float]],
    dataset_id: str = "",
    sample_count: int = 0,
) -> Report:
    """Build a report; ties on a column go to the first row in order."""
    clean_rows = {m: _validate_row(m, r) for m, r in rows.items()}
    best: dict = {}
    for col in COLUMNS:
        candidates = [(m, r[col]) for m, r in clean_rows.items() if r[col] is not None]
        if not candidates:
            continue
        if col in LOWER_IS_BETTER:
            best[col] = min(candidates, key=lambda mv: mv[1])[0]
        else:
            best[col] = max(candidates, key=lambda mv: mv[1])[0]
    return Report(
        dataset_id=dataset_id,
        sample_count=sample_count,
        rows=clean_rows,
        best=best,
    )
