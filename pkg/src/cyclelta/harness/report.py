"""Aggregate per-run MoC grids into a method comparison table."""
from __future__ import annotations

import io
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..errors import DataError, InputError
from ..evalmoc import EvalGrid

_SEED_SUFFIX = re.compile(r"_seed\d+$")

Cell = Tuple[float, float]


def method_name(path) -> str:
    """``runs/full_seed2.csv`` -> ``full``."""
    return _SEED_SUFFIX.sub("", Path(path).stem)


@dataclass
class MethodSummary:
    name: str
    runs: List[EvalGrid]

    @property
    def cells(self) -> List[Cell]:
        return self.runs[0].cells()

    def values(self, cell: Cell) -> np.ndarray:
        return np.array([g.moc[cell] for g in self.runs])

    def mean(self, cell: Cell) -> float:
        return float(np.mean(self.values(cell)))

    def std(self, cell: Cell) -> float:
        """Sample standard deviation over runs (0 for a single run)."""
        v = self.values(cell)
        return float(np.std(v, ddof=1)) if v.size > 1 else 0.0


def summarize(grids: Sequence[Tuple[str, EvalGrid]]) -> Dict[str, MethodSummary]:
    """Group ``(method, grid)`` pairs by method, preserving first-seen order."""
    if not grids:
        raise InputError("report needs at least one results file")
    out: Dict[str, MethodSummary] = {}
    for name, grid in grids:
        out.setdefault(name, MethodSummary(name, [])).runs.append(grid)
    ref = grids[0][1].cells()
    for m in out.values():
        for g in m.runs:
            if g.cells() != ref:
                raise DataError(f"{m.name}: grid cells differ from the first input")
    return out


def load_results(paths: Sequence) -> Dict[str, MethodSummary]:
    if not paths:
        raise InputError("report needs at least one results file")
    return summarize([(method_name(p), EvalGrid.read_csv(p)) for p in paths])


def to_csv(methods: Dict[str, MethodSummary], baseline: Optional[str] = None) -> str:
    """One row per (method, cell): mean, std, run count, delta vs baseline mean, raw per-run values."""
    baseline = baseline or next(iter(methods))
    if baseline not in methods:
        raise InputError(f"baseline {baseline!r} not among methods {list(methods)}")
    base = methods[baseline]
    width = max(len(m.runs) for m in methods.values())
    buf = io.StringIO()
    buf.write("method,obs,pred,mean,std,n,delta," + ",".join(f"run{i}" for i in range(width)) + "\n")
    for m in methods.values():
        for cell in m.cells:
            raw = [f"{v:.6f}" for v in m.values(cell)] + [""] * (width - len(m.runs))
            delta = m.mean(cell) - base.mean(cell)
            buf.write(
                f"{m.name},{cell[0]},{cell[1]},{m.mean(cell):.6f},{m.std(cell):.6f},{len(m.runs)},{delta:+.6f},"
                + ",".join(raw)
                + "\n"
            )
    return buf.getvalue()


def to_text(methods: Dict[str, MethodSummary], baseline: Optional[str] = None) -> str:
    """Observation rows x prediction columns per method, MoC in percent as mean ± std."""
    baseline = baseline or next(iter(methods))
    base = methods[baseline]
    first = next(iter(methods.values()))
    obs = sorted({c[0] for c in first.cells})
    pred = sorted({c[1] for c in first.cells})
    lines = []
    for m in methods.values():
        lines.append(f"{m.name} ({len(m.runs)} run{'s' if len(m.runs) != 1 else ''})")
        lines.append("obs\\pred " + "".join(f"{int(round(b * 100)):>22}%" for b in pred))
        for a in obs:
            row = f"{int(round(a * 100)):>7}% "
            for b in pred:
                cell = f"{100 * m.mean((a, b)):.2f}±{100 * m.std((a, b)):.2f}"
                if m.name != baseline:
                    cell += f" ({100 * (m.mean((a, b)) - base.mean((a, b))):+.2f})"
                row += f"{cell:>23}"
            lines.append(row)
        lines.append("")
    return "\n".join(lines)
