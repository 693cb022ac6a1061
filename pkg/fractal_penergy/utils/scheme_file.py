"""Readers for scheme definitions, measure weights and covering families."""

import json
import re
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np

from fractal_penergy.core.errors import SchemeParseError
from fractal_penergy.services.partition_service import BUILTIN_SCHEMES, builtin_scheme
from fractal_penergy.services.types import ADJACENCY_MODES, CellWord, SubdivisionScheme

_HEADER = re.compile(r"^L=(\d+)\s+mode=(\w+)(?:\s+dim=([12]))?\s*$")


def parse_scheme(text: str, name: str = "custom") -> SubdivisionScheme:
    """Header ``L=<int> mode=<closure|edge> [dim=1]`` followed by a 0/1 grid."""
    lines = [ln.strip() for ln in text.splitlines()]
    lines = [ln for ln in lines if ln and not ln.startswith("#")]
    if not lines:
        raise SchemeParseError(f"scheme {name!r} is empty")
    match = _HEADER.match(lines[0])
    if match is None:
        raise SchemeParseError(
            f"scheme {name!r}: bad header {lines[0]!r}, expected 'L=<int> mode=<closure|edge>'"
        )
    side, mode = int(match.group(1)), match.group(2)
    dimension = int(match.group(3) or 2)
    if mode not in ADJACENCY_MODES:
        raise SchemeParseError(f"scheme {name!r}: unknown mode {mode!r}")
    rows = lines[1:]
    expected_rows = 1 if dimension == 1 else side
    if len(rows) != expected_rows:
        raise SchemeParseError(
            f"scheme {name!r}: expected {expected_rows} grid rows, got {len(rows)}"
        )
    kept: List[Tuple[int, ...]] = []
    for i, row in enumerate(rows):
        if len(row) != side or set(row) - {"0", "1"}:
            raise SchemeParseError(
                f"scheme {name!r}: row {i + 1} must be {side} characters of 0/1, got {row!r}"
            )
        for j, ch in enumerate(row):
            if ch == "1":
                kept.append((j,) if dimension == 1 else (i, j))
    try:
        return SubdivisionScheme(name, side, tuple(kept), dimension=dimension, adjacency_mode=mode)
    except ValueError as exc:
        raise SchemeParseError(f"scheme {name!r}: {exc}") from exc


def load_scheme(source: str, adjacency_mode: Optional[str] = None) -> SubdivisionScheme:
    """A built-in name or the path of a scheme file."""
    if source in BUILTIN_SCHEMES:
        return builtin_scheme(source, adjacency_mode)
    path = Path(source)
    if not path.is_file():
        return builtin_scheme(source, adjacency_mode)
    try:
        text = path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise SchemeParseError(f"cannot read scheme file {path}: {exc}") from exc
    scheme = parse_scheme(text, name=path.stem)
    if adjacency_mode is not None and adjacency_mode != scheme.adjacency_mode:
        scheme = scheme.with_mode(adjacency_mode)
    return scheme


def load_weights(path: Path) -> List[float]:
    """One real per kept cell, whitespace separated or as a JSON list."""
    try:
        text = path.read_text(encoding="utf-8").strip()
        values = json.loads(text) if text.startswith("[") else [float(t) for t in text.split()]
    except (OSError, ValueError) as exc:
        raise SchemeParseError(f"cannot read weights from {path}: {exc}") from exc
    if not values:
        raise SchemeParseError(f"weights file {path} is empty")
    return [float(v) for v in values]


def load_covering(path: Path, branching: int) -> Tuple[int, List[np.ndarray]]:
    """``{"level": n, "patches": [["0.1", ...], ...]}`` as (level, index arrays)."""
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
        level = int(raw["level"])
        patches = [[CellWord.parse(str(w)) for w in patch] for patch in raw["patches"]]
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise SchemeParseError(f"cannot read covering from {path}: {exc}") from exc
    out: List[np.ndarray] = []
    for patch in patches:
        bad = [str(w) for w in patch if w.level != level or any(s >= branching for s in w.symbols)]
        if bad:
            raise SchemeParseError(f"covering {path}: words {bad} are not cells of T_{level}")
        out.append(np.asarray([w.index(branching) for w in patch], dtype=np.int64))
    return level, out
