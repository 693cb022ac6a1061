import csv
import json
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Sequence

from pydantic import BaseModel

from fractal_penergy.models.schemas import ConstructionReport, HomogeneityReport, ScalingFit


def write_csv(
    path: Path, rows: Iterable[Mapping[str, Any]], meta: Mapping[str, Any], columns: Sequence[str]
) -> Path:
    """Write rows with ``meta`` columns (scheme_hash, depth, seed) prepended to each."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fieldnames = list(meta) + list(columns)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({**meta, **{c: _fmt(row[c]) for c in columns}})
    return path


def write_json(path: Path, payload: BaseModel | Mapping[str, Any]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(payload, BaseModel):
        text = payload.model_dump_json(indent=2)
    else:
        text = json.dumps(payload, indent=2, ensure_ascii=False, default=str)
    path.write_text(text + "\n", encoding="utf-8")
    return path


def _fmt(value: Any) -> Any:
    if isinstance(value, float):
        return repr(value)
    return value


def scan_rows(fits: Sequence[ScalingFit], scheme: str) -> List[Dict[str, Any]]:
    return [
        {
            "scheme": scheme,
            "p": fit.p,
            "source": fit.source,
            "m": m,
            "value": value,
            "sigma_hat": fit.sigma_hat,
            "residual": fit.residual,
            "sigma_tail": fit.sigma_tail if fit.sigma_tail is not None else "",
        }
        for fit in fits
        for m, value in fit.samples
    ]


def homogeneity_rows(reports: Sequence[HomogeneityReport]) -> List[Dict[str, Any]]:
    return [
        {"p": r.p, "m": m, "conductance": c, "disparity": d, "product": x}
        for r in reports
        for m, c, d, x in zip(r.m_values, r.conductance, r.disparity, r.products)
    ]


def construction_tables(report: ConstructionReport) -> Dict[str, List[Dict[str, Any]]]:
    """Rows of scaled_energy.csv, plateau.csv and lp_norm.csv."""
    scaled = [
        {"n": lvl.n, "m": m, "scaled_energy": value}
        for lvl in report.levels
        for m, value in lvl.projected_scaled
    ]
    plateau = {}
    for lvl in report.levels:
        plateau.setdefault(lvl.k, {"k": lvl.k, "plateau": lvl.plateau, "expected": lvl.plateau_expected})
    norms = [{"n": lvl.n, "lp_norm": lvl.lp_norm, "bound": report.norm_bound} for lvl in report.levels]
    return {
        "scaled_energy": scaled,
        "plateau": [plateau[k] for k in sorted(plateau)],
        "lp_norm": norms,
    }
