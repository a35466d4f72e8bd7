"""Synthetic tabular data with an injected label/group correlation.

Two sensitive attributes (gender with 2 values, race with 3) shift the
label log-odds; four signal features carry group-independent information and
two noisy proxies leak the group into the non-sensitive columns.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .data import CATEGORICAL, CONTINUOUS, DatasetSchema, RawTable

GENDERS = ("female", "male")
RACES = ("a", "b", "c")
REGIONS = ("north", "south", "east", "west")
LABELS = ("neg", "pos")


def synthetic_schema() -> DatasetSchema:
    feats = [{"name": f"z{i}", "kind": CONTINUOUS} for i in range(4)]
    feats += [
        {"name": "proxy_g", "kind": CONTINUOUS},
        {"name": "proxy_r", "kind": CONTINUOUS},
        {"name": "region", "kind": CATEGORICAL, "categories": list(REGIONS)},
    ]
    return DatasetSchema.from_dict(
        {
            "features": feats,
            "label": "label",
            "label_values": list(LABELS),
            "sensitive": [
                {"name": "gender", "categories": list(GENDERS)},
                {"name": "race", "categories": list(RACES)},
            ],
        }
    )


def synthetic_table(
    n: int = 4000,
    seed: int = 0,
    gender_effect: float = 0.35,
    race_effect: tuple[float, float, float] = (0.3, -0.1, -0.35),
    signal: float = 0.7,
    proxy_noise: float = 0.5,
) -> RawTable:
    rng = np.random.default_rng(seed)
    g = rng.choice(2, size=n, p=[0.5, 0.5])
    r = rng.choice(3, size=n, p=[0.5, 0.3, 0.2])
    z = rng.normal(size=(n, 4))
    beta = np.array([1.0, -0.8, 0.6, 0.4])
    logit = signal * (z @ beta) / np.linalg.norm(beta) + gender_effect * (2 * g - 1) + np.asarray(race_effect)[r]
    y = (rng.random(n) < 1.0 / (1.0 + np.exp(-logit))).astype(int)
    proxy_g = g + proxy_noise * rng.normal(size=n)
    proxy_r = r + proxy_noise * rng.normal(size=n)
    region = rng.choice(len(REGIONS), size=n)
    cols = {f"z{i}": z[:, i].tolist() for i in range(4)}
    cols["proxy_g"] = proxy_g.tolist()
    cols["proxy_r"] = proxy_r.tolist()
    cols["region"] = [REGIONS[i] for i in region]
    cols["gender"] = [GENDERS[i] for i in g]
    cols["race"] = [RACES[i] for i in r]
    cols["label"] = [LABELS[i] for i in y]
    return RawTable(cols, n)


def write_synthetic(directory, n: int = 4000, seed: int = 0) -> tuple[Path, Path]:
    """Write ``synthetic.csv`` and ``synthetic_schema.json`` into ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    schema = synthetic_schema()
    table = synthetic_table(n, seed)
    names = [c.name for c in schema.features] + schema.sensitive_names + [schema.label]
    csv_path = directory / "synthetic.csv"
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        for i in range(n):
            w.writerow([_fmt(table.columns[c][i]) for c in names])
    schema_path = directory / "synthetic_schema.json"
    schema_path.write_text(json.dumps(schema.to_dict(), indent=2) + "\n", encoding="utf-8")
    return csv_path, schema_path


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, float) else str(v)
