"""Pipeline configuration: defaults and the key=value config file format.

The file format is deliberately plain: one ``key = value`` per line, ``#``
comments, unknown keys rejected. Numeric defaults mirror the published
pipeline settings (eye distance 0.1, alignment k 7, dedup eps 3 / min 2,
content threshold 0.6 / min size 50, 10% sample, top 1000).
"""
from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional


@dataclass
class PipelineConfig:
    corpus_id: str = "default"
    model_id: str = "default"
    data_dir: Path = Path("data")
    min_eye_distance: float = 0.1
    alignment_k: int = 7
    threshold: Optional[float] = None  # absent until calibrated
    dedup_eps: int = 3
    dedup_min_samples: int = 2
    content_threshold: float = 0.6
    content_min_cluster_size: int = 50
    subset_fraction: float = 0.1
    subset_top_k: int = 1000
    calibration_seed: int = 0
    inversion_budget: int = 1000
    port: int = 8008

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            if value is None:
                continue
            lines.append(f"{f.name} = {value}")
        return "\n".join(lines) + "\n"


_PARSERS = {
    "corpus_id": str,
    "model_id": str,
    "data_dir": Path,
    "min_eye_distance": float,
    "alignment_k": int,
    "threshold": float,
    "dedup_eps": int,
    "dedup_min_samples": int,
    "content_threshold": float,
    "content_min_cluster_size": int,
    "subset_fraction": float,
    "subset_top_k": int,
    "calibration_seed": int,
    "inversion_budget": int,
    "port": int,
}


def parse_config(text: str) -> PipelineConfig:
    config = PipelineConfig()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key not in _PARSERS:
            raise ValueError(f"line {lineno}: unknown config key {key!r}")
        setattr(config, key, _PARSERS[key](value))
    return config


def load_config(path: Path) -> PipelineConfig:
    return parse_config(path.read_text())


def save_config(config: PipelineConfig, path: Path) -> None:
    path.write_text(config.to_text())
