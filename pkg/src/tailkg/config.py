"""YAML pipeline configuration: defaults, schema validation, path resolution."""
from __future__ import annotations

import copy
import hashlib
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping, Optional

import jsonschema
import yaml

from tailkg.core import SchemaError, dumps, load_schema
from tailkg.gateway import ServiceEndpoint, endpoints_from_config

DEFAULTS: dict[str, Any] = {
    "run_dir": "run",
    "cassette": "cassette.jsonl",
    "seed": 0,
    "mode": "replay",
    "language": "en",
    "services": {},
    "sampling": {
        "candidates": "candidates.txt",
        "pool_size": None,
        "per_level": 500,
        "window": {"start": "2021-01", "end": "2023-01"},
        "site": "en.wikipedia.org",
    },
    "triples": {"min_triples": 5, "max_triples": 100, "blocklist": {"P734": "family name", "P735": "given name"}},
    "generation": {"questions_per_entity": 3, "temperature": 0.0, "max_new_tokens": 2048, "workers": 1},
    "retrieval": {
        "knowledge": "kg",
        "ranker": "llm",
        "oracle_entities": False,
        "rho_threshold": 0.22,
        "max_entities": 5,
        "top_relations": 5,
        "triples_per_pair": 10,
        "top_passages": 10,
        "amr_graphs": None,
        "ranker_model": None,
        "workers": 1,
    },
    "answer": {"temperature": 0.0, "max_new_tokens": 128, "workers": 1},
    "evaluation": {"nli": True, "setting": None},
    "ranker": {
        "training_data": None,
        "d": 64,
        "heads": 4,
        "layers": 2,
        "mlp_hidden": 64,
        "learning_rate": 0.003,
        "epochs": 200,
        "batch_size": 64,
        "negative_ratio": 9.0,
    },
    "audit": {"rate": 0.03},
}

_PATH_KEYS = (
    ("run_dir",),
    ("cassette",),
    ("sampling", "candidates"),
    ("retrieval", "amr_graphs"),
    ("retrieval", "ranker_model"),
    ("ranker", "training_data"),
)


def _merge(base: dict[str, Any], override: Mapping[str, Any]) -> dict[str, Any]:
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, Mapping) and isinstance(out.get(k), dict) and k not in ("blocklist", "services"):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


@dataclass(frozen=True)
class Config:
    data: dict[str, Any]
    base_dir: Path
    digest: str  # sha256 of the merged config before path resolution

    def __getitem__(self, key: str) -> Any:
        return self.data[key]

    def section(self, name: str) -> dict[str, Any]:
        return self.data[name]

    def path(self, *keys: str) -> Optional[Path]:
        node: Any = self.data
        for k in keys:
            node = node[k]
        if node is None:
            return None
        p = Path(node)
        return p if p.is_absolute() else (self.base_dir / p)

    def endpoints(self) -> dict[str, ServiceEndpoint]:
        return endpoints_from_config(self.data["services"])

    def endpoint(self, name: str) -> Optional[ServiceEndpoint]:
        return self.endpoints().get(name)


def config_from_mapping(raw: Mapping[str, Any] | None, base_dir: str | Path = ".") -> Config:
    raw = dict(raw or {})
    try:
        jsonschema.validate(raw, load_schema("config"))
    except jsonschema.ValidationError as exc:
        raise SchemaError(f"config error at {'/'.join(map(str, exc.absolute_path)) or '<root>'}: {exc.message}") from exc
    merged = _merge(DEFAULTS, raw)
    digest = hashlib.sha256(dumps(merged).encode("utf-8")).hexdigest()
    return Config(merged, Path(base_dir).resolve(), digest)


def load_config(path: str | Path | None) -> Config:
    """Read a YAML config; relative paths inside it resolve against its directory."""
    if path is None:
        return config_from_mapping({}, Path.cwd())
    p = Path(path)
    try:
        raw = yaml.safe_load(p.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise SchemaError(f"{p}: invalid YAML: {exc}") from exc
    if raw is not None and not isinstance(raw, Mapping):
        raise SchemaError(f"{p}: top level must be a mapping")
    return config_from_mapping(raw, p.parent)
