"""Pipeline configuration: one typed object covering every stage, loadable
from a YAML key/value tree with strict schema validation (unknown keys are
rejected recursively) plus layered overrides. Every command logs the fully
resolved configuration so runs are auditable."""
from __future__ import annotations

import copy
from dataclasses import dataclass

import yaml

from .datagen import GenRules
from .ilt import IltConfig
from .litho import LithoModel
from .splitter import DbscanParams, SplitParams


class ConfigError(ValueError):
    pass


def _default_sections() -> dict:
    return {
        "seed": 0,
        "rules": GenRules().to_dict(),
        "litho": LithoModel().to_dict(),
        "ilt": IltConfig().to_dict(),
        "split": {"eps": DbscanParams().eps,
                  "max_vias": SplitParams().max_vias,
                  "window": SplitParams().window,
                  "kmeans_iters": SplitParams().kmeans_iters,
                  "seed": SplitParams().seed},
        "paths": {"figures": "figures"},
        # forwarded verbatim to the mask-generator trainer (separate package)
        "trainer": {"lambda0": 100.0, "lambda1": 100.0, "lambda2": 50.0,
                    "learning_rate": 2.0e-4, "batch_size": 4, "seed": 0},
    }


def _merge(base: dict, update: dict, crumb: str = "") -> None:
    """Recursive in-place merge; any key absent from base is a schema error."""
    for key, value in update.items():
        where = f"{crumb}.{key}" if crumb else str(key)
        if key not in base:
            raise ConfigError(f"unknown configuration key: {where}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{where} must be a mapping")
            _merge(base[key], value, where)
        else:
            base[key] = value


@dataclass(frozen=True)
class PipelineConfig:
    seed: int
    rules: GenRules
    litho: LithoModel
    ilt: IltConfig
    dbscan: DbscanParams
    split: SplitParams
    paths: dict
    trainer: dict

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "rules": self.rules.to_dict(),
            "litho": self.litho.to_dict(),
            "ilt": self.ilt.to_dict(),
            "split": {"eps": self.dbscan.eps, "max_vias": self.split.max_vias,
                      "window": self.split.window,
                      "kmeans_iters": self.split.kmeans_iters,
                      "seed": self.split.seed},
            "paths": dict(self.paths),
            "trainer": dict(self.trainer),
        }

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True, default_flow_style=False)


def _read_yaml(path) -> dict:
    with open(path, "r", encoding="utf-8") as f:
        data = yaml.safe_load(f)
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: configuration root must be a mapping")
    return data


def _build(sections: dict) -> PipelineConfig:
    try:
        sp = sections["split"]
        return PipelineConfig(
            seed=int(sections["seed"]),
            rules=GenRules.from_dict(sections["rules"]),
            litho=LithoModel.from_dict(sections["litho"]),
            ilt=IltConfig.from_dict(sections["ilt"]),
            dbscan=DbscanParams(eps=float(sp["eps"])),
            split=SplitParams(max_vias=int(sp["max_vias"]), window=int(sp["window"]),
                              kmeans_iters=int(sp["kmeans_iters"]), seed=int(sp["seed"])),
            paths=dict(sections["paths"]),
            trainer=dict(sections["trainer"]),
        )
    except (TypeError, ValueError) as e:
        if isinstance(e, ConfigError):
            raise
        raise ConfigError(f"invalid configuration value: {e}") from e


def load_config(path=None, overrides: dict | None = None) -> PipelineConfig:
    """Defaults, overlaid by the YAML file at path, overlaid by overrides
    (a partial section tree, e.g. {"split": {"eps": 500}})."""
    sections = _default_sections()
    if path is not None:
        _merge(sections, _read_yaml(path))
    if overrides:
        _merge(sections, copy.deepcopy(overrides))
    return _build(sections)


def load_section(path, section: str) -> dict:
    """A stand-alone section file (e.g. --model/--rules/--ilt): either the
    bare section body or a file with the named top-level section."""
    data = _read_yaml(path)
    if section in data and isinstance(data[section], dict):
        data = data[section]
    defaults = _default_sections()[section]
    merged = copy.deepcopy(defaults)
    _merge(merged, data, section)
    return merged
