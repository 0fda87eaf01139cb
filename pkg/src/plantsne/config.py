"""Pipeline configuration: defaults, INI loading, strict key checking.

One PipelineConfig carries every tunable of the chain (voxel filter, both
embeddings, superpoint thresholds, feature radii, SVM cost) plus the I/O
conventions.  Files use flat `key = value` pairs under section headers; any
unknown section or key is an error rather than a silent no-op.
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field

from .core import DEFAULT_CLASS_MAP, LEAF, STEM, VoxelParams
from .cluster import ClusterParams
from .errors import ConfigError
from .segment import DEFAULT_RADII, InstanceParams
from .tsne import TsneConfig

FORMATS = ("pheno4d_txt", "xyz")

_CLASS_IDS = {"leaf": LEAF, "stem": STEM}


@dataclass(frozen=True)
class PipelineConfig:
    """Every knob of the pipeline, with working defaults.

    unit is informational only: coordinates are taken in the dataset's
    native length unit and radii / voxel sizes are expressed in it.
    """

    fmt: str = "pheno4d_txt"
    unit: str = "native"
    class_map: dict = field(default_factory=lambda: dict(DEFAULT_CLASS_MAP))
    voxel: VoxelParams = VoxelParams()
    tsne: TsneConfig = TsneConfig()
    cluster: ClusterParams = ClusterParams()
    radii: tuple = DEFAULT_RADII
    svm_c: float = 1.0
    instance: InstanceParams = InstanceParams()

    def __post_init__(self):
        if self.fmt not in FORMATS:
            raise ConfigError(f"unknown format {self.fmt!r}; expected one of {FORMATS}")
        if len(self.radii) == 0 or min(self.radii) <= 0:
            raise ConfigError("radii must be a non-empty list of positive lengths")
        if self.svm_c <= 0:
            raise ConfigError("svm_c must be positive")

    def replace(self, **kw) -> "PipelineConfig":
        return dataclasses.replace(self, **kw)


def _parse_class_map(text: str) -> dict:
    """'1:stem,2:leaf' -> {1: STEM, 2: LEAF}."""
    out = {}
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        try:
            raw, name = item.split(":")
            out[int(raw)] = _CLASS_IDS[name.strip().lower()]
        except (ValueError, KeyError):
            raise ConfigError(f"bad class_map entry {item!r}; "
                              "expected rawint:leaf or rawint:stem") from None
    if not out:
        raise ConfigError("class_map must not be empty")
    return out


def _parse_radii(text: str) -> tuple:
    try:
        return tuple(float(tok) for tok in text.replace(",", " ").split())
    except ValueError:
        raise ConfigError(f"bad radii list {text!r}") from None


def _float(text: str) -> float:
    return float(text)


def _int(text: str) -> int:
    return int(text)


# section -> key -> (constructor-kwarg, parser).  Parsers run before the
# dataclass validators, which then enforce the actual value constraints.
_SCHEMA = {
    "io": {
        "format": ("fmt", str),
        "unit": ("unit", str),
        "class_map": ("class_map", _parse_class_map),
    },
    "voxel": {
        "v": ("v", _float),
        "min_points": ("min_points", _int),
    },
    "tsne": {
        "perplexity": ("perplexity", _float),
        "n_iter": ("n_iter", _int),
        "learning_rate": ("learning_rate", _float),
        "early_exaggeration_factor": ("early_exaggeration_factor", _float),
        "early_exaggeration_iters": ("early_exaggeration_iters", _int),
        "momentum_initial": ("momentum_initial", _float),
        "momentum_final": ("momentum_final", _float),
        "momentum_switch_iter": ("momentum_switch_iter", _int),
        "init_std": ("init_std", _float),
        "seed": ("seed", _int),
        "perplexity_tol": ("perplexity_tol", _float),
        "max_bisection_steps": ("max_bisection_steps", _int),
    },
    "cluster": {
        "d_e": ("d_E", _float),
        "r_e": ("r_E", _float),
        "t_e": ("T_E", _float),
        "s_e": ("s_E", _float),
        "t_s": ("T_s", _float),
        "laplacian": ("laplacian", str),
    },
    "features": {
        "radii": ("radii", _parse_radii),
        "svm_c": ("svm_c", _float),
    },
    "instance": {
        "v": ("v", _float),
        "perplexity": ("perplexity", _float),
        "d_e": ("d_E", _float),
        "min_points": ("min_points", _int),
    },
}


def load_config(path) -> PipelineConfig:
    """Parse an INI-style config file into a validated PipelineConfig."""
    parser = configparser.ConfigParser(interpolation=None)
    try:
        with open(path, encoding="ascii") as fh:
            parser.read_file(fh, source=str(path))
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc

    per_section: dict[str, dict] = {name: {} for name in _SCHEMA}
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"{path}: unknown section [{section}]")
        for key, raw in parser.items(section):
            if key not in _SCHEMA[section]:
                raise ConfigError(f"{path}: unknown key {key!r} in [{section}]")
            kwarg, parse = _SCHEMA[section][key]
            try:
                per_section[section][kwarg] = parse(raw)
            except ValueError:
                raise ConfigError(
                    f"{path}: bad value {raw!r} for {key} in [{section}]") from None

    return PipelineConfig(
        **per_section["io"],
        voxel=VoxelParams(**per_section["voxel"]),
        tsne=TsneConfig(**per_section["tsne"]),
        cluster=ClusterParams(**per_section["cluster"]),
        instance=InstanceParams(**per_section["instance"]),
        **per_section["features"],
    )
