"""Attribute-value instance space and the zero-context train / IND / OOD split."""

from __future__ import annotations

import itertools
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import CapacityError, ConfigError

Instance = tuple[int, ...]

SPECIAL = 0
# zero-containing instances that stay in training
KEPT_ZERO_CONTEXTS: tuple[Instance, ...] = ((0, 0), (0, 1), (1, 0))
MAX_SPACE = 10_000_000


@dataclass(frozen=True)
class GameConfig:
    i_att: int = 2
    n_val: int = 100
    c_len: int = 3
    c_voc: int = 100
    train_fraction: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if self.i_att < 1:
            raise ConfigError(f"i_att must be >= 1, got {self.i_att}")
        if self.n_val < 2:
            raise ConfigError(f"n_val must be >= 2, got {self.n_val}")
        if self.c_len < 1:
            raise ConfigError(f"c_len must be >= 1, got {self.c_len}")
        if self.c_voc < 2:
            raise ConfigError(f"c_voc must be >= 2, got {self.c_voc}")
        if not 0.0 < self.train_fraction < 1.0:
            raise ConfigError(f"train_fraction must be in (0, 1), got {self.train_fraction}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class DatasetSplits:
    train: tuple[Instance, ...]
    ind_test: tuple[Instance, ...]
    ood_test: tuple[Instance, ...]

    def sizes(self) -> dict[str, int]:
        return {"train": len(self.train), "ind": len(self.ind_test), "ood": len(self.ood_test)}

    def by_name(self, name: str) -> tuple[Instance, ...]:
        return {"train": self.train, "ind": self.ind_test, "ood": self.ood_test}[name]


def generate_space(config: GameConfig, cap: int = MAX_SPACE) -> list[Instance]:
    """All ``n_val ** i_att`` instances in lexicographic order."""
    size = config.n_val**config.i_att
    if size > cap:
        raise CapacityError(f"instance space of {size} exceeds cap {cap}")
    return list(itertools.product(range(config.n_val), repeat=config.i_att))


def make_splits(space: list[Instance], config: GameConfig) -> DatasetSplits:
    """Zero-context split.

    OOD gets every instance containing 0 except the three kept contexts;
    train gets those three plus ``floor(train_fraction * |nonzero|)`` nonzero
    instances drawn by a seeded shuffle; IND gets the rest.  Each split is
    returned in lexicographic order.
    """
    if config.n_val < 2:
        raise ConfigError("the zero-context split needs n_val >= 2")
    if config.i_att != 2:
        raise ConfigError(
            f"the zero-context split is defined for i_att == 2 only, got {config.i_att}"
        )
    kept = set(KEPT_ZERO_CONTEXTS)
    ood, nonzero, train = [], [], []
    for inst in space:
        if SPECIAL in inst:
            (train if inst in kept else ood).append(inst)
        else:
            nonzero.append(inst)
    n_train = math.floor(config.train_fraction * len(nonzero))
    order = np.random.default_rng(config.seed).permutation(len(nonzero))
    chosen = set(order[:n_train].tolist())
    ind = []
    for i, inst in enumerate(nonzero):
        (train if i in chosen else ind).append(inst)
    return DatasetSplits(tuple(sorted(train)), tuple(ind), tuple(ood))


def contains_special(inst: Instance) -> bool:
    return SPECIAL in inst


def _header(config: GameConfig, split: str) -> str:
    fields = " ".join(f"{k}={v}" for k, v in config.to_dict().items())
    return f"# split={split} {fields}"


def export_splits(splits: DatasetSplits, config: GameConfig, out_dir) -> list[Path]:
    """Write ``train.txt``, ``ind.txt``, ``ood.txt``; one comma-separated tuple per line."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for name in ("train", "ind", "ood"):
        path = out / f"{name}.txt"
        lines = [_header(config, name)]
        lines += [",".join(str(v) for v in inst) for inst in splits.by_name(name)]
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        paths.append(path)
    return paths


def read_split(path) -> tuple[dict[str, str], list[Instance]]:
    header: dict[str, str] = {}
    instances = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.startswith("#"):
            header.update(kv.split("=", 1) for kv in line[1:].split())
        elif line.strip():
            instances.append(tuple(int(v) for v in line.split(",")))
    return header, instances
