"""Handcoded language for the learning-alone task.

A seeded bijection ``tr`` maps attribute values to channel symbols; each
attribute is emitted in order, and symbols with an even numeric value are
written twice.  With ``tr: 0->3, 1->8, 2->2`` this gives
``(0,0)->(3,3)``, ``(1,0)->(8,8,3)`` and ``(2,1)->(2,2,8,8)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataspace import Instance
from .errors import CapacityError

Symbols = tuple[int, ...]


def is_duplicated(symbol: int) -> bool:
    # odd position under 1-based vocabulary indexing == even symbol value
    return symbol % 2 == 0


@dataclass(frozen=True)
class OracleMapping:
    tr: tuple[int, ...]
    c_voc: int
    seed: int | None = None

    def __post_init__(self):
        if len(set(self.tr)) != len(self.tr):
            raise ValueError("tr must be injective")
        if any(not 0 <= s < self.c_voc for s in self.tr):
            raise ValueError("tr maps outside the channel vocabulary")

    @property
    def n_val(self) -> int:
        return len(self.tr)

    def inverse(self) -> dict[int, int]:
        return {s: v for v, s in enumerate(self.tr)}


def build_mapping(n_val: int, c_voc: int, seed: int) -> OracleMapping:
    if c_voc < n_val:
        raise CapacityError(f"c_voc={c_voc} cannot host a bijection from {n_val} values")
    rng = np.random.default_rng(seed)
    tr = rng.permutation(c_voc)[:n_val]
    return OracleMapping(tuple(int(s) for s in tr), c_voc, seed)


def encode_instance(mapping: OracleMapping, instance: Instance) -> Symbols:
    out: list[int] = []
    for v in instance:
        if not 0 <= v < mapping.n_val:
            raise IndexError(f"value {v} outside mapping domain [0, {mapping.n_val})")
        s = mapping.tr[v]
        out.append(s)
        if is_duplicated(s):
            out.append(s)
    return tuple(out)


def decode_message(mapping: OracleMapping, message: Symbols) -> Instance:
    """Inverse of :func:`encode_instance`; raises ``ValueError`` on malformed input."""
    inv = mapping.inverse()
    values, i = [], 0
    while i < len(message):
        s = message[i]
        if s not in inv:
            raise ValueError(f"symbol {s} is not in the oracle language")
        if is_duplicated(s):
            if i + 1 >= len(message) or message[i + 1] != s:
                raise ValueError(f"symbol {s} must appear twice")
            i += 2
        else:
            i += 1
        values.append(inv[s])
    return tuple(values)


def make_supervised_pairs(mapping: OracleMapping, instances) -> list[tuple[Instance, Symbols]]:
    return [(tuple(inst), encode_instance(mapping, inst)) for inst in instances]


def export_corpus(mapping: OracleMapping, pairs, out_dir) -> tuple[Path, Path]:
    """``corpus.tsv`` (instance TAB message) and ``mapping.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    corpus = out / "corpus.tsv"
    corpus.write_text(
        "".join(
            ",".join(map(str, inst)) + "\t" + " ".join(map(str, msg)) + "\n" for inst, msg in pairs
        ),
        encoding="utf-8",
    )
    manifest = out / "mapping.json"
    manifest.write_text(
        json.dumps({"seed": mapping.seed, "c_voc": mapping.c_voc, "tr": list(mapping.tr)}, indent=1)
        + "\n",
        encoding="utf-8",
    )
    return corpus, manifest
