"""Compositionality scores of an observed instance -> message language.

posdis and bosdis follow the information-gap form: for each message feature
(a position, or a symbol count) take the mutual information with every
attribute, subtract the runner-up from the best, and normalise by the
feature's entropy.  topsim is the Spearman correlation of pairwise Hamming
distances between instances and edit distances between messages.
"""

from __future__ import annotations

import itertools
import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Hashable, Sequence

import numpy as np

from .errors import ContractError

DEFAULT_PAIR_BUDGET = 100_000


@dataclass(frozen=True)
class LanguageTable:
    instances: tuple[tuple[int, ...], ...]
    messages: tuple[tuple[int, ...], ...]
    c_len: int
    c_voc: int

    def __post_init__(self):
        if len(self.instances) != len(self.messages):
            raise ContractError("one message per instance")
        for m in self.messages:
            if len(m) > self.c_len:
                raise ContractError(f"message {m} longer than c_len={self.c_len}")
            if any(not 0 <= s < self.c_voc for s in m):
                raise ContractError(f"message {m} uses symbols outside [0, {self.c_voc})")

    def __len__(self) -> int:
        return len(self.instances)

    @property
    def eos(self) -> int:
        return self.c_voc

    def attributes(self) -> np.ndarray:
        return np.array(self.instances, dtype=np.int64).reshape(len(self), -1)

    def positional_frame(self) -> np.ndarray:
        """Messages right-padded with EOS to ``c_len`` columns."""
        frame = np.full((len(self), self.c_len), self.eos, dtype=np.int64)
        for i, m in enumerate(self.messages):
            frame[i, : len(m)] = m
        return frame

    def symbol_counts(self) -> np.ndarray:
        counts = np.zeros((len(self), self.c_voc), dtype=np.int64)
        for i, m in enumerate(self.messages):
            for s in m:
                counts[i, s] += 1
        return counts

    def write_tsv(self, path) -> None:
        lines = [f"# c_len={self.c_len} c_voc={self.c_voc}"]
        for inst, msg in zip(self.instances, self.messages):
            lines.append(",".join(map(str, inst)) + "\t" + " ".join(map(str, msg)))
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def read_tsv(cls, path, c_len: int | None = None, c_voc: int | None = None) -> "LanguageTable":
        header: dict[str, str] = {}
        instances, messages = [], []
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            if line.startswith("#"):
                header.update(kv.split("=", 1) for kv in line[1:].split())
                continue
            if not line.strip():
                continue
            inst, _, msg = line.partition("\t")
            instances.append(tuple(int(v) for v in inst.split(",")))
            messages.append(tuple(int(s) for s in msg.split()))
        if c_len is None:
            c_len = int(header["c_len"]) if "c_len" in header else max(map(len, messages))
        if c_voc is None:
            c_voc = int(header["c_voc"]) if "c_voc" in header else 1 + max(max(m, default=0) for m in messages)
        return cls(tuple(instances), tuple(messages), c_len, c_voc)


@dataclass
class MetricsReport:
    posdis: float
    bosdis: float
    topsim: float | None  # None: undefined (a distance list had zero variance)
    n_entries: int
    n_pairs: int
    settings: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


# ------------------------------------------------------------ information


def _as_keys(samples) -> list[Hashable]:
    arr = np.asarray(samples)
    if arr.ndim == 2:
        return [tuple(row) for row in arr.tolist()]
    return list(arr.tolist()) if arr.ndim == 1 else list(samples)


def entropy(samples: Sequence) -> float:
    """Plug-in Shannon entropy in bits; rows of a 2-D array count as joint symbols."""
    keys = _as_keys(samples)
    n = len(keys)
    if n == 0:
        raise ContractError("entropy of an empty sample")
    counts = np.fromiter(Counter(keys).values(), dtype=np.float64)
    p = counts / n
    return float(max(0.0, -(p * np.log2(p)).sum()))


def mutual_information(xs: Sequence, ys: Sequence) -> float:
    """Plug-in ``H(X) + H(Y) - H(X, Y)`` in bits, clamped at 0."""
    kx, ky = _as_keys(xs), _as_keys(ys)
    if len(kx) != len(ky):
        raise ContractError(f"length mismatch: {len(kx)} vs {len(ky)}")
    if not kx:
        raise ContractError("mutual information of an empty sample")
    joint = list(zip(kx, ky))
    return max(0.0, entropy(kx) + entropy(ky) - entropy(joint))


def information_gap(attributes: np.ndarray, features: np.ndarray, tol: float = 1e-12) -> float:
    """Mean over informative feature columns of ``(I_best - I_second) / H(feature)``."""
    gaps = []
    for j in range(features.shape[1]):
        col = features[:, j]
        h = entropy(col)
        if h <= tol:
            continue
        mis = sorted((mutual_information(attributes[:, k], col) for k in range(attributes.shape[1])), reverse=True)
        second = mis[1] if len(mis) > 1 else 0.0
        gaps.append((mis[0] - second) / h)
    return float(np.mean(gaps)) if gaps else 0.0


def posdis(table: LanguageTable) -> float:
    if len(table) == 0:
        raise ContractError("posdis of an empty language")
    return information_gap(table.attributes(), table.positional_frame())


def bosdis(table: LanguageTable) -> float:
    if len(table) == 0:
        raise ContractError("bosdis of an empty language")
    return information_gap(table.attributes(), table.symbol_counts())


# ------------------------------------------------------------ topsim


def levenshtein(a: Sequence[int], b: Sequence[int]) -> int:
    """Unit-cost edit distance."""
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, 1):
        cur = [i]
        for j, y in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y)))
        prev = cur
    return prev[-1]


def hamming(a: Sequence[int], b: Sequence[int]) -> int:
    return sum(x != y for x, y in zip(a, b))


def average_ranks(xs: Sequence[float]) -> np.ndarray:
    x = np.asarray(xs, dtype=np.float64)
    order = np.argsort(x, kind="mergesort")
    sorted_x = x[order]
    ranks = np.empty(len(x))
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and sorted_x[j + 1] == sorted_x[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def spearman(xs: Sequence[float], ys: Sequence[float]) -> float | None:
    """Pearson correlation of average ranks; ``None`` when either side is constant."""
    if len(xs) != len(ys):
        raise ContractError("spearman needs paired sequences")
    if len(xs) < 2:
        raise ContractError("spearman needs at least two pairs")
    rx, ry = average_ranks(xs), average_ranks(ys)
    rx -= rx.mean()
    ry -= ry.mean()
    denom = math.sqrt(float((rx * rx).sum()) * float((ry * ry).sum()))
    if denom == 0.0:
        return None
    return float(np.clip((rx * ry).sum() / denom, -1.0, 1.0))


def _pairs(n: int, budget: int, seed: int) -> list[tuple[int, int]]:
    total = n * (n - 1) // 2
    if total <= budget:
        return list(itertools.combinations(range(n), 2))
    picks = np.random.default_rng(seed).choice(total, size=budget, replace=False)
    picks.sort()
    # invert the row-major index of the strict upper triangle
    out = []
    for k in picks.tolist():
        i = int(n - 2 - math.floor(math.sqrt(-8 * k + 4 * n * (n - 1) - 7) / 2.0 - 0.5))
        j = int(k + i + 1 - n * (n - 1) // 2 + (n - i) * ((n - i) - 1) // 2)
        out.append((i, j))
    return out


def topsim(table: LanguageTable, pair_budget: int = DEFAULT_PAIR_BUDGET, seed: int = 0) -> float | None:
    if len(table) < 2:
        raise ContractError("topsim needs at least two entries")
    pairs = _pairs(len(table), pair_budget, seed)
    inst, msg = table.instances, table.messages
    d_in = [hamming(inst[i], inst[j]) for i, j in pairs]
    d_msg = [levenshtein(msg[i], msg[j]) for i, j in pairs]
    return spearman(d_in, d_msg)


def compute_metrics(table: LanguageTable, pair_budget: int = DEFAULT_PAIR_BUDGET, seed: int = 0) -> MetricsReport:
    n = len(table)
    n_pairs = min(n * (n - 1) // 2, pair_budget)
    return MetricsReport(
        posdis=posdis(table),
        bosdis=bosdis(table),
        topsim=topsim(table, pair_budget, seed) if n >= 2 else None,
        n_entries=n,
        n_pairs=n_pairs,
        settings={
            "entropy": "plug-in, base 2",
            "positional_frame": f"EOS-padded to c_len={table.c_len}",
            "input_distance": "hamming",
            "message_distance": "levenshtein",
            "rank_ties": "average",
            "pair_budget": pair_budget,
            "pair_seed": seed,
        },
    )
