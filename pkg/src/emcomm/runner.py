"""Experiment specs, seeded batch execution and the append-only run log.

A spec is an INI file with one experiment per file::

    [experiment]
    name = game-desk
    kind = communication-game
    base_seed = 0

    [game]
    n_val = 20
    c_voc = 20

    [agents]
    kinds = biased, baseline
    hidden_size = 128

    [train]
    max_epochs = 1000

Layout under the output directory::

    manifest.jsonl              one line per run: experiment, label, seed, log line
    <name>/spec.ini             resolved spec, used to refuse mismatched resumes
    <name>/runs.jsonl           canonical RunRecords (no wall time)
    <name>/timings.jsonl        wall time per run, kept apart so logs stay deterministic
"""

from __future__ import annotations

import configparser
import dataclasses
import io
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

from .dataspace import DatasetSplits, GameConfig, export_splits, generate_space, make_splits
from .errors import ConfigError, ContractError
from .oraclelang import build_mapping, export_corpus, make_supervised_pairs
from .trainer import RunRecord, TrainConfig, _check_pair, arch_label, receiver_arch, sender_arch, train_alone, train_game

KINDS = ("learning-alone-sender", "learning-alone-receiver", "communication-game", "capacity-sweep")
TASKS = KINDS[:3]
ARCH_KINDS = ("baseline", "biased")
WORKERS_ENV = "EMCOMM_WORKERS"
MANIFEST = "manifest.jsonl"


@dataclass(frozen=True)
class ExperimentSpec:
    name: str
    kind: str
    game: GameConfig = field(default_factory=GameConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    arch_kinds: tuple[str, ...] = ("biased",)
    hidden_sizes: tuple[int, ...] = (500,)
    # None ties the embedding width to the hidden width
    embedding_size: int | None = None
    task: str | None = None  # what a capacity sweep runs
    base_seed: int = 0

    def __post_init__(self):
        if not self.name or any(c in self.name for c in "/\\ \t"):
            raise ConfigError(f"bad experiment name {self.name!r}")
        if self.kind not in KINDS:
            raise ConfigError(f"unknown experiment kind {self.kind!r}")
        if self.kind == "capacity-sweep":
            if self.task not in TASKS:
                raise ConfigError(f"capacity sweep needs task in {TASKS}, got {self.task!r}")
        elif len(self.hidden_sizes) != 1:
            raise ConfigError("only a capacity sweep may list several hidden sizes")
        if not self.arch_kinds or any(k not in ARCH_KINDS for k in self.arch_kinds):
            raise ConfigError(f"architecture kinds must be drawn from {ARCH_KINDS}")
        if not self.hidden_sizes or min(self.hidden_sizes) < 1:
            raise ConfigError("hidden sizes must be positive")
        if self.base_seed < 0:
            raise ConfigError("base_seed must be >= 0")

    @property
    def run_kind(self) -> str:
        return self.task if self.kind == "capacity-sweep" else self.kind

    @property
    def seeds(self) -> list[int]:
        return [self.base_seed + i for i in range(self.train.n_seeds)]

    def units(self) -> list[tuple[str, int, int]]:
        """(architecture kind, hidden size, seed) in execution order."""
        return [(k, h, s) for k in self.arch_kinds for h in self.hidden_sizes for s in self.seeds]

    def with_seeds(self, n: int) -> "ExperimentSpec":
        return dataclasses.replace(self, train=dataclasses.replace(self.train, n_seeds=n))

    def to_ini(self) -> str:
        cp = configparser.ConfigParser(interpolation=None)
        exp = {"name": self.name, "kind": self.kind, "base_seed": str(self.base_seed)}
        if self.task:
            exp["task"] = self.task
        cp["experiment"] = exp
        cp["game"] = {k: _show(v) for k, v in self.game.to_dict().items()}
        cp["agents"] = {
            "kinds": ", ".join(self.arch_kinds),
            "hidden_sizes": ", ".join(map(str, self.hidden_sizes)),
            "embedding_size": _show(self.embedding_size),
        }
        cp["train"] = {k: _show(v) for k, v in self.train.to_dict().items()}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()


def _show(v) -> str:
    return "none" if v is None else str(v)


def _coerce(key: str, raw: str, default):
    text = raw.strip()
    if text.lower() in ("none", "null", ""):
        return None
    try:
        if isinstance(default, bool):
            return text.lower() in ("1", "true", "yes", "on")
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float) or default is None:
            return float(text)
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {raw!r}") from exc
    return text


def _section(cp, name: str, cls) -> dict:
    if not cp.has_section(name):
        return {}
    defaults = {f.name: getattr(cls(), f.name) for f in dataclasses.fields(cls)}
    out = {}
    for key, raw in cp.items(name):
        if key not in defaults:
            raise ConfigError(f"[{name}] unknown key {key!r}")
        out[key] = _coerce(f"[{name}] {key}", raw, defaults[key])
    return out


def _ints(raw: str) -> tuple[int, ...]:
    try:
        return tuple(int(x) for x in raw.replace(",", " ").split())
    except ValueError as exc:
        raise ConfigError(f"expected integers, got {raw!r}") from exc


def parse_spec(text: str) -> ExperimentSpec:
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed spec: {exc}") from exc
    unknown = set(cp.sections()) - {"experiment", "game", "agents", "train", "sweep"}
    if unknown:
        raise ConfigError(f"unknown sections {sorted(unknown)}")
    if not cp.has_section("experiment"):
        raise ConfigError("spec needs an [experiment] section")
    exp = dict(cp.items("experiment"))
    extra = set(exp) - {"name", "kind", "base_seed", "task"}
    if extra:
        raise ConfigError(f"[experiment] unknown keys {sorted(extra)}")
    if "name" not in exp or "kind" not in exp:
        raise ConfigError("[experiment] needs name and kind")

    agents = dict(cp.items("agents")) if cp.has_section("agents") else {}
    sweep = dict(cp.items("sweep")) if cp.has_section("sweep") else {}
    extra = (set(agents) - {"kinds", "hidden_size", "hidden_sizes", "embedding_size"}) | (
        set(sweep) - {"task", "hidden_sizes"}
    )
    if extra:
        raise ConfigError(f"unknown agent/sweep keys {sorted(extra)}")
    sizes = sweep.get("hidden_sizes") or agents.get("hidden_sizes") or agents.get("hidden_size") or "500"
    emb = agents.get("embedding_size", "none").strip().lower()

    try:
        game = GameConfig(**_section(cp, "game", GameConfig))
        train = TrainConfig(**_section(cp, "train", TrainConfig))
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    return ExperimentSpec(
        name=exp["name"].strip(),
        kind=exp["kind"].strip(),
        game=game,
        train=train,
        arch_kinds=tuple(k.strip() for k in agents.get("kinds", "biased").split(",") if k.strip()),
        hidden_sizes=_ints(sizes),
        embedding_size=None if emb in ("", "none") else _ints(emb)[0],
        task=(sweep.get("task") or exp.get("task") or "").strip() or None,
        base_seed=int(_coerce("base_seed", exp.get("base_seed", "0"), 0)),
    )


def load_spec(path) -> ExperimentSpec:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read spec {path}: {exc}") from exc
    return parse_spec(text)


# ------------------------------------------------------------- execution


@lru_cache(maxsize=8)
def _splits(game: GameConfig) -> DatasetSplits:
    return make_splits(generate_space(game), game)


def _archs(spec: ExperimentSpec, kind: str, hidden: int):
    game, emb = spec.game, spec.embedding_size
    task = spec.run_kind
    if task == "learning-alone-sender":
        # oracle messages are up to twice as long as the instance
        return sender_arch(kind, game, hidden, emb, max_len=2 * game.i_att), None
    if task == "learning-alone-receiver":
        return None, receiver_arch(kind, game, hidden, emb)
    return sender_arch(kind, game, hidden, emb), receiver_arch(kind, game, hidden, emb)


def validate(spec: ExperimentSpec) -> None:
    """Everything that can fail on configuration, before any run starts."""
    splits = _splits(spec.game)
    if not splits.train:
        raise ConfigError("training split is empty")
    if spec.run_kind.startswith("learning-alone"):
        build_mapping(spec.game.n_val, spec.game.c_voc, spec.game.seed)
    for kind in spec.arch_kinds:
        for h in spec.hidden_sizes:
            s, r = _archs(spec, kind, h)
            if s is not None and r is not None:
                _check_pair(s, r, spec.game)


def run_one(spec: ExperimentSpec, kind: str, hidden: int, seed: int) -> RunRecord:
    game, splits = spec.game, _splits(spec.game)
    s_arch, r_arch = _archs(spec, kind, hidden)
    if spec.run_kind == "communication-game":
        return train_game(s_arch, r_arch, splits, spec.train, game, seed=seed, experiment=spec.name)
    mapping = build_mapping(game.n_val, game.c_voc, game.seed)
    pairs = make_supervised_pairs(mapping, splits.train)
    role = "sender" if s_arch is not None else "receiver"
    arch = s_arch if s_arch is not None else r_arch
    return train_alone(role, arch, pairs, splits, spec.train, game, mapping, seed=seed, experiment=spec.name)


def _run_unit(args) -> tuple[str, str]:
    record = run_one(*args)
    return record.to_json(), json.dumps({"label": record.label, "seed": record.seed, "wall_time": record.wall_time})


def workers_from_env() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        n = int(raw)
    except ValueError as exc:
        raise ConfigError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from exc
    if n < 1:
        raise ConfigError(f"{WORKERS_ENV} must be >= 1")
    return n


def read_log(path) -> list[RunRecord]:
    path = Path(path)
    if not path.exists():
        return []
    with open(path, encoding="utf-8") as fh:
        return [RunRecord.from_json(line) for line in fh if line.strip()]


def run_experiment(spec: ExperimentSpec, out_dir, resume: bool = False, workers: int | None = None) -> list[RunRecord]:
    """Run every (architecture, hidden size, seed) unit not yet in the log.

    Returns all records of the experiment, old and new, in log order.
    """
    validate(spec)
    out = Path(out_dir)
    exp_dir = out / spec.name
    log_path, spec_path = exp_dir / "runs.jsonl", exp_dir / "spec.ini"
    text = spec.to_ini()
    if spec_path.exists():
        if not resume:
            raise ContractError(f"experiment {spec.name!r} already exists in {out}; pass resume to continue it")
        # the seed count may grow between sessions; everything else must match
        recorded = parse_spec(spec_path.read_text(encoding="utf-8"))
        if recorded.with_seeds(1) != spec.with_seeds(1):
            raise ConfigError(f"spec for {spec.name!r} differs from the one recorded in {spec_path}")
    exp_dir.mkdir(parents=True, exist_ok=True)
    spec_path.write_text(text, encoding="utf-8")

    existing = read_log(log_path)
    done = {(r.label, r.seed) for r in existing}
    pending = []
    for kind, h, seed in spec.units():
        s, r = _archs(spec, kind, h)
        label = arch_label(*(a for a in (s, r) if a is not None))
        if (label, seed) not in done:
            pending.append((spec, kind, h, seed))

    n_workers = workers if workers is not None else workers_from_env()
    line_no = len(existing)
    new: list[RunRecord] = []
    # results come back in submission order, so the single writer below keeps
    # the log ordering independent of the pool size
    if n_workers > 1 and len(pending) > 1:
        pool = ProcessPoolExecutor(max_workers=min(n_workers, len(pending)))
        results = pool.map(_run_unit, pending)
    else:
        pool, results = None, map(_run_unit, pending)
    try:
        with open(log_path, "a", encoding="utf-8") as log, open(exp_dir / "timings.jsonl", "a", encoding="utf-8") as tlog, open(
            out / MANIFEST, "a", encoding="utf-8"
        ) as manifest:
            for line, timing in results:
                record = RunRecord.from_json(line)
                log.write(line + "\n")
                tlog.write(timing + "\n")
                entry = {
                    "experiment": spec.name,
                    "kind": record.kind,
                    "label": record.label,
                    "seed": record.seed,
                    "log": f"{spec.name}/runs.jsonl",
                    "line": line_no,
                }
                manifest.write(json.dumps(entry, sort_keys=True) + "\n")
                for fh in (log, tlog, manifest):
                    fh.flush()
                line_no += 1
                new.append(record)
    finally:
        if pool is not None:
            pool.shutdown()
    return existing + new


def read_manifest(out_dir) -> list[dict]:
    path = Path(out_dir) / MANIFEST
    if not path.exists():
        raise ContractError(f"no manifest in {out_dir}")
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def load_records(out_dir, experiment: str | None = None) -> dict[str, list[RunRecord]]:
    """Records reachable from the manifest, grouped by experiment name."""
    out = Path(out_dir)
    logs: dict[str, list[str]] = {}
    grouped: dict[str, list[RunRecord]] = {}
    for entry in read_manifest(out):
        name = entry["experiment"]
        if experiment is not None and name != experiment:
            continue
        if entry["log"] not in logs:
            logs[entry["log"]] = (out / entry["log"]).read_text(encoding="utf-8").splitlines()
        lines = logs[entry["log"]]
        if entry["line"] >= len(lines):
            raise ContractError(f"manifest points past the end of {entry['log']}")
        record = RunRecord.from_json(lines[entry["line"]])
        if (record.label, record.seed) != (entry["label"], entry["seed"]):
            raise ContractError(f"manifest entry does not match {entry['log']}:{entry['line']}")
        grouped.setdefault(name, []).append(record)
    return grouped


def generate_data(spec: ExperimentSpec, out_dir) -> list[Path]:
    """Write the splits, plus the oracle corpus for learning-alone specs."""
    validate(spec)
    target = Path(out_dir) / spec.name / "data"
    splits = _splits(spec.game)
    paths = list(export_splits(splits, spec.game, target))
    if spec.run_kind.startswith("learning-alone"):
        g = spec.game
        mapping = build_mapping(g.n_val, g.c_voc, g.seed)
        everything = splits.train + splits.ind_test + splits.ood_test
        paths += list(export_corpus(mapping, make_supervised_pairs(mapping, everything), target))
    return paths
