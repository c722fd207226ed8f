"""Training loops: learning alone against the oracle language, and the full game."""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import diffcore as dc
from .agents import Agent, ArchitectureConfig, pad_sequences
from .dataspace import DatasetSplits, GameConfig
from .diffcore import Value
from .errors import ConfigError, ContractError, NumericError
from .metrics import DEFAULT_PAIR_BUDGET, LanguageTable, compute_metrics
from .oraclelang import OracleMapping, make_supervised_pairs

SPLITS = ("train", "ind", "ood")


@dataclass(frozen=True)
class TrainConfig:
    max_epochs: int = 2000
    # None trains for exactly max_epochs
    early_stop: float | None = 0.99999
    batch_size: int = 32
    lr: float = 1e-3
    optimizer: str = "adam"
    entropy_coef: float = 0.1
    # linear annealing target; None keeps the coefficient fixed
    entropy_coef_final: float | None = None
    # "accuracy": per-attribute reconstruction accuracy of the greedy receiver;
    # "log-likelihood": mean per-attribute log-probability the receiver assigns to the truth
    reward: str = "accuracy"
    baseline: str = "mean"  # "mean" (running mean of rewards) or "none"
    baseline_decay: float = 0.99
    n_seeds: int = 20
    eval_every: int = 1
    metrics_split: str = "ood"
    pair_budget: int = DEFAULT_PAIR_BUDGET

    def __post_init__(self):
        if self.max_epochs < 0:
            raise ConfigError("max_epochs must be >= 0")
        if self.early_stop is not None and not 0.0 < self.early_stop <= 1.0:
            raise ConfigError("early_stop must be in (0, 1]")
        if self.batch_size < 1 or self.eval_every < 1 or self.n_seeds < 1:
            raise ConfigError("batch_size, eval_every and n_seeds must be >= 1")
        if self.baseline not in ("mean", "none"):
            raise ConfigError(f"unknown baseline kind {self.baseline!r}")
        if self.reward not in ("accuracy", "log-likelihood"):
            raise ConfigError(f"unknown reward kind {self.reward!r}")
        if self.metrics_split not in SPLITS:
            raise ConfigError(f"metrics_split must be one of {SPLITS}")

    def entropy_coef_at(self, epoch: int) -> float:
        if self.entropy_coef_final is None or self.max_epochs <= 1:
            return self.entropy_coef
        frac = min(1.0, epoch / (self.max_epochs - 1))
        return self.entropy_coef + frac * (self.entropy_coef_final - self.entropy_coef)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class RunRecord:
    kind: str
    seed: int
    label: str
    game: dict
    archs: dict
    train: dict
    epochs: int = 0
    curves: dict = field(default_factory=lambda: {"epoch": [], "train_acc": [], "train_loss": [], "ood_acc": []})
    # headline accuracy per split: whole-instance for the game, exact-sequence when learning alone
    final: dict = field(default_factory=dict)
    final_detail: dict = field(default_factory=dict)
    metrics: dict | None = None
    stop_reason: str = ""
    experiment: str = ""
    wall_time: float = 0.0

    def to_json(self, timing: bool = False) -> str:
        """One canonical JSON line; wall time is left out unless asked for."""
        d = asdict(self)
        if not timing:
            d.pop("wall_time")
        return json.dumps(d, sort_keys=True, allow_nan=False)

    @classmethod
    def from_json(cls, line: str) -> "RunRecord":
        return cls(**json.loads(line))


# ------------------------------------------------------------ configs


def sender_arch(kind: str, game: GameConfig, hidden: int, embedding: int | None = None, max_len: int | None = None) -> ArchitectureConfig:
    return ArchitectureConfig(
        kind=kind,
        input_vocab=game.n_val,
        output_vocab=game.c_voc + 1,
        max_output_len=game.c_len if max_len is None else max_len,
        hidden_size=hidden,
        embedding_size=hidden if embedding is None else embedding,
        eos=game.c_voc,
    )


def receiver_arch(kind: str, game: GameConfig, hidden: int, embedding: int | None = None) -> ArchitectureConfig:
    return ArchitectureConfig(
        kind=kind,
        input_vocab=game.c_voc + 1,
        output_vocab=game.n_val,
        max_output_len=game.i_att,
        hidden_size=hidden,
        embedding_size=hidden if embedding is None else embedding,
    )


def arch_label(*archs: ArchitectureConfig) -> str:
    kinds = {a.kind for a in archs}
    kind = kinds.pop() if len(kinds) == 1 else "+".join(a.kind for a in archs)
    return f"{kind}-h{archs[0].hidden_size}"


# ------------------------------------------------------------ helpers


def _instances_array(instances) -> np.ndarray:
    return np.array(instances, dtype=np.int64).reshape(len(instances), -1)


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def _message_arrays(messages, pad: int) -> tuple[np.ndarray, np.ndarray]:
    return pad_sequences([m if len(m) else (pad,) for m in messages], pad)


def _finite(x: float, what: str) -> float:
    if not math.isfinite(x):
        raise NumericError(f"non-finite {what}: {x}")
    return x


# ------------------------------------------------------------ REINFORCE


def reinforce_loss(
    log_probs: list[Value],
    reward,
    baseline,
    entropies: list[Value] | None = None,
    entropy_coef: float = 0.0,
    live: np.ndarray | None = None,
) -> Value:
    """Per-row ``-(reward - baseline) * sum(log_probs) - entropy_coef * sum(entropies)``.

    ``reward`` and ``baseline`` are constants (no gradient).  ``live`` masks
    the steps that belong to each message.
    """
    reward = np.asarray(reward, dtype=np.float64)
    baseline = np.asarray(baseline, dtype=np.float64)
    if not np.all(np.isfinite(reward)) or not np.all(np.isfinite(baseline)):
        raise NumericError("reward and baseline must be finite")
    advantage = reward - baseline
    total_lp, total_h = None, None
    for t, lp in enumerate(log_probs):
        if live is not None and not live[:, t].all():
            lp = lp * Value(live[:, t].astype(np.float64))
        total_lp = lp if total_lp is None else total_lp + lp
        if entropies is not None and entropy_coef:
            h = entropies[t]
            if live is not None and not live[:, t].all():
                h = h * Value(live[:, t].astype(np.float64))
            total_h = h if total_h is None else total_h + h
    loss = -(total_lp * Value(advantage))
    if total_h is not None:
        loss = loss - total_h * entropy_coef
    return loss


class RunningMean:
    """Exponentially decayed mean of batch rewards; starts at the first batch."""

    def __init__(self, decay: float = 0.99):
        self.decay = decay
        self.value: float | None = None

    def get(self, fallback: float) -> float:
        return fallback if self.value is None else self.value

    def update(self, x: float) -> None:
        self.value = x if self.value is None else self.decay * self.value + (1.0 - self.decay) * x


# ------------------------------------------------------------ evaluation


@dataclass
class Evaluation:
    per_attribute: float
    whole: float
    table: LanguageTable
    predictions: np.ndarray


def evaluate(sender: Agent, receiver: Agent, instances, game: GameConfig) -> Evaluation:
    """Greedy end-to-end reconstruction."""
    x = _instances_array(instances)
    with dc.no_grad():
        symbols, lengths, eos = sender.decode_greedy(sender.encode(x))
        messages = [tuple(int(s) for s in row[:n]) for row, n in zip(symbols, lengths)]
        msg, mask = _message_arrays(messages, game.c_voc)
        pred, _, _ = receiver.decode_greedy(receiver.encode(msg, mask))
    return _score(x, pred, messages, game)


def _score(x: np.ndarray, pred: np.ndarray, messages, game: GameConfig) -> Evaluation:
    if len(x) == 0:
        table = LanguageTable((), (), game.c_len, game.c_voc)
        return Evaluation(float("nan"), float("nan"), table, pred)
    hit = pred[:, : x.shape[1]] == x
    table = LanguageTable(tuple(map(tuple, x.tolist())), tuple(messages), game.c_len, game.c_voc)
    return Evaluation(float(hit.mean()), float(hit.all(axis=1).mean()), table, pred)


# ------------------------------------------------------------ learning alone


def _alone_eval(role: str, agent: Agent, instances, oracle: dict, mapping: OracleMapping) -> tuple[float, float]:
    """(exact-sequence accuracy, per-token accuracy) of greedy decoding."""
    if not instances:
        return float("nan"), float("nan")
    x = _instances_array(instances)
    with dc.no_grad():
        if role == "sender":
            symbols, lengths, _ = agent.decode_greedy(agent.encode(x))
            exact, tok, n_tok = 0, 0, 0
            for inst, row, n in zip(instances, symbols, lengths):
                got, want = tuple(row[:n].tolist()), oracle[tuple(inst)]
                exact += got == want
                tok += sum(a == b for a, b in zip(got, want))
                n_tok += max(len(got), len(want))
            return exact / len(x), tok / n_tok
        msg, mask = pad_sequences([oracle[tuple(i)] for i in instances], 0)
        pred, _, _ = agent.decode_greedy(agent.encode(msg, mask))
        hit = pred == x
        return float(hit.all(axis=1).mean()), float(hit.mean())


def train_alone(
    role: str,
    arch: ArchitectureConfig,
    pairs,
    splits: DatasetSplits,
    config: TrainConfig,
    game: GameConfig,
    mapping: OracleMapping,
    seed: int = 0,
    experiment: str = "",
) -> RunRecord:
    """Teacher-forced supervised training of one agent on the oracle language."""
    if role not in ("sender", "receiver"):
        raise ConfigError(f"role must be sender or receiver, got {role!r}")
    if not splits.train:
        raise ContractError("empty training split")
    oracle = {tuple(i): tuple(m) for i, m in pairs}
    missing = [i for i in splits.train if i not in oracle]
    if missing:
        raise ContractError(f"oracle pairs miss {len(missing)} training instances")
    for inst, msg in make_supervised_pairs(mapping, splits.ind_test + splits.ood_test):
        oracle.setdefault(inst, msg)

    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    agent = Agent(arch, seed=seed)
    train = list(splits.train)
    x_all = _instances_array(train)
    eos = arch.eos

    record = RunRecord(
        kind=f"learning-alone-{role}",
        seed=seed,
        label=arch_label(arch),
        game=game.to_dict(),
        archs={role: arch.to_dict()},
        train=config.to_dict(),
        experiment=experiment,
    )

    def step(idx: np.ndarray) -> float:
        xb = x_all[idx]
        msgs = [oracle[tuple(r)] for r in xb.tolist()]
        if role == "sender":
            targets = [m + (eos,) if len(m) < arch.max_output_len else m for m in msgs]
            tgt, tmask = pad_sequences(targets, eos)
            loss_rows = agent.teacher_forced_loss(agent.encode(xb), tgt, tmask)
        else:
            msg, mask = pad_sequences(msgs, 0)
            loss_rows = agent.teacher_forced_loss(agent.encode(msg, mask), xb)
        loss = dc.mean(loss_rows)
        loss.backward()
        dc.optimizer_step(agent.params, config.lr, config.optimizer)
        return loss.item()

    record.stop_reason = "max-epochs"
    for epoch in range(config.max_epochs):
        losses = [step(idx) for idx in _batches(len(train), config.batch_size, rng)]
        train_acc, _ = _alone_eval(role, agent, train, oracle, mapping)
        ood = None
        if (epoch + 1) % config.eval_every == 0 or epoch == config.max_epochs - 1:
            ood = _alone_eval(role, agent, list(splits.ood_test), oracle, mapping)[0]
        record.curves["epoch"].append(epoch + 1)
        record.curves["train_acc"].append(train_acc)
        record.curves["train_loss"].append(_finite(float(np.mean(losses)), "loss"))
        record.curves["ood_acc"].append(ood)
        record.epochs = epoch + 1
        if config.early_stop is not None and train_acc >= config.early_stop:
            record.stop_reason = "early-stop"
            break

    for name in SPLITS:
        exact, token = _alone_eval(role, agent, list(splits.by_name(name)), oracle, mapping)
        record.final[name] = exact
        record.final_detail[name] = {"exact": exact, "token": token}
    record.wall_time = time.perf_counter() - t0
    record._agent = agent  # type: ignore[attr-defined]  # handy for callers, not serialised
    return record


# ------------------------------------------------------------ communication game


def _check_pair(sender: ArchitectureConfig, receiver: ArchitectureConfig, game: GameConfig) -> None:
    if sender.output_vocab != receiver.input_vocab:
        raise ConfigError(
            f"sender alphabet ({sender.output_vocab}) != receiver alphabet ({receiver.input_vocab})"
        )
    if sender.input_vocab != game.n_val or receiver.output_vocab != game.n_val:
        raise ConfigError("agent vocabularies do not match n_val")
    if sender.eos is None:
        raise ConfigError("the sender needs an EOS symbol")
    if receiver.max_output_len != game.i_att:
        raise ConfigError("the receiver must decode exactly i_att symbols")


@dataclass
class GameStep:
    sender_loss: Value
    receiver_loss: Value
    reward: np.ndarray


def game_step(
    sender: Agent,
    receiver: Agent,
    xb: np.ndarray,
    rng: np.random.Generator,
    baseline: float,
    entropy_coef: float,
    pad: int,
    reward_kind: str = "accuracy",
) -> GameStep:
    """Forward pass of one batch; the two losses live on disjoint parameters."""
    sample = sender.decode_sample(sender.encode(xb), rng)
    msg, mask = _message_arrays([m.symbols for m in sample.messages()], pad)
    rsrc = receiver.encode(msg, mask)
    ce_rows = receiver.teacher_forced_loss(rsrc, xb)
    receiver_loss = dc.mean(ce_rows)
    if reward_kind == "accuracy":
        with dc.no_grad():
            pred, _, _ = receiver.decode_greedy(rsrc)
        reward = (pred == xb).mean(axis=1)
    else:
        reward = -ce_rows.data / xb.shape[1]
    sender_loss = dc.mean(
        reinforce_loss(sample.log_probs, reward, baseline, sample.entropies, entropy_coef, sample.live)
    )
    return GameStep(sender_loss, receiver_loss, reward)


def train_game(
    sender_cfg: ArchitectureConfig,
    receiver_cfg: ArchitectureConfig,
    splits: DatasetSplits,
    config: TrainConfig,
    game: GameConfig,
    seed: int = 0,
    experiment: str = "",
    sender: Agent | None = None,
    freeze_sender: bool = False,
) -> RunRecord:
    """REINFORCE for the sender, cross-entropy for the receiver.

    ``sender`` may be supplied (e.g. pre-trained) and frozen.
    """
    _check_pair(sender_cfg, receiver_cfg, game)
    if not splits.train:
        raise ContractError("empty training split")
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    sender = sender if sender is not None else Agent(sender_cfg, seed=2 * seed)
    receiver = Agent(receiver_cfg, seed=2 * seed + 1)
    x_all = _instances_array(list(splits.train))
    baseline = RunningMean(config.baseline_decay)

    record = RunRecord(
        kind="communication-game",
        seed=seed,
        label=arch_label(sender_cfg, receiver_cfg),
        game=game.to_dict(),
        archs={"sender": sender_cfg.to_dict(), "receiver": receiver_cfg.to_dict()},
        train=config.to_dict(),
        experiment=experiment,
    )
    record.stop_reason = "max-epochs"
    for epoch in range(config.max_epochs):
        coef = config.entropy_coef_at(epoch)
        losses = []
        for idx in _batches(len(x_all), config.batch_size, rng):
            xb = x_all[idx]
            b = baseline.get(0.0) if config.baseline == "mean" else 0.0
            st = game_step(sender, receiver, xb, rng, b, coef, game.c_voc, config.reward)
            total = st.receiver_loss if freeze_sender else st.receiver_loss + st.sender_loss
            total.backward()
            dc.optimizer_step(receiver.params, config.lr, config.optimizer)
            if freeze_sender:
                sender.params.zero_grad()
            else:
                dc.optimizer_step(sender.params, config.lr, config.optimizer)
            baseline.update(float(st.reward.mean()))
            losses.append(_finite(st.receiver_loss.item(), "receiver loss"))
        train_acc = evaluate(sender, receiver, splits.train, game).whole
        ood = None
        if (epoch + 1) % config.eval_every == 0 or epoch == config.max_epochs - 1:
            ood = evaluate(sender, receiver, splits.ood_test, game).whole
        record.curves["epoch"].append(epoch + 1)
        record.curves["train_acc"].append(train_acc)
        record.curves["train_loss"].append(float(np.mean(losses)))
        record.curves["ood_acc"].append(ood)
        record.epochs = epoch + 1
        if config.early_stop is not None and train_acc >= config.early_stop:
            record.stop_reason = "early-stop"
            break

    tables = {}
    for name in SPLITS:
        ev = evaluate(sender, receiver, splits.by_name(name), game)
        record.final[name] = ev.whole
        record.final_detail[name] = {"per_attribute": ev.per_attribute, "whole": ev.whole}
        tables[name] = ev.table
    table = tables[config.metrics_split]
    if len(table) >= 2:
        record.metrics = compute_metrics(table, config.pair_budget, seed=seed).to_dict()
    record.wall_time = time.perf_counter() - t0
    record._agents = (sender, receiver)  # type: ignore[attr-defined]
    return record


def capacity_sweep(run_one, hidden_sizes, base_arch: dict | None = None) -> list[RunRecord]:
    """Call ``run_one(hidden)`` once per size and collect the records.

    ``run_one`` returns a list of records (one per seed) for a hidden size;
    hidden and embedding sizes move together.
    """
    sizes = list(hidden_sizes)
    if not sizes:
        raise ContractError("capacity sweep needs at least one hidden size")
    records: list[RunRecord] = []
    for h in sizes:
        records.extend(run_one(h))
    return records
