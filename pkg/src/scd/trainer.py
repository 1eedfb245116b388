"""Optimization loop, ablation modes, coarse-to-fine grid search and checkpoint I/O."""
from __future__ import annotations

import csv
import hashlib
import io
import itertools
import json
import logging
import struct
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .core_math import NonFiniteError, RngState
from .encoder import SentenceBatch, Vocab, build_vocab
from .model import ModelParams
from .objective import ABLATION_MODES, Hyperparams, LossBreakdown, joint_loss
from .projector import update_running_stats

logger = logging.getLogger(__name__)

MAGIC = b"SCDCKPT\x00"
FORMAT_VERSION = 1
LOG_COLUMNS = ("step", "l_s", "l_c_invariance", "l_c_redundancy", "l_c", "total")


class CheckpointError(ValueError):
    pass


class DivergenceError(FloatingPointError):
    def __init__(self, step: int, message: str = ""):
        self.step = step
        super().__init__(f"training diverged at step {step}{': ' + message if message else ''}")


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    epochs: int = 200
    batch_size: int = 32
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    ablation_mode: str = "joint"
    hp: Hyperparams = field(default_factory=Hyperparams)
    embed_dim: int = 64
    hidden_dim: int = 64
    n_blocks: int = 2
    projector_dim: int = 256
    token_dropout: bool = True
    relu_before_bn: bool = False
    bn_eps: float = 1e-5
    bn_momentum: float = 0.1
    vocab_min_count: int = 1
    vocab_max_size: int | None = None
    max_steps: int | None = None

    def __post_init__(self):
        if isinstance(self.hp, dict):
            self.hp = Hyperparams(**self.hp)
        self.validate()

    def validate(self) -> None:
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 2:
            raise ValueError("batch_size must be at least 2")
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"optimizer must be 'adam' or 'sgd', got {self.optimizer!r}")
        if self.ablation_mode not in ABLATION_MODES:
            raise ValueError(f"ablation_mode must be one of {ABLATION_MODES}")
        self.hp.validate()

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        d["hp"] = Hyperparams(**d.get("hp", {}))
        return cls(**d)


class SGD:
    def __init__(self, lr: float):
        self.lr = lr
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        for k, p in params.items():
            p -= self.lr * grads[k]

    def state(self) -> dict[str, np.ndarray]:
        return {}

    def load_state(self, state: dict[str, np.ndarray], t: int) -> None:
        self.t = t


class Adam:
    """Bias-corrected Adam."""

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for k, p in params.items():
            g = grads[k]
            m = self.m.setdefault(k, np.zeros_like(p))
            v = self.v.setdefault(k, np.zeros_like(p))
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state(self) -> dict[str, np.ndarray]:
        out = {f"adam.m.{k}": v for k, v in self.m.items()}
        out.update({f"adam.v.{k}": v for k, v in self.v.items()})
        return out

    def load_state(self, state: dict[str, np.ndarray], t: int) -> None:
        self.t = t
        self.m = {k[len("adam.m."):]: v.copy() for k, v in state.items() if k.startswith("adam.m.")}
        self.v = {k[len("adam.v."):]: v.copy() for k, v in state.items() if k.startswith("adam.v.")}


def make_optimizer(config: TrainConfig):
    if config.optimizer == "sgd":
        return SGD(config.learning_rate)
    return Adam(config.learning_rate, config.beta1, config.beta2, config.adam_eps)


@dataclass
class Checkpoint:
    params: ModelParams
    config: TrainConfig
    vocab: Vocab
    step: int = 0
    optimizer_state: dict[str, np.ndarray] = field(default_factory=dict)
    format_version: int = FORMAT_VERSION

    @property
    def rng(self) -> RngState:
        return RngState(self.config.seed)


def init_checkpoint(corpus: Sequence[str], config: TrainConfig, vocab: Vocab | None = None) -> Checkpoint:
    """Untrained model for ``corpus``: vocabulary plus freshly initialized weights."""
    vocab = vocab or build_vocab(corpus, config.vocab_min_count, config.vocab_max_size)
    params = ModelParams.init(
        len(vocab), config.embed_dim, config.hidden_dim, config.n_blocks, config.projector_dim,
        rng=RngState(config.seed).spawn(0), token_dropout=config.token_dropout,
        eps=config.bn_eps, momentum=config.bn_momentum, relu_before_bn=config.relu_before_bn,
    )
    return Checkpoint(params, config, vocab)


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    log: list[dict[str, float]]

    def epoch_means(self, steps_per_epoch: int) -> list[dict[str, float]]:
        out = []
        for start in range(0, len(self.log), steps_per_epoch):
            chunk = self.log[start:start + steps_per_epoch]
            out.append({k: float(np.mean([r[k] for r in chunk])) for k in LOG_COLUMNS[1:]})
        return out


def steps_per_epoch(n_sentences: int, batch_size: int) -> int:
    return n_sentences // batch_size


def train(corpus: Sequence[str], config: TrainConfig, resume: Checkpoint | None = None,
          max_steps: int | None = None, vocab: Vocab | None = None,
          callback: Callable[[int, LossBreakdown], None] | None = None) -> TrainResult:
    """Minimize the (ablated) joint objective over ``corpus``.

    Shuffling and dropout masks come from streams keyed on (epoch, batch), so a
    run resumed from a checkpoint replays exactly the remaining steps.
    ``max_steps`` (or ``config.max_steps``) stops early; the step counter is global.
    """
    corpus = list(corpus)
    if len(corpus) < config.batch_size:
        raise ValueError(f"corpus has {len(corpus)} sentences, fewer than batch_size={config.batch_size}")
    ck = resume if resume is not None else init_checkpoint(corpus, config, vocab)
    if resume is not None:
        ck = Checkpoint(ck.params.copy(), config, ck.vocab, ck.step,
                        {k: v.copy() for k, v in ck.optimizer_state.items()})
    params = ck.params
    params.projector.train()
    all_batch = SentenceBatch.from_sentences(corpus, ck.vocab)
    n_per_epoch = steps_per_epoch(len(corpus), config.batch_size)
    total_steps = n_per_epoch * config.epochs
    limit = max_steps if max_steps is not None else config.max_steps
    stop = total_steps if limit is None else min(total_steps, limit)

    opt = make_optimizer(config)
    opt.load_state(ck.optimizer_state, ck.step)
    root = RngState(config.seed)
    named = params.named()
    log: list[dict[str, float]] = []
    step = ck.step
    while step < stop:
        epoch, b = divmod(step, n_per_epoch)
        order = root.spawn(1, epoch).generator().permutation(len(corpus))
        rows = order[b * config.batch_size:(b + 1) * config.batch_size]
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                res = joint_loss(all_batch.take(rows), params, config.hp, root.spawn(2, epoch, b),
                                 config.ablation_mode)
        except (NonFiniteError, ZeroDivisionError) as e:
            raise DivergenceError(step, str(e)) from e
        if not np.isfinite(res.losses.total) or not all(np.all(np.isfinite(g)) for g in res.grads.values()):
            raise DivergenceError(step, "non-finite loss or gradient")
        opt.step(named, res.grads)
        for cache in res.projector_caches:
            update_running_stats(params.projector, cache)
        params.bump_version()
        step += 1
        log.append({"step": step, **res.losses.as_row()})
        if callback is not None:
            callback(step, res.losses)
        if step % max(n_per_epoch, 1) == 0:
            logger.debug("epoch %d total=%.6f", step // n_per_epoch, res.losses.total)
    ck.step = step
    ck.optimizer_state = opt.state()
    return TrainResult(ck, log)


def write_loss_log(log: Iterable[dict[str, float]], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(LOG_COLUMNS)
        for row in log:
            w.writerow([int(row["step"])] + [repr(float(row[k])) for k in LOG_COLUMNS[1:]])


def read_loss_log(path) -> list[dict[str, float]]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [{k: (int(v) if k == "step" else float(v)) for k, v in row.items()} for row in csv.DictReader(fh)]


# --- checkpoint serialization -------------------------------------------------
# layout: MAGIC | u32 version | u64 header length | UTF-8 JSON header |
#         little-endian float64 tensor payload | sha256 of everything before


def checkpoint_bytes(ck: Checkpoint) -> bytes:
    p = ck.params
    tensors = {**p.tensors(), **ck.optimizer_state}
    names = sorted(tensors)
    header = {
        "config": ck.config.to_dict(),
        "vocab": ck.vocab.itos,
        "step": ck.step,
        "rng": {"seed": ck.config.seed},
        "n_blocks": len(p.encoder.weights),
        "token_dropout": p.encoder.token_dropout,
        "projector": {"eps": p.projector.eps, "momentum": p.projector.momentum,
                      "relu_before_bn": p.projector.relu_before_bn},
        "tensors": [[n, list(tensors[n].shape)] for n in names],
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<IQ", FORMAT_VERSION, len(head)))
    buf.write(head)
    for n in names:
        buf.write(np.ascontiguousarray(tensors[n], dtype="<f8").tobytes())
    body = buf.getvalue()
    return body + hashlib.sha256(body).digest()


def save_checkpoint(ck: Checkpoint, path) -> None:
    Path(path).write_bytes(checkpoint_bytes(ck))


def checkpoint_from_bytes(data: bytes) -> Checkpoint:
    if len(data) < len(MAGIC) + 12 + 32 or data[:len(MAGIC)] != MAGIC:
        raise CheckpointError("not an SCD checkpoint (bad magic bytes)")
    body, digest = data[:-32], data[-32:]
    version, head_len = struct.unpack_from("<IQ", body, len(MAGIC))
    if version != FORMAT_VERSION:
        raise CheckpointError(f"checkpoint format version {version} is not supported (expected {FORMAT_VERSION})")
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError("checkpoint checksum mismatch (truncated or corrupted file)")
    off = len(MAGIC) + 12
    header = json.loads(body[off:off + head_len].decode("utf-8"))
    off += head_len
    tensors = {}
    for name, shape in header["tensors"]:
        count = int(np.prod(shape)) if shape else 1
        tensors[name] = np.frombuffer(body, dtype="<f8", count=count, offset=off).astype(np.float64).reshape(shape)
        off += 8 * count
    if off != len(body):
        raise CheckpointError("checkpoint payload length does not match its header")

    config = TrainConfig.from_dict(header["config"])
    nb = header["n_blocks"]
    from .encoder import EncoderParams
    from .projector import ProjectorParams
    enc = EncoderParams(tensors["encoder.embedding"],
                        [tensors[f"encoder.W{i}"] for i in range(nb)],
                        [tensors[f"encoder.b{i}"] for i in range(nb)], header["token_dropout"])
    pj = header["projector"]
    proj = ProjectorParams(
        [tensors[f"projector.W{i}"] for i in range(3)],
        [tensors[f"projector.b{i}"] for i in range(3)],
        [tensors[f"projector.gamma{i}"] for i in range(2)],
        [tensors[f"projector.beta{i}"] for i in range(2)],
        [tensors[f"projector.running_mean{i}"] for i in range(2)],
        [tensors[f"projector.running_var{i}"] for i in range(2)],
        eps=pj["eps"], momentum=pj["momentum"], relu_before_bn=pj["relu_before_bn"],
    )
    opt_state = {k: v for k, v in tensors.items() if k.startswith("adam.")}
    return Checkpoint(ModelParams(enc, proj), config, Vocab(header["vocab"]), header["step"], opt_state, version)


def load_checkpoint(path) -> Checkpoint:
    return checkpoint_from_bytes(Path(path).read_bytes())


# --- grid search ----------------------------------------------------------------


@dataclass
class GridSearchSpec:
    """Coarse values per hyperparameter, then a fine grid around the coarse winner.

    Fine steps: ``alpha_fine_step`` for alpha, ``rate_fine_step`` for both dropout
    rates, and one tenth of the winning magnitude for lambda. ``fine_radius``
    is the number of fine steps taken on each side.
    """

    alpha: Sequence[float] = (0.1, 0.2, 0.3)
    lambda_: Sequence[float] = (0.1, 0.01, 0.001)
    r_a: Sequence[float] = (0.0, 0.1)
    r_b: Sequence[float] = (0.1, 0.2, 0.3)
    alpha_fine_step: float = 0.01
    rate_fine_step: float = 0.01
    fine_radius: int = 1
    fine: bool = True
    budget_steps: int = 50


def _valid(hp: dict) -> bool:
    return 0.0 <= hp["r_a"] < hp["r_b"] < 1.0 and hp["lambda_"] >= 0.0 and hp["alpha"] >= 0.0


def coarse_candidates(spec: GridSearchSpec) -> list[dict]:
    combos = itertools.product(spec.alpha, spec.lambda_, spec.r_a, spec.r_b)
    cands = [dict(alpha=a, lambda_=l, r_a=ra, r_b=rb) for a, l, ra, rb in combos]
    return [c for c in cands if _valid(c)]


def fine_candidates(center: dict, spec: GridSearchSpec) -> list[dict]:
    k = range(-spec.fine_radius, spec.fine_radius + 1)
    lam_step = center["lambda_"] / 10.0

    def axis(v, step):
        return [round(v + i * step, 10) for i in k]

    cands = [
        dict(alpha=a, lambda_=l, r_a=ra, r_b=rb)
        for a, l, ra, rb in itertools.product(
            axis(center["alpha"], spec.alpha_fine_step), axis(center["lambda_"], lam_step),
            axis(center["r_a"], spec.rate_fine_step), axis(center["r_b"], spec.rate_fine_step))
    ]
    return [c for c in cands if _valid(c)]


@dataclass
class GridSearchResult:
    best: Hyperparams
    table: list[dict]  # one row per evaluated candidate: stage, alpha, lambda_, r_a, r_b, spearman


def evaluate_candidate(corpus, val_pairs, base: TrainConfig, cand: dict, budget_steps: int) -> float:
    from .evaluation import score_checkpoint

    config = replace(base, hp=replace(base.hp, **cand))
    ck = train(corpus, config, max_steps=budget_steps).checkpoint
    try:
        return score_checkpoint(val_pairs, ck)
    except ValueError:  # constant similarities: Spearman undefined
        return float("nan")


def grid_search(corpus: Sequence[str], val_pairs, spec: GridSearchSpec, base: TrainConfig) -> GridSearchResult:
    """Coarse pass, then a fine pass centred on the coarse winner; ties go to the earliest candidate."""
    if len(val_pairs) == 0:
        raise ValueError("grid search needs a non-empty validation pair set")
    table: list[dict] = []

    def run(stage: str, cands: list[dict]) -> dict:
        if not cands:
            raise ValueError(f"no valid {stage} candidates after enforcing r_a < r_b")
        best, best_score = None, -np.inf
        for c in cands:
            score = evaluate_candidate(corpus, val_pairs, base, c, spec.budget_steps)
            table.append({"stage": stage, **c, "spearman": score})
            logger.info("%s %s -> %.4f", stage, c, score)
            ranked = score if np.isfinite(score) else -np.inf
            if best is None or ranked > best_score:
                best, best_score = c, ranked
        return best

    winner = run("coarse", coarse_candidates(spec))
    if spec.fine:
        winner = run("fine", fine_candidates(winner, spec))
    return GridSearchResult(replace(base.hp, **winner), table)
