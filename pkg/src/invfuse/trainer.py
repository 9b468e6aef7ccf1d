"""Self-supervised training loop with the adaptive loss and resumable checkpoints."""
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional, Tuple

import numpy as np
import torch

from . import checkpoint as ckpt
from .data import CROP_SOURCE, crop_augment, load_manifest
from .errors import CheckpointVersionError, ConfigError, NumericsError
from .loss import AdaptiveWeights, compute_weights, total_loss
from .model import ModelConfig, build_model

log = logging.getLogger(__name__)

LOSS_LOG_COLUMNS = ("step", "alpha1", "alpha2", "beta1", "beta2", "ssim_term", "rmi_term", "total")
CHECKPOINT_KIND = "invfuse-train-state"


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 1
    epochs: int = 30
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    checkpoint_every: int = 1000
    manifest_path: Optional[str] = None
    normalize_weights: bool = False
    fixed_weights: Optional[Tuple[float, float, float, float]] = None
    grad_clip: Optional[float] = None
    max_steps: Optional[int] = None
    augment: bool = True

    def __post_init__(self):
        if self.fixed_weights is not None:
            self.fixed_weights = tuple(float(w) for w in self.fixed_weights)
        self.validate()

    def validate(self):
        if self.batch_size != 1:
            raise ConfigError("only batch_size=1 is supported")
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be non-negative")
        if self.epochs < 0:
            raise ConfigError("epochs must be non-negative")
        if self.checkpoint_every < 1:
            raise ConfigError("checkpoint_every must be positive")
        if self.fixed_weights is not None and (
                len(self.fixed_weights) != 4
                or not all(math.isfinite(w) and w >= 0 for w in self.fixed_weights)):
            raise ConfigError("fixed_weights must be four finite non-negative numbers")
        if self.grad_clip is not None and self.grad_clip <= 0:
            raise ConfigError("grad_clip must be positive")
        if self.max_steps is not None and self.max_steps < 0:
            raise ConfigError("max_steps must be non-negative")

    def to_dict(self):
        d = asdict(self)
        if d["fixed_weights"] is not None:
            d["fixed_weights"] = list(d["fixed_weights"])
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown train option(s): {sorted(unknown)}")
        return cls(**d)


@dataclass
class TrainState:
    model: torch.nn.Module
    optimizer: torch.optim.Optimizer
    config: TrainConfig
    step: int = 0
    epoch: int = 0
    position: int = 0
    dump_dir: Optional[Path] = field(default=None, repr=False)

    @property
    def model_config(self):
        return self.model.config


def make_optimizer(model, config):
    return torch.optim.Adam(model.parameters(), lr=config.learning_rate,
                            betas=(config.beta1, config.beta2), eps=config.adam_eps)


def create_state(model_config=None, train_config=None):
    model_config = model_config or ModelConfig()
    train_config = train_config or TrainConfig()
    model = build_model(model_config)
    return TrainState(model, make_optimizer(model, train_config), train_config)


def _plane(x, like):
    return torch.as_tensor(np.asarray(x), dtype=like.dtype, device=like.device)[None, None]


def sample_weights(pair, config):
    if config.fixed_weights is not None:
        return AdaptiveWeights(*config.fixed_weights)
    return compute_weights(pair.mri, pair.functional_y, normalize=config.normalize_weights)


def train_step(state, pair):
    """One Adam update on a single pair; returns ``(state, LossBreakdown)``."""
    model = state.model
    model.train()
    p = next(model.parameters())
    mri, func = _plane(pair.mri, p), _plane(pair.functional_y, p)
    weights = sample_weights(pair, state.config)
    fused = model(mri, func)
    if not torch.isfinite(fused).all():
        _numerics_failure(state, pair, {"reason": "non-finite network output"})
    # loss in float64: the covariance log-determinants are fragile in float32
    try:
        breakdown = total_loss(fused.double(), pair.mri, pair.functional_y, weights)
    except torch.linalg.LinAlgError as exc:
        _numerics_failure(state, pair, {"reason": f"linear algebra failure: {exc}"})
    if not torch.isfinite(breakdown.total):
        _numerics_failure(state, pair, breakdown.to_dict())
    state.optimizer.zero_grad(set_to_none=True)
    breakdown.total.backward()
    if state.config.grad_clip is not None:
        torch.nn.utils.clip_grad_norm_(model.parameters(), state.config.grad_clip)
    state.optimizer.step()
    state.step += 1
    breakdown.ssim_term = breakdown.ssim_term.detach()
    breakdown.rmi_term = breakdown.rmi_term.detach()
    breakdown.total = breakdown.total.detach()
    return state, breakdown


def _numerics_failure(state, pair, details):
    info = {"step": state.step, "pair": pair.identifier}
    info.update(details)
    bad = [n for n, q in state.model.named_parameters() if not torch.isfinite(q).all()]
    info["non_finite_parameters"] = bad
    msg = f"non-finite loss at step {state.step}: {json.dumps(info)}"
    if state.dump_dir is not None:
        dump = Path(state.dump_dir) / f"numerics_step{state.step}.json"
        dump.parent.mkdir(parents=True, exist_ok=True)
        dump.write_text(json.dumps(info, indent=2))
        msg += f" (dump: {dump})"
    raise NumericsError(msg)


# -- checkpoints -------------------------------------------------------------

def save_checkpoint(state, path):
    model = state.model
    tensors = {}
    for name, value in model.state_dict().items():
        tensors[f"model/{name}"] = value.detach().cpu().numpy()
    params = list(model.parameters())
    for i, p in enumerate(params):
        st = state.optimizer.state.get(p)
        if not st:
            continue
        tensors[f"adam/{i}/step"] = np.asarray(float(st["step"]), dtype=np.float32)
        tensors[f"adam/{i}/exp_avg"] = st["exp_avg"].detach().cpu().numpy()
        tensors[f"adam/{i}/exp_avg_sq"] = st["exp_avg_sq"].detach().cpu().numpy()
    header = {
        "kind": CHECKPOINT_KIND,
        "model_config": model.config.to_dict(),
        "train_config": state.config.to_dict(),
        "step": state.step,
        "rng": {"seed": state.config.seed, "epoch": state.epoch, "position": state.position},
    }
    ckpt.write_atomic(path, ckpt.encode(header, tensors))


def load_checkpoint(path, model_config=None, train_config=None):
    """Restore a :class:`TrainState`.

    Raises ConfigError when ``model_config`` is given and differs from the
    stored one. ``train_config`` overrides the stored training options
    (the optimiser moments are kept).
    """
    header, tensors = ckpt.read(path)
    if header.get("kind") != CHECKPOINT_KIND:
        raise CheckpointVersionError(f"{path} is not a training checkpoint")
    stored = ModelConfig.from_dict(header["model_config"])
    if model_config is not None and model_config != stored:
        raise ConfigError(f"checkpoint was written for {stored}, not {model_config}")
    tconf = train_config or TrainConfig.from_dict(header["train_config"])
    model = build_model(stored)
    sd = model.state_dict()
    try:
        for name in sd:
            sd[name] = torch.from_numpy(tensors[f"model/{name}"]).reshape(sd[name].shape)
    except KeyError as exc:
        raise CheckpointVersionError(f"checkpoint lacks tensor {exc}") from exc
    model.load_state_dict(sd)
    optimizer = make_optimizer(model, tconf)
    for i, p in enumerate(model.parameters()):
        key = f"adam/{i}/step"
        if key in tensors:
            optimizer.state[p] = {
                "step": torch.tensor(float(tensors[key])),
                "exp_avg": torch.from_numpy(tensors[f"adam/{i}/exp_avg"]).reshape(p.shape),
                "exp_avg_sq": torch.from_numpy(tensors[f"adam/{i}/exp_avg_sq"]).reshape(p.shape),
            }
    rng = header["rng"]
    return TrainState(model, optimizer, tconf, step=header["step"],
                      epoch=rng["epoch"], position=rng["position"])


def load_model(path):
    """Load only the network from a checkpoint, in eval mode."""
    state = load_checkpoint(path)
    state.model.eval()
    return state.model


# -- full loop ---------------------------------------------------------------

def expand_pairs(pairs, augment=True):
    """Crop 256x256 pairs into patches; other sizes pass through unchanged."""
    out = []
    for pair in pairs:
        if augment and pair.shape == (CROP_SOURCE, CROP_SOURCE):
            out.extend(crop_augment(pair).patches)
        else:
            out.append(pair)
    return out


def epoch_order(seed, epoch, n):
    return np.random.default_rng([seed, epoch]).permutation(n)


def _format_log_row(step, breakdown):
    d = breakdown.to_dict()
    return "\t".join([str(step)] + [repr(float(d[c])) for c in LOSS_LOG_COLUMNS[1:]])


def _trim_loss_log(path, last_step):
    if not path.exists():
        return
    lines = path.read_text(encoding="utf-8").splitlines()
    kept = [lines[0]] + [ln for ln in lines[1:] if ln and int(ln.split("\t")[0]) <= last_step]
    path.write_text("\n".join(kept) + "\n", encoding="utf-8")


def train(train_config, pairs=None, model_config=None, out_dir=None, resume=True,
          on_step=None):
    """Train over every patch for ``epochs`` epochs and return the final state.

    ``pairs`` defaults to the pairs listed in ``train_config.manifest_path``.
    With ``out_dir`` set, checkpoints go to ``latest.ckpt`` every
    ``checkpoint_every`` steps and to ``final.ckpt`` at the end, and each step
    is appended to ``loss_log.tsv``. A run with ``resume`` picks up from an
    existing ``latest.ckpt``.
    """
    if pairs is None:
        if not train_config.manifest_path:
            raise ConfigError("no training pairs and no manifest_path")
        pairs = load_manifest(train_config.manifest_path)
    samples = expand_pairs(pairs, train_config.augment)
    if not samples:
        raise ConfigError("training set is empty")

    out_dir = Path(out_dir) if out_dir is not None else None
    latest = out_dir / "latest.ckpt" if out_dir is not None else None
    if latest is not None and resume and latest.exists():
        state = load_checkpoint(latest, model_config, train_config)
        log.info("resuming from %s at step %d", latest, state.step)
    else:
        state = create_state(model_config, train_config)
    loss_log = None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        state.dump_dir = out_dir
        loss_log = out_dir / "loss_log.tsv"
        if state.step == 0 or not loss_log.exists():
            loss_log.write_text("\t".join(LOSS_LOG_COLUMNS) + "\n", encoding="utf-8")
        else:
            _trim_loss_log(loss_log, state.step)

    cfg = train_config
    budget_hit = False
    while state.epoch < cfg.epochs and not budget_hit:
        order = epoch_order(cfg.seed, state.epoch, len(samples))
        while state.position < len(samples):
            if cfg.max_steps is not None and state.step >= cfg.max_steps:
                budget_hit = True
                break
            state, breakdown = train_step(state, samples[order[state.position]])
            state.position += 1
            if loss_log is not None:
                with loss_log.open("a", encoding="utf-8") as fh:
                    fh.write(_format_log_row(state.step, breakdown) + "\n")
            if on_step is not None:
                on_step(state, breakdown)
            if latest is not None and state.step % cfg.checkpoint_every == 0:
                save_checkpoint(state, latest)
        if not budget_hit:
            state.epoch += 1
            state.position = 0
    if out_dir is not None:
        save_checkpoint(state, latest)
        save_checkpoint(state, out_dir / "final.ckpt")
    return state


def read_loss_log(path):
    rows = []
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split("\t")
        for line in fh:
            if line.strip():
                vals = line.rstrip("\n").split("\t")
                row = dict(zip(header, map(float, vals)))
                row["step"] = int(row["step"])
                rows.append(row)
    return rows


def relative_reduction(first, last):
    """Fractional decrease from ``first`` to ``last``, relative to |first|."""
    if first == 0 or not math.isfinite(first):
        return 0.0
    return (first - last) / abs(first)
