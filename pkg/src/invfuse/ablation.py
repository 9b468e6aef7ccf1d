"""Ablation harness: train a grid of model/loss variants and rank them."""
import logging
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Tuple

import numpy as np
from scipy.stats import rankdata

from .errors import ConfigError
from .metrics import METRIC_NAMES, evaluate, format_table, mean_report
from .model import ModelConfig, fuse
from .trainer import TrainConfig, train

log = logging.getLogger(__name__)

FIXED_WEIGHT_GRID = (
    (0.2, 0.8, 1.0, 1.0), (0.4, 0.6, 1.0, 1.0), (0.6, 0.4, 1.0, 1.0), (0.8, 0.2, 1.0, 1.0),
    (1.0, 1.0, 0.2, 0.8), (1.0, 1.0, 0.4, 0.6), (1.0, 1.0, 0.6, 0.4), (1.0, 1.0, 0.8, 0.2),
)

PRESETS = {
    "structural": tuple(f"IDB_{k}" for k in range(6)) + tuple(f"TMU_{k}" for k in range(3))
    + ("CBAM_0", "all3x3", "all5x5", "all7x7", "adaptive"),
    "loss": tuple("{" + ",".join(f"{w:g}" for w in q) + "}" for q in FIXED_WEIGHT_GRID)
    + ("adaptive",),
    "acceptance": ("IDB_0", "IDB_2", "TMU_0", "CBAM_0", "all3x3", "adaptive", "{0.2,0.8,1,1}"),
}
PRESETS["full"] = PRESETS["structural"][:-1] + PRESETS["loss"]

_TOKEN = re.compile(r"\{[^}]*\}|[^\s,;{}]+")


@dataclass(frozen=True)
class Variant:
    name: str
    model_overrides: Tuple = ()
    fixed_weights: Optional[Tuple[float, float, float, float]] = None

    @property
    def slug(self):
        """Directory-safe form of the name."""
        if self.fixed_weights is not None:
            return "w_" + "_".join(f"{w:g}" for w in self.fixed_weights)
        return self.name

    def configs(self, model_config, train_config):
        mc = replace(model_config, **dict(self.model_overrides))
        tc = replace(train_config, fixed_weights=self.fixed_weights)
        return mc, tc


def parse_variant(token):
    token = token.strip()
    if token in ("adaptive", "mixed"):
        return Variant(token)
    m = re.fullmatch(r"IDB_(\d+)", token)
    if m and int(m.group(1)) <= 6:
        return Variant(token, (("idb_count", int(m.group(1))),))
    m = re.fullmatch(r"TMU_(\d+)", token)
    if m and int(m.group(1)) <= 3:
        return Variant(token, (("tmu_count", int(m.group(1))),))
    if token == "CBAM_0":
        return Variant(token, (("use_cbam", False),))
    m = re.fullmatch(r"all([357])x\1", token)
    if m:
        k = int(m.group(1))
        return Variant(token, (("branch_kernels", (k, k, k)),))
    m = re.fullmatch(r"\{([^}]*)\}", token)
    if m:
        try:
            weights = tuple(float(v) for v in m.group(1).split(","))
        except ValueError:
            weights = ()
        if len(weights) == 4 and all(np.isfinite(w) and w >= 0 for w in weights):
            return Variant("{" + ",".join(f"{w:g}" for w in weights) + "}", (), weights)
    raise ConfigError(f"invalid ablation variant {token!r}")


def parse_grid(grid):
    """Variants from a preset name, a file of tokens or an inline token list."""
    grid = str(grid).strip()
    if grid in PRESETS:
        tokens = PRESETS[grid]
    else:
        path = Path(grid)
        if path.is_file():
            text = "\n".join(line.split("#", 1)[0] for line in path.read_text(encoding="utf-8").splitlines())
        else:
            text = grid
        tokens = _TOKEN.findall(text)
        leftover = _TOKEN.sub("", text)
        if re.search(r"[{}]", leftover):
            raise ConfigError(f"unbalanced braces in ablation grid {grid!r}")
    variants = [parse_variant(t) for t in tokens]
    if not variants:
        raise ConfigError("ablation grid is empty")
    slugs = [v.slug for v in variants]
    if len(set(slugs)) != len(slugs):
        raise ConfigError("ablation grid lists a variant twice")
    return variants


def run_variant(variant, model_config, train_config, train_pairs, eval_pairs, out_dir):
    """Train one variant, evaluate it and write ``metrics.tsv``; returns the mean report."""
    mc, tc = variant.configs(model_config, train_config)
    vdir = Path(out_dir) / variant.slug
    state = train(tc, train_pairs, mc, out_dir=vdir, resume=True)
    model = state.model.eval()
    reports = [evaluate(fuse(model, p.mri, p.functional_y), p.mri, p.functional_y, p.identifier)
               for p in eval_pairs]
    mean = mean_report(reports)
    (vdir / "metrics.tsv").write_text(format_table(reports, mean), encoding="utf-8")
    return mean


def rank_table(means):
    """Per-metric ranks (1 = best, higher metric is better) and their sum.

    Rows are sorted by the rank sum, lowest first. Ties share the lowest rank.
    """
    names = list(means)
    values = np.array([means[n].values() for n in names], dtype=np.float64)
    ranks = np.column_stack([rankdata(-values[:, j], method="min") for j in range(values.shape[1])])
    totals = ranks.sum(axis=1)
    order = np.lexsort((np.arange(len(names)), totals))
    lines = ["\t".join(("variant",) + METRIC_NAMES + ("rank_sum",))]
    for i in order:
        lines.append("\t".join([names[i]] + [str(int(r)) for r in ranks[i]] + [str(int(totals[i]))]))
    return "\n".join(lines) + "\n"


def means_table(means):
    lines = ["\t".join(("variant",) + METRIC_NAMES)]
    for name, report in means.items():
        lines.append("\t".join([name] + [f"{v:.6f}" for v in report.values()]))
    return "\n".join(lines) + "\n"


def run_ablation(variants, train_pairs, eval_pairs=None, out_dir=".", model_config=None,
                 train_config=None, epochs=2, max_steps=None, workers=1):
    """Run every variant and write ``means.tsv`` and ``ranks.tsv`` under ``out_dir``."""
    model_config = model_config or ModelConfig()
    train_config = replace(train_config or TrainConfig(), epochs=epochs, max_steps=max_steps)
    eval_pairs = list(eval_pairs) if eval_pairs is not None else list(train_pairs)
    if not eval_pairs:
        raise ConfigError("no pairs to evaluate the ablation variants on")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    args = [(v, model_config, train_config, train_pairs, eval_pairs, out_dir) for v in variants]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run_variant, *zip(*args)))
    else:
        results = []
        for a in args:
            log.info("ablation variant %s", a[0].name)
            results.append(run_variant(*a))
    means = {v.name: r for v, r in zip(variants, results)}
    (out_dir / "means.tsv").write_text(means_table(means), encoding="utf-8")
    (out_dir / "ranks.tsv").write_text(rank_table(means), encoding="utf-8")
    return means
