"""scikit-learn style wrapper around the fusion network and its trainer."""
import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .data import ImagePair
from .metrics import qabf
from .model import ModelConfig, count_parameters, fuse, fuse_full
from .trainer import TrainConfig, load_checkpoint, save_checkpoint, train
from .validation import check_pair_stack

_MODEL_KEYS = ("idb_count", "tmu_count", "branch_kernels", "use_cbam", "channels", "growth",
               "embed_dim", "patch_size", "heads", "mlp_ratio", "reduction",
               "branch_channels", "comp_channels")
_TRAIN_KEYS = ("learning_rate", "epochs", "max_steps", "fixed_weights", "normalize_weights",
               "grad_clip", "augment")


def as_pairs(X):
    """Accept a sequence of ImagePair or an array of shape (n, 2, H, W)."""
    if isinstance(X, ImagePair):
        return [X]
    if isinstance(X, (list, tuple)) and X and all(isinstance(p, ImagePair) for p in X):
        return list(X)
    arr = check_pair_stack(X)
    return [ImagePair(s[0], s[1], None, f"sample{i}") for i, s in enumerate(arr)]


class FusionEstimator(BaseEstimator, TransformerMixin):
    """Unsupervised MRI / functional-image fusion as a fit/transform estimator.

    ``fit`` trains the network with the adaptive loss on the given pairs
    (256x256 pairs are cropped into 36 patches when ``augment`` is set);
    ``transform`` returns the fused luma planes as an (n, H, W) array.

    Examples
    --------
    >>> est = FusionEstimator(epochs=1, max_steps=5).fit(X)   # doctest: +SKIP
    >>> fused = est.transform(X)                               # doctest: +SKIP
    """

    def __init__(self, idb_count=6, tmu_count=3, branch_kernels=(3, 5, 7), use_cbam=True,
                 channels=16, growth=2, embed_dim=32, patch_size=4, heads=8, mlp_ratio=4,
                 reduction=4, branch_channels=8, comp_channels=16, learning_rate=1e-4,
                 epochs=30, max_steps=None, fixed_weights=None, normalize_weights=False,
                 grad_clip=None, augment=True, random_state=0):
        self.idb_count = idb_count
        self.tmu_count = tmu_count
        self.branch_kernels = branch_kernels
        self.use_cbam = use_cbam
        self.channels = channels
        self.growth = growth
        self.embed_dim = embed_dim
        self.patch_size = patch_size
        self.heads = heads
        self.mlp_ratio = mlp_ratio
        self.reduction = reduction
        self.branch_channels = branch_channels
        self.comp_channels = comp_channels
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.max_steps = max_steps
        self.fixed_weights = fixed_weights
        self.normalize_weights = normalize_weights
        self.grad_clip = grad_clip
        self.augment = augment
        self.random_state = random_state

    def model_config(self):
        seed = 0 if self.random_state is None else int(self.random_state)
        return ModelConfig(seed=seed, **{k: getattr(self, k) for k in _MODEL_KEYS})

    def train_config(self):
        seed = 0 if self.random_state is None else int(self.random_state)
        return TrainConfig(seed=seed, **{k: getattr(self, k) for k in _TRAIN_KEYS})

    def fit(self, X, y=None, out_dir=None):
        pairs = as_pairs(X)
        trace = []
        state = train(self.train_config(), pairs, self.model_config(), out_dir=out_dir,
                      on_step=lambda st, b: trace.append(b.to_dict()))
        self.state_ = state
        self.model_ = state.model.eval()
        self.loss_trace_ = trace
        self.n_parameters_ = count_parameters(state.model)
        return self

    def transform(self, X):
        check_is_fitted(self, "model_")
        return np.stack([fuse(self.model_, p.mri, p.functional_y) for p in as_pairs(X)])

    def fuse_pair(self, pair):
        """Fused output for one ImagePair, recoloured when chroma is present."""
        check_is_fitted(self, "model_")
        return fuse_full(self.model_, pair)

    def score(self, X, y=None):
        """Mean QABF of the fused images against their sources."""
        pairs = as_pairs(X)
        fused = self.transform(pairs)
        return float(np.mean([qabf(f, p.mri, p.functional_y) for f, p in zip(fused, pairs)]))

    def save(self, path):
        check_is_fitted(self, "state_")
        save_checkpoint(self.state_, path)

    @classmethod
    def from_checkpoint(cls, path):
        state = load_checkpoint(path)
        mc, tc = state.model.config, state.config
        params = {k: getattr(mc, k) for k in _MODEL_KEYS}
        params.update({k: getattr(tc, k) for k in _TRAIN_KEYS})
        est = cls(random_state=tc.seed, **params)
        est.state_ = state
        est.model_ = state.model.eval()
        est.loss_trace_ = []
        est.n_parameters_ = count_parameters(state.model)
        return est
