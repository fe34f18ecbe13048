"""Low-rank activation-sparsity predictor with runtime-tunable thresholding.

A predictor approximates a layer's gate projection ``x @ w_g.T`` by the
low-rank product ``x @ L @ R`` (L: dim_e x dim_lr, R: dim_lr x dim_h). Hidden
neurons whose predicted magnitude falls at or below a threshold are skipped.
Thresholds are calibrated offline per target sparsity and stored in a table so
sparsity stays tunable at run time.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import RankError, ShapeError, TrainingDivergence
from .numerics import Matrix, matmul, truncated_svd

DIVERGENCE_FACTOR = 10.0  # training aborts when loss exceeds this multiple of the initial loss


@dataclass(frozen=True)
class Predictor:
    l: Matrix  # dim_e x dim_lr
    r: Matrix  # dim_lr x dim_h

    @property
    def dim_lr(self) -> int:
        return self.l.shape[1]

    @property
    def n_params(self) -> int:
        return self.l.size + self.r.size

    def scores(self, x: Matrix) -> Matrix:
        """Predicted gate magnitudes |x @ L @ R|, one row per token."""
        return np.abs(matmul(matmul(x, self.l), self.r))


def default_dim_lr(dim_e: int) -> int:
    return max(1, dim_e // 4)


def init_from_svd(w_g: Matrix, dim_lr: int) -> Predictor:
    """Initialize from the top-``dim_lr`` singular triplets of w_g.T so that
    x @ L @ R is the best rank-dim_lr approximation of x-agnostic x @ w_g.T."""
    dim_h, dim_e = w_g.shape
    if not (1 <= dim_lr <= min(dim_e, dim_h)):
        raise RankError(f"dim_lr={dim_lr} out of range for gate shape {w_g.shape}")
    u, s, v = truncated_svd(w_g.T, dim_lr)
    return Predictor(l=u * s, r=v.T.copy())


def reconstruction_loss(p: Predictor, x: Matrix, w_g: Matrix) -> float:
    """Squared Frobenius error between the true and predicted gate outputs."""
    err = matmul(x, w_g.T) - matmul(matmul(x, p.l), p.r)
    return float(np.sum(err * err))


def train(p: Predictor, calib: Matrix, w_g: Matrix, epochs: int = 50,
          lr: float = 1e-3) -> tuple[Predictor, list[float]]:
    """Full-batch gradient descent on the reconstruction loss.

    Steps follow the gradient of the per-sample mean (so ``lr`` is insensitive
    to the calibration-set size); the reported loss stays the plain squared
    Frobenius error. A step that would increase the loss is rejected and the
    rate halved, so the returned loss never exceeds the initial one. Training
    that cannot recover raises TrainingDivergence with the history attached:
    a non-finite candidate loss, or one still past DIVERGENCE_FACTOR times
    the initial loss after the step size has collapsed.
    """
    x = np.asarray(calib, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != p.l.shape[0]:
        raise ShapeError(f"calibration shape {x.shape} vs dim_e {p.l.shape[0]}")
    if x.shape[0] < 1:
        raise ShapeError("calibration set is empty")
    n = x.shape[0]
    l, r = p.l.copy(), p.r.copy()
    target = matmul(x, w_g.T)

    err = matmul(matmul(x, l), r) - target
    loss = float(np.sum(err * err))
    init = loss
    history = [loss]
    step = lr
    for _ in range(epochs):
        grad_l = (2.0 / n) * matmul(x.T, matmul(err, r.T))
        grad_r = (2.0 / n) * matmul(matmul(x, l).T, err)
        cand_l = l - step * grad_l
        cand_r = r - step * grad_r
        with np.errstate(over="ignore", invalid="ignore"):
            cand_err = matmul(matmul(x, cand_l), cand_r) - target
            cand_loss = float(np.sum(cand_err * cand_err))
        hopeless = step <= lr * 2.0 ** -50 and init > 0.0 \
            and cand_loss > DIVERGENCE_FACTOR * init
        if not np.isfinite(cand_loss) or hopeless:
            raise TrainingDivergence(
                f"loss diverged to {cand_loss:.3e} from initial {init:.3e}",
                history + [cand_loss])
        if cand_loss > loss:
            step *= 0.5
            continue
        l, r, err, loss = cand_l, cand_r, cand_err, cand_loss
        history.append(loss)
    return Predictor(l=l, r=r), history


def loss_gradients(p: Predictor, x: Matrix, w_g: Matrix) -> tuple[Matrix, Matrix]:
    """Analytic gradients of the reconstruction loss w.r.t. (L, R); checked
    against central finite differences in the tests."""
    err = matmul(matmul(x, p.l), p.r) - matmul(x, w_g.T)
    return 2.0 * matmul(x.T, matmul(err, p.r.T)), 2.0 * matmul(matmul(x, p.l).T, err)


@dataclass(frozen=True)
class ThresholdTable:
    """Sorted (target_sparsity, threshold) pairs for one layer/expert."""

    entries: tuple[tuple[float, float], ...]

    def threshold_for(self, target: float) -> float:
        for s, t in self.entries:
            if abs(s - target) < 1e-12:
                return t
        raise KeyError(f"no threshold calibrated for target {target}")


def quantile_threshold(scores: np.ndarray, target: float) -> float:
    """Lower empirical quantile: the largest score whose CDF is <= target,
    so at most a ``target`` fraction of calibration scores falls at or below
    it. Target 0 maps to threshold 0."""
    n = scores.size
    k = int(np.floor(target * n))
    if k <= 0:
        return 0.0
    return float(np.sort(scores, kind="stable")[k - 1])


def build_threshold_table(p: Predictor, calib: Matrix, targets) -> ThresholdTable:
    """Pool |x @ L @ R| over the calibration set and pick one threshold per
    target sparsity."""
    x = np.asarray(calib, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 1:
        raise ShapeError("calibration set is empty")
    targets = [float(t) for t in targets]
    for t in targets:
        if not (0.0 <= t < 1.0):
            raise ShapeError(f"target sparsity {t} outside [0, 1)")
    pooled = p.scores(x).ravel()
    entries = tuple(sorted((t, quantile_threshold(pooled, t)) for t in targets))
    return ThresholdTable(entries=entries)


def predict_mask(p: Predictor, x: Matrix, threshold: float) -> np.ndarray:
    """Boolean mask per token: bit j set iff |x @ L @ R|_j > threshold.
    Returns (n_tokens x dim_h) for matrix input, (dim_h,) for a single row."""
    if threshold < 0:
        raise ShapeError(f"threshold must be >= 0, got {threshold}")
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    masks = p.scores(x.reshape(1, -1) if single else x) > threshold
    return masks[0] if single else masks


def measured_sparsity(mask: np.ndarray) -> float:
    """Fraction of hidden neurons skipped (zero bits / dim_h)."""
    mask = np.asarray(mask, dtype=bool)
    return float(np.size(mask) - np.count_nonzero(mask)) / float(np.size(mask))


def thresholds_to_json(tables: dict[tuple[int, int], ThresholdTable]) -> str:
    """Serialize per-(layer, expert) tables to the interchange document."""
    doc = [
        {"layer": layer, "expert": expert,
         "entries": [[s, t] for s, t in tab.entries]}
        for (layer, expert), tab in sorted(tables.items())
    ]
    return json.dumps(doc, indent=2, sort_keys=True)


def thresholds_from_json(text: str) -> dict[tuple[int, int], ThresholdTable]:
    doc = json.loads(text)
    return {
        (int(d["layer"]), int(d["expert"])): ThresholdTable(
            entries=tuple((float(s), float(t)) for s, t in d["entries"]))
        for d in doc
    }
