"""L2-regularized logistic regression, trained from scratch.

The binary objective is

    f(w) = 1/2 ||w||^2 + C * sum_i log(1 + exp(-y_i w.x_i)),   y_i in {-1,+1}

minimized by Newton iterations whose steps come from a conjugate-gradient
solve of the (always positive definite) Hessian system, followed by Armijo
backtracking. Multiclass is one-vs-rest with argmax prediction, and the
cost parameter C is picked by stratified cross-validated grid search.

An intercept, when enabled, is an appended constant-1 feature and is
regularized like any other weight, which keeps the objective strictly
convex.
"""

import struct
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ConvergenceError, SolverError

_ARMIJO_SLOPE = 1e-4
_MODEL_MAGIC = b"SFLR"
_MODEL_VERSION = 1


@dataclass(frozen=True)
class LabeledDataset:
    """Feature matrix plus integer category labels in 0..class_count-1."""

    features: np.ndarray
    labels: np.ndarray
    class_count: int

    def __post_init__(self):
        features = np.ascontiguousarray(self.features, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if features.ndim != 2:
            raise SolverError(f"features must be 2-d, got shape {features.shape}")
        if labels.ndim != 1 or labels.size != features.shape[0]:
            raise SolverError("labels must align with feature rows")
        if not np.isfinite(features).all():
            raise SolverError("features contain non-finite values")
        if self.class_count < 1:
            raise SolverError("class_count must be positive")
        if labels.size and (labels.min() < 0 or labels.max() >= self.class_count):
            raise SolverError("labels must lie in 0..class_count-1")
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def __len__(self) -> int:
        return self.features.shape[0]


@dataclass(frozen=True)
class TrainingConfig:
    """Solver and model-selection knobs."""

    c_grid: tuple = tuple(float(c) for c in range(1, 51))
    cv_folds: int = 5
    tolerance: float = 1e-8
    max_iterations: int = 1000
    fit_bias: bool = True
    seed: int = 0

    def __post_init__(self):
        if not self.c_grid or any(c <= 0 for c in self.c_grid):
            raise SolverError("c_grid must be non-empty and positive")
        if self.cv_folds < 2:
            raise SolverError("cv_folds must be at least 2")
        if self.max_iterations < 1:
            raise SolverError("max_iterations must be at least 1")
        object.__setattr__(self, "c_grid", tuple(float(c) for c in self.c_grid))


@dataclass(frozen=True)
class CvCell:
    """Cross-validation audit row for one grid point."""

    c: float
    fold_accuracies: tuple
    mean_accuracy: float


@dataclass(frozen=True)
class TrainedModel:
    """Per-class weight rows (bias last when fitted) plus selection audit."""

    weights: np.ndarray
    chosen_c: float
    class_count: int
    dim: int
    fit_bias: bool
    cv_table: tuple = ()
    seed: int = 0

    def __post_init__(self):
        weights = np.ascontiguousarray(self.weights, dtype=np.float64)
        expected = (self.class_count, self.dim + (1 if self.fit_bias else 0))
        if weights.shape != expected:
            raise SolverError(f"weights shape {weights.shape} != {expected}")
        if not np.isfinite(weights).all():
            raise SolverError("weights contain non-finite values")
        object.__setattr__(self, "weights", weights)

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(_MODEL_MAGIC)
            fh.write(
                struct.pack(
                    "<IIII", _MODEL_VERSION, self.class_count, self.dim,
                    int(self.fit_bias),
                )
            )
            fh.write(struct.pack("<d", self.chosen_c))
            fh.write(self.weights.astype("<f8").tobytes())
            fh.write(struct.pack("<QI", self.seed, len(self.cv_table)))
            for cell in self.cv_table:
                fh.write(struct.pack("<dI", cell.c, len(cell.fold_accuracies)))
                fh.write(np.asarray(cell.fold_accuracies, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path) -> "TrainedModel":
        with open(path, "rb") as fh:
            raw = fh.read()
        if raw[:4] != _MODEL_MAGIC:
            raise SolverError("not a model file (bad magic)")
        version, k, dim, fit_bias = struct.unpack_from("<IIII", raw, 4)
        if version != _MODEL_VERSION:
            raise SolverError(f"unsupported model version {version}")
        offset = 4 + 16
        (chosen_c,) = struct.unpack_from("<d", raw, offset)
        offset += 8
        cols = dim + (1 if fit_bias else 0)
        n_weights = k * cols
        weights = np.frombuffer(raw, dtype="<f8", count=n_weights, offset=offset)
        offset += 8 * n_weights
        seed, n_cells = struct.unpack_from("<QI", raw, offset)
        offset += 12
        cells = []
        for _ in range(n_cells):
            c, n_folds = struct.unpack_from("<dI", raw, offset)
            offset += 12
            accs = np.frombuffer(raw, dtype="<f8", count=n_folds, offset=offset)
            offset += 8 * n_folds
            cells.append(CvCell(c, tuple(accs.tolist()), float(accs.mean())))
        if offset != len(raw):
            raise SolverError("trailing bytes in model file")
        return cls(
            weights=weights.reshape(k, cols).copy(),
            chosen_c=chosen_c,
            class_count=k,
            dim=dim,
            fit_bias=bool(fit_bias),
            cv_table=tuple(cells),
            seed=seed,
        )


def objective(features: np.ndarray, signs: np.ndarray, w: np.ndarray, c: float) -> float:
    """f(w) for ±1 labels; features already carry the bias column if any."""
    loss_sum, _, _ = kernels.logistic_terms(signs * (features @ w))
    return 0.5 * float(w @ w) + c * loss_sum


def gradient(features: np.ndarray, signs: np.ndarray, w: np.ndarray, c: float) -> np.ndarray:
    """Analytic gradient of the binary objective."""
    _, sneg, _ = kernels.logistic_terms(signs * (features @ w))
    return w - c * (features.T @ (signs * sneg))


def _cg_newton_step(features, curvature, grad, max_iter, rel_tol):
    """Solve (I + X^T diag(curvature) X) p = -grad by conjugate gradients.

    curvature already carries the factor C. The system matrix is positive
    definite, so plain CG applies; the loop stops once the residual falls
    below rel_tol * ||grad||.
    """
    p = np.zeros_like(grad)
    r = -grad.copy()
    d = r.copy()
    rs = float(r @ r)
    threshold = (rel_tol * np.linalg.norm(grad)) ** 2
    for _ in range(max_iter):
        if rs <= threshold:
            break
        hd = d + features.T @ (curvature * (features @ d))
        alpha = rs / float(d @ hd)
        p += alpha * d
        r -= alpha * hd
        rs_next = float(r @ r)
        d = r + (rs_next / rs) * d
        rs = rs_next
    return p


def _solve(features, signs, c, cfg, w0=None):
    """Newton-CG on the augmented design matrix. Returns the weight vector."""
    n, dims = features.shape
    w = np.zeros(dims) if w0 is None else np.asarray(w0, dtype=np.float64).copy()
    if w.shape != (dims,):
        raise SolverError(f"initial point has shape {w.shape}, expected ({dims},)")

    grad0_norm = np.linalg.norm(gradient(features, signs, np.zeros(dims), c))
    stop = cfg.tolerance * max(1.0, grad0_norm)
    cg_cap = max(64, min(2 * dims, 1024))

    margins = signs * (features @ w)
    loss_sum, sneg, curv = kernels.logistic_terms(margins)
    value = 0.5 * float(w @ w) + c * loss_sum
    for _ in range(cfg.max_iterations):
        grad = w - c * (features.T @ (signs * sneg))
        grad_norm = np.linalg.norm(grad)
        if grad_norm <= stop:
            return w
        forcing = min(0.5, np.sqrt(grad_norm / max(grad0_norm, 1e-300)))
        step = _cg_newton_step(features, c * curv, grad, cg_cap, forcing)
        slope = float(grad @ step)
        # Near the optimum the true decrease sinks below float64 resolution
        # of the objective; the eps-band keeps Armijo from stalling there
        # (approximate-Wolfe style acceptance).
        eps_band = 16.0 * np.finfo(np.float64).eps * abs(value)

        t = 1.0
        while True:
            w_try = w + t * step
            margins = signs * (features @ w_try)
            loss_sum, sneg, curv = kernels.logistic_terms(margins)
            trial = 0.5 * float(w_try @ w_try) + c * loss_sum
            if trial <= value + _ARMIJO_SLOPE * t * slope + eps_band:
                break
            t *= 0.5
            if t < 2.0**-60:
                raise ConvergenceError(
                    f"line search stalled at gradient norm {grad_norm:.3e}",
                    gradient_norm=float(grad_norm),
                )
        w, value = w_try, trial
    raise ConvergenceError(
        f"no convergence in {cfg.max_iterations} Newton iterations; "
        f"final gradient norm {grad_norm:.3e}",
        gradient_norm=float(grad_norm),
    )


def _with_bias(features: np.ndarray) -> np.ndarray:
    return np.hstack([features, np.ones((features.shape[0], 1))])


def train_binary(
    features: np.ndarray,
    signs: np.ndarray,
    c: float,
    cfg: TrainingConfig = TrainingConfig(),
    w0: np.ndarray | None = None,
) -> np.ndarray:
    """Fit one binary model on ±1 labels; returns the weight vector.

    The bias weight, when cfg.fit_bias is set, is the last entry.
    """
    features = np.ascontiguousarray(features, dtype=np.float64)
    signs = np.asarray(signs, dtype=np.float64)
    if set(np.unique(signs)) - {-1.0, 1.0}:
        raise SolverError("binary labels must be -1 or +1")
    if (signs > 0).sum() == 0 or (signs < 0).sum() == 0:
        raise SolverError("need at least one example of each sign")
    if cfg.fit_bias:
        features = _with_bias(features)
    return _solve(features, signs, float(c), cfg, w0)


def train_ovr(
    data: LabeledDataset,
    c: float,
    cfg: TrainingConfig = TrainingConfig(),
) -> TrainedModel:
    """One-vs-rest: one binary model per class, prediction by argmax."""
    counts = np.bincount(data.labels, minlength=data.class_count)
    empty = np.flatnonzero(counts == 0)
    if empty.size:
        raise SolverError(f"class {empty[0]} has no examples")
    if data.class_count < 2:
        raise SolverError("need at least 2 classes")

    design = _with_bias(data.features) if cfg.fit_bias else data.features
    rows = []
    for k in range(data.class_count):
        signs = np.where(data.labels == k, 1.0, -1.0)
        try:
            rows.append(_solve(design, signs, float(c), cfg))
        except ConvergenceError as exc:
            raise ConvergenceError(
                f"class {k}: {exc}", gradient_norm=exc.gradient_norm
            ) from exc
    return TrainedModel(
        weights=np.vstack(rows),
        chosen_c=float(c),
        class_count=data.class_count,
        dim=data.dim,
        fit_bias=cfg.fit_bias,
        seed=cfg.seed,
    )


def stratified_folds(labels: np.ndarray, folds: int, seed: int) -> np.ndarray:
    """Deterministic stratified fold ids: per-class shuffle, cyclic assign."""
    labels = np.asarray(labels)
    fold_of = np.empty(labels.size, dtype=np.int64)
    rng = np.random.default_rng(seed)
    for k in np.unique(labels):
        members = np.flatnonzero(labels == k)
        if members.size < folds:
            raise SolverError(
                f"fold construction impossible: class {k} has "
                f"{members.size} examples < {folds} folds"
            )
        rng.shuffle(members)
        fold_of[members] = np.arange(members.size) % folds
    return fold_of


def grid_search(
    data: LabeledDataset,
    cfg: TrainingConfig = TrainingConfig(),
) -> TrainedModel:
    """Pick C by stratified CV accuracy (ties to the smallest C), then refit."""
    fold_of = stratified_folds(data.labels, cfg.cv_folds, cfg.seed)
    table = []
    for c in cfg.c_grid:
        accuracies = []
        for fold in range(cfg.cv_folds):
            hold = fold_of == fold
            train_part = LabeledDataset(
                data.features[~hold], data.labels[~hold], data.class_count
            )
            model = train_ovr(train_part, c, cfg)
            accuracies.append(
                score(model, LabeledDataset(
                    data.features[hold], data.labels[hold], data.class_count
                ))
            )
        table.append(CvCell(c, tuple(accuracies), float(np.mean(accuracies))))

    best = max(table, key=lambda cell: (cell.mean_accuracy, -cell.c))
    final = train_ovr(data, best.c, cfg)
    return TrainedModel(
        weights=final.weights,
        chosen_c=best.c,
        class_count=final.class_count,
        dim=final.dim,
        fit_bias=final.fit_bias,
        cv_table=tuple(table),
        seed=cfg.seed,
    )


def decision_scores(model: TrainedModel, features: np.ndarray) -> np.ndarray:
    """Per-class linear scores for a batch of rows."""
    features = np.asarray(features, dtype=np.float64)
    single = features.ndim == 1
    if single:
        features = features[None, :]
    if features.shape[1] != model.dim:
        raise SolverError(
            f"feature dim {features.shape[1]} != model dim {model.dim}"
        )
    if model.fit_bias:
        features = _with_bias(features)
    scores = features @ model.weights.T
    return scores[0] if single else scores


def predict(model: TrainedModel, x: np.ndarray) -> int:
    """Class index with the highest score; ties go to the lowest index."""
    return int(np.argmax(decision_scores(model, x)))


def predict_batch(model: TrainedModel, features: np.ndarray) -> np.ndarray:
    return np.argmax(decision_scores(model, features), axis=1)


def score(model: TrainedModel, data: LabeledDataset) -> float:
    """Fraction of correctly classified rows."""
    if len(data) == 0:
        raise SolverError("empty evaluation set")
    return float(np.mean(predict_batch(model, data.features) == data.labels))
