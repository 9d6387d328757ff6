"""Predictive models T_j = F(features): ordinary least squares and a one-hidden-layer
ReLU network trained with evidence-tuned weight decay."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateSampleError, DivergenceError, PreconditionError

LAMBDA_GRID = (1e-4, 1e-3, 1e-2, 1e-1)


# --------------------------------------------------------------------------- linear

@dataclass(frozen=True)
class LinearModel:
    slope: float
    intercept: float
    training_rmse: float
    meta: dict = field(default_factory=dict, compare=False)

    def predict(self, v_th) -> np.ndarray:
        return self.slope * np.asarray(v_th, dtype=float) + self.intercept

    def to_dict(self) -> dict:
        return {"type": "linear", "slope": self.slope, "intercept": self.intercept,
                "training_rmse": self.training_rmse, "meta": self.meta}

    @classmethod
    def from_dict(cls, d: dict) -> "LinearModel":
        return cls(float(d["slope"]), float(d["intercept"]), float(d["training_rmse"]), d.get("meta", {}))


def fit_linear(v_th, temperature) -> LinearModel:
    """OLS fit of temperature on V_TH via the normal equations."""
    x = np.asarray(v_th, dtype=float).ravel()
    y = np.asarray(temperature, dtype=float).ravel()
    if x.shape != y.shape or x.size < 2:
        raise PreconditionError("fit_linear needs matching arrays of length >= 2")
    if np.ptp(x) == 0:
        raise DegenerateSampleError("all V_TH values equal; slope is unidentifiable")
    # centred normal equations keep the 2x2 system well conditioned
    xm, ym = x.mean(), y.mean()
    dx = x - xm
    slope = float(np.dot(dx, y - ym) / np.dot(dx, dx))
    intercept = float(ym - slope * xm)
    resid = y - (slope * x + intercept)
    return LinearModel(slope, intercept, float(np.sqrt(np.mean(resid ** 2))))


# --------------------------------------------------------------------------- MLP

@dataclass
class Standardizer:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, a) -> "Standardizer":
        a = np.asarray(a, dtype=float)
        std = a.std(axis=0)
        std = np.where(std > 0, std, 1.0)
        return cls(a.mean(axis=0), std)

    def apply(self, a):
        return (np.asarray(a, dtype=float) - self.mean) / self.std

    def invert(self, z):
        return np.asarray(z, dtype=float) * self.std + self.mean


@dataclass
class MlpModel:
    """input -> ReLU(hidden) -> 1, all in standardized units.

    ``w1`` is (hidden, input_dim), ``b1`` (hidden,), ``w2`` (hidden,), ``b2`` scalar.
    """

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: float
    x_scale: Standardizer
    y_scale: Standardizer
    reg_lambda: float = 0.0
    seed: int = 0
    features: tuple = ("v_th", "v_bus")
    report: dict = field(default_factory=dict)

    @property
    def input_dim(self) -> int:
        return self.w1.shape[1]

    @property
    def hidden(self) -> int:
        return self.w1.shape[0]

    @property
    def n_params(self) -> int:
        return self.w1.size + self.b1.size + self.w2.size + 1

    def params(self) -> list:
        return [self.w1, self.b1, self.w2, np.array([self.b2])]

    def set_params(self, p) -> None:
        self.w1, self.b1, self.w2 = (np.array(a, dtype=float) for a in p[:3])
        self.b2 = float(np.asarray(p[3]).ravel()[0])

    def predict(self, features) -> np.ndarray:
        x = np.atleast_2d(np.asarray(features, dtype=float))
        if x.shape[1] != self.input_dim:
            raise PreconditionError(f"model takes {self.input_dim} features, got {x.shape[1]}")
        out = _forward(self.params(), self.x_scale.apply(x))[0]
        return self.y_scale.invert(out)

    def to_dict(self) -> dict:
        return {
            "type": "mlp",
            "dims": [self.input_dim, self.hidden, 1],
            "activation": "relu",
            "features": list(self.features),
            "weights": {
                "w1": self.w1.ravel().tolist(),
                "b1": self.b1.tolist(),
                "w2": self.w2.tolist(),
                "b2": self.b2,
            },
            "standardization": {
                "x_mean": np.atleast_1d(self.x_scale.mean).tolist(),
                "x_std": np.atleast_1d(self.x_scale.std).tolist(),
                "y_mean": float(self.y_scale.mean),
                "y_std": float(self.y_scale.std),
            },
            "reg_lambda": self.reg_lambda,
            "seed": self.seed,
            "train_report": self.report,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MlpModel":
        n_in, n_hid, _ = d["dims"]
        w = d["weights"]
        s = d["standardization"]
        return cls(
            w1=np.array(w["w1"], dtype=float).reshape(n_hid, n_in),
            b1=np.array(w["b1"], dtype=float),
            w2=np.array(w["w2"], dtype=float),
            b2=float(w["b2"]),
            x_scale=Standardizer(np.array(s["x_mean"]), np.array(s["x_std"])),
            y_scale=Standardizer(np.float64(s["y_mean"]), np.float64(s["y_std"])),
            reg_lambda=float(d.get("reg_lambda", 0.0)),
            seed=int(d.get("seed", 0)),
            features=tuple(d.get("features", ("v_th", "v_bus"))),
            report=d.get("train_report", {}),
        )


def _forward(p, x):
    w1, b1, w2, b2 = p
    z = x @ w1.T + b1
    a = np.maximum(z, 0.0)
    return a @ w2 + b2[0], z, a


def objective(p, x, y, lam):
    """Regularized loss MSE + lam·Σθ² over all parameters, and its gradient."""
    out, z, a = _forward(p, x)
    err = out - y
    n = y.shape[0]
    loss = float(np.mean(err ** 2) + lam * sum(float((q ** 2).sum()) for q in p))
    g = 2.0 * err / n
    gw2 = a.T @ g
    gb2 = np.array([g.sum()])
    da = np.outer(g, p[2]) * (z > 0)
    gw1 = da.T @ x
    gb1 = da.sum(axis=0)
    grads = [gw1 + 2 * lam * p[0], gb1 + 2 * lam * p[1], gw2 + 2 * lam * p[2], gb2 + 2 * lam * p[3]]
    return loss, grads


def _jacobian(p, x):
    """d output / d θ for every row, columns ordered like the flattened params."""
    w1, b1, w2, b2 = p
    z = x @ w1.T + b1
    a = np.maximum(z, 0.0)
    act = (z > 0) * w2
    jw1 = (act[:, :, None] * x[:, None, :]).reshape(x.shape[0], -1)
    return np.hstack([jw1, act, a, np.ones((x.shape[0], 1))])


def _flat(p):
    return np.concatenate([q.ravel() for q in p])


def _unflat(theta, like):
    out, i = [], 0
    for q in like:
        out.append(theta[i:i + q.size].reshape(q.shape))
        i += q.size
    return out


def evidence_lambda(p, x, y, lam):
    """Evidence-style re-estimate of the decay weight.

    In the MacKay form β·E_D + α·E_W (E_D = ½Σe², E_W = ½Σθ²) the trained
    objective corresponds to λ = α / (β·N). α and β come from the
    effective parameter count γ = W - α·tr(A⁻¹), with A = β·JᵀJ + α·I
    built on the Gauss-Newton curvature. Returns None when the update leaves
    (0, ∞).
    """
    n = y.shape[0]
    theta = _flat(p)
    out = _forward(p, x)[0]
    e_d = 0.5 * float(np.sum((out - y) ** 2))
    e_w = 0.5 * float(theta @ theta)
    if e_d <= 0 or e_w <= 0:
        return None
    beta = n / (2.0 * e_d)
    alpha = 2.0 * lam * n * beta
    j = _jacobian(p, x)
    gn = j.T @ j
    for _ in range(3):
        eig = np.linalg.eigvalsh(beta * gn)
        gamma = float(np.sum(eig / (eig + alpha)))
        if not 0 < gamma < n:
            return None
        alpha = gamma / (2.0 * e_w)
        beta = (n - gamma) / (2.0 * e_d)
    new = alpha / (beta * n)
    if not (math.isfinite(new) and new > 0):
        return None
    return new


@dataclass
class TrainConfig:
    hidden: int = 26
    max_epochs: int = 1000
    damping: float = 1e-3
    reg_lambda: float = 1e-6
    lambda_update: str = "evidence"  # or "fixed"
    lambda_every: int = 25
    # lower bound on the re-estimated decay; with only a few distinct bus
    # voltages the evidence estimate leaves the surface free to ripple between them
    lambda_floor: float = 2e-4
    patience: int = 50
    min_delta: float = 1e-4  # °C²
    split: tuple = (0.70, 0.15, 0.15)
    seed: int = 0

    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.__dict__.items()}


@dataclass
class TrainReport:
    epochs_run: int
    best_epoch: int
    train_mse: float
    val_mse: float
    test_mse: float
    reg_lambda: float
    curve: list = field(default_factory=list)  # (epoch, train_mse, val_mse)
    lambda_history: list = field(default_factory=list)
    cv_fold_mses: list = field(default_factory=list)

    def summary(self) -> dict:
        return {
            "epochs_run": self.epochs_run, "best_epoch": self.best_epoch,
            "train_mse": self.train_mse, "val_mse": self.val_mse, "test_mse": self.test_mse,
            "reg_lambda": self.reg_lambda, "cv_fold_mses": self.cv_fold_mses,
        }

    def write_curve_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "train_mse", "val_mse"])
            for ep, a, b in self.curve:
                w.writerow([ep, repr(a), repr(b)])


def split_indices(n: int, fractions=(0.70, 0.15, 0.15), seed: int = 0):
    """Seeded shuffle into train/validation/test index arrays."""
    perm = np.random.default_rng(seed).permutation(n)
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    return perm[:n_train], perm[n_train:n_train + n_val], perm[n_train + n_val:]


def init_params(input_dim: int, hidden: int, seed: int):
    """He-scaled hidden layer, zero output layer (output starts at the label mean)."""
    rng = np.random.default_rng(seed)
    w1 = rng.normal(0.0, math.sqrt(2.0 / input_dim), (hidden, input_dim))
    b1 = rng.normal(0.0, 0.1, hidden)
    return [w1, b1, np.zeros(hidden), np.zeros(1)]


class _LevenbergMarquardt:
    """Damped Gauss-Newton steps on the regularized loss.

    The damping grows tenfold whenever a trial step raises the loss and
    shrinks tenfold after each accepted step.
    """

    MU_MIN, MU_MAX = 1e-12, 1e10

    def __init__(self, mu):
        self.mu = mu

    def step(self, p, x, y, lam, loss):
        """Returns ``(params, loss, moved)``; ``moved`` is False once no step helps."""
        n = y.shape[0]
        theta = _flat(p)
        err = _forward(p, x)[0] - y
        j = _jacobian(p, x)
        g = (2.0 / n) * (j.T @ err) + 2.0 * lam * theta
        h = (2.0 / n) * (j.T @ j)
        h[np.diag_indices_from(h)] += 2.0 * lam
        while self.mu <= self.MU_MAX:
            shifted = h.copy()
            shifted[np.diag_indices_from(shifted)] += self.mu
            q = _unflat(theta - np.linalg.solve(shifted, g), p)
            new = _loss(q, x, y, lam)
            if new < loss:
                self.mu = max(self.mu * 0.1, self.MU_MIN)
                return q, new, True
            self.mu *= 10.0
        self.mu = self.MU_MAX
        return p, loss, False


def _loss(p, x, y, lam):
    err = _forward(p, x)[0] - y
    return float(np.mean(err ** 2) + lam * sum(float((q ** 2).sum()) for q in p))


def _mse_c(p, x, y_raw, ys: Standardizer) -> float:
    if x.shape[0] == 0:
        return float("nan")
    pred = ys.invert(_forward(p, x)[0])
    return float(np.mean((pred - y_raw) ** 2))


def _run(p, lam, xs_tr, ys_tr, xs_va, y_va, y_scale, cfg, epochs, lam_hook=None, curve=None,
         y_tr=None):
    """Optimizer loop with plateau stop and best-validation tracking.

    ``lam_hook(epoch, params, lam)`` is called every ``cfg.lambda_every``
    epochs and returns the decay weight to use from then on.
    """
    opt = _LevenbergMarquardt(cfg.damping)
    loss = _loss(p, xs_tr, ys_tr, lam)
    if not math.isfinite(loss):
        raise DivergenceError("non-finite training loss at epoch 0", epoch=0)
    best_val, best_p, best_ep = _mse_c(p, xs_va, y_va, y_scale), [q.copy() for q in p], 0
    since = 0
    ep = 0
    for ep in range(1, epochs + 1):
        p, loss, moved = opt.step(p, xs_tr, ys_tr, lam, loss)
        if not math.isfinite(loss):
            raise DivergenceError(f"non-finite training loss at epoch {ep}", epoch=ep)
        val = _mse_c(p, xs_va, y_va, y_scale)
        if curve is not None:
            curve.append((ep, _mse_c(p, xs_tr, y_tr, y_scale), val))
        since = 0 if val < best_val - cfg.min_delta else since + 1
        if val < best_val:
            best_val, best_p, best_ep = val, [q.copy() for q in p], ep
        if since >= cfg.patience or not moved:
            break
        if lam_hook is not None and ep % cfg.lambda_every == 0 and ep < epochs:
            new = lam_hook(ep, p, lam)
            if new != lam:
                lam = new
                loss = _loss(p, xs_tr, ys_tr, lam)
    return best_p, best_val, best_ep, ep, lam


def train_mlp(features, targets, cfg: TrainConfig = TrainConfig(), indices=None,
              feature_names=("v_th", "v_bus")):
    """Train the network on (features -> temperature) with a 70/15/15 split.

    ``indices`` may give explicit (train, val, test) index arrays. Weight decay
    is re-estimated every ``cfg.lambda_every`` epochs from the evidence; if
    that update is undefined the decay is picked from ``LAMBDA_GRID`` by
    validation error. Returns the weights of the best validation epoch.
    """
    x = np.atleast_2d(np.asarray(features, dtype=float))
    if x.shape[0] == 1 and x.shape[1] != 1 and np.ndim(features) == 1:
        x = x.T
    y = np.asarray(targets, dtype=float).ravel()
    if x.shape[0] != y.shape[0]:
        raise PreconditionError("features and targets differ in length")
    if indices is None:
        if y.size < 100:
            raise PreconditionError(f"train_mlp needs >= 100 rows, got {y.size}")
        tr, va, te = split_indices(y.size, cfg.split, cfg.seed)
    else:
        tr, va, te = (np.asarray(i, dtype=int) for i in indices)
    if tr.size == 0 or va.size == 0:
        raise PreconditionError("empty training or validation split")

    x_scale = Standardizer.fit(x[tr])
    y_scale = Standardizer.fit(y[tr])
    xs = x_scale.apply(x)
    ysd = y_scale.apply(y)
    xs_tr, ys_tr, xs_va = xs[tr], ysd[tr], xs[va]

    p = init_params(x.shape[1], cfg.hidden, cfg.seed)
    evidence = cfg.lambda_update == "evidence"
    lam0 = max(cfg.reg_lambda, cfg.lambda_floor) if evidence else cfg.reg_lambda
    lam_hist = [(0, lam0)]
    curve = []

    def hook(ep, q, lam):
        new = evidence_lambda(q, xs_tr, ys_tr, lam)
        if new is None:
            new = _grid_lambda(q, xs_tr, ys_tr, xs_va, y[va], y_scale, cfg)
        new = max(new, cfg.lambda_floor)
        lam_hist.append((ep, new))
        return new

    best_p, _, best_ep, epoch, lam = _run(
        p, lam0, xs_tr, ys_tr, xs_va, y[va], y_scale, cfg, cfg.max_epochs,
        lam_hook=hook if evidence else None, curve=curve, y_tr=y[tr])

    model = MlpModel(w1=best_p[0], b1=best_p[1], w2=best_p[2], b2=float(best_p[3][0]),
                     x_scale=x_scale, y_scale=y_scale, reg_lambda=lam, seed=cfg.seed,
                     features=tuple(feature_names[:x.shape[1]]))
    report = TrainReport(
        epochs_run=epoch, best_epoch=best_ep,
        train_mse=_mse_c(best_p, xs_tr, y[tr], y_scale),
        val_mse=_mse_c(best_p, xs_va, y[va], y_scale),
        test_mse=_mse_c(best_p, xs[te], y[te], y_scale) if te.size else float("nan"),
        reg_lambda=lam, curve=curve, lambda_history=lam_hist,
    )
    model.report = report.summary()
    return model, report


def _grid_lambda(p, xs_tr, ys_tr, xs_va, y_va, y_scale, cfg):
    """Short continuation from ``p`` per grid value; lowest validation error wins."""
    scores = []
    for lam in LAMBDA_GRID:
        q = [a.copy() for a in p]
        _, val, _, _, _ = _run(q, lam, xs_tr, ys_tr, xs_va, y_va, y_scale, cfg, cfg.lambda_every)
        scores.append((val, lam))
    return min(scores)[1]


def fold_assignment(n: int, folds: int, seed: int = 0) -> np.ndarray:
    """Fold label per row; sizes differ by at most one."""
    if n < folds:
        raise PreconditionError(f"need at least {folds} rows for {folds}-fold CV, got {n}")
    labels = np.arange(n) % folds
    return labels[np.random.default_rng(seed).permutation(n)]


def cross_validate(features, targets, folds: int = 10, cfg: TrainConfig = TrainConfig(),
                   feature_names=("v_th", "v_bus")) -> dict:
    """k-fold CV: each fold is the test set once; 15 % of the rest validates."""
    x = np.atleast_2d(np.asarray(features, dtype=float))
    y = np.asarray(targets, dtype=float).ravel()
    labels = fold_assignment(y.size, folds, cfg.seed)
    mses = []
    for f in range(folds):
        te = np.nonzero(labels == f)[0]
        rest = np.nonzero(labels != f)[0]
        rest = rest[np.random.default_rng(cfg.seed + 1 + f).permutation(rest.size)]
        n_val = max(1, int(round(0.15 / 0.85 * rest.size)))
        va, tr = rest[:n_val], rest[n_val:]
        _, rep = train_mlp(x, y, cfg, indices=(tr, va, te), feature_names=feature_names)
        mses.append(rep.test_mse)
    mses = np.array(mses)
    return {"folds": folds, "fold_mse": mses.tolist(), "mean": float(mses.mean()),
            "std": float(mses.std()), "fold_sizes": np.bincount(labels, minlength=folds).tolist()}


def predict(model, features) -> np.ndarray:
    """Temperature prediction (°C) for either model family."""
    if isinstance(model, LinearModel):
        f = np.asarray(features, dtype=float)
        if f.ndim == 2:
            if f.shape[1] != 1:
                raise PreconditionError(f"linear model takes 1 feature, got {f.shape[1]}")
            f = f[:, 0]
        return model.predict(f)
    if isinstance(model, MlpModel):
        return model.predict(features)
    raise TypeError(f"unsupported model type {type(model).__name__}")


def gradient_check(model: MlpModel, features, targets, h: float = 1e-5, lam: float | None = None) -> float:
    """Max relative error between analytic and central-difference gradients.

    Works in standardized space on the regularized objective. Coordinates of
    W1/b1 whose perturbation could move a hidden pre-activation across the
    ReLU kink (within 10·h) are skipped.
    """
    x = model.x_scale.apply(np.atleast_2d(np.asarray(features, dtype=float)))
    y = model.y_scale.apply(np.asarray(targets, dtype=float).ravel())
    if x.shape[0] > 32:
        raise PreconditionError("gradient_check expects at most 32 rows")
    lam = model.reg_lambda if lam is None else lam
    p = [np.array(q, dtype=float) for q in model.params()]
    _, grads = objective(p, x, y, lam)
    theta = _flat(p)
    g_an = _flat(grads)
    z = x @ p[0].T + p[1]
    reach = 10.0 * h * (1.0 + np.abs(x).max(axis=1))
    near_kink = np.any(np.abs(z) < reach[:, None], axis=0)
    n_w1 = p[0].size
    worst = 0.0
    for i in range(theta.size):
        if i < n_w1 + p[1].size:
            unit = i // p[0].shape[1] if i < n_w1 else i - n_w1
            if near_kink[unit]:
                continue
        tp = theta.copy()
        tp[i] += h
        tm = theta.copy()
        tm[i] -= h
        fp = objective(_unflat(tp, p), x, y, lam)[0]
        fm = objective(_unflat(tm, p), x, y, lam)[0]
        num = (fp - fm) / (2 * h)
        denom = max(abs(num) + abs(g_an[i]), 1e-7)
        worst = max(worst, abs(num - g_an[i]) / denom)
    return worst


def save_model(model, path) -> None:
    text = json.dumps(model.to_dict(), indent=2, sort_keys=True) + "\n"
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def model_from_dict(d: dict):
    if d.get("type") == "linear":
        return LinearModel.from_dict(d)
    if d.get("type") == "mlp":
        return MlpModel.from_dict(d)
    raise ValueError(f"unknown model type {d.get('type')!r}")


def load_model(path):
    with open(path, encoding="utf-8") as fh:
        return model_from_dict(json.load(fh))
