"""Small fully connected regression network written directly on numpy.

Hidden layers use ReLU, the output layer is linear (slope 1). Training is
plain backpropagation of the mean squared error with the Adam update rule.
Inputs are standardised with statistics of the training split. The target is
optionally log-transformed (the default: depths span more than an order of
magnitude over the design) and then standardised. Every transform is stored
on the model so ``forward`` takes raw (B, n, C) values and returns depth in mm.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import DegenerateError, DivergenceError, InsufficientDataError, SchemaError, ShapeMismatchError

MODEL_FORMAT = "rpclay-mlp"
MODEL_VERSION = 1
FEATURES = ("B", "n", "C")
ACTIVATIONS = ("relu", "linear")
TARGET_TRANSFORMS = ("log", "none")
INPUT_TRANSFORMS = ("log", "none")


@dataclass(frozen=True)
class LayerSpec:
    width: int
    activation: str = "relu"

    def __post_init__(self):
        if self.width < 1:
            raise ValueError(f"layer width must be >= 1, got {self.width}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")


def architecture(hidden: Sequence[int]) -> list[LayerSpec]:
    """ReLU hidden layers of the given widths followed by a width-1 linear output."""
    return [LayerSpec(w, "relu") for w in hidden] + [LayerSpec(1, "linear")]


@dataclass
class TrainConfig:
    epochs: int = 20000
    split: float = 0.8
    lr: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    batch: int = 0  # 0 means full batch
    patience: int = 200
    tol: float = 1e-10
    target_transform: str = "log"
    input_transform: str = "log"

    def __post_init__(self):
        if self.target_transform not in TARGET_TRANSFORMS:
            raise ValueError(f"unknown target_transform {self.target_transform!r}")
        if self.input_transform not in INPUT_TRANSFORMS:
            raise ValueError(f"unknown input_transform {self.input_transform!r}")
        if not 0 < self.split < 1:
            raise ValueError(f"split must be in (0, 1), got {self.split}")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not self.lr > 0:
            raise ValueError("lr must be > 0")


@dataclass
class FitMetrics:
    mse: float
    rmse: float
    r2: float
    split_tag: str = "train"

    def as_dict(self) -> dict:
        return {"mse": self.mse, "rmse": self.rmse, "r2": self.r2, "split_tag": self.split_tag}


@dataclass
class MlpModel:
    layers: list[LayerSpec]
    weights: list[np.ndarray]  # each (fan_in, fan_out)
    biases: list[np.ndarray]
    input_shift: np.ndarray
    input_scale: np.ndarray
    output_shift: float = 0.0
    output_scale: float = 1.0
    name: str = ""
    features: tuple[str, ...] = FEATURES
    output_transform: str = "none"
    input_transform: str = "none"
    # rows of (epoch, train_mse, val_mse), MSE in transformed-target units
    history: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if len(self.weights) != len(self.layers) or len(self.biases) != len(self.layers):
            raise ShapeMismatchError("one weight matrix and bias vector per layer required")
        fan_in = len(self.input_shift)
        for spec, w, b in zip(self.layers, self.weights, self.biases):
            if w.shape != (fan_in, spec.width) or b.shape != (spec.width,):
                raise ShapeMismatchError(
                    f"layer expects ({fan_in}, {spec.width}), got {w.shape} / {b.shape}")
            fan_in = spec.width
        if self.layers[-1].width != 1 or self.layers[-1].activation != "linear":
            raise ShapeMismatchError("output layer must be a single linear unit")
        if self.input_transform not in INPUT_TRANSFORMS or self.output_transform not in TARGET_TRANSFORMS:
            raise ValueError("unknown input or output transform")
        if np.any(self.input_scale <= 0) or self.output_scale <= 0:
            raise ValueError("normalisation scales must be strictly positive")

    @property
    def n_inputs(self) -> int:
        return len(self.input_shift)

    @property
    def hidden_widths(self) -> list[int]:
        return [s.width for s in self.layers[:-1]]

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))


def relu(x):
    return np.maximum(x, 0.0)


def linear(x, a: float = 1.0):
    return a * x


def init_model(layers: Sequence[LayerSpec], n_inputs: int = 3, seed: int = 0,
               name: str = "") -> MlpModel:
    """He-uniform weights, zero biases, identity normalisation."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    fan_in = n_inputs
    for spec in layers:
        bound = math.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, spec.width)))
        biases.append(np.zeros(spec.width))
        fan_in = spec.width
    return MlpModel(list(layers), weights, biases,
                    np.zeros(n_inputs), np.ones(n_inputs), name=name)


def _normalize(model: MlpModel, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != model.n_inputs:
        raise ShapeMismatchError(f"expected {model.n_inputs} input features, got {x.shape[-1]}")
    if model.input_transform == "log":
        x = np.log(x)
    return (x - model.input_shift) / model.input_scale


def _normalize_target(model: MlpModel, y: np.ndarray) -> np.ndarray:
    if model.output_transform == "log":
        y = np.log(y)
    return (y - model.output_shift) / model.output_scale


def _propagate(model: MlpModel, xn: np.ndarray) -> list[np.ndarray]:
    """Activations of every layer, input included."""
    acts = [xn]
    a = xn
    for spec, w, b in zip(model.layers, model.weights, model.biases):
        z = a @ w + b
        a = relu(z) if spec.activation == "relu" else z
        acts.append(a)
    return acts


def forward_normalized(model: MlpModel, xn: np.ndarray) -> np.ndarray:
    a = xn
    for spec, w, b in zip(model.layers, model.weights, model.biases):
        a = a @ w + b
        if spec.activation == "relu":
            np.maximum(a, 0.0, out=a)
    return a[:, 0]


def forward(model: MlpModel, x) -> np.ndarray | float:
    """Depth (mm) for one raw feature vector or a batch of shape (N, n_inputs)."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    xn = _normalize(model, np.atleast_2d(x))
    y = forward_normalized(model, xn) * model.output_scale + model.output_shift
    if model.output_transform == "log":
        y = np.exp(y)
    return float(y[0]) if single else y


def loss_and_grads(model: MlpModel, xn: np.ndarray, yn: np.ndarray):
    """MSE in normalised target space and its gradients (dW list, db list)."""
    acts = _propagate(model, xn)
    err = acts[-1][:, 0] - yn
    loss = float(np.mean(err * err))
    delta = (2.0 / len(yn)) * err[:, None]
    gw = [None] * len(model.layers)
    gb = [None] * len(model.layers)
    for i in range(len(model.layers) - 1, -1, -1):
        gw[i] = acts[i].T @ delta
        gb[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ model.weights[i].T) * (acts[i] > 0)
    return loss, gw, gb


def gradient_check(model: MlpModel, x, y: float, step: float = 1e-5,
                   backprop: Callable = loss_and_grads, floor: float = 1e-6) -> float:
    """Max relative difference between backprop and central finite differences.

    ``x`` is a raw feature row, ``y`` a raw target; both are mapped through the
    model normalisation before differentiation. The relative error of each
    entry is ``|a - f| / max(|a| + |f|, floor)``.
    """
    xn = _normalize(model, np.atleast_2d(x))
    yn = _normalize_target(model, np.atleast_1d(np.asarray(y, float)))
    _, gw, gb = backprop(model, xn, yn)
    worst = 0.0
    for params, grads in ((model.weights, gw), (model.biases, gb)):
        for p, g in zip(params, grads):
            flat = p.reshape(-1)
            gflat = np.asarray(g).reshape(-1)
            for k in range(flat.size):
                orig = flat[k]
                flat[k] = orig + step
                lp = loss_and_grads(model, xn, yn)[0]
                flat[k] = orig - step
                lm = loss_and_grads(model, xn, yn)[0]
                flat[k] = orig
                fd = (lp - lm) / (2.0 * step)
                rel = abs(gflat[k] - fd) / max(abs(gflat[k]) + abs(fd), floor)
                worst = max(worst, rel)
    return worst


def metrics(y, y_hat, split_tag: str = "train") -> FitMetrics:
    y = np.asarray(y, dtype=float)
    y_hat = np.asarray(y_hat, dtype=float)
    if y.shape != y_hat.shape or y.size == 0:
        raise ShapeMismatchError(f"y and y_hat must be equal, non-empty: {y.shape} vs {y_hat.shape}")
    resid = y - y_hat
    ss_res = float(np.sum(resid * resid))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0.0:
        raise DegenerateError("R^2 undefined: all actual values are equal")
    mse = ss_res / y.size
    return FitMetrics(mse, math.sqrt(mse), 1.0 - ss_res / ss_tot, split_tag)


def _safe_metrics(y, y_hat, tag):
    try:
        return metrics(y, y_hat, tag)
    except DegenerateError:
        mse = float(np.mean((np.asarray(y) - np.asarray(y_hat)) ** 2))
        return FitMetrics(mse, math.sqrt(mse), math.nan, tag)


@dataclass
class TrainResult:
    model: MlpModel
    train: FitMetrics
    validation: FitMetrics
    epochs_run: int
    train_index: np.ndarray = field(repr=False)
    val_index: np.ndarray = field(repr=False)


def split_indices(n: int, split: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    perm = np.random.default_rng(seed).permutation(n)
    n_train = min(max(round(split * n), 1), n - 1)
    return np.sort(perm[:n_train]), np.sort(perm[n_train:])


def train(X, y, layers: Sequence[LayerSpec], cfg: TrainConfig | None = None,
          name: str = "", features: Sequence[str] = FEATURES) -> TrainResult:
    """Fit a network to raw features ``X`` (N, k) and depths ``y`` (N,) in mm."""
    cfg = cfg or TrainConfig()
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    keep = np.isfinite(y)
    X, y = X[keep], y[keep]
    log_target = cfg.target_transform == "log"
    if log_target and np.any(y <= 0):
        raise ValueError("log target transform needs strictly positive depths")
    if cfg.input_transform == "log" and np.any(X <= 0):
        raise ValueError("log input transform needs strictly positive features")
    yt = np.log(y) if log_target else y
    Xt = np.log(X) if cfg.input_transform == "log" else X
    if len(y) < 5:
        raise InsufficientDataError(f"need at least 5 rows to train, got {len(y)}")
    if layers[-1].width != 1 or layers[-1].activation != "linear":
        raise ShapeMismatchError("architecture must end in a width-1 linear layer")

    tr, va = split_indices(len(y), cfg.split, cfg.seed)
    model = init_model(layers, X.shape[1], seed=cfg.seed + 1, name=name)
    shift = Xt[tr].mean(axis=0)
    scale = Xt[tr].std(axis=0)
    scale[scale == 0] = 1.0
    y_std = float(yt[tr].std()) or 1.0
    model = replace(model, input_shift=shift, input_scale=scale,
                    output_shift=float(yt[tr].mean()), output_scale=y_std,
                    features=tuple(features), output_transform=cfg.target_transform,
                    input_transform=cfg.input_transform)

    xn = _normalize(model, X)
    yn = (yt - model.output_shift) / model.output_scale
    xtr, ytr, xva, yva = xn[tr], yn[tr], xn[va], yn[va]

    params = model.weights + model.biases
    m1 = [np.zeros_like(p) for p in params]
    m2 = [np.zeros_like(p) for p in params]
    b1, b2, eps, lr = cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps, cfg.lr
    batch = cfg.batch if 0 < cfg.batch < len(tr) else len(tr)
    shuffle_rng = np.random.default_rng(cfg.seed + 2)
    hist = np.empty((cfg.epochs, 3))
    y2 = model.output_scale ** 2
    t = 0
    epoch = 0
    for epoch in range(cfg.epochs):
        order = shuffle_rng.permutation(len(tr)) if batch < len(tr) else None
        for start in range(0, len(tr), batch):
            if order is None:
                xb, yb = xtr, ytr
            else:
                sel = order[start:start + batch]
                xb, yb = xtr[sel], ytr[sel]
            loss, gw, gb = loss_and_grads(model, xb, yb)
            if not math.isfinite(loss):
                raise DivergenceError(f"{name or 'model'}: loss became non-finite at epoch {epoch}")
            t += 1
            c1 = 1.0 - b1**t
            c2 = 1.0 - b2**t
            for p, g, a, s in zip(params, gw + gb, m1, m2):
                a *= b1
                a += (1.0 - b1) * g
                s *= b2
                s += (1.0 - b2) * g * g
                p -= lr * (a / c1) / (np.sqrt(s / c2) + eps)
        train_mse = float(np.mean((forward_normalized(model, xtr) - ytr) ** 2))
        if not math.isfinite(train_mse):
            raise DivergenceError(f"{name or 'model'}: loss became non-finite at epoch {epoch}")
        val_mse = float(np.mean((forward_normalized(model, xva) - yva) ** 2))
        hist[epoch] = (epoch + 1, train_mse * y2, val_mse * y2)
        if epoch >= cfg.patience:
            if abs(hist[epoch - cfg.patience, 1] - hist[epoch, 1]) < cfg.tol * y2:
                break
    epochs_run = epoch + 1
    model.history = hist[:epochs_run].copy()

    pred = forward(model, X)
    return TrainResult(
        model,
        _safe_metrics(y[tr], pred[tr], "train"),
        _safe_metrics(y[va], pred[va], "validation"),
        epochs_run, tr, va,
    )


# -- serialisation -----------------------------------------------------------

def model_to_dict(model: MlpModel, extra: dict | None = None) -> dict:
    d = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "name": model.name,
        "features": list(model.features),
        "layers": [{"width": s.width, "activation": s.activation} for s in model.layers],
        "weights": [w.tolist() for w in model.weights],
        "biases": [b.tolist() for b in model.biases],
        "input_norm": {"shift": model.input_shift.tolist(), "scale": model.input_scale.tolist(),
                       "transform": model.input_transform},
        "output_norm": {"shift": model.output_shift, "scale": model.output_scale,
                        "transform": model.output_transform},
    }
    if extra:
        d.update(extra)
    return d


def model_from_dict(d: dict) -> MlpModel:
    if d.get("format") != MODEL_FORMAT or d.get("version") != MODEL_VERSION:
        raise SchemaError(f"not an {MODEL_FORMAT} v{MODEL_VERSION} document")
    try:
        return MlpModel(
            layers=[LayerSpec(int(s["width"]), s["activation"]) for s in d["layers"]],
            weights=[np.array(w, dtype=float).reshape(len(w), -1) for w in d["weights"]],
            biases=[np.array(b, dtype=float) for b in d["biases"]],
            input_shift=np.array(d["input_norm"]["shift"], dtype=float),
            input_scale=np.array(d["input_norm"]["scale"], dtype=float),
            output_shift=float(d["output_norm"]["shift"]),
            output_scale=float(d["output_norm"]["scale"]),
            output_transform=d["output_norm"].get("transform", "none"),
            input_transform=d["input_norm"].get("transform", "none"),
            name=d.get("name", ""),
            features=tuple(d.get("features", FEATURES)),
        )
    except KeyError as exc:
        raise SchemaError(f"model document lacks field {exc}") from None


def save_model(model: MlpModel, path: str | Path, extra: dict | None = None) -> Path:
    path = Path(path)
    path.write_text(json.dumps(model_to_dict(model, extra), indent=1) + "\n", encoding="utf-8")
    return path


def load_model(path: str | Path) -> MlpModel:
    return model_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def history_csv(model: MlpModel) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["epoch", "train_mse", "val_mse"])
    for e, tr, va in (model.history if model.history is not None else []):
        w.writerow([int(e), repr(float(tr)), repr(float(va))])
    return buf.getvalue()


# -- architecture study ------------------------------------------------------

# label suffix -> hidden widths; 100 neurons split evenly over 2 or 3 layers
ARCHITECTURES = (
    ("1", (25,)),
    ("2", (50,)),
    ("3", (75,)),
    ("4", (100,)),
    ("4-2", (50, 50)),
    ("4-3", (34, 33, 33)),
)
CASE_PREFIX = {1: "A", 2: "B", 3: "C"}


@dataclass
class GridEntry:
    name: str
    case: int
    hidden: tuple[int, ...]
    result: TrainResult

    @property
    def rank_key(self):
        v = self.result.validation.rmse
        return (v if math.isfinite(v) else math.inf, len(self.hidden), self.result.model.n_params)


def run_architecture_grid(data: dict[int, tuple[np.ndarray, np.ndarray]], cfg: TrainConfig,
                          architectures=ARCHITECTURES, jobs: int = 1) -> dict[int, list[GridEntry]]:
    """Train every architecture for every case; lists come back ranked best-first.

    ``data`` maps case id to (X, y). Ranking is by validation RMSE, then fewer
    hidden layers, then fewer parameters.
    """
    from concurrent.futures import ThreadPoolExecutor

    jobs_list = [(case, f"{CASE_PREFIX.get(case, f'M{case}_')}{suffix}", hidden)
                 for case in sorted(data) for suffix, hidden in architectures]

    def fit(job):
        case, name, hidden = job
        X, y = data[case]
        try:
            res = train(X, y, architecture(hidden), cfg, name=name)
        except Exception as exc:
            raise type(exc)(f"[{name}] {exc}") from exc
        return GridEntry(name, case, tuple(hidden), res)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            entries = list(pool.map(fit, jobs_list))
    else:
        entries = [fit(j) for j in jobs_list]
    ranked: dict[int, list[GridEntry]] = {}
    for e in entries:
        ranked.setdefault(e.case, []).append(e)
    for case in ranked:
        ranked[case].sort(key=lambda e: e.rank_key)
    return ranked


def case_data(sset, case: int, features: Sequence[str] = FEATURES):
    """(X, y) arrays of one impact case from a SampleSet."""
    return sset.features(features), sset.depths(case)
