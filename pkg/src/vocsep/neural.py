"""Small numpy network stack: sigmoid dense layers, set max-pooling, AdaDelta."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

CHECKPOINT_VERSION = 1


class ShapeError(ValueError):
    pass


class CheckpointError(ValueError):
    pass


def sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    r = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-r, r, size=(fan_out, fan_in))


class Params:
    """Named, ordered parameter store. Names ending in ``.b`` are biases."""

    def __init__(self):
        self.names: list[str] = []
        self.arrays: dict[str, np.ndarray] = {}

    def add(self, name: str, array: np.ndarray) -> np.ndarray:
        if name in self.arrays:
            raise ValueError(f"duplicate parameter {name}")
        self.names.append(name)
        self.arrays[name] = np.asarray(array, dtype=np.float64)
        return self.arrays[name]

    def __getitem__(self, name: str) -> np.ndarray:
        return self.arrays[name]

    def items(self):
        return ((n, self.arrays[n]) for n in self.names)

    def zeros_like(self) -> dict[str, np.ndarray]:
        return {n: np.zeros_like(a) for n, a in self.items()}

    def size(self) -> int:
        return sum(a.size for a in self.arrays.values())


# ------------------------------------------------------------------ dense net

@dataclass
class DenseNet:
    """Fully connected net with sigmoid hidden layers and a scalar head.

    ``head`` is ``"sigmoid"`` (probability) or ``"linear"`` (score).
    """

    sizes: tuple[int, ...]
    head: str = "sigmoid"
    prefix: str = "dense"
    params: Params = field(default_factory=Params)

    def __post_init__(self):
        if self.head not in ("sigmoid", "linear"):
            raise ValueError("head must be 'sigmoid' or 'linear'")
        if len(self.sizes) < 2 or self.sizes[-1] != 1:
            raise ValueError("sizes must run from input width to a single output")

    def init(self, rng: np.random.Generator, zero: bool = False) -> "DenseNet":
        for i, (a, b) in enumerate(zip(self.sizes, self.sizes[1:])):
            w = np.zeros((b, a)) if zero else glorot(rng, a, b)
            self.params.add(f"{self.prefix}.{i}.W", w)
            self.params.add(f"{self.prefix}.{i}.b", np.zeros(b))
        return self

    def layers(self):
        for i in range(len(self.sizes) - 1):
            yield self.params[f"{self.prefix}.{i}.W"], self.params[f"{self.prefix}.{i}.b"]

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
        """Forward a batch (rows) or a single vector. Returns outputs and the cache."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[1] != self.sizes[0]:
            raise ShapeError(f"expected input width {self.sizes[0]}, got {x.shape[1]}")
        acts = [x]
        n_layers = len(self.sizes) - 1
        for i, (w, b) in enumerate(self.layers()):
            z = acts[-1] @ w.T + b
            last = i == n_layers - 1
            acts.append(z if last and self.head == "linear" else sigmoid(z))
        return acts[-1][:, 0], acts

    def backward(self, acts: list[np.ndarray], dout: np.ndarray,
                 grads: dict[str, np.ndarray] | None = None,
                 logit: bool = False) -> tuple[dict[str, np.ndarray], np.ndarray]:
        """Accumulate parameter gradients for upstream gradient ``dout`` on the outputs.

        With ``logit=True``, ``dout`` is taken with respect to the head's
        pre-activation instead (the stable route for cross-entropy).
        Returns the gradient dict and the gradient with respect to the input.
        """
        grads = grads if grads is not None else self.params.zeros_like()
        delta = np.asarray(dout, dtype=np.float64).reshape(-1, 1)
        n_layers = len(self.sizes) - 1
        for i in reversed(range(n_layers)):
            out = acts[i + 1]
            if not (i == n_layers - 1 and (self.head == "linear" or logit)):
                delta = delta * out * (1.0 - out)
            w = self.params[f"{self.prefix}.{i}.W"]
            grads[f"{self.prefix}.{i}.W"] += delta.T @ acts[i]
            grads[f"{self.prefix}.{i}.b"] += delta.sum(axis=0)
            delta = delta @ w
        return grads, delta

    def hidden(self, acts: list[np.ndarray]) -> np.ndarray:
        return acts[-2]


# ----------------------------------------------------------- conv + max-pool

@dataclass
class ConvMaxPool:
    """``k`` sigmoid filters applied to each vector of a set, max-pooled per filter.

    An empty set pools to the zero vector and passes no gradient.
    """

    width: int
    k: int
    prefix: str = "conv"
    params: Params = field(default_factory=Params)

    def init(self, rng: np.random.Generator, zero: bool = False) -> "ConvMaxPool":
        self.params.add(f"{self.prefix}.W", np.zeros((self.k, self.width)) if zero
                        else glorot(rng, self.width, self.k))
        self.params.add(f"{self.prefix}.b", np.zeros(self.k))
        return self

    @property
    def W(self):
        return self.params[f"{self.prefix}.W"]

    @property
    def b(self):
        return self.params[f"{self.prefix}.b"]

    def activations(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64).reshape(-1, self.width)
        return sigmoid(x @ self.W.T + self.b)

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, tuple]:
        x = np.asarray(x, dtype=np.float64)
        if x.size == 0:
            return np.zeros(self.k), (x.reshape(0, self.width), None, None)
        if x.ndim != 2 or x.shape[1] != self.width:
            raise ShapeError(f"expected vectors of width {self.width}, got shape {x.shape}")
        a = self.activations(x)
        arg = np.argmax(a, axis=0)  # first maximum wins ties
        return a[arg, np.arange(self.k)], (x, a, arg)

    def backward(self, cache: tuple, dpool: np.ndarray, grads: dict[str, np.ndarray]) -> dict:
        x, a, arg = cache
        if a is None:
            return grads
        cols = np.arange(self.k)
        sel = a[arg, cols]
        dz = np.asarray(dpool) * sel * (1.0 - sel)
        grads[f"{self.prefix}.W"] += dz[:, None] * x[arg]
        grads[f"{self.prefix}.b"] += dz
        return grads

    def pool_many(self, acts: np.ndarray, index_lists: Sequence[Sequence[int]]) -> np.ndarray:
        """Max-pool precomputed activations over many index subsets at once."""
        if not index_lists:
            return np.zeros((0, self.k))
        longest = max((len(ix) for ix in index_lists), default=0)
        padded = np.full((len(index_lists), max(longest, 1)), -1, dtype=np.int64)
        for r, ix in enumerate(index_lists):
            padded[r, :len(ix)] = ix
        return self.pool_padded(acts, padded)

    def pool_padded(self, acts: np.ndarray, padded: np.ndarray) -> np.ndarray:
        """Like :meth:`pool_many` with index rows padded by -1."""
        padded = np.asarray(padded, dtype=np.int64)
        if padded.size == 0:
            return np.zeros((len(padded), self.k))
        ext = np.vstack([acts.reshape(-1, self.k), np.full((1, self.k), -np.inf)])
        pooled = ext[np.where(padded < 0, len(ext) - 1, padded)].max(axis=1)
        pooled[np.isneginf(pooled)] = 0.0
        return pooled


# ----------------------------------------------------------- chord scorer

@dataclass
class ChordNet:
    """Three set encoders (pairs, convergences, divergences) plus global features.

    The pooled vectors are concatenated with the assignment features and fed
    to one sigmoid hidden layer and a linear score.
    """

    pair_width: int
    conv_width: int
    div_width: int
    assign_width: int
    filters: tuple[int, int, int] = (50, 20, 20)
    hidden: int = 100

    def __post_init__(self):
        self.params = Params()
        self.pair = ConvMaxPool(self.pair_width, self.filters[0], "pair", self.params)
        self.conv = ConvMaxPool(self.conv_width, self.filters[1], "converge", self.params)
        self.div = ConvMaxPool(self.div_width, self.filters[2], "diverge", self.params)
        width = sum(self.filters) + self.assign_width
        self.top = DenseNet((width, self.hidden, 1), "linear", "score", self.params)

    def init(self, rng: np.random.Generator, zero: bool = False) -> "ChordNet":
        for part in (self.pair, self.conv, self.div, self.top):
            part.init(rng, zero)
        return self

    def arch(self) -> dict:
        return {"kind": "chord", "pair_width": self.pair_width, "conv_width": self.conv_width,
                "div_width": self.div_width, "assign_width": self.assign_width,
                "filters": list(self.filters), "hidden": self.hidden}

    def forward(self, pairs: np.ndarray, convs: np.ndarray, divs: np.ndarray,
                assign: np.ndarray) -> tuple[float, tuple]:
        p, cp = self.pair.forward(pairs)
        c, cc = self.conv.forward(convs)
        d, cd = self.div.forward(divs)
        x = np.concatenate([p, c, d, np.asarray(assign, dtype=np.float64)])
        out, acts = self.top.forward(x)
        return float(out[0]), (cp, cc, cd, acts)

    def backward(self, cache: tuple, dscore: float,
                 grads: dict[str, np.ndarray] | None = None) -> dict[str, np.ndarray]:
        grads = grads if grads is not None else self.params.zeros_like()
        cp, cc, cd, acts = cache
        grads, dx = self.top.backward(acts, np.array([dscore]), grads)
        dx = dx[0]
        k1, k2, k3 = self.filters
        self.pair.backward(cp, dx[:k1], grads)
        self.conv.backward(cc, dx[k1:k1 + k2], grads)
        self.div.backward(cd, dx[k1 + k2:k1 + k2 + k3], grads)
        return grads

    def score_many(self, pair_rows: np.ndarray, conv_rows: np.ndarray, div_rows: np.ndarray,
                   pair_idx, conv_idx, div_idx, assign: np.ndarray) -> np.ndarray:
        """Score many candidates sharing precomputed feature rows.

        Index arguments are lists of row-index lists or arrays padded with -1.
        """
        pools = []
        for enc, rows, idx in ((self.pair, pair_rows, pair_idx), (self.conv, conv_rows, conv_idx),
                               (self.div, div_rows, div_idx)):
            acts = enc.activations(rows) if len(rows) else np.zeros((0, enc.k))
            pools.append(enc.pool_padded(acts, idx) if isinstance(idx, np.ndarray)
                         else enc.pool_many(acts, idx))
        x = np.hstack(pools + [np.atleast_2d(assign)])
        out, _ = self.top.forward(x)
        return out


# --------------------------------------------------------------- optimizer

@dataclass
class AdaDelta:
    rho: float = 0.95
    eps: float = 1e-6
    l2: float = 0.0
    eg2: dict[str, np.ndarray] = field(default_factory=dict)
    edx2: dict[str, np.ndarray] = field(default_factory=dict)

    def step(self, params: Params, grads: dict[str, np.ndarray]) -> None:
        """Apply one update in place. L2 applies to weights only, not biases."""
        for name, theta in params.items():
            g = grads[name]
            if self.l2 and not name.endswith(".b"):
                g = g + self.l2 * theta
            eg2 = self.eg2.setdefault(name, np.zeros_like(theta))
            edx2 = self.edx2.setdefault(name, np.zeros_like(theta))
            eg2 *= self.rho
            eg2 += (1.0 - self.rho) * g * g
            dx = -np.sqrt(edx2 + self.eps) / np.sqrt(eg2 + self.eps) * g
            edx2 *= self.rho
            edx2 += (1.0 - self.rho) * dx * dx
            theta += dx

    def state(self) -> dict:
        return {"rho": self.rho, "eps": self.eps, "l2": self.l2,
                "eg2": {k: v.ravel().tolist() for k, v in self.eg2.items()},
                "edx2": {k: v.ravel().tolist() for k, v in self.edx2.items()}}

    @classmethod
    def from_state(cls, state: dict, params: Params) -> "AdaDelta":
        opt = cls(state["rho"], state["eps"], state["l2"])
        for k, v in state.get("eg2", {}).items():
            opt.eg2[k] = np.asarray(v, dtype=np.float64).reshape(params[k].shape)
        for k, v in state.get("edx2", {}).items():
            opt.edx2[k] = np.asarray(v, dtype=np.float64).reshape(params[k].shape)
        return opt


# -------------------------------------------------------------- checkpoints

def config_hash(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True).encode()).hexdigest()[:16]


def dump_checkpoint(arch: dict, params: Params, optimizer: AdaDelta | None,
                    feature_config: dict, extra: dict | None = None) -> bytes:
    doc = {
        "version": CHECKPOINT_VERSION,
        "arch": arch,
        "param_order": params.names,
        "params": {n: {"shape": list(a.shape), "data": a.ravel().tolist()} for n, a in params.items()},
        "optimizer": optimizer.state() if optimizer else None,
        "feature_config": feature_config,
        "feature_hash": config_hash(feature_config),
    }
    if extra:
        doc["extra"] = extra
    return json.dumps(doc).encode()


def load_checkpoint(data: bytes) -> dict:
    """Parse and verify a checkpoint. Raises :class:`CheckpointError` naming the bad part."""
    try:
        doc = json.loads(data)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"checkpoint is not valid JSON: {exc}") from None
    if doc.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {doc.get('version')!r}")
    for key in ("arch", "param_order", "params", "feature_config", "feature_hash"):
        if key not in doc:
            raise CheckpointError(f"checkpoint lacks {key!r}")
    if config_hash(doc["feature_config"]) != doc["feature_hash"]:
        raise CheckpointError("feature config hash mismatch")
    arrays = {}
    for name in doc["param_order"]:
        entry = doc["params"].get(name)
        if entry is None:
            raise CheckpointError(f"parameter {name} missing")
        arr = np.asarray(entry["data"], dtype=np.float64)
        if arr.size != int(np.prod(entry["shape"])):
            raise CheckpointError(f"parameter {name} has {arr.size} values for shape {entry['shape']}")
        if not np.all(np.isfinite(arr)):
            raise CheckpointError(f"parameter {name} holds non-finite values")
        arrays[name] = arr.reshape(entry["shape"])
    doc["arrays"] = arrays
    return doc


def restore_params(target: Params, arrays: dict[str, np.ndarray]) -> None:
    unknown = sorted(set(arrays) - set(target.names))
    if unknown:
        raise CheckpointError(f"checkpoint holds unknown parameter {unknown[0]}")
    for name, theta in target.items():
        if name not in arrays:
            raise CheckpointError(f"parameter {name} missing")
        if arrays[name].shape != theta.shape:
            raise CheckpointError(f"parameter {name} has shape {arrays[name].shape}, "
                                  f"expected {theta.shape}")
        theta[...] = arrays[name]


def build_from_arch(arch: dict):
    if arch.get("kind") == "note":
        return DenseNet(tuple(arch["sizes"]), arch.get("head", "sigmoid"), "note")
    if arch.get("kind") == "chord":
        return ChordNet(arch["pair_width"], arch["conv_width"], arch["div_width"],
                        arch["assign_width"], tuple(arch["filters"]), arch["hidden"])
    raise CheckpointError(f"unknown architecture {arch.get('kind')!r}")


# ------------------------------------------------------------ gradient check

@dataclass
class GradCheckResult:
    max_rel_error: float
    worst_param: str
    checked: int

    def ok(self, tol: float = 1e-4) -> bool:
        return self.max_rel_error < tol


def gradcheck(params: Params, loss: Callable[[], float], grads: dict[str, np.ndarray],
              rng: np.random.Generator, per_param: int = 25, h: float = 1e-5) -> GradCheckResult:
    """Compare analytic gradients with central differences on sampled coordinates.

    Relative error is ``|a - n| / max(|a|, |n|, 1e-8)``.
    """
    worst, worst_name, count = 0.0, "", 0
    for name, theta in params.items():
        flat = theta.reshape(-1)
        picks = rng.choice(flat.size, size=min(per_param, flat.size), replace=False)
        for i in picks:
            old = flat[i]
            flat[i] = old + h
            up = loss()
            flat[i] = old - h
            down = loss()
            flat[i] = old
            num = (up - down) / (2 * h)
            ana = grads[name].reshape(-1)[i]
            err = abs(ana - num) / max(abs(ana), abs(num), 1e-8)
            count += 1
            if err > worst:
                worst, worst_name = err, f"{name}[{i}]"
    return GradCheckResult(worst, worst_name, count)


def _unit_rows(rng: np.random.Generator, n: int, width: int) -> np.ndarray:
    """Sparse rows in [0, 1], shaped like encoded features."""
    return rng.random((n, width)) * (rng.random((n, width)) < 0.3)


def note_gradcheck(seed: int, width: int = 357, hidden: tuple[int, ...] = (200, 200),
                   batch: int = 8, per_param: int = 25) -> GradCheckResult:
    """Finite-difference check of the pair classifier under mean cross-entropy."""
    rng = np.random.default_rng(seed)
    net = DenseNet((width, *hidden, 1), "sigmoid", "note").init(rng)
    x = _unit_rows(rng, batch, width)
    y = (rng.random(batch) < 0.5).astype(np.float64)

    def loss() -> float:
        p, _ = net.forward(x)
        p = np.clip(p, 1e-12, 1 - 1e-12)
        return float(-np.mean(y * np.log(p) + (1 - y) * np.log(1 - p)))

    p, acts = net.forward(x)
    grads, _ = net.backward(acts, (p - y) / batch, logit=True)
    return gradcheck(net.params, loss, grads, rng, per_param)


def chord_gradcheck(seed: int, widths: tuple[int, int, int, int] = (357, 40, 30, 7),
                    filters: tuple[int, int, int] = (50, 20, 20), hidden: int = 100,
                    per_param: int = 25, sets: int = 3) -> GradCheckResult:
    """Finite-difference check of the chord scorer under squared error on a few candidates.

    A gold-minus-negative hinge would cancel the output bias, so every set gets its own target.
    """
    rng = np.random.default_rng(seed)
    net = ChordNet(*widths, filters, hidden).init(rng)
    inputs = [(_unit_rows(rng, int(rng.integers(1, 5)), widths[0]),
               _unit_rows(rng, int(rng.integers(1, 3)), widths[1]),
               _unit_rows(rng, int(rng.integers(1, 3)), widths[2]),
               rng.random(widths[3])) for _ in range(sets)]
    targets = rng.normal(size=sets)

    def loss() -> float:
        return sum(0.5 * (net.forward(*x)[0] - t) ** 2 for x, t in zip(inputs, targets))

    grads = net.params.zeros_like()
    for x, t in zip(inputs, targets):
        s, cache = net.forward(*x)
        net.backward(cache, s - t, grads)
    return gradcheck(net.params, loss, grads, rng, per_param)
