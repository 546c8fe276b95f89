"""A small LeNet-style classifier running on hashed voxel hierarchies.

Every level ``l`` from the finest down to ``coarsest_level`` applies
conv(3, stride 1) -> batch norm -> scale -> ReLU -> max pool(2, stride 2),
with ``max(2, 2**(9 - l))`` channels.  The pooled features one level below
the coarsest are laid out densely per model and fed to
dropout -> FC(hidden) -> dropout -> FC(classes) -> softmax.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, fields

import numpy as np

from . import ops
from .batch import SuperPsh, batch_levels
from .psh import PshLevel, build_psh
from .shapes import box, icosphere, pyramid, random_rotation, upright_poses
from .voxel import InputModel, hierarchy, normalize_model, voxelize

CLASSES = ("sphere", "box", "pyramid")
CONV_KERNEL = 3
POOL_KERNEL = 2


def channels_at(level: int) -> int:
    return max(2, 2 ** (9 - level))


# -- configuration -----------------------------------------------------------------

@dataclass
class TrainConfig:
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 0.0005
    batch_size: int = 16
    dropout: float = 0.5
    epochs: int = 30
    lr_step: int = 10        # epochs between lr drops
    lr_factor: float = 0.1
    resolution: int = 16
    seed: int = 0

    def __post_init__(self):
        for f in fields(self):
            cast = float if f.type == "float" else int
            value = getattr(self, f.name)
            if cast is int and float(value) != int(value):
                raise ValueError(f"{f.name} must be an integer")
            setattr(self, f.name, cast(value))
        if self.lr < 0 or self.momentum < 0 or self.weight_decay < 0:
            raise ValueError("lr, momentum and weight_decay must be non-negative")
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout must be in [0, 1)")
        if self.batch_size < 1 or self.epochs < 0 or self.lr_step < 1:
            raise ValueError("batch_size and lr_step must be positive")
        if not 0 < self.lr_factor <= 1:
            raise ValueError("lr_factor must be in (0, 1] so the schedule never increases")

    def lr_at(self, epoch: int) -> float:
        return self.lr * self.lr_factor ** (epoch // self.lr_step)

    def to_text(self) -> str:
        return "".join(f"{f.name}={getattr(self, f.name)}\n" for f in fields(self))

    @classmethod
    def from_text(cls, text: str) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        values = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = (part.strip() for part in line.partition("="))
            if not sep or key not in known:
                raise ValueError(f"config line {lineno}: cannot parse {raw!r}")
            values[key] = value
        try:
            return cls(**{k: float(v) for k, v in values.items()})
        except ValueError as exc:
            raise ValueError(f"config: {exc}") from None


# -- data --------------------------------------------------------------------------

def toy_model(label: int, rng: np.random.Generator) -> InputModel:
    """One randomly scaled and rotated sphere (0), box (1) or pyramid (2)."""
    if label == 0:
        base = icosphere(2)
    elif label == 1:
        base = box(rng.uniform(0.4, 1.0, size=3))
    elif label == 2:
        base = pyramid(rng.uniform(0.6, 1.0), rng.uniform(0.6, 1.0))
    else:
        raise ValueError(f"unknown toy class {label}")
    m = normalize_model(base).transformed(random_rotation(rng))
    return InputModel(m.vertices * rng.uniform(0.6, 1.0), m.triangles)


def toy_dataset(count: int, seed: int = 0) -> tuple[list[InputModel], np.ndarray]:
    rng = np.random.default_rng(seed)
    labels = np.arange(count) % len(CLASSES)
    rng.shuffle(labels)
    return [toy_model(int(y), rng) for y in labels], labels


def encode(model: InputModel, resolution: int, coarsest: int = 2, seed: int = 0) -> list[PshLevel]:
    """Voxelize and hash a normalized model at every level down to ``coarsest``."""
    s = voxelize(model, resolution, rng=seed)
    return [build_psh(level, seed=seed) for level in hierarchy(s, coarsest)]


# -- network -----------------------------------------------------------------------

def _xavier(rng, shape, fan_in, fan_out, dtype):
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class HashNet:
    """Parameters live in ``params`` (name -> array); BN running stats in ``stats``."""

    def __init__(self, finest_level: int, num_classes: int, in_channels: int = 3,
                 coarsest_level: int = 2, hidden: int = 128, dropout: float = 0.5,
                 seed: int = 0, dtype=np.float32, dim: int = 3):
        if coarsest_level < 1 or finest_level < coarsest_level:
            raise ValueError("need finest_level >= coarsest_level >= 1")
        self.finest_level = finest_level
        self.coarsest_level = coarsest_level
        self.num_classes = num_classes
        self.in_channels = in_channels
        self.hidden = hidden
        self.dropout = dropout
        self.dim = dim
        self.dtype = np.dtype(dtype)
        self.levels = list(range(finest_level, coarsest_level - 1, -1))
        rng = np.random.default_rng(seed)
        taps = CONV_KERNEL ** dim
        self.params: dict[str, np.ndarray] = {}
        self.stats: dict[str, np.ndarray] = {}
        c_in = in_channels
        for l in self.levels:
            c = channels_at(l)
            self.params[f"conv{l}.W"] = _xavier(rng, (c, c_in * taps), c_in * taps, c * taps, self.dtype)
            self.params[f"bn{l}.gamma"] = np.ones(c, self.dtype)
            self.params[f"bn{l}.beta"] = np.zeros(c, self.dtype)
            self.stats[f"bn{l}.mean"] = np.zeros(c, self.dtype)
            self.stats[f"bn{l}.var"] = np.ones(c, self.dtype)
            c_in = c
        self.top_channels = c_in
        self.top_cells = (2 ** (coarsest_level - 1)) ** dim
        fc_in = c_in * self.top_cells
        self.params["fc1.W"] = _xavier(rng, (hidden, fc_in), fc_in, hidden, self.dtype)
        self.params["fc1.b"] = np.zeros(hidden, self.dtype)
        self.params["fc2.W"] = _xavier(rng, (num_classes, hidden), hidden, num_classes, self.dtype)
        self.params["fc2.b"] = np.zeros(num_classes, self.dtype)
        self.velocity = {k: np.zeros_like(v) for k, v in self.params.items()}

    # structure ---------------------------------------------------------------

    def required_levels(self) -> list[int]:
        return self.levels + [self.coarsest_level - 1]

    def _by_level(self, batch: list[SuperPsh]) -> dict[int, SuperPsh]:
        by_level = {sp.level: sp for sp in batch}
        missing = [l for l in self.required_levels() if l not in by_level]
        if missing:
            raise ValueError(f"batch lacks level(s) {missing}")
        return by_level

    def _dense_top(self, sp: SuperPsh):
        pos, model = sp.column_positions()
        cell = np.zeros(len(pos), dtype=np.int64)
        for axis in range(sp.dim - 1, -1, -1):
            cell = cell * sp.resolution + pos[:, axis]
        return model - 1, cell

    def _flatten(self, sp, X):
        row, cell = self._dense_top(sp)
        out = np.zeros((sp.b, X.shape[0], self.top_cells), X.dtype)
        out[row, :, cell] = X.T
        return out.reshape(sp.b, -1)

    def _unflatten(self, sp, dflat, channels):
        row, cell = self._dense_top(sp)
        return dflat.reshape(sp.b, channels, self.top_cells)[row, :, cell].T

    # passes ------------------------------------------------------------------

    def forward(self, batch: list[SuperPsh], training: bool = False,
                rng: np.random.Generator | None = None):
        """Class probabilities ``(b, classes)`` and the cache for :meth:`backward`."""
        by_level = self._by_level(batch)
        p = self.params
        X = by_level[self.finest_level].D.astype(self.dtype)
        if X.shape[0] != self.in_channels:
            raise ValueError(f"expected {self.in_channels} input channels, got {X.shape[0]}")
        if rng is None:
            rng = np.random.default_rng(0)
        layers = []
        for l in self.levels:
            sp, coarse = by_level[l], by_level[l - 1]
            c = channels_at(l)
            conv = ops.ConvSpec(CONV_KERNEL, 1, 0, X.shape[0], c)
            pool = ops.ConvSpec(POOL_KERNEL, POOL_KERNEL, 0, c, c)
            Y, cols = ops.conv_forward(sp, sp, p[f"conv{l}.W"], conv, X)
            Z, bn = ops.batch_norm_forward(Y, self.stats[f"bn{l}.mean"], self.stats[f"bn{l}.var"],
                                           training)
            S = ops.scale_forward(Z, p[f"bn{l}.gamma"], p[f"bn{l}.beta"])
            R = ops.relu_forward(S)
            X, switches = ops.max_pool(sp, coarse, pool, R)
            layers.append((l, conv, pool, cols, bn, Z, S, switches))
        top = by_level[self.coarsest_level - 1]
        x0 = self._flatten(top, X)
        x1, m1 = ops.dropout_forward(x0, self.dropout, rng, training)
        h = x1 @ p["fc1.W"].T + p["fc1.b"]
        h1, m2 = ops.dropout_forward(h, self.dropout, rng, training)
        z = h1 @ p["fc2.W"].T + p["fc2.b"]
        z = z - z.max(axis=1, keepdims=True)
        e = np.exp(z)
        probs = e / e.sum(axis=1, keepdims=True)
        cache = (by_level, layers, top, X.shape[0], x1, m1, h1, m2)
        return probs, cache

    def backward(self, dz: np.ndarray, cache) -> dict[str, np.ndarray]:
        """Gradients of every parameter given ``dz`` = dLoss/dLogits."""
        by_level, layers, top, c_top, x1, m1, h1, m2 = cache
        p = self.params
        g = {"fc2.W": dz.T @ h1, "fc2.b": dz.sum(axis=0)}
        dh = ops.dropout_backward(dz @ p["fc2.W"], m2)
        g["fc1.W"] = dh.T @ x1
        g["fc1.b"] = dh.sum(axis=0)
        dx = ops.dropout_backward(dh @ p["fc1.W"], m1)
        dX = self._unflatten(top, dx, c_top)
        for l, conv, pool, cols, bn, Z, S, switches in reversed(layers):
            sp, coarse = by_level[l], by_level[l - 1]
            dR = ops.max_pool_backward(dX, switches, sp, coarse, pool)
            dS = ops.relu_backward(dR, S)
            dZ, g[f"bn{l}.gamma"], g[f"bn{l}.beta"] = ops.scale_backward(dS, Z, p[f"bn{l}.gamma"])
            dY = ops.batch_norm_backward(dZ, bn)
            g[f"conv{l}.W"], dX = ops.conv_backward(dY, p[f"conv{l}.W"], cols, sp, sp, conv)
        return g

    def loss_and_grads(self, batch, labels, training: bool = True, rng=None):
        labels = self._check_labels(labels, batch[0].b)
        probs, cache = self.forward(batch, training, rng)
        b = len(labels)
        loss = -np.mean(np.log(np.maximum(probs[np.arange(b), labels], np.finfo(probs.dtype).tiny)))
        dz = probs.copy()
        dz[np.arange(b), labels] -= 1
        return float(loss), self.backward(dz / b, cache)

    def _check_labels(self, labels, b: int) -> np.ndarray:
        labels = np.asarray(labels, dtype=np.int64)
        if labels.shape != (b,):
            raise ValueError(f"need {b} labels, got shape {labels.shape}")
        if labels.min() < 0 or labels.max() >= self.num_classes:
            raise ValueError(f"label outside [0, {self.num_classes})")
        return labels

    def train_step(self, batch, labels, config: TrainConfig, lr: float | None = None,
                   rng=None) -> float:
        """One SGD step with momentum and weight decay; returns the batch loss."""
        lr = config.lr if lr is None else lr
        loss, grads = self.loss_and_grads(batch, labels, True, rng)
        for name, w in self.params.items():
            v = self.velocity[name]
            v *= config.momentum
            v -= lr * (grads[name] + config.weight_decay * w)
            w += v
        return loss

    def predict(self, batch) -> np.ndarray:
        return self.forward(batch, training=False)[0]

    # checkpoints -------------------------------------------------------------

    def arch(self) -> np.ndarray:
        return np.array([self.finest_level, self.coarsest_level, self.num_classes,
                         self.in_channels, self.hidden, self.dim], dtype=np.int64)

    def state(self) -> dict[str, np.ndarray]:
        out = {"arch": self.arch()}
        out.update({f"param.{k}": v for k, v in self.params.items()})
        out.update({f"stat.{k}": v for k, v in self.stats.items()})
        return out

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(pack_arrays(self.state()))

    @classmethod
    def load(cls, path, dropout: float = 0.5) -> "HashNet":
        with open(path, "rb") as fh:
            arrays = unpack_arrays(fh.read())
        finest, coarsest, classes, c_in, hidden, dim = (int(x) for x in arrays["arch"])
        dtype = arrays["param.fc2.b"].dtype
        net = cls(finest, classes, c_in, coarsest, hidden, dropout, 0, dtype, dim)
        for key, value in arrays.items():
            kind, _, name = key.partition(".")
            target = {"param": net.params, "stat": net.stats}.get(kind)
            if target is not None:
                if name not in target or target[name].shape != value.shape:
                    raise ValueError(f"checkpoint entry {key} does not fit the architecture")
                target[name][...] = value
        return net


# Checkpoint layout, little-endian: b"HCKP", u32 version, u32 entry count,
# then per entry u16 name length, name, u8 dtype code, u8 ndim, u32 dims,
# u64 byte offset into the payload, u64 byte length; then the payload.
_CKPT_MAGIC = b"HCKP"
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<i8")}
_CODES = {v: k for k, v in _DTYPES.items()}


def pack_arrays(arrays: dict[str, np.ndarray]) -> bytes:
    toc, payload, offset = [], [], 0
    for name, a in arrays.items():
        dt = np.dtype(a.dtype).newbyteorder("<")
        if dt not in _CODES:
            raise ValueError(f"cannot store dtype {a.dtype}")
        data = np.ascontiguousarray(a, dtype=dt).tobytes()
        key = name.encode()
        toc.append(struct.pack("<H", len(key)) + key
                   + struct.pack("<BB", _CODES[dt], a.ndim)
                   + struct.pack(f"<{a.ndim}I", *a.shape)
                   + struct.pack("<QQ", offset, len(data)))
        payload.append(data)
        offset += len(data)
    head = _CKPT_MAGIC + struct.pack("<II", 1, len(arrays))
    return head + b"".join(toc) + b"".join(payload)


def unpack_arrays(buf: bytes) -> dict[str, np.ndarray]:
    if buf[:4] != _CKPT_MAGIC:
        raise ValueError("not a checkpoint file")
    try:
        version, count = struct.unpack_from("<II", buf, 4)
        if version != 1:
            raise ValueError(f"unsupported checkpoint version {version}")
        pos, entries = 12, []
        for _ in range(count):
            (klen,) = struct.unpack_from("<H", buf, pos)
            name = buf[pos + 2:pos + 2 + klen].decode()
            pos += 2 + klen
            code, ndim = struct.unpack_from("<BB", buf, pos)
            shape = struct.unpack_from(f"<{ndim}I", buf, pos + 2)
            pos += 2 + 4 * ndim
            off, size = struct.unpack_from("<QQ", buf, pos)
            pos += 16
            entries.append((name, _DTYPES[code], shape, off, size))
        out = {}
        for name, dt, shape, off, size in entries:
            chunk = buf[pos + off:pos + off + size]
            if len(chunk) != size:
                raise ValueError("truncated checkpoint")
            out[name] = np.frombuffer(chunk, dtype=dt).reshape(shape).astype(dt.newbyteorder("="))
        return out
    except (struct.error, KeyError) as exc:
        raise ValueError(f"corrupt checkpoint: {exc}") from None


# -- training and evaluation ---------------------------------------------------------

def make_batch(encoded: list[list[PshLevel]]) -> list[SuperPsh]:
    return batch_levels(encoded)


def fit(net: HashNet, encoded: list[list[PshLevel]], labels, config: TrainConfig,
        log=None) -> list[float]:
    """Train for ``config.epochs``; returns the mean loss of each epoch."""
    labels = np.asarray(labels, dtype=np.int64)
    rng = np.random.default_rng(config.seed)
    net.dropout = config.dropout
    history = []
    for epoch in range(config.epochs):
        order = rng.permutation(len(encoded))
        lr = config.lr_at(epoch)
        losses = []
        for start in range(0, len(order), config.batch_size):
            idx = order[start:start + config.batch_size]
            batch = make_batch([encoded[i] for i in idx])
            losses.append(net.train_step(batch, labels[idx], config, lr, rng))
        history.append(float(np.mean(losses)))
        if log is not None:
            log(epoch, lr, history[-1])
    return history


def predict_scores(net: HashNet, encoded: list[list[PshLevel]], batch_size: int = 32) -> np.ndarray:
    parts = [net.predict(make_batch(encoded[i:i + batch_size]))
             for i in range(0, len(encoded), batch_size)]
    return np.concatenate(parts, axis=0)


def vote(pose_scores) -> np.ndarray:
    """Average ``(poses, models, classes)`` scores over poses."""
    return np.mean(np.asarray(pose_scores), axis=0)


def accuracy(scores: np.ndarray, labels) -> float:
    return float(np.mean(np.argmax(scores, axis=1) == np.asarray(labels)))


def evaluate(net: HashNet, models: list[InputModel], labels, resolution: int,
             voting: int | None = None, seed: int = 0) -> float:
    """Accuracy, optionally pooling scores over ``voting`` upright rotations."""
    poses = upright_poses(voting) if voting else [np.eye(3)]
    coarsest = 2 ** (net.coarsest_level - 1)
    per_pose = []
    for pose in poses:
        encoded = [encode(m.transformed(pose), resolution, coarsest, seed) for m in models]
        per_pose.append(predict_scores(net, encoded))
    return accuracy(vote(per_pose), labels)
