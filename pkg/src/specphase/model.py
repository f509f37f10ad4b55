"""Small convolutional encoder/decoder with hand-rolled backprop and SGD.

The encoder stacks [conv -> max-pool -> ReLU] blocks, ends with a global max
pool and a fully connected projection to the embedding. Each decoder head
projects the embedding back to the bottleneck grid and mirrors the encoder
with [nearest-neighbor upsample -> conv] blocks; the final conv is linear.
Phase heads emit raw reals; the cosine loss provides the 2*pi periodicity.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .dsp import MagnitudeMap
from .losses import cosine_loss, magnitude_mse

HEAD_PHASE = "phase"
HEAD_MAGNITUDE = "magnitude"

CHECKPOINT_MAGIC = b"SPECCKPT"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ArchConfig:
    """Network geometry; input T and F must be divisible by pool**depth."""

    input_shape: tuple[int, int]
    channels: tuple[int, ...] = (8, 16, 32, 64, 128)
    kernel: int = 3
    embedding_dim: int = 128
    heads: tuple[str, ...] = (HEAD_PHASE,)
    pool: int = 2

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(v) for v in self.input_shape))
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        object.__setattr__(self, "heads", tuple(self.heads))
        if len(self.channels) == 0:
            raise ValueError("need at least one conv layer")
        if any(c <= 0 for c in self.channels):
            raise ValueError("channel counts must be positive")
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise ValueError("kernel size must be odd for same-padding convs")
        if self.embedding_dim <= 0:
            raise ValueError("embedding_dim must be positive")
        if self.pool < 1:
            raise ValueError("pool factor must be >= 1")
        if not self.heads or self.heads[0] != HEAD_PHASE:
            raise ValueError("heads must start with the phase head")
        if any(h not in (HEAD_PHASE, HEAD_MAGNITUDE) for h in self.heads):
            raise ValueError(f"unknown head in {self.heads!r}")
        if len(set(self.heads)) != len(self.heads):
            raise ValueError("duplicate heads")
        shrink = self.pool ** self.depth
        t, f = self.input_shape
        if t % shrink or f % shrink:
            raise ValueError(
                f"input {t}x{f} not divisible by pool^depth = {shrink}"
            )

    @property
    def depth(self) -> int:
        return len(self.channels)

    @property
    def bottleneck_shape(self) -> tuple[int, int, int]:
        shrink = self.pool ** self.depth
        return (self.channels[-1], self.input_shape[0] // shrink,
                self.input_shape[1] // shrink)

    def decoder_channels(self) -> list[tuple[int, int]]:
        """(in, out) channel pairs for the decoder convs, ending at 1 channel."""
        rev = list(reversed(self.channels))
        outs = rev[1:] + [1]
        return list(zip(rev, outs))

    def to_dict(self) -> dict:
        return {
            "input_shape": list(self.input_shape),
            "channels": list(self.channels),
            "kernel": self.kernel,
            "embedding_dim": self.embedding_dim,
            "heads": list(self.heads),
            "pool": self.pool,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ArchConfig":
        return cls(
            input_shape=tuple(d["input_shape"]),
            channels=tuple(d["channels"]),
            kernel=int(d["kernel"]),
            embedding_dim=int(d["embedding_dim"]),
            heads=tuple(d["heads"]),
            pool=int(d["pool"]),
        )


@dataclass
class ModelParams:
    """All trainable tensors keyed by name, plus the arch and the init seed."""

    arch: ArchConfig
    tensors: dict[str, np.ndarray]
    seed: int

    def copy(self) -> "ModelParams":
        return ModelParams(
            arch=self.arch,
            tensors={k: v.copy() for k, v in self.tensors.items()},
            seed=self.seed,
        )


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-2
    steps: int = 100
    batch_size: int = 1
    weight_strategy: str = "none"
    seed: int = 0
    lambda_mag: float = 1.0

    def __post_init__(self):
        # learning_rate 0 is allowed: it must leave parameters untouched.
        if self.learning_rate < 0.0:
            raise ValueError("learning_rate must be nonnegative")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.lambda_mag < 0.0:
            raise ValueError("lambda_mag must be nonnegative")


def init_model(arch: ArchConfig, seed: int = 0) -> ModelParams:
    """Deterministic init: zero-mean kernels scaled by 1/sqrt(fan-in), zero biases."""
    rng = np.random.default_rng(seed)
    k = arch.kernel
    tensors: dict[str, np.ndarray] = {}
    in_ch = 1
    for i, out_ch in enumerate(arch.channels):
        fan_in = in_ch * k * k
        tensors[f"enc{i}.w"] = rng.normal(0.0, fan_in ** -0.5, (out_ch, in_ch, k, k))
        tensors[f"enc{i}.b"] = np.zeros(out_ch)
        in_ch = out_ch
    c_l, t_l, f_l = arch.bottleneck_shape
    d = arch.embedding_dim
    tensors["enc_fc.w"] = rng.normal(0.0, c_l ** -0.5, (d, c_l))
    tensors["enc_fc.b"] = np.zeros(d)
    grid = c_l * t_l * f_l
    for head in arch.heads:
        tensors[f"dec.{head}.fc.w"] = rng.normal(0.0, d ** -0.5, (grid, d))
        tensors[f"dec.{head}.fc.b"] = np.zeros(grid)
        for j, (cin, cout) in enumerate(arch.decoder_channels()):
            fan_in = cin * k * k
            tensors[f"dec.{head}.conv{j}.w"] = rng.normal(
                0.0, fan_in ** -0.5, (cout, cin, k, k)
            )
            tensors[f"dec.{head}.conv{j}.b"] = np.zeros(cout)
    return ModelParams(arch=arch, tensors=tensors, seed=seed)


# ---------------------------------------------------------------------------
# layer primitives (CHW tensors, stride-1 same-padding convs)
# ---------------------------------------------------------------------------

def _conv_forward(x, w, b):
    c_out = w.shape[0]
    k = w.shape[-1]
    pad = k // 2
    _, h, wd = x.shape
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    windows = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(1, 2))
    cols = np.ascontiguousarray(windows.transpose(1, 2, 0, 3, 4)).reshape(
        h * wd, -1
    )
    out = cols @ w.reshape(c_out, -1).T + b
    return np.ascontiguousarray(out.T).reshape(c_out, h, wd), cols


def _conv_backward(d_out, cols, w, in_shape):
    c_out = w.shape[0]
    k = w.shape[-1]
    pad = k // 2
    c_in, h, wd = in_shape
    d_flat = d_out.reshape(c_out, -1).T
    d_w = (d_flat.T @ cols).reshape(w.shape)
    d_b = d_flat.sum(axis=0)
    d_cols = (d_flat @ w.reshape(c_out, -1)).reshape(h, wd, c_in, k, k)
    d_xp = np.zeros((c_in, h + 2 * pad, wd + 2 * pad))
    for di in range(k):
        for dj in range(k):
            d_xp[:, di : di + h, dj : dj + wd] += d_cols[:, :, :, di, dj].transpose(
                2, 0, 1
            )
    return d_w, d_b, d_xp[:, pad : pad + h, pad : pad + wd]


def _maxpool_forward(x, p):
    if p == 1:
        return x, None
    c, h, wd = x.shape
    blocks = x.reshape(c, h // p, p, wd // p, p).transpose(0, 1, 3, 2, 4)
    blocks = blocks.reshape(c, h // p, wd // p, p * p)
    idx = blocks.argmax(axis=3)
    out = np.take_along_axis(blocks, idx[..., None], axis=3)[..., 0]
    return out, idx


def _maxpool_backward(d_out, idx, p, in_shape):
    if p == 1:
        return d_out
    c, h, wd = in_shape
    d_blocks = np.zeros((c, h // p, wd // p, p * p))
    np.put_along_axis(d_blocks, idx[..., None], d_out[..., None], axis=3)
    return (
        d_blocks.reshape(c, h // p, wd // p, p, p)
        .transpose(0, 1, 3, 2, 4)
        .reshape(c, h, wd)
    )


def _upsample(x, p):
    if p == 1:
        return x
    return np.repeat(np.repeat(x, p, axis=1), p, axis=2)


def _downsample_sum(d, p):
    if p == 1:
        return d
    c, h, wd = d.shape
    return d.reshape(c, h // p, p, wd // p, p).sum(axis=(2, 4))


# ---------------------------------------------------------------------------
# forward / backward
# ---------------------------------------------------------------------------

@dataclass
class ForwardCache:
    arch: ArchConfig
    enc_layers: list = field(default_factory=list)
    enc_out: np.ndarray | None = None
    feat: np.ndarray | None = None
    gmp_idx: np.ndarray | None = None
    embedding: np.ndarray | None = None
    dec: dict = field(default_factory=dict)


@dataclass
class ForwardResult:
    embedding: np.ndarray
    heads: dict[str, np.ndarray]
    cache: ForwardCache


def _input_array(arch: ArchConfig, input_map) -> np.ndarray:
    if isinstance(input_map, MagnitudeMap):
        if not input_map.normalized:
            raise ValueError("the predictor expects a normalized magnitude map")
        x = input_map.values
    else:
        x = np.asarray(input_map, dtype=np.float64)
    if x.shape != arch.input_shape:
        raise ValueError(f"input shape {x.shape} does not match arch {arch.input_shape}")
    return x


def _encode(params: ModelParams, x: np.ndarray, cache: ForwardCache):
    arch = params.arch
    a = x[None, :, :]
    for i in range(arch.depth):
        conv_out, cols = _conv_forward(
            a, params.tensors[f"enc{i}.w"], params.tensors[f"enc{i}.b"]
        )
        pooled, idx = _maxpool_forward(conv_out, arch.pool)
        cache.enc_layers.append((a.shape, cols, conv_out.shape, idx, pooled))
        a = np.maximum(pooled, 0.0)
    cache.enc_out = a
    flat = a.reshape(a.shape[0], -1)
    gmp_idx = flat.argmax(axis=1)
    feat = flat[np.arange(flat.shape[0]), gmp_idx]
    cache.feat = feat
    cache.gmp_idx = gmp_idx
    z = params.tensors["enc_fc.w"] @ feat + params.tensors["enc_fc.b"]
    cache.embedding = z
    return z


def _decode_head(params: ModelParams, head: str, z: np.ndarray, cache: ForwardCache):
    arch = params.arch
    c_l, t_l, f_l = arch.bottleneck_shape
    fc_out = params.tensors[f"dec.{head}.fc.w"] @ z + params.tensors[f"dec.{head}.fc.b"]
    grid = fc_out.reshape(c_l, t_l, f_l)
    a = np.maximum(grid, 0.0)
    layers = []
    n_layers = arch.depth
    for j in range(n_layers):
        up = _upsample(a, arch.pool)
        conv_out, cols = _conv_forward(
            up, params.tensors[f"dec.{head}.conv{j}.w"],
            params.tensors[f"dec.{head}.conv{j}.b"],
        )
        layers.append((up.shape, cols, conv_out))
        a = np.maximum(conv_out, 0.0) if j < n_layers - 1 else conv_out
    cache.dec[head] = {"grid": grid, "layers": layers}
    return a[0]


def forward(params: ModelParams, input_map) -> ForwardResult:
    """Run encoder and every configured decoder head; returns raw head grids."""
    x = _input_array(params.arch, input_map)
    cache = ForwardCache(arch=params.arch)
    z = _encode(params, x, cache)
    heads = {h: _decode_head(params, h, z, cache) for h in params.arch.heads}
    return ForwardResult(embedding=z, heads=heads, cache=cache)


def embed(params: ModelParams, input_map) -> np.ndarray:
    """Encoder-only pass; equals forward(...).embedding without decoder work."""
    x = _input_array(params.arch, input_map)
    return _encode(params, x, ForwardCache(arch=params.arch))


def backward(
    params: ModelParams,
    cache: ForwardCache,
    head_grads: dict[str, np.ndarray],
) -> dict[str, np.ndarray]:
    """Backpropagate per-head loss gradients; returns gradients for every tensor."""
    arch = params.arch
    if cache.arch != arch:
        raise ValueError("cache does not belong to these parameters")
    unknown = set(head_grads) - set(arch.heads)
    if unknown:
        raise ValueError(f"gradients for heads not in the arch: {sorted(unknown)}")
    grads = {k: np.zeros_like(v) for k, v in params.tensors.items()}
    d_z = np.zeros_like(cache.embedding)

    for head, d_head in head_grads.items():
        hcache = cache.dec[head]
        d_a = np.asarray(d_head, dtype=np.float64)[None, :, :]
        n_layers = arch.depth
        for j in reversed(range(n_layers)):
            up_shape, cols, conv_out = hcache["layers"][j]
            d_conv = d_a if j == n_layers - 1 else d_a * (conv_out > 0)
            d_w, d_b, d_up = _conv_backward(
                d_conv, cols, params.tensors[f"dec.{head}.conv{j}.w"], up_shape
            )
            grads[f"dec.{head}.conv{j}.w"] += d_w
            grads[f"dec.{head}.conv{j}.b"] += d_b
            d_a = _downsample_sum(d_up, arch.pool)
        grid = hcache["grid"]
        d_fc = (d_a * (grid > 0)).ravel()
        grads[f"dec.{head}.fc.w"] += np.outer(d_fc, cache.embedding)
        grads[f"dec.{head}.fc.b"] += d_fc
        d_z += params.tensors[f"dec.{head}.fc.w"].T @ d_fc

    grads["enc_fc.w"] += np.outer(d_z, cache.feat)
    grads["enc_fc.b"] += d_z
    d_feat = params.tensors["enc_fc.w"].T @ d_z

    enc_out = cache.enc_out
    d_flat = np.zeros((enc_out.shape[0], enc_out.shape[1] * enc_out.shape[2]))
    d_flat[np.arange(d_flat.shape[0]), cache.gmp_idx] = d_feat
    d_a = d_flat.reshape(enc_out.shape)

    for i in reversed(range(arch.depth)):
        in_shape, cols, conv_shape, idx, pooled = cache.enc_layers[i]
        d_pooled = d_a * (pooled > 0)
        d_conv = _maxpool_backward(d_pooled, idx, arch.pool, conv_shape)
        d_w, d_b, d_a = _conv_backward(
            d_conv, cols, params.tensors[f"enc{i}.w"], in_shape
        )
        grads[f"enc{i}.w"] += d_w
        grads[f"enc{i}.b"] += d_b
    return grads


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

def _example_loss_and_grads(params, mag, target_if, weights, lambda_mag):
    result = forward(params, mag)
    phase_report = cosine_loss(result.heads[HEAD_PHASE], target_if.values, weights.values)
    head_grads = {HEAD_PHASE: phase_report.gradient}
    total = phase_report.value
    if HEAD_MAGNITUDE in params.arch.heads:
        mag_report = magnitude_mse(result.heads[HEAD_MAGNITUDE], mag.values)
        head_grads[HEAD_MAGNITUDE] = lambda_mag * mag_report.gradient
        total += lambda_mag * mag_report.value
    return total, backward(params, result.cache, head_grads)


def train(
    params: ModelParams,
    dataset: list[tuple],
    cfg: TrainConfig,
) -> tuple[ModelParams, np.ndarray]:
    """Plain SGD over (normalized magnitude, target IF, weight map) triples.

    Examples are visited in an epoch order shuffled from cfg.seed; the
    returned history holds one (batch-mean) loss per step. Raises if the
    loss ever goes non-finite.
    """
    if not dataset:
        raise ValueError("dataset is empty")
    params = params.copy()
    rng = np.random.default_rng(cfg.seed)
    order = rng.permutation(len(dataset))
    cursor = 0
    history = np.empty(cfg.steps)
    keys = sorted(params.tensors)
    for step in range(cfg.steps):
        batch_grads = {k: np.zeros_like(v) for k, v in params.tensors.items()}
        batch_loss = 0.0
        for _ in range(cfg.batch_size):
            if cursor == len(order):
                order = rng.permutation(len(dataset))
                cursor = 0
            mag, target_if, weights = dataset[order[cursor]]
            cursor += 1
            loss, grads = _example_loss_and_grads(
                params, mag, target_if, weights, cfg.lambda_mag
            )
            batch_loss += loss
            for k in keys:
                batch_grads[k] += grads[k]
        batch_loss /= cfg.batch_size
        if not np.isfinite(batch_loss):
            raise RuntimeError(f"training diverged: non-finite loss at step {step}")
        history[step] = batch_loss
        scale = cfg.learning_rate / cfg.batch_size
        for k in keys:
            params.tensors[k] -= scale * batch_grads[k]
    return params, history


# ---------------------------------------------------------------------------
# linear probe
# ---------------------------------------------------------------------------

@dataclass
class ProbeModel:
    weights: np.ndarray
    bias: np.ndarray
    classes: np.ndarray
    mean: np.ndarray
    scale: np.ndarray

    def predict(self, x: np.ndarray) -> np.ndarray:
        z = (np.asarray(x, dtype=np.float64) - self.mean) / self.scale
        return self.classes[np.argmax(z @ self.weights.T + self.bias, axis=1)]

    def accuracy(self, x: np.ndarray, y) -> float:
        return float(np.mean(self.predict(x) == np.asarray(y)))


def fit_linear_probe(
    x,
    y,
    learning_rate: float = 0.5,
    max_iter: int = 5000,
    tol: float = 1e-8,
) -> ProbeModel:
    """Multinomial logistic regression by full-batch gradient descent.

    Features are standardized with training statistics; iterations stop when
    the cross-entropy improvement drops below `tol`.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y)
    if x.ndim != 2 or x.shape[0] != y.shape[0]:
        raise ValueError("need matching 2-D features and 1-D labels")
    classes = np.unique(y)
    if classes.size < 2:
        raise ValueError("linear probe needs at least 2 classes")
    mean = x.mean(axis=0)
    scale = x.std(axis=0)
    scale[scale < 1e-12] = 1.0
    xs = (x - mean) / scale
    y_idx = np.searchsorted(classes, y)
    n, d = xs.shape
    k = classes.size
    onehot = np.zeros((n, k))
    onehot[np.arange(n), y_idx] = 1.0
    w = np.zeros((k, d))
    b = np.zeros(k)
    prev = np.inf
    for _ in range(max_iter):
        logits = xs @ w.T + b
        logits -= logits.max(axis=1, keepdims=True)
        expl = np.exp(logits)
        probs = expl / expl.sum(axis=1, keepdims=True)
        loss = float(-np.mean(np.log(probs[np.arange(n), y_idx] + 1e-300)))
        g = (probs - onehot) / n
        w -= learning_rate * (g.T @ xs)
        b -= learning_rate * g.sum(axis=0)
        if abs(prev - loss) < tol:
            break
        prev = loss
    return ProbeModel(weights=w, bias=b, classes=classes, mean=mean, scale=scale)


def linear_probe(train_embeddings, train_labels, test_embeddings, test_labels) -> float:
    """Fit a softmax layer on frozen embeddings and return the test accuracy."""
    probe = fit_linear_probe(train_embeddings, train_labels)
    return probe.accuracy(test_embeddings, test_labels)


# ---------------------------------------------------------------------------
# checkpoint container
# ---------------------------------------------------------------------------

def save_checkpoint(path, params: ModelParams, extra: dict | None = None) -> None:
    """Write a versioned binary checkpoint with explicit shapes and byte order.

    Layout: 8-byte magic, <u4 version, <u8 JSON header length, JSON header,
    then each tensor's float64 little-endian C-order payload in header order.
    The same parameters always serialize to identical bytes.
    """
    names = sorted(params.tensors)
    header = {
        "arch": params.arch.to_dict(),
        "byte_order": "little",
        "dtype": "float64",
        "extra": extra or {},
        "seed": params.seed,
        "tensors": [
            {"name": n, "shape": list(params.tensors[n].shape)} for n in names
        ],
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", CHECKPOINT_VERSION))
        f.write(struct.pack("<Q", len(blob)))
        f.write(blob)
        for n in names:
            f.write(np.ascontiguousarray(params.tensors[n], dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[ModelParams, dict]:
    """Read a checkpoint back; round-trips parameters bit-exactly."""
    with open(path, "rb") as f:
        magic = f.read(8)
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"not a checkpoint file: bad magic {magic!r}")
        (version,) = struct.unpack("<I", f.read(4))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        (hlen,) = struct.unpack("<Q", f.read(8))
        header = json.loads(f.read(hlen).decode("utf-8"))
        tensors = {}
        for spec_entry in header["tensors"]:
            shape = tuple(spec_entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            buf = f.read(8 * count)
            if len(buf) != 8 * count:
                raise ValueError("truncated checkpoint payload")
            tensors[spec_entry["name"]] = np.frombuffer(buf, dtype="<f8").reshape(
                shape
            ).astype(np.float64)
        if f.read(1):
            raise ValueError("trailing bytes after checkpoint payload")
    arch = ArchConfig.from_dict(header["arch"])
    params = ModelParams(arch=arch, tensors=tensors, seed=int(header["seed"]))
    return params, header.get("extra", {})
