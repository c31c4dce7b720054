"""Reference architectures, the training protocol, metrics and checkpoints.

Four architectures are available:

``classical2d``   conv(2x2, stride 2, 4 filters) -> flatten -> linear
``qccnn2d``       quantum conv(2x2, stride 2, one 4-qubit circuit per channel) -> flatten -> linear
``classical3d``   three conv/BN/ReLU/pool/dropout(0.2) stages (5^3/2, 2^3/1, 2^3/1 with
                  2, 4, 8 filters), then conv(2^3, 64 filters, 8 groups) -> BN ->
                  dropout(0.5) -> flatten -> linear
``qccnn3d``       as ``classical3d`` with the fourth conv replaced by a quantum conv of
                  eight 8-qubit circuits (angle encoding, strongly entangling layers)

The three pooling layers of the 3D stack need inputs of at least 47 voxels
per axis. For smaller volumes ``pools="auto"`` drops pooling stages from the
front until the stack fits; the choice is recorded with the model.
"""

import csv
import io
import math
import struct
import time
import zlib
from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import config as flat
from . import data as qdata
from . import nn, qfilter
from .errors import ConfigurationError, FormatError, UnsupportedVersionError, UsageError
from .qconv import QuantumConv, QuantumConvSpec

ARCHITECTURES = ("classical2d", "qccnn2d", "classical3d", "qccnn3d")
_ARCH_DEFAULTS = {
    "qccnn2d": ("higher-order", "basic", 1),
    "qccnn3d": ("angle", "strong", 2),
}
POOL_CANDIDATES = ((True, True, True), (False, True, True), (False, False, True), (False, False, False))


@dataclass(frozen=True)
class ArchitectureSpec:
    kind: str
    encoding: str | None = None
    ansatz: str | None = None
    n_layers: int | None = None
    threshold: float = 0.0
    # 3D only: which of the three pooling stages are present; None = auto
    pools: tuple | None = None
    qconv_stride: int = 1

    def __post_init__(self):
        if self.kind not in ARCHITECTURES:
            raise ConfigurationError(f"unknown architecture {self.kind!r}; expected one of {ARCHITECTURES}")
        if self.kind in _ARCH_DEFAULTS:
            enc, ans, layers = _ARCH_DEFAULTS[self.kind]
            object.__setattr__(self, "encoding", self.encoding or enc)
            object.__setattr__(self, "ansatz", self.ansatz or ans)
            object.__setattr__(self, "n_layers", int(self.n_layers or layers))
            qfilter.Encoding(self.encoding, self.threshold)
            qfilter.Ansatz(self.ansatz, self.n_layers)
        if self.pools is not None:
            pools = tuple(bool(p) for p in self.pools)
            if len(pools) != 3:
                raise ConfigurationError("pools must list three stages")
            object.__setattr__(self, "pools", pools)

    @property
    def dims(self):
        return 2 if self.kind.endswith("2d") else 3

    @property
    def quantum(self):
        return self.kind.startswith("qccnn")

    def filter_spec(self):
        n = 4 if self.dims == 2 else 8
        return qfilter.FilterSpec(
            n, qfilter.Encoding(self.encoding, self.threshold), qfilter.Ansatz(self.ansatz, self.n_layers)
        )

    def label(self):
        if not self.quantum:
            return self.kind
        return f"{self.kind}({self.encoding},{self.ansatz}x{self.n_layers})"


class Model:
    """A ``Sequential`` network plus the metadata needed to rebuild it."""

    def __init__(self, arch, input_shape, n_classes, net, dropout_rng):
        self.arch = arch
        self.input_shape = tuple(input_shape)
        self.n_classes = n_classes
        self.net = net
        self.dropout_rng = dropout_rng

    def forward(self, x, training=False):
        return self.net.forward(x, training)

    def backward(self, grad):
        return self.net.backward(grad)

    def named_params(self):
        return self.net.named_params()

    def named_grads(self):
        return self.net.named_grads()

    def param_count(self):
        return self.net.param_count()

    def quantum_layers(self):
        return [layer for layer in self.net if isinstance(layer, QuantumConv)]

    def set_debug_range(self, enabled=True):
        for layer in self.quantum_layers():
            layer.check_range = enabled

    def set_workers(self, workers):
        for layer in self.quantum_layers():
            layer.workers = workers

    def batchnorms(self):
        return [(i, layer) for i, layer in enumerate(self.net) if isinstance(layer, nn.BatchNorm)]

    def layer_table(self):
        """Rows of (index, description, output shape, parameter count)."""
        rows = []
        shape = self.input_shape
        for i, layer in enumerate(self.net):
            shape = layer.output_shape(shape)
            rows.append((i, repr(layer), shape, layer.param_count()))
        return rows


def _fit_check(layers, input_shape):
    shape = tuple(input_shape)
    for i, layer in enumerate(layers):
        try:
            shape = layer.output_shape(shape)
        except ConfigurationError as exc:
            raise ConfigurationError(f"layer {i} ({layer!r}) rejects input shape {shape}: {exc}") from None
        if any(s < 1 for s in shape):
            raise ConfigurationError(f"layer {i} ({layer!r}) produces empty output {shape}")
    return shape


def _stack_3d(arch, channels, n_classes, pools, init_rng, dropout_rng, workers):
    layers = []
    c = channels
    for stage, (k, s, n_out) in enumerate(((5, 2, 2), (2, 1, 4), (2, 1, 8))):
        layers += [nn.Conv(3, c, n_out, k, s, rng=init_rng), nn.BatchNorm(n_out), nn.ReLU()]
        if pools[stage]:
            layers.append(nn.MaxPool(3, 2))
        layers.append(nn.Dropout(0.2, dropout_rng))
        c = n_out
    if arch.quantum:
        spec = QuantumConvSpec(3, 2, arch.qconv_stride, c, arch.filter_spec())
        layers.append(QuantumConv(spec, rng=init_rng, workers=workers))
        c = spec.out_channels
    else:
        layers.append(nn.Conv(3, c, 64, 2, arch.qconv_stride, groups=8, rng=init_rng))
        c = 64
    layers += [nn.BatchNorm(c), nn.Dropout(0.5, dropout_rng), nn.Flatten()]
    return layers


def resolve_pools(arch, input_shape):
    """Pooling stages for a 3D architecture at the given input shape."""
    if arch.pools is not None:
        return arch.pools
    probe = replace(arch, kind="classical3d")
    rng = np.random.default_rng(0)
    for pools in POOL_CANDIDATES:
        layers = _stack_3d(probe, input_shape[0], 2, pools, rng, rng, 1)
        try:
            _fit_check(layers, input_shape)
            return pools
        except ConfigurationError:
            continue
    raise ConfigurationError(f"3D architecture cannot process inputs of shape {tuple(input_shape)}")


def build(arch, input_shape, n_classes, seed, workers=1):
    """Construct a seeded model. Raises ConfigurationError naming the failing layer."""
    input_shape = tuple(int(s) for s in input_shape)
    if len(input_shape) != arch.dims + 1:
        raise ConfigurationError(f"{arch.kind} expects (C, {arch.dims} spatial) inputs, got {input_shape}")
    if n_classes < 2:
        raise ConfigurationError("need at least two classes")
    init_ss, drop_ss = np.random.SeedSequence(seed).spawn(2)
    init_rng = np.random.default_rng(init_ss)
    dropout_rng = np.random.default_rng(drop_ss)
    channels = input_shape[0]

    if arch.dims == 2:
        if arch.quantum:
            spec = QuantumConvSpec(2, 2, 2, channels, arch.filter_spec())
            first = QuantumConv(spec, rng=init_rng, workers=workers)
            first.input_grad = False
        else:
            first = nn.Conv(2, channels, 4 * channels, 2, 2, rng=init_rng)
        layers = [first, nn.Flatten()]
    else:
        pools = resolve_pools(arch, input_shape)
        arch = replace(arch, pools=pools)
        layers = _stack_3d(arch, channels, n_classes, pools, init_rng, dropout_rng, workers)

    features = _fit_check(layers, input_shape)
    layers.append(nn.Linear(features[0], n_classes, rng=init_rng))
    return Model(arch, input_shape, n_classes, nn.Sequential(layers), dropout_rng)


# ---------------------------------------------------------------------------
# configuration


def _parse_bool(text):
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off", ""):
        return False
    raise ConfigurationError(f"not a boolean: {text!r}")


def _parse_seeds(text):
    if isinstance(text, (tuple, list)):
        return tuple(int(s) for s in text)
    return tuple(int(s) for s in str(text).split(",") if s.strip())


def _parse_pools(text):
    if text is None or isinstance(text, tuple):
        return text
    t = str(text).strip().lower()
    if t in ("", "auto"):
        return None
    return tuple(_parse_bool(p) for p in t.split(","))


def _opt(conv):
    def parse(text):
        if text is None or (isinstance(text, str) and text.strip() == ""):
            return None
        return conv(text)

    return parse


@dataclass
class TrainConfig:
    arch: str = "qccnn2d"
    encoding: str | None = None
    ansatz: str | None = None
    layers: int | None = None
    threshold_t: float = 0.0
    pools: tuple | None = None
    data: str | None = None
    val_data: str | None = None
    train_count: int | None = None
    val_count: int | None = None
    epochs: int = 20
    batch: int | None = None
    lr: float = 0.001
    seeds: tuple = (0, 1, 2, 3, 4)
    workers: int = 1
    out: str = "runs"
    debug_range: bool = False

    _PARSERS = {
        "arch": str,
        "encoding": _opt(str),
        "ansatz": _opt(str),
        "layers": _opt(int),
        "threshold_t": float,
        "pools": _parse_pools,
        "data": _opt(str),
        "val_data": _opt(str),
        "train_count": _opt(int),
        "val_count": _opt(int),
        "epochs": int,
        "batch": _opt(int),
        "lr": float,
        "seeds": _parse_seeds,
        "workers": int,
        "out": str,
        "debug_range": _parse_bool,
    }

    def __post_init__(self):
        self.seeds = _parse_seeds(self.seeds)
        self.pools = _parse_pools(self.pools)
        if self.epochs < 1:
            raise ConfigurationError("epochs must be >= 1")
        if self.batch is not None and self.batch < 1:
            raise ConfigurationError("batch must be >= 1")
        if not self.seeds:
            raise ConfigurationError("need at least one seed")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigurationError("seeds must be distinct")
        if self.workers < 1:
            raise ConfigurationError("workers must be >= 1")
        if not (self.lr >= 0.0 and math.isfinite(self.lr)):
            raise ConfigurationError("learning rate must be finite and non-negative")

    @classmethod
    def keys(cls):
        return tuple(cls._PARSERS)

    @classmethod
    def from_flat(cls, mapping):
        unknown = set(mapping) - set(cls._PARSERS)
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        kwargs = {}
        for key, value in mapping.items():
            try:
                kwargs[key] = cls._PARSERS[key](value)
            except (TypeError, ValueError) as exc:
                raise ConfigurationError(f"bad value for {key!r}: {value!r} ({exc})") from None
        return cls(**kwargs)

    def to_flat(self):
        out = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if f.name == "pools":
                value = "auto" if value is None else ",".join(str(int(p)) for p in value)
            elif isinstance(value, bool):
                value = int(value)
            out[f.name] = value
        return out

    def arch_spec(self):
        return ArchitectureSpec(
            self.arch, self.encoding, self.ansatz, self.layers, self.threshold_t, self.pools
        )

    def batch_for(self, dims, n_classes):
        """Configured batch size, else 64 for 3D, 8 for binary 2D, 16 for multi-class 2D."""
        if self.batch is not None:
            return self.batch
        if dims == 3:
            return 64
        return 8 if n_classes == 2 else 16


# ---------------------------------------------------------------------------
# training


@dataclass(frozen=True)
class MetricsRow:
    seed: int
    epoch: int
    split: str
    loss: float
    accuracy: float


@dataclass
class TrainResult:
    rows: list
    optimizer: nn.Adam
    divergence: str | None = None


def evaluate(model, dataset, batch=256):
    """Mean cross-entropy and accuracy in eval mode."""
    n = len(dataset)
    if n == 0:
        raise UsageError("cannot evaluate an empty split")
    if tuple(dataset.item_shape) != model.input_shape:
        raise ConfigurationError(f"dataset items {dataset.item_shape} do not match model input {model.input_shape}")
    total = 0.0
    correct = 0
    for a in range(0, n, batch):
        x = dataset.images[a : a + batch]
        y = dataset.labels[a : a + batch].astype(np.int64)
        logits = model.forward(x, training=False)
        total += float(np.sum(nn.cross_entropy_items(logits, y)))
        correct += int(np.sum(nn.predict(logits) == y))
    return total / n, correct / n


def _snapshot(model, optimizer):
    return (
        {k: v.copy() for k, v in model.named_params().items()},
        [(bn.running_mean.copy(), bn.running_var.copy(), bn.tracked) for _, bn in model.batchnorms()],
        optimizer.t,
        {k: v.copy() for k, v in optimizer.m.items()},
        {k: v.copy() for k, v in optimizer.v.items()},
    )


def _restore(model, optimizer, snap):
    params, bns, t, m, v = snap
    for k, p in model.named_params().items():
        p[...] = params[k]
    for (_, bn), (rm, rv, tracked) in zip(model.batchnorms(), bns):
        bn.running_mean, bn.running_var, bn.tracked = rm.copy(), rv.copy(), tracked
    optimizer.t, optimizer.m, optimizer.v = t, m, v


def train_one(model, train_set, val_set, config, seed, log=None):
    """Train ``model`` per the protocol; returns per-epoch metric rows.

    Each epoch is one pass in a seeded shuffled order (last partial batch
    kept), followed by an eval-mode pass over the train and validation
    splits. A non-finite loss stops training, restores the state at the end
    of the last complete epoch and is reported in ``divergence``.
    """
    if len(train_set) == 0:
        raise UsageError("empty training split")
    batch = config.batch_for(model.arch.dims, model.n_classes)
    shuffle_rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(3)[2])
    optimizer = nn.Adam(lr=config.lr)
    model.set_debug_range(config.debug_range)
    params = model.named_params()
    rows = []
    good = _snapshot(model, optimizer)
    n = len(train_set)
    for epoch in range(1, config.epochs + 1):
        order = shuffle_rng.permutation(n)
        for b, a in enumerate(range(0, n, batch)):
            idx = order[a : a + batch]
            x = train_set.images[idx]
            y = train_set.labels[idx].astype(np.int64)
            logits = model.forward(x, training=True)
            loss, grad = nn.softmax_cross_entropy(logits, y)
            if not math.isfinite(loss):
                _restore(model, optimizer, good)
                msg = f"non-finite loss at epoch {epoch}, batch {b}; restored state after epoch {epoch - 1}"
                return TrainResult(rows, optimizer, msg)
            model.backward(grad)
            optimizer.step(params, model.named_grads())
        for split, ds in (("train", train_set), ("val", val_set)):
            if ds is None or len(ds) == 0:
                continue
            loss, acc = evaluate(model, ds)
            rows.append(MetricsRow(seed, epoch, split, loss, acc))
            if log:
                log(f"seed {seed} epoch {epoch} {split}: loss {loss:.4f} acc {acc:.4f}")
        good = _snapshot(model, optimizer)
    return TrainResult(rows, optimizer)


# ---------------------------------------------------------------------------
# metrics files

METRICS_HEADER = ("seed", "epoch", "split", "loss", "accuracy")
AGGREGATE_HEADER = ("epoch", "split", "metric", "mean", "std")


@dataclass(frozen=True)
class AggregateRow:
    epoch: int
    split: str
    metric: str
    mean: float
    std: float


def metrics_csv(rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRICS_HEADER)
    for r in rows:
        w.writerow([r.seed, r.epoch, r.split, repr(float(r.loss)), repr(float(r.accuracy))])
    return buf.getvalue()


def read_metrics_csv(text):
    reader = csv.reader(io.StringIO(text))
    header = tuple(next(reader))
    if header != METRICS_HEADER:
        raise FormatError(f"unexpected metrics header {header}")
    return [MetricsRow(int(s), int(e), sp, float(lo), float(ac)) for s, e, sp, lo, ac in reader]


def aggregate(rows):
    """Per (epoch, split, metric) mean and population std across seeds.

    Uses correctly rounded sums, so the result does not depend on seed order.
    """
    groups = {}
    for r in rows:
        for metric in ("loss", "accuracy"):
            groups.setdefault((r.epoch, r.split, metric), []).append(getattr(r, metric))
    split_order = {"train": 0, "val": 1}
    metric_order = {"loss": 0, "accuracy": 1}
    out = []
    for key in sorted(groups, key=lambda k: (k[0], split_order.get(k[1], 2), k[1], metric_order[k[2]])):
        values = groups[key]
        mean = math.fsum(values) / len(values)
        std = math.sqrt(math.fsum((v - mean) ** 2 for v in values) / len(values))
        out.append(AggregateRow(key[0], key[1], key[2], mean, std))
    return out


def aggregate_csv(agg):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(AGGREGATE_HEADER)
    for a in agg:
        w.writerow([a.epoch, a.split, a.metric, repr(float(a.mean)), repr(float(a.std))])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# checkpoints
#
# Layout (little-endian): magic b"QCK1", uint16 version, uint16 reserved,
# uint32 config length + UTF-8 flat config text, uint32 block count, then
# blocks of (uint16 name length, name, uint8 rank, uint32 dims, float64 data),
# and finally a uint32 CRC-32 of everything before it.

CKPT_MAGIC = b"QCK1"
CKPT_VERSION = 1


def _model_echo(model):
    arch = model.arch
    return {
        "model.arch": arch.kind,
        "model.encoding": arch.encoding or "",
        "model.ansatz": arch.ansatz or "",
        "model.layers": arch.n_layers or "",
        "model.threshold": repr(float(arch.threshold)),
        "model.pools": "" if arch.pools is None else ",".join(str(int(p)) for p in arch.pools),
        "model.qconv_stride": arch.qconv_stride,
        "model.input_shape": model.input_shape,
        "model.n_classes": model.n_classes,
    }


def _arch_from_echo(echo):
    def get(key):
        return echo.get(key, "")

    return ArchitectureSpec(
        get("model.arch"),
        get("model.encoding") or None,
        get("model.ansatz") or None,
        int(get("model.layers")) if get("model.layers") else None,
        float(get("model.threshold") or 0.0),
        _parse_pools(get("model.pools")),
        int(get("model.qconv_stride") or 1),
    )


def checkpoint_bytes(model, optimizer=None, extra=None):
    echo = _model_echo(model)
    for k, v in (extra or {}).items():
        echo[k] = v
    text = flat.format_flat(echo).encode("utf-8")
    blocks = [(f"param/{k}", v) for k, v in model.named_params().items()]
    for i, bn in model.batchnorms():
        blocks += [
            (f"bn/{i}.running_mean", bn.running_mean),
            (f"bn/{i}.running_var", bn.running_var),
            (f"bn/{i}.tracked", np.array(float(bn.tracked))),
        ]
    if optimizer is not None:
        blocks.append(
            ("adam/hyper", np.array([optimizer.lr, optimizer.beta1, optimizer.beta2, optimizer.eps, optimizer.t]))
        )
        for k in sorted(optimizer.m):
            blocks += [(f"adam/m/{k}", optimizer.m[k]), (f"adam/v/{k}", optimizer.v[k])]
    parts = [CKPT_MAGIC, struct.pack("<HHI", CKPT_VERSION, 0, len(text)), text, struct.pack("<I", len(blocks))]
    for name, arr in blocks:
        arr = np.asarray(arr, dtype="<f8")
        raw = name.encode("utf-8")
        parts += [struct.pack("<H", len(raw)), raw, struct.pack("<B", arr.ndim)]
        parts += [struct.pack(f"<{arr.ndim}I", *arr.shape), arr.tobytes()]
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def save_checkpoint(path, model, optimizer=None, extra=None):
    qdata.atomic_write(path, checkpoint_bytes(model, optimizer, extra))


def parse_checkpoint(buf):
    """Returns ``(echo dict, {block name: array})``."""
    buf = bytes(buf)
    if len(buf) < 16:
        raise FormatError("truncated checkpoint", len(buf))
    if buf[:4] != CKPT_MAGIC:
        raise FormatError(f"bad checkpoint magic {buf[:4]!r}", 0)
    version, _, text_len = struct.unpack_from("<HHI", buf, 4)
    if version != CKPT_VERSION:
        raise UnsupportedVersionError(f"unsupported checkpoint version {version}", 4)
    body, (crc,) = buf[:-4], struct.unpack_from("<I", buf, len(buf) - 4)
    if zlib.crc32(body) != crc:
        raise FormatError("checkpoint checksum mismatch", len(buf) - 4)
    off = 12
    try:
        echo = flat.parse_flat(body[off : off + text_len].decode("utf-8"))
        off += text_len
        (count,) = struct.unpack_from("<I", body, off)
        off += 4
        blocks = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", body, off)
            off += 2
            name = body[off : off + nlen].decode("utf-8")
            off += nlen
            (rank,) = struct.unpack_from("<B", body, off)
            off += 1
            shape = struct.unpack_from(f"<{rank}I", body, off)
            off += 4 * rank
            size = int(np.prod(shape))
            if off + 8 * size > len(body):
                raise FormatError(f"block {name!r} overruns file", off)
            blocks[name] = np.frombuffer(body, dtype="<f8", count=size, offset=off).reshape(shape).copy()
            off += 8 * size
    except (struct.error, UnicodeDecodeError, ConfigurationError) as exc:
        raise FormatError(f"malformed checkpoint: {exc}", off) from None
    if off != len(body):
        raise FormatError("trailing bytes in checkpoint", off)
    return echo, blocks


def load_checkpoint(path, workers=1):
    """Rebuild the model (and optimizer, if stored). Returns ``(model, optimizer, echo)``."""
    with open(path, "rb") as fh:
        echo, blocks = parse_checkpoint(fh.read())
    try:
        arch = _arch_from_echo(echo)
        input_shape = tuple(int(s) for s in echo["model.input_shape"].split(","))
        n_classes = int(echo["model.n_classes"])
    except (KeyError, ValueError) as exc:
        raise FormatError(f"checkpoint config incomplete: {exc}") from None
    model = build(arch, input_shape, n_classes, seed=0, workers=workers)
    for name, p in model.named_params().items():
        key = f"param/{name}"
        if key not in blocks or blocks[key].shape != p.shape:
            raise FormatError(f"checkpoint block {key!r} missing or misshapen")
        p[...] = blocks[key]
    for i, bn in model.batchnorms():
        bn.running_mean = blocks[f"bn/{i}.running_mean"].copy()
        bn.running_var = blocks[f"bn/{i}.running_var"].copy()
        bn.tracked = bool(blocks[f"bn/{i}.tracked"])
    optimizer = None
    if "adam/hyper" in blocks:
        lr, b1, b2, eps, t = blocks["adam/hyper"]
        optimizer = nn.Adam(lr, b1, b2, eps)
        optimizer.t = int(t)
        for name in model.named_params():
            if f"adam/m/{name}" in blocks:
                optimizer.m[name] = blocks[f"adam/m/{name}"]
                optimizer.v[name] = blocks[f"adam/v/{name}"]
    return model, optimizer, echo


# ---------------------------------------------------------------------------
# experiments


@dataclass
class ExperimentResult:
    rows: list
    aggregate: list
    manifest: dict
    divergences: dict = field(default_factory=dict)


def load_splits(config):
    """Load and split the configured data. Returns ``(train, val)``, not normalised."""
    if not config.data:
        raise UsageError("no dataset path given")
    full = qdata.load(config.data)
    if config.val_data:
        val = qdata.load(config.val_data)
        train = full
        if config.train_count is not None:
            train = full.subset(slice(0, config.train_count))
        if config.val_count is not None:
            val = val.subset(slice(0, config.val_count))
        return train, val
    if config.train_count is None and config.val_count is None:
        split = qdata.default_split(len(full))
    else:
        train_n = config.train_count if config.train_count is not None else len(full) - config.val_count
        val_n = config.val_count if config.val_count is not None else len(full) - train_n
        split = qdata.SplitSpec(train_n, val_n)
    return split.apply(full)


def run_experiment(config, train=None, val=None, log=None):
    """Train one network per seed, write metrics, aggregates, checkpoints and a manifest."""
    import os
    import platform

    from . import __version__

    started = time.perf_counter()
    if train is None:
        train, val = load_splits(config)
    if val is None or len(val) == 0:
        raise UsageError("validation split is empty")
    if train.item_shape != val.item_shape:
        raise ConfigurationError("train and validation items differ in shape")
    train, stats = qdata.normalize(train)
    val = qdata.apply_normalization(val, stats)
    arch = config.arch_spec()
    n_classes = max(train.n_classes, val.n_classes)
    os.makedirs(config.out, exist_ok=True)

    all_rows = []
    divergences = {}
    resolved = None
    for seed in config.seeds:
        model = build(arch, train.item_shape, n_classes, seed, workers=config.workers)
        resolved = model.arch
        result = train_one(model, train, val, config, seed, log=log)
        all_rows += result.rows
        if result.divergence:
            divergences[seed] = result.divergence
        qdata.atomic_write(os.path.join(config.out, f"metrics_seed{seed}.csv"), metrics_csv(result.rows))
        extra = {f"train.{k}": v for k, v in config.to_flat().items()}
        extra.update({"norm.mean": repr(stats.mean), "norm.std": repr(stats.std), "seed": seed})
        save_checkpoint(os.path.join(config.out, f"checkpoint_seed{seed}.qck"), model, result.optimizer, extra)

    agg = aggregate(all_rows)
    qdata.atomic_write(os.path.join(config.out, "metrics.csv"), metrics_csv(all_rows))
    qdata.atomic_write(os.path.join(config.out, "aggregate.csv"), aggregate_csv(agg))
    manifest = {f"config.{k}": v for k, v in config.to_flat().items()}
    manifest.update(
        {
            "arch.resolved": resolved.label() if resolved else arch.label(),
            "arch.pools": "" if resolved is None or resolved.pools is None else ",".join(str(int(p)) for p in resolved.pools),
            "data.train_items": len(train),
            "data.val_items": len(val),
            "data.item_shape": train.item_shape,
            "data.n_classes": n_classes,
            "norm.mean": repr(stats.mean),
            "norm.std": repr(stats.std),
            "version.qccnn": __version__,
            "version.numpy": np.__version__,
            "version.python": platform.python_version(),
            "divergences": ";".join(f"{s}:{m}" for s, m in divergences.items()),
            "wall_time_s": f"{time.perf_counter() - started:.3f}",
        }
    )
    qdata.atomic_write(os.path.join(config.out, "manifest.txt"), flat.format_flat(manifest))
    return ExperimentResult(all_rows, agg, manifest, divergences)


def parameter_audit(arch, input_shape, n_classes):
    """Per-layer parameter counts: list of (index, layer, output shape, count) plus the total."""
    model = build(arch, input_shape, n_classes, seed=0)
    rows = model.layer_table()
    return rows, sum(r[3] for r in rows)


__all__ = [
    "ArchitectureSpec",
    "Model",
    "TrainConfig",
    "MetricsRow",
    "build",
    "train_one",
    "evaluate",
    "run_experiment",
    "aggregate",
    "save_checkpoint",
    "load_checkpoint",
    "parameter_audit",
]
