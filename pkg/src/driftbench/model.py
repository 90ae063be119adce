"""Stacked-LSTM sequence classifier with a class-incrementally growable head."""

from __future__ import annotations

import copy
import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .numerics import ShapeError, Tensor, default_dtype, dropout, lstm_layer

GRID_LAYERS = (1, 2)
GRID_HIDDEN = (32, 64)
NEW_COLUMN_INIT = 0.05

MODEL_MAGIC = b"DBMD"
MODEL_VERSION = 1
_CONFIG_STRUCT = struct.Struct("<5I2fQ")


@dataclass(frozen=True)
class ModelConfig:
    n_features: int
    n_classes: int
    n_layers: int = 1
    hidden: int = 32
    n_steps: int = 0
    dropout_input: float = 0.2
    dropout_hidden: float = 0.5
    seed: int = 0
    off_grid: bool = False

    def __post_init__(self):
        if self.n_layers < 1 or self.hidden < 1 or self.n_features < 1 or self.n_classes < 1:
            raise ValueError(f"model dimensions must be positive: {self}")
        if not self.off_grid and (self.n_layers not in GRID_LAYERS or self.hidden not in GRID_HIDDEN):
            raise ValueError(
                f"(layers={self.n_layers}, hidden={self.hidden}) is off the {GRID_LAYERS}x{GRID_HIDDEN} "
                "grid; pass off_grid=True to override")
        for rate in (self.dropout_input, self.dropout_hidden):
            if not 0.0 <= rate < 1.0:
                raise ValueError(f"dropout rate must be in [0, 1), got {rate}")


def param_count(config: ModelConfig, n_classes: int | None = None) -> int:
    """Closed-form parameter count for ``config`` (head sized ``n_classes``)."""
    classes = config.n_classes if n_classes is None else n_classes
    size = config.hidden
    total = 0
    n_in = config.n_features
    for _ in range(config.n_layers):
        total += 4 * (size * (n_in + size) + size)
        n_in = size
    return total + size * classes + classes


class Model:
    """Parameters of the classifier plus its configuration.

    Parameter order (the checkpoint order) is, per layer, ``w_x [in, 4S]``,
    ``w_h [S, 4S]``, ``b [4S]``, then ``head_w [S, C]`` and ``head_b [C]``.
    """

    def __init__(self, config: ModelConfig, dtype=None):
        self.config = config
        dtype = np.dtype(dtype) if dtype is not None else default_dtype()
        rng = np.random.default_rng(config.seed)
        bound = 1.0 / np.sqrt(config.hidden)
        size = config.hidden
        self._params: list[Tensor] = []
        n_in = config.n_features
        for layer in range(config.n_layers):
            for name, shape in ((f"lstm{layer}.w_x", (n_in, 4 * size)),
                                (f"lstm{layer}.w_h", (size, 4 * size)),
                                (f"lstm{layer}.b", (4 * size,))):
                self._params.append(Tensor(rng.uniform(-bound, bound, shape), requires_grad=True,
                                           name=name, dtype=dtype))
            n_in = size
        self._params.append(Tensor(rng.uniform(-bound, bound, (size, config.n_classes)),
                                   requires_grad=True, name="head_w", dtype=dtype))
        self._params.append(Tensor(rng.uniform(-bound, bound, (config.n_classes,)),
                                   requires_grad=True, name="head_b", dtype=dtype))

    @property
    def dtype(self) -> np.dtype:
        return self._params[0].dtype

    @property
    def n_classes(self) -> int:
        return self._params[-1].shape[0]

    @property
    def head_w(self) -> Tensor:
        return self._params[-2]

    @property
    def head_b(self) -> Tensor:
        return self._params[-1]

    def layer(self, i: int) -> tuple[Tensor, Tensor, Tensor]:
        return tuple(self._params[3 * i: 3 * i + 3])

    def parameters(self) -> list[Tensor]:
        return list(self._params)

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        return [(p.name, p) for p in self._params]

    def param_count(self) -> int:
        return sum(p.size for p in self._params)

    def snapshot(self) -> dict[str, np.ndarray]:
        return {p.name: p.data.copy() for p in self._params}

    def load_snapshot(self, snap: dict[str, np.ndarray]) -> None:
        for p in self._params:
            p.data = np.array(snap[p.name], dtype=p.dtype)

    def copy(self) -> "Model":
        return copy.deepcopy(self)

    def astype(self, dtype) -> "Model":
        out = self.copy()
        for p in out._params:
            p.data = p.data.astype(dtype)
        return out

    def flat_parameters(self) -> np.ndarray:
        return np.concatenate([p.data.reshape(-1) for p in self._params])


def _input(model: Model, batch) -> Tensor:
    x = batch if isinstance(batch, Tensor) else Tensor(batch, dtype=model.dtype)
    if x.ndim != 3 or x.shape[2] != model.config.n_features:
        raise ShapeError(f"batch shape {x.shape} does not match [B, T, {model.config.n_features}]")
    if x.dtype != model.dtype:
        x = Tensor(x.data, dtype=model.dtype)
    return x


def _top_hidden(model: Model, x: Tensor, train_mode: bool, rng) -> Tensor:
    cfg = model.config
    if train_mode:
        x = dropout(x, cfg.dropout_input, rng)
    hs = x
    for i in range(cfg.n_layers):
        if i > 0 and train_mode:
            hs = dropout(hs, cfg.dropout_hidden, rng)
        hs = lstm_layer(hs, *model.layer(i))
    return hs[:, -1, :]


def forward(model: Model, batch, train_mode: bool = False, rng: np.random.Generator | None = None) -> Tensor:
    """Logits ``[B, C_current]`` from the final top-layer hidden state.

    Dropout (input 0.2, hidden 0.5, inverted) is applied only in train mode,
    where ``rng`` is required.
    """
    if train_mode and rng is None:
        raise ValueError("train_mode forward needs an rng for dropout")
    x = _input(model, batch)
    h = _top_hidden(model, x, train_mode, rng)
    if train_mode:
        h = dropout(h, model.config.dropout_hidden, rng)
    return h @ model.head_w + model.head_b


def extract_features(model: Model, batch) -> Tensor:
    """Final top-layer hidden state ``[B, S]`` with dropout disabled."""
    return _top_hidden(model, _input(model, batch), False, None)


def expand_head(model: Model, n_new_classes: int, seed: int) -> Model:
    """Append ``n_new_classes`` head columns in place, keeping old ones bit-exact."""
    if n_new_classes < 1:
        raise ValueError(f"n_new_classes must be >= 1, got {n_new_classes}")
    rng = np.random.default_rng(seed)
    size = model.config.hidden
    new_w = rng.uniform(-NEW_COLUMN_INIT, NEW_COLUMN_INIT, (size, n_new_classes)).astype(model.dtype)
    new_b = rng.uniform(-NEW_COLUMN_INIT, NEW_COLUMN_INIT, (n_new_classes,)).astype(model.dtype)
    model.head_w.data = np.concatenate([model.head_w.data, new_w], axis=1)
    model.head_b.data = np.concatenate([model.head_b.data, new_b])
    return model


def save_model(model: Model, path) -> None:
    """Write the DBMD checkpoint: header, config block, f32 LE parameters."""
    cfg = model.config
    parts = [MODEL_MAGIC, struct.pack("<I", MODEL_VERSION),
             _CONFIG_STRUCT.pack(cfg.n_layers, cfg.hidden, cfg.n_steps, cfg.n_features, model.n_classes,
                                 cfg.dropout_input, cfg.dropout_hidden, cfg.seed)]
    parts += [np.ascontiguousarray(p.data, dtype="<f4").tobytes() for p in model.parameters()]
    Path(path).write_bytes(b"".join(parts))


def load_model(path) -> Model:
    from .data import FormatError

    blob = Path(path).read_bytes()
    if blob[:4] != MODEL_MAGIC:
        raise FormatError("bad model magic", 0)
    if len(blob) < 8 + _CONFIG_STRUCT.size:
        raise FormatError("truncated model header", len(blob))
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != MODEL_VERSION:
        raise FormatError(f"unsupported model version {version}", 4)
    layers, hidden, steps, feats, classes, d_in, d_hid, seed = _CONFIG_STRUCT.unpack_from(blob, 8)
    cfg = ModelConfig(n_features=feats, n_classes=classes, n_layers=layers, hidden=hidden, n_steps=steps,
                      dropout_input=round(d_in, 6), dropout_hidden=round(d_hid, 6),
                      seed=seed, off_grid=True)
    model = Model(cfg, dtype=np.float32)
    offset = 8 + _CONFIG_STRUCT.size
    for p in model.parameters():
        n = p.size * 4
        if offset + n > len(blob):
            raise FormatError(f"truncated parameter {p.name}", offset)
        p.data = np.frombuffer(blob, dtype="<f4", count=p.size, offset=offset).reshape(p.shape).astype(np.float32)
        offset += n
    if offset != len(blob):
        raise FormatError("trailing bytes after parameters", offset)
    return model


def with_classes(config: ModelConfig, n_classes: int) -> ModelConfig:
    return replace(config, n_classes=n_classes)
