"""Network definitions: architecture specs, parameter stores, forward maps.

A model is three parameter stores (encoder, classifier, discriminator)
built from declarative layer lists. Forward passes run either on raw
arrays (evaluation) or through the autodiff tape (training); both paths
execute the same kernel calls in the same order.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .errors import BadMagicError, ShapeMismatchError, TruncatedFileError
from .optim import OptimizerState

LAYER_KINDS = ("conv2d", "maxpool2", "dense", "relu", "logsoftmax")

CHECKPOINT_TAG = b"aflac-ckpt-1"


@dataclass(frozen=True)
class Layer:
    kind: str
    size: tuple[int, ...] = ()

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ShapeMismatchError(f"unknown layer kind {self.kind!r}")


def conv2d(in_ch: int, out_ch: int, kernel: int) -> Layer:
    return Layer("conv2d", (in_ch, out_ch, kernel))


def maxpool2() -> Layer:
    return Layer("maxpool2")


def dense(n_in: int, n_out: int) -> Layer:
    return Layer("dense", (n_in, n_out))


def relu() -> Layer:
    return Layer("relu")


def logsoftmax() -> Layer:
    return Layer("logsoftmax")


@dataclass(frozen=True)
class ArchitectureSpec:
    """Ordered layer list; shapes are validated when a model is built."""

    layers: tuple[Layer, ...]

    def out_width(self) -> int:
        """Width of the last dense layer; the spec must contain one."""
        for layer in reversed(self.layers):
            if layer.kind == "dense":
                return layer.size[1]
        raise ShapeMismatchError("architecture has no dense layer to define its width")

    def in_width(self) -> int:
        for layer in self.layers:
            if layer.kind == "dense":
                return layer.size[0]
            if layer.kind == "conv2d":
                raise ShapeMismatchError("input width undefined before a conv layer")
        raise ShapeMismatchError("architecture has no dense layer to define its width")


def default_encoder_spec(in_ch: int = 1, hidden: int = 100) -> ArchitectureSpec:
    """Conv stack for 16x16 grayscale inputs (the rotated-digit benchmark)."""
    return ArchitectureSpec((
        conv2d(in_ch, 32, 3), relu(), maxpool2(),
        conv2d(32, 48, 3), relu(), maxpool2(),
        dense(48 * 2 * 2, hidden), relu(),
    ))


def default_classifier_spec(n_classes: int, hidden: int = 100) -> ArchitectureSpec:
    return ArchitectureSpec((dense(hidden, n_classes), logsoftmax()))


def default_discriminator_spec(n_domains: int, hidden: int = 100) -> ArchitectureSpec:
    return ArchitectureSpec((dense(hidden, 100), relu(), dense(100, n_domains), logsoftmax()))


class ParameterStore:
    """Named parameter arrays with frozen shapes."""

    def __init__(self, arrays: dict[str, np.ndarray]):
        self._arrays = dict(arrays)

    def __getitem__(self, name: str) -> np.ndarray:
        return self._arrays[name]

    def __iter__(self):
        return iter(self._arrays)

    def __len__(self) -> int:
        return len(self._arrays)

    def names(self) -> list[str]:
        return list(self._arrays)

    def items(self):
        return self._arrays.items()

    def replaced(self, updates: dict[str, np.ndarray]) -> "ParameterStore":
        out = dict(self._arrays)
        for name, arr in updates.items():
            if arr.shape != out[name].shape:
                raise ShapeMismatchError(
                    f"update for {name!r} has shape {arr.shape}, expected {out[name].shape}"
                )
            out[name] = arr
        return ParameterStore(out)

    def copy(self) -> "ParameterStore":
        return ParameterStore({k: v.copy() for k, v in self._arrays.items()})

    def allfinite(self) -> bool:
        return all(np.isfinite(v).all() for v in self._arrays.values())


def _init_store(spec: ArchitectureSpec, rng: np.random.Generator, dtype) -> ParameterStore:
    # uniform fan-in/fan-out scaling, biases zero
    arrays: dict[str, np.ndarray] = {}
    for i, layer in enumerate(spec.layers):
        if layer.kind == "conv2d":
            cin, cout, k = layer.size
            fan_in, fan_out = cin * k * k, cout * k * k
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            arrays[f"{i}.w"] = rng.uniform(-limit, limit, size=(cout, cin, k, k)).astype(dtype)
            arrays[f"{i}.b"] = np.zeros(cout, dtype=dtype)
        elif layer.kind == "dense":
            n_in, n_out = layer.size
            limit = np.sqrt(6.0 / (n_in + n_out))
            arrays[f"{i}.w"] = rng.uniform(-limit, limit, size=(n_in, n_out)).astype(dtype)
            arrays[f"{i}.b"] = np.zeros(n_out, dtype=dtype)
    return ParameterStore(arrays)


def _check_conv_input(i: int, layer: Layer, shape) -> None:
    if len(shape) != 4 or shape[1] != layer.size[0]:
        raise ShapeMismatchError(
            f"layer {i} (conv2d) expects (B, {layer.size[0]}, H, W), got {tuple(shape)}"
        )


def _check_dense_input(i: int, layer: Layer, width: int) -> None:
    if width != layer.size[0]:
        raise ShapeMismatchError(
            f"layer {i} (dense) expects input width {layer.size[0]}, got {width}"
        )


class Tape:
    """One training-step graph; caches a leaf tensor per parameter name."""

    def __init__(self):
        self._leaves: dict[str, ad.Tensor] = {}

    def leaf(self, name: str, arr: np.ndarray) -> ad.Tensor:
        t = self._leaves.get(name)
        if t is None:
            t = ad.param(arr)
            self._leaves[name] = t
        return t

    def gradients(self, loss: ad.Tensor, store: ParameterStore, prefix: str) -> dict[str, np.ndarray]:
        """Gradient arrays for every parameter of a store; zeros if untouched."""
        if loss.grad is None:
            ad.backward(loss)
        out = {}
        for name, arr in store.items():
            leaf = self._leaves.get(prefix + name)
            if leaf is None or leaf.grad is None:
                out[name] = np.zeros_like(arr)
            else:
                out[name] = leaf.grad
        return out


def apply_spec(spec: ArchitectureSpec, store: ParameterStore, x, tape: Tape | None = None,
               prefix: str = ""):
    """Run the layer list on `x` (array, or Tensor when a tape is given)."""
    use_tape = tape is not None
    t = x if isinstance(x, ad.Tensor) else (ad.const(x) if use_tape else x)
    for i, layer in enumerate(spec.layers):
        data = t.data if use_tape else t
        if layer.kind == "conv2d":
            _check_conv_input(i, layer, data.shape)
            w, b = store[f"{i}.w"], store[f"{i}.b"]
            if use_tape:
                t = ad.conv2d(t, tape.leaf(f"{prefix}{i}.w", w), tape.leaf(f"{prefix}{i}.b", b))
            else:
                from . import backend as K

                t = K.conv2d_forward(t, w, b)
        elif layer.kind == "maxpool2":
            if use_tape:
                t = ad.maxpool2(t)
            else:
                from . import backend as K

                t = K.maxpool2_forward(t)[0]
        elif layer.kind == "dense":
            n = data.shape[0]
            width = int(np.prod(data.shape[1:]))
            _check_dense_input(i, layer, width)
            w, b = store[f"{i}.w"], store[f"{i}.b"]
            if use_tape:
                if len(data.shape) != 2:
                    t = ad.reshape(t, (n, width))
                t = ad.add_bias(ad.matmul(t, tape.leaf(f"{prefix}{i}.w", w)),
                                tape.leaf(f"{prefix}{i}.b", b))
            else:
                t = t.reshape(n, width) @ w + b
        elif layer.kind == "relu":
            t = ad.relu(t) if use_tape else np.where(t > 0, t, 0)
        elif layer.kind == "logsoftmax":
            if use_tape:
                t = ad.log_softmax(t)
            else:
                z = t - t.max(axis=-1, keepdims=True)
                t = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    return t


@dataclass
class ModelBundle:
    """Encoder, classifier, and optional discriminator with optimizer state."""

    enc_spec: ArchitectureSpec
    cls_spec: ArchitectureSpec
    disc_spec: ArchitectureSpec | None
    enc: ParameterStore
    cls: ParameterStore
    disc: ParameterStore | None
    enc_state: OptimizerState
    cls_state: OptimizerState
    disc_state: OptimizerState | None
    dtype: np.dtype = field(default=np.dtype(np.float32))

    def snapshot(self) -> "ModelBundle":
        return replace(
            self,
            enc=self.enc.copy(),
            cls=self.cls.copy(),
            disc=self.disc.copy() if self.disc is not None else None,
            enc_state=self.enc_state.copy(),
            cls_state=self.cls_state.copy(),
            disc_state=self.disc_state.copy() if self.disc_state is not None else None,
        )

    def to_arrays(self) -> dict[str, np.ndarray]:
        out = {f"enc:{k}": v for k, v in self.enc.items()}
        out.update({f"cls:{k}": v for k, v in self.cls.items()})
        if self.disc is not None:
            out.update({f"disc:{k}": v for k, v in self.disc.items()})
        return out

    def restore_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        self.enc = self.enc.replaced(
            {k[4:]: v for k, v in arrays.items() if k.startswith("enc:")})
        self.cls = self.cls.replaced(
            {k[4:]: v for k, v in arrays.items() if k.startswith("cls:")})
        if self.disc is not None:
            self.disc = self.disc.replaced(
                {k[5:]: v for k, v in arrays.items() if k.startswith("disc:")})


def build_model(enc_spec: ArchitectureSpec, cls_spec: ArchitectureSpec,
                disc_spec: ArchitectureSpec | None, seed: int,
                dtype=np.float32, lr: float = 5e-4) -> ModelBundle:
    """Deterministically initialize a model; equal inputs give equal bytes."""
    width = enc_spec.out_width()
    for role, spec in (("classifier", cls_spec), ("discriminator", disc_spec)):
        if spec is not None and spec.in_width() != width:
            raise ShapeMismatchError(
                f"{role} input width {spec.in_width()} != encoder output width {width}"
            )
    dtype = np.dtype(dtype)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([101, seed])))
    enc = _init_store(enc_spec, rng, dtype)
    cls = _init_store(cls_spec, rng, dtype)
    disc = _init_store(disc_spec, rng, dtype) if disc_spec is not None else None
    return ModelBundle(
        enc_spec=enc_spec, cls_spec=cls_spec, disc_spec=disc_spec,
        enc=enc, cls=cls, disc=disc,
        enc_state=OptimizerState.for_store(enc, lr),
        cls_state=OptimizerState.for_store(cls, lr),
        disc_state=OptimizerState.for_store(disc, lr) if disc is not None else None,
        dtype=dtype,
    )


def encode(bundle: ModelBundle, x: np.ndarray) -> np.ndarray:
    """Deterministic feature map of a batch."""
    if x.shape[0] == 0:
        raise ShapeMismatchError("empty batch")
    return apply_spec(bundle.enc_spec, bundle.enc, x)


def classify(bundle: ModelBundle, h: np.ndarray) -> np.ndarray:
    """Log-probability rows over classes."""
    return apply_spec(bundle.cls_spec, bundle.cls, h)


def discriminate(bundle: ModelBundle, h: np.ndarray) -> np.ndarray:
    """Log-probability rows over domains."""
    if bundle.disc is None:
        raise ShapeMismatchError("model has no discriminator")
    return apply_spec(bundle.disc_spec, bundle.disc, h)


# ------------------------------------------------------------- checkpoints

_DTYPE_CODES = {np.dtype("<f4"): b"f4", np.dtype("<f8"): b"f8"}
_CODE_DTYPES = {v: k for k, v in _DTYPE_CODES.items()}


def save_checkpoint(path, arrays: dict[str, np.ndarray]) -> None:
    """Flat archive: version tag, then (name, dtype, shape, little-endian bytes)."""
    with open(path, "wb") as f:
        f.write(struct.pack("<B", len(CHECKPOINT_TAG)))
        f.write(CHECKPOINT_TAG)
        f.write(struct.pack("<I", len(arrays)))
        for name, arr in arrays.items():
            arr = np.ascontiguousarray(arr)
            code = _DTYPE_CODES[np.dtype(arr.dtype).newbyteorder("<")]
            raw = name.encode("utf-8")
            f.write(struct.pack("<H", len(raw)))
            f.write(raw)
            f.write(code)
            f.write(struct.pack("<B", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}q", *arr.shape))
            f.write(arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes())


def load_checkpoint(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as f:
        taglen = struct.unpack("<B", f.read(1))[0]
        tag = f.read(taglen)
        if tag != CHECKPOINT_TAG:
            raise BadMagicError(f"bad checkpoint tag {tag!r}")
        count = struct.unpack("<I", f.read(4))[0]
        out = {}
        for _ in range(count):
            namelen = struct.unpack("<H", f.read(2))[0]
            name = f.read(namelen).decode("utf-8")
            dtype = _CODE_DTYPES[f.read(2)]
            ndim = struct.unpack("<B", f.read(1))[0]
            shape = struct.unpack(f"<{ndim}q", f.read(8 * ndim))
            n = int(np.prod(shape)) if ndim else 1
            buf = f.read(n * dtype.itemsize)
            if len(buf) != n * dtype.itemsize:
                raise TruncatedFileError(f"truncated array {name!r}")
            out[name] = np.frombuffer(buf, dtype=dtype).reshape(shape).copy()
    return out
