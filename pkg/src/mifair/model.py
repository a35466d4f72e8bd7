"""The four networks: feature extractor, target head, sensitive decoder, density-ratio estimator."""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tensor

CHECKPOINT_MAGIC = b"MIFAIRCK"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    input_dim: int
    n_classes: int
    n_groups: int
    hidden: tuple[int, ...] = (32,)
    embed_dim: int = 32

    def __post_init__(self):
        dims = (self.input_dim, self.n_classes, self.n_groups, self.embed_dim, *self.hidden)
        if any(int(d) < 1 for d in dims):
            raise ValueError(f"all model dimensions must be >= 1, got {dims}")


@dataclass
class ModelBundle:
    """Parameters grouped the way they are optimized.

    ``theta`` holds extractor and target-head weights, ``decoder`` the
    sensitive-group classifier, ``estimator`` the linear density-ratio
    weights (one vector over the embedding, one over the group one-hot).
    """

    config: ModelConfig
    extractor: list[tuple[Tensor, Tensor]]
    head: tuple[Tensor, Tensor]
    decoder: tuple[Tensor, Tensor]
    w_embed: Tensor
    w_group: Tensor

    @property
    def theta(self) -> list[Tensor]:
        out = [p for layer in self.extractor for p in layer]
        return out + list(self.head)

    @property
    def decoder_params(self) -> list[Tensor]:
        return list(self.decoder)

    @property
    def estimator_params(self) -> list[Tensor]:
        return [self.w_embed, self.w_group]

    def parameters(self) -> list[Tensor]:
        return self.theta + self.decoder_params + self.estimator_params

    def parameter_names(self) -> list[str]:
        names = []
        for i in range(len(self.extractor)):
            names += [f"extractor.{i}.weight", f"extractor.{i}.bias"]
        return names + ["head.weight", "head.bias", "decoder.weight", "decoder.bias", "estimator.w_embed", "estimator.w_group"]

    def set_trainable(self, theta: bool, decoder: bool, estimator: bool) -> None:
        for group, flag in ((self.theta, theta), (self.decoder_params, decoder), (self.estimator_params, estimator)):
            for p in group:
                p.requires_grad = flag

    def copy(self) -> "ModelBundle":
        clone = lambda t: Tensor(t.values.copy(), requires_grad=t.requires_grad)  # noqa: E731
        return ModelBundle(
            self.config,
            [(clone(w), clone(b)) for w, b in self.extractor],
            (clone(self.head[0]), clone(self.head[1])),
            (clone(self.decoder[0]), clone(self.decoder[1])),
            clone(self.w_embed),
            clone(self.w_group),
        )


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> Tensor:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-limit, limit, size=(fan_in, fan_out)), requires_grad=True)


def _zeros(*shape: int) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


def init_bundle(config: ModelConfig, seed: int | np.random.Generator = 0) -> ModelBundle:
    rng = np.random.default_rng(seed)
    dims = [config.input_dim, *config.hidden, config.embed_dim]
    extractor = [(_glorot(rng, a, b), _zeros(b)) for a, b in zip(dims[:-1], dims[1:])]
    head = (_glorot(rng, config.embed_dim, config.n_classes), _zeros(config.n_classes))
    decoder = (_glorot(rng, config.embed_dim, config.n_groups), _zeros(config.n_groups))
    return ModelBundle(config, extractor, head, decoder, _zeros(config.embed_dim), _zeros(config.n_groups))


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def extract(x, bundle: ModelBundle) -> Tensor:
    """Learning outcome: ReLU MLP with a linear final layer."""
    h = _as_tensor(x)
    if h.ndim != 2 or h.shape[1] != bundle.config.input_dim:
        raise ShapeError(f"extract: expected (m, {bundle.config.input_dim}) input, got {h.shape}")
    last = len(bundle.extractor) - 1
    for i, (w, b) in enumerate(bundle.extractor):
        h = T.affine(h, w, b)
        if i < last:
            h = T.relu(h)
    return h


def predict_target(embedding: Tensor, bundle: ModelBundle) -> Tensor:
    return T.log_softmax(T.affine(embedding, *bundle.head))


def predict_sensitive(embedding: Tensor, bundle: ModelBundle, groups=None) -> tuple[Tensor, Tensor | None]:
    """Log-probabilities over joint groups and, when ``groups`` is given, log q at those groups."""
    log_o = T.log_softmax(T.affine(embedding, *bundle.decoder))
    log_q = None if groups is None else T.pick(log_o, groups)
    return log_o, log_q


@dataclass
class GumbelConfig:
    temperature: float = 1.0
    seed: int | np.random.SeedSequence = 0
    draws: int = 0
    _rng: np.random.Generator | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if not self.temperature > 0:
            raise ValueError(f"Gumbel temperature must be > 0, got {self.temperature}")

    def noise(self, shape) -> np.ndarray:
        """Standard Gumbel draws, -log(-log u), from this config's stream."""
        if self._rng is None:
            self._rng = np.random.default_rng(self.seed)
        u = self._rng.random(shape)
        # u == 0 has probability ~2^-53 per draw but would be fatal
        u = np.clip(u, np.finfo(float).tiny, 1.0 - np.finfo(float).epsneg)
        self.draws += 1
        return -np.log(-np.log(u))


def gumbel_sample(log_o: Tensor, cfg: GumbelConfig, noise: np.ndarray | None = None) -> Tensor:
    """Relaxed one-hot sample from categorical log-probabilities ``log_o``.

    Differentiable in ``log_o``; the noise is a constant of the graph.
    """
    if not cfg.temperature > 0:
        raise ValueError("temperature must be > 0")
    g = cfg.noise(log_o.shape) if noise is None else np.asarray(noise, dtype=np.float64)
    if g.shape != log_o.shape:
        raise ShapeError(f"noise shape {g.shape} does not match {log_o.shape}")
    return T.softmax(T.scale(T.add(log_o, Tensor(g)), 1.0 / cfg.temperature))


def density_ratio(embedding: Tensor, s: Tensor, bundle: ModelBundle) -> Tensor:
    """Linear log density-ratio score ``w_embed . y + w_group . s`` per row."""
    embedding, s = _as_tensor(embedding), _as_tensor(s)
    if embedding.shape[0] != s.shape[0]:
        raise ShapeError("embedding and group rows differ")
    return T.add(T.row_dot(embedding, bundle.w_embed), T.row_dot(s, bundle.w_group))


# ---------------------------------------------------------------------------
# checkpoints
#
# Layout: 8-byte magic, little-endian uint32 version, little-endian uint64
# header length, UTF-8 JSON header (model config, metadata, array names and
# shapes), then every array as little-endian float64 in header order.


def save_checkpoint(path, bundle: ModelBundle, meta: dict | None = None) -> None:
    arrays = [p.values for p in bundle.parameters()]
    header = {
        "model": {**asdict(bundle.config), "hidden": list(bundle.config.hidden)},
        "meta": meta or {},
        "arrays": [{"name": n, "shape": list(a.shape)} for n, a in zip(bundle.parameter_names(), arrays)],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<IQ", CHECKPOINT_VERSION, len(blob)))
        fh.write(blob)
        for a in arrays:
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[ModelBundle, dict]:
    data = Path(path).read_bytes()
    if data[:8] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    version, hlen = struct.unpack("<IQ", data[8:20])
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(data[20 : 20 + hlen].decode("utf-8"))
    m = header["model"]
    config = ModelConfig(m["input_dim"], m["n_classes"], m["n_groups"], tuple(m["hidden"]), m["embed_dim"])
    bundle = init_bundle(config)
    offset = 20 + hlen
    params = bundle.parameters()
    if len(params) != len(header["arrays"]):
        raise ValueError(f"{path}: array count does not match the model config")
    for p, spec in zip(params, header["arrays"]):
        shape = tuple(spec["shape"])
        if shape != p.shape:
            raise ValueError(f"{path}: array {spec['name']} has shape {shape}, expected {p.shape}")
        nbytes = 8 * int(np.prod(shape))
        p.values[...] = np.frombuffer(data, dtype="<f8", count=nbytes // 8, offset=offset).reshape(shape)
        offset += nbytes
    if offset != len(data):
        raise ValueError(f"{path}: trailing bytes after parameter arrays")
    return bundle, header["meta"]
