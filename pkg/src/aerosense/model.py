"""The AeroSense set model: padded container, shared encoder, masked attention,
filtered pooling and per-region decoders, plus the Huber training objective.
"""

from __future__ import annotations

import io
import json
import math
import zipfile
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import BatchNormState, Tensor
from .features import NormStats, feature_columns

FORMAT_VERSION = 1
POOLINGS = ("sum", "mean", "max")
HEAD_MODES = ("decoupled", "coupled")


class CardinalityOverflow(ValueError):
    """A snapshot holds more aircraft than the container allows."""


@dataclass
class PaddedBatch:
    x: np.ndarray  # (B, N, D)
    counts: np.ndarray  # (B,)
    mask: np.ndarray  # (B, N, N), 0 or -inf
    labels: np.ndarray | None = None  # (B, 2)

    @property
    def valid(self) -> np.ndarray:
        return np.arange(self.x.shape[1])[None, :] < self.counts[:, None]

    def __len__(self) -> int:
        return len(self.counts)


def attention_mask(counts: np.ndarray, width: int) -> np.ndarray:
    valid = np.arange(width)[None, :] < np.asarray(counts)[:, None]
    return np.where(valid[:, :, None] & valid[:, None, :], 0.0, -np.inf)


def pad_batch(states: Sequence[np.ndarray], n_max: int, labels=None,
              width: int | None = None) -> PaddedBatch:
    """Stack variable-size state arrays into a zero-padded container.

    ``width`` trims the container below ``n_max`` (at least the largest set
    in the batch); the overflow check always uses ``n_max``.
    """
    counts = np.array([len(s) for s in states], dtype=int)
    if len(counts) and counts.max() > n_max:
        raise CardinalityOverflow(f"snapshot with {counts.max()} aircraft exceeds N_max={n_max}")
    n = n_max if width is None else max(int(width), int(counts.max(initial=0)), 1)
    d = next((s.shape[1] for s in states if np.ndim(s) == 2), 0)
    x = np.zeros((len(states), n, d))
    for b, s in enumerate(states):
        if len(s):
            x[b, :len(s)] = s
    y = None if labels is None else np.asarray(labels, dtype=float).reshape(len(states), 2)
    return PaddedBatch(x, counts, attention_mask(counts, n), y)


@dataclass
class ModelConfig:
    d_model: int = 128
    n_heads: int = 4
    encoder_hidden: tuple[int, ...] = (64, 128)
    d_hidden: int = 64
    dropout: float = 0.1
    n_blocks: int = 1
    n_max: int = 120
    pooling: str = "sum"
    heads: str = "decoupled"
    use_mask: bool = True
    drop_groups: tuple[str, ...] = ()

    def __post_init__(self):
        self.encoder_hidden = tuple(int(w) for w in self.encoder_hidden)
        self.drop_groups = tuple(self.drop_groups)
        if self.d_model % self.n_heads:
            raise ValueError("d_model must be divisible by n_heads")
        if self.pooling not in POOLINGS:
            raise ValueError(f"pooling must be one of {POOLINGS}")
        if self.heads not in HEAD_MODES:
            raise ValueError(f"heads must be one of {HEAD_MODES}")
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout must lie in [0, 1)")
        feature_columns(self.drop_groups)

    @property
    def d_k(self) -> int:
        return self.d_model // self.n_heads

    @property
    def columns(self) -> np.ndarray:
        return feature_columns(self.drop_groups)

    @property
    def d_in(self) -> int:
        return len(self.columns)

    @property
    def widths(self) -> tuple[int, ...]:
        return (*self.encoder_hidden, self.d_model)


def glorot(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def init_params(cfg: ModelConfig, seed: int = 0) -> tuple[dict[str, Tensor], list[BatchNormState]]:
    rng = np.random.default_rng(seed)
    params: dict[str, np.ndarray] = {}
    bn = []
    prev = cfg.d_in
    for l, w in enumerate(cfg.widths):
        params[f"enc{l}.W"] = glorot(rng, (prev, w), prev, w)
        params[f"enc{l}.b"] = np.zeros(w)
        params[f"enc{l}.gamma"] = np.ones(w)
        params[f"enc{l}.beta"] = np.zeros(w)
        bn.append(BatchNormState.create(w))
        prev = w
    d, h, dk = cfg.d_model, cfg.n_heads, cfg.d_k
    for k in range(cfg.n_blocks):
        for name in ("WQ", "WK", "WV"):
            params[f"att{k}.{name}"] = glorot(rng, (h, d, dk), d, dk)
        params[f"att{k}.WO"] = glorot(rng, (h * dk, d), h * dk, d)
        params[f"att{k}.ln_g"] = np.ones(d)
        params[f"att{k}.ln_b"] = np.zeros(d)
    dh = cfg.d_hidden
    if cfg.heads == "decoupled":
        for region in ("ap", "ar"):
            params[f"head_{region}.W1"] = glorot(rng, (d, dh), d, dh)
            params[f"head_{region}.b1"] = np.zeros(dh)
            params[f"head_{region}.W2"] = glorot(rng, (dh, 1), dh, 1)
            params[f"head_{region}.b2"] = np.zeros(1)
    else:
        params["head.W1"] = glorot(rng, (d, dh), d, dh)
        params["head.b1"] = np.zeros(dh)
        params["head.W2"] = glorot(rng, (dh, 2), dh, 2)
        params["head.b2"] = np.zeros(2)
    return {k: Tensor(v, requires_grad=True) for k, v in params.items()}, bn


# forward pieces ----------------------------------------------------------------

def encode(params: dict[str, Tensor], bn: Sequence[BatchNormState], x, valid: np.ndarray,
           dropout: float = 0.0, training: bool = False, key: Sequence[int] = (0,)) -> Tensor:
    """Weight-shared per-row MLP: Dropout(sigmoid(BN(W h + b))) per layer."""
    if not bn:
        raise ValueError("the encoder needs at least one layer")
    h = ad.as_tensor(x)
    for l, state in enumerate(bn):
        h = h @ params[f"enc{l}.W"] + params[f"enc{l}.b"]
        h = ad.batch_norm(h, params[f"enc{l}.gamma"], params[f"enc{l}.beta"], state, training, valid)
        h = ad.sigmoid(h)
        h = ad.dropout(h, dropout, (*key, l), training)
    return h


def masked_attention(params: dict[str, Tensor], e: Tensor, mask: np.ndarray | None,
                     block: int = 0, trace: list | None = None) -> Tensor:
    """One residual multi-head self-attention block followed by layer norm.

    ``mask`` is the (B, N, N) additive mask or None to attend everywhere.
    Per-head attention probabilities are appended to ``trace`` when given.
    """
    wq, wk, wv = (params[f"att{block}.{n}"] for n in ("WQ", "WK", "WV"))
    n_heads, _, d_k = wq.shape
    b, n, d = e.shape
    flat = e.reshape(b * n, d)

    def project(w):  # (H, d, d_k) weights applied as one 2D product, out (B, H, N, d_k)
        w2 = w.swapaxes(0, 1).reshape(d, n_heads * d_k)
        return (flat @ w2).reshape(b, n, n_heads, d_k).swapaxes(1, 2)

    q, k, v = project(wq), project(wk), project(wv)
    scores = (q @ k.swapaxes(-1, -2)) * (1.0 / math.sqrt(d_k))
    m = np.zeros((b, 1, n, n)) if mask is None else np.asarray(mask)[:, None]
    probs = ad.masked_softmax(scores, m)
    if trace is not None:
        trace.append(probs.data)
    heads = (probs @ v).swapaxes(1, 2).reshape(b, n, n_heads * d_k)
    return ad.layer_norm(e + heads @ params[f"att{block}.WO"],
                         params[f"att{block}.ln_g"], params[f"att{block}.ln_b"])


def pool(e: Tensor, counts: np.ndarray, mode: str = "sum") -> Tensor:
    """Aggregate the first ``counts[b]`` rows of each set; padding rows never contribute."""
    counts = np.asarray(counts)
    valid = np.arange(e.shape[1])[None, :] < counts[:, None]
    if mode == "max":
        return ad.masked_max(e, valid, axis=1)
    z = (e * valid[:, :, None].astype(float)).sum(axis=1)
    if mode == "mean":
        z = z * (1.0 / np.maximum(counts, 1))[:, None]
    return z


def decode(params: dict[str, Tensor], z: Tensor) -> Tensor:
    """Region decoders, returning (B, 2) predictions ordered (AP, AR)."""
    if "head.W1" in params:
        hidden = ad.sigmoid(z @ params["head.W1"] + params["head.b1"])
        return hidden @ params["head.W2"] + params["head.b2"]
    outs = []
    for region in ("ap", "ar"):
        hidden = ad.sigmoid(z @ params[f"head_{region}.W1"] + params[f"head_{region}.b1"])
        outs.append(hidden @ params[f"head_{region}.W2"] + params[f"head_{region}.b2"])
    return ad.concat(outs, axis=-1)


def huber_loss(pred: Tensor, labels, delta: float = 1.0) -> Tensor:
    """Batch mean of the Huber penalty summed over both regions."""
    labels = np.asarray(labels, dtype=float)
    if labels.ndim != 2 or len(labels) < 1:
        raise ValueError("labels must be a non-empty (B, 2) array")
    return ad.huber(ad.as_tensor(labels) - pred, delta).sum() * (1.0 / len(labels))


# model ---------------------------------------------------------------------------

class AeroSense:
    """Parameters plus forward pass.  Inputs are normalized 18-wide state arrays;
    dropped feature groups are sliced off internally.
    """

    def __init__(self, config: ModelConfig | None = None, seed: int = 0,
                 norm_stats: NormStats | None = None):
        self.config = config or ModelConfig()
        self.seed = seed
        self.params, self.bn = init_params(self.config, seed)
        self.norm_stats = norm_stats

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def batch(self, states: Sequence[np.ndarray], labels=None, trim: bool = True) -> PaddedBatch:
        cols = self.config.columns
        sliced = [np.asarray(s, dtype=float).reshape(-1, 18)[:, cols] for s in states]
        width = 1 if trim else None
        return pad_batch(sliced, self.config.n_max, labels, width=width)

    def forward(self, batch: PaddedBatch, training: bool = False, key: Sequence[int] = (0,),
                trace: list | None = None) -> Tensor:
        cfg = self.config
        valid = batch.valid
        key = (self.seed, *key)
        if cfg.use_mask:
            # padding rows cannot reach any valid output, so encode only real aircraft
            e = encode(self.params, self.bn, batch.x[valid], None, cfg.dropout, training, key)
            e = ad.scatter_rows(e, valid)
        else:
            e = encode(self.params, self.bn, batch.x, valid, cfg.dropout, training, key)
        mask = batch.mask if cfg.use_mask else None
        for k in range(cfg.n_blocks):
            e = masked_attention(self.params, e, mask, k, trace)
        z = pool(e, batch.counts, cfg.pooling)
        return decode(self.params, z)

    def predict(self, states: Sequence[np.ndarray], batch_size: int = 256) -> np.ndarray:
        """Eval-mode predictions, shape (len(states), 2)."""
        out = [self.forward(self.batch(states[i:i + batch_size])).data
               for i in range(0, len(states), batch_size)]
        return np.concatenate(out, axis=0) if out else np.empty((0, 2))

    def attention(self, states: np.ndarray) -> list[np.ndarray]:
        """Per-block (H, N_t, N_t) attention probabilities for one snapshot."""
        trace: list[np.ndarray] = []
        batch = self.batch([states])
        self.forward(batch, trace=trace)
        n = int(batch.counts[0])
        return [p[0, :, :n, :n] for p in trace]

    # persistence -------------------------------------------------------------

    def state_arrays(self) -> dict[str, np.ndarray]:
        arrays = {f"param/{k}": v.data for k, v in self.params.items()}
        for l, s in enumerate(self.bn):
            arrays[f"bn/{l}/running_mean"] = s.running_mean
            arrays[f"bn/{l}/running_var"] = s.running_var
        return arrays

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for k in self.params:
            self.params[k] = Tensor(np.array(arrays[f"param/{k}"], dtype=float), requires_grad=True)
        for l, s in enumerate(self.bn):
            s.running_mean = np.array(arrays[f"bn/{l}/running_mean"], dtype=float)
            s.running_var = np.array(arrays[f"bn/{l}/running_var"], dtype=float)

    def copy_state(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.state_arrays().items()}


def save_params(model: AeroSense, path, extra: dict | None = None) -> None:
    """Write weights, batch-norm statistics, normalization stats and hyperparameters."""
    header = {
        "format": "aerosense-params",
        "version": FORMAT_VERSION,
        "config": asdict(model.config),
        "seed": model.seed,
        "norm_stats": None if model.norm_stats is None else model.norm_stats.to_dict(),
        "extra": extra or {},
    }
    arrays = model.state_arrays()
    arrays["__header__"] = np.frombuffer(json.dumps(header).encode(), dtype=np.uint8)
    # np.savez stamps entries with the wall clock; fixed stamps keep reruns byte-identical
    with zipfile.ZipFile(path, "w", zipfile.ZIP_DEFLATED) as zf:
        for name in sorted(arrays):
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.ascontiguousarray(arrays[name]), allow_pickle=False)
            info = zipfile.ZipInfo(f"{name}.npy", date_time=(1980, 1, 1, 0, 0, 0))
            info.compress_type = zipfile.ZIP_DEFLATED
            zf.writestr(info, buf.getvalue())


def load_params(path) -> AeroSense:
    with np.load(Path(path), allow_pickle=False) as data:
        header = json.loads(bytes(data["__header__"]).decode())
        if header.get("format") != "aerosense-params":
            raise ValueError(f"{path} is not an AeroSense parameter file")
        if header["version"] != FORMAT_VERSION:
            raise ValueError(f"unsupported parameter file version {header['version']}")
        arrays = {k: data[k] for k in data.files if k != "__header__"}
    stats = header["norm_stats"]
    model = AeroSense(ModelConfig(**header["config"]), seed=header["seed"],
                      norm_stats=None if stats is None else NormStats.from_dict(stats))
    model.load_state_arrays(arrays)
    model.extra = header.get("extra", {})
    return model
