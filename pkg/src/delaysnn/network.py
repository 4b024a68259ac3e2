"""Multi-layer spiking networks built from delay-augmented LIF/adLIF neurons.

Arrays inside a layer are time-major: inputs ``[T, B, C]``, states
``[T, B, h]``. The public :class:`Network`
takes batch-major input ``[B, T, C]`` and returns logits ``[B, c_out]``.

The forward pass records a tape of every intermediate the reverse pass in
:mod:`delaysnn.bptt` needs.
"""
from __future__ import annotations

import enum
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .core import RngStream
from .neuron import POST_UPDATE, PRE_UPDATE, DelayScheme, Scheme, build_asd, spike_fn

__all__ = [
    "Model",
    "LayerSpec",
    "NetworkSpec",
    "BatchNorm",
    "LayerParams",
    "ParamCount",
    "Network",
    "layer_forward",
    "readout_forward",
    "count_params",
    "count_state_memory",
]

# initial ranges; a subset of the clip ranges applied during training
ALPHA_INIT = (float(np.exp(-1 / 5)), 0.96)
BETA_INIT = (float(np.exp(-1 / 30)), 0.99)
A_INIT = (0.0, 1.0)
B_INIT = (0.0, 2.0)


class Model(str, enum.Enum):
    LIF = "lif"
    RLIF = "rlif"
    ADLIF = "adlif"
    RADLIF = "radlif"

    @classmethod
    def parse(cls, name: "str | Model") -> "Model":
        if isinstance(name, Model):
            return name
        try:
            return cls(name.strip().lower())
        except ValueError:
            raise ValueError(f"unknown neuron model {name!r}; expected one of {[m.value for m in cls]}") from None

    @property
    def adaptive(self) -> bool:
        return self in (Model.ADLIF, Model.RADLIF)

    @property
    def recurrent(self) -> bool:
        return self in (Model.RLIF, Model.RADLIF)

    @property
    def n_s(self) -> int:
        return 2 if self.adaptive else 1

    @property
    def default_delay_timing(self) -> str:
        return POST_UPDATE if self.adaptive else PRE_UPDATE


@dataclass
class LayerSpec:
    h: int
    model: Model = Model.ADLIF
    n_d: int = 0
    scheme: DelayScheme = field(default_factory=DelayScheme)
    delay_timing: str | None = None

    def __post_init__(self):
        self.model = Model.parse(self.model)
        if isinstance(self.scheme, (str, Scheme)):
            self.scheme = DelayScheme(self.scheme)
        if self.h < 1:
            raise ValueError("a layer needs at least one neuron")
        if self.n_d < 0:
            raise ValueError("n_d must be >= 0")
        if self.delay_timing is None:
            self.delay_timing = self.model.default_delay_timing
        if self.delay_timing not in (PRE_UPDATE, POST_UPDATE):
            raise ValueError(f"delay_timing must be 'pre' or 'post', got {self.delay_timing!r}")

    @property
    def recurrent(self) -> bool:
        return self.model.recurrent

    def to_dict(self) -> dict:
        return {
            "h": self.h,
            "model": self.model.value,
            "n_d": self.n_d,
            "scheme": self.scheme.kind.value,
            "trainable_asd": self.scheme.trainable,
            "delay_timing": self.delay_timing,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LayerSpec":
        return cls(
            h=d["h"], model=d["model"], n_d=d["n_d"],
            scheme=DelayScheme(d["scheme"], d["trainable_asd"]),
            delay_timing=d.get("delay_timing"),
        )


@dataclass
class NetworkSpec:
    c_in: int
    c_out: int
    layers: list[LayerSpec]
    dropout_rate: float = 0.4
    theta: float = 1.0
    spike_mode: str = "boxcar"
    tau: float = 0.2

    def __post_init__(self):
        if not self.layers:
            raise ValueError("a network needs at least one hidden layer")
        if self.c_in < 1 or self.c_out < 1:
            raise ValueError("c_in and c_out must be >= 1")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout rate must lie in [0, 1)")

    @classmethod
    def stack(cls, model, h: int, l: int, n_d: int = 0, scheme: str = "uniform",
              trainable_asd: bool = False, c_in: int = 140, c_out: int = 20, **kw) -> "NetworkSpec":
        """``l`` identical hidden layers of ``h`` neurons."""
        layers = [LayerSpec(h, Model.parse(model), n_d, DelayScheme(scheme, trainable_asd)) for _ in range(l)]
        return cls(c_in=c_in, c_out=c_out, layers=layers, **kw)

    @property
    def l(self) -> int:
        return len(self.layers)

    def to_dict(self) -> dict:
        return {
            "c_in": self.c_in, "c_out": self.c_out,
            "layers": [ls.to_dict() for ls in self.layers],
            "dropout_rate": self.dropout_rate, "theta": self.theta,
            "spike_mode": self.spike_mode, "tau": self.tau,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        d = dict(d)
        d["layers"] = [LayerSpec.from_dict(x) for x in d["layers"]]
        return cls(**d)


class BatchNorm:
    """Per-channel batch normalization over the leading (batch x time) axis."""

    def __init__(self, n: int, eps: float = 1e-5, momentum: float = 0.05):
        self.gamma = np.ones(n)
        self.bias = np.zeros(n)
        self.running_mean = np.zeros(n)
        self.running_var = np.ones(n)
        self.eps = eps
        self.momentum = momentum

    def forward(self, x: np.ndarray, training: bool):
        if training:
            n = x.shape[0]
            mean = x.mean(axis=0)
            xc = x - mean
            var = (xc * xc).mean(axis=0)
            inv_std = 1.0 / np.sqrt(var + self.eps)
            xhat = xc * inv_std
            m = self.momentum
            unbiased = var * n / (n - 1) if n > 1 else var
            self.running_mean = (1 - m) * self.running_mean + m * mean
            self.running_var = (1 - m) * self.running_var + m * unbiased
        else:
            inv_std = 1.0 / np.sqrt(self.running_var + self.eps)
            xhat = (x - self.running_mean) * inv_std
        return self.gamma * xhat + self.bias, (training, xhat, inv_std)

    def backward(self, cache, gy: np.ndarray):
        training, xhat, inv_std = cache
        ggamma = (gy * xhat).sum(axis=0)
        gbias = gy.sum(axis=0)
        if training:
            gxhat = gy * self.gamma
            gx = inv_std * (gxhat - gxhat.mean(axis=0) - xhat * (gxhat * xhat).mean(axis=0))
        else:
            gx = gy * (self.gamma * inv_std)
        return gx, ggamma, gbias


@dataclass
class LayerParams:
    W: np.ndarray
    alpha: np.ndarray
    V: np.ndarray | None = None
    asd: np.ndarray | None = None  # [h, n_d]
    beta: np.ndarray | None = None
    a: np.ndarray | None = None
    b: np.ndarray | None = None

    @classmethod
    def init(cls, spec: LayerSpec, fan_in: int, rng: RngStream) -> "LayerParams":
        h = spec.h
        bound = 1.0 / np.sqrt(fan_in)
        W = rng.uniform(-bound, bound, (h, fan_in))
        V = None
        if spec.recurrent:
            vb = 1.0 / np.sqrt(h)
            V = rng.uniform(-vb, vb, (h, h))
            np.fill_diagonal(V, 0.0)
        alpha = rng.uniform(*ALPHA_INIT, h)
        beta = a = b = None
        if spec.model.adaptive:
            beta = rng.uniform(*BETA_INIT, h)
            a = rng.uniform(*A_INIT, h)
            b = rng.uniform(*B_INIT, h)
        asd = None
        if spec.n_d:
            asd = np.stack([build_asd(spec.scheme, spec.n_d, rng) for _ in range(h)])
        return cls(W=W, alpha=alpha, V=V, asd=asd, beta=beta, a=a, b=b)


@dataclass
class LayerCache:
    spec: LayerSpec
    x: np.ndarray           # [T, B, h_prev]
    bn_cache: tuple | None
    ff: np.ndarray          # [T, B, h] normalized feedforward drive (i_d)
    u: np.ndarray           # [T, B, h] membrane state read by the spike function
    w: np.ndarray | None    # [T, B, h]
    s: np.ndarray           # [T, B, h] spikes before dropout
    ds: np.ndarray          # [T, B, h] surrogate derivative
    i_s: np.ndarray         # [T, B, h]
    mask: np.ndarray | None  # dropout scale factors [T, B, h]
    theta: float


DELAY_BLOCK = 64


def _delay_band(asd: np.ndarray, lag: int, rows: int) -> np.ndarray:
    """Banded block [h, rows, halo + rows] with M[i, r, r + halo - j - lag] = asd[i, j]."""
    h, n_d = asd.shape
    halo = n_d + lag - 1
    cols = halo + rows
    M = np.zeros((h, rows, cols))
    flat = M.reshape(h, rows * cols)
    for j in range(n_d):
        c0 = halo - j - lag
        flat[:, c0::cols + 1] = asd[:, j:j + 1]
    return M


def delay_drive(ff: np.ndarray, asd: np.ndarray, lag: int) -> np.ndarray:
    """Weighted read-out of the shift register over a whole sequence.

    The register only ever holds past values of ``ff`` [T, B, h], so its
    contribution at step t is ``sum_j asd[:, j] * ff[t - j - lag]``. It is
    evaluated as a banded matmul over time blocks, which keeps the cost
    nearly flat in ``n_d``.
    """
    T, B, h = ff.shape
    halo = asd.shape[1] + lag - 1
    X = np.zeros((h, halo + T, B))
    X[:, halo:] = ff.transpose(2, 0, 1)
    M = _delay_band(asd, lag, min(DELAY_BLOCK, T))
    out = np.empty((h, T, B))
    for t0 in range(0, T, DELAY_BLOCK):
        n = min(DELAY_BLOCK, T - t0)
        np.matmul(M[:, :n, :halo + n], X[:, t0:t0 + halo + n], out=out[:, t0:t0 + n])
    return out.transpose(1, 2, 0)


def delay_drive_adjoint(g: np.ndarray, ff: np.ndarray, asd: np.ndarray, lag: int):
    """Given dL/d(drive) [T, B, h], return (dL/dff, dL/dasd)."""
    T, B, h = ff.shape
    n_d = asd.shape[1]
    halo = n_d + lag - 1
    X = np.zeros((h, halo + T, B))
    X[:, halo:] = ff.transpose(2, 0, 1)
    G = np.ascontiguousarray(g.transpose(2, 0, 1))
    M = _delay_band(asd, lag, min(DELAY_BLOCK, T))
    gX = np.zeros_like(X)
    g_asd = np.zeros((h, n_d))
    for t0 in range(0, T, DELAY_BLOCK):
        n = min(DELAY_BLOCK, T - t0)
        Xb, Gb = X[:, t0:t0 + halo + n], G[:, t0:t0 + n]
        gX[:, t0:t0 + halo + n] += np.matmul(M[:, :n, :halo + n].transpose(0, 2, 1), Gb)
        C = np.matmul(Gb, Xb.transpose(0, 2, 1)).reshape(h, -1)  # [h, n * (halo + n)]
        for j in range(n_d):
            g_asd[:, j] += C[:, halo - j - lag::halo + n + 1].sum(axis=1)
    return gX[:, halo:].transpose(1, 2, 0), g_asd


def layer_forward(spec: LayerSpec, p: LayerParams, x: np.ndarray, bn: BatchNorm | None = None,
                  training: bool = False, rng: RngStream | None = None, dropout: float = 0.0,
                  theta: float = 1.0, spike_mode: str = "boxcar", tau: float = 0.2):
    """Run one hidden layer over a time-major input ``x`` of shape [T, B, h_prev].

    Returns the emitted spikes [T, B, h] (dropout applied when training) and
    the tape entry for the reverse pass.
    """
    T, B, h_prev = x.shape
    h = spec.h
    if p.W.shape != (h, h_prev):
        raise ValueError(f"W has shape {p.W.shape}, expected {(h, h_prev)}")
    if spec.recurrent:
        if p.V is None or p.V.shape != (h, h):
            raise ValueError(f"recurrent layer needs V of shape {(h, h)}")
        if np.any(np.diag(p.V) != 0):
            raise ValueError("recurrent weights must have a zero diagonal")
    elif p.V is not None:
        raise ValueError("feedforward layer got recurrent weights")
    n_d = spec.n_d
    if n_d and (p.asd is None or p.asd.shape != (h, n_d)):
        raise ValueError(f"asd must have shape {(h, n_d)}")

    pre = (x.reshape(T * B, h_prev) @ p.W.T)
    bn_cache = None
    if bn is not None:
        pre, bn_cache = bn.forward(pre, training)
    ff = pre.reshape(T, B, h)

    adaptive = spec.model.adaptive
    post = spec.delay_timing == POST_UPDATE
    alpha = p.alpha
    one_m_alpha = 1.0 - alpha
    reset = alpha * theta
    V_T = p.V.T if spec.recurrent else None
    asd = p.asd

    u = np.zeros((B, h))
    w = np.zeros((B, h)) if adaptive else None
    # slot j of the register at step t holds ff[t - j] (post) or ff[t - 1 - j] (pre);
    # nothing else writes to it, so its read-out is formed ahead of the recurrence
    drive = delay_drive(ff, asd, 0 if post else 1) if n_d else None
    u_hist = np.empty((T, B, h))
    w_hist = np.empty((T, B, h)) if adaptive else None
    s_hist = np.empty((T, B, h))
    ds_hist = np.empty((T, B, h))
    is_hist = np.empty((T, B, h)) if spec.recurrent else ff

    for t in range(T):
        s, ds = spike_fn(u, theta, spike_mode, tau)
        u_hist[t] = u
        s_hist[t] = s
        ds_hist[t] = ds
        i_s = ff[t]
        if V_T is not None:
            i_s = i_s + s @ V_T
            is_hist[t] = i_s
        if adaptive:
            w_hist[t] = w
            u_new = alpha * u + one_m_alpha * (i_s - w) - reset * s
            w = p.a * u + p.beta * w + p.b * s
        else:
            u_new = alpha * u + one_m_alpha * i_s - reset * s
        if drive is not None:
            u_new = u_new + drive[t]
        u = u_new

    out = s_hist
    mask = None
    if training and dropout > 0.0:
        if rng is None:
            raise ValueError("dropout in training mode needs a random stream")
        keep = rng.random((T, B, h)) >= dropout
        mask = keep / (1.0 - dropout)
        out = s_hist * mask
    cache = LayerCache(spec, x, bn_cache, ff, u_hist, w_hist, s_hist, ds_hist, is_hist, mask, theta)
    return out, cache


@dataclass
class ReadoutCache:
    spikes: np.ndarray
    bn_cache: tuple | None


def readout_forward(W_out: np.ndarray, bn_out: BatchNorm | None, spikes: np.ndarray, training: bool = False):
    """Time-averaged affine readout of spikes [T, B, h] into logits [B, c_out]."""
    T, B, h = spikes.shape
    if T == 0:
        raise ValueError("readout needs at least one time step")
    if W_out.shape[1] != h:
        raise ValueError(f"W_out has shape {W_out.shape}, expected (c_out, {h})")
    y = spikes.reshape(T * B, h) @ W_out.T
    bn_cache = None
    if bn_out is not None:
        y, bn_cache = bn_out.forward(y, training)
    logits = y.reshape(T, B, -1).mean(axis=0)
    return logits, ReadoutCache(spikes, bn_cache)


@dataclass
class Tape:
    layers: list[LayerCache]
    readout: ReadoutCache
    batch: int


@dataclass
class ParamCount:
    feedforward: int
    recurrent: int
    neuron: int
    norm: int
    delay: int

    @property
    def total(self) -> int:
        return self.feedforward + self.recurrent + self.neuron + self.norm + self.delay

    def as_dict(self) -> dict:
        return {**asdict(self), "total": self.total}


def count_params(spec: NetworkSpec, asd_trainable: bool | None = None) -> ParamCount:
    """Closed-form trainable-parameter count.

    Layers may differ; for ``l`` identical layers this is
    ``c_in*h + h^2*(l-1) + h*c_out`` feedforward, ``l*(h^2-h)`` recurrent,
    ``l*h`` or ``4*l*h`` neuron, ``2*(h*l + c_out)`` norm and ``n_d*h*l`` delay
    weights. ``asd_trainable`` overrides the per-layer scheme flag.
    """
    ff = rec = neu = norm = delay = 0
    fan_in = spec.c_in
    for ls in spec.layers:
        ff += fan_in * ls.h
        if ls.recurrent:
            rec += ls.h * ls.h - ls.h
        neu += (4 if ls.model.adaptive else 1) * ls.h
        norm += 2 * ls.h
        trainable = ls.scheme.trainable if asd_trainable is None else asd_trainable
        if trainable:
            delay += ls.n_d * ls.h
        fan_in = ls.h
    ff += fan_in * spec.c_out
    norm += 2 * spec.c_out
    return ParamCount(ff, rec, neu, norm, delay)


def count_state_memory(spec: NetworkSpec) -> int:
    return sum((ls.model.n_s + ls.n_d) * ls.h for ls in spec.layers)


class Network:
    """Hidden spiking layers with batch norm and dropout, plus an accumulative
    non-spiking readout."""

    def __init__(self, spec: NetworkSpec, seed: int | RngStream = 0):
        self.spec = spec
        rng = seed if isinstance(seed, RngStream) else RngStream(seed)
        self.layers: list[LayerParams] = []
        self.bns: list[BatchNorm] = []
        fan_in = spec.c_in
        for ls in spec.layers:
            self.layers.append(LayerParams.init(ls, fan_in, rng))
            self.bns.append(BatchNorm(ls.h))
            fan_in = ls.h
        bound = 1.0 / np.sqrt(fan_in)
        self.W_out = rng.uniform(-bound, bound, (spec.c_out, fan_in))
        self.bn_out = BatchNorm(spec.c_out)

    # -- parameters --------------------------------------------------------
    def parameters(self) -> dict[str, np.ndarray]:
        """Trainable arrays by name (live references)."""
        out: dict[str, np.ndarray] = {}
        for i, (ls, p, bn) in enumerate(zip(self.spec.layers, self.layers, self.bns)):
            pre = f"layers.{i}."
            out[pre + "W"] = p.W
            if p.V is not None:
                out[pre + "V"] = p.V
            out[pre + "bn.gamma"] = bn.gamma
            out[pre + "bn.bias"] = bn.bias
            out[pre + "alpha"] = p.alpha
            if ls.model.adaptive:
                out[pre + "beta"] = p.beta
                out[pre + "a"] = p.a
                out[pre + "b"] = p.b
            if ls.n_d and ls.scheme.trainable:
                out[pre + "asd"] = p.asd
        out["readout.W"] = self.W_out
        out["readout.bn.gamma"] = self.bn_out.gamma
        out["readout.bn.bias"] = self.bn_out.bias
        return out

    def trainable_mask(self, name: str) -> np.ndarray | None:
        """Boolean mask of entries that are free parameters, or None if all are."""
        if name.endswith(".V"):
            h = self.parameters()[name].shape[0]
            return ~np.eye(h, dtype=bool)
        return None

    def count_trainable(self) -> int:
        total = 0
        for name, arr in self.parameters().items():
            mask = self.trainable_mask(name)
            total += int(mask.sum()) if mask is not None else arr.size
        return total

    def state_memory(self) -> int:
        """Per-sample state values held while stepping (u, w and delay buffers)."""
        total = 0
        for ls, p in zip(self.spec.layers, self.layers):
            total += ls.h + (ls.h if ls.model.adaptive else 0)
            if p.asd is not None:
                total += p.asd.size
        return total

    # -- forward -----------------------------------------------------------
    def forward(self, x: np.ndarray, training: bool = False, rng: RngStream | None = None):
        """``x`` is [B, T, c_in]; returns logits [B, c_out] and the tape."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 3 or x.shape[2] != self.spec.c_in:
            raise ValueError(f"expected input [B, T, {self.spec.c_in}], got {x.shape}")
        spec = self.spec
        h = np.ascontiguousarray(x.transpose(1, 0, 2))
        caches = []
        last = len(spec.layers) - 1
        for i, (ls, p, bn) in enumerate(zip(spec.layers, self.layers, self.bns)):
            # dropout sits between hidden layers; the readout sees the last layer's spikes as emitted
            rate = spec.dropout_rate if i < last else 0.0
            h, cache = layer_forward(ls, p, h, bn, training, rng, rate,
                                     spec.theta, spec.spike_mode, spec.tau)
            caches.append(cache)
        logits, rcache = readout_forward(self.W_out, self.bn_out, h, training)
        return logits, Tape(caches, rcache, x.shape[0])

    def predict(self, x: np.ndarray) -> np.ndarray:
        logits, _ = self.forward(x, training=False)
        return logits.argmax(axis=1)

    # -- checkpoints -------------------------------------------------------
    def state_arrays(self) -> dict[str, np.ndarray]:
        arrays = {}
        for i, (p, bn) in enumerate(zip(self.layers, self.bns)):
            pre = f"layers.{i}."
            for k in ("W", "V", "asd", "alpha", "beta", "a", "b"):
                v = getattr(p, k)
                if v is not None:
                    arrays[pre + k] = v
            for k in ("gamma", "bias", "running_mean", "running_var"):
                arrays[pre + "bn." + k] = getattr(bn, k)
        arrays["readout.W"] = self.W_out
        for k in ("gamma", "bias", "running_mean", "running_var"):
            arrays["readout.bn." + k] = getattr(self.bn_out, k)
        return arrays

    def save(self, path) -> None:
        """Write an ``.npz`` archive: every array under its parameter name plus
        ``__spec__``, the network spec as UTF-8 JSON bytes."""
        arrays = dict(self.state_arrays())
        arrays["__spec__"] = np.frombuffer(json.dumps(self.spec.to_dict()).encode(), dtype=np.uint8)
        with open(path, "wb") as fh:
            np.savez(fh, **arrays)

    @classmethod
    def load(cls, path) -> "Network":
        with np.load(path, allow_pickle=False) as z:
            spec = NetworkSpec.from_dict(json.loads(bytes(z["__spec__"]).decode()))
            net = cls(spec, seed=0)
            for i, (p, bn) in enumerate(zip(net.layers, net.bns)):
                pre = f"layers.{i}."
                for k in ("W", "V", "asd", "alpha", "beta", "a", "b"):
                    if getattr(p, k) is not None:
                        setattr(p, k, np.array(z[pre + k]))
                for k in ("gamma", "bias", "running_mean", "running_var"):
                    setattr(bn, k, np.array(z[pre + "bn." + k]))
            net.W_out = np.array(z["readout.W"])
            for k in ("gamma", "bias", "running_mean", "running_var"):
                setattr(net.bn_out, k, np.array(z["readout.bn." + k]))
        return net
