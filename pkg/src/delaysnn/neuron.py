"""Single-neuron transitions with a shift-register delay state.

Each neuron carries, next to its intrinsic state (membrane ``u`` and, for the
adaptive models, recovery ``w``), a buffer of its last ``n_d`` delay inputs.
The buffer advances with a lower-shift transition,

    buf'[0] = i_d,   buf'[j] = a_j * buf[j-1],

and a per-neuron coefficient row ``asd`` mixes it into the membrane update.
All functions here are pure; they return new states.

Delay-term timing differs between model families and is kept literal: the
LIF update reads the buffer *before* it advances, the adLIF update reads it
*after*.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .core import RngStream

__all__ = [
    "DelayState",
    "ShiftCoeffs",
    "NeuronState",
    "NeuronParams",
    "Scheme",
    "DelayScheme",
    "GenericNeuronSpec",
    "delay_step",
    "build_asd",
    "surrogate_spike",
    "spike_fn",
    "lif_step",
    "adlif_step",
    "generic_step",
    "lif_generic_spec",
    "adlif_generic_spec",
    "PRE_UPDATE",
    "POST_UPDATE",
]

PRE_UPDATE = "pre"
POST_UPDATE = "post"

BOXCAR_HALF_WIDTH = 0.5
BOXCAR_HEIGHT = 0.5


@dataclass(frozen=True)
class DelayState:
    buf: np.ndarray

    @classmethod
    def zeros(cls, n_d: int, batch: tuple[int, ...] = ()) -> "DelayState":
        return cls(np.zeros((*batch, n_d)))

    @property
    def n_d(self) -> int:
        return self.buf.shape[-1]


@dataclass(frozen=True)
class ShiftCoeffs:
    """Subdiagonal entries ``a_1 .. a_{n_d-1}`` of the shift transition."""

    a: np.ndarray

    @classmethod
    def ones(cls, n_d: int) -> "ShiftCoeffs":
        return cls(np.ones(max(n_d - 1, 0)))


@dataclass(frozen=True)
class NeuronState:
    u: float = 0.0
    w: float | None = None  # None for the LIF family


@dataclass(frozen=True)
class NeuronParams:
    alpha: float
    beta: float = 0.97
    a_adapt: float = 0.0
    b_adapt: float = 0.0
    theta: float = 1.0


class Scheme(str, enum.Enum):
    ONES = "ones"
    LINEAR_DECAY = "lineardecay"
    EXP_DECAY = "expdecay"
    UNIFORM = "uniform"

    @classmethod
    def parse(cls, name: "str | Scheme") -> "Scheme":
        if isinstance(name, Scheme):
            return name
        key = name.strip().lower().replace("_", "").replace("-", "")
        for s in cls:
            if s.value == key:
                return s
        raise ValueError(f"unknown delay scheme {name!r}; expected one of {[s.value for s in cls]}")


@dataclass(frozen=True)
class DelayScheme:
    kind: Scheme = Scheme.UNIFORM
    trainable: bool = False

    def __post_init__(self):
        object.__setattr__(self, "kind", Scheme.parse(self.kind))


def delay_step(st: DelayState, coeffs: ShiftCoeffs, i_d) -> DelayState:
    """Shift the buffer one slot and write ``i_d`` into slot 0.

    Leading axes of ``buf`` are independent streams; ``i_d`` broadcasts
    against them.
    """
    n_d = st.n_d
    if n_d == 0:
        return st
    if len(coeffs.a) != n_d - 1:
        raise ValueError(f"need {n_d - 1} shift coefficients for n_d={n_d}, got {len(coeffs.a)}")
    new = np.empty_like(st.buf, dtype=np.float64)
    new[..., 0] = i_d
    new[..., 1:] = coeffs.a * st.buf[..., :-1]
    return DelayState(new)


def build_asd(scheme: DelayScheme | Scheme | str, n_d: int, rng: RngStream | None = None) -> np.ndarray:
    """One neuron's coefficient row for the given initialization scheme."""
    kind = scheme.kind if isinstance(scheme, DelayScheme) else Scheme.parse(scheme)
    if n_d < 1:
        raise ValueError("n_d must be >= 1")
    j = np.arange(n_d, dtype=np.float64)
    if kind is Scheme.ONES:
        return np.ones(n_d)
    if kind is Scheme.LINEAR_DECAY:
        return (n_d - j) / n_d
    if kind is Scheme.EXP_DECAY:
        return np.exp(-0.5 * j)
    if kind is Scheme.UNIFORM:
        if rng is None:
            raise ValueError("the uniform scheme needs a random stream")
        return np.asarray(rng.uniform_open_closed(n_d), dtype=np.float64)
    raise ValueError(f"unknown delay scheme {kind!r}")


def surrogate_spike(u: float, theta: float) -> tuple[int, float]:
    """Heaviside spike with the boxcar surrogate derivative."""
    s = 1 if u >= theta else 0
    dgrad = BOXCAR_HEIGHT if abs(u - theta) <= BOXCAR_HALF_WIDTH else 0.0
    return s, dgrad


def spike_fn(u: np.ndarray, theta: float, mode: str = "boxcar", tau: float = 0.2):
    """Vectorised spike nonlinearity returning ``(s, ds/du)``.

    ``"boxcar"`` is the hard threshold with the boxcar surrogate.
    ``"sigmoid"`` is a smooth relaxation ``sigmoid((u - theta) / tau)`` whose
    derivative is exact, used for finite-difference gradient checks.
    """
    if mode == "boxcar":
        s = (u >= theta).astype(np.float64)
        ds = np.where(np.abs(u - theta) <= BOXCAR_HALF_WIDTH, BOXCAR_HEIGHT, 0.0)
        return s, ds
    if mode == "sigmoid":
        z = (u - theta) / tau
        s = 0.5 * (1.0 + np.tanh(0.5 * z))
        return s, s * (1.0 - s) / tau
    raise ValueError(f"unknown spike mode {mode!r}")


def _check_finite(*vals):
    for v in vals:
        if not math.isfinite(v):
            raise ValueError(f"non-finite neuron input {v!r}")


def lif_step(st: NeuronState, dl: DelayState, p: NeuronParams, asd, i_s: float, i_d: float):
    """One LIF step; the delay term uses the buffer before it advances."""
    asd = np.asarray(asd, dtype=np.float64)
    if len(asd) != dl.n_d:
        raise ValueError(f"asd has {len(asd)} entries for n_d={dl.n_d}")
    _check_finite(st.u, i_s, i_d)
    s, _ = surrogate_spike(st.u, p.theta)
    u = p.alpha * st.u + (1 - p.alpha) * i_s - p.alpha * p.theta * s
    if dl.n_d:
        u = u + float(asd @ dl.buf)
    dl_next = delay_step(dl, ShiftCoeffs.ones(dl.n_d), i_d)
    return NeuronState(u=u), dl_next, s


def adlif_step(st: NeuronState, dl: DelayState, p: NeuronParams, asd, i_s: float, i_d: float):
    """One adLIF step; the buffer advances first and the membrane reads the
    advanced buffer."""
    asd = np.asarray(asd, dtype=np.float64)
    if len(asd) != dl.n_d:
        raise ValueError(f"asd has {len(asd)} entries for n_d={dl.n_d}")
    if st.w is None:
        raise ValueError("adLIF state needs an adaptation variable")
    _check_finite(st.u, st.w, i_s, i_d)
    s, _ = surrogate_spike(st.u, p.theta)
    dl_next = delay_step(dl, ShiftCoeffs.ones(dl.n_d), i_d)
    u = p.alpha * st.u + (1 - p.alpha) * (i_s - st.w) - p.alpha * p.theta * s
    if dl.n_d:
        u = u + float(asd @ dl_next.buf)
    w = p.a_adapt * st.u + p.beta * st.w + p.b_adapt * s
    return NeuronState(u=u, w=w), dl_next, s


@dataclass
class GenericNeuronSpec:
    """Matrices of the general state-space neuron with a delay state.

    Shapes: ``A_s`` (n_s, n_s), ``B_s``/``R``/``C_s`` (n_s,), ``A_d`` (n_d, n_d),
    ``B_d``/``C_d`` (n_d,), ``A_sd`` (n_s, n_d). ``delay_timing`` selects
    whether the intrinsic update reads the delay state before (``"pre"``) or
    after (``"post"``) it advances.
    """

    A_s: np.ndarray
    B_s: np.ndarray
    C_s: np.ndarray
    R: np.ndarray
    A_d: np.ndarray
    B_d: np.ndarray
    C_d: np.ndarray
    A_sd: np.ndarray
    theta: float = 1.0
    delay_timing: str = PRE_UPDATE

    def __post_init__(self):
        f = lambda x: np.asarray(x, dtype=np.float64)
        self.A_s, self.B_s, self.C_s, self.R = f(self.A_s), f(self.B_s), f(self.C_s), f(self.R)
        self.A_d, self.B_d, self.C_d, self.A_sd = f(self.A_d), f(self.B_d), f(self.C_d), f(self.A_sd)
        n_s, n_d = self.n_s, self.n_d
        shapes = {
            "A_s": (self.A_s.shape, (n_s, n_s)),
            "C_s": (self.C_s.shape, (n_s,)),
            "R": (self.R.shape, (n_s,)),
            "A_d": (self.A_d.shape, (n_d, n_d)),
            "C_d": (self.C_d.shape, (n_d,)),
            "A_sd": (self.A_sd.shape, (n_s, n_d)),
        }
        for name, (got, want) in shapes.items():
            if got != want:
                raise ValueError(f"{name} has shape {got}, expected {want}")
        if self.delay_timing not in (PRE_UPDATE, POST_UPDATE):
            raise ValueError(f"delay_timing must be 'pre' or 'post', got {self.delay_timing!r}")

    @property
    def n_s(self) -> int:
        return self.B_s.shape[0]

    @property
    def n_d(self) -> int:
        return self.B_d.shape[0]


def generic_step(spec: GenericNeuronSpec, v_s, v_d, i_s: float, i_d: float):
    v_s = np.asarray(v_s, dtype=np.float64)
    v_d = np.asarray(v_d, dtype=np.float64)
    if v_s.shape != (spec.n_s,) or v_d.shape != (spec.n_d,):
        raise ValueError(f"state shapes {v_s.shape}, {v_d.shape} do not match spec ({spec.n_s}, {spec.n_d})")
    drive = spec.C_s @ v_s + spec.C_d @ v_d
    s = 1 if drive >= spec.theta else 0
    v_d_next = spec.A_d @ v_d + spec.B_d * i_d
    v_d_used = v_d if spec.delay_timing == PRE_UPDATE else v_d_next
    v_s_next = spec.A_s @ v_s + spec.B_s * i_s + spec.A_sd @ v_d_used - spec.R * s
    return v_s_next, v_d_next, s


def _shift_matrices(n_d: int):
    A_d = np.eye(n_d, k=-1)
    B_d = np.zeros(n_d)
    if n_d:
        B_d[0] = 1.0
    return A_d, B_d


def lif_generic_spec(p: NeuronParams, asd) -> GenericNeuronSpec:
    asd = np.asarray(asd, dtype=np.float64)
    A_d, B_d = _shift_matrices(len(asd))
    return GenericNeuronSpec(
        A_s=[[p.alpha]], B_s=[1 - p.alpha], C_s=[1.0], R=[p.alpha * p.theta],
        A_d=A_d, B_d=B_d, C_d=np.zeros(len(asd)), A_sd=asd[None, :],
        theta=p.theta, delay_timing=PRE_UPDATE,
    )


def adlif_generic_spec(p: NeuronParams, asd) -> GenericNeuronSpec:
    """State ordering ``[u, w]``; the delay feeds only the membrane row."""
    asd = np.asarray(asd, dtype=np.float64)
    n_d = len(asd)
    A_d, B_d = _shift_matrices(n_d)
    A_sd = np.zeros((2, n_d))
    A_sd[0] = asd
    return GenericNeuronSpec(
        A_s=[[p.alpha, -(1 - p.alpha)], [p.a_adapt, p.beta]],
        B_s=[1 - p.alpha, 0.0],
        C_s=[1.0, 0.0],
        R=[p.alpha * p.theta, -p.b_adapt],
        A_d=A_d, B_d=B_d, C_d=np.zeros(n_d), A_sd=A_sd,
        theta=p.theta, delay_timing=POST_UPDATE,
    )
