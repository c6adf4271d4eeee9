"""Adapt-then-combine diffusion with optional privacy masks on every shared iterate.

Each round every agent takes a stochastic gradient step on its own data
(adapt), sends the result to its neighbours with a per-edge mask, and then
forms the weighted average of what it received (combine). The self message is
never masked.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import DivergedError, InvalidConfigError, ProtocolError
from .noise_protocol import DEFAULT_C, KEY_BITS, LocalGraphHomomorphicNoise, laplace_scale
from .topology import Topology
from .transport import Message, MessageKind, TransportLog, send

DIVERGENCE_GUARD = 1e12


class PrivacyMode(str, enum.Enum):
    NON_PRIVATE = "non_private"
    NAIVE_LAPLACE = "naive_laplace"
    LOCAL_GRAPH_HOMOMORPHIC = "local_graph_homomorphic"

    @classmethod
    def parse(cls, name: str) -> "PrivacyMode":
        aliases = {"naive": cls.NAIVE_LAPLACE, "lgh": cls.LOCAL_GRAPH_HOMOMORPHIC,
                   "nonprivate": cls.NON_PRIVATE, "none": cls.NON_PRIVATE}
        key = name.strip().lower().replace("-", "_")
        if key in aliases:
            return aliases[key]
        try:
            return cls(key)
        except ValueError:
            raise InvalidConfigError(f"unknown privacy mode {name!r}") from None


@dataclass(frozen=True)
class LossSpec:
    """Per-sample loss ``(d - u.w)**2 + rho_reg * |w|**2``."""

    rho_reg: float = 0.01
    kind: str = "regularized_quadratic"

    def __post_init__(self):
        if self.rho_reg < 0:
            raise InvalidConfigError("regulariser must be nonnegative")
        if self.kind != "regularized_quadratic":
            raise InvalidConfigError(f"unsupported loss {self.kind!r}")


@dataclass(frozen=True)
class AgentData:
    """Local dataset: features ``u`` of shape (N, M) and targets ``d`` of shape (N,)."""

    u: np.ndarray
    d: np.ndarray

    def __post_init__(self):
        if self.u.ndim != 2 or self.d.shape != (self.u.shape[0],) or len(self.d) < 1:
            raise InvalidConfigError("agent data needs u of shape (N, M) and d of shape (N,), N >= 1")

    def __len__(self):
        return len(self.d)


@dataclass
class AgentState:
    w: np.ndarray
    data: AgentData
    rng: np.random.Generator


def gradient(w, u, d, rho_reg: float = 0.0) -> np.ndarray:
    """Gradient of ``(d - u.w)**2 + rho_reg*|w|**2`` in ``w``.

    ``u`` may also be a batch of shape (B, M) with ``d`` of shape (B,); the
    result is then the batch mean.
    """
    w = np.asarray(w, dtype=float)
    u = np.asarray(u, dtype=float)
    d = np.asarray(d, dtype=float)
    if u.shape[-1] != w.shape[-1] or u.shape[:-1] != d.shape:
        raise InvalidConfigError(f"shape mismatch: w{w.shape}, u{u.shape}, d{d.shape}")
    resid = d - u @ w
    g = -2.0 * (u * resid[..., None]) if u.ndim > 1 else -2.0 * u * resid
    if u.ndim > 1:
        g = g.mean(axis=0)
    return g + 2.0 * rho_reg * w


def adapt(w, grad, mu: float) -> np.ndarray:
    if mu <= 0:
        raise InvalidConfigError("step size must be positive")
    return np.asarray(w) - mu * np.asarray(grad)


def combine(k: int, received: dict, weights) -> np.ndarray:
    """Weighted sum of everything hub ``k`` received, its own iterate included.

    ``received`` maps each sender in N_k to its (masked) vector and ``weights``
    is column ``k`` of the combination matrix.
    """
    weights = np.asarray(weights, dtype=float)
    senders = set(np.flatnonzero(weights > 0).tolist())
    missing = senders - set(received)
    if missing:
        raise ProtocolError(f"hub {k} is missing messages from {sorted(missing)}")
    extra = set(received) - senders
    if extra:
        raise ProtocolError(f"hub {k} received messages from non-neighbours {sorted(extra)}")
    return sum(weights[m] * np.asarray(received[m], dtype=float) for m in sorted(received))


class NaiveLaplaceNoise:
    """Independent Laplace masks on every directed non-self edge, no cancellation."""

    def __init__(self, topology: Topology, sigma_g: float, dim: int, seed=0,
                 literal_scale: bool = False):
        self.scale = laplace_scale(sigma_g, literal_scale)
        self.dim = dim
        self.rng = np.random.default_rng(seed)
        edge = topology.adjacency.matrix()
        np.fill_diagonal(edge, False)
        self._edge = edge[:, :, None]

    def masks(self, iteration: int) -> np.ndarray:
        K = self._edge.shape[0]
        return self.rng.laplace(0.0, self.scale, (K, K, self.dim)) * self._edge


@dataclass
class DiffusionConfig:
    mu: float = 0.4
    sigma_g2: float = 0.01
    iterations: int = 1000
    rho_reg: float = 0.01
    batch_size: int = 1
    c: int = DEFAULT_C
    key_bits: int | None = KEY_BITS
    freeze_split: bool = False
    literal_noise_scale: bool = False
    audit_transport: bool = False
    keep_messages: bool = True

    def validate(self):
        if self.mu <= 0:
            raise InvalidConfigError("mu must be positive")
        if self.sigma_g2 <= 0:
            raise InvalidConfigError("sigma_g2 must be positive")
        if self.iterations < 1 or self.batch_size < 1 or self.c < 1:
            raise InvalidConfigError("iterations, batch_size and c must be positive")
        if self.rho_reg < 0:
            raise InvalidConfigError("rho_reg must be nonnegative")


@dataclass
class DiffusionResult:
    """``history[i - 1, k]`` is agent ``k``'s iterate after round ``i``."""

    history: np.ndarray
    mode: PrivacyMode
    transport: TransportLog | None = None
    noise_source: object = None
    mask_history: list = field(default_factory=list)


def _stack_data(datasets):
    K = len(datasets)
    sizes = np.array([len(ds) for ds in datasets])
    dim = datasets[0].u.shape[1]
    U = np.zeros((K, sizes.max(), dim))
    D = np.zeros((K, sizes.max()))
    for k, ds in enumerate(datasets):
        if ds.u.shape[1] != dim:
            raise InvalidConfigError("all agents must share the model dimension")
        U[k, :len(ds)] = ds.u
        D[k, :len(ds)] = ds.d
    return U, D, sizes


def run_diffusion(config: DiffusionConfig, topology: Topology, datasets, mode,
                  gradient_seed=0, noise_seed=1, w0=None, keep_masks: bool = False
                  ) -> DiffusionResult:
    """Run ``config.iterations`` synchronous ATC rounds.

    Mini-batch indices come from a stream seeded by ``gradient_seed``, masks
    from streams seeded by ``noise_seed``, so the same ``gradient_seed`` gives
    the same gradient samples in every mode.
    """
    config.validate()
    mode = PrivacyMode.parse(mode) if isinstance(mode, str) else PrivacyMode(mode)
    K = topology.num_agents
    if len(datasets) != K:
        raise InvalidConfigError(f"{len(datasets)} datasets for {K} agents")
    U, D, sizes = _stack_data(datasets)
    if config.batch_size > sizes.min():
        raise InvalidConfigError("batch_size exceeds the smallest local dataset")
    dim = U.shape[2]
    A = topology.weights
    adj = topology.adjacency
    sigma_g = float(np.sqrt(config.sigma_g2))

    transport = TransportLog(config.keep_messages) if config.audit_transport else None
    if mode is PrivacyMode.LOCAL_GRAPH_HOMOMORPHIC:
        noise = LocalGraphHomomorphicNoise(
            topology, sigma_g, dim, noise_seed, c=config.c, key_bits=config.key_bits,
            literal_scale=config.literal_noise_scale, freeze_split=config.freeze_split,
            transport=transport)
    elif mode is PrivacyMode.NAIVE_LAPLACE:
        noise = NaiveLaplaceNoise(topology, sigma_g, dim, noise_seed, config.literal_noise_scale)
    else:
        noise = None

    grad_rng = np.random.default_rng(gradient_seed)
    W = np.zeros((K, dim)) if w0 is None else np.array(w0, dtype=float).reshape(K, dim)
    history = np.empty((config.iterations, K, dim))
    mask_history = []
    rows = np.arange(K)[:, None]
    edges = [(m, k) for k in range(K) for m in adj.neighbors(k, include_self=False)]

    for i in range(1, config.iterations + 1):
        idx = (grad_rng.random((K, config.batch_size)) * sizes[:, None]).astype(np.intp)
        u, d = U[rows, idx], D[rows, idx]                   # (K, B, M), (K, B)
        resid = d - np.einsum("kbm,km->kb", u, W)
        grads = -2.0 * np.einsum("kbm,kb->km", u, resid) / config.batch_size + 2.0 * config.rho_reg * W
        psi = W - config.mu * grads

        masks = np.zeros((K, K, dim)) if noise is None else noise.masks(i)
        received = psi[:, None, :] + masks                  # received[m, k]: what m sends to k
        if transport is not None:
            for m, k in edges:
                send(transport, Message(m, k, i, MessageKind.MASKED_MODEL, received[m, k]), adj)
        W = np.einsum("mk,mkd->kd", A, received)
        if keep_masks:
            mask_history.append(masks)

        norm = float(np.max(np.linalg.norm(W, axis=1)))
        if not np.isfinite(norm) or norm > DIVERGENCE_GUARD:
            raise DivergedError(i, norm)
        history[i - 1] = W

    return DiffusionResult(history, mode, transport, noise, mask_history)
