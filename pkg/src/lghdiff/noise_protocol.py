"""Pairwise key exchange producing Laplace noises that cancel inside each neighbourhood.

For every hub ``k`` and every pair ``(l, m)`` drawn from the two sides of its
neighbourhood split, ``l`` holds uniform secrets and ``m`` holds Gamma(2, 1)
secrets. Public keys are ``exp(-v)``; both parties raise the other's public
key to their own secret and obtain ``exp(-v_l * v_m)``, which is uniform
because ``v_l * v_m ~ Exp(1)``. Multiplying by an integer ``c`` and reducing
modulo 1 keeps it uniform, and the log-ratio of two such shared keys is
Laplace distributed. Senders on the positive side add the pair noise scaled
by ``1 / a_lk``, senders on the negative side subtract it, so the weighted
sum the hub computes is untouched.

Secrets live on a ``2**-key_bits`` grid. A party recovers the other's secret
from the public key by rounding ``-log(P)`` back onto the grid, and both then
evaluate ``exp(-(v_l * v_m))`` on the same product, which makes the two
derivations bit-identical. Plain ``P ** v`` differs between the two sides in
the last few ulps, and the reduction modulo 1 would magnify that.
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .errors import DegenerateKeyError, ProtocolError
from .topology import NeighborhoodSplit, Topology, split_neighborhood
from .transport import Message, MessageKind, TransportLog, relay_pair_exchange, send

DEFAULT_C = 65536
KEY_BITS = 40
CANCELLATION_RTOL = 1e-9


class UnprotectedEdgeWarning(UserWarning):
    """A hub has a single neighbour, so that edge carries no noise."""

    def __init__(self, hub: int, sender: int):
        super().__init__(f"agent {hub} has the single neighbour {sender}; edge sent unmasked")
        self.hub = hub
        self.sender = sender


class Role(str, enum.Enum):
    POSITIVE = "positive_side_uniform"
    NEGATIVE = "negative_side_gamma"


@dataclass(frozen=True)
class SecretKeys:
    v: np.ndarray
    v_prime: np.ndarray
    role: Role


@dataclass(frozen=True)
class PublicKeys:
    p: np.ndarray
    p_prime: np.ndarray


@dataclass(frozen=True)
class PairNoiseRecord:
    left: int
    right: int
    hub: int
    iteration: int
    noise: np.ndarray


@dataclass(frozen=True)
class EdgeMask:
    sender: int
    hub: int
    iteration: int
    mask: np.ndarray


class CancellationResult(NamedTuple):
    residual: float
    passed: bool


def laplace_scale(sigma_g: float, literal: bool = False) -> float:
    """Laplace scale giving noise variance ``sigma_g**2``.

    ``literal=True`` returns the multiplier ``sqrt(2) / sigma_g`` instead,
    which only matches the target variance when ``sigma_g == sqrt(2)``.
    """
    if sigma_g <= 0:
        raise ValueError("sigma_g must be positive")
    return math.sqrt(2.0) / sigma_g if literal else sigma_g / math.sqrt(2.0)


def _to_grid(x, key_bits):
    if key_bits is None:
        return x
    step = 2.0 ** key_bits
    return np.maximum(np.ceil(x * step), 1.0) / step


def _scalarize(x):
    return float(x) if np.ndim(x) == 0 else x


def sample_secrets(role: Role, rng: np.random.Generator, size=None,
                   key_bits: int | None = KEY_BITS) -> SecretKeys:
    """Draw the pair ``(v, v')`` for one side of an exchange.

    Positive side: U(0, 1]. Negative side: Gamma(2, 1) built as the sum of two
    unit exponentials. Values are rounded up onto the key grid and are at
    least one grid step, so public keys stay below 1.
    """
    shape = () if size is None else (size if isinstance(size, tuple) else (size,))
    role = Role(role)
    if role is Role.POSITIVE:
        x = 1.0 - rng.random((2,) + shape)
    else:
        x = -np.log1p(-rng.random((2, 2) + shape)).sum(axis=1)
    x = _to_grid(x, key_bits)
    return SecretKeys(_scalarize(x[0]), _scalarize(x[1]), role)


def public_key(sk: SecretKeys) -> PublicKeys:
    return PublicKeys(_scalarize(np.exp(-np.asarray(sk.v))),
                      _scalarize(np.exp(-np.asarray(sk.v_prime))))


def derive_shared_uniform(my_secret, other_public, c: int = DEFAULT_C,
                          key_bits: int | None = KEY_BITS):
    """Shared key ``frac(c * other_public ** my_secret)`` in ``[0, 1)``.

    With ``key_bits`` set, the exponentiation is carried out as
    ``exp(-(my_secret * recovered_other_secret))`` so that both parties get
    the same bits. ``key_bits=None`` evaluates the power directly.
    """
    if c < 1 or int(c) != c:
        raise ProtocolError(f"uniformisation multiplier must be a positive integer, got {c}")
    pub = np.asarray(other_public, dtype=float)
    if np.any(~((pub > 0) & (pub < 1))):
        raise ProtocolError("public keys must lie strictly inside (0, 1)")
    mine = np.asarray(my_secret, dtype=float)
    if key_bits is None:
        raw = pub ** mine
    else:
        step = 2.0 ** key_bits
        other = np.round(-np.log(pub) * step) / step
        raw = np.exp(-(mine * other))
    return _scalarize(np.mod(c * raw, 1.0))


def laplace_from_keys(u, u_prime, scale: float):
    """``scale * ln(u / u')``; Laplace(0, scale) for independent uniform keys."""
    u = np.asarray(u, dtype=float)
    u_prime = np.asarray(u_prime, dtype=float)
    if np.any(u <= 0) or np.any(u_prime <= 0):
        raise DegenerateKeyError("shared key is zero; the exchange must be rerun")
    return _scalarize(scale * np.log(u / u_prime))


@dataclass(frozen=True)
class HubExchange:
    """Outcome of all pair exchanges around one hub at one iteration.

    ``noise[i, j]`` is the M-vector shared by ``split.positive[i]`` and
    ``split.negative[j]``.
    """

    split: NeighborhoodSplit
    iteration: int
    noise: np.ndarray

    @property
    def hub(self) -> int:
        return self.split.agent

    def records(self) -> list[PairNoiseRecord]:
        return [PairNoiseRecord(l, m, self.hub, self.iteration, self.noise[i, j])
                for i, l in enumerate(self.split.positive)
                for j, m in enumerate(self.split.negative)]


def _swap_public_keys(pairs, iteration, left_pub, right_pub, transport, adj):
    """Relay each pair's public keys through its hub; returns what each side received."""
    if transport is None:
        return right_pub, left_pub
    got_left = np.empty_like(right_pub)
    got_right = np.empty_like(left_pub)
    for n, (hub, l, m) in enumerate(pairs):
        to_left, to_right = relay_pair_exchange(
            transport, adj, hub, l, m, left_pub[:, n], right_pub[:, n], iteration)
        if to_left is None or to_right is None:
            raise ProtocolError(f"public keys for pair ({l}, {m}) at hub {hub} were not delivered")
        got_left[:, n] = to_left
        got_right[:, n] = to_right
    return got_left, got_right


def _shared_keys(pairs, left_v, right_v, iteration, c, key_bits, transport, adj):
    """Exchange for secrets of shape ``(2, n_pairs, dim)``; returns the agreed keys."""
    left_pub = np.exp(-left_v)
    right_pub = np.exp(-right_v)
    got_left, got_right = _swap_public_keys(pairs, iteration, left_pub, right_pub, transport, adj)
    left_view = derive_shared_uniform(left_v, got_left, c, key_bits)
    right_view = derive_shared_uniform(right_v, got_right, c, key_bits)
    if not np.array_equal(left_view, right_view):
        raise ProtocolError("the two parties of a pair derived different keys")
    return np.asarray(left_view)


def _draw_secrets(role, demand, rngs, dim, key_bits):
    """Draw every agent's secrets for the round in one call per agent.

    ``demand`` maps agent to number of pairs; returns ``(2, total, dim)`` and
    the row offset of each agent.
    """
    offsets, chunks, row = {}, [], 0
    for a in sorted(demand):
        sk = sample_secrets(role, rngs[a], (demand[a], dim), key_bits)
        chunks.append(np.stack([sk.v, sk.v_prime]))
        offsets[a] = row
        row += demand[a]
    return np.concatenate(chunks, axis=1), offsets


def exchange_round(splits: Sequence[NeighborhoodSplit], sigma_g: float, dim: int,
                   rngs: Sequence, *, iteration: int = 0, c: int = DEFAULT_C,
                   key_bits: int | None = KEY_BITS, scale: float | None = None,
                   transport: TransportLog | None = None, adj=None) -> list[HubExchange]:
    """Run every pair exchange of the given neighbourhood splits.

    ``rngs[a]`` is agent ``a``'s private stream. In ascending agent order, each
    agent draws all its uniform secrets for the round in one call and then
    all its Gamma secrets in another. ``scale`` overrides the Laplace scale
    derived from ``sigma_g``.
    """
    if transport is not None and adj is None:
        raise ProtocolError("an adjacency is required to route messages")
    if scale is None:
        scale = laplace_scale(sigma_g)

    pairs, left_rows, right_rows = [], [], []
    left_demand, right_demand = {}, {}
    for split in splits:
        if not split.positive or not split.negative:
            for a in split.members:
                warnings.warn(UnprotectedEdgeWarning(split.agent, a), stacklevel=2)
            continue
        for l in split.positive:
            for m in split.negative:
                pairs.append((split.agent, l, m))
                left_rows.append((l, left_demand.get(l, 0)))
                right_rows.append((m, right_demand.get(m, 0)))
                left_demand[l] = left_demand.get(l, 0) + 1
                right_demand[m] = right_demand.get(m, 0) + 1

    noise = np.zeros((len(pairs), dim))
    if pairs:
        left_all, left_off = _draw_secrets(Role.POSITIVE, left_demand, rngs, dim, key_bits)
        right_all, right_off = _draw_secrets(Role.NEGATIVE, right_demand, rngs, dim, key_bits)
        left_v = left_all[:, [left_off[a] + r for a, r in left_rows]]
        right_v = right_all[:, [right_off[a] + r for a, r in right_rows]]
        keys = _shared_keys(pairs, left_v, right_v, iteration, c, key_bits, transport, adj)

        # a zero key would put log(0) into the noise: rerun that coordinate's exchange
        while True:
            bad = np.argwhere((keys[0] == 0) | (keys[1] == 0))
            if len(bad) == 0:
                break
            for n, d in bad:
                hub, l, m = pairs[n]
                l_sk = sample_secrets(Role.POSITIVE, rngs[l], (1, 1), key_bits)
                r_sk = sample_secrets(Role.NEGATIVE, rngs[m], (1, 1), key_bits)
                fresh = _shared_keys([pairs[n]], np.stack([l_sk.v, l_sk.v_prime]),
                                     np.stack([r_sk.v, r_sk.v_prime]), iteration, c, key_bits,
                                     transport, adj)
                keys[:, n, d] = fresh[:, 0, 0]
        noise = laplace_from_keys(keys[0], keys[1], scale)

    out, start = [], 0
    for split in splits:
        P, Q = len(split.positive), len(split.negative)
        if P and Q:
            block = noise[start:start + P * Q].reshape(P, Q, dim)
            start += P * Q
        else:
            block = np.zeros((P, Q, dim))
        out.append(HubExchange(split, iteration, block))
    return out


def exchange_hub(split: NeighborhoodSplit, sigma_g: float, dim: int, rngs: Sequence,
                 **kwargs) -> HubExchange:
    """Exchanges of a single neighbourhood; see :func:`exchange_round`."""
    return exchange_round([split], sigma_g, dim, rngs, **kwargs)[0]


def generate_pair_noises(split: NeighborhoodSplit, sigma_g: float, dim: int, rngs: Sequence,
                         **kwargs) -> list[PairNoiseRecord]:
    """One :class:`PairNoiseRecord` per pair of the split; see :func:`exchange_hub`."""
    return exchange_hub(split, sigma_g, dim, rngs, **kwargs).records()


def _masks_from_noise(split, noise, weights):
    """Per-sender mask vectors: positive side adds, negative side subtracts, both scaled by 1/a."""
    out = {}
    dim = noise.shape[-1]
    for i, l in enumerate(split.positive):
        out[l] = noise[i].sum(axis=0) / weights[l] if noise.size else np.zeros(dim)
    for j, m in enumerate(split.negative):
        out[m] = -noise[:, j].sum(axis=0) / weights[m] if noise.size else np.zeros(dim)
    return out


def assemble_edge_masks(records: Sequence[PairNoiseRecord], split: NeighborhoodSplit,
                        weights, dim: int | None = None, iteration: int | None = None
                        ) -> list[EdgeMask]:
    """Turn pair noises into the mask each neighbour adds to its message to the hub.

    ``weights`` is the hub's column of the combination matrix, indexed by
    sender. ``dim`` is only needed when ``records`` is empty.
    """
    weights = np.asarray(weights, dtype=float)
    for a in split.members:
        if not weights[a] > 0:
            raise ProtocolError(f"weight a[{a}, {split.agent}] must be positive")
    by_pair = {(r.left, r.right): r for r in records}
    if dim is None:
        if not records:
            raise ProtocolError("dim is required when there are no records")
        dim = len(records[0].noise)
    if iteration is None:
        iteration = records[0].iteration if records else 0
    noise = np.zeros((len(split.positive), len(split.negative), dim))
    for i, l in enumerate(split.positive):
        for j, m in enumerate(split.negative):
            rec = by_pair.get((l, m))
            if rec is None:
                raise ProtocolError(f"no noise record for pair ({l}, {m}) at hub {split.agent}")
            noise[i, j] = rec.noise
    masks = _masks_from_noise(split, noise, weights)
    return [EdgeMask(a, split.agent, iteration, masks[a]) for a in split.members]


def verify_local_cancellation(masks: Sequence[EdgeMask], weights,
                              tol: float = CANCELLATION_RTOL) -> CancellationResult:
    """Max-norm of the weighted mask sum at one hub.

    Passes when the residual is at most ``tol`` times the largest mask entry.
    """
    if not masks:
        return CancellationResult(0.0, True)
    weights = np.asarray(weights, dtype=float)
    total = sum(weights[em.sender] * np.asarray(em.mask) for em in masks)
    residual = float(np.max(np.abs(total)))
    scale = max(float(np.max(np.abs(em.mask))) for em in masks)
    return CancellationResult(residual, residual <= tol * scale)


class LocalGraphHomomorphicNoise:
    """Per-iteration mask generator for a whole network.

    Each agent owns one stream spawned from ``seed``; the hub draws its split
    from its own stream and the pair parties draw their secrets from theirs.
    ``masks(i)[m, k]`` is the mask sender ``m`` attaches to its message to hub
    ``k``; the diagonal stays zero.
    """

    def __init__(self, topology: Topology, sigma_g: float, dim: int, seed=0, *,
                 c: int = DEFAULT_C, key_bits: int | None = KEY_BITS,
                 literal_scale: bool = False, freeze_split: bool = False,
                 transport: TransportLog | None = None, keep_exchanges: bool = False):
        self.topology = topology
        self.dim = dim
        self.c = c
        self.key_bits = key_bits
        self.scale = laplace_scale(sigma_g, literal_scale)
        self.sigma_g = sigma_g
        self.freeze_split = freeze_split
        self.transport = transport
        self.keep_exchanges = keep_exchanges
        self.exchanges: list[HubExchange] = []
        K = topology.num_agents
        self.rngs = [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(K)]
        self._frozen: dict[int, NeighborhoodSplit] = {}

    def split(self, k: int, iteration: int) -> NeighborhoodSplit:
        adj = self.topology.adjacency
        if self.freeze_split and k in self._frozen:
            return self._frozen[k]
        split = split_neighborhood(k, adj, self.rngs[k])
        if self.transport is not None:
            for a in split.members:
                send(self.transport,
                     Message(k, a, iteration, MessageKind.SPLIT_ANNOUNCEMENT, split), adj)
        if self.freeze_split:
            self._frozen[k] = split
        return split

    def masks(self, iteration: int) -> np.ndarray:
        adj = self.topology.adjacency
        A = self.topology.weights
        K = adj.num_agents
        splits = [self.split(k, iteration) for k in range(K) if adj.degree(k) > 0]
        exchanges = exchange_round(splits, self.sigma_g, self.dim, self.rngs, iteration=iteration,
                                   c=self.c, key_bits=self.key_bits, scale=self.scale,
                                   transport=self.transport, adj=adj)
        if self.keep_exchanges:
            self.exchanges.extend(exchanges)
        hubs, left, right, noise = [], [], [], []
        for ex in exchanges:
            if ex.noise.size:
                P, Q = ex.noise.shape[:2]
                hubs.append(np.full(P * Q, ex.hub))
                left.append(np.repeat(ex.split.positive, Q))
                right.append(np.tile(ex.split.negative, P))
                noise.append(ex.noise.reshape(P * Q, self.dim))
        out = np.zeros((K, K, self.dim))
        if noise:
            hubs, left, right = (np.concatenate(x) for x in (hubs, left, right))
            noise = np.concatenate(noise)
            np.add.at(out, (left, hubs), noise / A[left, hubs][:, None])
            np.add.at(out, (right, hubs), -noise / A[right, hubs][:, None])
        return out
