"""Shapley value solvers for games given as batched value functions.

A game exposes ``n_players`` and ``values(masks)``, where ``masks`` is a
boolean array of shape (B, n) and the result holds the worth of each
coalition.  Solvers assume nothing else about the game.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Protocol, Sequence

import numpy as np

from .errors import SingularSystem, TooManyPlayers, ValidationError

MAX_EXACT_PLAYERS = 20
_CHUNK = 1 << 15


class Game(Protocol):
    n_players: int

    def values(self, masks: np.ndarray) -> np.ndarray: ...


def rng_for(seed: int, *key: int) -> np.random.Generator:
    """Independent stream for ``(seed, *key)``; used to derive per-sample
    streams by counter so results do not depend on evaluation order."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(key)))


@dataclass
class TableGame:
    """Game from a full table of 2**n worths indexed by coalition bitmask
    (bit i set = player i present)."""

    table: np.ndarray

    def __post_init__(self):
        self.table = np.asarray(self.table, dtype=float)
        n = int(round(math.log2(len(self.table))))
        if 1 << n != len(self.table):
            raise ValidationError("table length must be a power of two")
        self.n_players = n

    def values(self, masks):
        masks = np.asarray(masks, dtype=bool)
        return self.table[masks @ (1 << np.arange(self.n_players))]


@dataclass
class FunctionGame:
    """Game from a Python callable on a frozenset of player indices."""

    n_players: int
    func: Callable[[frozenset], float]

    def values(self, masks):
        return np.array([self.func(frozenset(np.flatnonzero(m).tolist())) for m in masks], dtype=float)


def all_masks(n: int, start: int = 0, stop: int | None = None) -> np.ndarray:
    ints = np.arange(start, (1 << n) if stop is None else stop, dtype=np.int64)
    return ((ints[:, None] >> np.arange(n)) & 1).astype(bool)


def coalition_table(game: Game) -> np.ndarray:
    """Worth of every coalition, indexed by bitmask."""
    n = game.n_players
    total = 1 << n
    out = np.empty(total)
    for start in range(0, total, _CHUNK):
        stop = min(start + _CHUNK, total)
        out[start:stop] = game.values(all_masks(n, start, stop))
    return out


def shapley_weights(n: int) -> np.ndarray:
    """|S|!(n-|S|-1)!/n! for |S| = 0..n-1."""
    return np.array(
        [math.factorial(s) * math.factorial(n - s - 1) / math.factorial(n) for s in range(n)]
    )


def exact_shapley(game: Game, max_players: int = MAX_EXACT_PLAYERS) -> np.ndarray:
    n = game.n_players
    if n > max_players:
        raise TooManyPlayers(
            f"{n} players exceeds the exact-enumeration limit of {max_players}; "
            "use the permutation or kernel engine"
        )
    if n == 0:
        return np.zeros(0)
    v = coalition_table(game)
    return shapley_from_table(v, n)


def shapley_from_table(v: np.ndarray, n: int) -> np.ndarray:
    ints = np.arange(1 << n, dtype=np.int64)
    size = np.zeros(1 << n, dtype=np.int64)
    for i in range(n):
        size += (ints >> i) & 1
    w = shapley_weights(n)
    phi = np.empty(n)
    for i in range(n):
        bit = 1 << i
        without = ints[(ints & bit) == 0]
        phi[i] = np.dot(w[size[without]], v[without | bit] - v[without])
    return phi


def permutation_shapley(game: Game, samples: int, seed: int, key: Sequence[int] = ()) -> np.ndarray:
    """Average marginal contribution over ``samples`` random orderings.

    Ordering ``j`` is drawn from its own stream ``(seed, *key, j)``.
    """
    if samples < 1:
        raise ValidationError("permutation sampling needs at least one sample")
    n = game.n_players
    if n == 0:
        return np.zeros(0)
    perms = np.stack([rng_for(seed, *key, j).permutation(n) for j in range(samples)])
    contrib = np.empty((samples, n))
    steps = np.arange(n + 1)
    block = max(1, _CHUNK // (n + 1))
    for start in range(0, samples, block):
        p = perms[start:start + block]
        pos = np.argsort(p, axis=1)
        # mask[b, t, i]: player i precedes step t in ordering b
        masks = pos[:, None, :] < steps[None, :, None]
        vals = game.values(masks.reshape(-1, n)).reshape(len(p), n + 1)
        marg = np.diff(vals, axis=1)
        rows = np.arange(len(p))[:, None]
        contrib[start + rows, p] = marg
    return contrib.mean(axis=0)


def kernel_weight(n: int, s: int) -> float:
    return (n - 1) / (math.comb(n, s) * s * (n - s))


def default_kernel_samples(n: int) -> int:
    return min((1 << n) - 2, 2048) if n < 63 else 2048


def kernel_shapley(game: Game, samples: int, seed: int, key: Sequence[int] = ()) -> np.ndarray:
    """Constrained weighted least squares over coalitions (KernelSHAP).

    With ``samples >= 2**n - 2`` every proper coalition is used with its exact
    kernel weight and the result is the exact Shapley value.  Otherwise
    coalition sizes are drawn in proportion to their total kernel mass and
    members uniformly, each sampled coalition weighted by its draw count.
    Completeness is imposed exactly by eliminating the last player.
    """
    n = game.n_players
    if n == 0:
        return np.zeros(0)
    empty_full = game.values(np.array([np.zeros(n, bool), np.ones(n, bool)]))
    v0, total = empty_full[0], empty_full[1] - empty_full[0]
    if n == 1:
        return np.array([total])
    n_proper = (1 << n) - 2 if n < 63 else None
    if n_proper is not None and samples >= n_proper:
        masks = all_masks(n, 1, (1 << n) - 1)
        sizes = masks.sum(axis=1)
        weights = np.array([0.0] + [kernel_weight(n, s) for s in range(1, n)])[sizes]
    else:
        if samples < n + 2:
            raise ValidationError(f"kernel engine needs at least n+2 = {n + 2} samples, got {samples}")
        rng = rng_for(seed, *key)
        size_mass = np.array([(n - 1) / (s * (n - s)) for s in range(1, n)])
        sizes = rng.choice(np.arange(1, n), size=samples, p=size_mass / size_mass.sum())
        drawn = np.zeros((samples, n), dtype=bool)
        for j, s in enumerate(sizes):
            drawn[j, rng.permutation(n)[:s]] = True
        masks, weights = np.unique(drawn, axis=0, return_counts=True)
        weights = weights.astype(float)
    y = game.values(masks) - v0
    z = masks.astype(float)
    a = z[:, :-1] - z[:, -1:]
    b = y - z[:, -1] * total
    sw = np.sqrt(weights)
    sol, _, rank, _ = np.linalg.lstsq(a * sw[:, None], b * sw, rcond=None)
    if rank < n - 1:
        raise SingularSystem(
            f"sampled coalition design has rank {rank} < {n - 1}; resample with a different seed"
        )
    return np.append(sol, total - sol.sum())
