"""Attribution for measures that cannot be pre-aggregated.

Players are (sub-cube, sub-measure) cells as in the GAM game, but a
coalition substitutes raw records: sub-measure ``i`` is re-aggregated over
explicand records of the sub-cubes whose cell ``(j, i)`` is in the
coalition and reference records of the others.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import Sequence

import numpy as np

from . import games
from .cube import RecordStore, RecordSubset, aggregate_index
from .errors import EngineMismatch, TooManyPlayers, ValidationError
from .expr import MeasureSpec
from .gam import DEFAULT_PERMUTATIONS, EngineConfig, ReferenceSpec, average
from .model import CoalitionMask, ContributionMatrix, DrillPartition


class NonGamGame:
    def __init__(
        self,
        store: RecordStore,
        part: DrillPartition,
        spec: MeasureSpec,
        explicand: str,
        reference: str,
    ):
        if explicand == reference:
            raise ValidationError("explicand and reference time steps must differ")
        if any(a is None for a in spec.aggregators):
            raise ValidationError("raw-record attribution needs an aggregator for every sub-measure")
        for agg in spec.aggregators:
            store.column(agg.column)
        self.store, self.part, self.spec = store, part, spec
        self.explicand, self.reference = explicand, reference
        in_parent = store.mask(part.parent)
        children = [in_parent & store.mask(c) for c in part.children]
        t_mask, r_mask = store.timesteps == explicand, store.timesteps == reference
        self.idx_t = [np.flatnonzero(c & t_mask) for c in children]
        self.idx_r = [np.flatnonzero(c & r_mask) for c in children]
        self._sub_memo: dict[tuple[int, bytes], float] = {}
        self._worth_memo: dict[bytes, float] = {}
        self.y_ref = float(spec(self.submeasure_values(np.zeros(self.shape, dtype=bool))))
        self.y_target = float(spec(self.submeasure_values(np.ones(self.shape, dtype=bool))))
        self.delta_y = self.y_target - self.y_ref

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.part), self.spec.q

    @property
    def rows(self):
        return self.part.labels

    def coalition_index(self, z_col: np.ndarray) -> np.ndarray:
        parts = [self.idx_t[j] if z else self.idx_r[j] for j, z in enumerate(z_col)]
        return np.concatenate(parts) if parts else np.zeros(0, dtype=np.int64)

    def submeasure_values(self, z: np.ndarray) -> np.ndarray:
        out = np.empty(self.spec.q)
        for i, agg in enumerate(self.spec.aggregators):
            col = np.ascontiguousarray(z[:, i])
            key = (i, col.tobytes())
            val = self._sub_memo.get(key)
            if val is None:
                val = aggregate_index(self.store, self.coalition_index(col), agg)
                self._sub_memo[key] = val
            out[i] = val
        return out

    def worth(self, z: np.ndarray) -> float:
        z = np.asarray(z, dtype=bool)
        key = z.tobytes()
        val = self._worth_memo.get(key)
        if val is None:
            val = float(self.spec(self.submeasure_values(z))) - self.y_ref
            self._worth_memo[key] = val
        return val

    def dummy_cells(self) -> np.ndarray:
        """Cells whose explicand and reference records carry the same multiset
        of values for the cell's aggregated column; swapping them can never
        change the worth."""
        p, q = self.shape
        dummy = np.zeros((p, q), dtype=bool)
        for i, agg in enumerate(self.spec.aggregators):
            col = self.store.column(agg.column)
            for j in range(p):
                a, b = self.idx_t[j], self.idx_r[j]
                if len(a) != len(b):
                    continue
                if agg.kind == "count":
                    dummy[j, i] = True
                elif agg.kind == "sum":
                    dummy[j, i] = np.array_equal(np.sort(col.numbers[a]), np.sort(col.numbers[b]), equal_nan=True)
                else:
                    dummy[j, i] = np.array_equal(np.sort(col.codes[a]), np.sort(col.codes[b]))
        return dummy

    def with_reference(self, reference: str) -> NonGamGame:
        return NonGamGame(self.store, self.part, self.spec, self.explicand, reference)


class _CellPlayers:
    """Value function over the non-pruned cells; pruned cells stay at the
    reference."""

    def __init__(self, game: NonGamGame, cells: np.ndarray):
        self.game = game
        self.cells = cells
        self.n_players = len(cells)

    def values(self, masks):
        masks = np.asarray(masks, dtype=bool)
        p, q = self.game.shape
        out = np.empty(len(masks))
        for b, m in enumerate(masks):
            z = np.zeros(p * q, dtype=bool)
            z[self.cells[m]] = True
            out[b] = self.game.worth(z.reshape(p, q))
        return out


def build_coalition_dataset(game: NonGamGame, z: CoalitionMask | np.ndarray, i: int) -> RecordSubset:
    z = z.values if isinstance(z, CoalitionMask) else np.asarray(z, dtype=bool)
    if z.shape != game.shape:
        raise ValidationError(f"mask shape {z.shape} does not match game shape {game.shape}")
    return RecordSubset(game.store, game.coalition_index(z[:, i]))


def set_function_nongam(game: NonGamGame, z: CoalitionMask | np.ndarray) -> float:
    z = z.values if isinstance(z, CoalitionMask) else np.asarray(z, dtype=bool)
    if z.shape != game.shape:
        raise ValidationError(f"mask shape {z.shape} does not match game shape {game.shape}")
    return game.worth(z)


def _solve(game: NonGamGame, engine: str, config: EngineConfig, key: Sequence[int], prune: bool) -> ContributionMatrix:
    p, q = game.shape
    active = ~game.dummy_cells().ravel() if prune else np.ones(p * q, dtype=bool)
    cells = np.flatnonzero(active)
    players = _CellPlayers(game, cells)
    if engine == "exact":
        if len(cells) > games.MAX_EXACT_PLAYERS:
            raise TooManyPlayers(
                f"{len(cells)} effective players exceeds {games.MAX_EXACT_PLAYERS}; use permutation sampling"
            )
        phi = games.exact_shapley(players)
    else:
        phi = games.permutation_shapley(players, config.samples or DEFAULT_PERMUTATIONS, config.seed, key)
    values = np.zeros(p * q)
    values[cells] = phi
    return ContributionMatrix(game.rows, game.spec.submeasures, values.reshape(p, q), game.delta_y, f"nongam-{engine}")


def attribute_nongam(
    game: NonGamGame,
    config: EngineConfig = EngineConfig(engine="exact"),
    ref: ReferenceSpec | None = None,
    prune: bool = True,
) -> ContributionMatrix:
    """Shapley values over cells by re-aggregating raw records.

    ``ref`` defaults to the game's own reference label; an expected-mode
    spec averages over several reference labels.
    """
    engine = "exact" if config.engine == "auto" else config.engine
    if engine not in ("exact", "permutation"):
        raise EngineMismatch(f"raw-record attribution supports exact or permutation, not {engine!r}")
    if config.scope != "cells":
        raise EngineMismatch("raw-record attribution only supports the cells scope")
    labels = [game.reference] if ref is None else list(ref.references)
    if not all(isinstance(label, str) for label in labels):
        raise ValidationError("raw-record attribution needs time-step label references")

    def run(item):
        idx, label = item
        g = game if label == game.reference else game.with_reference(label)
        return _solve(g, engine, config, (idx,), prune)

    items = list(enumerate(labels))
    if config.threads > 1 and len(items) > 1:
        with ThreadPoolExecutor(config.threads) as pool:
            results = list(pool.map(run, items))
    else:
        results = [run(item) for item in items]
    return average(results)
