"""Shapley values for coalition games: exact enumeration and Monte-Carlo sampling.

A coalition game wraps a list of disjoint player point-sets and a payoff
function evaluated on unions of selected players. The Monte-Carlo estimator
averages marginal contributions over sampled permutations; in the default
prefix mode one shared permutation serves every player per sweep, so the
player-sum telescopes to v(full) - v(empty) exactly, for any number of
permutations. Permutation logs store one 63-bit seed per permutation and can
be replayed to reproduce an estimate bit for bit.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .core import EMPTY_SET, LabeledDataset, PointSet, RngStream, union

EXACT_PLAYER_LIMIT = 12


class CoalitionGame:
    """Players (disjoint point sets) plus a payoff over unions of players.

    :param players: disjoint PointSets, one per player
    :param payoff: a CharacteristicFn-like object (``evaluate(PointSet)``) or a
        plain callable PointSet -> float
    :param bound: payoff bound B such that marginal contributions lie in
        [-2B, 2B]; taken from ``payoff.B`` when present
    """

    def __init__(self, players: Sequence[PointSet], payoff, bound: Optional[float] = None):
        self.players = list(players)
        if not self.players:
            raise ValueError("a game needs at least one player")
        merged = union(self.players)
        if sum(len(p) for p in self.players) != len(merged):
            raise ValueError("player point sets must be disjoint")
        self._eval: Callable[[PointSet], float] = getattr(payoff, "evaluate", payoff)
        self.payoff = payoff
        if bound is None:
            bound = getattr(payoff, "B", None)
        self.bound = None if bound is None else float(bound)
        size = int(merged.indices[-1]) + 1 if len(merged) else 1
        self._mask_size = size

    @property
    def K(self) -> int:
        return len(self.players)

    def value_of_ids(self, player_ids) -> float:
        """Payoff of the coalition formed by the given player ids."""
        ids = np.asarray(player_ids, dtype=np.int64)
        if ids.size == 0:
            return self._eval(EMPTY_SET)
        arrays = [self.players[int(i)].indices for i in ids]
        return self._eval(PointSet._from_sorted(np.unique(np.concatenate(arrays))))

    def value_of_mask(self, mask: np.ndarray) -> float:
        """Payoff of the coalition of points flagged in a boolean mask."""
        return self._eval(PointSet._from_sorted(np.flatnonzero(mask).astype(np.int64)))


@dataclass(frozen=True)
class ShapleyEstimate:
    """Per-player Shapley values plus how they were obtained."""

    values: np.ndarray
    T: int
    mode: str
    permutation_log: Optional[list] = None

    def __post_init__(self):
        vals = np.ascontiguousarray(self.values, dtype=np.float64)
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        if self.mode not in ("exact", "prefix", "independent"):
            raise ValueError(f"unknown estimate mode {self.mode!r}")


def exact_shapley(game: CoalitionGame) -> ShapleyEstimate:
    """Exact Shapley values by subset enumeration.

    phi_i = sum over coalitions S not containing i of
            |S|! (K - |S| - 1)! / K! * [v(S + i) - v(S)]

    Guarded to K <= 12 players (2^K payoff evaluations); larger games belong
    to monte_carlo_shapley.
    """
    K = game.K
    if K > EXACT_PLAYER_LIMIT:
        raise ValueError(
            f"exact_shapley enumerates 2^K coalitions and is capped at K={EXACT_PLAYER_LIMIT}; "
            f"got K={K} — use monte_carlo_shapley"
        )
    n_masks = 1 << K
    ids_per_mask = [np.flatnonzero([(m >> i) & 1 for i in range(K)]) for m in range(n_masks)]
    v = np.empty(n_masks)
    for m in range(n_masks):
        v[m] = game.value_of_ids(ids_per_mask[m])
    popcount = np.array([bin(m).count("1") for m in range(n_masks)], dtype=np.int64)
    fact = [math.factorial(s) for s in range(K + 1)]
    weight = np.array([fact[s] * fact[K - 1 - s] / fact[K] for s in range(K)])
    masks = np.arange(n_masks, dtype=np.int64)
    values = np.empty(K)
    for i in range(K):
        without = masks[(masks >> i) & 1 == 0]
        gains = v[without | (1 << i)] - v[without]
        values[i] = float(gains @ weight[popcount[without]])
    total = math.fsum(values.tolist())
    surplus = v[n_masks - 1] - v[0]
    assert abs(total - surplus) <= 1e-9, "exact Shapley must satisfy efficiency"
    return ShapleyEstimate(values=values, T=0, mode="exact", permutation_log=None)


def _permutation_from_seed(seed: int, K: int) -> np.ndarray:
    return np.random.default_rng(int(seed)).permutation(K)


def _resolve_generator(rng) -> tuple[np.random.Generator, int]:
    if isinstance(rng, RngStream):
        return rng.generator(), rng.root_seed
    if isinstance(rng, np.random.Generator):
        return rng, -1
    if isinstance(rng, (int, np.integer)):
        stream = RngStream(int(rng))
        return stream.generator(), int(rng)
    raise TypeError(f"rng must be an RngStream, Generator or int, got {type(rng)!r}")


def _check_marginal(gain: float, bound: Optional[float]) -> None:
    if bound is not None:
        assert abs(gain) <= 2.0 * bound + 1e-9, (
            f"marginal contribution {gain} escapes [-2B, 2B] with B={bound}"
        )


def monte_carlo_shapley(
    game: CoalitionGame,
    T: int,
    rng,
    sampling: str = "prefix",
    permutation_log: Optional[Sequence[int]] = None,
) -> ShapleyEstimate:
    """Monte-Carlo Shapley over T sampled permutations.

    In "prefix" mode each permutation is swept once and every player's
    marginal contribution is read off the running prefix union (K payoff
    evaluations per sweep, shared permutation). In "independent" mode each
    player gets its own T permutations (2 evaluations each); that matches the
    one-player-at-a-time concentration analysis but forgoes the telescoping
    player-sum identity.

    Passing ``permutation_log`` (prefix mode only) replays exactly those
    per-permutation seeds and reproduces the estimate bit for bit.
    """
    K = game.K
    if sampling not in ("prefix", "independent"):
        raise ValueError(f"unknown sampling mode {sampling!r}")
    if permutation_log is not None:
        if sampling != "prefix":
            raise ValueError("permutation logs are only defined for prefix sweeps")
        seeds = [int(s) for s in permutation_log]
        T = len(seeds)
        if T < 1:
            raise ValueError("permutation log is empty")
    else:
        if T < 1:
            raise ValueError("need at least one permutation (T >= 1)")
        gen, _ = _resolve_generator(rng)
        if sampling == "prefix":
            seeds = [int(s) for s in gen.integers(0, 2**63, size=T, dtype=np.uint64)]
        else:
            seeds = gen.integers(0, 2**63, size=(K, T), dtype=np.uint64)

    totals = np.zeros(K)
    if sampling == "prefix":
        mask = np.zeros(game._mask_size, dtype=bool)
        v_empty = game.value_of_mask(mask)
        for seed in seeds:
            perm = _permutation_from_seed(seed, K)
            mask[:] = False
            prev = v_empty
            for player in perm:
                mask[game.players[player].indices] = True
                cur = game.value_of_mask(mask)
                gain = cur - prev
                _check_marginal(gain, game.bound)
                totals[player] += gain
                prev = cur
        log = list(seeds)
    else:
        for i in range(K):
            for t in range(T):
                perm = _permutation_from_seed(int(seeds[i, t]), K)
                cut = int(np.flatnonzero(perm == i)[0])
                before = perm[:cut]
                v_pre = game.value_of_ids(before)
                v_with = game.value_of_ids(np.append(before, i))
                gain = v_with - v_pre
                _check_marginal(gain, game.bound)
                totals[i] += gain
        log = None
    return ShapleyEstimate(values=totals / T, T=T, mode=sampling, permutation_log=log)


def independent_player_estimate(game: CoalitionGame, player: int, T: int, rng) -> float:
    """Monte-Carlo marginal estimate for one player only (2T evaluations).

    Samples T permutations of the player set and averages the player's
    marginal contribution against its random predecessors. Used by streaming
    refreshes that must re-roll a single dirty node without touching its
    siblings' cached estimates.
    """
    if T < 1:
        raise ValueError("need at least one permutation (T >= 1)")
    if not 0 <= player < game.K:
        raise ValueError(f"player {player} out of range for K={game.K}")
    gen, _ = _resolve_generator(rng)
    seeds = gen.integers(0, 2**63, size=T, dtype=np.uint64)
    total = 0.0
    for t in range(T):
        perm = _permutation_from_seed(int(seeds[t]), game.K)
        cut = int(np.flatnonzero(perm == player)[0])
        before = perm[:cut]
        v_pre = game.value_of_ids(before)
        v_with = game.value_of_ids(np.append(before, player))
        gain = v_with - v_pre
        _check_marginal(gain, game.bound)
        total += gain
    return total / T


def _per_point_from_groups(
    data: LabeledDataset, cf, groups: Sequence[PointSet], T: int, rng
) -> tuple[np.ndarray, ShapleyEstimate]:
    merged = union(groups)
    if len(merged) != data.n or sum(len(g) for g in groups) != data.n:
        raise ValueError("groups must partition the train split")
    game = CoalitionGame(groups, cf)
    est = monte_carlo_shapley(game, T, rng)
    values = np.empty(data.n)
    for g, group in enumerate(groups):
        values[group.indices] = est.values[g] / len(group)
    return values, est


def flat_mcds(data: LabeledDataset, cf, T: int, rng) -> "ValueVector":
    """Flat Monte-Carlo data Shapley: every point is its own player."""
    from .core import ValueVector

    start = time.perf_counter()
    groups = [PointSet._from_sorted(np.asarray([i], dtype=np.int64)) for i in range(data.n)]
    values, est = _per_point_from_groups(data, cf, groups, T, rng)
    _, seed = _resolve_generator(rng)
    return ValueVector(
        values=values,
        method_tag="mcds",
        seed=seed,
        permutations_T=est.T,
        wallclock_ms=(time.perf_counter() - start) * 1000.0,
    )


def group_shapley(data: LabeledDataset, cf, groups: Sequence[PointSet], T: int, rng) -> "ValueVector":
    """Grouped Shapley baseline: groups are players, group value splits evenly."""
    from .core import ValueVector

    start = time.perf_counter()
    values, est = _per_point_from_groups(data, cf, groups, T, rng)
    _, seed = _resolve_generator(rng)
    return ValueVector(
        values=values,
        method_tag="gs",
        seed=seed,
        permutations_T=est.T,
        wallclock_ms=(time.perf_counter() - start) * 1000.0,
    )


def leave_one_out(data: LabeledDataset, cf) -> "ValueVector":
    """Leave-one-out values: phi_i = v(D) - v(D without i)."""
    from .core import ValueVector

    start = time.perf_counter()
    full = data.all_points()
    v_full = cf.evaluate(full)
    values = np.empty(data.n)
    for i in range(data.n):
        values[i] = v_full - cf.evaluate(full.without(i))
    return ValueVector(
        values=values,
        method_tag="loo",
        seed=0,
        permutations_T=0,
        wallclock_ms=(time.perf_counter() - start) * 1000.0,
    )


def random_values(n: int, rng) -> "ValueVector":
    """Uniform random scores in [0, 1): the null baseline."""
    from .core import ValueVector

    start = time.perf_counter()
    gen, seed = _resolve_generator(rng)
    return ValueVector(
        values=gen.random(n),
        method_tag="random",
        seed=seed,
        permutations_T=0,
        wallclock_ms=(time.perf_counter() - start) * 1000.0,
    )
