"""Incremental valuation over a growing corpus.

Each ingested batch is embedded with the frozen encoder, assigned to the
nearest leaf by cosine distance (or spawned as a new singleton leaf when no
prototype is close enough), and only the touched leaves plus their ancestors
— the dirty set — are re-estimated:

* families whose children are all dirty re-run one shared prefix sweep;
* families with a mix refresh just the dirty children, one at a time, with
  independent permutation draws, keeping clean siblings' estimates bit-exact;
* mass re-propagation gives clean children their cached masses unchanged and
  splits the residual (refreshed parent mass minus the clean children's
  share) across dirty children, so value drift stays confined to the dirty
  subtree while the point values still sum to the refreshed total surplus.

Every few steps (the rebalance period) leaves that outgrew the capacity cap
are split in place under their parent and valued within the same pass.
"""

from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from .core import EMPTY_SET, LabeledDataset, PointSet, RngStream, ValueVector, content_token
from .encoder import EmbeddingMatrix
from .hcdv import HcdvConfig, run_hcdv, _distribute_leaf, _split_mass, propagation_weights
from .hierarchy import HierarchyTree, balanced_split, build_tree
from .shapley import CoalitionGame, independent_player_estimate, monte_carlo_shapley
from .utility import CharacteristicFn


@dataclass
class StepMetrics:
    epoch: int
    latency_ms: float
    dirty_count: int
    eval_count: int
    evals_refresh: int
    evals_masses: int
    evals_leaves: int
    leaf_count: int
    spawned: int
    rebalanced: bool


@dataclass
class StreamState:
    """Everything the incremental pipeline carries between batches."""

    epoch: int
    data: LabeledDataset
    embedding: EmbeddingMatrix
    tree: HierarchyTree
    cf: CharacteristicFn
    cfg: HcdvConfig
    values: np.ndarray
    masses: Dict[int, float]
    raw_estimates: Dict[int, Optional[float]]
    budget_map: Dict[int, float]
    surplus: float
    assign_threshold: float
    rebalance_period: int
    updates_since_rebalance: int
    tree_seed: int
    metrics: List[StepMetrics] = field(default_factory=list)

    def value_vector(self) -> ValueVector:
        return ValueVector(
            values=self.values.copy(),
            method_tag="hcdv-stream",
            seed=self.cfg.seed,
            permutations_T=self.cfg.T,
            wallclock_ms=0.0,
        )


def init_stream(
    data: LabeledDataset,
    emb: EmbeddingMatrix,
    tree: HierarchyTree,
    cf: CharacteristicFn,
    cfg: HcdvConfig,
    assign_threshold: float = 0.35,
    rebalance_period: int = 3,
    tree_seed: int = 0,
) -> StreamState:
    """Run the batch valuation once and wrap the result as stream state."""
    from .hcdv import last_run_report

    if rebalance_period < 1:
        raise ValueError("rebalance period must be positive")
    if assign_threshold < 0:
        raise ValueError("assignment threshold must be non-negative")
    if cfg.game_scope != "parent" or not cfg.normalize or cfg.sampling != "prefix":
        raise ValueError("streaming supports only the default pipeline (parent games, normalised, prefix sweeps)")
    tree = tree.copy()
    vec = run_hcdv(data, emb, tree, cf, cfg)
    report = last_run_report()
    return StreamState(
        epoch=0,
        data=data,
        embedding=emb,
        tree=tree,
        cf=cf,
        cfg=cfg,
        values=np.array(vec.values),
        masses=dict(report.masses),
        raw_estimates=dict(report.raw_estimates),
        budget_map=dict(report.budget_map),
        surplus=report.surplus,
        assign_threshold=assign_threshold,
        rebalance_period=rebalance_period,
        updates_since_rebalance=0,
        tree_seed=tree_seed,
    )


def _cosine_to_prototypes(z: np.ndarray, protos: np.ndarray) -> np.ndarray:
    zn = float(np.linalg.norm(z))
    pn = np.linalg.norm(protos, axis=1)
    out = np.full(protos.shape[0], 2.0)
    if zn == 0.0:
        return out
    ok = pn > 0.0
    out[ok] = 1.0 - (protos[ok] @ z) / (pn[ok] * zn)
    return out


def _grow_membership(tree: HierarchyTree, leaf_id: int, point: int, z: np.ndarray) -> None:
    """Append a (strictly larger) point index to a leaf and all its ancestors."""
    nid = leaf_id
    while nid is not None:
        node = tree.node(nid)
        node.members = PointSet._from_sorted(np.append(node.members.indices, point))
        m = len(node.members)
        node.prototype = node.prototype + (z - node.prototype) / m
        nid = node.parent


def _mark_dirty(tree: HierarchyTree, node_id: int, dirty: set) -> None:
    nid = node_id
    while nid is not None:
        dirty.add(nid)
        nid = tree.node(nid).parent


def ingest_batch(state: StreamState, features: np.ndarray, labels: np.ndarray) -> StreamState:
    """Ingest one batch of raw rows and return the refreshed stream state.

    The input state is left intact (readers keep a consistent pre-ingest
    view); the returned state shares only the append-only payoff cache.
    """
    t_start = time.perf_counter()
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if features.ndim != 2 or features.shape[0] != labels.shape[0]:
        raise ValueError("batch features and labels must align")
    if features.shape[0] == 0:
        raise ValueError("batch is empty")
    bad = labels[(labels < 0) | (labels >= state.data.num_classes)]
    if bad.size:
        raise ValueError(f"batch contains unseen label {int(bad[0])}")
    old = state.data
    if features.shape[1] != (old.feature_mean.shape[0] if old.feature_mean is not None else old.dim):
        raise ValueError("batch feature dimension does not match the corpus")

    # frozen preprocessing + frozen encoder
    if old.feature_mean is not None:
        Xb = (features - old.feature_mean) / old.feature_std
    else:
        Xb = features
    if state.embedding.transform is not None:
        Zb = Xb @ state.embedding.transform.T
    elif state.embedding.source == "identity":
        Zb = Xb
    else:
        raise ValueError("streaming needs an identity embedding or a stored linear transform")

    epoch = state.epoch + 1
    tree = state.tree.copy()
    n_old = old.n
    batch_ids = np.arange(n_old, n_old + features.shape[0], dtype=np.int64)

    new_features = np.vstack([old.features, Xb])
    new_labels = np.concatenate([old.labels, labels])
    new_vectors = np.vstack([state.embedding.vectors, Zb])
    data = LabeledDataset(
        features=new_features,
        labels=new_labels,
        val_features=old.val_features,
        val_labels=old.val_labels,
        num_classes=old.num_classes,
        feature_mean=old.feature_mean,
        feature_std=old.feature_std,
        feature_low=old.feature_low,
        feature_high=old.feature_high,
    )
    embedding = EmbeddingMatrix(
        vectors=new_vectors,
        source=state.embedding.source,
        transform=state.embedding.transform,
        training_trace=state.embedding.training_trace,
    )
    cf = CharacteristicFn(data, embedding, lam=state.cf.lam, metric=state.cf.metric, learner=state.cf.learner)
    cf._cache = state.cf._cache  # old keys stay valid: indices are append-only
    evals_at_start = cf.evaluations

    # -- assignment ---------------------------------------------------------
    dirty: set = set()
    spawned = 0
    depth = tree.depth
    for i, z in zip(batch_ids.tolist(), np.asarray(Zb)):
        leaf_ids = tree.leaf_ids()
        protos = np.stack([tree.node(l).prototype for l in leaf_ids])
        dists = _cosine_to_prototypes(z, protos)
        best = int(np.argmin(dists))
        if depth >= 1 and float(dists[best]) > state.assign_threshold:
            parent_ids = tree.levels[depth - 1]
            pprotos = np.stack([tree.node(p).prototype for p in parent_ids])
            pbest = parent_ids[int(np.argmin(_cosine_to_prototypes(z, pprotos)))]
            leaf = tree._new_node(depth, pbest, PointSet._from_sorted(np.asarray([i], dtype=np.int64)), z)
            tree.levels[depth].append(leaf.id)
            # the new point also joins every ancestor of the spawn parent
            nid = pbest
            while nid is not None:
                node = tree.node(nid)
                node.members = PointSet._from_sorted(np.append(node.members.indices, i))
                node.prototype = node.prototype + (z - node.prototype) / len(node.members)
                nid = node.parent
            spawned += 1
            _mark_dirty(tree, leaf.id, dirty)
        else:
            _grow_membership(tree, leaf_ids[best], i, z)
            _mark_dirty(tree, leaf_ids[best], dirty)

    # -- rebalance (due every rebalance_period steps, on capacity violation) --
    rebalanced = False
    if epoch % state.rebalance_period == 0:
        oversize = [l for l in tree.leaf_ids() if len(tree.node(l).members) > tree.leaf_cap]
        for lid in oversize:
            leaf = tree.node(lid)
            g = len(leaf.members)
            # smallest split count whose capacity window fits under the leaf cap
            K_split = max(2, -(-g // tree.leaf_cap))
            while int(np.ceil((1.0 + tree.gamma) * (-(-g // K_split)))) > tree.leaf_cap and K_split < g:
                K_split += 1
            parts = balanced_split(
                new_vectors,
                leaf.members,
                K_split,
                tree.gamma,
                RngStream(state.tree_seed, "rebalance-split", content_token(epoch, leaf.members.indices)),
            )
            parent = leaf.parent
            tree.node(parent).children.remove(lid)
            tree.levels[depth].remove(lid)
            dirty.discard(lid)
            del tree.nodes[lid]
            for part in parts:
                child = tree._new_node(depth, parent, part, new_vectors[part.indices].mean(axis=0))
                tree.levels[depth].append(child.id)
                _mark_dirty(tree, child.id, dirty)
            rebalanced = True

    # -- refresh raw estimates on dirty families ------------------------------
    raw = dict(state.raw_estimates)
    masses = dict(state.masses)
    budget = dict(state.budget_map)
    for nid in list(raw):
        if nid not in tree.nodes:
            raw.pop(nid, None)
            masses.pop(nid, None)
            budget.pop(nid, None)

    marks = cf.evaluations
    for level in range(len(tree.levels) - 1, 0, -1):
        for pid, kids in tree.families(level):
            dirty_kids = [c for c in kids if c in dirty]
            if not dirty_kids:
                continue
            if len(kids) == 1:
                raw[kids[0]] = None
                continue
            players = [tree.node(c).members for c in kids]
            game = CoalitionGame(players, cf)
            if len(dirty_kids) == len(kids):
                stream = RngStream(state.cfg.seed, "refresh-family", tree.family_token(pid), epoch)
                est = monte_carlo_shapley(game, state.cfg.T, stream)
                for c, v in zip(kids, est.values.tolist()):
                    raw[c] = v
            else:
                for c in dirty_kids:
                    stream = RngStream(state.cfg.seed, "refresh-node", tree.node_token(c), epoch)
                    raw[c] = independent_player_estimate(game, kids.index(c), state.cfg.T, stream)
    evals_refresh = cf.evaluations - marks

    # -- re-propagate masses along dirty edges --------------------------------
    marks = cf.evaluations
    root = tree.root_id
    surplus = cf.evaluate(tree.node(root).members) - cf.evaluate(EMPTY_SET)
    if surplus < 0.0:
        warnings.warn(f"refreshed total surplus is negative ({surplus})")
    masses[root] = surplus
    raw[root] = surplus
    budget[root] = surplus
    for level in range(1, len(tree.levels)):
        for pid, kids in tree.families(level):
            if pid not in dirty:
                continue
            pot = masses[pid]
            if len(kids) == 1:
                cid = kids[0]
                masses[cid] = pot
                budget[cid] = pot
                continue
            clean_kids = [c for c in kids if c not in dirty]
            dirty_kids = [c for c in kids if c in dirty]
            if dirty_kids:
                residual = pot - math.fsum(masses[c] for c in clean_kids)
                if residual < 0.0 and clean_kids:
                    warnings.warn(f"negative residual mass {residual} under node {pid}")
                ests = np.asarray([raw[c] if raw[c] is not None else 0.0 for c in dirty_kids])
                shares = _split_mass(residual, ests) if residual >= 0.0 else _negative_residual_split(residual, ests)
                for c, share in zip(dirty_kids, shares.tolist()):
                    masses[c] = share
            singles = [cf.evaluate(tree.node(c).members) for c in kids]
            weights = propagation_weights(singles)
            for c, w in zip(kids, weights.tolist()):
                budget[c] = w * pot
    evals_masses = cf.evaluations - marks

    # -- redistribute dirty leaves --------------------------------------------
    marks = cf.evaluations
    values = np.concatenate([state.values, np.zeros(features.shape[0])])
    for lid in tree.leaf_ids():
        if lid in dirty:
            _distribute_leaf(values, tree.node(lid).members, masses[lid], state.cfg, cf)
    evals_leaves = cf.evaluations - marks

    for nid in tree.nodes:
        tree.node(nid).cached_shapley = masses.get(nid)
        tree.node(nid).budget = budget.get(nid)

    metrics = StepMetrics(
        epoch=epoch,
        latency_ms=(time.perf_counter() - t_start) * 1000.0,
        dirty_count=len(dirty),
        eval_count=cf.evaluations - evals_at_start,
        evals_refresh=evals_refresh,
        evals_masses=evals_masses,
        evals_leaves=evals_leaves,
        leaf_count=len(tree.leaf_ids()),
        spawned=spawned,
        rebalanced=rebalanced,
    )
    return StreamState(
        epoch=epoch,
        data=data,
        embedding=embedding,
        tree=tree,
        cf=cf,
        cfg=state.cfg,
        values=values,
        masses=masses,
        raw_estimates=raw,
        budget_map=budget,
        surplus=surplus,
        assign_threshold=state.assign_threshold,
        rebalance_period=state.rebalance_period,
        updates_since_rebalance=0 if rebalanced else state.updates_since_rebalance + 1,
        tree_seed=state.tree_seed,
        metrics=state.metrics + [metrics],
    )


def _negative_residual_split(residual: float, estimates: np.ndarray) -> np.ndarray:
    """A negative residual is spread like a positive one (sign flows through)."""
    shares = _split_mass(-residual, estimates)
    return -shares


def full_recompute(state: StreamState) -> ValueVector:
    """Rebuild the tree over the current corpus and re-run the batch valuation.

    Uses a fresh payoff cache so its evaluation count is directly comparable
    with the incremental path's per-step counts.
    """
    tree = build_tree(
        state.embedding,
        state.tree.branching,
        state.tree.leaf_cap,
        state.tree.gamma,
        seed=state.tree_seed,
    )
    cf = CharacteristicFn(
        state.data,
        state.embedding,
        lam=state.cf.lam,
        metric=state.cf.metric,
        learner=state.cf.learner,
    )
    return run_hcdv(state.data, state.embedding, tree, cf, state.cfg)
