"""Experiment planner for membership-inference audits on a blob fixture.

The universe holds ``2 * model_size`` examples; the target trains on a random
half of it. Independent shadow models get a balanced keep matrix (every
example is IN for exactly half of them). A pool trains on ``pool_ratio *
model_size`` universe examples, and the audited queries are drawn from the
examples its mapping routes to the aligned pathways, outside the reused
fine-tuning subset. Each query therefore has exactly one IN shared model.
Mapping, aligned set and fine-tuning subset depend only on seeds, so the
plan is fixed before anything is trained.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .attacks import LiRA, RMIA, ScoreTable, SharedModels, build_attack_dataset, true_class_probs
from .attacks import scaled_logits_from_logits
from .cost import CostLedger
from .data import Dataset, RandomSource, gen_blobs
from .exceptions import InputError
from .metrics import roc_and_auc, tpr_at_fpr
from .pool import ShadowPool
from .shadow import ShadowModel


@dataclass
class FixtureConfig:
    seed: int = 0
    n_classes: int = 10
    dim: int = 20
    spread: float = 0.5
    model_size: int = 3300
    pool_ratio: float = 2.0
    n_queries: int = 400
    population: int = 1000
    n_layers: int = 3
    n_experts: int = 3
    stem_widths: tuple = (64,)
    expert_width: int = 64
    epochs: int = 60
    batch_size: int = 64
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    alpha: float = 0.05
    beta: float = 0.01
    n_shared: int = 8
    dq_fraction: float = 0.1
    ft_epochs: int = 10
    ft_lr: float = 0.001
    n_shadows: int = 4
    pool_epochs: int = 74

    def model_params(self, seed) -> dict:
        return dict(stem_widths=tuple(self.stem_widths), expert_width=self.expert_width,
                    n_layers=self.n_layers, epochs=self.epochs, batch_size=self.batch_size,
                    lr=self.lr, momentum=self.momentum, weight_decay=self.weight_decay,
                    n_classes=self.n_classes, random_state=seed)

    def pool_params(self, seed) -> dict:
        return dict(n_experts=self.n_experts, n_layers=self.n_layers,
                    stem_widths=tuple(self.stem_widths), expert_width=self.expert_width,
                    alpha=self.alpha, beta=self.beta,
                    epochs=self.epochs if self.pool_epochs is None else self.pool_epochs,
                    batch_size=self.batch_size, lr=self.lr, momentum=self.momentum,
                    weight_decay=self.weight_decay, n_shared=self.n_shared,
                    dq_fraction=self.dq_fraction, ft_epochs=self.ft_epochs, ft_lr=self.ft_lr,
                    n_classes=self.n_classes, random_state=seed)


def balanced_keep(n_models: int, n_examples: int, rng) -> np.ndarray:
    """Boolean ``(n_models, n_examples)``: each column has exactly ``n_models // 2`` Trues."""
    order = np.argsort(rng.random((n_models, n_examples)), axis=0)
    return order < n_models // 2


@dataclass
class Fixture:
    config: FixtureConfig
    universe: Dataset
    population: Dataset
    target_ids: np.ndarray
    query_ids: np.ndarray = None
    rs: RandomSource = field(repr=False, default=None)

    @property
    def queries(self) -> Dataset:
        return self.universe.select(self.query_ids)

    def query_membership(self) -> np.ndarray:
        return np.isin(self.query_ids, self.target_ids)


def make_fixture(cfg: FixtureConfig, plan_queries: bool = True) -> Fixture:
    """Universe of ``2 * model_size`` blobs plus a disjoint non-member population."""
    n_total = 2 * cfg.model_size + cfg.population
    per_class = -(-n_total // cfg.n_classes)
    data = gen_blobs(cfg.seed, per_class, cfg.n_classes, cfg.dim, cfg.spread)
    universe = data.take(np.arange(2 * cfg.model_size))
    population = data.take(np.arange(2 * cfg.model_size, n_total))
    return fixture_from_data(cfg, universe, population, plan_queries=plan_queries)


def fixture_from_data(cfg: FixtureConfig, universe: Dataset, population: Dataset, target_ids=None,
                      query_ids=None, plan_queries: bool = True) -> Fixture:
    """Fixture over given data; missing splits are drawn from the config seed."""
    if cfg.pool_ratio * cfg.model_size > len(universe):
        raise InputError(f"pool_ratio {cfg.pool_ratio} needs more than the {len(universe)} "
                         "universe examples")
    if np.intersect1d(universe.ids, population.ids).size:
        raise InputError("population shares ids with the universe")
    rs = RandomSource(cfg.seed)
    if target_ids is None:
        target_ids = np.sort(rs.stream("target-split").choice(universe.ids, cfg.model_size,
                                                              replace=False))
    fx = Fixture(cfg, universe, population, np.asarray(target_ids, dtype=np.int64), None, rs)
    if query_ids is not None:
        fx.query_ids = np.asarray(query_ids, dtype=np.int64)
    elif plan_queries:
        fx.query_ids = plan_query_ids(fx)
    return fx


def pool_training_set(fx: Fixture, pool_index: int = 0) -> Dataset:
    """``pool_ratio * model_size`` universe examples (all of it at ratio 2)."""
    size = int(round(fx.config.pool_ratio * fx.config.model_size))
    if size >= len(fx.universe):
        return fx.universe
    ids = fx.rs.stream(f"pool-{pool_index}-data").choice(fx.universe.ids, size, replace=False)
    return fx.universe.select(np.sort(ids))


def new_pool(fx: Fixture, pool_index: int = 0, **overrides) -> ShadowPool:
    cfg = replace(fx.config, **overrides) if overrides else fx.config
    return ShadowPool(**cfg.pool_params(fx.rs.child(f"pool-{pool_index}").seed))


def plan_query_ids(fx: Fixture, pool_index: int = 0) -> np.ndarray:
    """Queries routed to the pool's aligned pathways and absent from its fine-tuning subset."""
    cfg = fx.config
    pool = new_pool(fx, pool_index)
    data = pool_training_set(fx, pool_index)
    pool.initialize(data.dim, cfg.n_classes)
    pool.route(data)
    dq = pool.sample_dq(data)
    routed = np.concatenate([pool.mapping_.subset(w) for w in pool.select_pathways(cfg.n_shared)])
    cand = np.setdiff1d(routed, dq.ids)
    if cand.size < cfg.n_queries:
        raise InputError(f"only {cand.size} candidate queries for {cfg.n_queries} requested")
    return np.sort(fx.rs.stream("queries").choice(cand, cfg.n_queries, replace=False))


def train_target(fx: Fixture, ledger: CostLedger = None) -> ShadowModel:
    model = ShadowModel(**fx.config.model_params(fx.rs.child("target-model").seed))
    model.fit(fx.universe.select(fx.target_ids), run_id="target")
    model.name_ = "target"
    if ledger is not None:
        ledger.merge(model.ledger_)
    return model


def train_independent_shadows(fx: Fixture, n_models: int = None, ledger: CostLedger = None,
                              run_prefix: str = "shadow", keep=None):
    """Shadow models on balanced random halves of the universe."""
    cfg = fx.config
    n_models = n_models or cfg.n_shadows
    if keep is None:
        keep = balanced_keep(n_models, len(fx.universe), fx.rs.stream(f"{run_prefix}-keep"))
    models = []
    for k in range(n_models):
        seed = fx.rs.child(f"{run_prefix}-{k}").seed
        m = ShadowModel(**cfg.model_params(seed))
        m.fit(fx.universe.take(np.flatnonzero(keep[k])), run_id=f"{run_prefix}-{k}")
        m.name_ = f"{run_prefix}-{k}"
        if ledger is not None:
            ledger.merge(m.ledger_)
        models.append(m)
    return models


def train_query_pool(fx: Fixture, pool_index: int = 0, ledger: CostLedger = None, align: bool = True,
                     **overrides) -> ShadowPool:
    """Route, train and (optionally) align one pool of the plan."""
    pool = new_pool(fx, pool_index, **overrides)
    data = pool_training_set(fx, pool_index)
    pool.initialize(data.dim, fx.config.n_classes)
    pool.route(data)
    pool.train(data, run_id=f"pool-{pool_index}-train")
    if align:
        pool.align(pool.sample_dq(data), pool.n_shared, pool.ft_epochs,
                   run_id=f"pool-{pool_index}-align")
    if ledger is not None:
        ledger.merge(pool.ledger_)
    return pool


def target_scores(target: ShadowModel, queries: Dataset) -> np.ndarray:
    return scaled_logits_from_logits(target.decision_function(queries.features), queries.labels)


@dataclass
class AttackResult:
    scores: np.ndarray
    membership: np.ndarray
    auc: float
    tf1: float
    tf01: float
    roc: object = field(repr=False, default=None)

    def summary(self) -> dict:
        return {"auc": self.auc, "tf1": self.tf1, "tf01": self.tf01}


def evaluate(scores, membership) -> AttackResult:
    roc, auc = roc_and_auc(scores, membership)
    return AttackResult(np.asarray(scores), np.asarray(membership), auc, tpr_at_fpr(roc, 0.01),
                        tpr_at_fpr(roc, 0.001), roc)


def run_lira(table: ScoreTable, target: ShadowModel, fx: Fixture, online=True,
             fix_variance=True) -> AttackResult:
    q = fx.queries
    attack = LiRA(online=online, fix_variance=fix_variance).fit(table)
    scores = attack.decision_function(target_scores(target, q))
    return evaluate(scores, fx.query_membership())


def run_rmia(table: ScoreTable, pop_table: ScoreTable, target: ShadowModel, fx: Fixture,
             mode="online", gamma=1.0, a=0.3) -> AttackResult:
    q, pop = fx.queries, fx.population
    attack = RMIA(mode=mode, gamma=gamma, a=a).fit(table, pop_table)
    tq = true_class_probs(target.predict_proba(q.features), q.labels)
    tz = true_class_probs(target.predict_proba(pop.features), pop.labels)
    return evaluate(attack.decision_function(tq, tz), fx.query_membership())


def shared_sources(pools) -> list:
    return [SharedModels(p, list(p.aligned_set_), f"pool{i}") for i, p in enumerate(pools)]


def compare_constrained(cfg: FixtureConfig, online=True) -> dict:
    """One pool vs ``n_shadows`` independent models on the same target and queries."""
    fx = make_fixture(cfg)
    ledger = CostLedger()
    target = train_target(fx)
    shadows = train_independent_shadows(fx, ledger=ledger)
    pool = train_query_pool(fx, ledger=ledger)
    q = fx.queries
    base = run_lira(build_attack_dataset(shadows, q), target, fx, online=online)
    ours = run_lira(build_attack_dataset(shared_sources([pool]), q), target, fx, online=online)
    base_ids = [r for r in ledger.run_ids() if r.startswith("shadow-")]
    pool_ids = [r for r in ledger.run_ids() if r.startswith("pool-")]
    ledger.total(base_ids, into="base")
    ledger.total(pool_ids, into="pool")
    return {"base": base, "pool": ours, "ledger": ledger, "fixture": fx,
            "target": target, "pool_model": pool, "shadows": shadows, "config": asdict(cfg)}


@dataclass
class PropertyConfig:
    seed: int = 0
    t0: float = 0.3
    t1: float = 0.5
    dim: int = 8
    shift: float = 1.5
    label_bias: float = 3.0
    shadow_size: int = 4000
    target_size: int = 1000
    subset_size: int = 500
    n_attack: int = 50
    iterations: int = 80
    n_pathways: int = 16
    trials: int = 20
    n_layers: int = 3
    n_experts: int = 3
    stem_widths: tuple = (32,)
    expert_width: int = 32
    target_epochs: int = 20
    batch_size: int = 64
    lr: float = 0.05
    alpha: float = 0.05
    beta: float = 0.01


def run_property_inference(cfg: PropertyConfig) -> dict:
    """Train one pool per candidate ratio, then classify ``trials`` fresh target models."""
    from .data import gen_property_tabular, sample_with_property
    from .attacks import pia_infer

    rs = RandomSource(cfg.seed)
    shadow = gen_property_tabular(rs.child("shadow").seed, cfg.shadow_size, cfg.dim, 0.5,
                                  shift=cfg.shift, label_bias=cfg.label_bias)
    attack = gen_property_tabular(rs.child("attack").seed, cfg.n_attack, cfg.dim, 0.5,
                                  shift=cfg.shift, label_bias=cfg.label_bias, id_offset=10**7)
    pools = []
    for i, t in enumerate((cfg.t0, cfg.t1)):
        pool = ShadowPool(n_experts=cfg.n_experts, n_layers=cfg.n_layers,
                          stem_widths=tuple(cfg.stem_widths), expert_width=cfg.expert_width,
                          alpha=cfg.alpha, beta=cfg.beta, batch_size=cfg.batch_size, lr=cfg.lr,
                          n_shared=0, random_state=rs.child(f"pool-{i}").seed)
        pool.initialize(cfg.dim, 2)
        pool.train_property(shadow, t, cfg.iterations, cfg.subset_size, run_id=f"property-{i}")
        pools.append(pool)
    truth, guesses = [], []
    pick = rs.stream("trial-ratio")
    for k in range(cfg.trials):
        t = cfg.t0 if pick.random() < 0.5 else cfg.t1
        data = gen_property_tabular(rs.child(f"target-{k}").seed, 2 * cfg.target_size, cfg.dim, 0.5,
                                    shift=cfg.shift, label_bias=cfg.label_bias, id_offset=10**6)
        data = sample_with_property(data, cfg.target_size, t, rs.stream(f"target-{k}-sample"))
        target = ShadowModel(stem_widths=tuple(cfg.stem_widths), expert_width=cfg.expert_width,
                             n_layers=cfg.n_layers, epochs=cfg.target_epochs,
                             batch_size=cfg.batch_size, lr=cfg.lr,
                             random_state=rs.child(f"target-{k}-model").seed)
        target.fit(data)
        truth.append(t)
        guesses.append(pia_infer(cfg.t0, cfg.t1, [pools[0]], [pools[1]], attack.features, target,
                                 cfg.n_pathways, rs.stream(f"trial-{k}")))
    truth, guesses = np.array(truth), np.array(guesses)
    return {"accuracy": float(np.mean(truth == guesses)), "truth": truth, "guesses": guesses,
            "pools": pools}


def alignment_consistency(pre: ShadowPool, post: ShadowPool, reference: ShadowModel,
                          universe: Dataset) -> list:
    """Per aligned pathway: Bhattacharyya overlap with ``reference`` before and after alignment.

    Each Gaussian is fitted to scaled logits on the model's own members. A
    pathway's members are everything :meth:`ShadowPool.member_of` accepts
    after alignment (routed examples plus its fine-tuning subset), scored by
    both the pre- and post-alignment weights.
    """
    from .metrics import consistency

    ref_scores = target_scores(reference, universe.select(reference.train_ids_))
    rows = []
    for w in post.aligned_set_:
        members = universe.select(universe.ids[post.membership_matrix([w], universe.ids)[0]])
        rows.append({"pathway": int(w),
                     "consistency_pre": consistency(target_scores(pre.as_shadow_model(w), members),
                                                    ref_scores),
                     "consistency_post": consistency(target_scores(post.as_shadow_model(w), members),
                                                     ref_scores)})
    return rows
