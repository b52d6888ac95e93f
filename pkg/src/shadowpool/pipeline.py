"""Stage-by-stage experiment pipeline over an output directory.

Every stage reads the checkpoints of the stages it depends on and writes its
own, then records a stamp: a fingerprint of its inputs plus checksums of its
outputs. Rerunning a stage whose stamp still matches is a no-op.

Layout under the output directory::

    config.yaml                 echo of the effective config
    data/                       universe.csv, population.csv, plan.json
    models/target, models/shadow-K, models/aug-LABEL-K
    pools/pool-I (trained), pools/pool-I-aligned
    results/SOURCE/             report.json, roc.csv, scores.csv
    results/cost.csv            deterministic cost counters
    results/timing.json         wall-clock sidecar (not deterministic)
    diagnostics/diagnostics.json
    summary.json, summary.txt   Δ-row table
    stamps/STAGE.json
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
from pathlib import Path

import numpy as np

from .attacks import LiRA, RMIA, SharedModels, build_attack_dataset, true_class_probs
from .config import ExperimentConfig
from .cost import CostLedger, CostReport, cost_compare
from .data import Dataset, RandomSource
from .exceptions import DependencyError
from .experiment import (
    alignment_consistency, evaluate, fixture_from_data, make_fixture, pool_training_set, target_scores,
    train_independent_shadows,
)
from .metrics import entropy_diversity, format_delta
from .persist import (
    load_dataset_csv, load_pool, load_shadow_model, save_dataset_csv, save_pool,
    save_shadow_model,
)
from .pool import ShadowPool, toy_pool_gradcheck
from .shadow import MaskSpec, accuracy, augment_model

log = logging.getLogger("shadowpool")

STAGES = ("gen-data", "train-target", "train-shadows", "augment", "train-pool", "align",
          "attack", "diagnose", "report", "gradcheck")
REPORT_KEYS = ("source", "method", "mode", "n_models", "n_queries", "auc", "tf1", "tf01",
               "cost_evaluations", "cost_wallclock_s", "delta_auc", "delta_tf1", "delta_tf01",
               "delta_cost_pct")
SOURCES = ("base", "aug", "pool")


def _dump_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _file_digest(path: Path) -> str:
    if path.is_dir():
        path = path / "manifest.json"
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _fingerprint(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()


class Pipeline:
    """Runs named stages of one experiment (one seed) in ``out_dir``."""

    def __init__(self, config: ExperimentConfig, out_dir=None):
        self.config = config
        self.out = Path(out_dir if out_dir is not None else config.output_dir)
        self.fcfg = config.fixture_config()

    # bookkeeping -----------------------------------------------------------

    def path(self, *parts) -> Path:
        return self.out.joinpath(*parts)

    def _stamp_path(self, stage):
        return self.path("stamps", f"{stage}.json")

    def stamp(self, stage) -> dict:
        p = self._stamp_path(stage)
        return json.loads(p.read_text(encoding="utf-8")) if p.exists() else None

    def require(self, stage, needed_by) -> dict:
        st = self.stamp(stage)
        if st is None:
            raise DependencyError(f"{needed_by} needs the {stage!r} stage; run it first", stage=stage)
        return st

    def _inputs(self, stage) -> dict:
        c = self.config
        sec = c.section
        fixture = {"seed": c.seed, "dataset": sec("dataset"), "architecture": sec("architecture"),
                   "pool": sec("pool")}
        model = {"architecture": sec("architecture"), "training": sec("training")}
        if stage == "gen-data":
            return fixture
        if stage == "train-target":
            return {**model, "up": self.require("gen-data", stage)["fingerprint"]}
        if stage == "train-shadows":
            return {**model, "n_shadows": c.baselines.n_shadows,
                    "up": self.require("gen-data", stage)["fingerprint"]}
        if stage == "augment":
            return {"masks": sec("baselines")["masks"],
                    "up": self.require("train-shadows", stage)["fingerprint"]}
        if stage == "train-pool":
            return {**model, "pool": sec("pool"), "up": self.require("gen-data", stage)["fingerprint"]}
        if stage == "align":
            return {"pool": sec("pool"), "up": self.require("train-pool", stage)["fingerprint"]}
        if stage in ("attack", "diagnose"):
            ups = {s: (self.stamp(s) or {}).get("fingerprint")
                   for s in ("train-shadows", "augment", "train-pool", "align")}
            return {"attack": sec("attack"), "target": self.require("train-target", stage)["fingerprint"],
                    "sources": ups}
        if stage == "report":
            return {"attack": self.require("attack", stage)["fingerprint"]}
        if stage == "gradcheck":
            return {"architecture": sec("architecture"), "pool": sec("pool"), "seed": c.seed}
        raise KeyError(stage)

    def run_stage(self, stage, force=False) -> bool:
        """Run one stage; returns False when it was already up to date."""
        if stage not in STAGES:
            raise KeyError(stage)
        fp = _fingerprint({"stage": stage, "inputs": self._inputs(stage)})
        st = self.stamp(stage)
        if not force and st is not None and st["fingerprint"] == fp and self._outputs_intact(st):
            log.info("%s: up to date", stage)
            return False
        log.info("%s: running", stage)
        outputs = getattr(self, "_" + stage.replace("-", "_"))()
        digests = {str(p.relative_to(self.out)): _file_digest(p) for p in outputs}
        _dump_json(self._stamp_path(stage), {"stage": stage, "fingerprint": fp, "outputs": digests})
        return True

    def _outputs_intact(self, st) -> bool:
        for rel, digest in st["outputs"].items():
            p = self.out / rel
            if not (p.exists() and (not p.is_dir() or (p / "manifest.json").exists())):
                return False
            if _file_digest(p) != digest:
                return False
        return True

    def run_all(self, stages=None, force=False):
        self.out.mkdir(parents=True, exist_ok=True)
        self.config.dump(self.path("config.yaml"))
        for stage in stages or ("gen-data", "train-target", "train-shadows", "augment",
                                "train-pool", "align", "attack", "diagnose", "report"):
            self.run_stage(stage, force=force)

    # loaders -----------------------------------------------------------------

    def fixture(self):
        self.require("gen-data", "this stage")
        plan = json.loads(self.path("data", "plan.json").read_text(encoding="utf-8"))
        n_classes = self.fcfg.n_classes
        universe = load_dataset_csv(self.path("data", "universe.csv"), n_classes)
        population = load_dataset_csv(self.path("data", "population.csv"), n_classes)
        cfg = dataclasses.replace(self.fcfg, model_size=plan["model_size"])
        return fixture_from_data(cfg, universe, population, plan["target_ids"], plan["query_ids"])

    def shadows(self):
        if self.stamp("train-shadows") is None:
            return []
        return [load_shadow_model(self.path("models", f"shadow-{k}"))
                for k in range(self.config.baselines.n_shadows)]

    def augmented(self):
        if self.stamp("augment") is None:
            return []
        names = json.loads(self.path("models", "augmented.json").read_text(encoding="utf-8"))
        return [load_shadow_model(self.path("models", n)) for n in names]

    def pools(self, aligned=True):
        stage = "align" if aligned else "train-pool"
        if self.stamp(stage) is None:
            return []
        suffix = "-aligned" if aligned else ""
        return [load_pool(self.path("pools", f"pool-{i}{suffix}"))
                for i in range(self.config.pool.n_pools)]

    # stages --------------------------------------------------------------------

    def _gen_data(self):
        d = self.config.dataset
        if d.kind == "csv":
            universe = load_dataset_csv(d.path, d.n_classes)
            population = load_dataset_csv(d.population_path, d.n_classes)
            cfg = dataclasses.replace(self.fcfg, model_size=len(universe) // 2)
            fx = fixture_from_data(cfg, universe, population)
        else:
            fx = make_fixture(self.fcfg)
        data_dir = self.path("data")
        data_dir.mkdir(parents=True, exist_ok=True)
        save_dataset_csv(fx.universe, data_dir / "universe.csv")
        save_dataset_csv(fx.population, data_dir / "population.csv")
        _dump_json(data_dir / "plan.json", {"model_size": fx.config.model_size,
                                            "target_ids": fx.target_ids.tolist(),
                                            "query_ids": fx.query_ids.tolist()})
        return [data_dir / "universe.csv", data_dir / "population.csv", data_dir / "plan.json"]

    def _train_target(self):
        from .experiment import train_target

        model = train_target(self.fixture())
        p = self.path("models", "target")
        save_shadow_model(model, p)
        return [p]

    def _train_shadows(self):
        models = train_independent_shadows(self.fixture())
        paths = []
        for k, m in enumerate(models):
            p = self.path("models", f"shadow-{k}")
            save_shadow_model(m, p)
            paths.append(p)
        return paths

    def _augment(self):
        shadows = self.shadows()
        if not shadows:
            raise DependencyError("augment needs at least one shadow model", stage="train-shadows")
        fx = self.fixture()
        rs = RandomSource(self.config.seed)
        names, paths, drops = [], [], {}
        for entry in self.config.baselines.masks:
            for k, base in enumerate(shadows):
                label = f"{entry.scope.upper()}-{entry.p:g}"
                spec = MaskSpec(entry.scope, entry.p, rs.child(f"mask-{label}-{k}").seed)
                aug = augment_model(base, spec)
                name = f"aug-{label}-{k}"
                aug.name_ = name
                aug.ledger_ = CostLedger()
                drops[name] = accuracy(base, fx.population.features, fx.population.labels) - accuracy(
                    aug, fx.population.features, fx.population.labels)
                p = self.path("models", name)
                save_shadow_model(aug, p)
                names.append(name)
                paths.append(p)
        _dump_json(self.path("models", "augmented.json"), names)
        _dump_json(self.path("models", "augment-accuracy-drop.json"), drops)
        return paths + [self.path("models", "augmented.json")]

    def _train_pool(self):
        fx = self.fixture()
        paths = []
        for i in range(self.config.pool.n_pools):
            pool = ShadowPool(**fx.config.pool_params(fx.rs.child(f"pool-{i}").seed))
            data = pool_training_set(fx, i)
            pool.initialize(data.dim, fx.config.n_classes)
            pool.route(data)
            pool.train(data, run_id=f"pool-{i}-train")
            p = self.path("pools", f"pool-{i}")
            save_pool(pool, p)
            paths.append(p)
        return paths

    def _align(self):
        fx = self.fixture()
        paths = []
        for i, pool in enumerate(self.pools(aligned=False)):
            data = pool_training_set(fx, i)
            pool.align(pool.sample_dq(data), pool.n_shared, pool.ft_epochs, run_id=f"pool-{i}-align")
            p = self.path("pools", f"pool-{i}-aligned")
            save_pool(pool, p)
            paths.append(p)
        return paths

    def _sources(self):
        shadows = self.shadows()
        out = {}
        if shadows:
            out["base"] = (shadows, sum(_evals(m.ledger_) for m in shadows), _wall(shadows))
            aug = self.augmented()
            if aug:
                out["aug"] = (shadows + aug, out["base"][1], out["base"][2])
        pools = self.pools(aligned=True)
        if pools:
            srcs = [SharedModels(p, list(p.aligned_set_), f"pool{i}") for i, p in enumerate(pools)]
            out["pool"] = (srcs, sum(_evals(p.ledger_) for p in pools), _wall(pools))
        return out

    def _attack(self):
        fx = self.fixture()
        target = load_shadow_model(self.path("models", "target"))
        sources = self._sources()
        if not sources:
            raise DependencyError("attack needs shadow sources: run train-shadows or align first",
                                  stage="train-shadows")
        atk = self.config.attack
        q = fx.queries
        membership = fx.query_membership()
        results, timing, outputs = {}, {}, []
        ledger = CostLedger()
        for name in SOURCES:
            if name not in sources:
                continue
            models, evals, wall = sources[name]
            table = build_attack_dataset(models, q)
            if atk.method == "lira":
                attack = LiRA(online=atk.mode == "online", fix_variance=atk.fix_variance).fit(table)
                scores = attack.decision_function(target_scores(target, q))
            else:
                pop = build_attack_dataset(models, fx.population)
                attack = RMIA(mode=atk.mode, gamma=atk.gamma, a=atk.a).fit(table, pop)
                scores = attack.decision_function(
                    true_class_probs(target.predict_proba(q.features), q.labels),
                    true_class_probs(target.predict_proba(fx.population.features), fx.population.labels))
            res = evaluate(scores, membership)
            results[name] = {"source": name, "method": atk.method, "mode": atk.mode,
                             "n_models": table.n_models, "n_queries": int(q.ids.size),
                             "auc": res.auc, "tf1": res.tf1, "tf01": res.tf01,
                             "cost_evaluations": int(evals), "cost_wallclock_s": None}
            timing[name] = wall
            ledger.record(name, forward=evals)
            d = self.path("results", name)
            d.mkdir(parents=True, exist_ok=True)
            res.roc.to_csv(d / "roc.csv")
            _write_scores(d / "scores.csv", q, membership, scores)
            outputs += [d / "roc.csv", d / "scores.csv"]
        base = results.get("base")
        for name, r in results.items():
            if base is None or name == "base":
                r.update(delta_auc=None, delta_tf1=None, delta_tf01=None, delta_cost_pct=None)
            else:
                r.update(delta_auc=r["auc"] - base["auc"], delta_tf1=r["tf1"] - base["tf1"],
                         delta_tf01=r["tf01"] - base["tf01"],
                         delta_cost_pct=cost_compare(ledger, "base", name).reduction_pct
                         if base["cost_evaluations"] else None)
            p = self.path("results", name, "report.json")
            _dump_json(p, {k: r[k] for k in REPORT_KEYS})
            outputs.append(p)
        rows = [(n, "evaluations", results[n]["cost_evaluations"]) for n in results]
        cost_csv = self.path("results", "cost.csv")
        cost_csv.write_text("run_id,metric,value\n" + "".join(f"{a},{b},{c}\n" for a, b, c in rows),
                            encoding="utf-8")
        _dump_json(self.path("results", "timing.json"), {"cost_wallclock_s": timing})
        return outputs + [cost_csv]

    def _diagnose(self):
        fx = self.fixture()
        target = load_shadow_model(self.path("models", "target"))
        shadows = self.shadows()
        reference = shadows[0] if shadows else target
        out = {"reference_model": getattr(reference, "name_", "target")}
        pre, post = self.pools(aligned=False), self.pools(aligned=True)
        if pre and post:
            rows = []
            for i, (p0, p1) in enumerate(zip(pre, post)):
                rows += [{"pool": i, **r} for r in alignment_consistency(p0, p1, reference, fx.universe)]
            out["consistency"] = rows
            out["consistency_pre_mean"] = float(np.mean([r["consistency_pre"] for r in rows]))
            out["consistency_post_mean"] = float(np.mean([r["consistency_post"] for r in rows]))
            probe = fx.population.features
            out["expert_similarity"] = [p.expert_similarity(probe) for p in post]
            probs = np.concatenate([p.query_shared_models(p.aligned_set_, probe)[0] for p in post])
            if probs.shape[0] >= 4:
                out["entropy_gain_pool"] = {str(k): v for k, v in entropy_diversity(probs).items()}
        if len(shadows) >= 4:
            probs = np.stack([m.predict_proba(fx.population.features) for m in shadows])
            out["entropy_gain_base"] = {str(k): v for k, v in entropy_diversity(probs).items()}
        p = self.path("diagnostics", "diagnostics.json")
        _dump_json(p, out)
        return [p]

    def _report(self):
        reports = load_reports(self.out)
        summary = summarize([reports])
        _dump_json(self.path("summary.json"), summary)
        self.path("summary.txt").write_text(format_summary(summary), encoding="utf-8")
        return [self.path("summary.json"), self.path("summary.txt")]

    def _gradcheck(self):
        p = self.path("gradcheck.json")
        _dump_json(p, run_gradcheck(self.config.seed))
        return [p]


def _evals(ledger: CostLedger) -> int:
    return sum(ledger.evaluations(r) for r in ledger.run_ids())


def _wall(models) -> float:
    return float(sum(m.ledger_.get(r)["wallclock_s"] for m in models for r in m.ledger_.run_ids()))


def _write_scores(path, queries: Dataset, membership, scores):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("query_id,label,member,score\n")
        for qid, lab, mem, s in zip(queries.ids, queries.labels, membership, scores):
            fh.write(f"{int(qid)},{int(lab)},{int(mem)},{float(s)!r}\n")


def load_reports(out_dir) -> dict:
    out_dir = Path(out_dir)
    reports = {}
    for name in SOURCES:
        p = out_dir / "results" / name / "report.json"
        if p.exists():
            reports[name] = json.loads(p.read_text(encoding="utf-8"))
    if not reports:
        raise DependencyError(f"no attack reports under {out_dir}; run attack first", stage="attack")
    return reports


def summarize(runs: list) -> dict:
    """Mean metrics per source over runs (one run per seed) plus Δ rows against ``base``."""
    names = [n for n in SOURCES if all(n in r for r in runs)]
    rows = {}
    for n in names:
        rows[n] = {k: float(np.mean([r[n][k] for r in runs]))
                   for k in ("auc", "tf1", "tf01", "cost_evaluations")}
    deltas = {}
    if "base" in rows:
        b = rows["base"]
        for n in names:
            if n == "base":
                continue
            r = rows[n]
            deltas[n] = {"delta_auc": r["auc"] - b["auc"], "delta_tf1": r["tf1"] - b["tf1"],
                         "delta_tf01": r["tf01"] - b["tf01"],
                         "delta_cost_pct": (100.0 * (1.0 - r["cost_evaluations"] / b["cost_evaluations"])
                                            if b["cost_evaluations"] else None)}
    method = runs[0][names[0]]["method"] if names else None
    mode = runs[0][names[0]]["mode"] if names else None
    return {"n_runs": len(runs), "method": method, "mode": mode, "rows": rows, "deltas": deltas}


def format_summary(summary: dict) -> str:
    """Plain-text table: one row per source, then a Δ row per non-base source."""
    lines = [f"{summary['method']}-{summary['mode']} over {summary['n_runs']} run(s)",
             f"{'source':<8}{'AUC':>8}{'TF1':>8}{'TF01':>8}{'cost':>14}"]
    for n, r in summary["rows"].items():
        lines.append(f"{n:<8}{r['auc']:>8.2f}{r['tf1']:>8.2f}{r['tf01']:>8.2f}"
                     f"{int(round(r['cost_evaluations'])):>14d}")
    for n, d in summary["deltas"].items():
        cost = ("n/a" if d["delta_cost_pct"] is None else
                CostReport("base", n, 1.0 - d["delta_cost_pct"] / 100.0, float("nan")).format_reduction())
        lines.append(f"{'Δ ' + n:<8}{format_delta(d['delta_auc']):>8}{format_delta(d['delta_tf1']):>8}"
                     f"{format_delta(d['delta_tf01']):>8}{cost:>14}")
    return "\n".join(lines) + "\n"


def run_gradcheck(seed: int = 0, n_pools: int = 20, tolerance: float = 1e-4) -> dict:
    """Finite-difference check of the composite pool objective on small random pools."""
    rs = RandomSource(seed)
    checks = []
    for k in range(n_pools):
        gen = rs.stream(f"gradcheck-{k}")
        alpha, beta = float(gen.uniform(0, 1)), float(gen.uniform(0, 0.1))
        rep = toy_pool_gradcheck(gen, alpha, beta, tolerance)
        checks.append({"pool": k, "alpha": alpha, "beta": beta, "max_rel_error": rep.max_rel_error,
                       "worst_param": rep.worst_param, "n_checked": rep.n_checked})
    worst = float(max(c["max_rel_error"] for c in checks))
    return {"n_pools": n_pools, "tolerance": tolerance, "max_rel_error": worst,
            "passed": bool(worst < tolerance), "checks": checks}


def run_seeds(config: ExperimentConfig, seeds=range(5), out_dir=None, force=False) -> dict:
    """Full pipeline per seed under ``out_dir/seed-K``; returns the mean summary."""
    root = Path(out_dir if out_dir is not None else config.output_dir)
    runs = []
    for s in seeds:
        cfg = dataclasses.replace(config, seed=int(s))
        Pipeline(cfg, root / f"seed-{s}").run_all(force=force)
        runs.append(load_reports(root / f"seed-{s}"))
    return write_multi_summary(root, runs)


def write_multi_summary(root: Path, runs) -> dict:
    summary = summarize(runs)
    _dump_json(root / "summary.json", summary)
    (root / "summary.txt").write_text(format_summary(summary), encoding="utf-8")
    return summary


__all__ = ["Pipeline", "STAGES", "format_summary", "load_reports",
           "run_gradcheck", "run_seeds", "summarize", "write_multi_summary"]
