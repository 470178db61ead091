"""Monte Carlo experiment runner comparing raw-data selection with aggregated selection."""

from __future__ import annotations

import logging
import statistics
from dataclasses import dataclass, field, replace

from ..aggregate import (DEFAULT_THRESHOLDS, BootstrapGenerator, DiffusionGenerator,
                         GraphRule, OracleGenerator, neighborhood_adjacency, run_graph_selection,
                         threshold_candidates, tune_selection)
from ..diffusion import TrainConfig, fine_tune, train
from ..numerics import RngStream, derive_seed
from .baselines import cpss_baseline, raw_lasso
from .designs import make_true_model, sample_dataset
from .graphs import make_small_world
from .metrics import score_selection

log = logging.getLogger(__name__)

METHODS = ("raw_lasso", "cpss", "aggregate_oracle", "aggregate_bootstrap", "aggregate_diffusion",
           "aggregate_transfer", "knockoff")
GRAPH_SCENARIO = "SmallWorld"


class ExperimentError(RuntimeError):
    pass


@dataclass
class ExperimentConfig:
    scenario: str = "Block5"
    p: int = 50
    n: int = 500
    trials: int = 10
    seed: int = 0
    methods: list[str] = field(default_factory=lambda: ["raw_lasso", "aggregate_oracle"])
    B: int = 20
    thresholds: list[float] = field(default_factory=lambda: list(DEFAULT_THRESHOLDS))
    gamma: float = 1.0
    grid_size: int = 50
    sigma: float = 1.0
    perturb_sd: float = 0.1
    n_syn: int | None = None
    diffusion: list[TrainConfig] = field(default_factory=lambda: [TrainConfig()])
    pretrain_n: int = 2000
    finetune_epochs: int | None = None
    cpss_pairs: int = 50
    cpss_q: int | None = None
    cpss_tau: float = 0.6
    graph_rule: str = "or"
    graph_threshold: float = 0.5
    k_neighbors: int = 4
    rewire_prob: float = 0.1
    coupling: float = 0.2

    def __post_init__(self):
        for m in self.methods:
            if m not in METHODS:
                raise ExperimentError(f"unknown method {m!r}; choose from {list(METHODS)}")
        if self.trials < 1 or self.B < 1:
            raise ExperimentError("trials and B must be positive")


def _diffusion_generators(cfg: ExperimentConfig, raw, trial: int, k: int, transfer: bool, truth):
    n_syn = cfg.n_syn or raw.n
    gens = []
    for i, tc in enumerate(cfg.diffusion):
        tc = replace(tc, seed=derive_seed(cfg.seed, trial, 4, k, i) % 2**63)
        if transfer:
            pre = sample_dataset(truth, cfg.pretrain_n, RngStream(derive_seed(cfg.seed, trial, 3)))
            base = train(pre, tc)
            ft = tc if cfg.finetune_epochs is None else replace(tc, epochs=cfg.finetune_epochs)
            model = fine_tune(base, raw, ft)
        else:
            model = train(raw, tc)
        gens.append(DiffusionGenerator(model, n_syn, label=f"diffusion[{i}]"))
    return gens


def _run_method(method: str, cfg: ExperimentConfig, truth, raw, trial: int, k: int):
    if method == "knockoff":
        raise ExperimentError("knockoff filters are not implemented (reserved method name)")
    method_seed = derive_seed(cfg.seed, trial, 2, k)
    if method == "raw_lasso":
        return raw_lasso(raw, gamma=cfg.gamma, grid_size=cfg.grid_size)
    if method == "cpss":
        return cpss_baseline(raw, cfg.cpss_pairs, cfg.cpss_q, cfg.cpss_tau, rng=RngStream(method_seed))
    n_syn = cfg.n_syn or raw.n
    if method == "aggregate_oracle":
        gens = [OracleGenerator(truth, n_syn)]
    elif method == "aggregate_bootstrap":
        gens = [BootstrapGenerator(raw, n_syn)]
    else:
        gens = _diffusion_generators(cfg, raw, trial, k, method == "aggregate_transfer", truth)
    result, _ = tune_selection(threshold_candidates(gens, cfg.thresholds), raw, cfg.B, cfg.gamma,
                               method_seed, grid_size=cfg.grid_size)
    return result.active_set


def _run_graph_method(method: str, cfg: ExperimentConfig, truth, raw, trial: int, k: int):
    rule = GraphRule(cfg.graph_rule)
    adj_to_edges = lambda a: [(i, j) for i in range(a.shape[0]) for j in range(i + 1, a.shape[0]) if a[i, j]]
    if method == "raw_lasso":
        return adj_to_edges(neighborhood_adjacency(raw.values, rule, cfg.gamma, cfg.grid_size))
    n_syn = cfg.n_syn or raw.n
    if method == "aggregate_oracle":
        g = OracleGenerator(truth.model(), n_syn)
    elif method == "aggregate_bootstrap":
        g = BootstrapGenerator(raw, n_syn)
    elif method in ("aggregate_diffusion", "aggregate_transfer"):
        g = _diffusion_generators(cfg, raw, trial, k, method == "aggregate_transfer", truth.model())[0]
    else:
        raise ExperimentError(f"method {method!r} does not apply to graph scenarios")
    res = run_graph_selection(g, cfg.B, cfg.graph_threshold, rule, derive_seed(cfg.seed, trial, 2, k),
                              gamma=cfg.gamma, grid_size=cfg.grid_size)
    return res.edge_set


def run_experiment(cfg: ExperimentConfig) -> dict:
    """Score every method on every trial; the report depends only on ``cfg``."""
    rows = []
    graph = cfg.scenario == GRAPH_SCENARIO
    for trial in range(cfg.trials):
        truth_rng = RngStream(derive_seed(cfg.seed, trial, 0))
        data_rng = RngStream(derive_seed(cfg.seed, trial, 1))
        if graph:
            truth = make_small_world(cfg.p, cfg.k_neighbors, cfg.rewire_prob, cfg.coupling, truth_rng)
            raw = truth.model().sample(cfg.n, data_rng)
            target = truth.edges
        else:
            truth = make_true_model(cfg.scenario, cfg.p, truth_rng, n=cfg.n, sigma=cfg.sigma,
                                    perturb_sd=cfg.perturb_sd)
            raw = sample_dataset(truth, cfg.n, data_rng)
            target = truth.support
        for k, method in enumerate(cfg.methods):
            try:
                if graph:
                    selected = _run_graph_method(method, cfg, truth, raw, trial, k)
                else:
                    selected = _run_method(method, cfg, truth, raw, trial, k)
            except Exception as exc:
                raise ExperimentError(f"trial {trial}, method {method}: {exc}") from exc
            m = score_selection(selected, target)
            log.info("trial %d %-20s f1=%.3f", trial, method, m.f1)
            rows.append({"trial": trial, "method": method, **m.to_dict(),
                         "selected": [list(e) if isinstance(e, tuple) else e for e in selected]})
    return {"rows": rows, "summary": summarize(rows, cfg.methods)}


def summarize(rows: list[dict], methods) -> dict:
    out = {}
    for method in methods:
        sub = [r for r in rows if r["method"] == method]
        entry = {"trials": len(sub)}
        for key in ("precision", "recall", "f1"):
            vals = [r[key] for r in sub]
            entry[f"{key}_mean"] = statistics.fmean(vals)
            entry[f"{key}_sd"] = statistics.stdev(vals) if len(vals) > 1 else 0.0
        out[method] = entry
    return out
