"""Acceptance criteria, one test each; every test prints a PASS/FAIL line.

Run ``python tests/test_acceptance.py`` for the lines alone, or through pytest
where they are repeated in the terminal summary.
"""

import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest
import yaml

sys.path.insert(0, str(Path(__file__).parent))

from acceptance_log import record  # noqa: E402
from oracles import projected_gradient_lasso  # noqa: E402
from synthsel.aggregate import (Generator, GraphRule, OracleGenerator, ReplicateRecord,  # noqa: E402
                                aggregate_records, average_pvalues, run_graph_selection,
                                run_inference, threshold_candidates, threshold_set, tune_selection,
                                tune_with_fid)
from synthsel.data import Dataset, empirical_moments  # noqa: E402
from synthsel.diffusion import DenoiserMlp, TrainConfig, generate, train  # noqa: E402
from synthsel.diffusion.model import CategoricalMode, _Layout, loss_and_grad  # noqa: E402
from synthsel.numerics import RngStream, frechet_distance  # noqa: E402
from synthsel.selectors import kkt_violation, lasso_fit, lasso_objective  # noqa: E402
from synthsel.simbench import (DesignKind, DesignSpec, TrueModel, chain_truth,  # noqa: E402
                               make_true_model, sample_dataset)
from synthsel.simbench.designs import GaussianModel  # noqa: E402
from synthsel.simbench.experiment import ExperimentConfig, run_experiment  # noqa: E402

DATA = Path(__file__).parent / "data"


def test_criterion_01_solver_correctness():
    start = time.perf_counter()
    worst_gap = worst_kkt = 0.0
    for i in range(100):
        rng = np.random.default_rng(1000 + i)
        n, p = int(rng.integers(5, 51)), int(rng.integers(1, 11))
        X = rng.normal(size=(n, p)) * rng.uniform(0.5, 3.0, size=p)
        y = X @ (rng.normal(size=p) * (rng.random(p) < 0.5)) + rng.normal(size=n)
        lam = float(rng.uniform(0.01, 0.5))
        fit = lasso_fit(X, y, lam)
        ours = lasso_objective(X, y, fit.coefficients, fit.intercept, lam)
        worst_gap = max(worst_gap, abs(ours - projected_gradient_lasso(X, y, lam)))
        worst_kkt = max(worst_kkt, kkt_violation(X, y, fit))
    elapsed = time.perf_counter() - start
    ok = worst_gap <= 1e-6 and worst_kkt <= 1e-6 and elapsed < 60
    assert record(1, "solver correctness", ok,
                  f"max |objective - oracle| = {worst_gap:.2e} (tol 1e-6), max KKT = {worst_kkt:.2e}, "
                  f"{elapsed:.1f}s")


def test_criterion_02_aggregation_identities():
    failures = 0
    for case in range(1000):
        rng = np.random.default_rng(case)
        B, p = int(rng.integers(1, 40)), int(rng.integers(1, 15))
        ind = (rng.random((B, p)) < rng.random(p)).astype(np.int64)
        records = [ReplicateRecord(b + 1, ind[b], ind[b].astype(float), 0.1) for b in range(B)]
        pi = aggregate_records(records, 0.5).pi_hat
        counts = ind.sum(axis=0)
        integral = np.array_equal(np.rint(pi * B), counts) and np.abs(pi * B - counts).max() <= 1e-12
        perm = rng.permutation(B)
        shuffled = aggregate_records([records[i] for i in perm], 0.5).pi_hat
        grid = np.sort(rng.uniform(1e-6, 1.0, size=6))
        sets = [set(threshold_set(pi, t)) for t in grid]
        monotone = all(a >= b for a, b in zip(sets, sets[1:]))
        pv = rng.random((B, p))
        avg = average_pvalues(pv)
        averaging = np.allclose(avg, pv.sum(axis=0) / B, rtol=0, atol=1e-15) and \
            np.allclose(avg, average_pvalues(pv[perm]), rtol=0, atol=1e-15)
        failures += not (integral and np.array_equal(pi, shuffled) and monotone and averaging)
    assert record(2, "aggregation identities", failures == 0, f"{failures} failures in 1000 cases")


def test_criterion_03_oracle_error_decreases_in_n():
    start = time.perf_counter()
    tm = make_true_model("Block5", 50)
    means = []
    for n in (100, 250, 500, 1000):
        errors = []
        for seed in range(10):
            original = sample_dataset(tm, n, RngStream(seed, 0))
            g = OracleGenerator(tm, n)
            result, _ = tune_selection(threshold_candidates([g]), original, B=20, seed=seed)
            errors.append(len(set(result.active_set) ^ set(tm.support)))
        means.append(float(np.mean(errors)))
    elapsed = time.perf_counter() - start
    ok = all(a >= b for a, b in zip(means, means[1:])) and means[-1] == 0 and elapsed < 600
    assert record(3, "oracle trend in n", ok,
                  f"mean |S_hat xor S| at n=100,250,500,1000: {means}, {elapsed:.0f}s")


def test_criterion_04_aggregate_beats_raw_lasso():
    start = time.perf_counter()
    gaps, detail = [], []
    for scenario in ("Block5", "Ar10"):
        report = run_experiment(ExperimentConfig(scenario=scenario, p=50, n=500, trials=10, B=20,
                                                 methods=["raw_lasso", "aggregate_oracle"]))
        raw = report["summary"]["raw_lasso"]["f1_mean"]
        agg = report["summary"]["aggregate_oracle"]["f1_mean"]
        gaps.append(agg - raw)
        detail.append(f"{scenario}: aggregate {agg:.3f} vs raw {raw:.3f}")
    elapsed = time.perf_counter() - start
    ok = min(gaps) >= 0 and max(gaps) >= 0.1 and elapsed < 900
    assert record(4, "aggregate beats raw lasso", ok, f"{'; '.join(detail)}, {elapsed:.0f}s")


def _gradient_check() -> float:
    rng = np.random.default_rng(1)
    from synthsel.data import ColumnKind, Schema
    schema = Schema(("x", "g", "y"),
                    (ColumnKind.continuous(), ColumnKind.categorical(3), ColumnKind.continuous()), 2)
    d = Dataset(schema, np.column_stack([rng.normal(size=6), rng.integers(0, 3, 6), rng.normal(size=6)]))
    layout = _Layout.of(schema, CategoricalMode.MULTINOMIAL)
    net = DenoiserMlp.init((layout.width + 2, 7, 6, layout.width), rng)
    for b in net.biases:
        b[:] = rng.normal(scale=0.3, size=b.shape)
    x0 = layout.encode(d.values)
    x_in = np.hstack([x0 + rng.normal(size=x0.shape), rng.normal(size=(6, 2))])
    eps = rng.normal(size=(6, layout.gaussian_width))
    _, grads = loss_and_grad(net, x_in, eps, x0, layout)
    worst, h = 0.0, 1e-6
    for p, g in zip(net.params, grads):
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + h
            up, _ = loss_and_grad(net, x_in, eps, x0, layout)
            p[idx] = old - h
            down, _ = loss_and_grad(net, x_in, eps, x0, layout)
            p[idx] = old
            num = (up - down) / (2 * h)
            worst = max(worst, abs(num - g[idx]) / max(abs(num), abs(g[idx]), 1e-3))
    return worst


def test_criterion_05_diffusion_sanity():
    start = time.perf_counter()
    mean_err, cov_err = [], []
    for seed in range(3):
        rng = np.random.default_rng(seed)
        Z = rng.multivariate_normal([0.0, 0.0], [[1.0, 0.5], [0.5, 1.0]], size=2000)
        d = Dataset.from_xy(Z[:, :1], Z[:, 1])
        g = generate(train(d, TrainConfig(seed=seed)), 2000, RngStream(seed, 1))
        m0, c0 = empirical_moments(d)
        m1, c1 = empirical_moments(g)
        mean_err.append(float(np.abs(m0 - m1).max()))
        cov_err.append(float(np.abs(c0 - c1).max()))
    grad_err = _gradient_check()
    elapsed = time.perf_counter() - start
    ok = max(mean_err) <= 0.1 and max(cov_err) <= 0.15 and grad_err <= 1e-4 and elapsed < 600
    assert record(5, "diffusion sanity", ok,
                  f"max mean err {max(mean_err):.3f} (tol 0.1), max cov err {max(cov_err):.3f} "
                  f"(tol 0.15), gradient rel err {grad_err:.1e} (tol 1e-4), {elapsed:.0f}s")


def test_criterion_06_diffusion_selection():
    start = time.perf_counter()
    report = run_experiment(ExperimentConfig(scenario="IidS5", p=20, n=500, trials=5, B=10,
                                             methods=["aggregate_diffusion"]))
    f1 = report["summary"]["aggregate_diffusion"]["f1_mean"]
    elapsed = time.perf_counter() - start
    assert record(6, "end-to-end diffusion selection", f1 >= 0.8 and elapsed < 1800,
                  f"mean F1 {f1:.3f} over 5 seeds (need >= 0.8), {elapsed:.0f}s")


def test_criterion_07_inference_calibration():
    start = time.perf_counter()
    missed, false_strong, false_null = 0, [], []
    for seed in range(10):
        tm = make_true_model("IidS5", 30, RngStream(seed), n=300)
        res = run_inference(OracleGenerator(tm, 300), B=20, seed=seed)
        flagged = set(res.significant)
        missed += len(set(tm.support) - flagged)
        false_strong.append(len(flagged - set(tm.support)) / (30 - 5))
        null = TrueModel(DesignSpec(DesignKind.IID, 30, 300), np.zeros(30))
        false_null.append(len(run_inference(OracleGenerator(null, 300), B=20, seed=seed).significant) / 30)
    elapsed = time.perf_counter() - start
    ok = missed == 0 and np.mean(false_strong) <= 0.10 and np.mean(false_null) <= 0.10 and elapsed < 300
    assert record(7, "inference calibration", ok,
                  f"true variables missed {missed}, false-flag rate {np.mean(false_strong):.3f} "
                  f"(strong) / {np.mean(false_null):.3f} (null), {elapsed:.0f}s")


def test_criterion_08_graph_selection():
    start = time.perf_counter()
    chain = chain_truth()
    contained = True
    res = {}
    for rule in ("or", "and"):
        res[rule] = run_graph_selection(OracleGenerator(chain.model(), 500), B=10, rule=rule, seed=0)
    chain_ok = all(r.edge_set == chain.edges and r.edge_pi_hat[0, 1] == 1.0 and r.edge_pi_hat[1, 2] == 1.0
                   for r in res.values())
    contained &= set(res["and"].edge_set) <= set(res["or"].edge_set)
    empty = 0
    null = OracleGenerator(GaussianModel(np.eye(10)), 500)
    for seed in range(10):
        e_or = run_graph_selection(null, B=10, rule=GraphRule.OR, seed=seed)
        e_and = run_graph_selection(null, B=10, rule=GraphRule.AND, seed=seed)
        empty += not e_or.edge_set
        contained &= set(e_and.edge_set) <= set(e_or.edge_set)
    elapsed = time.perf_counter() - start
    ok = chain_ok and empty >= 9 and contained and elapsed < 300
    assert record(8, "graph selection", ok,
                  f"chain recovered with frequency 1.0: {chain_ok}, empty graph in {empty}/10 seeds, "
                  f"And within Or: {contained}, {elapsed:.0f}s")


class _ScaledGenerator(Generator):
    """Draws from a truth whose columns are rescaled: a moment-unfaithful competitor."""

    kind = "scaled"

    def __init__(self, truth, n_syn, scale):
        self.truth, self.n_syn, self.scale = truth, n_syn, scale

    def sample(self, n, rng):
        d = self.truth.sample(n, rng)
        return Dataset(d.schema, d.values * self.scale)


def test_criterion_09_fid():
    zero = frechet_distance([0.3, -1.0], [[2.0, 0.4], [0.4, 1.0]], [0.3, -1.0], [[2.0, 0.4], [0.4, 1.0]])
    closed = frechet_distance([0.0], [[1.0]], [1.0], [[4.0]])
    tm = TrueModel(DesignSpec(DesignKind.AR, 5, 500, rho=0.6), np.array([1.0, -1.0, 0, 0, 0]))
    wins = 0
    for seed in range(10):
        original = tm.sample(500, RngStream(seed, 0))
        faithful = OracleGenerator(tm, 500)
        competitor = _ScaledGenerator(tm, 500, 1.3)
        wins += tune_with_fid([competitor, faithful], original, 500, seed=seed) is faithful
    ok = abs(zero) <= 1e-12 and abs(closed - 2.0) <= 1e-9 and wins == 10
    assert record(9, "FID criterion", ok,
                  f"FID(identical) = {zero:.1e}, 1-D case = {closed:.12f}, faithful generator chosen {wins}/10")


def test_criterion_10_transfer():
    start = time.perf_counter()
    report = run_experiment(ExperimentConfig(scenario="Ar10", p=50, n=500, trials=5, B=10,
                                             methods=["aggregate_diffusion", "aggregate_transfer"]))
    scratch = report["summary"]["aggregate_diffusion"]["f1_mean"]
    transfer = report["summary"]["aggregate_transfer"]["f1_mean"]
    elapsed = time.perf_counter() - start
    ok = transfer >= scratch - 0.05 and elapsed < 2700
    assert record(10, "transfer learning", ok,
                  f"fine-tuned F1 {transfer:.3f} vs scratch F1 {scratch:.3f} (need >= scratch - 0.05), "
                  f"{elapsed:.0f}s")


def test_criterion_11_cli_determinism(tmp_path):
    cfg = {
        "seed": 11,
        "data": {"csv": str(DATA / "toy.csv"), "schema": str(DATA / "toy_schema.yaml")},
        "diffusion": {"T": 50, "epochs": 10, "hidden_dims": [32, 32]},
        "selection": {"B": 4},
        "inference": {"B": 4},
        "graph": {"B": 2},
        "simulate": {"scenario": "Block5", "p": 10, "n": 100, "trials": 2, "B": 3, "cpss_pairs": 3},
    }
    path = tmp_path / "cfg.yaml"
    path.write_text(yaml.safe_dump(cfg), encoding="utf-8")
    mismatched = []
    for command in ("train", "generate", "select", "infer", "graph", "simulate"):
        outs = []
        for rep in ("a", "b"):
            out = tmp_path / rep / command
            proc = subprocess.run([sys.executable, "-m", "synthsel", command, "--config", str(path),
                                   "--out", str(out)], capture_output=True, text=True)
            if proc.returncode != 0:
                mismatched.append(f"{command} (exit {proc.returncode})")
            outs.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
        if not outs[0] or outs[0] != outs[1]:
            mismatched.append(command)
    ok = not mismatched
    assert record(11, "CLI determinism", ok,
                  "all six commands byte-identical on rerun" if ok else f"differences: {mismatched}")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-s", "-p", "no:cacheprovider"]))
