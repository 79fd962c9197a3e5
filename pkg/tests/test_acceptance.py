"""
Acceptance gate.  Each test records one PASS/FAIL line, printed in the
terminal summary.  Run alone with ``pytest tests/test_acceptance.py -s``.
"""

import itertools
import json
import math
import os
import subprocess
import sys
import time

import numpy as np
import pandas as pd
import pytest
import yaml
from scipy import stats

from decoylab import _rng
from decoylab.candidates import build_full, build_popularity_weighted, build_uniform, weighted_sample
from decoylab.config import load_config
from decoylab.corpus import InteractionSet
from decoylab.experiment import read_csv, run_simulation
from decoylab.metrics import hit_at, ndcg_at, precision_at, recall_at, reciprocal_rank
from decoylab.recommend import ImplicitMF
from decoylab.simulate import LdaParams, generate_preferences, observation_size, observe_popularity
from decoylab.splitting import Fold, crossfold_users

from .conftest import ACCEPTANCE_RESULTS, ROOT, random_interactions

pytestmark = pytest.mark.slow

YAHOO_TEST = os.environ.get("DECOYLAB_YAHOO_TEST")


def record(name, ok, detail):
    ACCEPTANCE_RESULTS.append((name, bool(ok), detail))
    print(f"{'PASS' if ok else 'FAIL'}  {name}  {detail}")
    assert ok, f"{name}: {detail}"


def cli(*args, check=True):
    r = subprocess.run([sys.executable, "-m", "decoylab.cli", *map(str, args)], capture_output=True, text=True)
    if check and r.returncode != 0:
        raise AssertionError(f"decoylab {' '.join(map(str, args))} exited {r.returncode}\n{r.stderr}")
    return r


# ------------------------------------------------------------ 1. dataset stats


def test_c1_ml100k_summary(ml100k_path):
    t0 = time.perf_counter()
    out = json.loads(cli("inspect", "--data", ml100k_path, "--format", "ml100k", "--json").stdout)
    elapsed = time.perf_counter() - t0
    ok = (
        abs(out["gini"] - 0.6290) <= 0.002
        and abs(out["density"] * 100 - 6.3) <= 0.1
        and out["n_items"] == 1682
        and elapsed < 5
    )
    record(
        "C1 ML-100K summary",
        ok,
        f"gini={out['gini']:.4f} density={out['density']:.4%} items={out['n_items']} time={elapsed:.2f}s",
    )


def test_c1_low_gini(tmp_path):
    if YAHOO_TEST:
        out = json.loads(cli("inspect", "--data", YAHOO_TEST, "--format", "yahoo-r3", "--json").stdout)
        record("C1 Yahoo!R3 test gini", abs(out["gini"] - 0.0798) <= 0.002, f"gini={out['gini']:.4f}")
        return
    # forced-random ratings: every user rates 10 items drawn uniformly
    rng = np.random.default_rng(0)
    rows = [(u, i, 3) for u in range(5400) for i in rng.choice(1000, 10, replace=False)]
    path = tmp_path / "surrogate.csv"
    pd.DataFrame(rows).to_csv(path, header=False, index=False)
    out = json.loads(cli("inspect", "--data", path, "--format", "csv", "--json").stdout)
    record("C1 low-gini surrogate (no Yahoo!R3 file)", out["gini"] < 0.1, f"gini={out['gini']:.4f}")


# ------------------------------------------------------------ 2. metric oracle


def direct_metrics(perm, rel, k):
    top = perm[:k]
    gains = [1 if i in rel else 0 for i in top]
    dcg = sum(g / math.log2(r + 2) for r, g in enumerate(gains))
    idcg = sum(1 / math.log2(r + 2) for r in range(min(k, len(rel))))
    first = next((r + 1 for r, g in enumerate(gains) if g), None)
    return {
        "ndcg": dcg / idcg if idcg else 0.0,
        "precision": sum(gains) / k,
        "recall": sum(gains) / len(rel) if rel else 0.0,
        "recip_rank": 1 / first if first else 0.0,
        "hit": 1 if first else 0,
    }


def test_c2_metric_oracle():
    t0 = time.perf_counter()
    cases = bad = 0
    for n in range(1, 7):
        items = list(range(n))
        subsets = [set(c) for r in range(n + 1) for c in itertools.combinations(items, r)]
        for perm in itertools.permutations(items):
            for rel in subsets:
                for k in sorted({1, 2, n}):
                    want = direct_metrics(perm, rel, k)
                    got = {
                        "ndcg": ndcg_at(perm, rel, k),
                        "precision": precision_at(perm, rel, k),
                        "recall": recall_at(perm, rel, k),
                        "recip_rank": reciprocal_rank(perm, rel, k),
                        "hit": hit_at(perm, rel, k),
                    }
                    cases += 1
                    if any(abs(got[m] - want[m]) > 1e-12 for m in want):
                        bad += 1
    elapsed = time.perf_counter() - t0
    ok = bad == 0 and cases < 10**6 and elapsed < 60
    record("C2 metric oracle", ok, f"cases={cases} mismatches={bad} time={elapsed:.1f}s")


# ------------------------------------------------------------ 3. samplers


def sampler_fold():
    "Test user 0 (train 0..4, test 5) plus others whose counts give decoys 6..9 weights 40,20,10,0."
    counts = {6: 40, 7: 20, 8: 10}
    users, items = [0] * 5, list(range(5))
    u = 1
    for item, c in counts.items():
        for _ in range(c):
            users.append(u)
            items.append(item)
            u += 1
    ui = pd.Index(range(u))
    ii = pd.RangeIndex(10)
    train = InteractionSet(users, items, user_index=ui, item_index=ii)
    test = InteractionSet([0], [5], user_index=ui, item_index=ii)
    return Fold(train, test, np.array([0]))


def test_c3_popularity_weighted_frequencies():
    n = 100_000
    fold = sampler_fold()
    picks = np.array([build_popularity_weighted(0, fold, 1, seed=s).decoy_codes[0] for s in range(n)])
    weights = {6: 40.0, 7: 20.0, 8: 10.0, 9: 0.1}
    total = sum(weights.values())
    worst = 0.0
    for item, w in weights.items():
        p = w / total
        z = abs(np.mean(picks == item) - p) / math.sqrt(p * (1 - p) / n)
        worst = max(worst, z)
    # the bare sampler on a skewed vector
    rng = _rng.stream(77)
    w = np.array([100.0, 1.0, 1.0])
    first = np.array([weighted_sample(w, 1, rng)[0] for _ in range(n)])
    for j in range(3):
        p = w[j] / w.sum()
        worst = max(worst, abs(np.mean(first == j) - p) / math.sqrt(p * (1 - p) / n))
    record("C3 popularity-weighted frequencies", worst < 4, f"trials={n} max|z|={worst:.2f}")


def test_c3_uniform_chi_square():
    n = 100_000
    data = InteractionSet([0] * 5, range(5), item_index=pd.RangeIndex(60))
    test = InteractionSet([0], [5], user_index=data.user_index, item_index=data.item_index)
    fold = Fold(data, test, np.array([0]))
    picks = np.array([build_uniform(0, fold, 1, seed=s).decoy_codes[0] for s in range(n)])
    observed = np.bincount(picks, minlength=60)[6:]
    assert observed.sum() == n
    _, p = stats.chisquare(observed)
    record("C3 uniform chi-square", p > 0.001, f"trials={n} pool=54 p={p:.4f}")


# ------------------------------------------------------------ 4. ML-100K direction

DIRECTIONAL = ROOT / "configs" / "ml100k-directional.yaml"


@pytest.fixture(scope="module")
def directional_run(ml100k_path, tmp_path_factory):
    out = tmp_path_factory.mktemp("directional")
    cfg = yaml.safe_load(DIRECTIONAL.read_text())
    cfg["dataset"]["path"] = str(ml100k_path)
    path = out / "config.yaml"
    path.write_text(yaml.safe_dump(cfg))
    t0 = time.perf_counter()
    cli("sweep", path, "--out", out / "t1", "--threads", 1)
    elapsed = time.perf_counter() - t0
    return path, out, elapsed


def decline(res, algo, strategy):
    sel = res[(res.algo == algo) & (res.strategy == strategy) & (res.metric == "ndcg")].set_index("n_decoys")["mean"]
    return (sel[20] - sel[500]) / sel[20]


def test_c4_directional(directional_run):
    _, out, elapsed = directional_run
    res = read_csv(out / "t1" / "sweep_results.csv")
    res = res[res.strategy != "full"].assign(n_decoys=lambda d: d.n_decoys.astype(int))
    u = {a: decline(res, a, "uniform") for a in ("Popular", "Random", "UserKNN")}
    p = {a: decline(res, a, "popularity-weighted") for a in ("Popular", "UserKNN")}
    a_ok = u["Popular"] < u["Random"] and u["Popular"] < u["UserKNN"]
    ratio = max(p["Popular"], p["UserKNN"]) / min(p["Popular"], p["UserKNN"])
    b_ok = p["Popular"] > 0 and p["UserKNN"] > 0 and ratio <= 2
    detail = (
        f"uniform decline Popular={u['Popular']:.1%} Random={u['Random']:.1%} UserKNN={u['UserKNN']:.1%}; "
        f"pop-weighted Popular={p['Popular']:.1%} UserKNN={p['UserKNN']:.1%} (ratio {ratio:.2f}); time={elapsed:.0f}s"
    )
    record("C4 ML-100K decoy-size direction", a_ok and b_ok and elapsed < 15 * 60, detail)


# ------------------------------------------------------------ 5. simulation bias

DESK = ROOT / "configs" / "simulation-desk.yaml"


def test_c5_simulated_bias(tmp_path):
    config = load_config(DESK)
    sim = config.simulation
    assert (sim.trials, sim.lda.n_users, sim.lda.n_items, sim.lda.lam, sim.n_decoys, sim.depth) == (
        20, 2000, 1500, 60, 1000, 50,
    )
    t0 = time.perf_counter()
    outcome = run_simulation(config, tmp_path)
    elapsed = time.perf_counter() - t0
    rep = outcome.report[outcome.report.metric == "ndcg"].set_index(["algo", "strategy"])["mean_bias"]
    algos = sorted({a for a, _ in rep.index})
    neg = {a: rep[(a, "full")] < 0 for a in algos}
    closer = {a: abs(rep[(a, "uniform")]) < abs(rep[(a, "full")]) for a in ("ImplicitMF", "ItemKNN", "Oracle")}
    ok = outcome.status == "ok" and all(neg.values()) and all(closer.values()) and elapsed < 30 * 60
    parts = [f"{a}: full={rep[(a, 'full')]:+.4f} uniform={rep[(a, 'uniform')]:+.4f}" for a in algos]
    record("C5 simulated nDCG bias", ok, "; ".join(parts) + f"; time={elapsed:.0f}s")


# ------------------------------------------------------------ 6. determinism


def test_c6_sweep_bytes(directional_run):
    path, out, _ = directional_run
    cli("sweep", path, "--out", out / "t1b", "--threads", 1)
    cli("sweep", path, "--out", out / "t4", "--threads", 4)
    names = ["sweep_users.csv", "sweep_results.csv", "manifest.csv"]
    same = all(
        (out / "t1" / n).read_bytes() == (out / r / n).read_bytes() for n in names for r in ("t1b", "t4")
    )
    record("C6 sweep byte-identical (2 runs, threads 1 and 4)", same, ", ".join(names))


def test_c6_simulate_bytes(tmp_path):
    cfg = yaml.safe_load(DESK.read_text())
    cfg["simulation"]["trials"] = 3
    path = tmp_path / "sim.yaml"
    path.write_text(yaml.safe_dump(cfg))
    for run, threads in (("a", 1), ("b", 1), ("c", 4)):
        cli("simulate", path, "--out", tmp_path / run, "--threads", threads)
    names = ["bias_trials.csv", "bias_report.csv"]
    same = all((tmp_path / "a" / n).read_bytes() == (tmp_path / r / n).read_bytes() for n in names for r in "bc")
    record("C6 simulate byte-identical (2 runs, threads 1 and 4)", same, ", ".join(names))


# ------------------------------------------------------------ 7. invariants

N_INSTANCES = 1000


def test_c7_candidate_invariants():
    violations = instances = 0
    seed = 0
    while instances < N_INSTANCES:
        rng = np.random.default_rng(seed)
        data = random_interactions(rng, int(rng.integers(6, 25)), int(rng.integers(8, 60)))
        seed += 1
        try:
            plan = crossfold_users(data, 2, 0.3, min_ratings=2, seed=seed)
        except ValueError:
            continue
        instances += 1
        fold = plan.folds[seed % 2]
        n = int(rng.integers(0, 40))
        for u in fold.test_users:
            train = set(fold.train.user_item_codes(fold.train.user_code(u)).tolist())
            full = build_full(u, fold)
            full_codes = set(full.codes.tolist())
            for cs in (full, build_uniform(u, fold, n, seed), build_popularity_weighted(u, fold, n, seed)):
                codes = cs.codes.tolist()
                test, decoys = set(cs.test_codes.tolist()), set(cs.decoy_codes.tolist())
                violations += (
                    len(codes) != len(set(codes))
                    or bool(test & decoys)
                    or bool(set(codes) & train)
                    or not set(codes) <= full_codes
                    or not test <= set(codes)
                    or (cs.requested is not None and len(decoys) != min(n, len(full_codes) - len(test)))
                )
    record("C7 candidate invariants", violations == 0, f"instances={instances} violations={violations}")


def test_c7_split_invariants():
    violations = instances = 0
    seed = 0
    while instances < N_INSTANCES:
        rng = np.random.default_rng(seed)
        data = random_interactions(rng, int(rng.integers(10, 40)), int(rng.integers(5, 30)))
        seed += 1
        try:
            plan = crossfold_users(data, int(rng.integers(2, 6)), float(rng.uniform(0.05, 0.9)), 2, seed)
        except ValueError:
            continue
        instances += 1
        pairs = set(zip(data.user_codes.tolist(), data.item_codes.tolist()))
        seen = []
        for fold in plan.folds:
            tr = set(zip(fold.train.user_codes.tolist(), fold.train.item_codes.tolist()))
            te = set(zip(fold.test.user_codes.tolist(), fold.test.item_codes.tolist()))
            violations += bool(tr & te) or (tr | te) != pairs
            for u in fold.test_users:
                uc = fold.train.user_code(u)
                violations += len(fold.train.user_item_codes(uc)) == 0 or len(fold.test.user_item_codes(uc)) == 0
            seen.extend(fold.test_users.tolist())
        violations += len(seen) != len(set(seen))
    record("C7 split invariants", violations == 0, f"instances={instances} violations={violations}")


def test_c7_dirichlet_and_observation():
    violations = 0
    for seed in range(N_INSTANCES):
        rng = np.random.default_rng(seed)
        params = LdaParams(
            n_features=int(rng.integers(1, 8)),
            alpha=float(rng.uniform(0.05, 2)),
            beta=float(rng.uniform(0.01, 1)),
            lam=float(rng.uniform(1, 40)),
            n_users=int(rng.integers(1, 15)),
            n_items=int(rng.integers(2, 80)),
            seed=seed,
        )
        tp = generate_preferences(params)
        violations += not np.allclose(tp.theta.sum(axis=1), 1.0, atol=1e-12)
        violations += not np.allclose(tp.phi.sum(axis=1), 1.0, atol=1e-12)
        frac, gamma = float(rng.uniform(0.05, 1.0)), float(rng.uniform(0, 3))
        obs = observe_popularity(tp, frac, gamma, seed)
        truth = tp.pairs.matrix()
        seen = obs.matrix()
        for u in range(params.n_users):
            a = set(seen.indices[seen.indptr[u] : seen.indptr[u + 1]].tolist())
            b = set(truth.indices[truth.indptr[u] : truth.indptr[u + 1]].tolist())
            violations += not a <= b or len(a) != observation_size(len(b), frac)
    record("C7 Dirichlet normalization + observation subset", violations == 0, f"instances={N_INSTANCES} violations={violations}")


def test_c7_als_monotone():
    violations = 0
    for seed in range(N_INSTANCES):
        rng = np.random.default_rng(seed)
        data = random_interactions(rng, int(rng.integers(2, 20)), int(rng.integers(2, 20)), explicit=False)
        model = ImplicitMF(
            features=int(rng.integers(1, 6)),
            iterations=4,
            reg=float(rng.uniform(0.01, 1)),
            weight=float(rng.uniform(1, 50)),
            seed=seed,
        ).fit(data)
        h = model.loss_history_
        violations += bool(np.any(np.diff(h) > 1e-9 * np.abs(h[:-1]) + 1e-12))
    record("C7 ALS objective monotone", violations == 0, f"instances={N_INSTANCES} violations={violations}")
