"""
Experiment drivers: the decoy-size sweep over real data, and the simulated
bias-estimation study.

Both drivers fan work out to a process pool and reduce results in a fixed
order, so outputs are byte-identical for any worker count.
"""

from __future__ import annotations

import hashlib
import io
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from . import _rng
from .candidates import FULL, POPULAR, UNIFORM, CandidateStrategy, build_full, build_popularity_weighted, build_uniform
from .config import RunConfig, SimulationSection
from .corpus import InteractionSet, load_interactions, popularity_ranks
from .metrics import USER_COLUMNS, MetricReport, evaluate_list
from .recommend import ColdStartError, RecommenderSpec, train
from .simulate import LdaParams, generate_preferences, observe_popularity
from .splitting import Fold, SplitPlan, crossfold_users, external_test_split, holdout_mask

_log = logging.getLogger(__name__)

MANIFEST_COLUMNS = ["cell", "status", "file", "sha256", "error"]
TRIAL_COLUMNS = ["trial", "algo", "strategy", "metric", "m_obs", "m_truth", "bias"]
REPORT_COLUMNS = [
    "algo",
    "strategy",
    "metric",
    "mean_bias",
    "se",
    "n_trials",
    "frac_negative",
    "mean_obs",
    "mean_truth",
]


def default_workers() -> int:
    return os.cpu_count() or 1


def _run_tasks(fn, tasks: list, threads: int | None):
    """Map ``fn`` over ``tasks``, in a process pool when more than one worker is allowed."""
    threads = threads or default_workers()
    if threads <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=min(threads, len(tasks))) as pool:
        return list(pool.map(fn, tasks))


def write_csv(frame: pd.DataFrame, path: Path, header_lines: list[str] = ()):
    buf = io.StringIO()
    for line in header_lines:
        buf.write(line + "\n")
    frame.to_csv(buf, index=False, lineterminator="\n")
    path.write_text(buf.getvalue())


def read_csv(path: str | Path) -> pd.DataFrame:
    """Read a CSV written by this module, skipping ``#`` header lines."""
    return pd.read_csv(path, comment="#")


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


# ---------------------------------------------------------------- sweep


@dataclass(frozen=True)
class Cell:
    fold: int
    algo: str
    strategy: CandidateStrategy

    @property
    def cell_id(self) -> str:
        return f"fold{self.fold}/{self.algo}/{self.strategy.label}"

    @property
    def filename(self) -> str:
        return f"fold{self.fold}__{self.algo}__{self.strategy.label}.csv"


@dataclass
class SweepOutcome:
    cells: list[Cell]
    computed: list[str] = field(default_factory=list)
    failed: dict[str, str] = field(default_factory=dict)
    paths: dict[str, Path] = field(default_factory=dict)

    @property
    def status(self) -> str:
        if not self.failed:
            return "ok"
        return "failed" if len(self.failed) == len(self.cells) else "partial"


def make_plan(config: RunConfig) -> SplitPlan:
    ds = config.dataset
    if ds is None:
        raise ValueError("sweep needs a dataset section")
    data = load_interactions(ds.path, ds.format)
    if ds.test_path:
        test = load_interactions(ds.test_path, ds.test_format or ds.format)
        fold = external_test_split(data, test)
        return SplitPlan([fold], config.seed, 1, math.nan, config.split.min_ratings)
    sp = config.split
    return crossfold_users(data, sp.folds, sp.test_fraction, sp.min_ratings, config.seed)


def plan_cells(config: RunConfig, n_folds: int | None = None) -> list[Cell]:
    if n_folds is None:
        n_folds = 1 if config.dataset and config.dataset.test_path else config.split.folds
    strategies = config.strategies.expand()
    return [
        Cell(f, spec.label, s) for f in range(n_folds) for spec in config.algorithm_specs() for s in strategies
    ]


def _n_decoys(strategy: CandidateStrategy):
    return pd.NA if strategy.n_decoys is None else strategy.n_decoys


def evaluate_fold(fold: Fold, spec: RecommenderSpec, strategies: list[CandidateStrategy], seed: int, cutoff: int):
    """
    Train ``spec`` on a fold and evaluate every test user under each
    strategy.  Returns a per-user frame for each strategy label.
    """
    model = train(spec, fold.train)
    counts = fold.train.item_counts()
    ranks = popularity_ranks(counts)
    records = {s.label: [] for s in strategies}
    for user in sorted(fold.test_users.tolist()):
        try:
            scores = model.score_codes(user)
        except ColdStartError:
            _log.warning("%s: cold-start user %s skipped", spec.label, user)
            continue
        for strat in strategies:
            cands = strat.build(user, fold, seed, counts=counts)
            relevant = set(cands.test_codes.tolist())
            ranked = model.rank(user, cands.codes, scores, n=cutoff)
            vals = evaluate_list(ranked.codes.tolist(), relevant, cutoff)
            vals["pop_rank"] = float(np.mean(ranks[ranked.codes]))
            empty = not relevant
            for metric, value in vals.items():
                records[strat.label].append(
                    (spec.label, strat.kind, _n_decoys(strat), metric, user, value, empty)
                )
    return {
        label: pd.DataFrame.from_records(rows, columns=USER_COLUMNS + ["empty"])
        for label, rows in records.items()
    }


def _sweep_task(args):
    fold, spec, strategies, seed, cutoff = args
    try:
        return "ok", evaluate_fold(fold, spec, strategies, seed, cutoff)
    except Exception as e:  # noqa: BLE001
        _log.exception("fold %d / %s failed", fold.fold_id, spec.label)
        return "error", f"{type(e).__name__}: {e}"


def _read_manifest(path: Path) -> dict[str, dict]:
    if not path.exists():
        return {}
    df = pd.read_csv(path, keep_default_na=False)
    return {r["cell"]: r for r in df.to_dict("records")}


def _cell_done(entry: dict | None, outdir: Path) -> bool:
    if entry is None or entry["status"] != "ok":
        return False
    f = outdir / entry["file"]
    return f.exists() and _sha256(f) == entry["sha256"]


def run_sweep(config: RunConfig, out_dir: str | Path, threads: int | None = None) -> SweepOutcome:
    """
    Run (or resume) the strategy and decoy-size sweep.

    Each (fold, algorithm) pair trains once and evaluates every strategy;
    per-cell results go to ``cells/`` and are recorded with content hashes
    in ``manifest.csv``, so a rerun only recomputes missing or altered cells.
    Writes ``sweep_users.csv`` (per-user values) and ``sweep_results.csv``
    (aggregate means).
    """
    out = Path(out_dir)
    (out / "cells").mkdir(parents=True, exist_ok=True)
    plan = make_plan(config)
    cells = plan_cells(config, len(plan.folds))
    specs = {s.label: s for s in config.algorithm_specs()}
    manifest_path = out / "manifest.csv"
    manifest = _read_manifest(manifest_path)
    outcome = SweepOutcome(cells)

    pending: dict[tuple[int, str], list[Cell]] = {}
    for c in cells:
        if not _cell_done(manifest.get(c.cell_id), out):
            pending.setdefault((c.fold, c.algo), []).append(c)

    keys = sorted(pending)
    tasks = [
        (plan.folds[f], specs[a], [c.strategy for c in pending[(f, a)]], config.seed, config.metrics.cutoff)
        for f, a in keys
    ]
    for (f, a), (status, payload) in zip(keys, _run_tasks(_sweep_task, tasks, threads)):
        for c in pending[(f, a)]:
            outcome.computed.append(c.cell_id)
            if status == "ok":
                path = out / "cells" / c.filename
                write_csv(payload[c.strategy.label], path)
                manifest[c.cell_id] = {
                    "cell": c.cell_id,
                    "status": "ok",
                    "file": f"cells/{c.filename}",
                    "sha256": _sha256(path),
                    "error": "",
                }
            else:
                manifest[c.cell_id] = {"cell": c.cell_id, "status": "failed", "file": "", "sha256": "", "error": payload}
        print(f"fold {f} {a}: {status} ({len(pending[(f, a)])} cells)", file=sys.stderr)

    rows = [manifest[c.cell_id] for c in cells]
    pd.DataFrame(rows, columns=MANIFEST_COLUMNS).sort_values("cell").to_csv(
        manifest_path, index=False, lineterminator="\n"
    )

    parts = []
    for c in cells:
        entry = manifest[c.cell_id]
        if entry["status"] == "ok":
            parts.append(read_csv(out / entry["file"]))
        else:
            outcome.failed[c.cell_id] = entry["error"]
    if parts:
        report = MetricReport(_coerce(pd.concat(parts, ignore_index=True)), config.metrics.exclude_empty)
        header = config.header_lines()
        users_path, results_path = out / "sweep_users.csv", out / "sweep_results.csv"
        write_csv(report.per_user(), users_path, header)
        write_csv(report.aggregate(), results_path, header)
        outcome.paths = {"users": users_path, "results": results_path, "manifest": manifest_path}
    return outcome


def _coerce(rows: pd.DataFrame) -> pd.DataFrame:
    rows = rows.copy()
    rows["n_decoys"] = rows["n_decoys"].astype("Int64")
    rows["empty"] = rows["empty"].astype(bool)
    return rows


# ---------------------------------------------------------------- simulation


@dataclass(frozen=True)
class BiasTrialResult:
    """
    One simulation trial: observed metric values per (algorithm, strategy),
    truth values per algorithm, in long form with ``TRIAL_COLUMNS``.
    """

    trial: int
    rows: pd.DataFrame
    dropped_users: int = 0
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


def trial_seed(master_seed: int, trial: int) -> int:
    return int(np.random.SeedSequence([_rng.TRIAL, master_seed, trial]).generate_state(1, np.uint32)[0])


def split_observations(observed: InteractionSet, test_fraction: float, min_ratings: int, seed: int) -> Fold:
    """Single per-user holdout: every user with ``min_ratings`` observations is a test user."""
    codes = np.flatnonzero(observed.user_counts() >= min_ratings)
    mask = holdout_mask(observed, codes, test_fraction, seed)
    return Fold(observed.select(~mask), observed.select(mask), observed.user_index.values[codes], fold_id=0)


def run_bias_trial(
    trial: int,
    sim: SimulationSection,
    master_seed: int = 0,
) -> BiasTrialResult:
    """
    One bias-estimation trial.

    Generates true preferences, observes them with popularity bias, holds
    out part of each user's observations, trains every configured
    algorithm, and ranks ``sim.depth`` items per test user from the full,
    uniform and popularity-weighted candidate sets (``sim.n_decoys`` decoys).
    Observed metrics use the held-out observations as relevant items; the
    truth metric scores the full-candidate list against the user's true
    preferences outside training.  Bias is observed minus truth.
    """
    seed = trial_seed(master_seed, trial)
    lda = sim.lda
    params = LdaParams(
        lda.n_features,
        tuple(lda.alpha) if isinstance(lda.alpha, list) else lda.alpha,
        tuple(lda.beta) if isinstance(lda.beta, list) else lda.beta,
        lda.lam,
        lda.n_users,
        lda.n_items,
        seed,
    )
    truth = generate_preferences(params)
    observed = observe_popularity(truth, sim.observe_fraction, sim.gamma, seed)
    fold = split_observations(observed, sim.test_fraction, sim.min_ratings, seed)
    if len(fold.test_users) == 0:
        raise RuntimeError("no evaluable test users")

    counts = fold.train.item_counts()
    users = sorted(fold.test_users.tolist())
    cands = {}
    for u in users:
        cands[u] = {
            FULL: build_full(u, fold),
            UNIFORM: build_uniform(u, fold, sim.n_decoys, seed),
            POPULAR: build_popularity_weighted(u, fold, sim.n_decoys, seed, counts=counts),
        }
    liked = truth.pairs.matrix()

    specs = [a.to_spec(seed) for a in sim.algorithms]
    rows = []
    dropped = set()
    depth = sim.depth
    for spec in specs:
        model = train(spec, fold.train, truth if spec.kind == "oracle" else None)
        sums = {}
        n_users = 0
        for u in users:
            try:
                scores = model.score_codes(u)
            except ColdStartError:
                dropped.add(u)
                continue
            n_users += 1
            ucode = fold.train.user_code(u)
            trained = set(fold.train.user_item_codes(ucode).tolist())
            true_rel = set(liked.indices[liked.indptr[ucode] : liked.indptr[ucode + 1]].tolist()) - trained
            for strat, cs in cands[u].items():
                ranked = model.rank(u, cs.codes, scores, n=depth).codes.tolist()
                obs = evaluate_list(ranked, set(cs.test_codes.tolist()), depth)
                if strat == FULL or sim.truth_for_sampled:
                    tru = evaluate_list(ranked, true_rel, depth)
                for m in sim.metrics:
                    acc = sums.setdefault((strat, m), [[], []])
                    acc[0].append(obs[m])
                    if strat == FULL or sim.truth_for_sampled:
                        acc[1].append(tru[m])
        if n_users == 0:
            raise RuntimeError(f"{spec.label}: no evaluable users")
        for m in sim.metrics:
            truth_full = math.fsum(sums[(FULL, m)][1]) / n_users
            for strat in (FULL, UNIFORM, POPULAR):
                obs_vals, tru_vals = sums[(strat, m)]
                m_obs = math.fsum(obs_vals) / n_users
                m_truth = math.fsum(tru_vals) / n_users if sim.truth_for_sampled else truth_full
                rows.append((trial, spec.label, strat, m, m_obs, m_truth, m_obs - m_truth))
        _log.debug("trial %d %s done", trial, spec.label)

    frame = pd.DataFrame(rows, columns=TRIAL_COLUMNS)
    return BiasTrialResult(trial, frame, len(dropped))


def _trial_task(args):
    trial, sim, seed = args
    try:
        return run_bias_trial(trial, sim, seed)
    except Exception as e:  # noqa: BLE001
        _log.exception("trial %d failed", trial)
        return BiasTrialResult(trial, pd.DataFrame(columns=TRIAL_COLUMNS), error=f"{type(e).__name__}: {e}")


def aggregate_bias(trials: list[BiasTrialResult]) -> pd.DataFrame:
    """
    Mean bias, its standard error, and the fraction of negative-bias trials
    per (algorithm, strategy, metric).  Failed trials are excluded; the
    standard error is missing when only one trial contributes.
    """
    if not trials:
        raise ValueError("need at least one trial")
    ok = [t.rows for t in trials if t.ok]
    if not ok:
        return pd.DataFrame(columns=REPORT_COLUMNS)
    df = pd.concat(ok, ignore_index=True).sort_values(["algo", "strategy", "metric", "trial"], kind="stable")
    out = []
    for (algo, strat, metric), g in df.groupby(["algo", "strategy", "metric"], sort=True):
        b = g["bias"].to_numpy(dtype=np.float64)
        n = len(b)
        mean = math.fsum(b) / n
        se = math.sqrt(math.fsum((b - mean) ** 2) / (n - 1) / n) if n > 1 else math.nan
        out.append(
            (
                algo,
                strat,
                metric,
                mean,
                se,
                n,
                float(np.mean(b < 0)),
                math.fsum(g["m_obs"]) / n,
                math.fsum(g["m_truth"]) / n,
            )
        )
    return pd.DataFrame(out, columns=REPORT_COLUMNS)


@dataclass
class SimulationOutcome:
    trials: list[BiasTrialResult]
    report: pd.DataFrame
    paths: dict[str, Path] = field(default_factory=dict)

    @property
    def failed(self) -> list[int]:
        return [t.trial for t in self.trials if not t.ok]

    @property
    def status(self) -> str:
        if not self.failed:
            return "ok"
        return "failed" if len(self.failed) == len(self.trials) else "partial"


def run_simulation(config: RunConfig, out_dir: str | Path | None = None, threads: int | None = None) -> SimulationOutcome:
    """Run every configured trial; write ``bias_trials.csv`` and ``bias_report.csv`` when ``out_dir`` is given."""
    sim = config.simulation
    if sim is None:
        raise ValueError("config has no simulation section")
    tasks = [(t, sim, config.seed) for t in range(sim.trials)]
    results = sorted(_run_tasks(_trial_task, tasks, threads), key=lambda r: r.trial)
    for r in results:
        print(f"trial {r.trial}: {'ok' if r.ok else r.error}", file=sys.stderr)
    report = aggregate_bias(results)
    outcome = SimulationOutcome(results, report)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        header = config.header_lines()
        rows = [r.rows for r in results if r.ok]
        trials_df = pd.concat(rows, ignore_index=True) if rows else pd.DataFrame(columns=TRIAL_COLUMNS)
        paths = {"trials": out / "bias_trials.csv", "report": out / "bias_report.csv"}
        write_csv(trials_df, paths["trials"], header)
        write_csv(report, paths["report"], header)
        failures = pd.DataFrame(
            [(r.trial, r.error) for r in results if not r.ok], columns=["trial", "error"]
        )
        if len(failures):
            paths["failures"] = out / "bias_failures.csv"
            write_csv(failures, paths["failures"], header)
        outcome.paths = paths
    return outcome

