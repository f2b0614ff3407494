"""Multi-chain orchestration: data preparation, chain loops and result files.

Chain c draws from ``SeedSequence(seed + c)``, split into a sweep stream and
a snapshot stream, so a chain's records never depend on the other chains or
on how many workers run them. Wall-clock timings go to their own file so the
remaining outputs are byte-for-byte reproducible.
"""
from __future__ import annotations

import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import RunConfig, save_config
from .core import ConsistencyError, RhoGrid, StickyGrid, Variant, initial_hyperparameters
from .data import Dataset
from .direct import DirectSampler
from .emissions import (ARGaussian, GaussianKnownVar, Multinomial,
                        PoissonVector, family_from_dict)
from .evaluation import HMMParams, hamming_distance, hmm_loglik
from .io import (apply_standardization, fmt, load_checkpoint, read_labels, read_observations,
                 save_checkpoint, standardization)
from .weaklimit import WeakLimitSampler

log = logging.getLogger(__name__)

FAMILY_KIND = {"multinomial": "symbol", "gaussian": "real", "poisson": "count", "ar": "real"}


@dataclass
class Prepared:
    train: Dataset
    test: Dataset | None
    family: object
    truth: np.ndarray | None
    init_labels: np.ndarray | None
    moments: dict | None


def build_family(config: RunConfig, train_blocks, test_blocks=()):
    e = dict(config.emission)
    name = e.pop("family")
    y = np.concatenate([np.asarray(b) for b in train_blocks])
    if name == "multinomial":
        if "n_symbols" not in e:
            e["n_symbols"] = int(max(np.max(b) for b in list(train_blocks) + list(test_blocks))) + 1
        return Multinomial(**e)
    if name == "gaussian":
        if y.ndim == 2 and y.shape[1] != 1:
            raise ValueError("the gaussian family takes a single column y1")
        if "prior_mean" in e and "prior_var" in e:
            return GaussianKnownVar(**e)
        return GaussianKnownVar.from_data(y.ravel(), e.get("noise_var", 0.25))
    if name == "poisson":
        e.setdefault("n_dims", y.shape[1])
        return PoissonVector(**e)
    if name == "ar":
        if "M" in e or "S0" in e:
            return ARGaussian(**e)
        return ARGaussian.from_data(y, e.get("scale", 0.75))
    raise ValueError(f"unknown emission family {name!r}")


def _load_blocks(path, family):
    blocks, kind = read_observations(path)
    want = FAMILY_KIND[family]
    if kind != want:
        raise ValueError(f"{path}: {family} emissions need {want} columns, file has {kind}")
    if family == "gaussian":
        blocks = [b.reshape(len(b), -1)[:, 0] if b.ndim == 2 else b for b in blocks]
    return blocks


def prepare(config: RunConfig) -> Prepared:
    fam = config.family
    if config.paths.train is None:
        raise ValueError("config has no training data path")
    train = _load_blocks(config.paths.train, fam)
    test = _load_blocks(config.paths.test, fam) if config.paths.test else None
    moments = None
    if fam == "ar" and config.standardize:
        moments = standardization(train)
        train = apply_standardization(train, moments)
        if test is not None:
            test = apply_standardization(test, moments)
    family = build_family(config, train, test or ())
    ar = fam == "ar"
    train_ds = Dataset(train, autoregressive=ar)
    test_ds = Dataset(test, autoregressive=ar) if test is not None else None
    for ds in filter(None, (train_ds, test_ds)):
        for t in range(min(ds.T, 1)):
            family.check_observation(ds.y[t])
        if fam == "multinomial" and (ds.y.min() < 0 or ds.y.max() >= family.n_symbols):
            raise ValueError(f"symbols outside 0..{family.n_symbols - 1}")
    truth = read_labels(config.paths.truth_labels, train_ds.T) if config.paths.truth_labels else None
    init = read_labels(config.paths.init_labels, train_ds.T) if config.paths.init_labels else None
    return Prepared(train_ds, test_ds, family, truth, init, moments)


def grids(config: RunConfig):
    rho = RhoGrid(phi_cells=config.grid.phi, eta_cells=config.grid.eta, eta_max=config.priors.eta_max)
    sticky = StickyGrid(c_cells=config.grid.eta, phi_cells=config.grid.phi,
                        shape=config.priors.alpha_shape, rate=config.priors.alpha_rate)
    return rho, sticky


def make_sampler(config: RunConfig, prep: Prepared, rng, state=None):
    rho, sticky = grids(config)
    if state is None:
        hyper = initial_hyperparameters(config.variant, config.priors, rng, rho, sticky)
    else:
        hyper = state.hyper
    common = dict(data=prep.train, family=prep.family if state is None else state.family,
                  hyper=hyper, rng=rng, priors=config.priors, rho_grid=rho, sticky_grid=sticky,
                  init_labels=prep.init_labels, state=state)
    if config.sampler == "direct":
        return DirectSampler(**common)
    return WeakLimitSampler(L=config.L, **common)


def fingerprint(config: RunConfig, prep: Prepared):
    return {"sampler": config.sampler, "variant": Variant.parse(config.variant).value,
            "L": config.L, "family": config.family, "T": int(prep.train.T), "seed": config.seed}


def is_snapshot(iteration, burn_in, thin):
    return iteration > burn_in and (iteration - burn_in - 1) % thin == 0


def chain_files(out: Path, chain: int):
    return {"records": out / f"records_chain{chain}.jsonl",
            "timing": out / f"timing_chain{chain}.csv",
            "snapshots": out / f"snapshots_chain{chain}.jsonl",
            "z": out / f"z_chain{chain}.csv",
            "metrics": out / f"metrics_chain{chain}.csv",
            "checkpoint": out / f"checkpoint_chain{chain}.json"}


def _iteration_of(line, kind):
    if kind.endswith("jsonl"):
        return json.loads(line)["iteration"]
    return int(line.split(",", 1)[0])


def _truncate(path: Path, upto: int, header: bool):
    """Keep only lines whose iteration is <= upto (used when resuming)."""
    if not path.exists():
        return
    lines = path.read_text().splitlines(keepends=True)
    head, body = (lines[:1], lines[1:]) if header else ([], lines)
    keep = [ln for ln in body if _iteration_of(ln, path.name) <= upto]
    path.write_text("".join(head + keep))


def _finite(rec):
    return all(math.isfinite(rec[k]) for k in ("alpha", "gamma", "rho1", "rho2", "loglik"))


def run_chain(config: RunConfig, chain: int, resume: bool = False):
    """Run (or continue) one chain and write its per-chain files. Returns its status."""
    prep = prepare(config)
    out = Path(config.paths.output)
    files = chain_files(out, chain)
    fp = fingerprint(config, prep)
    if resume and files["checkpoint"].exists():
        state, rng, snap_rng, _ = load_checkpoint(files["checkpoint"], fp)
        sampler = make_sampler(config, prep, rng, state)
        start = state.iteration
        for key, header in (("records", False), ("timing", True), ("snapshots", False),
                            ("z", True), ("metrics", True)):
            _truncate(files[key], start, header)
    else:
        seq_sweep, seq_snap = np.random.SeedSequence(config.seed + chain).spawn(2)
        rng, snap_rng = np.random.default_rng(seq_sweep), np.random.default_rng(seq_snap)
        sampler = make_sampler(config, prep, rng)
        start = 0
        files["timing"].write_text("iteration,wall_ms\n")
        files["z"].write_text("iteration," + ",".join(f"t{t}" for t in range(prep.train.T)) + "\n")
        files["metrics"].write_text("iteration,nll,hamming\n")
        for key in ("records", "snapshots"):
            files[key].write_text("")
    status = "ok"
    with open(files["records"], "a") as rec_fh, open(files["timing"], "a") as tim_fh, \
            open(files["snapshots"], "a") as snap_fh, open(files["z"], "a") as z_fh, \
            open(files["metrics"], "a") as met_fh:
        for it in range(start + 1, config.iterations + 1):
            t0 = time.perf_counter()
            try:
                sampler.sweep()
                rec = {"chain": chain, "iteration": it, "K": sampler.n_states,
                       **{k: float(getattr(sampler.state.hyper, k))
                          for k in ("alpha", "gamma", "rho1", "rho2")},
                       "loglik": sampler.joint_loglik()}
            except (ArithmeticError, ConsistencyError, np.linalg.LinAlgError, ValueError) as exc:
                rec = {"chain": chain, "iteration": it, "status": "aborted",
                       "reason": f"{type(exc).__name__}: {exc}"}
            if "status" not in rec and not _finite(rec):
                rec = {"chain": chain, "iteration": it, "status": "aborted",
                       "reason": "non-finite value in " + json.dumps(
                           {k: v for k, v in rec.items() if isinstance(v, float)})}
            rec_fh.write(json.dumps(rec) + "\n")
            tim_fh.write(f"{it},{fmt((time.perf_counter() - t0) * 1e3)}\n")
            if rec.get("status") == "aborted":
                log.error("chain %d aborted at iteration %d: %s", chain, it, rec["reason"])
                status = "aborted"
                break
            if is_snapshot(it, config.burn_in, config.thin):
                params = sampler.posterior_params(snap_rng)
                snap_fh.write(json.dumps({"chain": chain, "iteration": it,
                                          "params": params.to_dict()}) + "\n")
                z_fh.write(f"{it}," + ",".join(map(str, sampler.state.z)) + "\n")
                nll = -hmm_loglik(params, prep.family, prep.test) if prep.test is not None else None
                ham = hamming_distance(sampler.state.z, prep.truth) if prep.truth is not None else None
                met_fh.write(f"{it},{'' if nll is None else fmt(nll)},"
                             f"{'' if ham is None else fmt(ham)}\n")
            if config.checkpoint_every and it % config.checkpoint_every == 0:
                for fh in (rec_fh, tim_fh, snap_fh, z_fh, met_fh):
                    fh.flush()
                save_checkpoint(files["checkpoint"], state=sampler.state, rng=rng,
                                snapshot_rng=snap_rng, chain=chain, fingerprint=fp)
    if status == "ok":
        save_checkpoint(files["checkpoint"], state=sampler.state, rng=rng,
                        snapshot_rng=snap_rng, chain=chain, fingerprint=fp)
    return status


def _chain_job(args):
    config_dict, chain, resume = args
    return run_chain(RunConfig.from_dict(config_dict), chain, resume)


def worker_count(chains, workers=None):
    if workers is None:
        env = os.environ.get("DSHDP_WORKERS")
        workers = int(env) if env else (os.cpu_count() or 1)
    return max(1, min(int(workers), chains))


def run(config: RunConfig, workers=None, resume=False, figures=True):
    """Run every chain of ``config`` and write merged results into the output folder."""
    out = Path(config.paths.output)
    out.mkdir(parents=True, exist_ok=True)
    prep = prepare(config)
    save_config(config, out / "config.yaml")
    (out / "family.json").write_text(json.dumps(prep.family.to_dict()))
    if prep.moments is not None:
        (out / "standardization.json").write_text(json.dumps(prep.moments))
    n = worker_count(config.chains, workers)
    jobs = [(config.to_dict(), c, resume) for c in range(config.chains)]
    if n == 1:
        statuses = [_chain_job(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=n) as pool:
            statuses = list(pool.map(_chain_job, jobs))
    summary = collect(config, statuses)
    if figures:
        from .plots import render_run
        render_run(out, config)
    return summary


def read_records(out: Path, chains):
    recs = []
    for c in range(chains):
        path = chain_files(out, c)["records"]
        recs.extend(json.loads(ln) for ln in path.read_text().splitlines() if ln)
    return recs


def read_metrics(out: Path, chains):
    """{chain: (iterations, nll, hamming)} with NaN for missing values."""
    res = {}
    for c in range(chains):
        lines = chain_files(out, c)["metrics"].read_text().splitlines()[1:]
        rows = [ln.split(",") for ln in lines if ln]
        it = np.array([int(r[0]) for r in rows], dtype=np.int64)
        nll = np.array([float(r[1]) if r[1] else np.nan for r in rows])
        ham = np.array([float(r[2]) if r[2] else np.nan for r in rows])
        res[c] = (it, nll, ham)
    return res


def read_snapshots(out: Path, chain):
    path = chain_files(out, chain)["snapshots"]
    return [(d["iteration"], HMMParams.from_dict(d["params"]))
            for d in map(json.loads, path.read_text().splitlines()) if d]


def _median(values):
    return float(np.median(values)) if len(values) else None


def collect(config: RunConfig, statuses):
    """Merge per-chain files into samples.jsonl, timing.csv, nll.csv, hamming.csv, summary.json."""
    out = Path(config.paths.output)
    recs = read_records(out, config.chains)
    with open(out / "samples.jsonl", "w") as fh:
        fh.writelines(json.dumps(r) + "\n" for r in recs)
    with open(out / "timing.csv", "w") as fh:
        fh.write("chain,iteration,wall_ms\n")
        for c in range(config.chains):
            for ln in chain_files(out, c)["timing"].read_text().splitlines()[1:]:
                fh.write(f"{c},{ln}\n")
    metrics = read_metrics(out, config.chains)
    for name, col in (("nll", 1), ("hamming", 2)):
        with open(out / f"{name}.csv", "w") as fh:
            fh.write(f"chain,iteration,{name}\n")
            for c, m in metrics.items():
                for it, v in zip(m[0], m[col]):
                    if np.isfinite(v):
                        fh.write(f"{c},{it},{fmt(v)}\n")
    post = [r for r in recs if "status" not in r and r["iteration"] > config.burn_in]
    ks = [r["K"] for r in post]
    hist = {str(k): int(v) for k, v in zip(*np.unique(ks, return_counts=True))} if ks else {}
    per_chain = []
    for c in range(config.chains):
        it, nll, ham = metrics[c]
        per_chain.append({"chain": c, "status": statuses[c], "snapshots": int(it.size),
                          "mean_nll": float(np.mean(nll)) if np.isfinite(nll).any() else None,
                          "mean_hamming": float(np.mean(ham)) if np.isfinite(ham).any() else None})
    all_nll = np.concatenate([m[1] for m in metrics.values()])
    all_ham = np.concatenate([m[2] for m in metrics.values()])
    summary = {
        "sampler": config.sampler, "variant": Variant.parse(config.variant).value,
        "iterations": config.iterations, "burn_in": config.burn_in, "thin": config.thin,
        "posterior_median": {k: _median([r[k] for r in post])
                             for k in ("alpha", "gamma", "rho1", "rho2")},
        "posterior_median_rho_sum": _median([r["rho1"] + r["rho2"] for r in post]),
        "state_count_histogram": hist,
        "mean_nll": float(np.nanmean(all_nll)) if np.isfinite(all_nll).any() else None,
        "mean_hamming": float(np.nanmean(all_ham)) if np.isfinite(all_ham).any() else None,
        "chains": per_chain,
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    return summary


def evaluate(run_dir, test_path=None, truth_path=None):
    """Recompute held-out NLL (and Hamming distances) from a finished run's snapshots."""
    from .config import load_config
    out = Path(run_dir)
    config = load_config(out / "config.yaml")
    family = family_from_dict(json.loads((out / "family.json").read_text()))
    rows = []
    test = None
    if test_path is not None:
        blocks = _load_blocks(test_path, config.family)
        mom = out / "standardization.json"
        if mom.exists():
            blocks = apply_standardization(blocks, json.loads(mom.read_text()))
        test = Dataset(blocks, autoregressive=config.family == "ar")
    truth = read_labels(truth_path) if truth_path is not None else None
    for c in range(config.chains):
        snaps = read_snapshots(out, c)
        zrows = {}
        if truth is not None:
            for ln in chain_files(out, c)["z"].read_text().splitlines()[1:]:
                it, *z = ln.split(",")
                zrows[int(it)] = np.array(z, dtype=np.int64)
        for it, params in snaps:
            nll = -hmm_loglik(params, family, test) if test is not None else float("nan")
            ham = hamming_distance(zrows[it], truth) if truth is not None else float("nan")
            rows.append((c, it, nll, ham))
    with open(out / "eval.csv", "w") as fh:
        fh.write("chain,iteration,nll,hamming\n")
        for c, it, nll, ham in rows:
            fh.write(f"{c},{it},{'' if math.isnan(nll) else fmt(nll)},"
                     f"{'' if math.isnan(ham) else fmt(ham)}\n")
    return rows
