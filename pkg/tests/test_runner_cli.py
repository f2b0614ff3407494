import json
import shutil
from pathlib import Path

import pytest

from dshdp.cli import main
from dshdp.config import RunConfig, load_config, save_config
from dshdp.io import ConfigMismatchError, write_labels, write_observations
from dshdp.presets import PRESETS, preset_config
from dshdp.runner import is_snapshot, run, run_chain, worker_count
from dshdp.synth import gen_same_transition

def small_dataset(folder, T=60, seed=0):
    folder = Path(folder)
    folder.mkdir(parents=True, exist_ok=True)
    gt = gen_same_transition(states=3, T=T, rng=seed)
    test = gen_same_transition(states=3, T=30, rng=seed + 1)
    write_observations(folder / "train.csv", [gt.y])
    write_observations(folder / "test.csv", [test.y[:15], test.y[15:]])
    write_labels(folder / "truth.csv", gt.z)
    return gt


def small_config(folder, **kw):
    base = dict(emission={"family": "multinomial", "n_symbols": 3}, iterations=12, burn_in=4,
                thin=2, chains=2, seed=7, grid={"phi": 6, "eta": 6},
                paths={"train": str(folder / "train.csv"), "test": str(folder / "test.csv"),
                       "truth_labels": str(folder / "truth.csv"), "output": str(folder / "run")})
    base.update(kw)
    return RunConfig.from_dict(base)


def snapshot_bytes(out):
    return {p.relative_to(out).as_posix(): p.read_bytes() for p in sorted(Path(out).rglob("*"))
            if p.is_file() and not p.name.startswith("timing")}


def test_snapshot_schedule():
    its = [i for i in range(1, 31) if is_snapshot(i, 10, 10)]
    assert its == [11, 21]
    assert [i for i in range(1, 4) if is_snapshot(i, 0, 1)] == [1, 2, 3]


def test_worker_count(monkeypatch):
    monkeypatch.setenv("DSHDP_WORKERS", "3")
    assert worker_count(8) == 3
    assert worker_count(2) == 2
    assert worker_count(8, workers=1) == 1


def test_single_iteration_run(tmp_path):
    small_dataset(tmp_path)
    cfg = small_config(tmp_path, iterations=1, burn_in=0, chains=1)
    summary = run(cfg, workers=1, figures=False)
    out = Path(cfg.paths.output)
    recs = (out / "samples.jsonl").read_text().splitlines()
    snaps = (out / "snapshots_chain0.jsonl").read_text().splitlines()
    assert len(recs) == 1 and len(snaps) == 1
    rec = json.loads(recs[0])
    assert set(rec) == {"chain", "iteration", "K", "alpha", "gamma", "rho1", "rho2", "loglik"}
    assert summary["chains"][0]["snapshots"] == 1
    assert summary["mean_nll"] > 0 and 0 <= summary["mean_hamming"] <= 1


@pytest.mark.parametrize("sampler", ["direct", "weaklimit"])
def test_outputs_and_determinism(tmp_path, sampler):
    small_dataset(tmp_path)
    kw = {"sampler": sampler}
    if sampler == "weaklimit":
        kw["L"] = 5
    cfg = small_config(tmp_path, **kw)
    run(cfg, workers=2, figures=True)
    out = Path(cfg.paths.output)
    for name in ("samples.jsonl", "timing.csv", "nll.csv", "hamming.csv", "summary.json",
                 "z_chain0.csv", "z_chain1.csv", "config.yaml", "family.json",
                 "figures/trace.png", "figures/posterior.png", "figures/nll.png",
                 "figures/hamming.png"):
        assert (out / name).exists(), name
    first = snapshot_bytes(out)
    shutil.rmtree(out)
    run(cfg, workers=1, figures=True)
    assert snapshot_bytes(out) == first
    nll = (out / "nll.csv").read_text().splitlines()
    assert nll[0] == "chain,iteration,nll" and len(nll) == 1 + 2 * 4


def test_chain_independence(tmp_path):
    small_dataset(tmp_path)
    cfg = small_config(tmp_path, chains=2)
    run(cfg, workers=1, figures=False)
    out = Path(cfg.paths.output)
    chain1 = (out / "records_chain1.jsonl").read_text()
    solo = small_config(tmp_path, chains=1, seed=8, paths={**cfg.to_dict()["paths"],
                                                          "output": str(tmp_path / "solo")})
    run(solo, workers=1, figures=False)
    solo0 = (tmp_path / "solo" / "records_chain0.jsonl").read_text()
    assert solo0.replace('"chain": 0', '"chain": 1') == chain1


def test_resume_equals_uninterrupted(tmp_path):
    small_dataset(tmp_path)
    full = small_config(tmp_path, iterations=10, burn_in=2, chains=1,
                        paths={"train": str(tmp_path / "train.csv"), "output": str(tmp_path / "full")})
    run(full, workers=1, figures=False)
    part = full.replace(iterations=5, paths={**full.to_dict()["paths"], "output": str(tmp_path / "part")})
    run(part, workers=1, figures=False)
    resumed = part.replace(iterations=10)
    run(resumed, workers=1, resume=True, figures=False)
    a, b = snapshot_bytes(tmp_path / "full"), snapshot_bytes(tmp_path / "part")
    for name in ("records_chain0.jsonl", "snapshots_chain0.jsonl", "z_chain0.csv",
                 "samples.jsonl", "checkpoint_chain0.json"):
        assert a[name] == b[name], name


def test_resume_rejects_other_family(tmp_path):
    small_dataset(tmp_path)
    cfg = small_config(tmp_path, chains=1, iterations=3, burn_in=0)
    run(cfg, workers=1, figures=False)
    g = gen_same_transition(states=3, T=60, emission="gaussian", rng=0)
    write_observations(tmp_path / "train.csv", [g.y])
    other = cfg.replace(emission={"family": "gaussian"},
                        paths={**cfg.to_dict()["paths"], "test": None})
    with pytest.raises(ConfigMismatchError):
        run_chain(other, 0, resume=True)


def test_nan_aborts_chain_with_diagnostic(tmp_path, monkeypatch):
    small_dataset(tmp_path)
    cfg = small_config(tmp_path, chains=1, iterations=6, burn_in=0)
    from dshdp import direct

    calls = {"n": 0}
    real = direct.DirectSampler.joint_loglik

    def flaky(self):
        calls["n"] += 1
        return float("nan") if calls["n"] == 3 else real(self)

    monkeypatch.setattr(direct.DirectSampler, "joint_loglik", flaky)
    summary = run(cfg, workers=1, figures=False)
    recs = [json.loads(x) for x in (Path(cfg.paths.output) / "samples.jsonl").read_text().splitlines()]
    assert len(recs) == 3 and recs[-1]["status"] == "aborted"
    assert "non-finite" in recs[-1]["reason"]
    assert summary["chains"][0]["status"] == "aborted"


def test_presets_resolve():
    for name in PRESETS:
        cfg = preset_config(name)
        assert cfg.thin == 10
    assert preset_config("hippocampus").grid.phi == 30
    with pytest.raises(KeyError):
        preset_config("nope")


def test_cli_end_to_end(tmp_path, capsys):
    data = tmp_path / "sim"
    assert main(["simulate", "--preset", "scenario1", "--out", str(data), "--T", "80",
                 "--states", "3"]) == 0
    cfg = load_config(data / "config.yaml")
    cfg = cfg.replace(grid={"phi": 5, "eta": 5})
    save_config(cfg, data / "config.yaml")
    code = main(["fit", str(data / "config.yaml"), "--iterations", "6", "--burn-in", "2",
                 "--chains", "1", "--workers", "1", "--out", str(tmp_path / "fit")])
    assert code == 0
    text = capsys.readouterr().out
    assert "chain,status" in text and "median alpha=" in text
    assert (tmp_path / "fit" / "figures" / "trace.png").stat().st_size > 0
    assert main(["eval", str(tmp_path / "fit"), "--test", str(data / "test.csv"),
                 "--truth", str(data / "truth.csv")]) == 0
    rows = (tmp_path / "fit" / "eval.csv").read_text().splitlines()
    # preset thin is 10, so iterations 3..6 hold one snapshot
    assert rows[0] == "chain,iteration,nll,hamming" and len(rows) == 2
    ref = {ln.split(",")[1]: ln.split(",")[2] for ln in (tmp_path / "fit" / "nll.csv").read_text().splitlines()[1:]}
    for ln in rows[1:]:
        _, it, nll, _ = ln.split(",")
        assert nll == ref[it]
    assert main(["describe-config", "--preset", "mouse"]) == 0
    assert "sampler: weaklimit" in capsys.readouterr().out


def test_cli_reports_bad_input(tmp_path, capsys):
    (tmp_path / "c.yaml").write_text("iterations: 5\nburn_in: 9\n")
    assert main(["fit", str(tmp_path / "c.yaml")]) == 2
    assert "burn_in" in capsys.readouterr().err
    (tmp_path / "d.yaml").write_text("paths: {train: missing.csv}\n")
    assert main(["fit", str(tmp_path / "d.yaml")]) == 2
