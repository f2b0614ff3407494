"""Named experiment presets.

The simulation presets run at desk scale: 3000 sweeps with 2000 burn-in
rather than long production runs. The two real-data presets only fix
model settings; the data must be supplied.
"""
from __future__ import annotations

from .config import GridSpec, RunConfig
from .synth import gen_same_selfpersistence, gen_same_transition

SIMULATIONS = {
    "scenario1": dict(generator=gen_same_transition, states=8, T=1000, emission="multinomial",
                      test_blocks=5, test_length=200),
    "scenario2": dict(generator=gen_same_selfpersistence, states=8, T=1000, emission="multinomial",
                      test_blocks=5, test_length=200),
    "scenario1-gaussian": dict(generator=gen_same_transition, states=8, T=1000, emission="gaussian",
                               test_blocks=5, test_length=200),
    "scenario2-gaussian": dict(generator=gen_same_selfpersistence, states=8, T=1000,
                               emission="gaussian", test_blocks=5, test_length=200),
}


def preset_config(name) -> RunConfig:
    if name in SIMULATIONS:
        sim = SIMULATIONS[name]
        emission = ({"family": "multinomial", "n_symbols": sim["states"]}
                    if sim["emission"] == "multinomial" else {"family": "gaussian", "noise_var": 0.25})
        return RunConfig(variant="ds", sampler="direct", emission=emission, iterations=3000,
                         burn_in=2000, thin=10, chains=3, seed=0,
                         paths={"train": "train.csv", "test": "test.csv",
                                "truth_labels": "truth.csv", "output": "run"})
    if name == "hippocampus":
        return RunConfig(variant="ds", sampler="weaklimit", L=200, emission={"family": "poisson"},
                         iterations=3000, burn_in=2000, thin=10, chains=3, grid=GridSpec(30, 30),
                         paths={"train": "train.csv", "test": "test.csv", "output": "run"})
    if name == "mouse":
        return RunConfig(variant="ds", sampler="weaklimit", L=40, emission={"family": "ar"},
                         iterations=3000, burn_in=2000, thin=10, chains=3, grid=GridSpec(30, 30),
                         paths={"train": "train.csv", "test": "test.csv",
                                "init_labels": "init_labels.csv", "output": "run"})
    raise KeyError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")


PRESETS = sorted(SIMULATIONS) + ["hippocampus", "mouse"]


def simulate_preset(name, out_dir, seed=0, T=None, states=None):
    """Write train/test/truth files and a ready-to-run config for a simulation preset."""
    import json
    from pathlib import Path

    import numpy as np

    from .config import save_config
    from .io import write_labels, write_observations
    from .synth import gen_hmm

    if name not in SIMULATIONS:
        raise KeyError(f"preset {name!r} has no simulator; choose from {sorted(SIMULATIONS)}")
    sim = dict(SIMULATIONS[name])
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    n_states = states or sim["states"]
    gt = sim["generator"](states=n_states, T=T or sim["T"], emission=sim["emission"], rng=rng)
    test = [gen_hmm(gt.pi, gt.initial, gt.family, gt.params, sim["test_length"], rng).y
            for _ in range(sim["test_blocks"])]
    kind = "symbol" if sim["emission"] == "multinomial" else "real"
    write_observations(out / "train.csv", [gt.y], kind)
    write_observations(out / "test.csv", test, kind)
    write_labels(out / "truth.csv", gt.z)
    (out / "truth_params.json").write_text(json.dumps(
        {"pi": gt.pi.tolist(), "initial": gt.initial.tolist(), "kappa": gt.kappa.tolist(),
         "pibar": gt.pibar.tolist(), "emission": {k: np.asarray(v).tolist() for k, v in gt.params.items()},
         "seed": seed}, indent=1))
    cfg = preset_config(name)
    if sim["emission"] == "multinomial":
        cfg = cfg.replace(emission={"family": "multinomial", "n_symbols": n_states})
    save_config(cfg, out / "config.yaml")
    return gt
