import numpy as np
import pytest

from dshdp.config import ConfigError, RunConfig, load_config, save_config
from dshdp.core import HyperParams
from dshdp.data import Dataset
from dshdp.direct import DirectSampler
from dshdp.emissions import Multinomial, PoissonVector
from dshdp.io import (CheckpointError, ConfigMismatchError, ParseError, apply_standardization,
                      load_checkpoint, read_labels, read_observations, save_checkpoint,
                      standardization, state_from_dict, state_to_dict, write_labels,
                      write_observations)
from dshdp.synth import gen_same_transition
from dshdp.weaklimit import WeakLimitSampler


def write(tmp_path, text, name="obs.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_symbol_file(tmp_path):
    blocks, kind = read_observations(write(tmp_path, "y\n0\n2\n1\n"))
    assert kind == "symbol" and len(blocks) == 1
    np.testing.assert_array_equal(blocks[0], [0, 2, 1])


def test_seq_blocks_and_counts(tmp_path):
    blocks, kind = read_observations(write(tmp_path, "seq,count1,count2\n0,1,2\n0,0,0\n1,5,3\n"))
    assert kind == "count" and [len(b) for b in blocks] == [2, 1]
    assert blocks[1].tolist() == [[5, 3]]


def test_seq_blocks_are_not_linked_by_transitions(tmp_path):
    blocks, _ = read_observations(write(tmp_path, "seq,y\n0,0\n0,0\n1,1\n1,1\n"))
    data = Dataset(blocks)
    s = DirectSampler(data, Multinomial(2), HyperParams(1.0, 1.0, 1.0, 1.0),
                      np.random.default_rng(0), init_labels=np.array([0, 0, 1, 1]))
    assert s.state.n[0, 1] == 0
    for _ in range(20):
        s.sweep()
        assert s.state.w[2] == 0
        s.check_invariants()


@pytest.mark.parametrize("text,line,what", [
    ("y\n0\n1,2\n", 3, "expected 1 fields"),
    ("y1,y2\n0.5,abc\n", 2, "non-numeric"),
    ("count1\n3\n-1\n", 3, "negative counts"),
    ("y\n0\n1.5\n", 3, "expected integers"),
    ("y1\n1\nnan\n", 3, "non-finite"),
])
def test_parse_errors_carry_line_numbers(tmp_path, text, line, what):
    with pytest.raises(ParseError, match=rf":{line}: .*{what}|:{line}: {what}"):
        read_observations(write(tmp_path, text))


def test_header_and_layout_errors(tmp_path):
    with pytest.raises(ParseError, match=":1:"):
        read_observations(write(tmp_path, "a,b\n1,2\n"))
    with pytest.raises(ParseError, match=":1:"):
        read_observations(write(tmp_path, "y2,y1\n1,2\n"))
    with pytest.raises(ParseError, match="contiguous"):
        read_observations(write(tmp_path, "seq,y\n0,1\n1,1\n0,1\n"))
    with pytest.raises(ParseError, match="no observations"):
        read_observations(write(tmp_path, "y\n"))
    with pytest.raises(ParseError, match="empty"):
        read_observations(write(tmp_path, ""))


def test_round_trips(tmp_path):
    gt = gen_same_transition(states=4, T=50, rng=0)
    write_observations(tmp_path / "a.csv", [gt.y])
    blocks, kind = read_observations(tmp_path / "a.csv")
    assert kind == "symbol" and np.array_equal(blocks[0], gt.y)
    g = gen_same_transition(states=4, T=30, emission="gaussian", rng=1)
    write_observations(tmp_path / "b.csv", [g.y[:10], g.y[10:]])
    blocks, kind = read_observations(tmp_path / "b.csv")
    assert kind == "real"
    np.testing.assert_array_equal(np.concatenate(blocks).ravel(), g.y)
    counts = np.random.default_rng(0).poisson(3, size=(7, 3))
    write_observations(tmp_path / "c.csv", [counts])
    assert np.array_equal(read_observations(tmp_path / "c.csv")[0][0], counts)
    write_labels(tmp_path / "z.csv", gt.z)
    assert np.array_equal(read_labels(tmp_path / "z.csv", gt.z.size), gt.z)
    with pytest.raises(ParseError):
        read_labels(tmp_path / "z.csv", 3)


def test_standardization():
    blocks = [np.array([[1.0, 5.0], [3.0, 5.0]]), np.array([[5.0, 5.0]])]
    mom = standardization(blocks)
    assert mom["mean"] == [3.0, 5.0] and mom["sd"][1] == 1.0
    z = np.concatenate(apply_standardization(blocks, mom))
    np.testing.assert_allclose(z.mean(axis=0), 0, atol=1e-15)


def _direct(seed=0):
    gt = gen_same_transition(states=3, T=40, rng=seed)
    s = DirectSampler(Dataset([gt.y]), Multinomial(3), HyperParams(2.0, 1.0, 1.0, 1.0),
                      np.random.default_rng(seed))
    for _ in range(3):
        s.sweep()
    return s


def _same_state(a, b):
    assert type(a) is type(b)
    for f in ("z", "w", "kappa", "n"):
        np.testing.assert_array_equal(getattr(a, f), getattr(b, f))
    assert a.hyper == b.hyper and a.iteration == b.iteration
    assert a.family.to_dict() == b.family.to_dict()


def test_direct_state_round_trip():
    s = _direct()
    back = state_from_dict(state_to_dict(s.state))
    _same_state(s.state, back)
    np.testing.assert_array_equal(back.beta.weights, s.state.beta.weights)
    assert back.beta.remainder == s.state.beta.remainder
    for k in s.state.stats:
        np.testing.assert_array_equal(back.stats[k], s.state.stats[k])
        assert back.stats[k].dtype == s.state.stats[k].dtype


def test_weaklimit_state_round_trip():
    y = np.random.default_rng(0).poisson(2, size=(30, 2))
    s = WeakLimitSampler(Dataset([y]), PoissonVector(2), HyperParams(2.0, 1.0, 1.0, 1.0),
                         np.random.default_rng(0), L=4)
    s.sweep()
    back = state_from_dict(state_to_dict(s.state))
    _same_state(s.state, back)
    np.testing.assert_array_equal(back.pibar, s.state.pibar)
    np.testing.assert_array_equal(back.theta["rate"], s.state.theta["rate"])


def test_checkpoint_continuation_is_exact(tmp_path):
    a = _direct(3)
    path = tmp_path / "ck.json"
    fp = {"family": "multinomial"}
    snap = np.random.default_rng(9)
    save_checkpoint(path, state=a.state, rng=a.rng, snapshot_rng=snap, chain=0, fingerprint=fp)
    state, rng, snap2, chain = load_checkpoint(path, fp)
    b = DirectSampler(a.data, state.family, state.hyper, rng, state=state)
    assert chain == 0 and snap2.random() == snap.random()
    for _ in range(4):
        a.sweep()
        b.sweep()
        _same_state(a.state, b.state)


def test_checkpoint_errors(tmp_path):
    a = _direct()
    path = tmp_path / "ck.json"
    save_checkpoint(path, state=a.state, rng=a.rng, snapshot_rng=a.rng, chain=0,
                    fingerprint={"family": "multinomial"})
    with pytest.raises(ConfigMismatchError):
        load_checkpoint(path, {"family": "poisson"})
    text = path.read_text()
    path.write_text(text.replace('"version": 1', '"version": 99'))
    with pytest.raises(CheckpointError, match="version"):
        load_checkpoint(path)
    path.write_text(text[: len(text) // 2])
    with pytest.raises(CheckpointError, match="unreadable"):
        load_checkpoint(path)


def test_config_validation_and_yaml(tmp_path):
    cfg = RunConfig(sampler="weaklimit", emission={"family": "poisson"})
    assert cfg.L == 200 and cfg.thin == 10
    assert cfg.priors.alpha_shape == 1.0 and cfg.priors.alpha_rate == 0.01
    save_config(cfg, tmp_path / "c.yaml")
    back = load_config(tmp_path / "c.yaml")
    assert back.L == 200 and back.paths.output == str(tmp_path / "run")
    for bad in (dict(burn_in=5, iterations=5), dict(thin=0), dict(sampler="direct", L=5),
                dict(grid={"phi": 1, "eta": 5}), dict(variant="nope"), dict(sampler="gibbs"),
                dict(emission={"family": "bernoulli"}), dict(unknown_key=1)):
        with pytest.raises(ConfigError):
            RunConfig.from_dict(bad)
