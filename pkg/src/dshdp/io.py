"""CSV observation files, label files, standardization and chain checkpoints.

Observation files have a header. An optional leading ``seq`` column holds an
integer block id (each contiguous run is one block); the remaining columns
are ``y`` (integer symbols), ``y1..yd`` (reals) or ``count1..countC``
(nonnegative integer counts).
"""
from __future__ import annotations

import csv
import json
import re
from pathlib import Path

import numpy as np

from .core import GlobalWeights, HyperParams
from .direct import DirectChainState
from .emissions import family_from_dict
from .weaklimit import WeakLimitChainState

CHECKPOINT_FORMAT = "dshdp-checkpoint"
CHECKPOINT_VERSION = 1


class ParseError(ValueError):
    pass


class CheckpointError(ValueError):
    pass


class ConfigMismatchError(CheckpointError):
    pass


def fmt(x):
    return format(float(x), ".17g")


def _column_kind(header, path):
    cols = [h.strip() for h in header]
    has_seq = bool(cols) and cols[0] == "seq"
    body = cols[1:] if has_seq else cols
    if body == ["y"]:
        return has_seq, "symbol", 1
    for prefix, kind in (("y", "real"), ("count", "count")):
        if body and all(re.fullmatch(rf"{prefix}\d+", c) for c in body):
            if [int(c[len(prefix):]) for c in body] != list(range(1, len(body) + 1)):
                raise ParseError(f"{path}:1: columns must be {prefix}1..{prefix}{len(body)} in order")
            return has_seq, kind, len(body)
    raise ParseError(f"{path}:1: unrecognized header {cols!r}")


def read_observations(path):
    """Parse an observation file into (blocks, kind).

    ``kind`` is "symbol", "real" or "count". Symbol blocks are 1-d int arrays,
    real and count blocks are (T, d) arrays.
    """
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        has_seq, kind, d = _column_kind(header, path)
        width = d + has_seq
        ids, rows = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != width:
                raise ParseError(f"{path}:{lineno}: expected {width} fields, found {len(row)}")
            try:
                vals = [float(c) for c in row]
            except ValueError:
                raise ParseError(f"{path}:{lineno}: non-numeric field in {row!r}") from None
            if not all(np.isfinite(vals)):
                raise ParseError(f"{path}:{lineno}: non-finite value")
            if has_seq:
                if vals[0] != int(vals[0]):
                    raise ParseError(f"{path}:{lineno}: seq must be an integer")
                ids.append(int(vals[0]))
                vals = vals[1:]
            if kind != "real":
                if any(v != int(v) for v in vals):
                    raise ParseError(f"{path}:{lineno}: expected integers, found {row!r}")
                if any(v < 0 for v in vals):
                    what = "counts" if kind == "count" else "symbols"
                    raise ParseError(f"{path}:{lineno}: negative {what}")
            rows.append(vals)
    if not rows:
        raise ParseError(f"{path}: no observations")
    arr = np.asarray(rows)
    if kind == "symbol":
        arr = arr[:, 0].astype(np.int64)
    elif kind == "count":
        arr = arr.astype(np.int64)
    if not has_seq:
        return [arr], kind
    ids = np.asarray(ids)
    cut = np.flatnonzero(ids[1:] != ids[:-1]) + 1
    run_ids = ids[np.concatenate(([0], cut))]
    if np.unique(run_ids).size != run_ids.size:
        raise ParseError(f"{path}: rows of a seq id must be contiguous")
    return np.split(arr, cut), kind


def write_observations(path, blocks, kind=None):
    blocks = [np.asarray(b) for b in blocks]
    first = blocks[0]
    if kind is None:
        if first.ndim == 1 and np.issubdtype(first.dtype, np.integer):
            kind = "symbol"
        elif np.issubdtype(first.dtype, np.integer):
            kind = "count"
        else:
            kind = "real"
    d = 1 if first.ndim == 1 else first.shape[1]
    cols = {"symbol": ["y"], "real": [f"y{i + 1}" for i in range(d)],
            "count": [f"count{i + 1}" for i in range(d)]}[kind]
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow((["seq"] if len(blocks) > 1 else []) + cols)
        for b_id, block in enumerate(blocks):
            for row in block.reshape(len(block), -1):
                vals = [str(int(v)) for v in row] if kind != "real" else [fmt(v) for v in row]
                wr.writerow(([str(b_id)] if len(blocks) > 1 else []) + vals)


def read_labels(path, T=None):
    """One integer per row; a non-numeric first line is taken as a header."""
    path = Path(path)
    out = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or not row[0].strip():
                continue
            if len(row) != 1:
                raise ParseError(f"{path}:{lineno}: expected one field, found {len(row)}")
            try:
                v = float(row[0])
            except ValueError:
                if lineno == 1:
                    continue
                raise ParseError(f"{path}:{lineno}: non-numeric label {row[0]!r}") from None
            if v != int(v):
                raise ParseError(f"{path}:{lineno}: labels must be integers")
            out.append(int(v))
    labels = np.asarray(out, dtype=np.int64)
    if T is not None and labels.size != T:
        raise ParseError(f"{path}: {labels.size} labels for {T} observations")
    return labels


def write_labels(path, labels, header="z"):
    with open(path, "w") as fh:
        fh.write(header + "\n")
        fh.writelines(f"{int(v)}\n" for v in np.asarray(labels).ravel())


def standardization(blocks):
    y = np.concatenate([np.asarray(b, dtype=float).reshape(len(b), -1) for b in blocks])
    mean = y.mean(axis=0)
    sd = y.std(axis=0)
    sd[sd == 0] = 1.0
    return {"mean": mean.tolist(), "sd": sd.tolist()}


def apply_standardization(blocks, moments):
    mean, sd = np.asarray(moments["mean"]), np.asarray(moments["sd"])
    return [(np.asarray(b, dtype=float).reshape(len(b), -1) - mean) / sd for b in blocks]


# ---------------------------------------------------------------------------
# checkpoints

def _arrays(d):
    return {k: np.asarray(v).tolist() for k, v in d.items()}


def _dtype_arrays(d, like):
    return {k: np.asarray(v, dtype=like[k].dtype) for k, v in d.items()}


def state_to_dict(state):
    common = {"z": state.z.tolist(), "w": state.w.tolist(), "kappa": state.kappa.tolist(),
              "hyper": state.hyper.to_dict(), "n": state.n.tolist(),
              "family": state.family.to_dict(), "iteration": state.iteration}
    if isinstance(state, DirectChainState):
        common.update(kind="direct", beta=state.beta.weights.tolist(),
                      remainder=state.beta.remainder, stats=_arrays(state.stats),
                      K=state.K)
    elif isinstance(state, WeakLimitChainState):
        common.update(kind="weaklimit", L=state.L, beta=state.beta.tolist(),
                      pibar=state.pibar.tolist(), theta=_arrays(state.theta))
    else:
        raise TypeError(f"cannot serialize {type(state).__name__}")
    return common


def state_from_dict(d):
    family = family_from_dict(d["family"])
    z = np.asarray(d["z"], dtype=np.int64)
    w = np.asarray(d["w"], dtype=np.int8)
    kappa = np.asarray(d["kappa"], dtype=float)
    hyper = HyperParams.from_dict(d["hyper"])
    if d["kind"] == "direct":
        K = int(d["K"])
        n = np.asarray(d["n"], dtype=np.int64).reshape(K, K)
        stats = _dtype_arrays(d["stats"], family.empty_stats(K))
        stats = {k: v.reshape(family.empty_stats(K)[k].shape) for k, v in stats.items()}
        beta = GlobalWeights(np.asarray(d["beta"], dtype=float), float(d["remainder"]))
        return DirectChainState(z, w, beta, kappa, hyper, n, stats, family, int(d["iteration"]))
    if d["kind"] == "weaklimit":
        L = int(d["L"])
        theta = {k: np.asarray(v, dtype=float) for k, v in d["theta"].items()}
        return WeakLimitChainState(L, z, w, np.asarray(d["beta"], dtype=float),
                                   np.asarray(d["pibar"], dtype=float), kappa, theta, hyper,
                                   np.asarray(d["n"], dtype=np.int64).reshape(L, L), family,
                                   int(d["iteration"]))
    raise CheckpointError(f"unknown chain kind {d['kind']!r}")


def _rng_state(rng):
    return rng.bit_generator.state


def _restore_rng(state):
    name = state["bit_generator"]
    bitgen = getattr(np.random, name)()
    bitgen.state = state
    return np.random.Generator(bitgen)


def save_checkpoint(path, *, state, rng, snapshot_rng, chain, fingerprint):
    doc = {"format": CHECKPOINT_FORMAT, "version": CHECKPOINT_VERSION, "chain": chain,
           "fingerprint": fingerprint, "state": state_to_dict(state),
           "rng": _rng_state(rng), "snapshot_rng": _rng_state(snapshot_rng)}
    tmp = Path(str(path) + ".tmp")
    tmp.write_text(json.dumps(doc))
    tmp.replace(path)


def load_checkpoint(path, fingerprint=None):
    """Returns (state, rng, snapshot_rng, chain)."""
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable checkpoint ({exc})") from None
    if not isinstance(doc, dict) or doc.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path}: not a checkpoint file")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: checkpoint version {doc.get('version')} is not supported "
                              f"(expected {CHECKPOINT_VERSION})")
    if fingerprint is not None:
        mismatched = sorted(k for k in fingerprint if doc["fingerprint"].get(k) != fingerprint[k])
        if mismatched:
            raise ConfigMismatchError(f"{path}: checkpoint does not match the config in {mismatched}")
    try:
        state = state_from_dict(doc["state"])
        rng = _restore_rng(doc["rng"])
        snap = _restore_rng(doc["snapshot_rng"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"{path}: corrupt checkpoint ({exc})") from None
    return state, rng, snap, doc["chain"]
