"""Instance files.

CVRP JSON::

    {"problem": "cvrp", "capacity": 30, "velocity": 1.0, "depot": [x, y],
     "online": false, "customers": [{"x": .., "y": .., "demand": .., "arrival": ..}, ...]}

PMSP JSON::

    {"problem": "pmsp", "m": 3, "c": 5, "setup": [[..], ..], "online": false,
     "arrivals": null | {"intervals": .., "interval_length": .., ...},
     "jobs": [{"class": 1, "p": .., "w": .., "arrival": ..}, ...]}

``problem`` and ``online`` are optional on input; ``problem`` is inferred from
the keys present.  Floats are written with ``repr`` precision so files round
trip exactly.

Liao-style scheduling text files (format version ``liao-v1``) are read by
:func:`read_liao`; see its docstring for the grammar.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict

import numpy as np

from .envs.cvrp import CvrpInstance
from .envs.pmsp import OnlineArrivalConfig, PmspInstance

LIAO_FORMATS = ("liao-v1",)


class FormatError(ValueError):
    pass


def instance_to_dict(inst) -> dict:
    if isinstance(inst, CvrpInstance):
        return {
            "problem": "cvrp",
            "capacity": int(inst.capacity),
            "velocity": float(inst.velocity),
            "depot": [float(inst.depot[0]), float(inst.depot[1])],
            "online": bool(inst.online),
            "customers": [
                {"x": float(x), "y": float(y), "demand": int(d), "arrival": float(a)}
                for (x, y), d, a in zip(inst.xy, inst.demand, inst.arrival)
            ],
        }
    if isinstance(inst, PmspInstance):
        return {
            "problem": "pmsp",
            "m": int(inst.machines),
            "c": int(inst.classes),
            "setup": [[int(v) for v in row] for row in inst.setup],
            "online": bool(inst.online),
            "arrivals": asdict(inst.arrivals) if inst.arrivals is not None else None,
            "jobs": [
                {"class": int(k), "p": int(p), "w": int(w), "arrival": float(a)}
                for k, p, w, a in zip(inst.job_class, inst.p, inst.w, inst.arrival)
            ],
        }
    raise TypeError(f"cannot serialise {type(inst).__name__}")


def instance_from_dict(d: dict):
    problem = d.get("problem") or ("cvrp" if "customers" in d else "pmsp" if "jobs" in d else None)
    try:
        if problem == "cvrp":
            cust = d["customers"]
            arrival = np.array([float(c.get("arrival", 0.0)) for c in cust])
            return CvrpInstance(
                depot=(float(d["depot"][0]), float(d["depot"][1])),
                xy=np.array([[float(c["x"]), float(c["y"])] for c in cust]).reshape(len(cust), 2),
                demand=np.array([int(c["demand"]) for c in cust], dtype=int),
                arrival=arrival,
                capacity=int(d["capacity"]),
                velocity=float(d.get("velocity", 1.0)),
                online=bool(d.get("online", bool(np.any(arrival > 0)))),
            )
        if problem == "pmsp":
            jobs = d["jobs"]
            arrival = np.array([float(j.get("arrival", 0.0)) for j in jobs])
            arr_cfg = d.get("arrivals")
            return PmspInstance(
                machines=int(d["m"]),
                classes=int(d["c"]),
                setup=np.array(d["setup"], dtype=int),
                job_class=np.array([int(j["class"]) for j in jobs], dtype=int),
                p=np.array([int(j["p"]) for j in jobs], dtype=int),
                w=np.array([int(j["w"]) for j in jobs], dtype=int),
                arrival=arrival,
                online=bool(d.get("online", bool(np.any(arrival > 0)))),
                arrivals=OnlineArrivalConfig(**arr_cfg) if arr_cfg else None,
            )
    except (KeyError, TypeError, IndexError) as exc:
        raise FormatError(f"malformed {problem} instance: {exc}") from exc
    raise FormatError("cannot tell the problem type of this instance")


def dumps(inst) -> str:
    return json.dumps(instance_to_dict(inst), sort_keys=True, separators=(",", ":"))


def instance_hash(inst) -> str:
    """sha256 of the canonical JSON bytes."""
    return hashlib.sha256(dumps(inst).encode()).hexdigest()


def save_instance(path, inst) -> None:
    with open(path, "w") as fh:
        fh.write(dumps(inst))
        fh.write("\n")


def load_instance(path):
    with open(path) as fh:
        return instance_from_dict(json.load(fh))


def read_liao(path, format_version: str = "liao-v1") -> PmspInstance:
    """Best-effort reader for Liao-style PMSP text files.

    ``liao-v1`` grammar (whitespace separated integers, ``#`` starts a comment)::

        n m c
        p_1 ... p_n          processing times
        w_1 ... w_n          weights
        s_1 ... s_n          job classes, 1-based
        c rows of c values   setup matrix, row = previous class

    All jobs are available at time zero.  A nonzero setup diagonal is rejected.
    """
    if format_version not in LIAO_FORMATS:
        raise FormatError(f"unknown format version {format_version!r}; known: {LIAO_FORMATS}")
    tokens = []
    with open(path) as fh:
        for line in fh:
            tokens.extend(line.split("#", 1)[0].split())
    try:
        vals = [int(t) for t in tokens]
    except ValueError as exc:
        raise FormatError(f"non-integer token in {path}: {exc}") from exc
    if len(vals) < 3:
        raise FormatError("missing header 'n m c'")
    n, m, c = vals[:3]
    need = 3 + 3 * n + c * c
    if len(vals) != need:
        raise FormatError(f"expected {need} integers for n={n}, m={m}, c={c}, found {len(vals)}")
    pos = 3
    p = np.array(vals[pos:pos + n]); pos += n
    w = np.array(vals[pos:pos + n]); pos += n
    cls = np.array(vals[pos:pos + n]); pos += n
    setup = np.array(vals[pos:pos + c * c]).reshape(c, c)
    try:
        return PmspInstance(m, c, setup, cls, p, w, np.zeros(n), online=False,
                            meta={"source": str(path), "format": format_version})
    except ValueError as exc:
        raise FormatError(str(exc)) from exc


def write_liao(path, inst: PmspInstance) -> None:
    with open(path, "w") as fh:
        fh.write(f"{inst.n} {inst.machines} {inst.classes}\n")
        for arr in (inst.p, inst.w, inst.job_class):
            fh.write(" ".join(str(int(v)) for v in arr) + "\n")
        for row in inst.setup:
            fh.write(" ".join(str(int(v)) for v in row) + "\n")
