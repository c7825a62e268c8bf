"""File formats: model JSON, trajectory CSV, pipeline config.

Model files store ``n, m, p`` and the four matrices as row-major nested
lists. Python's float repr round-trips exactly, so a saved model re-loads
to bit-identical arrays.

Trajectory CSVs have a header ``t,u1..um,y1..yp[,x1..xn]``, use ``.`` as
the decimal mark, ``,`` as separator, LF line endings and 17 significant
digits. When state columns are present the file starts with the comment
line ``# states=true``.
"""

from __future__ import annotations

import copy
import json
import os
from dataclasses import asdict, dataclass, field, fields
from typing import Optional

import numpy as np

from .lmi import FeasTolerances
from .model import PRESETS, StateSpaceModel, SupplyRate, Trajectory, make_supply_rate
from .perturbation import AlgorithmConfig
from .sysid import FitConfig

FLOAT_FMT = "%.17g"


def _fmt(x: float) -> str:
    return FLOAT_FMT % x


# ---------------------------------------------------------------- models

def model_to_dict(model: StateSpaceModel) -> dict:
    return {
        "n": model.n,
        "m": model.m,
        "p": model.p,
        "A": model.A.tolist(),
        "B": model.B.tolist(),
        "C": model.C.tolist(),
        "D": model.D.tolist(),
    }


def model_from_dict(d: dict) -> StateSpaceModel:
    try:
        n, m, p = int(d["n"]), int(d["m"]), int(d["p"])
        A = np.array(d["A"], dtype=float).reshape(n, n)
        B = np.array(d["B"], dtype=float).reshape(n, m)
        C = np.array(d["C"], dtype=float).reshape(p, n)
        D = np.array(d["D"], dtype=float).reshape(p, m)
    except (KeyError, TypeError, ValueError) as exc:
        raise ValueError(f"malformed model description: {exc}") from exc
    return StateSpaceModel(A, B, C, D)


def write_json(path, obj) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, indent=2, sort_keys=False, allow_nan=False)
        fh.write("\n")


def read_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def save_model(path, model: StateSpaceModel) -> None:
    write_json(path, model_to_dict(model))


def load_model(path) -> StateSpaceModel:
    return model_from_dict(read_json(path))


# ---------------------------------------------------------- trajectories

def trajectory_header(m: int, p: int, n: int = 0) -> list:
    cols = ["t"] + [f"u{i + 1}" for i in range(m)] + [f"y{i + 1}" for i in range(p)]
    return cols + [f"x{i + 1}" for i in range(n)]


def write_trajectory_csv(path, traj: Trajectory, include_states: bool = False) -> None:
    n = 0
    blocks = [traj.t[:, None], traj.u, traj.y]
    if include_states:
        if traj.x is None:
            raise ValueError("trajectory has no state samples to write")
        n = traj.x.shape[1]
        blocks.append(traj.x)
    table = np.hstack(blocks)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        if include_states:
            fh.write("# states=true\n")
        fh.write(",".join(trajectory_header(traj.m, traj.p, n)) + "\n")
        for row in table:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def read_trajectory_csv(path) -> Trajectory:
    """Inverse of :func:`write_trajectory_csv`. ``dt`` is inferred from ``t``."""
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().split("\n")
    comments = [ln for ln in lines if ln.startswith("#")]
    body = [ln for ln in lines if ln and not ln.startswith("#")]
    if not body:
        raise ValueError(f"{path}: empty trajectory file")
    header = body[0].split(",")
    if not header or header[0] != "t":
        raise ValueError(f"{path}: first column must be 't'")
    m = sum(1 for c in header if c.startswith("u"))
    p = sum(1 for c in header if c.startswith("y"))
    n = sum(1 for c in header if c.startswith("x"))
    if header != trajectory_header(m, p, n):
        raise ValueError(f"{path}: unexpected header {body[0]!r}")
    if n and "# states=true" not in comments:
        raise ValueError(f"{path}: state columns present without '# states=true'")
    data = np.array([[float(v) for v in ln.split(",")] for ln in body[1:]], dtype=float)
    if data.ndim != 2 or data.shape[0] < 2 or data.shape[1] != len(header):
        raise ValueError(f"{path}: need at least 2 rows of {len(header)} columns")
    t = data[:, 0]
    dt = (t[-1] - t[0]) / (t.size - 1)
    if not np.allclose(np.diff(t), dt, rtol=1e-9, atol=1e-12 * max(1.0, abs(t[-1]))):
        raise ValueError(f"{path}: time column is not uniformly spaced")
    return Trajectory(dt=dt, u=data[:, 1:1 + m], y=data[:, 1 + m:1 + m + p], t0=t[0],
                      x=data[:, 1 + m + p:] if n else None)


# ---------------------------------------------------------------- config

def supply_rate_from_dict(d: dict, p: int, m: int) -> SupplyRate:
    """``{"preset": name, "params": {...}}`` or explicit ``{"Q", "S", "R"}``."""
    if "preset" in d:
        return make_supply_rate(d["preset"], p, m, **d.get("params", {}))
    if all(k in d for k in ("Q", "S", "R")):
        return SupplyRate(np.array(d["Q"], dtype=float), np.array(d["S"], dtype=float),
                          np.array(d["R"], dtype=float))
    raise ValueError("supply_rate needs either 'preset' or all of 'Q', 'S', 'R'")


def default_signal() -> dict:
    return {
        "kind": "multisine",
        "duration": 40.0,
        "dt": 0.01,
        "amplitudes": [0.1, 0.1, 0.1, 0.1, 0.1],
        "frequencies": [0.02, 0.05, 0.1, 0.2, 0.5],
    }


@dataclass
class RunConfig:
    """Everything one pipeline run needs, serializable to JSON.

    ``system`` is ``"example1"`` or a path to a model JSON file (relative
    paths resolve against the config file's directory when loaded).
    Trajectory ``k`` uses excitation seed ``seed + k``; training
    trajectories come first, then test trajectories.
    """

    seed: int = 1
    system: str = "example1"
    x0: Optional[list] = None
    signal: dict = field(default_factory=default_signal)
    n_train: int = 3
    n_test: int = 2
    include_states: bool = False
    fit: dict = field(default_factory=lambda: {"order": 2, "method": "arx_ls"})
    supply_rate: dict = field(default_factory=lambda: {
        "preset": "strict_passivity", "params": {"a": 0.4, "b": 0.05}})
    algorithm: dict = field(default_factory=dict)

    def __post_init__(self):
        if int(self.seed) < 0:
            raise ValueError("seed must be nonnegative")
        if self.n_train < 1 or self.n_test < 0:
            raise ValueError("n_train must be >= 1 and n_test >= 0")
        if "preset" in self.supply_rate and self.supply_rate["preset"] not in PRESETS:
            raise ValueError(f"unknown supply-rate preset {self.supply_rate['preset']!r}")
        self.fit_config()
        self.algorithm_config()

    def to_dict(self) -> dict:
        return copy.deepcopy(asdict(self))

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown config keys: {sorted(extra)}")
        return cls(**copy.deepcopy(d))

    def save(self, path) -> None:
        write_json(path, self.to_dict())

    @classmethod
    def load(cls, path) -> "RunConfig":
        cfg = cls.from_dict(read_json(path))
        cfg._base_dir = os.path.dirname(os.path.abspath(path))
        return cfg

    def resolve(self, path: str) -> str:
        base = getattr(self, "_base_dir", os.getcwd())
        return path if os.path.isabs(path) else os.path.join(base, path)

    def fit_config(self) -> FitConfig:
        return FitConfig(**self.fit)

    def algorithm_config(self) -> AlgorithmConfig:
        kw = dict(self.algorithm)
        if "tolerances" in kw:
            kw["tolerances"] = FeasTolerances(**kw["tolerances"])
        return AlgorithmConfig(**kw)

    def supply_rate_for(self, p: int, m: int) -> SupplyRate:
        return supply_rate_from_dict(self.supply_rate, p, m)
