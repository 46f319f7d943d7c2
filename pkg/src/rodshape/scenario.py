"""Estimation scenarios: sensor layout, basis, covariances, noise and solver settings.

Scenario files are YAML with units spelled out in key names::

    name: S1
    rod_length_m: 0.4
    n_intervals: 10
    n_ctrl: {k_x: 8, k_y: 10, k_z: 5, p_z: 5}
    sensors:
      - {type: pose, s_m: 0.2}
      - {type: pose, s_m: 0.4}
    magnus_variance: 1.0e-6
    q_prior_variance: {angular: 3000.0, linear: 30.0}
    root_constrained: true
    noise: {sigma_omega_rad: 0.01, sigma_r_m: 0.001, sigma_k: 0.05, sigma_p: 0.05}
    inject_noise: true        # false: exact readings, same covariances
    covariance_inflation: 10.0
    truth: {mode: cosserat, force_bound_n: 1.5, moment_bound_nm: 0.02, n_dense: 401}
    # mode: prescribed draws random in-span coefficients (q_std_angular, q_std_linear)
    trials: 60
    seed: 0
    solver: {max_iterations: 50}

A sensor may carry an explicit ``cov_diag`` list; otherwise its covariance is
the inflation factor times the noise variance of its channels.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .basis import BasisConfig
from .factors import Sensor
from .solver import SolverSettings
from .truth import NoiseSpec, RodProperties, WrenchBounds

PRESET_NAMES = ("S1", "S2", "S3")


@dataclass
class TruthSpec:
    mode: str = "cosserat"
    force_bound_n: float = 1.5
    moment_bound_nm: float = 0.02
    n_dense: int = 401
    # Prescribed mode: per-trial coefficients drawn N(0, std^2) per component class.
    q_std_angular: float = 3.0
    q_std_linear: float = 0.01

    def __post_init__(self):
        if self.mode not in ("cosserat", "prescribed"):
            raise ValueError(f"unknown truth mode {self.mode!r}")
        if self.n_dense < 400:
            raise ValueError("dense truth tables need at least 400 rows")

    @property
    def bounds(self) -> WrenchBounds:
        return WrenchBounds(self.force_bound_n, self.moment_bound_nm)


@dataclass
class Scenario:
    name: str
    basis: BasisConfig
    sensor_layout: list[dict]
    n_intervals: int = 10
    magnus_variance: float = 1e-6
    q_prior_angular: float = 3000.0
    q_prior_linear: float = 30.0
    root_constrained: bool = True
    root_variance: float = 1e-12
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    # False samples exact readings while keeping the noise-derived covariances.
    inject_noise: bool = True
    covariance_inflation: float = 10.0
    truth: TruthSpec = field(default_factory=TruthSpec)
    trials: int = 60
    seed: int = 0
    solver: SolverSettings = field(default_factory=SolverSettings)
    rod: RodProperties = field(default_factory=RodProperties)

    def __post_init__(self):
        if self.n_intervals < 2:
            raise ValueError("need at least 2 intervals")
        if min(self.magnus_variance, self.q_prior_angular, self.q_prior_linear, self.covariance_inflation) <= 0:
            raise ValueError("covariance diagonals must be positive")
        if abs(self.rod.length - self.basis.length) > 1e-12:
            raise ValueError("rod length and basis length differ")
        for entry in self.sensor_layout:
            if not 0.0 <= entry["s_m"] <= self.length + 1e-12:
                raise ValueError(f"sensor arclength {entry['s_m']} outside [0, {self.length}]")
        self.sensors  # validate covariances early

    @property
    def length(self) -> float:
        return self.basis.length

    @property
    def sampling_noise(self) -> NoiseSpec:
        return self.noise if self.inject_noise else NoiseSpec(0.0, 0.0, 0.0, 0.0)

    @property
    def magnus_cov(self) -> np.ndarray:
        return self.magnus_variance * np.eye(6)

    @property
    def root_cov(self) -> np.ndarray:
        return self.root_variance * np.eye(6)

    def default_cov(self, kind: str) -> np.ndarray:
        n, c = self.noise, self.covariance_inflation
        if kind == "pose":
            return np.diag([c * n.sigma_omega_rad**2] * 3 + [c * n.sigma_r_m**2] * 3)
        if kind == "position":
            return c * n.sigma_r_m**2 * np.eye(3)
        return np.diag([c * n.sigma_k**2] * 3 + [c * n.sigma_p**2] * 3)

    @property
    def sensors(self) -> list[Sensor]:
        out = []
        for entry in self.sensor_layout:
            kind = entry["type"]
            cov = np.diag(entry["cov_diag"]) if "cov_diag" in entry else self.default_cov(kind)
            out.append(Sensor(kind, float(entry["s_m"]), cov))
        return out

    def replace(self, **changes) -> "Scenario":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "rod_length_m": self.length,
            "n_intervals": self.n_intervals,
            "n_ctrl": {c: n for c, n in self.basis.n_ctrl.items() if n},
            "sensors": [dict(e) for e in self.sensor_layout],
            "magnus_variance": self.magnus_variance,
            "q_prior_variance": {"angular": self.q_prior_angular, "linear": self.q_prior_linear},
            "root_constrained": self.root_constrained,
            "root_variance": self.root_variance,
            "noise": dataclasses.asdict(self.noise),
            "inject_noise": self.inject_noise,
            "covariance_inflation": self.covariance_inflation,
            "truth": dataclasses.asdict(self.truth),
            "trials": self.trials,
            "seed": self.seed,
            "solver": dataclasses.asdict(self.solver),
            "rod": {
                "radius_m": self.rod.radius,
                "youngs_modulus_pa": self.rod.youngs_modulus,
                "poisson": self.rod.poisson,
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        L = float(d.get("rod_length_m", 0.4))
        rod = d.get("rod", {})
        prior = d.get("q_prior_variance", {})
        return cls(
            name=str(d.get("name", "custom")),
            basis=BasisConfig(L, dict(d["n_ctrl"])),
            sensor_layout=[_sensor_entry(e) for e in d.get("sensors", [])],
            n_intervals=int(d.get("n_intervals", 10)),
            magnus_variance=float(d.get("magnus_variance", 1e-6)),
            q_prior_angular=float(prior.get("angular", 3000.0)),
            q_prior_linear=float(prior.get("linear", 30.0)),
            root_constrained=bool(d.get("root_constrained", True)),
            root_variance=float(d.get("root_variance", 1e-12)),
            noise=NoiseSpec(**d.get("noise", {})),
            inject_noise=bool(d.get("inject_noise", True)),
            covariance_inflation=float(d.get("covariance_inflation", 10.0)),
            truth=TruthSpec(**d.get("truth", {})),
            trials=int(d.get("trials", 60)),
            seed=int(d.get("seed", 0)),
            solver=SolverSettings(**d.get("solver", {})),
            rod=RodProperties(
                length=L,
                radius=float(rod.get("radius_m", 1e-3)),
                youngs_modulus=float(rod.get("youngs_modulus_pa", 54e9)),
                poisson=float(rod.get("poisson", 0.3)),
            ),
        )

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()

    def save(self, path: str | Path) -> None:
        Path(path).write_text(yaml.safe_dump(self.to_dict(), sort_keys=False))


def _sensor_entry(e: dict) -> dict:
    out = {"type": str(e["type"]), "s_m": float(e["s_m"])}
    if "cov_diag" in e:
        out["cov_diag"] = [float(v) for v in e["cov_diag"]]
    return out


def preset(name: str, length: float = 0.4) -> Scenario:
    L = length
    if name == "S1":
        n_ctrl = {"k_x": 8, "k_y": 10, "k_z": 5, "p_z": 5}
        sensors = [("pose", L / 2), ("pose", L)]
    elif name == "S2":
        n_ctrl = {"k_x": 8, "k_y": 10, "k_z": 5}
        sensors = [("strain", L / 4), ("strain", L / 2), ("strain", 3 * L / 4), ("pose", L)]
    elif name == "S3":
        n_ctrl = {"k_x": 4, "k_y": 4}
        sensors = [("position", k * L / 5) for k in range(1, 6)]
    else:
        raise KeyError(f"unknown preset {name!r}; choose from {PRESET_NAMES}")
    return Scenario(
        name=name,
        basis=BasisConfig(L, n_ctrl),
        sensor_layout=[{"type": t, "s_m": s} for t, s in sensors],
        rod=RodProperties(length=L),
    )


def load_scenario(ref: str | Path) -> Scenario:
    """A preset name (S1, S2, S3) or a path to a YAML scenario file."""
    if str(ref) in PRESET_NAMES:
        return preset(str(ref))
    return Scenario.from_dict(yaml.safe_load(Path(ref).read_text()))
