"""Scenario configuration and assembly of the numerical pipeline."""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .averaging import Perturbation, initial_map, sample_composable_pairs
from .groupoid import (
    Cocycle,
    MutatedGroupoid,
    PolynomialField,
    action_groupoid,
    ball_sample,
    make_action,
    twisted_groupoid,
)
from .haar import FiberDensity, direct_haar_system, lemma_haar_system
from .interp import ChebyshevGrid, GroupBasis
from .liegroup import GroupSpec, LieGroup, haar_quadrature


class ConfigError(ValueError):
    """Invalid scenario configuration."""


@dataclass
class ScenarioConfig:
    """All parameters of a scenario; every default is explicit in the echo."""

    name: str = "scenario"
    group: str = "su2"
    d: int = 2
    rho: float = 0.2
    action: dict = field(default_factory=lambda: {"type": "trivial"})
    twist: dict | None = None
    mutation: list | None = None
    eps: float = 1e-2
    eps_list: list = field(default_factory=list)
    seed: int = 0
    perturbation_degree: int = 1
    perturbation_xdegree: int = 2
    mode: str = "grid"
    group_resolution: int = 9
    base_resolution: int = 3
    pair_group_resolution: int = 7
    offgrid_resolution: int = 3
    haar: str = "direct"
    density_amplitude: float = 0.5
    tol: float = 1e-9
    max_iter: int = 12
    C0: float = 0.1
    divergence_guard: float = 1.5
    axioms_sample: int = 256
    c1_samples: int = 16
    linear_radius: float = 0.1
    linear_samples: int = 64
    fixture_beta: float = 0.5
    out: str = "out"

    def __post_init__(self):
        self.validate()

    def validate(self):
        try:
            GroupSpec.parse(self.group)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        for key in ("group_resolution", "base_resolution", "pair_group_resolution", "offgrid_resolution"):
            if int(getattr(self, key)) < 2:
                raise ConfigError(f"{key} must be >= 2")
        checks = [
            (self.d >= 0, "d must be >= 0"),
            (self.rho > 0, "rho must be positive"),
            (self.eps >= 0, "eps must be >= 0"),
            (all(e >= 0 for e in self.eps_list), "eps_list entries must be >= 0"),
            (self.tol > 0, "tol must be positive"),
            (self.C0 > 0, "C0 must be positive"),
            (self.max_iter >= 0, "max_iter must be >= 0"),
            (self.mode in ("grid", "closed_form"), "mode must be grid or closed_form"),
            (self.haar in ("direct", "lemma"), "haar must be direct or lemma"),
            (self.seed >= 0, "seed must be >= 0"),
            (self.divergence_guard > 1, "divergence_guard must exceed 1"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)
        if not isinstance(self.action, dict) or "type" not in self.action:
            raise ConfigError("action must be an object with a type")

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data):
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - names)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)


def load_config(path) -> ScenarioConfig:
    """Read a config file, or a bundled config given as ``bundled:<name>``."""
    path = str(path)
    try:
        if path.startswith("bundled:"):
            text = resources.files("groupoidlin").joinpath("configs", path[8:] + ".json").read_text("utf-8")
        else:
            text = Path(path).read_text("utf-8")
        data = json.loads(text)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return ScenarioConfig.from_dict(data)


def bundled_configs():
    root = resources.files("groupoidlin").joinpath("configs")
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def bundled(name) -> ScenarioConfig:
    return load_config(f"bundled:{name}")


# ---------------------------------------------------------------------------
# JSON output


def _fmt(x):
    if isinstance(x, bool) or x is None:
        return json.dumps(x)
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return format(x, ".17g") if math.isfinite(x) else "null"
    if isinstance(x, str):
        return json.dumps(x, ensure_ascii=False)
    raise TypeError(f"cannot serialise {type(x).__name__}")


def dumps(obj, indent=2, _level=0):
    """JSON text with floats at 17 significant digits (non-finite as null)."""
    pad = " " * (indent * (_level + 1))
    end = " " * (indent * _level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {dumps(v, indent, _level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        seq = list(obj)
        if not seq:
            return "[]"
        if all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in seq):
            return "[" + ", ".join(_fmt(v) for v in seq) + "]"
        return "[\n" + ",\n".join(pad + dumps(v, indent, _level + 1) for v in seq) + "\n" + end + "]"
    return _fmt(obj)


def write_json(path, obj):
    Path(path).write_text(dumps(obj) + "\n", encoding="utf-8", newline="\n")


# ---------------------------------------------------------------------------
# assembly


@dataclass
class Scenario:
    """The objects built from a config."""

    config: ScenarioConfig
    group: LieGroup
    chart: object
    quadrature: object
    basis: GroupBasis | None
    grid: ChebyshevGrid | None
    haar: object
    pairs: object
    offgrid_pairs: object

    def initial_map(self, eps=None):
        cfg = self.config
        eps = cfg.eps if eps is None else eps
        pinned = self.chart.d > 0
        eta = Perturbation(self.chart, cfg.seed, cfg.perturbation_degree, cfg.perturbation_xdegree, pinned)
        return initial_map(self.chart, eps, eta, cfg.mode, self.basis, self.grid, pinned)


def build_chart(cfg: ScenarioConfig):
    G = LieGroup(cfg.group)
    try:
        action = make_action(G, cfg.d, cfg.action)
        chart = action_groupoid(action, cfg.rho)
        if cfg.twist is not None:
            poly = PolynomialField.from_dict(cfg.twist, cfg.d, G.dim)
            chart = twisted_groupoid(chart, Cocycle(G, poly))
        if cfg.mutation is not None:
            k = G.exp_coords(np.asarray(cfg.mutation, dtype=float))
            chart = MutatedGroupoid(chart, k)
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"bad chart description: {exc}") from None
    return G, chart


def build_haar(cfg, chart, quad):
    if cfg.haar == "direct":
        return direct_haar_system(chart, quad)
    mu0 = FiberDensity.smooth(chart.group, cfg.seed, cfg.density_amplitude)
    nu0 = FiberDensity.smooth(chart.group, cfg.seed + 1, cfg.density_amplitude)
    return lemma_haar_system(chart, mu0, nu0, quad)


def build(cfg: ScenarioConfig) -> Scenario:
    """Chart, quadrature, representation, Haar system and pair samples.

    Defects are sampled over the base grid nodes (where the iteration
    determines the map); ``offgrid_pairs`` covers a ball sample between them.
    """
    G, chart = build_chart(cfg)
    quad = haar_quadrature(G, cfg.group_resolution)
    grid = ChebyshevGrid(chart.d, cfg.rho, cfg.base_resolution)
    basis = GroupBasis(quad) if cfg.mode == "grid" else None
    haar = build_haar(cfg, chart, quad)
    pairs = sample_composable_pairs(chart, grid.points, cfg.pair_group_resolution, seed=cfg.seed + 1)
    off = ball_sample(chart.d, cfg.rho, cfg.offgrid_resolution) if chart.d else np.zeros((1, 0))
    offgrid = sample_composable_pairs(chart, off, cfg.pair_group_resolution, seed=cfg.seed + 2)
    return Scenario(cfg, G, chart, quad, basis, grid, haar, pairs, offgrid)
