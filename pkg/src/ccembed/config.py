"""Run configuration: flat key=value files with CLI overrides.

Defaults follow the reference analysis configuration: bandwidth 0.005,
basis sizes 410 per hemisphere, 4121 grid points, rank 100 with
alpha1 = 1e-8 and alpha2 = 40, and 10,000 permutations.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

from .errors import ConfigurationError
from .geometry import Grid, build_grid, build_icosphere, fibonacci_mesh


@dataclass
class RunConfig:
    mesh_left: str = "delaunay:410"
    mesh_right: str = "delaunay:410"
    grid_n: int = 4121
    quad_depth: int = 1
    bandwidth: float = 0.005
    count_scale: bool = False
    K: int = 100
    alpha1: float = 1e-8
    alpha2: int = 40
    ao_tol: float = 1e-8
    ao_max_iter: int = 200
    n_perm: int = 10000
    alpha_level: float = 0.05
    edge_fraction: float = 0.5
    seed: int = 0
    workers: int = 1
    # synthetic-data model
    n_subjects: int = 20
    model_components: int = 5
    model_rho_scale: float = 0.05
    model_rho_decay: float = 3.0
    model_mean_level: float = 1.0
    baseline_rate: float = 1.0
    expected_count: float = 1000.0

    def validate(self) -> "RunConfig":
        positive = ["grid_n", "bandwidth", "K", "alpha2", "ao_tol",
                    "ao_max_iter", "n_perm", "alpha_level", "edge_fraction",
                    "workers"]
        for name in positive:
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"{name} must be positive")
        nonneg = ["alpha1", "quad_depth", "n_subjects", "model_components",
                  "model_rho_scale", "model_mean_level", "baseline_rate",
                  "expected_count"]
        for name in nonneg:
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be nonnegative")
        if self.edge_fraction > 1:
            raise ConfigurationError("edge_fraction must be in (0, 1]")
        parse_mesh_spec(self.mesh_left)
        parse_mesh_spec(self.mesh_right)
        return self


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(name: str, raw: str):
    if name not in _FIELD_TYPES:
        raise ConfigurationError(f"unknown configuration key {name!r}")
    kind = _FIELD_TYPES[name]
    raw = raw.strip()
    if kind == "bool":
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigurationError(f"{name}: expected a boolean, got {raw!r}")
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
    except ValueError as exc:
        raise ConfigurationError(f"{name}: {exc}") from exc
    return raw


def parse_config(path) -> RunConfig:
    cfg = RunConfig()
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigurationError(f"{path}:{lineno}: expected key = value")
            key, raw = line.split("=", 1)
            setattr(cfg, key.strip(), _coerce(key.strip(), raw))
    return cfg.validate()


def apply_overrides(cfg: RunConfig, overrides) -> RunConfig:
    for item in overrides or ():
        if "=" not in item:
            raise ConfigurationError(f"override {item!r} is not key=value")
        key, raw = item.split("=", 1)
        setattr(cfg, key.strip(), _coerce(key.strip(), raw))
    return cfg.validate()


def parse_mesh_spec(spec: str):
    """Mesh spec: 'icosphere:<level>' or 'delaunay:<vertex count>'."""
    try:
        kind, arg = spec.split(":", 1)
        value = int(arg)
    except ValueError as exc:
        raise ConfigurationError(f"bad mesh spec {spec!r}") from exc
    if kind not in ("icosphere", "delaunay"):
        raise ConfigurationError(f"bad mesh spec {spec!r}")
    if kind == "delaunay" and value < 4:
        raise ConfigurationError("delaunay meshes need at least 4 vertices")
    if kind == "icosphere" and not 0 <= value <= 7:
        raise ConfigurationError("icosphere level must be in [0, 7]")
    return kind, value


def build_mesh(spec: str):
    kind, value = parse_mesh_spec(spec)
    if kind == "icosphere":
        return build_icosphere(value)
    return fibonacci_mesh(value)


def build_system(cfg: RunConfig):
    """Construct (BasisSystem, Grid) from a validated configuration."""
    from .splines import build_basis_system

    tri_left = build_mesh(cfg.mesh_left)
    tri_right = build_mesh(cfg.mesh_right)
    grid = build_grid(cfg.grid_n)
    return build_basis_system(tri_left, tri_right, grid, cfg.quad_depth), grid
