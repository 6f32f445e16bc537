"""Swarm configuration: physical constants, obstacle layout, episode geometry.

All knobs live in one frozen dataclass so that simulations, datasets and
checkpoints can snapshot the exact configuration they were produced with.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import os
from dataclasses import dataclass, field


class ConfigError(ValueError):
    """A configuration value violates its invariants."""


@dataclass(frozen=True)
class Obstacle:
    """Circular (2D) or spherical (3D) obstacle."""

    center: tuple[float, ...]
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        object.__setattr__(self, "radius", float(self.radius))
        if not self.radius > 0:
            raise ConfigError(f"obstacle radius must be > 0, got {self.radius}")

    def to_dict(self) -> dict:
        return {"center": list(self.center), "radius": self.radius}

    @classmethod
    def from_dict(cls, d: dict) -> "Obstacle":
        return cls(center=tuple(d["center"]), radius=d["radius"])


def default_obstacles() -> tuple[Obstacle, ...]:
    # Three obstacles straddling the leader's +x path. Placement is a workbench
    # default; override via the config file for other scenarios.
    return (
        Obstacle((4.0, 0.8), 0.5),
        Obstacle((5.2, -0.8), 0.5),
        Obstacle((6.4, 0.3), 0.5),
    )


@dataclass(frozen=True)
class SwarmConfig:
    """Every physical, geometric and episode constant of the workbench.

    Control weights: the applied acceleration is
    ``u = c_alpha * u_alpha + c_beta * u_beta + c_gamma * u_gamma`` and the
    leader-tracking gains are ``c1`` and ``c2 = sqrt(c1)``.
    """

    n_robots: int = 20
    dim: int = 2
    comm_range: float = 1.0          # m
    sample_period: float = 0.01      # s
    u_max: float = 10.0              # m/s^2 per axis
    v_max: float = 10.0              # m/s per axis
    safety_dist: float = 0.15        # m
    episode_steps: int = 1200
    leader_speed: float = 1.0        # m/s along +x
    init_box_scale: float = 0.5
    init_clearance: float | None = None  # min initial separation; >= safety_dist
    c_alpha: float = 1.0
    c_beta: float = 1.5
    c_gamma: float = 2.0
    c1: float = 4.0
    obstacles: tuple[Obstacle, ...] = field(default_factory=default_obstacles)
    leader_start: tuple[float, ...] | None = None
    rng_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "obstacles", tuple(self.obstacles))
        if self.leader_start is not None:
            object.__setattr__(
                self, "leader_start", tuple(float(c) for c in self.leader_start)
            )
        self.validate()

    def validate(self) -> None:
        if self.n_robots < 1:
            raise ConfigError(f"n_robots must be >= 1, got {self.n_robots}")
        if self.dim not in (2, 3):
            raise ConfigError(f"dim must be 2 or 3, got {self.dim}")
        if not self.comm_range > 0:
            raise ConfigError("comm_range must be > 0")
        if not self.sample_period > 0:
            raise ConfigError("sample_period must be > 0")
        if not (self.u_max > 0 and self.v_max > 0):
            raise ConfigError("u_max and v_max must be > 0")
        if not self.safety_dist < self.comm_range:
            raise ConfigError("safety_dist must be < comm_range")
        if not self.c1 > 0:
            raise ConfigError("c1 must be > 0")
        if self.episode_steps < 1:
            raise ConfigError("episode_steps must be >= 1")
        if not self.init_box_scale > 0:
            raise ConfigError("init_box_scale must be > 0")
        if self.init_clearance is not None and self.init_clearance < self.safety_dist:
            raise ConfigError("init_clearance must be >= safety_dist")
        for ob in self.obstacles:
            if len(ob.center) != self.dim:
                raise ConfigError(
                    f"obstacle center {ob.center} has {len(ob.center)} coordinates, "
                    f"config dim is {self.dim}"
                )
        if self.leader_start is not None and len(self.leader_start) != self.dim:
            raise ConfigError("leader_start dimensionality does not match dim")

    @property
    def c2(self) -> float:
        return math.sqrt(self.c1)

    @property
    def init_box_high(self) -> float:
        """Upper bound of the initial position box, per axis."""
        return self.init_box_scale * self.comm_range * math.sqrt(self.n_robots)

    @property
    def min_init_separation(self) -> float:
        """Initial spacing floor: init_clearance when set, else safety_dist."""
        return self.safety_dist if self.init_clearance is None else self.init_clearance

    @property
    def obs_width(self) -> int:
        """Per-robot observation width: 3 blocks of 3 sub-vectors of dim."""
        return 9 * self.dim

    def leader_start_position(self) -> tuple[float, ...]:
        """Configured leader start, or the +x face centroid of the init box."""
        if self.leader_start is not None:
            return self.leader_start
        hi = self.init_box_high
        return (hi,) + (hi / 2.0,) * (self.dim - 1)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["obstacles"] = [ob.to_dict() for ob in self.obstacles]
        d["leader_start"] = None if self.leader_start is None else list(self.leader_start)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SwarmConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kwargs = dict(d)
        if "obstacles" in kwargs:
            kwargs["obstacles"] = tuple(
                ob if isinstance(ob, Obstacle) else Obstacle.from_dict(ob)
                for ob in kwargs["obstacles"]
            )
        if kwargs.get("leader_start") is not None:
            kwargs["leader_start"] = tuple(kwargs["leader_start"])
        return cls(**kwargs)

    def replace(self, **changes) -> "SwarmConfig":
        return dataclasses.replace(self, **changes)


def canonical_json(config: SwarmConfig) -> str:
    """Stable serialization used for hashing and file headers."""
    return json.dumps(config.to_dict(), sort_keys=True, separators=(",", ":"))


def config_hash(config: SwarmConfig) -> str:
    return hashlib.sha256(canonical_json(config).encode()).hexdigest()


CONFIG_ENV_VAR = "FLOCKWORK_CONFIG"


def load_config(path: str | None, overrides: list[str] | None = None) -> SwarmConfig:
    """Load a config from a JSON file and apply ``key=value`` overrides.

    ``path`` may be None or the literal string "default": built-in defaults are
    used, unless the FLOCKWORK_CONFIG environment variable points at a file.
    Override values are parsed as JSON when possible, else taken as strings.
    """
    if path in (None, "default"):
        env = os.environ.get(CONFIG_ENV_VAR)
        path = env if env else None
    if path is None:
        d = SwarmConfig().to_dict()
    else:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                d = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}")
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}")
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override must look like key=value, got {item!r}")
        key, _, raw = item.partition("=")
        key = key.strip()
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        d[key] = value
    return SwarmConfig.from_dict(d)


def save_config(config: SwarmConfig, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(config.to_dict(), fh, indent=2)
        fh.write("\n")
