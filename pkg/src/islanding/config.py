"""Run configuration shared by the strategies, the solver and the CLI."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

STRATEGY_IDS = ("I", "II", "III", "IV", "V", "VI", "VII")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RegressionParams:
    """Coefficients of the regression-corrected shed estimate."""

    a: float = 0.0
    b: float = 0.0

    @property
    def is_identity(self) -> bool:
        return self.a == 0.0 and self.b == 0.0


@dataclass(frozen=True)
class IslandingConfig:
    """Parameters of one islanding run.

    ``max_volume`` (absolute W) overrides ``max_volume_frac``.  With neither
    given, W is ``min(1, 1.5 / K)`` of the total volume, i.e. 3/8 at K = 4.
    """

    k: int = 4
    max_volume: float | None = None
    max_volume_frac: float | None = None
    alpha_c: float = 1.0
    alpha_d: float = 1.0
    alpha_eci: float = 0.0
    granularity: tuple[float, float, float, float] = (4.0, 4.0, 4.0, 4.0)
    strategies: tuple[str, ...] = STRATEGY_IDS
    k_max: int = 20
    time_limit_s: float = 10.0
    node_limit: int | None = None
    regress: RegressionParams = field(default_factory=RegressionParams)
    volume_mode: str = "absflow"
    enforce_balance: bool = True
    jobs: int = 1

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ConfigError("K must be at least 1")
        if min(self.alpha_c, self.alpha_d, self.alpha_eci) < 0:
            raise ConfigError("metric weights must be nonnegative")
        if len(self.granularity) != 4 or min(self.granularity) < 1:
            raise ConfigError("granularity needs four factors, each >= 1")
        bad = [s for s in self.strategies if s not in STRATEGY_IDS]
        if bad or not self.strategies:
            raise ConfigError(f"unknown or empty strategy selection {bad or list(self.strategies)}")
        if self.k_max < 2:
            raise ConfigError("k_max must be at least 2")
        if self.max_volume_frac is not None and not 0 < self.max_volume_frac:
            raise ConfigError("max_volume_frac must be positive")
        if self.volume_mode not in ("absflow", "capacity"):
            raise ConfigError(f"unknown volume mode {self.volume_mode!r}")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")

    def volume_cap(self, total_volume: float) -> float:
        if self.max_volume is not None:
            return float(self.max_volume)
        frac = self.max_volume_frac if self.max_volume_frac is not None else min(1.0, 1.5 / self.k)
        return frac * total_volume

    def granular_k(self, index: int) -> int:
        """``ceil(r_index * K)`` for granularity factor r1..r4 (index 1..4)."""
        return int(math.ceil(self.granularity[index - 1] * self.k - 1e-9))

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "max_volume": self.max_volume,
            "max_volume_frac": self.max_volume_frac,
            "alpha_c": self.alpha_c,
            "alpha_d": self.alpha_d,
            "alpha_eci": self.alpha_eci,
            "granularity": list(self.granularity),
            "strategies": list(self.strategies),
            "k_max": self.k_max,
            "time_limit_s": self.time_limit_s,
            "node_limit": self.node_limit,
            "regress": [self.regress.a, self.regress.b],
            "volume_mode": self.volume_mode,
            "enforce_balance": self.enforce_balance,
        }
