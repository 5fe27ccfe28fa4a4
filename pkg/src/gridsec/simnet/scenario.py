"""Scenario configuration: what to simulate, for how long, under which attacks."""
from __future__ import annotations

from dataclasses import dataclass, field

from ..detection import threshold_for_false_alarm
from ..errors import ConfigError
from ..model import GlobalSystemModel, ieee14_default

ATTACK_KINDS = ("fdi-uniform",)
BEHAVIORS = ("silent-fdi", "constant-estimate", "random-estimate")
ON_ALARM = ("halt", "restart", "observe")
HACKED_VOTES = ("always0", "honest", "always1")


@dataclass(frozen=True)
class AttackSpec:
    """False data ``Uniform[0, magnitude]`` added to every sensor of the target subregions from ``onset`` on."""

    targets: tuple
    onset: int
    magnitude: float
    kind: str = "fdi-uniform"

    def __post_init__(self):
        object.__setattr__(self, "targets", tuple(sorted(int(t) for t in self.targets)))
        if self.kind not in ATTACK_KINDS:
            raise ConfigError(f"unknown attack kind {self.kind!r}")
        if not self.magnitude >= 0:
            raise ConfigError("attack magnitude must be nonnegative")
        if self.onset < 0:
            raise ConfigError("attack onset must be nonnegative")
        if not self.targets:
            raise ConfigError("attack needs at least one target subregion")


@dataclass(frozen=True)
class MisbehaviorSpec:
    """A hacked node from ``onset`` on.

    ``silent-fdi``: false data ``Uniform[0, magnitude]`` on its own sensors and
    its measurement detector switched off. ``constant-estimate``: keeps
    publishing the estimate it held before ``onset``. ``random-estimate``:
    publishes its honest estimate plus ``Uniform[-magnitude, magnitude]`` noise.
    """

    node_id: int
    onset: int
    magnitude: float = 0.0
    behavior: str = "silent-fdi"

    def __post_init__(self):
        if self.behavior not in BEHAVIORS:
            raise ConfigError(f"unknown misbehavior {self.behavior!r}")
        if self.onset < 1:
            raise ConfigError("misbehavior onset must be >= 1")
        if not self.magnitude >= 0:
            raise ConfigError("misbehavior magnitude must be nonnegative")


@dataclass(frozen=True)
class Baselines:
    centralized: bool = True
    robust: bool = True
    nominal: bool = True


@dataclass(frozen=True)
class Scenario:
    model: GlobalSystemModel = field(default_factory=ieee14_default)
    T: int = 1000
    seed: int = 0
    alpha: float = 0.2
    h: float | None = None
    L_target: float | None = 1e6
    M: int = 200
    difficulty: int = 8
    n_miners: int = 2
    attacks: tuple = ()
    misbehaviors: tuple = ()
    investigation_delay: int | None = None
    on_alarm: str = "halt"
    hacked_vote: str = "always0"
    cross_policy: str = "zero"
    outlier_alpha: float = 0.01
    baselines: Baselines = field(default_factory=Baselines)

    def __post_init__(self):
        object.__setattr__(self, "attacks", tuple(self.attacks))
        object.__setattr__(self, "misbehaviors", tuple(self.misbehaviors))
        if self.T < 1:
            raise ConfigError("horizon T must be >= 1")
        if not 0 <= self.seed < 1 << 64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        # trust evaluation reads the block at t - 1 next to the one at t
        if self.M < 2:
            raise ConfigError("ledger capacity M must be >= 2")
        if self.difficulty < 0 or self.difficulty > 32:
            raise ConfigError("difficulty must lie in [0, 32]")
        L = self.model.n_nodes
        if not 1 <= self.n_miners <= L:
            raise ConfigError(f"n_miners must lie in [1, {L}]")
        if self.on_alarm not in ON_ALARM:
            raise ConfigError(f"on_alarm must be one of {ON_ALARM}")
        if self.hacked_vote not in HACKED_VOTES:
            raise ConfigError(f"hacked_vote must be one of {HACKED_VOTES}")
        if self.cross_policy not in ("zero", "strict"):
            raise ConfigError("cross_policy must be 'zero' or 'strict'")
        if self.investigation_delay is not None and self.investigation_delay < 0:
            raise ConfigError("investigation_delay must be nonnegative")
        if self.h is None and self.L_target is None:
            raise ConfigError("give either h or L_target")
        if self.h is not None and not self.h > 0:
            raise ConfigError("threshold h must be positive")
        for a in self.attacks:
            bad = [t for t in a.targets if not 1 <= t <= L]
            if bad:
                raise ConfigError(f"attack targets {bad} are not subregions 1..{L}")
        ids = [m.node_id for m in self.misbehaviors]
        if len(ids) != len(set(ids)):
            raise ConfigError("at most one misbehavior per node")
        bad = [i for i in ids if not 1 <= i <= L]
        if bad:
            raise ConfigError(f"misbehaving nodes {bad} are not in 1..{L}")
        # raises InvalidAlpha for alpha outside (0, 1/e)
        object.__setattr__(self, "_h", self.h if self.h is not None else threshold_for_false_alarm(self.alpha, self.L_target))

    @property
    def threshold(self) -> float:
        return self._h

    @property
    def hacked(self) -> dict:
        return {m.node_id: m for m in self.misbehaviors}
