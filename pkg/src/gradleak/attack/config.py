from __future__ import annotations

from dataclasses import asdict, dataclass, replace


@dataclass(frozen=True)
class AttackConfig:
    name: str = "lamp-cos"
    loss: str = "cos"  # cos | tag | l2
    alpha_tag: float = 0.01
    alpha_lm: float = 0.2
    alpha_reg: float = 1.0
    lr: float = 0.01
    gamma: float = 0.89
    n_init: int = 500
    n_perm: int = 500
    iterations: int = 40
    n_c: int = 50
    n_d: int = 200
    seed: int = 0
    label_mode: str = "known"  # known | enumerate
    snapshot_every: int = 500
    time_budget: float | None = None

    def __post_init__(self):
        if self.loss not in ("cos", "tag", "l2"):
            raise ValueError(f"loss must be cos, tag or l2, got {self.loss!r}")
        for k in ("alpha_tag", "alpha_lm", "alpha_reg"):
            if getattr(self, k) < 0:
                raise ValueError(f"{k} must be non-negative")
        if self.label_mode not in ("known", "enumerate"):
            raise ValueError(f"label_mode must be known or enumerate, got {self.label_mode!r}")
        if self.n_init < 1 or self.n_perm < 0 or self.iterations < 0 or self.n_c < 0 or self.n_d < 0:
            raise ValueError("n_init >= 1 and non-negative step counts required")

    @property
    def continuous_steps(self):
        return self.iterations * self.n_c

    def to_dict(self):
        return asdict(self)

    def with_(self, **changes):
        return replace(self, **changes)


LAMP_COS = AttackConfig()

PRESETS = {
    "lamp-cos": LAMP_COS,
    "lamp-l1l2": AttackConfig(name="lamp-l1l2", loss="tag", alpha_tag=0.01, alpha_lm=60.0, alpha_reg=25.0),
    "lamp-l2": AttackConfig(name="lamp-l2", loss="l2", alpha_tag=0.0, alpha_lm=60.0, alpha_reg=25.0),
    "lamp-no-lm": LAMP_COS.with_(name="lamp-no-lm", alpha_lm=0.0),
    "lamp-no-reg": LAMP_COS.with_(name="lamp-no-reg", alpha_reg=0.0),
    "lamp-no-discrete": LAMP_COS.with_(name="lamp-no-discrete", n_d=0),
    "tag": AttackConfig(
        name="tag", loss="tag", alpha_tag=0.01, alpha_lm=0.0, alpha_reg=0.0, lr=0.1, gamma=1.0,
        n_init=1, n_perm=0, iterations=50, n_d=0,
    ),
    "dlg": AttackConfig(
        name="dlg", loss="l2", alpha_tag=0.0, alpha_lm=0.0, alpha_reg=0.0, lr=0.1, gamma=1.0,
        n_init=1, n_perm=0, iterations=50, n_d=0,
    ),
}


def preset(preset_name, **overrides) -> AttackConfig:
    """Named configuration, optionally with fields replaced (``name`` included)."""
    try:
        cfg = PRESETS[preset_name]
    except KeyError:
        raise KeyError(f"unknown preset {preset_name!r}; available: {sorted(PRESETS)}") from None
    return cfg.with_(**overrides) if overrides else cfg
