"""Session configuration: one validated, hashable description of a trial.

A SessionConfig pins everything a trial depends on — task geometry, control
mode, operator profile, channel impairments, gains, contact parameters,
timing and seed — so that a trial is a pure function of its config and every
artifact can carry a provenance hash.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from ..channel import ChannelConfig
from ..controllers import AutonomyConfig, FollowerGains, LeaderGains, WiggleParams
from ..environment import ContactParams, PegShape, TaskConfig, task_preset
from ..kinodynamics import MAX_STEP_DT, Pose

MODES = ("unilateral", "bilateral", "shared")
OPERATORS = ("novice", "intermediate", "expert", "human")

DEFAULT_TOTAL_LIMIT = 60.0   # s, trial cap
DEFAULT_STAGE_LIMIT = 30.0   # s, per-stage cap


@dataclass(frozen=True)
class SessionConfig:
    """Complete recipe for one teleoperation trial."""

    task: TaskConfig
    mode: str = "shared"
    operator: str = "intermediate"
    channel: ChannelConfig = field(default_factory=ChannelConfig)
    leader_gains: LeaderGains = field(default_factory=LeaderGains)
    follower_gains: FollowerGains = field(default_factory=FollowerGains)
    wiggle: WiggleParams = field(default_factory=WiggleParams)
    autonomy: AutonomyConfig = field(default_factory=AutonomyConfig)
    contact: ContactParams = field(default_factory=lambda: ContactParams(v_eps=1e-3))
    dt: float = 1e-3
    substeps: int = 10
    seed: int = 0
    total_limit: float = DEFAULT_TOTAL_LIMIT
    stage_limit: float = DEFAULT_STAGE_LIMIT
    safety_force_limit: float = 60.0
    normal_noise_rad: float = 0.005
    tdpa_enabled: bool = True

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.operator not in OPERATORS:
            raise ValueError(f"operator must be one of {OPERATORS}, "
                             f"got {self.operator!r}")
        if not 0.0 < self.dt <= MAX_STEP_DT:
            raise ValueError(f"dt must be in (0, {MAX_STEP_DT}], got {self.dt}")
        if self.substeps < 1:
            raise ValueError("substeps must be >= 1")
        if self.total_limit <= 0.0 or self.stage_limit <= 0.0:
            raise ValueError("trial limits must be positive")
        if self.safety_force_limit <= 0.0:
            raise ValueError("safety_force_limit must be positive")
        if self.normal_noise_rad < 0.0:
            raise ValueError("normal_noise_rad must be >= 0")
        if int(self.seed) < 0:
            raise ValueError("seed must be non-negative")

    # flags the trial loop derives from the mode
    @property
    def feedback_enabled(self) -> bool:
        return self.mode != "unilateral"

    @property
    def assist_enabled(self) -> bool:
        return self.mode == "shared"

    @property
    def autonomy_enabled(self) -> bool:
        return self.mode == "shared"


def session_config(task_id: str = "A", mode: str = "shared",
                   operator: str = "intermediate", seed: int = 0,
                   geometry_scale: float = 10.0, **overrides) -> SessionConfig:
    """Convenience factory from a shipped task id."""
    task = task_preset(task_id, geometry_scale=geometry_scale)
    return SessionConfig(task=task, mode=mode, operator=operator, seed=seed,
                         **overrides)


# ---------------------------------------------------------------------------
# serialization (dict <-> config) and hashing
# ---------------------------------------------------------------------------

def _arr(v) -> list:
    return np.asarray(v, dtype=np.float64).tolist()


def config_to_dict(cfg: SessionConfig) -> dict:
    """Plain-data representation: JSON/YAML safe, order-independent."""
    t = cfg.task
    return {
        "task": {
            "id": t.id,
            "peg_shape": t.peg_shape.value,
            "peg_length_mm": t.peg_length_mm,
            "peg_dims_mm": list(t.peg_dims_mm),
            "clearance_mm": t.clearance_mm,
            "hole_pose": {"position": _arr(t.hole_pose.position),
                          "orientation": _arr(t.hole_pose.orientation)},
            "hole_depth_mm": t.hole_depth_mm,
            "geometry_scale": t.geometry_scale,
            "chamfer_mm": t.chamfer_mm,
            "approach_margin_mm": t.approach_margin_mm,
            "success_fraction": t.success_fraction,
            "peg_material": t.peg_material,
            "peg_process": t.peg_process,
            "hole_material": t.hole_material,
            "hole_process": t.hole_process,
        },
        "mode": cfg.mode,
        "operator": cfg.operator,
        "channel": {
            "delay_ms": cfg.channel.delay_ms,
            "jitter_ms": cfg.channel.jitter_ms,
            "loss_prob": cfg.channel.loss_prob,
            "reorder_prob": cfg.channel.reorder_prob,
            "seed": cfg.channel.seed,
        },
        "leader_gains": {"k_c": _arr(cfg.leader_gains.k_c),
                         "d_c": _arr(cfg.leader_gains.d_c),
                         "lambda1": _arr(cfg.leader_gains.lambda1)},
        "follower_gains": {"k_q": _arr(cfg.follower_gains.k_q),
                           "d_q": _arr(cfg.follower_gains.d_q),
                           "lambda2": _arr(cfg.follower_gains.lambda2),
                           "lambda3": _arr(cfg.follower_gains.lambda3)},
        "wiggle": {"amplitude": _arr(cfg.wiggle.amplitude),
                   "frequency": _arr(cfg.wiggle.frequency),
                   "phase": _arr(cfg.wiggle.phase)},
        "autonomy": {"f_t": cfg.autonomy.f_t,
                     "debounce_window": cfg.autonomy.debounce_window,
                     "stage_gated": cfg.autonomy.stage_gated},
        "contact": {"k_n": cfg.contact.k_n, "d_n": cfg.contact.d_n,
                    "mu": cfg.contact.mu,
                    "sample_count": cfg.contact.sample_count,
                    "v_eps": cfg.contact.v_eps},
        "dt": cfg.dt,
        "substeps": cfg.substeps,
        "seed": cfg.seed,
        "total_limit": cfg.total_limit,
        "stage_limit": cfg.stage_limit,
        "safety_force_limit": cfg.safety_force_limit,
        "normal_noise_rad": cfg.normal_noise_rad,
        "tdpa_enabled": cfg.tdpa_enabled,
    }


def config_from_dict(d: dict) -> SessionConfig:
    """Inverse of config_to_dict; raises ValueError on malformed input."""
    try:
        td = d["task"]
        task = TaskConfig(
            id=str(td["id"]),
            peg_shape=PegShape(td["peg_shape"]),
            peg_length_mm=float(td["peg_length_mm"]),
            peg_dims_mm=tuple(float(v) for v in td["peg_dims_mm"]),
            clearance_mm=float(td["clearance_mm"]),
            hole_pose=Pose(position=np.array(td["hole_pose"]["position"]),
                           orientation=np.array(td["hole_pose"]["orientation"])),
            hole_depth_mm=float(td.get("hole_depth_mm", 25.0)),
            geometry_scale=float(td.get("geometry_scale", 1.0)),
            chamfer_mm=float(td.get("chamfer_mm", 0.2)),
            approach_margin_mm=float(td.get("approach_margin_mm", 5.0)),
            success_fraction=float(td.get("success_fraction", 0.9)),
            peg_material=str(td.get("peg_material", "")),
            peg_process=str(td.get("peg_process", "")),
            hole_material=str(td.get("hole_material", "")),
            hole_process=str(td.get("hole_process", "")),
        )
        ch = d.get("channel", {})
        lg = d.get("leader_gains", {})
        fg = d.get("follower_gains", {})
        wg = d.get("wiggle", {})
        au = d.get("autonomy", {})
        co = d.get("contact", {})
        kwargs = {}
        if lg:
            kwargs["leader_gains"] = LeaderGains(**{k: np.array(v)
                                                    for k, v in lg.items()})
        if fg:
            kwargs["follower_gains"] = FollowerGains(**{k: np.array(v)
                                                        for k, v in fg.items()})
        if wg:
            kwargs["wiggle"] = WiggleParams(**{k: np.array(v)
                                               for k, v in wg.items()})
        if au:
            kwargs["autonomy"] = AutonomyConfig(**au)
        if co:
            kwargs["contact"] = ContactParams(**co)
        return SessionConfig(
            task=task,
            mode=str(d.get("mode", "shared")),
            operator=str(d.get("operator", "intermediate")),
            channel=ChannelConfig(**ch),
            dt=float(d.get("dt", 1e-3)),
            substeps=int(d.get("substeps", 10)),
            seed=int(d.get("seed", 0)),
            total_limit=float(d.get("total_limit", DEFAULT_TOTAL_LIMIT)),
            stage_limit=float(d.get("stage_limit", DEFAULT_STAGE_LIMIT)),
            safety_force_limit=float(d.get("safety_force_limit", 60.0)),
            normal_noise_rad=float(d.get("normal_noise_rad", 0.005)),
            tdpa_enabled=bool(d.get("tdpa_enabled", True)),
            **kwargs,
        )
    except (KeyError, TypeError) as exc:
        raise ValueError(f"malformed session config: {exc}") from exc


def config_hash(cfg: SessionConfig) -> str:
    """12-hex-digit digest of the canonical config serialization.

    The seed is part of the hash: two artifacts share a hash only if they
    describe the very same trial.
    """
    blob = json.dumps(config_to_dict(cfg), sort_keys=True,
                      separators=(",", ":"), allow_nan=False)
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


def load_config(path: str | Path) -> SessionConfig:
    """Read a session config from a JSON or YAML file."""
    path = Path(path)
    text = path.read_text()
    if path.suffix.lower() in (".yaml", ".yml"):
        import yaml
        data = yaml.safe_load(text)
    else:
        data = json.loads(text)
    if not isinstance(data, dict):
        raise ValueError(f"config file {path} must contain a mapping")
    return config_from_dict(data)


def with_seed(cfg: SessionConfig, seed: int) -> SessionConfig:
    return replace(cfg, seed=seed)
