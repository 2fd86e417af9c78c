"""Flat key=value configuration covering every tunable default.

The file format is one `key = value` per line; `#` starts a comment. Values
parse as int, float, comma-separated float list, or string, in that order.
"""

from dataclasses import asdict, dataclass, fields

from .errors import InvalidConfig


@dataclass
class Config:
    # diffusion schedule
    t_max: int = 100
    beta_start: float = 1e-4
    beta_end: float = 0.05
    schedule: str = "linear"
    # denoiser networks / training
    width: int = 32
    layers: int = 2
    lr: float = 0.05
    momentum: float = 0.9
    epochs: int = 100
    p_decentralized: float = 0.5
    lambda_init: float = 0.5
    m2a_radius: float = 2.0
    attention: str = "differential"
    num_types: int = 4
    map_stride: int = 1
    # latent codec
    n_components: int = 10
    # Frenet candidate grids
    v_grid: tuple = (0.0, 2.0, 4.0, 8.0, 12.0)
    d_grid: tuple = (-3.0, 0.0, 3.0)
    horizon: float = 6.0
    dt: float = 0.1
    lane_radius: float = 5.0
    guidance_strength: float = 0.3
    # synthetic dataset
    synth_maps: int = 4
    synth_scenes: int = 20
    synth_templates: str = "straight,arc"
    lanes_per_map: int = 2
    lane_length: float = 100.0
    lane_spacing: float = 3.5
    lane_point_spacing: float = 2.0
    map_margin: float = 20.0
    agents_min: int = 2
    agents_max: int = 5
    speed_min: float = 2.0
    speed_max: float = 10.0
    heading_noise: float = 0.03
    lateral_noise: float = 0.3
    traj_lateral_noise: float = 0.3
    # metrics
    offroad_threshold: float = 4.0
    miss_threshold: float = 2.0
    collision_radius: float = 1.0
    hist_bins: int = 20


def _parse_value(raw, target):
    raw = raw.strip()
    if isinstance(target, bool):
        return raw.lower() in ("1", "true", "yes")
    if isinstance(target, int):
        return int(raw)
    if isinstance(target, float):
        return float(raw)
    if isinstance(target, tuple):
        return tuple(float(x) for x in raw.split(",") if x.strip())
    return raw


def load_config(path) -> Config:
    """Read a key=value file over the defaults; unknown keys are an error."""
    cfg = Config()
    known = {f.name: f for f in fields(Config)}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise InvalidConfig(f"{path}:{lineno}: expected key = value")
            key, raw = (part.strip() for part in line.split("=", 1))
            if key not in known:
                raise InvalidConfig(f"{path}:{lineno}: unknown key {key!r}")
            try:
                setattr(cfg, key, _parse_value(raw, getattr(cfg, key)))
            except ValueError as exc:
                raise InvalidConfig(f"{path}:{lineno}: {exc}") from exc
    if cfg.schedule != "linear":
        raise InvalidConfig(f"unsupported schedule {cfg.schedule!r}")
    return cfg


def save_config(cfg: Config, path):
    with open(path, "w") as fh:
        for key, value in asdict(cfg).items():
            if isinstance(value, tuple):
                value = ",".join(repr(v) for v in value)
            fh.write(f"{key} = {value}\n")


def config_dict(cfg: Config) -> dict:
    """JSON-ready echo of the configuration (tuples become lists)."""
    return {k: (list(v) if isinstance(v, tuple) else v)
            for k, v in asdict(cfg).items()}
