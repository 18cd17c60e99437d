"""INI-style mission configuration.

Files hold ``[section]`` headers and ``key = value`` lines. Every key has a
fixed type; unknown sections or keys are errors so that a misspelt gain never
silently falls back to its default. Angles are written in degrees and angular
rates in degrees per second; everything else is SI. An angle may carry an
explicit ``rad`` suffix instead (``sigma_theta = 0.035 rad``); snapshots use it
whenever the degree form would not reproduce the internal value bit for bit.

Initial poses go in ``[agents]`` as ``pose_<id> = x, y, heading_deg`` with ids
1..N in order.
"""
from __future__ import annotations

import configparser
import math
from dataclasses import fields, replace
from pathlib import Path

from .errors import ConfigError
from .swarm import SimConfig
from .world import Pose2D

# (section, key) -> (target, attribute, kind). ``target`` is None for plain
# SimConfig fields, else the name of the nested parameter block.
_SCHEMA: dict[tuple[str, str], tuple[str | None, str, str]] = {
    ("mission", "seed"): (None, "seed", "int"),
    ("mission", "dt"): (None, "dt", "float"),
    ("mission", "duration"): (None, "duration", "float"),
    ("mission", "sync_duration"): (None, "sync_duration", "float"),
    ("mission", "sync_yaw_rate"): (None, "sync_yaw_rate", "deg"),
    ("mission", "log_period"): (None, "log_period", "float"),
    ("mission", "map_export_period"): (None, "map_export_period", "float"),
    ("sensing", "beam_angles"): (None, "beam_angles", "deglist"),
    ("sensing", "max_range"): (None, "max_range", "float"),
    ("sensing", "range_noise"): (None, "range_noise", "float"),
    ("sensing", "odom_sigma_v"): (None, "odom_sigma_v", "float"),
    ("sensing", "odom_sigma_w"): (None, "odom_sigma_w", "deg"),
    ("slam", "alpha"): ("slam", "alpha", "int"),
    ("slam", "hole_width"): ("slam", "hole_width", "float"),
    ("slam", "quality_threshold"): ("slam", "quality_threshold", "float"),
    ("slam", "scan_matching"): (None, "scan_matching", "bool"),
    ("slam", "iterations"): ("scan", "iterations", "int"),
    ("slam", "sigma_xy"): ("scan", "sigma_xy", "float"),
    ("slam", "sigma_theta"): ("scan", "sigma_theta", "deg"),
    ("slam", "period"): (None, "slam_period", "float"),
    ("slam", "match_window"): (None, "match_window", "float"),
    ("slam", "fusion_beta"): (None, "fusion_beta", "float"),
    ("icp", "match_tolerance"): ("icp", "match_tolerance", "float"),
    ("icp", "max_iterations"): ("icp", "max_iterations", "int"),
    ("icp", "convergence_eps"): ("icp", "convergence_eps", "float"),
    ("icp", "occupied_threshold"): (None, "occupied_threshold", "int"),
    ("icp", "landmark_spacing"): (None, "landmark_spacing", "float"),
    ("icp", "resync_period"): (None, "resync_period", "float"),
    ("icp", "transform_source"): (None, "transform_source", "str"),
    ("explore", "lambda"): ("explore", "lam", "float"),
    ("explore", "sigma_1"): ("explore", "sigma_1", "float"),
    ("explore", "sigma_2"): ("explore", "sigma_2", "float"),
    ("explore", "delta_t"): ("explore", "delta_t", "float"),
    ("explore", "target_timeout"): (None, "target_timeout", "float"),
    ("explore", "exclude_occupied"): (None, "exclude_occupied", "bool"),
    ("explore", "known_free_targets"): (None, "known_free_targets", "bool"),
    ("explore", "free_threshold"): (None, "free_threshold", "int"),
    ("explore", "coverage_cells"): (None, "coverage_cells", "int"),
    ("explore", "coverage_resolution"): (None, "coverage_resolution", "float"),
    ("control", "k_c"): ("gains", "k_c", "float"),
    ("control", "k_s"): ("gains", "k_s", "float"),
    ("control", "k_t"): ("gains", "k_t", "float"),
    ("control", "k_theta"): ("gains", "k_theta", "float"),
    ("control", "s_x"): ("limits", "S_x", "float"),
    ("control", "s_theta"): ("limits", "S_theta", "deg"),
    ("camera", "r_c"): ("camera", "r_c", "float"),
    ("camera", "w"): ("camera", "w", "float"),
    ("camera", "l"): ("camera", "l", "float"),
    ("avoidance", "enabled"): (None, "avoidance", "bool"),
    ("avoidance", "d_safe_agents"): (None, "d_safe_agents", "float"),
    ("avoidance", "d_safe_obstacles"): (None, "d_safe_obstacles", "float"),
    ("avoidance", "k_rep"): (None, "k_rep", "float"),
    ("radio", "byte_budget"): (None, "byte_budget", "int"),
    ("radio", "neighbors"): (None, "neighbors", "str"),
}

SECTIONS = ("mission", "agents", "sensing", "slam", "icp", "explore", "control", "camera",
            "avoidance", "radio")


def _parse_value(raw: str, kind: str, where: str):
    raw = raw.strip()
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "deg":
            return _angle(raw)
        if kind == "deglist":
            return tuple(_angle(v) for v in raw.split(","))
        if kind == "bool":
            low = raw.lower()
            if low in ("true", "yes", "on", "1"):
                return True
            if low in ("false", "no", "off", "0"):
                return False
            raise ValueError(raw)
        if kind == "str":
            return raw
    except ValueError:
        raise ConfigError(f"{where}: cannot read {raw!r} as {kind}") from None
    raise AssertionError(kind)


def _angle(raw: str) -> float:
    raw = raw.strip()
    if raw.endswith("rad"):
        return float(raw[:-3])
    return math.radians(float(raw.removesuffix("deg")))


def _format_angle(value: float) -> str:
    d = math.degrees(value)
    if math.radians(d) == value:
        return repr(d)
    return f"{value!r} rad"


def _format_value(value, kind: str) -> str:
    if kind == "deg":
        return _format_angle(value)
    if kind == "deglist":
        return ", ".join(_format_angle(v) for v in value)
    if kind == "bool":
        return "true" if value else "false"
    return repr(value) if kind in ("int", "float") else str(value)


def _parse_pose(raw: str, where: str) -> Pose2D:
    parts = raw.split(",")
    if len(parts) != 3:
        raise ConfigError(f"{where}: expected 'x, y, heading_deg', got {raw!r}")
    try:
        x, y = float(parts[0]), float(parts[1])
        h = _angle(parts[2])
    except ValueError:
        raise ConfigError(f"{where}: non-numeric pose {raw!r}") from None
    return Pose2D(x, y, h)


def parse_config(text: str, base: SimConfig | None = None, source: str = "<config>") -> SimConfig:
    """Overlay the settings in ``text`` on ``base`` (defaults if omitted) and validate."""
    cp = configparser.ConfigParser(interpolation=None, strict=True)
    cp.optionxform = str
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    cfg = base if base is not None else SimConfig()
    plain: dict = {}
    nested: dict[str, dict] = {}
    poses = None
    for section in cp.sections():
        if section not in SECTIONS:
            raise ConfigError(f"{source}: unknown section [{section}]")
        if section == "agents":
            poses = _parse_agents(cp[section], source)
            continue
        for key, raw in cp[section].items():
            spec = _SCHEMA.get((section, key))
            if spec is None:
                raise ConfigError(f"{source}: unknown key {key!r} in [{section}]")
            target, attr, kind = spec
            value = _parse_value(raw, kind, f"{source} [{section}] {key}")
            if target is None:
                plain[attr] = value
            else:
                nested.setdefault(target, {})[attr] = value
    try:
        for target, values in nested.items():
            plain[target] = replace(getattr(cfg, target), **values)
        cfg = replace(cfg, **plain)
    except ValueError as exc:
        raise ConfigError(f"{source}: {exc}") from None
    if poses is not None:
        cfg = replace(cfg, initial_poses=poses, n_agents=len(poses))
    return cfg.validate()


def _parse_agents(section, source: str) -> list[Pose2D]:
    found = {}
    for key, raw in section.items():
        if not key.startswith("pose_") or not key[5:].isdigit():
            raise ConfigError(f"{source}: unknown key {key!r} in [agents] (expected pose_<id>)")
        found[int(key[5:])] = _parse_pose(raw, f"{source} [agents] {key}")
    if sorted(found) != list(range(1, len(found) + 1)):
        raise ConfigError(f"{source}: agent ids must run 1..N without gaps, got {sorted(found)}")
    if not found:
        raise ConfigError(f"{source}: [agents] lists no poses")
    return [found[i] for i in range(1, len(found) + 1)]


def load_config(path, base: SimConfig | None = None) -> SimConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, base, str(path))


def dump_config(cfg: SimConfig) -> str:
    """Canonical text of every setting; :func:`parse_config` reads it back exactly."""
    out = []
    for section in SECTIONS:
        out.append(f"[{section}]")
        if section == "agents":
            for i, p in enumerate(cfg.initial_poses, start=1):
                out.append(f"pose_{i} = {p.x!r}, {p.y!r}, {_format_angle(p.theta)}")
        for (sec, key), (target, attr, kind) in _SCHEMA.items():
            if sec != section:
                continue
            holder = cfg if target is None else getattr(cfg, target)
            out.append(f"{key} = {_format_value(getattr(holder, attr), kind)}")
        out.append("")
    return "\n".join(out)


def schema_keys() -> list[tuple[str, str]]:
    """All accepted ``(section, key)`` pairs besides the ``[agents]`` poses."""
    return list(_SCHEMA)


def _check_schema_covers_config():
    # every SimConfig field must be reachable from a config file
    covered = {attr for target, attr, _ in _SCHEMA.values() if target is None}
    covered |= {target for target, _, _ in _SCHEMA.values() if target is not None}
    covered |= {"initial_poses", "n_agents"}
    missing = {f.name for f in fields(SimConfig)} - covered
    assert not missing, missing


_check_schema_covers_config()
