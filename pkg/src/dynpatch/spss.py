"""Per-sequence patch-size selection from query-depth statistics.

Each frame the mean normalized depth of the previous frame's object queries
is pushed into a bounded history. The least-squares slope of that history is
the depth trend; the change between consecutive trends, together with the
current mean depth against a threshold, picks the patch size:

  large  if mean depth > theta and the trend change is positive
  small  if mean depth < theta and the trend change is negative
  otherwise keep the previous size.

Before two trend values exist the selector stays at the small size, the safe
cold-start fallback.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .numerics import trend_slope

# Driving-perception range in meters; divides raw depths so the threshold
# operates on [0, 1].
DEFAULT_DEPTH_MAX = 61.2
DEFAULT_THETA = 0.6
DEFAULT_HISTORY_LEN = 8


@dataclass
class SpssConfig:
    p_small: int
    p_large: int
    theta: float = DEFAULT_THETA
    history_len: int = DEFAULT_HISTORY_LEN
    depth_max: float = DEFAULT_DEPTH_MAX

    def __post_init__(self):
        if self.p_small >= self.p_large:
            raise ValueError(
                f"p_small must be < p_large, got ({self.p_small}, {self.p_large})"
            )
        if not 0.0 < self.theta < 1.0:
            raise ValueError(f"theta must be in (0, 1), got {self.theta}")
        if self.history_len < 2:
            raise ValueError(f"history_len must be >= 2, got {self.history_len}")
        if self.depth_max <= 0.0:
            raise ValueError(f"depth_max must be positive, got {self.depth_max}")


@dataclass
class SpssState:
    """Mutable per-sequence state; advance strictly in frame order."""

    active_patch: int
    depth_history: list[float] = field(default_factory=list)
    prev_slope: float | None = None
    frame_index: int = 0

    @classmethod
    def fresh(cls, cfg: SpssConfig) -> "SpssState":
        return cls(active_patch=cfg.p_small)


def mean_query_depth(depths, depth_max: float) -> float:
    """Mean of raw depths divided by depth_max, clamped to [0, 1]."""
    vals = [float(d) for d in depths]
    if not vals:
        raise ValueError("mean_query_depth: empty depth sequence")
    if any(d < 0.0 for d in vals):
        raise ValueError("mean_query_depth: depths must be non-negative")
    mean = sum(vals) / len(vals)
    return min(max(mean / depth_max, 0.0), 1.0)


def step(state: SpssState, cfg: SpssConfig, current_mean_depth: float) -> int:
    """Advance one frame; returns and records the active patch size."""
    state.depth_history.append(float(current_mean_depth))
    if len(state.depth_history) > cfg.history_len:
        del state.depth_history[: len(state.depth_history) - cfg.history_len]

    slope = None
    if len(state.depth_history) >= 2:
        slope = trend_slope(state.depth_history)

    if slope is None or state.prev_slope is None:
        # Not enough history for a trend change yet.
        patch = cfg.p_small
    else:
        delta = slope - state.prev_slope
        if current_mean_depth > cfg.theta and delta > 0.0:
            patch = cfg.p_large
        elif current_mean_depth < cfg.theta and delta < 0.0:
            patch = cfg.p_small
        else:
            patch = state.active_patch

    if slope is not None:
        state.prev_slope = slope
    state.active_patch = patch
    state.frame_index += 1
    return patch


def snapshot_to_text(state: SpssState) -> str:
    """Key-value text record; floats keep full precision via repr."""
    lines = [
        f"frame_index = {state.frame_index}",
        f"active_patch = {state.active_patch}",
        f"prev_slope = {'none' if state.prev_slope is None else repr(state.prev_slope)}",
        "depth_history = " + " ".join(repr(d) for d in state.depth_history),
    ]
    return "\n".join(lines) + "\n"


def snapshot_from_text(text: str) -> SpssState:
    fields: dict[str, str] = {}
    for raw in text.splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"malformed snapshot line: {line!r}")
        key, _, value = line.partition("=")
        fields[key.strip()] = value.strip()
    required = {"frame_index", "active_patch", "prev_slope", "depth_history"}
    missing = required - fields.keys()
    if missing:
        raise ValueError(f"snapshot missing keys: {sorted(missing)}")
    unknown = fields.keys() - required
    if unknown:
        raise ValueError(f"snapshot has unknown keys: {sorted(unknown)}")
    prev = fields["prev_slope"]
    history = fields["depth_history"]
    return SpssState(
        active_patch=int(fields["active_patch"]),
        depth_history=[float(t) for t in history.split()] if history else [],
        prev_slope=None if prev == "none" else float(prev),
        frame_index=int(fields["frame_index"]),
    )
