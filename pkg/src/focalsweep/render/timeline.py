"""Time-stamped rigid poses for moving surfaces, interpolated with slerp."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation, Slerp

from .camera import rigid
from .scene import Scene

COLUMNS = ("time_s", "surface_id", "tx", "ty", "tz", "qx", "qy", "qz", "qw")


class TimelineError(ValueError):
    pass


@dataclass(frozen=True)
class PoseTrack:
    surface_id: str
    times: np.ndarray
    translations: np.ndarray   # (K, 3)
    rotations: Rotation        # K keyframes, local -> world

    def pose_at(self, t: float) -> np.ndarray:
        """Pose at time ``t``; clamped to the first/last keyframe outside the track."""
        ts = self.times
        if len(ts) == 1 or t <= ts[0]:
            return rigid(self.rotations[0].as_matrix(), self.translations[0])
        if t >= ts[-1]:
            return rigid(self.rotations[-1].as_matrix(), self.translations[-1])
        trans = np.array([np.interp(t, ts, self.translations[:, a]) for a in range(3)])
        rot = Slerp(ts, self.rotations)([t])[0]
        return rigid(rot.as_matrix(), trans)


@dataclass(frozen=True)
class PoseTimeline:
    tracks: dict[str, PoseTrack]

    @property
    def times(self) -> np.ndarray:
        """Union of keyframe times over all tracks."""
        if not self.tracks:
            return np.zeros(0)
        return np.unique(np.concatenate([tr.times for tr in self.tracks.values()]))

    def apply(self, scene: Scene, t: float) -> Scene:
        for sid, track in self.tracks.items():
            scene = scene.with_surface_pose(sid, track.pose_at(t))
        return scene

    def to_csv(self, path: str | Path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(COLUMNS)
            for sid, tr in self.tracks.items():
                q = tr.rotations.as_quat()
                for k, t in enumerate(tr.times):
                    w.writerow([repr(float(t)), sid, *map(repr, tr.translations[k].tolist()),
                                *map(repr, q[k].tolist())])
        return path


def timeline_from_rows(rows) -> PoseTimeline:
    grouped: dict[str, list] = {}
    for lineno, r in rows:
        try:
            t = float(r["time_s"])
            tr = [float(r[c]) for c in ("tx", "ty", "tz")]
            q = [float(r[c]) for c in ("qx", "qy", "qz", "qw")]
            sid = r["surface_id"]
        except (KeyError, TypeError, ValueError) as exc:
            raise TimelineError(f"row {lineno}: {exc}") from None
        if not sid:
            raise TimelineError(f"row {lineno}: empty surface_id")
        if np.linalg.norm(q) == 0:
            raise TimelineError(f"row {lineno}: zero quaternion")
        grouped.setdefault(sid, []).append((t, tr, q, lineno))
    tracks = {}
    for sid, items in grouped.items():
        items.sort(key=lambda x: x[0])
        ts = np.array([x[0] for x in items])
        dup = np.flatnonzero(np.diff(ts) == 0)
        if len(dup):
            raise TimelineError(f"row {items[dup[0] + 1][3]}: duplicate time {ts[dup[0]]} for {sid!r}")
        tracks[sid] = PoseTrack(sid, ts, np.array([x[1] for x in items]),
                                Rotation.from_quat([x[2] for x in items]))
    return PoseTimeline(tracks)


def load_timeline(path: str | Path) -> PoseTimeline:
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise TimelineError(f"{path}: missing columns {sorted(missing)}")
        return timeline_from_rows((k + 2, r) for k, r in enumerate(reader))


def linear_track(surface_id: str, start_pose: np.ndarray, end_pose: np.ndarray,
                 n: int, duration: float) -> PoseTimeline:
    """``n`` keyframes moving uniformly (slerp + lerp) between two poses."""
    ts = np.linspace(0.0, duration, n)
    rots = Rotation.from_matrix(np.stack([start_pose[:3, :3], end_pose[:3, :3]]))
    r = Slerp([0.0, 1.0], rots)(np.linspace(0.0, 1.0, n))
    tr = np.linspace(start_pose[:3, 3], end_pose[:3, 3], n)
    return PoseTimeline({surface_id: PoseTrack(surface_id, ts, tr, r)})
