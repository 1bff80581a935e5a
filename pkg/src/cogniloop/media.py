"""Video to timestamped frame store.

Frames are pulled out of a video by an external ffmpeg process at a fixed
sampling rate and written as numbered JPEG files; frame ``i`` sits at
``i / fps`` seconds. A JSON table next to the frames records the mapping.
"""

from __future__ import annotations

import bisect
import json
import os
import re
import shutil
import subprocess
from dataclasses import dataclass, field
from pathlib import Path

from filelock import FileLock

from cogniloop.errors import (
    EmptyTable,
    ExtractionFailed,
    ExtractorNotFound,
    InvertedSpan,
    UnreadableVideo,
)

TABLE_NAME = "table.json"
FRAME_PATTERN = "frame_%06d.jpg"
_EPS = 1e-9
_DURATION_RE = re.compile(r"Duration:\s*(\d+):(\d+):(\d+(?:\.\d+)?)")


@dataclass(frozen=True)
class FrameRef:
    video_id: str
    index: int
    timestamp_s: float
    image_path: str

    @property
    def key(self) -> str:
        """Stable lookup key, e.g. ``clip01@46.00``."""
        return frame_key(self.video_id, self.timestamp_s)


def frame_key(video_id: str, timestamp_s: float) -> str:
    return f"{video_id}@{timestamp_s:.2f}"


@dataclass
class FrameIndexTable:
    video_id: str
    fps: float
    duration_s: float
    frames: list[FrameRef]
    fingerprint: dict | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.fps <= 0:
            raise ValueError(f"fps must be positive, got {self.fps}")

    def __len__(self) -> int:
        return len(self.frames)

    @classmethod
    def synthetic(cls, video_id: str, fps: float, n_frames: int, image_dir: str = "") -> FrameIndexTable:
        """A table with no extracted images behind it (for mocks and demos)."""
        frames = [
            FrameRef(video_id, i, i / fps, os.path.join(image_dir, FRAME_PATTERN % (i + 1)))
            for i in range(n_frames)
        ]
        return cls(video_id, fps, n_frames / fps, frames)

    def timestamp_of(self, index: int) -> float:
        return index / self.fps

    def index_of(self, t: float) -> int:
        return nearest_frame(self, t).index

    def to_dict(self) -> dict:
        out = {
            "video_id": self.video_id,
            "fps": self.fps,
            "duration_s": self.duration_s,
            "frames": [
                {"index": f.index, "timestamp_s": f.timestamp_s, "image_path": f.image_path}
                for f in self.frames
            ],
        }
        if self.fingerprint is not None:
            out["fingerprint"] = self.fingerprint
        return out

    @classmethod
    def from_dict(cls, data: dict) -> FrameIndexTable:
        vid = data["video_id"]
        frames = [
            FrameRef(vid, int(f["index"]), float(f["timestamp_s"]), f["image_path"])
            for f in data["frames"]
        ]
        return cls(vid, float(data["fps"]), float(data["duration_s"]), frames, data.get("fingerprint"))

    def save(self, path: str | os.PathLike) -> None:
        tmp = Path(f"{path}.tmp")
        tmp.write_text(json.dumps(self.to_dict(), indent=1))
        os.replace(tmp, path)

    @classmethod
    def load(cls, path: str | os.PathLike) -> FrameIndexTable:
        return cls.from_dict(json.loads(Path(path).read_text()))


def find_extractor(explicit: str | None = None) -> str:
    """Locate an ffmpeg binary.

    Order: explicit argument, ``COGNILOOP_FFMPEG``, ``ffmpeg`` on PATH, then
    the binary bundled with the optional ``imageio-ffmpeg`` package.
    """
    candidate = explicit or os.environ.get("COGNILOOP_FFMPEG")
    if candidate:
        resolved = shutil.which(candidate) or (candidate if os.path.isfile(candidate) else None)
        if not resolved:
            raise ExtractorNotFound(f"extractor {candidate!r} not found")
        return resolved
    on_path = shutil.which("ffmpeg")
    if on_path:
        return on_path
    try:
        import imageio_ffmpeg
    except ImportError:
        raise ExtractorNotFound(
            "no ffmpeg binary: install ffmpeg or the 'imageio-ffmpeg' package"
        ) from None
    return imageio_ffmpeg.get_ffmpeg_exe()


def probe_duration(video_path: str | os.PathLike, extractor: str) -> float:
    proc = subprocess.run(
        [extractor, "-hide_banner", "-nostdin", "-i", os.fspath(video_path)],
        capture_output=True,
        text=True,
    )
    m = _DURATION_RE.search(proc.stderr)
    if not m:
        raise UnreadableVideo(f"cannot read duration of {video_path}")
    h, mnt, s = m.groups()
    return int(h) * 3600 + int(mnt) * 60 + float(s)


def _fingerprint(video_path: Path, fps: float) -> dict:
    st = video_path.stat()
    return {"size": st.st_size, "mtime_ns": st.st_mtime_ns, "fps": fps}


def index_video(
    video_path: str | os.PathLike,
    fps: float,
    workdir: str | os.PathLike,
    extractor: str | None = None,
) -> FrameIndexTable:
    """Extract frames at ``fps`` into ``workdir/<video stem>/`` and index them.

    Re-running with an unchanged video and the same ``fps`` returns the
    persisted table without touching ffmpeg.
    """
    if fps <= 0:
        raise ValueError(f"fps must be positive, got {fps}")
    video_path = Path(video_path)
    if not video_path.is_file():
        raise UnreadableVideo(f"no such video file: {video_path}")
    video_id = video_path.stem
    outdir = Path(workdir) / video_id
    outdir.mkdir(parents=True, exist_ok=True)
    table_path = outdir / TABLE_NAME
    fp = _fingerprint(video_path, float(fps))

    with FileLock(str(outdir / ".lock")):
        if table_path.exists():
            try:
                cached = FrameIndexTable.load(table_path)
            except (ValueError, KeyError):
                cached = None
            if cached is not None and cached.fingerprint == fp:
                return cached

        exe = find_extractor(extractor)
        duration = probe_duration(video_path, exe)
        for stale in outdir.glob("frame_*.jpg"):
            stale.unlink()
        proc = subprocess.run(
            [
                exe, "-hide_banner", "-nostdin", "-v", "error", "-y",
                "-i", os.fspath(video_path),
                "-vf", f"fps={fps}",
                "-q:v", "3",
                os.fspath(outdir / FRAME_PATTERN),
            ],
            capture_output=True,
            text=True,
        )
        if proc.returncode != 0:
            raise ExtractionFailed(f"ffmpeg exited {proc.returncode}: {proc.stderr.strip()[-500:]}")
        files = sorted(outdir.glob("frame_*.jpg"))
        if not files:
            raise ExtractionFailed(f"ffmpeg produced no frames for {video_path}")
        frames = [
            FrameRef(video_id, i, i / fps, os.fspath(path.resolve()))
            for i, path in enumerate(files)
        ]
        table = FrameIndexTable(video_id, float(fps), duration, frames, fp)
        table.save(table_path)
        return table


def frames_in_span(table: FrameIndexTable, span: tuple[float, float]) -> list[FrameRef]:
    """Frames with ``start <= timestamp <= end`` after clipping to the video."""
    start, end = float(span[0]), float(span[1])
    if start > end:
        raise InvertedSpan(f"span start {start} is after end {end}")
    if end < 0 or start > table.duration_s:
        return []
    start, end = max(start, 0.0), min(end, table.duration_s)
    return [f for f in table.frames if start - _EPS <= f.timestamp_s <= end + _EPS]


def nearest_frame(table: FrameIndexTable, t: float) -> FrameRef:
    """Frame closest to ``t``; the earlier one wins a tie."""
    if not table.frames:
        raise EmptyTable(f"table for {table.video_id} has no frames")
    times = [f.timestamp_s for f in table.frames]
    pos = bisect.bisect_left(times, t)
    if pos == 0:
        return table.frames[0]
    if pos == len(times):
        return table.frames[-1]
    before, after = table.frames[pos - 1], table.frames[pos]
    if after.timestamp_s - t < t - before.timestamp_s - _EPS:
        return after
    return before
