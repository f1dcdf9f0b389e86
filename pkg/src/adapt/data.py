"""Synthetic driving clips, the dataset manifest format, and BDD-X-style import.

A dataset directory holds ``manifest.jsonl`` (one episode per line) and the
clips it references, each stored as an ``ADPT`` tensor of shape (N, H, W, 3).
"""

from __future__ import annotations

import csv
import json
import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .tensor_io import MAGIC, TensorFormatError, load_tensor, save_tensor
from .video import resize_frames

MANIFEST = "manifest.jsonl"
EPISODE_FIELDS = ("clip", "signals", "narration", "reasoning", "scenario")


class DatasetError(ValueError):
    pass


@dataclass
class Episode:
    clip: str                     # path relative to the dataset root
    signals: list[list[float]]    # per frame [speed m/s, course degrees]
    narration: str
    reasoning: str
    scenario: str = ""

    def validate(self, n_frames: int | None = None) -> None:
        if not self.narration.strip() or not self.reasoning.strip():
            raise DatasetError(f"{self.clip}: narration and reasoning must be non-empty")
        sig = np.asarray(self.signals, dtype=np.float64)
        if sig.ndim != 2 or sig.shape[1] != 2:
            raise DatasetError(f"{self.clip}: signals must be a list of [speed, course] pairs")
        if n_frames is not None and sig.shape[0] != n_frames:
            raise DatasetError(f"{self.clip}: {sig.shape[0]} signal rows for {n_frames} frames")

    @property
    def signal_array(self) -> np.ndarray:
        return np.asarray(self.signals, dtype=np.float64)


# -- scenarios ----------------------------------------------------------------
@dataclass(frozen=True)
class Scenario:
    id: str
    narration: str
    reasoning: str
    light: tuple[float, float, float] | None  # disc colour, None = no disc


SCENARIOS = {
    s.id: s for s in (
        Scenario("accelerate_green", "the car accelerates", "because the traffic light turns green", (0.1, 0.9, 0.2)),
        Scenario("stop_red", "the car stops", "because the traffic light is red", (0.95, 0.1, 0.1)),
        Scenario("turn_left", "the car turns left", "because the road curves to the left", None),
        Scenario("turn_right", "the car turns right", "because the road curves to the right", None),
        Scenario("pull_over", "the car pulls over", "because there is a parking spot on the right",
                 (0.15, 0.3, 0.95)),
        Scenario("cruise", "the car drives forward", "because the road is clear", None),
    )
}
SCENARIO_IDS = tuple(SCENARIOS)


def scenario_signals(scenario: str, n_frames: int, rng: np.random.Generator) -> np.ndarray:
    """Speed (m/s) and course (degrees, relative to the start heading) per frame."""
    t = np.linspace(0.0, 1.0, n_frames)
    course = np.zeros(n_frames)
    if scenario == "accelerate_green":
        v0, v1 = rng.uniform(2, 5), rng.uniform(11, 15)
        speed = v0 + (v1 - v0) * t
    elif scenario == "stop_red":
        v0 = rng.uniform(8, 13)
        t_stop = rng.uniform(0.6, 0.9)
        speed = v0 * np.clip(1.0 - t / t_stop, 0.0, None)
    elif scenario in ("turn_left", "turn_right"):
        speed = np.full(n_frames, rng.uniform(5, 9))
        sign = -1.0 if scenario == "turn_left" else 1.0
        course = sign * rng.uniform(20, 40) * t
    elif scenario == "pull_over":
        v0, v1 = rng.uniform(6, 10), rng.uniform(1, 2)
        speed = v0 + (v1 - v0) * t
        course = rng.uniform(5, 10) * np.sin(np.pi * t)
    elif scenario == "cruise":
        speed = np.full(n_frames, rng.uniform(9, 13))
    else:
        raise DatasetError(f"unknown scenario {scenario!r}")
    return np.stack([speed, course], axis=1)


def render_frames(scenario: str, signals: np.ndarray, size: int, duration: float = 4.0) -> np.ndarray:
    """Flat-shaded road scene: sky, road band, dashed lane line, optional light disc.

    The lane line shifts sideways with course and its dashes scroll with the
    distance travelled, so both signals are visible in the pixels.
    """
    n = signals.shape[0]
    frames = np.empty((n, size, size, 3), dtype=np.float64)
    horizon = int(0.4 * size)
    yy, xx = np.mgrid[0:size, 0:size]
    dt = duration / max(n - 1, 1)
    distance = np.concatenate([[0.0], np.cumsum(signals[1:, 0] * dt)])
    light = SCENARIOS[scenario].light
    period = size / 4
    for i in range(n):
        f = frames[i]
        f[:] = (0.55, 0.75, 0.95)
        f[horizon:] = (0.35, 0.35, 0.38)
        lane_x = size / 2 - signals[i, 1] * size / 100.0
        # perspective: the line converges towards the horizon
        depth = (yy - horizon) / max(size - horizon, 1)
        x_line = size / 2 + (lane_x - size / 2) * depth
        width = 0.5 + 1.5 * depth
        phase = (yy - horizon) / (0.3 + depth) + distance[i] * 2.0
        dashed = (phase % period) < period / 2
        on_line = (yy >= horizon) & (np.abs(xx - x_line) <= width) & dashed
        f[on_line] = (0.95, 0.95, 0.95)
        if light is not None:
            cx, cy, r = 0.8 * size, 0.15 * size, 0.08 * size
            disc = (xx - cx) ** 2 + (yy - cy) ** 2 <= r * r
            f[disc] = light
    return frames


# -- clip files ---------------------------------------------------------------
def clip_header(path) -> tuple[int, ...]:
    """Read and size-check the header of a clip file without loading the payload."""
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(12)
        if len(head) < 12 or head[:4] != MAGIC:
            raise TensorFormatError(f"{path}: missing ADPT magic")
        _, rank = struct.unpack_from("<II", head, 4)
        shape = struct.unpack(f"<{rank}I", fh.read(4 * rank))
    expected = 12 + 4 * rank + 4 * int(np.prod(shape, dtype=np.int64))
    actual = path.stat().st_size
    if actual != expected:
        raise TensorFormatError(f"{path}: expected {expected} bytes for shape {tuple(shape)}, found {actual}")
    return tuple(shape)


def write_clip(path, frames: np.ndarray) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    save_tensor(path, frames)


def read_clip(path) -> np.ndarray:
    frames = load_tensor(path)
    if frames.ndim != 4 or frames.shape[-1] != 3:
        raise DatasetError(f"{path}: clip must have shape (N, H, W, 3), got {frames.shape}")
    return frames


# -- manifests ----------------------------------------------------------------
def write_dataset(root, episodes: list[Episode]) -> None:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    with open(root / MANIFEST, "w", encoding="utf-8") as fh:
        for ep in episodes:
            fh.write(json.dumps(asdict(ep), separators=(",", ":")) + "\n")


def parse_episode(line: str, lineno: int, source: str = MANIFEST) -> Episode:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise DatasetError(f"{source}:{lineno}: malformed JSON ({exc.msg})") from None
    if not isinstance(obj, dict):
        raise DatasetError(f"{source}:{lineno}: expected a JSON object")
    unknown = set(obj) - set(EPISODE_FIELDS)
    missing = {"clip", "signals", "narration", "reasoning"} - set(obj)
    if unknown or missing:
        raise DatasetError(f"{source}:{lineno}: unknown fields {sorted(unknown)}, missing {sorted(missing)}")
    try:
        ep = Episode(**obj)
        ep.validate()
    except (TypeError, ValueError) as exc:
        raise DatasetError(f"{source}:{lineno}: {exc}") from None
    return ep


def read_dataset(root) -> list[Episode]:
    root = Path(root)
    manifest = root / MANIFEST
    if not manifest.exists():
        raise DatasetError(f"{root}: no {MANIFEST}")
    episodes = []
    with open(manifest, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            ep = parse_episode(line, lineno, str(manifest))
            shape = clip_header(root / ep.clip)
            if len(shape) != 4 or shape[-1] != 3:
                raise DatasetError(f"{ep.clip}: clip must have shape (N, H, W, 3), got {shape}")
            ep.validate(n_frames=shape[0])
            episodes.append(ep)
    return episodes


# -- synthetic generation -------------------------------------------------------
def num_workers() -> int:
    """CPU count, capped by ADAPT_NUM_WORKERS when set."""
    n = os.cpu_count() or 1
    try:
        return max(1, min(n, int(os.environ.get("ADAPT_NUM_WORKERS", n))))
    except ValueError:
        return n


def make_episode(index: int, seed: int, frames: int, size: int) -> tuple[Episode, np.ndarray]:
    rng = np.random.default_rng([seed, index])
    scenario = SCENARIO_IDS[(index + seed) % len(SCENARIO_IDS)]
    signals = scenario_signals(scenario, frames, rng)
    pixels = render_frames(scenario, signals, size)
    # store signals at the precision the clip payload uses
    signals = signals.astype(np.float32).astype(np.float64)
    spec = SCENARIOS[scenario]
    ep = Episode(f"clips/clip_{index:05d}.adpt", signals.tolist(), spec.narration, spec.reasoning, scenario)
    return ep, pixels


def gen_synthetic(out, n_clips: int, seed: int = 0, frames: int = 32, size: int = 64) -> list[Episode]:
    """Write ``n_clips`` synthetic episodes to ``out``; identical bytes for identical arguments."""
    if n_clips <= 0:
        raise DatasetError("n_clips must be positive")
    if size % 32:
        raise DatasetError(f"frame size must be divisible by 32, got {size}")
    if frames < 2:
        raise DatasetError("need at least 2 frames per clip")
    out = Path(out)
    (out / "clips").mkdir(parents=True, exist_ok=True)

    def work(i):
        ep, pixels = make_episode(i, seed, frames, size)
        write_clip(out / ep.clip, pixels)
        return ep

    with ThreadPoolExecutor(max_workers=num_workers()) as pool:
        episodes = list(pool.map(work, range(n_clips)))
    write_dataset(out, episodes)
    return episodes


def label_consistent(ep: Episode) -> bool:
    """Check that the caption template agrees with the signal trajectory."""
    s = ep.signal_array
    speed, course = s[:, 0], s[:, 1]
    checks = {
        "stop_red": speed[-1] == 0 and bool(np.all(np.diff(speed) <= 1e-6)),
        "accelerate_green": speed[-1] > speed[0],
        "turn_left": course[-1] - course[0] < 0,
        "turn_right": course[-1] - course[0] > 0,
        "pull_over": speed[-1] < speed[0],
        "cruise": bool(np.ptp(speed) < 1e-6 and np.all(course == 0)),
    }
    expected = SCENARIOS.get(ep.scenario)
    if expected is None:
        return True
    return (checks[ep.scenario] and ep.narration == expected.narration
            and ep.reasoning == expected.reasoning)


# -- BDD-X style import ---------------------------------------------------------
_IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp")


def _load_frame(path: Path) -> np.ndarray:
    if path.suffix == ".npy":
        arr = np.load(path).astype(np.float64)
        return arr / 255.0 if arr.max() > 1.0 else arr
    from PIL import Image
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0


def import_bddx(frames_root, signals_csv, captions_csv, out, size: int | None = None) -> list[Episode]:
    """Convert pre-extracted frames plus CSV annotations into a dataset directory.

    ``frames_root/<episode>/`` holds the frames (PNG/JPEG/NPY, sorted by name);
    ``signals_csv`` has columns ``episode,frame,speed,course``; ``captions_csv``
    has ``episode,narration,reasoning`` and an optional ``scenario``.
    """
    frames_root, out = Path(frames_root), Path(out)
    signals: dict[str, list[tuple[int, float, float]]] = {}
    with open(signals_csv, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.DictReader(fh), start=2):
            try:
                signals.setdefault(row["episode"], []).append(
                    (int(row["frame"]), float(row["speed"]), float(row["course"])))
            except (KeyError, ValueError, TypeError) as exc:
                raise DatasetError(f"{signals_csv}:{lineno}: bad signal row ({exc})") from None
    episodes = []
    (out / "clips").mkdir(parents=True, exist_ok=True)
    with open(captions_csv, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.DictReader(fh), start=2):
            name = row.get("episode")
            if not name:
                raise DatasetError(f"{captions_csv}:{lineno}: missing episode id")
            files = sorted(p for p in (frames_root / name).iterdir()
                           if p.suffix.lower() in _IMAGE_SUFFIXES + (".npy",))
            if not files:
                raise DatasetError(f"{frames_root / name}: no frames")
            frames = np.stack([_load_frame(p) for p in files])
            if size is not None:
                frames = resize_frames(frames, size, size)
            rows = sorted(signals.get(name, []))
            if len(rows) != len(files):
                raise DatasetError(f"{name}: {len(rows)} signal rows for {len(files)} frames")
            rel = f"clips/{name}.adpt"
            write_clip(out / rel, frames)
            ep = Episode(rel, [[s, c] for _, s, c in rows], row.get("narration", ""),
                         row.get("reasoning", ""), row.get("scenario") or "")
            ep.validate(len(files))
            episodes.append(ep)
    write_dataset(out, episodes)
    return episodes
