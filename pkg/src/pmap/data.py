"""Synthetic trimodal episodes and the on-disk dataset format.

Scene: K slots at fixed positions on a ring in the unit square, each holding a
distinct object.  The image gives one token per slot (position + object code),
the instruction names an object and an action, and the trajectory reaches down
to one slot and either picks (gripper 0 -> 1 -> 0) or pushes (gripper 0).  An
episode is aligned iff the trajectory works on the instructed object with the
instructed action.  In the hallucinated half the performed slot and action are
marginally uniform, exactly as in the aligned half, so the trajectory alone
carries no label information.

Dataset directory layout::

    manifest.json   counts, extents, seed, generator config
    episodes.bin    b"PMAPDS01", then per episode:
                    6 x uint32 extents (T, J, S_txt, d_txt, S_img, d_img),
                    uint8 label, uint8 latent flag,
                    float32 trajectory, text tokens, image tokens (row-major),
                    4 x uint32 latents if the flag is set
    all little-endian.
"""

from __future__ import annotations

import dataclasses
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import ConfigError, FormatError, OracleUnavailableError
from .numeric import Rng

MAGIC = b"PMAPDS01"
HEADER = struct.Struct("<6IBB")
LATENT = struct.Struct("<4I")
JOINTS = 8
GRIPPER = 7

PICK_PLACE = 0
PUSH = 1
ACTIONS = ("pick-place", "push")

HIGH_Z = 0.30
LOW_Z = 0.05
RING_RADIUS = 0.3
FILLER_WORDS = 4

CODEBOOK_STREAM = 0


@dataclass
class GeneratorConfig:
    slots: int = 4  # K
    traj_len: int = 64  # T
    s_txt: int = 3
    d_txt: int = 32
    d_img: int = 32
    noise: float = 0.05
    aligned_fraction: float = 0.5
    n_objects: int = 8
    seed: int = 0

    @property
    def s_img(self) -> int:
        return self.slots

    def validate(self) -> "GeneratorConfig":
        if self.slots < 2:
            raise ConfigError("need at least 2 slots, otherwise no mismatch is possible")
        if self.n_objects < self.slots:
            raise ConfigError("n_objects must be >= slots (objects in a scene are distinct)")
        if self.traj_len < 16:
            raise ConfigError("traj_len must be >= 16")
        if self.s_txt < 2:
            raise ConfigError("s_txt must be >= 2 (verb and object)")
        if not 0.0 <= self.aligned_fraction <= 1.0:
            raise ConfigError("aligned_fraction must lie in [0, 1]")
        if self.noise < 0:
            raise ConfigError("noise must be non-negative")
        return self


@dataclass(frozen=True)
class Latent:
    target_slot: int  # slot the trajectory works on
    instructed_slot: int  # slot holding the instructed object
    action_id: int  # instructed action
    performed_action: int

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.target_slot, self.instructed_slot, self.action_id, self.performed_action)


@dataclass
class Episode:
    trajectory: np.ndarray  # (T, 8)
    text_tokens: np.ndarray  # (S_txt, d_txt)
    image_tokens: np.ndarray  # (S_img, d_img)
    label: int
    _latent: Latent | None = field(default=None, repr=False)

    def model_inputs(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """What the classifier is allowed to see."""
        return self.trajectory, self.text_tokens, self.image_tokens

    def has_latent(self) -> bool:
        return self._latent is not None

    def __eq__(self, other):
        if not isinstance(other, Episode):
            return NotImplemented
        return (
            self.label == other.label
            and self._latent == other._latent
            and _same(self.trajectory, other.trajectory)
            and _same(self.text_tokens, other.text_tokens)
            and _same(self.image_tokens, other.image_tokens)
        )


def _same(a: np.ndarray, b: np.ndarray) -> bool:
    return a.shape == b.shape and a.tobytes() == b.tobytes()


def label_from_latent(latent: Latent) -> int:
    return int(latent.instructed_slot == latent.target_slot and latent.performed_action == latent.action_id)


def oracle_label(ep: Episode) -> int:
    """Recompute the label from the generator latents."""
    if ep._latent is None:
        raise OracleUnavailableError("episode carries no latent fields")
    return label_from_latent(ep._latent)


# ---------------------------------------------------------------------------
# generation


@dataclass
class Codebooks:
    img_objects: np.ndarray  # (n_objects, d_img)
    img_slots: np.ndarray  # (K, d_img) position embedding per slot
    txt_words: np.ndarray  # (n_objects + 2 + FILLER_WORDS, d_txt)
    slot_xy: np.ndarray  # (K, 2)

    def verb(self, action: int) -> np.ndarray:
        return self.txt_words[action]

    def noun(self, obj: int) -> np.ndarray:
        return self.txt_words[2 + obj]

    def filler(self, i: int) -> np.ndarray:
        return self.txt_words[-FILLER_WORDS + i % FILLER_WORDS]


def slot_positions(k: int) -> np.ndarray:
    ang = 2.0 * np.pi * np.arange(k) / k + np.pi / 4
    return 0.5 + RING_RADIUS * np.stack([np.cos(ang), np.sin(ang)], axis=1)


def make_codebooks(cfg: GeneratorConfig) -> Codebooks:
    r = Rng(cfg.seed, CODEBOOK_STREAM)
    xy = slot_positions(cfg.slots)
    # embeddings of the two modalities are unrelated random vectors: the model has
    # to learn which image code goes with which word
    img_objects = r.normal((cfg.n_objects, cfg.d_img), 1.0 / np.sqrt(cfg.d_img))
    # linear code of the slot position relative to the ring centre: no shared
    # offset, so slots differ by as much as objects do and a query that is linear
    # in the arm position can pick out the slot it is over
    pos_proj = r.normal((2, cfg.d_img), 1.0 / np.sqrt(cfg.d_img))
    img_slots = ((xy - 0.5) / RING_RADIUS) @ pos_proj
    txt_words = r.normal((cfg.n_objects + 2 + FILLER_WORDS, cfg.d_txt), 1.0 / np.sqrt(cfg.d_txt))
    return Codebooks(img_objects, img_slots, txt_words, xy)


def _ease(u: np.ndarray) -> np.ndarray:
    return u * u * (3.0 - 2.0 * u)


def _interpolate(times: np.ndarray, points: np.ndarray, t_len: int) -> np.ndarray:
    """Cubic-ease interpolation through ``points`` reached at integer ``times``."""
    out = np.empty((t_len, points.shape[1]))
    steps = np.arange(t_len)
    for i in range(len(times) - 1):
        t0, t1 = times[i], times[i + 1]
        sel = (steps >= t0) & (steps <= t1)
        u = (steps[sel] - t0) / max(t1 - t0, 1)
        out[sel] = points[i] + _ease(u)[:, None] * (points[i + 1] - points[i])
    out[steps < times[0]] = points[0]
    out[steps > times[-1]] = points[-1]
    return out


def _segment_times(r: Rng, t_len: int, n_seg: int) -> np.ndarray:
    """Random monotone waypoint times 0 = t_0 < ... < t_n <= T-1 with a resting tail."""
    end = int(r.integers(int(0.75 * t_len), t_len))
    w = r.uniform(0.5, 1.5, n_seg)
    cuts = np.round(np.cumsum(w) / w.sum() * end).astype(int)
    times = np.concatenate([[0], cuts])
    for i in range(1, len(times)):
        times[i] = max(times[i], times[i - 1] + 1)
    return np.minimum(times, t_len - 1)


def make_trajectory(r: Rng, cfg: GeneratorConfig, slot_xy: np.ndarray, action: int) -> np.ndarray:
    t_len = cfg.traj_len
    start = np.array([*r.uniform(0.05, 0.95, 2), HIGH_Z])
    sx, sy = slot_xy
    above = np.array([sx, sy, HIGH_Z])
    contact = np.array([sx, sy, LOW_Z])
    if action == PICK_PLACE:
        place = np.array([*r.uniform(0.05, 0.95, 2), HIGH_Z])
        pts = [start, above, contact, contact, above, place, place + [0, 0, LOW_Z - HIGH_Z + 0.05]]
        grip_closed = (3, 5)  # closes on arrival at contact, opens after reaching the place point
    else:
        ang = r.uniform(0, 2 * np.pi)
        push_to = contact + 0.12 * np.array([np.cos(ang), np.sin(ang), 0.0])
        retreat = push_to + [0, 0, HIGH_Z - LOW_Z]
        pts = [start, above, contact, contact, push_to, retreat, retreat]
        grip_closed = None
    pts = np.array(pts)
    times = _segment_times(r, t_len, len(pts) - 1)
    pos = _interpolate(times, pts, t_len)

    rot0 = r.uniform(-0.3, 0.3, 3)
    rot1 = r.uniform(-0.3, 0.3, 3)
    rot = rot0 + _ease(np.linspace(0.0, 1.0, t_len))[:, None] * (rot1 - rot0)
    # 7th action dimension: normalised progress of the arm speed profile
    speed = np.linalg.norm(np.diff(pos, axis=0, prepend=pos[:1]), axis=1)
    speed = speed / (speed.max() + 1e-12)

    grip = np.zeros(t_len)
    if grip_closed is not None:
        grip[times[grip_closed[0]]: times[grip_closed[1] + 1]] = 1.0
    traj = np.column_stack([pos, rot, speed, grip])
    return traj


def gen_episode(cfg: GeneratorConfig, index: int, books: Codebooks | None = None) -> Episode:
    """Episode ``index`` of the stream defined by ``cfg``; deterministic in (cfg, index)."""
    cfg.validate()
    if books is None:
        books = make_codebooks(cfg)
    r = Rng(cfg.seed, index + 1)
    k = cfg.slots
    objects = r.choice(cfg.n_objects, size=k, replace=False)
    instructed_slot = int(r.integers(k))
    action_id = int(r.integers(2))

    target_slot, performed = instructed_slot, action_id
    if r.random() >= cfg.aligned_fraction:
        kind = int(r.integers(3))  # wrong slot, wrong action, both
        if kind in (0, 2):
            target_slot = int((instructed_slot + r.integers(1, k)) % k)
        if kind in (1, 2):
            performed = 1 - action_id
    latent = Latent(target_slot, instructed_slot, action_id, performed)

    img = books.img_slots + books.img_objects[objects]
    img = img + r.normal(img.shape, cfg.noise)

    words = [books.verb(action_id), books.noun(int(objects[instructed_slot]))]
    words += [books.filler(i) for i in range(cfg.s_txt - 2)]
    txt = np.stack(words)
    txt = txt + r.normal(txt.shape, cfg.noise)

    traj = make_trajectory(r, cfg, books.slot_xy[target_slot], performed)
    return Episode(
        trajectory=_f32(traj),
        text_tokens=_f32(txt),
        image_tokens=_f32(img),
        label=label_from_latent(latent),
        _latent=latent,
    )


def _f32(a: np.ndarray) -> np.ndarray:
    # generated values live on the float32 grid, so files round-trip exactly
    return np.asarray(a, dtype=np.float32).astype(np.float64)


def generate(cfg: GeneratorConfig, start: int, count: int) -> list[Episode]:
    books = make_codebooks(cfg.validate())
    return [gen_episode(cfg, i, books) for i in range(start, start + count)]


# ---------------------------------------------------------------------------
# batched view


@dataclass
class Batch:
    traj: np.ndarray
    txt: np.ndarray
    img: np.ndarray
    labels: np.ndarray

    def __len__(self):
        return self.labels.shape[0]

    def take(self, idx) -> "Batch":
        return Batch(self.traj[idx], self.txt[idx], self.img[idx], self.labels[idx])


def stack(episodes: list[Episode]) -> Batch:
    if not episodes:
        return Batch(np.zeros((0, 1, JOINTS)), np.zeros((0, 1, 1)), np.zeros((0, 1, 1)),
                     np.zeros(0, dtype=np.int64))
    shapes = {(e.trajectory.shape, e.text_tokens.shape, e.image_tokens.shape) for e in episodes}
    if len(shapes) != 1:
        raise FormatError(f"episodes have mixed extents: {sorted(shapes)}")
    return Batch(
        np.stack([e.trajectory for e in episodes]),
        np.stack([e.text_tokens for e in episodes]),
        np.stack([e.image_tokens for e in episodes]),
        np.array([e.label for e in episodes], dtype=np.int64),
    )


# ---------------------------------------------------------------------------
# file format


def write_dataset(episodes: Iterable[Episode], path: str | Path, meta: dict | None = None) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    episodes = list(episodes)
    extents = None
    with open(path / "episodes.bin", "wb") as fh:
        fh.write(MAGIC)
        for ep in episodes:
            t, j = ep.trajectory.shape
            s_txt, d_txt = ep.text_tokens.shape
            s_img, d_img = ep.image_tokens.shape
            extents = [t, j, s_txt, d_txt, s_img, d_img]
            fh.write(HEADER.pack(t, j, s_txt, d_txt, s_img, d_img, int(ep.label), int(ep.has_latent())))
            for arr in ep.model_inputs():
                fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
            if ep.has_latent():
                fh.write(LATENT.pack(*ep._latent.as_tuple()))
    manifest = {"format": "PMAPDS01", "count": len(episodes), "extents": extents}
    if meta:
        manifest.update(meta)
    (path / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True), encoding="utf-8")
    return path


def read_manifest(path: str | Path) -> dict:
    p = Path(path) / "manifest.json"
    try:
        return json.loads(p.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"cannot read manifest {p}: {exc}") from exc


def read_dataset(path: str | Path) -> list[Episode]:
    path = Path(path)
    manifest = read_manifest(path)
    try:
        buf = (path / "episodes.bin").read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read {path / 'episodes.bin'}: {exc}") from exc
    if buf[: len(MAGIC)] != MAGIC:
        raise FormatError("bad magic bytes", 0)
    off = len(MAGIC)
    episodes = []
    while off < len(buf):
        if off + HEADER.size > len(buf):
            raise FormatError("truncated record header", off)
        t, j, s_txt, d_txt, s_img, d_img, label, flag = HEADER.unpack_from(buf, off)
        rec_start = off
        off += HEADER.size
        if label not in (0, 1) or flag not in (0, 1):
            raise FormatError(f"bad label/flag byte ({label}, {flag})", rec_start)
        n_floats = t * j + s_txt * d_txt + s_img * d_img
        need = 4 * n_floats + (LATENT.size if flag else 0)
        if min(t, j, s_txt, d_txt, s_img, d_img) == 0 or off + need > len(buf):
            raise FormatError(f"extent overflow or truncated payload ({t},{j},{s_txt},{d_txt},{s_img},{d_img})",
                              rec_start)
        arrays = []
        for shape in ((t, j), (s_txt, d_txt), (s_img, d_img)):
            n = shape[0] * shape[1]
            arrays.append(np.frombuffer(buf, dtype="<f4", count=n, offset=off).astype(np.float64).reshape(shape))
            off += 4 * n
        latent = None
        if flag:
            latent = Latent(*LATENT.unpack_from(buf, off))
            off += LATENT.size
        episodes.append(Episode(*arrays, label=int(label), _latent=latent))
    if manifest.get("count") != len(episodes):
        raise FormatError(f"manifest count {manifest.get('count')} != {len(episodes)} records", off)
    return episodes


def import_arrays(npz_path: str | Path, out: str | Path, meta: dict | None = None) -> Path:
    """Convert externally computed embeddings into a dataset directory (no latents).

    The ``.npz`` needs ``trajectory`` (N, T, J), ``text_tokens`` (N, S_txt, d_txt),
    ``image_tokens`` (N, S_img, d_img) and ``labels`` (N,).  Trajectory scaling is
    the caller's business; nothing is normalised here.
    """
    try:
        arrs = np.load(npz_path)
        traj, txt, img, labels = (arrs[k] for k in ("trajectory", "text_tokens", "image_tokens", "labels"))
    except (OSError, KeyError, ValueError) as exc:
        raise FormatError(f"cannot import {npz_path}: {exc}") from exc
    n = len(labels)
    if not (len(traj) == len(txt) == len(img) == n):
        raise FormatError("imported arrays disagree on episode count")
    if not np.isin(labels, (0, 1)).all():
        raise FormatError("labels must be 0 or 1")
    episodes = [Episode(_f32(traj[i]), _f32(txt[i]), _f32(img[i]), int(labels[i])) for i in range(n)]
    return write_dataset(episodes, out, {"source": "import", **(meta or {})})


def generator_meta(cfg: GeneratorConfig, split: str, start: int) -> dict:
    return {"generator": dataclasses.asdict(cfg), "seed": cfg.seed, "split": split, "start_index": start}
