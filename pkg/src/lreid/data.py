"""Identity datasets: synthetic generation, Market-style folders, PK batches.

Synthetic identities are block-signature images: each identity owns a fixed
set of colored cells on a gray canvas, each camera applies a fixed brightness
shift and cyclic translation, and each image gets its own seeded noise. The
design forces cross-camera invariance learning at toy scale. Pixel values are
quantized to the 8-bit grid so folder export/import round-trips losslessly.
"""

import re
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .rng import STREAM_BATCH, derive_rng

MARKET_NAME_RE = re.compile(r"^(-?\d+)_c(\d+)")


@dataclass
class IdentitySample:
    image: np.ndarray  # C x H x W float32 in [0, 1]
    person_id: int
    camera_id: int
    task_id: int = 0


@dataclass
class Dataset:
    """Column-wise sample store; images stacked as one (n, C, H, W) array."""

    images: np.ndarray
    person_ids: np.ndarray
    camera_ids: np.ndarray
    task_ids: np.ndarray

    def __len__(self):
        return len(self.person_ids)

    def __getitem__(self, i):
        return IdentitySample(
            image=self.images[i],
            person_id=int(self.person_ids[i]),
            camera_id=int(self.camera_ids[i]),
            task_id=int(self.task_ids[i]),
        )

    def unique_ids(self):
        return np.unique(self.person_ids)

    def subset(self, indices):
        indices = np.asarray(indices)
        return Dataset(
            images=self.images[indices],
            person_ids=self.person_ids[indices],
            camera_ids=self.camera_ids[indices],
            task_ids=self.task_ids[indices],
        )

    def shift_ids(self, offset):
        return Dataset(
            images=self.images,
            person_ids=self.person_ids + offset,
            camera_ids=self.camera_ids,
            task_ids=self.task_ids,
        )

    @staticmethod
    def concatenate(parts):
        return Dataset(
            images=np.concatenate([p.images for p in parts]),
            person_ids=np.concatenate([p.person_ids for p in parts]),
            camera_ids=np.concatenate([p.camera_ids for p in parts]),
            task_ids=np.concatenate([p.task_ids for p in parts]),
        )


@dataclass
class SyntheticSpec:
    ids: int = 8
    cams: int = 2
    imgs_per_id_per_cam: int = 4
    image_size: int = 32
    background: float = 0.5  # canvas shade; tasks with different shades have a domain gap
    brightness: float = 0.15  # per-camera shift drawn from [-brightness, brightness]
    translation: int = 2  # per-camera cyclic shift drawn from [-translation, translation]
    noise: float = 0.02  # per-image gaussian noise std
    seed: int = 0
    split: int = 0  # varies only the per-image noise stream (0 train, 1 test)
    cell: int = 8
    signature_cells: int = 5

    def __post_init__(self):
        if self.ids < 2:
            raise ValueError("need at least 2 identities")
        if self.cams < 1 or self.imgs_per_id_per_cam < 1:
            raise ValueError("cams and imgs_per_id_per_cam must be positive")
        if self.image_size % self.cell:
            raise ValueError("image_size must be divisible by the signature cell size")


def _identity_signature(spec, rng):
    """Flat canvas with this identity's colored cells."""
    size = spec.image_size
    grid = size // spec.cell
    canvas = np.full((3, size, size), spec.background, dtype=np.float64)
    cells = rng.choice(grid * grid, size=min(spec.signature_cells, grid * grid), replace=False)
    for c in cells:
        row, col = divmod(int(c), grid)
        color = rng.uniform(0.0, 1.0, size=3)
        # push toward saturation so signatures dominate nuisance shifts
        color = np.where(color > 0.5, 0.75 + 0.25 * color, 0.25 * color)
        r0, c0 = row * spec.cell, col * spec.cell
        canvas[:, r0 : r0 + spec.cell, c0 : c0 + spec.cell] = color[:, None, None]
    return canvas


def generate_synthetic(spec):
    """Build the deterministic synthetic dataset described by the spec."""
    sig_rng = derive_rng(spec.seed, 10)
    cam_rng = derive_rng(spec.seed, 11)
    signatures = [_identity_signature(spec, sig_rng) for _ in range(spec.ids)]
    cam_brightness = cam_rng.uniform(-spec.brightness, spec.brightness, size=spec.cams)
    cam_shift = cam_rng.integers(-spec.translation, spec.translation + 1, size=(spec.cams, 2))

    images, pids, camids = [], [], []
    for pid in range(spec.ids):
        for cam in range(spec.cams):
            base = np.roll(signatures[pid], shift=tuple(cam_shift[cam]), axis=(1, 2))
            base = base + cam_brightness[cam]
            for k in range(spec.imgs_per_id_per_cam):
                noise_rng = derive_rng(spec.seed, 12, spec.split, pid, cam, k)
                img = base + (noise_rng.normal(0.0, spec.noise, size=base.shape) if spec.noise > 0 else 0.0)
                img = np.clip(img, 0.0, 1.0)
                img = np.round(img * 255.0) / 255.0  # 8-bit grid for lossless export
                images.append(img.astype(np.float32))
                pids.append(pid)
                camids.append(cam)
    return Dataset(
        images=np.stack(images),
        person_ids=np.asarray(pids, dtype=np.int64),
        camera_ids=np.asarray(camids, dtype=np.int64),
        task_ids=np.zeros(len(pids), dtype=np.int64),
    )


def export_folder(dataset, path):
    """Write the dataset as Market-style PNG files; returns the file count."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    counters = {}
    for i in range(len(dataset)):
        sample = dataset[i]
        key = (sample.person_id, sample.camera_id)
        counters[key] = counters.get(key, -1) + 1
        name = f"{sample.person_id:04d}_c{sample.camera_id}s1_{i:06d}_{counters[key]:02d}.png"
        arr = np.round(sample.image * 255.0).astype(np.uint8).transpose(1, 2, 0)
        Image.fromarray(arr, mode="RGB").save(path / name)
    return len(dataset)


def load_folder(path, image_size=None, pattern=MARKET_NAME_RE):
    """Load a Market-style folder: filenames `{pid}_c{cam}...`, pid -1 skipped."""
    path = Path(path)
    pattern = re.compile(pattern)
    files = sorted(p for p in path.iterdir() if p.suffix.lower() in (".png", ".jpg", ".jpeg"))
    images, pids, camids = [], [], []
    for f in files:
        m = pattern.match(f.name)
        if not m:
            warnings.warn(f"skipping unparseable filename {f.name!r}")
            continue
        pid, cam = int(m.group(1)), int(m.group(2))
        if pid == -1:
            continue
        img = Image.open(f).convert("RGB")
        if image_size is not None and img.size != (image_size, image_size):
            img = img.resize((image_size, image_size), Image.BILINEAR)
        arr = np.asarray(img, dtype=np.float32).transpose(2, 0, 1) / 255.0
        images.append(arr)
        pids.append(pid)
        camids.append(cam)
    if not images:
        raise ValueError(f"no usable images found under {path}")
    return Dataset(
        images=np.stack(images),
        person_ids=np.asarray(pids, dtype=np.int64),
        camera_ids=np.asarray(camids, dtype=np.int64),
        task_ids=np.zeros(len(pids), dtype=np.int64),
    )


@dataclass
class PKBatch:
    images: np.ndarray
    person_ids: np.ndarray
    camera_ids: np.ndarray


def pk_sample(dataset, p, k, seed, step, stream=STREAM_BATCH):
    """Draw P identities x K instances, deterministic in (seed, step).

    Identities are drawn without replacement; instances with replacement only
    when an identity holds fewer than K images.
    """
    ids = dataset.unique_ids()
    if len(ids) < p:
        raise ValueError(f"need {p} identities, dataset has {len(ids)}")
    rng = derive_rng(seed, stream, step)
    chosen = rng.choice(ids, size=p, replace=False)
    picks = []
    for pid in chosen:
        candidates = np.flatnonzero(dataset.person_ids == pid)
        replace = len(candidates) < k
        picks.append(rng.choice(candidates, size=k, replace=replace))
    idx = np.concatenate(picks)
    return PKBatch(
        images=dataset.images[idx],
        person_ids=dataset.person_ids[idx],
        camera_ids=dataset.camera_ids[idx],
    )


@dataclass
class TaskData:
    """One task of the stream: train split plus a query/gallery test split."""

    name: str
    train: Dataset
    query: Dataset
    gallery: Dataset
    num_ids: int
    label_offset: int = 0


def split_query_gallery(test_set):
    """Split each (pid, cam) group: first half queries, the rest gallery.

    Groups with a single image contribute it as a query; its matches come
    from the identity's other cameras (same-camera gallery items are excluded
    by the evaluation protocol anyway).
    """
    counts = {}
    for i in range(len(test_set)):
        key = (int(test_set.person_ids[i]), int(test_set.camera_ids[i]))
        counts[key] = counts.get(key, 0) + 1
    quota = {key: max(1, m // 2) for key, m in counts.items()}
    taken = {}
    query_idx, gallery_idx = [], []
    for i in range(len(test_set)):
        key = (int(test_set.person_ids[i]), int(test_set.camera_ids[i]))
        taken[key] = taken.get(key, 0) + 1
        (query_idx if taken[key] <= quota[key] else gallery_idx).append(i)
    return test_set.subset(query_idx), test_set.subset(gallery_idx)


def relabel_tasks(task_list):
    """Apply the global identity remap: task t's labels shift by the count of
    all earlier identities. Returns the tasks plus the per-task offsets."""
    offset = 0
    offsets = []
    for task in task_list:
        task.train = task.train.shift_ids(offset)
        task.query = task.query.shift_ids(offset)
        task.gallery = task.gallery.shift_ids(offset)
        task.label_offset = offset
        offsets.append(offset)
        offset += task.num_ids
    return task_list, offsets
