"""Few-shot datasets: synthetic Gaussian clusters and folders of grayscale images."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, ShapeError


class InconsistentShapeError(DataError, ShapeError):
    exit_code = 2


@dataclass(frozen=True)
class ClassRecord:
    id: str
    samples: np.ndarray  # (n_samples, *sample_shape)

    def __len__(self):
        return len(self.samples)


@dataclass(frozen=True)
class DatasetSplit:
    classes: tuple
    provenance: str = "synthetic"
    normalization: str = "none"

    def __post_init__(self):
        object.__setattr__(self, "classes", tuple(self.classes))
        if len(self.classes) < 2:
            raise DataError(f"a split needs at least 2 classes, got {len(self.classes)}")
        shapes = {c.samples.shape[1:] for c in self.classes}
        if len(shapes) != 1:
            raise InconsistentShapeError(f"classes have different sample shapes: {sorted(shapes)}")
        ids = [c.id for c in self.classes]
        if len(set(ids)) != len(ids):
            raise DataError("duplicate class ids in split")

    @property
    def sample_shape(self) -> tuple:
        return self.classes[0].samples.shape[1:]

    @property
    def class_ids(self) -> list:
        return [c.id for c in self.classes]

    def __len__(self):
        return len(self.classes)


def check_disjoint(*splits: DatasetSplit):
    seen = {}
    for i, split in enumerate(splits):
        for cid in split.class_ids:
            if cid in seen:
                raise DataError(f"class {cid!r} appears in split {seen[cid]} and split {i}")
            seen[cid] = i


@dataclass(frozen=True)
class SyntheticTaskSpec:
    n_classes_pool: int = 20
    input_dim: int = 32
    cluster_std: float = 0.1
    cluster_separation: float = 1.0
    samples_per_class: int = 20
    seed: int = 0
    prefix: str = "syn"

    def __post_init__(self):
        if self.cluster_separation <= 0:
            raise ConfigError("cluster_separation must be > 0")
        if self.cluster_std < 0:
            raise ConfigError("cluster_std must be >= 0")
        if self.n_classes_pool < 2 or self.input_dim < 1 or self.samples_per_class < 1:
            raise ConfigError(f"bad synthetic spec {self}")


def generate_synthetic(spec: SyntheticTaskSpec) -> DatasetSplit:
    """Class means uniform on a sphere of radius ``cluster_separation``; samples
    isotropic Gaussian around them with std ``cluster_std``."""
    rng = np.random.default_rng(spec.seed)
    means = rng.standard_normal((spec.n_classes_pool, spec.input_dim))
    means *= spec.cluster_separation / np.linalg.norm(means, axis=1, keepdims=True)
    classes = []
    for k, mu in enumerate(means):
        noise = rng.standard_normal((spec.samples_per_class, spec.input_dim))
        classes.append(ClassRecord(f"{spec.prefix}{k:04d}", mu + spec.cluster_std * noise))
    return DatasetSplit(classes, provenance="synthetic", normalization="none")


def synthetic_splits(spec: SyntheticTaskSpec, names=("train", "val", "test")) -> dict[str, DatasetSplit]:
    """Independent class pools per split, each generated from its own seed stream."""
    out = {}
    for i, name in enumerate(names):
        sub_seed = int(np.random.SeedSequence([spec.seed, i]).generate_state(1)[0])
        sub = SyntheticTaskSpec(
            spec.n_classes_pool, spec.input_dim, spec.cluster_std, spec.cluster_separation,
            spec.samples_per_class, sub_seed, f"{name}-",
        )
        out[name] = generate_synthetic(sub)
    return out


def _read_gray(path: Path) -> np.ndarray:
    from PIL import Image, UnidentifiedImageError

    try:
        with Image.open(path) as img:
            arr = np.asarray(img.convert("L"), dtype=np.float64)
    except (OSError, UnidentifiedImageError) as exc:
        raise DataError(f"cannot read image {path}: {exc}") from exc
    return arr / 255.0


def load_image_folder(root) -> DatasetSplit:
    """Read ``root/<class>/<image>`` grayscale images, pixels scaled to [0, 1].

    Classes and files are taken in lexicographic order so the result does not
    depend on directory enumeration order. Samples are stored as (1, H, W).
    """
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"dataset path not found: {root}")
    class_dirs = sorted(p for p in root.iterdir() if p.is_dir() and not p.name.startswith("."))
    if not class_dirs:
        raise DataError(f"no class directories under {root}")
    classes, shapes = [], {}
    for cdir in class_dirs:
        files = sorted(p for p in cdir.iterdir() if p.is_file() and not p.name.startswith("."))
        if not files:
            raise DataError(f"class directory {cdir.name!r} is empty")
        imgs = []
        for f in files:
            img = _read_gray(f)
            shapes.setdefault(img.shape, []).append(str(f))
            imgs.append(img)
        if len(shapes) > 1:
            break
        classes.append(ClassRecord(cdir.name, np.stack(imgs)[:, None, :, :]))
    if len(shapes) > 1:
        common = max(shapes, key=lambda s: len(shapes[s]))
        offenders = [f for s, fs in shapes.items() if s != common for f in fs]
        raise InconsistentShapeError(f"images differ from {common[0]}x{common[1]}: {', '.join(offenders)}")
    return DatasetSplit(classes, provenance=f"image-folder:{root}", normalization="pixel/255")


def augment_rotations(split: DatasetSplit) -> DatasetSplit:
    """Each class becomes four classes: its samples rotated 0, 90, 180, 270 degrees counter-clockwise."""
    shape = split.sample_shape
    if len(shape) < 2 or shape[-1] != shape[-2]:
        raise ShapeError(f"rotation needs square samples, got {shape}")
    classes = []
    for c in split.classes:
        for k in range(4):
            rotated = np.ascontiguousarray(np.rot90(c.samples, k, axes=(-2, -1)))
            classes.append(ClassRecord(f"{c.id}@rot{90 * k}", rotated))
    return DatasetSplit(classes, provenance=split.provenance, normalization=split.normalization)


def split_classes(split: DatasetSplit, n_train: int, n_val: int = 0) -> dict[str, DatasetSplit]:
    """Partition classes in their stored order: first ``n_train`` train, next ``n_val`` val, rest test."""
    n = len(split.classes)
    if n_train < 2 or n - n_train - n_val < 2 or (n_val and n_val < 2):
        raise DataError(f"cannot split {n} classes into train={n_train}, val={n_val}, test={n - n_train - n_val}")
    parts = {
        "train": split.classes[:n_train],
        "val": split.classes[n_train : n_train + n_val],
        "test": split.classes[n_train + n_val :],
    }
    return {
        name: DatasetSplit(cls, split.provenance, split.normalization) for name, cls in parts.items() if cls
    }


def load_image_splits(root, n_train: int = 0, n_val: int = 0, rotate: bool = False) -> dict[str, DatasetSplit]:
    """Splits from ``root/{train,val,test}`` when present, otherwise by class count.

    Rotation augmentation is applied after splitting so the rotated copies of
    one character never straddle two splits.
    """
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"dataset path not found: {root}")
    if (root / "train").is_dir():
        splits = {name: load_image_folder(root / name) for name in ("train", "val", "test") if (root / name).is_dir()}
    else:
        if n_train <= 0:
            raise ConfigError(f"{root} has no train/ subdirectory; set train_classes to split it")
        splits = split_classes(load_image_folder(root), n_train, n_val)
    if rotate:
        splits = {k: augment_rotations(v) for k, v in splits.items()}
    check_disjoint(*splits.values())
    return splits

