# -*- coding: utf-8 -*-
"""
Corpus ingestion, splitting and synthetic sample generation.

A corpus root holds still images (any of IMAGE_SUFFIXES) and clips (directories of numbered
frame PNGs). The manifest records every item with its split and content hash; paired samples
record enough provenance to be rebuilt bit-exactly.
"""
import hashlib
import logging
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
import torch

from modules.constants import FRAME_GLOB, IMAGE_SUFFIXES
from modules.degradations import DegradationParameters, sample_parameters, synthesize
from modules.imaging import VideoSequence, crop, list_frame_paths, load_image, read_frame_rate, save_image, save_video
from modules.utils import derive_seed, sha256_file, write_key_values

logger = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")
MIN_CORPUS_ITEMS = 10


class DatasetError(RuntimeError):
    """Raised when the corpus cannot satisfy a request."""


@dataclass(frozen=True)
class ManifestItem:
    path: str
    kind: str
    split: str
    sha256: str


@dataclass
class CorpusManifest:
    root: Path
    items: List[ManifestItem] = field(default_factory=list)

    def select(self, split: str, kind: Optional[str] = None) -> List[ManifestItem]:
        return [i for i in self.items if i.split == split and (kind is None or i.kind == kind)]

    def counts(self, kind: Optional[str] = None) -> Dict[str, int]:
        return {split: len(self.select(split, kind)) for split in SPLITS}

    def resolve(self, item: ManifestItem) -> Path:
        return self.root / item.path

    def save(self, path: Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        lines = [f"# root\t{self.root.resolve().as_posix()}"]
        lines += [f"{i.path}\t{i.kind}\t{i.split}\t{i.sha256}" for i in self.items]
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: Path) -> "CorpusManifest":
        root = Path(path).parent
        items = []
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            if not line.strip():
                continue
            if line.startswith("# root\t"):
                root = Path(line.split("\t", 1)[1])
                continue
            parts = line.split("\t")
            if len(parts) != 4 or parts[2] not in SPLITS:
                raise DatasetError(f"Malformed manifest line in {path}: {line!r}")
            items.append(ManifestItem(*parts))
        return cls(root=root, items=items)


def _scan(root: Path) -> List[Tuple[str, str, str]]:
    """(relative path, kind, sha256) for every image and clip below root, sorted by path."""
    clip_dirs = sorted({p.parent for p in root.rglob(FRAME_GLOB)})
    found = []
    for directory in clip_dirs:
        digest = hashlib.sha256()
        for frame in list_frame_paths(directory):
            digest.update(sha256_file(frame).encode("ascii"))
        found.append((directory.relative_to(root).as_posix(), "clip", digest.hexdigest()))
    clip_set = set(clip_dirs)
    for path in sorted(root.rglob("*")):
        if path.is_file() and path.suffix.lower() in IMAGE_SUFFIXES and path.parent not in clip_set:
            found.append((path.relative_to(root).as_posix(), "image", sha256_file(path)))
    return sorted(found)


def split_counts(total: int, ratios: Sequence[float]) -> List[int]:
    """Largest-remainder apportionment of total items; ties go to the earlier split."""
    weight = float(sum(ratios))
    quotas = [total * r / weight for r in ratios]
    counts = [int(np.floor(q)) for q in quotas]
    order = sorted(range(len(ratios)), key=lambda i: (-(quotas[i] - counts[i]), i))
    for i in order[:total - sum(counts)]:
        counts[i] += 1
    return counts


def build_manifest(root: Path, ratios: Sequence[float] = (0.7, 0.2, 0.1), seed: int = 0) -> CorpusManifest:
    root = Path(root)
    if not root.is_dir():
        raise DatasetError(f"Corpus root {root} is not a directory")
    found = _scan(root)
    if not found:
        raise DatasetError(f"Corpus {root} is empty")

    unique, seen = [], {}
    for rel, kind, digest in found:
        if digest in seen:
            logger.warning(f"Duplicate content: {rel} equals {seen[digest]}. Keeping the first.")
            continue
        seen[digest] = rel
        unique.append((rel, kind, digest))
    if len(unique) < MIN_CORPUS_ITEMS:
        raise DatasetError(f"Corpus {root} holds {len(unique)} distinct items, at least {MIN_CORPUS_ITEMS} required")

    rng = np.random.default_rng(seed)
    items: List[ManifestItem] = []
    for kind in ("image", "clip"):
        group = [u for u in unique if u[1] == kind]
        if not group:
            continue
        if kind == "clip":
            logger.warning("Clips are split at clip level. Clips of one recording may leak across splits.")
        order = rng.permutation(len(group))
        counts = split_counts(len(group), ratios)
        bounds = np.cumsum([0] + counts)
        for split, start, stop in zip(SPLITS, bounds[:-1], bounds[1:]):
            for index in order[start:stop]:
                rel, _, digest = group[int(index)]
                items.append(ManifestItem(rel, kind, split, digest))
    items.sort(key=lambda i: i.path)
    manifest = CorpusManifest(root=root, items=items)
    logger.info(f"Manifest: {len(items)} items, images {manifest.counts('image')}, clips {manifest.counts('clip')}")
    return manifest


@lru_cache(maxsize=64)
def _cached_image(path: str) -> torch.Tensor:
    return load_image(Path(path))


@dataclass(frozen=True)
class Provenance:
    """Everything needed to rebuild a paired sample from the corpus."""
    source: str
    top: int
    left: int
    size: int
    kind: str
    level: str
    scale: int
    param_seed: int
    noise_seed: int

    def to_record(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_record(cls, record: Dict[str, Any]) -> "Provenance":
        return cls(**{name: record[name] for name in cls.__dataclass_fields__})


@dataclass
class PairedSample:
    x_h: torch.Tensor
    x_l: torch.Tensor
    params: DegradationParameters
    provenance: Provenance

    @property
    def level(self) -> str:
        return self.provenance.level

    @property
    def seed(self) -> int:
        return self.provenance.noise_seed


def _render(image: torch.Tensor, provenance: Provenance) -> PairedSample:
    x_h = crop(image, provenance.top, provenance.left, provenance.size)
    params = sample_parameters(provenance.kind, provenance.level, provenance.param_seed,
                               size=(provenance.size, provenance.size), scale=provenance.scale)
    x_l = synthesize(x_h, params, provenance.noise_seed)
    return PairedSample(x_h=x_h, x_l=x_l, params=params, provenance=provenance)


def make_pairs(manifest: CorpusManifest, split: str, kinds: Sequence[str], levels: Sequence[str], count: int,
               seed: int, patch_size: int = 320, scale: int = 2) -> Iterator[PairedSample]:
    """Yield count independently seeded synthetic pairs drawn from the split's images."""
    if count <= 0:
        return
    sources = manifest.select(split, "image")
    if not sources:
        raise DatasetError(f"No images in split '{split}'")
    for index in range(count):
        rng = np.random.default_rng(derive_seed(seed, index))
        item = sources[int(rng.integers(len(sources)))]
        image = _cached_image(str(manifest.resolve(item)))
        height, width = image.shape[-2:]
        if min(height, width) < patch_size:
            raise DatasetError(f"{item.path} ({height}x{width}) is smaller than the {patch_size}px patch")
        provenance = Provenance(
            source=item.path,
            top=int(rng.integers(0, height - patch_size + 1)),
            left=int(rng.integers(0, width - patch_size + 1)),
            size=patch_size,
            kind=str(kinds[int(rng.integers(len(kinds)))]),
            level=str(levels[int(rng.integers(len(levels)))]),
            scale=scale,
            param_seed=int(rng.integers(2 ** 31)),
            noise_seed=int(rng.integers(2 ** 31)),
        )
        yield _render(image, provenance)


def reproduce_pair(provenance: Provenance, manifest: CorpusManifest) -> PairedSample:
    return _render(load_image(manifest.root / provenance.source), provenance)


def _clip_frames(manifest: CorpusManifest, split: str, length: int) -> List[Tuple[ManifestItem, List[Path]]]:
    clips = []
    for item in manifest.select(split, "clip"):
        frames = list_frame_paths(manifest.resolve(item))
        if len(frames) >= length:
            clips.append((item, frames))
    if not clips:
        raise DatasetError(f"No clip in split '{split}' has at least {length} frames")
    return clips


def sample_clip(manifest: CorpusManifest, split: str, length: int, seed: int) -> VideoSequence:
    """A contiguous window of length frames from a seeded choice of clip and offset."""
    clips = _clip_frames(manifest, split, length)
    rng = np.random.default_rng(seed)
    item, frames = clips[int(rng.integers(len(clips)))]
    offset = int(rng.integers(0, len(frames) - length + 1))
    logger.debug(f"Sampled clip {item.path} frames {offset}..{offset + length - 1}")
    return VideoSequence(frames=[load_image(p) for p in frames[offset:offset + length]],
                         frame_rate=read_frame_rate(manifest.resolve(item)))


def degrade_clip(clip: VideoSequence, kind: str, level: str, seed: int, scale: int = 2) -> Tuple[VideoSequence, DegradationParameters]:
    """One parameter draw for the whole clip, fresh noise per frame."""
    if not len(clip):
        raise DatasetError("Cannot degrade an empty clip")
    size = tuple(clip.frames[0].shape[-2:])
    params = sample_parameters(kind, level, derive_seed(seed, 0), size=size, scale=scale)
    frames = [synthesize(frame, params, derive_seed(seed, index + 1)) for index, frame in enumerate(clip.frames)]
    return VideoSequence(frames=frames, frame_rate=clip.frame_rate), params


def write_pair(sample: PairedSample, directory: Path, index: int) -> None:
    name = f"{index:06d}"
    save_image(sample.x_h, directory / "hq" / f"{name}.png")
    save_image(sample.x_l, directory / "lq" / f"{name}.png")
    write_key_values(directory / "params" / f"{name}.yml",
                     {"provenance": sample.provenance.to_record(), "parameters": sample.params.to_record()})


def synthesize_corpus(manifest: CorpusManifest, split: str, kinds: Sequence[str], levels: Sequence[str],
                      count: int, seed: int, out_dir: Path, patch_size: int = 320, scale: int = 2,
                      clip_kind: Optional[str] = None, clip_level: Optional[str] = None) -> int:
    """Write count pairs (hq/, lq/, params/) and, when clip_kind is set, a degraded copy of every clip."""
    out_dir = Path(out_dir)
    written = 0
    for index, sample in enumerate(make_pairs(manifest, split, kinds, levels, count, seed, patch_size, scale)):
        write_pair(sample, out_dir, index)
        written += 1
    if clip_kind is not None:
        for position, item in enumerate(manifest.select(split, "clip")):
            frames = list_frame_paths(manifest.resolve(item))
            clip = VideoSequence(frames=[load_image(p) for p in frames], frame_rate=read_frame_rate(manifest.resolve(item)))
            degraded, params = degrade_clip(clip, clip_kind, clip_level or levels[0], derive_seed(seed, 1, position), scale)
            target = out_dir / "clips" / item.path
            save_video(degraded, target)
            write_key_values(target / "params.yml", params.to_record())
    logger.info(f"Synthesized {written} pairs from split '{split}' into {out_dir}")
    return written
