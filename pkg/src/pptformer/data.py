"""Dataset plumbing: sample triples, manifests, and patch sampling.

A manifest is a plain CSV (degraded, clean, parser) with paths relative to
the manifest's directory, so trees stay relocatable and diffable. The parser
column may be empty; those samples fall back to the stub parser at load time
if the caller allows it.
"""

import csv
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .degrade import degrade
from .errors import InvalidArgumentError
from .imgio import load_image
from .parsers import stub_parse

MANIFEST_COLUMNS = ("degraded", "clean", "parser")


@dataclass
class RestorationSample:
    degraded: np.ndarray
    clean: np.ndarray
    parser: Optional[np.ndarray] = None
    name: str = ""

    def __post_init__(self):
        if self.degraded.shape != self.clean.shape:
            raise InvalidArgumentError(
                f"degraded {self.degraded.shape} vs clean {self.clean.shape} shape mismatch"
            )
        if self.parser is not None and self.parser.shape[:2] != self.degraded.shape[:2]:
            raise InvalidArgumentError(
                f"parser {self.parser.shape[:2]} does not match image {self.degraded.shape[:2]}"
            )


def make_synthetic_pair(clean, degradation, seed, n_segments=6, parse_from="degraded"):
    """Degrade a clean image and attach a stub parser map.

    ``parse_from`` selects which image the stub parser segments:
    ``"degraded"`` mirrors what a parser receives at inference time, while
    ``"clean"`` stands in for a degradation-robust parser whose region map
    is unaffected by the corruption. Deterministic per
    (clean, degradation, seed).
    """
    if parse_from not in ("degraded", "clean"):
        raise InvalidArgumentError(
            f"parse_from must be 'degraded' or 'clean', got {parse_from!r}")
    rng = np.random.default_rng(seed)
    clean = np.asarray(clean, dtype=np.float32)
    degraded = degrade(clean, degradation, rng)
    source = degraded if parse_from == "degraded" else clean
    parser = stub_parse(source, n_segments=n_segments, seed=seed)
    return RestorationSample(degraded=degraded, clean=clean,
                             parser=parser, name=f"synthetic-{seed}")


@dataclass
class DatasetManifest:
    root: str
    rows: list = field(default_factory=list)  # (degraded_rel, clean_rel, parser_rel or "")
    split: str = "train"

    def __len__(self):
        return len(self.rows)

    def add(self, degraded_rel, clean_rel, parser_rel=""):
        self.rows.append((degraded_rel, clean_rel, parser_rel))

    def path(self, rel):
        return os.path.join(self.root, rel)

    def save(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(MANIFEST_COLUMNS)
            for row in self.rows:
                writer.writerow(row)

    @classmethod
    def load(cls, path, split="train", validate=True):
        if not os.path.isfile(path):
            raise FileNotFoundError(f"manifest not found: {path}")
        root = os.path.dirname(os.path.abspath(path))
        rows = []
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or tuple(h.strip() for h in header) != MANIFEST_COLUMNS:
                raise InvalidArgumentError(
                    f"manifest {path} must start with header {','.join(MANIFEST_COLUMNS)}"
                )
            for line_no, row in enumerate(reader, start=2):
                if not row:
                    continue
                if len(row) != 3:
                    raise InvalidArgumentError(f"{path}:{line_no}: expected 3 columns, got {len(row)}")
                rows.append((row[0].strip(), row[1].strip(), row[2].strip()))
        manifest = cls(root=root, rows=rows, split=split)
        if validate:
            manifest.validate()
        return manifest

    def validate(self):
        """Check every referenced file exists and each pair matches spatially."""
        from PIL import Image

        for degraded_rel, clean_rel, parser_rel in self.rows:
            paths = [self.path(degraded_rel), self.path(clean_rel)]
            if parser_rel:
                paths.append(self.path(parser_rel))
            for p in paths:
                if not os.path.isfile(p):
                    raise FileNotFoundError(f"manifest references missing file: {p}")
            sizes = [Image.open(p).size for p in paths]
            if len(set(sizes)) != 1:
                raise InvalidArgumentError(
                    f"size mismatch for {degraded_rel}: {sizes}"
                )

    def load_sample(self, index, n_segments=6, stub_seed=0, allow_stub=True,
                    cache_dir=None):
        """Load one triple; the parser map resolves in precedence order:
        explicit manifest path, then cache file, then in-memory stub."""
        from .parsers import parser_cache_path

        degraded_rel, clean_rel, parser_rel = self.rows[index]
        degraded = load_image(self.path(degraded_rel))
        clean = load_image(self.path(clean_rel))
        parser = None
        if parser_rel:
            parser = load_image(self.path(parser_rel))
        elif cache_dir:
            cached = parser_cache_path(cache_dir, self.split, self.path(degraded_rel))
            if os.path.isfile(cached):
                parser = load_image(cached)
        if parser is None and allow_stub:
            parser = stub_parse(degraded, n_segments=n_segments, seed=stub_seed)
        return RestorationSample(degraded=degraded, clean=clean, parser=parser,
                                 name=os.path.splitext(os.path.basename(degraded_rel))[0])

    def load_all(self, **kwargs):
        return [self.load_sample(i, **kwargs) for i in range(len(self.rows))]


# ---------------------------------------------------------------------------
# Patch sampling and augmentation
# ---------------------------------------------------------------------------

def sample_patch(sample, patch_size, rng):
    """Random aligned crop of (degraded, clean, parser); identical window for all."""
    h, w = sample.degraded.shape[:2]
    if h < patch_size or w < patch_size:
        raise InvalidArgumentError(
            f"image {h}x{w} smaller than patch size {patch_size}"
        )
    y0 = int(rng.integers(0, h - patch_size + 1))
    x0 = int(rng.integers(0, w - patch_size + 1))
    window = np.s_[y0:y0 + patch_size, x0:x0 + patch_size]
    parser = sample.parser[window] if sample.parser is not None else None
    return RestorationSample(degraded=sample.degraded[window], clean=sample.clean[window],
                             parser=parser, name=sample.name)


def random_hflip(sample, rng):
    """Horizontal flip with probability 1/2, applied to all three maps together."""
    if rng.random() >= 0.5:
        return sample
    flip = lambda a: None if a is None else np.ascontiguousarray(a[:, ::-1])
    return RestorationSample(degraded=flip(sample.degraded), clean=flip(sample.clean),
                             parser=flip(sample.parser), name=sample.name)
