"""Synthetic forensic world: toy images, planted artifacts, expert detectors,
multi-view evidence, gold Chain-of-Evidence traces and feature vectors.

Everything here is a pure function of its arguments. Per-instance seeds are
derived from the master seed with ``numpy.random.SeedSequence`` spawn keys,
so instances can be generated independently and in any order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Sequence

import numpy as np

from .vocab import Token, is_well_formed, extract_answer

GRID = 16
PATCH = 8
N_KINDS = 8
N_VIEWS = 3
N_FEATURES = N_KINDS + 3 * N_VIEWS + 1

#: additive template amplitude at strength 1.0
TEMPLATE_AMPLITUDE = 0.55
BASE_RANGE = (0.4, 0.6)
SENSOR_NOISE = 0.02
#: detector score = clip((strength_estimate - offset) / scale, 0, 1)
SCORE_OFFSET = 0.12
SCORE_SCALE = 0.25
DETECTION_THRESHOLD = 0.5

MIN_STRENGTH, MAX_STRENGTH = 0.3, 1.0
#: (lo, hi) strength range per stratum, highest first
STRENGTH_STRATA = ((0.7, 1.0), (0.5, 0.7), (0.3, 0.5))


class ArtifactKind(IntEnum):
    CHECKER = 0
    HF_SPIKE = 1
    RINGING = 2
    TEX_REPEAT = 3
    FLAT_PATCH = 4
    NOISE_DEFICIT = 5
    EDGE_HALO = 6
    SAT_CLIP = 7

    @property
    def token(self) -> Token:
        return Token[self.name]


class View(IntEnum):
    SPECTRAL = 0
    HIGHPASS = 1
    PATCHES = 2


VISIBILITY = {
    View.SPECTRAL: frozenset({ArtifactKind.CHECKER, ArtifactKind.HF_SPIKE, ArtifactKind.TEX_REPEAT}),
    View.HIGHPASS: frozenset({ArtifactKind.RINGING, ArtifactKind.EDGE_HALO, ArtifactKind.NOISE_DEFICIT}),
    # every planted kind also shows up in the patch view
    View.PATCHES: frozenset(ArtifactKind),
}


def _raw_patterns() -> list[np.ndarray]:
    i, j = np.meshgrid(np.arange(PATCH), np.arange(PATCH), indexing="ij")
    r = np.hypot(i - 3.5, j - 3.5)
    edge = np.select([j == 2, j == 3, j == 4, j == 5], [-0.5, 1.0, -1.0, 0.5], 0.0)
    return [
        (-1.0) ** (i + j),
        np.cos(np.pi * j / 2),
        np.cos(1.6 * r),
        np.cos(np.pi * i / 2) * np.sign(np.cos(np.pi * j / 4 + 0.3)),
        ((abs(i - 3.5) < 2) & (abs(j - 3.5) < 2)).astype(float),
        np.random.default_rng(12345).choice([-1.0, 1.0], (PATCH, PATCH)),
        edge,
        ((i % 4 < 2) & (j % 4 < 2)).astype(float),
    ]


def _build_templates() -> np.ndarray:
    # Gram-Schmidt against low-order polynomials (smooth base fields) and
    # against every earlier template, so the matched filters do not see the
    # background or each other.
    i, j = np.meshgrid(np.arange(PATCH), np.arange(PATCH), indexing="ij")
    x, y = (i - 3.5) / 3.5, (j - 3.5) / 3.5
    done: list[np.ndarray] = []
    for v in [np.ones_like(x), x, y, x * y, x * x, y * y]:
        v = v.copy()
        for b in done:
            v -= (v * b).sum() / (b * b).sum() * b
        done.append(v)
    out = []
    for v in _raw_patterns():
        v = v.astype(float).copy()
        for b in done:
            v -= (v * b).sum() / (b * b).sum() * b
        done.append(v)
        out.append(v / np.abs(v).max())
    return np.stack(out)


TEMPLATES = _build_templates()
TEMPLATES.setflags(write=False)


@dataclass(frozen=True)
class Artifact:
    kind: ArtifactKind
    strength: float
    region: int  # quadrant index 0..3, row-major


@dataclass(frozen=True)
class GroundTruth:
    label: str
    artifacts: tuple[Artifact, ...] = ()

    def __post_init__(self):
        if self.label not in ("REAL", "FAKE"):
            raise ValueError(f"label must be REAL or FAKE, got {self.label!r}")
        if self.label == "REAL" and self.artifacts:
            raise ValueError("REAL ground truth cannot carry artifacts")
        if self.label == "FAKE" and not 1 <= len(self.artifacts) <= 3:
            raise ValueError("FAKE ground truth needs 1-3 artifacts")
        kinds = [a.kind for a in self.artifacts]
        if len(set(kinds)) != len(kinds):
            raise ValueError("artifact kinds must be distinct")
        for a in self.artifacts:
            if not MIN_STRENGTH <= a.strength <= MAX_STRENGTH:
                raise ValueError(f"strength {a.strength} outside [0.3, 1.0]")
            if a.region not in range(4):
                raise ValueError(f"region {a.region} is not a quadrant index")

    @property
    def kinds(self) -> frozenset:
        return frozenset(a.kind for a in self.artifacts)


@dataclass(frozen=True)
class ToyImage:
    pixels: np.ndarray
    seed: int


@dataclass(frozen=True)
class EvidenceReport:
    kind: ArtifactKind
    score: float
    mask: np.ndarray


@dataclass(frozen=True)
class MultiViewEvidence:
    grids: tuple[np.ndarray, np.ndarray, np.ndarray]
    visible: tuple[frozenset, frozenset, frozenset]

    def visible_union(self) -> frozenset:
        return self.visible[0] | self.visible[1] | self.visible[2]


@dataclass
class ForensicInstance:
    seed: int
    image: ToyImage
    truth: GroundTruth
    reports: list[EvidenceReport]
    views: MultiViewEvidence
    gold_trace: tuple[Token, ...]
    features: np.ndarray
    stratum: int | None = None

    @property
    def label(self) -> str:
        return self.truth.label


def quadrant_slice(region: int) -> tuple[slice, slice]:
    r, c = divmod(region, 2)
    return slice(r * PATCH, (r + 1) * PATCH), slice(c * PATCH, (c + 1) * PATCH)


def _bilinear_up(coarse: np.ndarray, size: int) -> np.ndarray:
    n = coarse.shape[0]
    u = np.linspace(0.0, n - 1, size)
    rows = np.stack([np.interp(u, np.arange(n), coarse[k]) for k in range(n)])
    return np.stack([np.interp(u, np.arange(n), rows[:, m]) for m in range(size)], axis=1)


def base_field(seed: int) -> np.ndarray:
    """Smooth seeded background: bilinear 4x4 -> 16x16 plus faint sensor noise."""
    rng = np.random.default_rng(seed)
    coarse = rng.uniform(*BASE_RANGE, size=(4, 4))
    return _bilinear_up(coarse, GRID) + rng.normal(0.0, SENSOR_NOISE, size=(GRID, GRID))


def gen_image(seed: int, truth: GroundTruth) -> ToyImage:
    grid = base_field(seed)
    for a in truth.artifacts:
        grid[quadrant_slice(a.region)] += TEMPLATE_AMPLITUDE * a.strength * TEMPLATES[a.kind]
    return ToyImage(np.clip(grid, 0.0, 1.0), seed)


def strength_estimates(kind: ArtifactKind, pixels: np.ndarray) -> np.ndarray:
    """Matched-filter strength estimate for ``kind`` in each of the 4 quadrants."""
    t = TEMPLATES[kind]
    norm = TEMPLATE_AMPLITUDE * float((t * t).sum())
    return np.array([float((pixels[quadrant_slice(q)] * t).sum()) / norm for q in range(4)])


def run_expert(kind: ArtifactKind, image: ToyImage) -> EvidenceReport:
    kind = ArtifactKind(kind)
    est = strength_estimates(kind, image.pixels)
    best = int(np.argmax(est))
    score = min(1.0, max(0.0, (est[best] - SCORE_OFFSET) / SCORE_SCALE))
    mask = np.zeros((GRID, GRID), dtype=bool)
    mask[quadrant_slice(best)] = True
    return EvidenceReport(kind, score, mask)


def run_experts(image: ToyImage) -> list[EvidenceReport]:
    return [run_expert(k, image) for k in ArtifactKind]


def spectral_view(pixels: np.ndarray) -> np.ndarray:
    # log-magnitude of the mean-removed DFT, scaled into [0, 1]
    mag = np.abs(np.fft.fft2(pixels - pixels.mean()))
    return np.log1p(mag) / math.log1p(pixels.size)


def highpass_view(pixels: np.ndarray) -> np.ndarray:
    padded = np.pad(pixels, 1, mode="edge")
    lap = (
        padded[:-2, 1:-1] + padded[2:, 1:-1] + padded[1:-1, :-2] + padded[1:-1, 2:]
        - 4.0 * pixels
    )
    return lap / 8.0


def patch_view(pixels: np.ndarray) -> np.ndarray:
    return np.stack([pixels[quadrant_slice(q)] for q in range(4)])


def make_views(image: ToyImage, truth: GroundTruth) -> MultiViewEvidence:
    px = image.pixels
    grids = (spectral_view(px), highpass_view(px), patch_view(px))
    visible = tuple(VISIBILITY[v] & truth.kinds for v in View)
    return MultiViewEvidence(grids, visible)


def view_summaries(views: MultiViewEvidence) -> np.ndarray:
    """mean, max, energy (mean square) for each view, in view order."""
    out = []
    for g in views.grids:
        out.extend([float(g.mean()), float(g.max()), float((g * g).mean())])
    return np.array(out)


def make_gold_trace(truth: GroundTruth, reports: Sequence[EvidenceReport]) -> tuple[Token, ...]:
    _check_reports(reports)
    found = [r.kind.token for r in reports if r.score > DETECTION_THRESHOLD]
    body: list[Token] = []
    for k, tok in enumerate(found):
        if k:
            body.append(Token.SEP)
        body.append(tok)
    if not body:
        body = [Token.NO_ARTIFACT]
    trace = (
        Token.THINK_OPEN, *body, Token.THINK_CLOSE,
        Token.ANS_OPEN, Token[truth.label], Token.ANS_CLOSE,
    )
    assert is_well_formed(trace) and extract_answer(trace) == truth.label
    return trace


def _check_reports(reports: Sequence[EvidenceReport]) -> None:
    if len(reports) != N_KINDS:
        raise ValueError(f"expected {N_KINDS} reports, got {len(reports)}")
    for k, r in zip(ArtifactKind, reports):
        if r.kind != k:
            raise ValueError(f"reports must be in kind order; position {int(k)} holds {r.kind.name}")


def featurize(reports: Sequence[EvidenceReport], views: MultiViewEvidence) -> np.ndarray:
    _check_reports(reports)
    if len(views.grids) != N_VIEWS:
        raise ValueError(f"expected {N_VIEWS} views")
    scores = np.array([r.score for r in reports])
    return np.concatenate([scores, view_summaries(views), [1.0]])


def build_instance(seed: int, truth: GroundTruth, stratum: int | None = None) -> ForensicInstance:
    image = gen_image(seed, truth)
    return instance_from_image(image, truth, stratum)


def instance_from_image(image: ToyImage, truth: GroundTruth, stratum: int | None = None) -> ForensicInstance:
    """Run the whole evidence pipeline on an (optionally perturbed) image."""
    reports = run_experts(image)
    views = make_views(image, truth)
    return ForensicInstance(
        seed=image.seed,
        image=image,
        truth=truth,
        reports=reports,
        views=views,
        gold_trace=make_gold_trace(truth, reports),
        features=featurize(reports, views),
        stratum=stratum,
    )


@dataclass(frozen=True)
class StratifiedMix:
    high: float = 0.5
    medium: float = 0.3
    low: float = 0.2

    def __post_init__(self):
        fr = (self.high, self.medium, self.low)
        if any(f < 0 for f in fr) or abs(sum(fr) - 1.0) > 1e-9:
            raise ValueError(f"strata fractions must be non-negative and sum to 1, got {fr}")

    def counts(self, n: int) -> list[int]:
        """Largest-remainder allocation of ``n`` items to the three strata."""
        fr = (self.high, self.medium, self.low)
        raw = [f * n for f in fr]
        base = [math.floor(r + 1e-9) for r in raw]
        order = sorted(range(3), key=lambda i: (-(raw[i] - base[i]), i))
        for i in order[: n - sum(base)]:
            base[i] += 1
        return base


def instance_seed(master_seed: int, index: int) -> int:
    """Per-instance seed: 63-bit draw from SeedSequence(master, spawn_key=(index,))."""
    ss = np.random.SeedSequence(master_seed, spawn_key=(index,))
    return int(ss.generate_state(1, dtype=np.uint64)[0]) >> 1


def sample_truth(seed: int, label: str, stratum: int | None) -> GroundTruth:
    if label == "REAL":
        return GroundTruth("REAL")
    # a separate stream from the image so ground truth and pixels stay decoupled
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(1,)))
    n = int(rng.integers(1, 4))
    kinds = sorted(rng.choice(N_KINDS, size=n, replace=False).tolist())
    regions = rng.choice(4, size=n, replace=False).tolist()
    lo, hi = STRENGTH_STRATA[stratum]
    arts = tuple(
        Artifact(ArtifactKind(k), round(float(rng.uniform(lo, hi)), 6), int(q))
        for k, q in zip(kinds, regions)
    )
    return GroundTruth("FAKE", arts)


def dataset_plan(n_real: int, n_fake: int, strata: StratifiedMix) -> list[tuple[str, int | None]]:
    """(label, stratum) per index: reals and fakes interleaved by a fixed rule."""
    fakes: list[int] = []
    for s, c in enumerate(strata.counts(n_fake)):
        fakes.extend([s] * c)
    plan: list[tuple[str, int | None]] = []
    r = f = 0
    while r < n_real or f < n_fake:
        # keep the running label ratio as close to n_real:n_fake as possible
        take_real = f >= n_fake or (r < n_real and r * n_fake <= f * n_real)
        if take_real:
            plan.append(("REAL", None))
            r += 1
        else:
            plan.append(("FAKE", fakes[f]))
            f += 1
    return plan


def gen_dataset(seed: int, n_real: int, n_fake: int, strata: StratifiedMix | None = None,
                offset: int = 0) -> list[ForensicInstance]:
    """Instance ``i`` uses seed ``instance_seed(seed, offset + i)``.

    Fake strata are assigned in stratum order, so the high/medium/low counts
    match ``strata.counts(n_fake)`` exactly.
    """
    strata = strata or StratifiedMix()
    out = []
    for i, (label, stratum) in enumerate(dataset_plan(n_real, n_fake, strata)):
        s = instance_seed(seed, offset + i)
        out.append(build_instance(s, sample_truth(s, label, stratum), stratum))
    return out
