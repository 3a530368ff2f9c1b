"""Synthetic paired two-domain long-tailed data, curation and weighted sampling.

Each class owns a prototype grid. An *object* is the prototype plus a small
object-level perturbation, shown at a random dihedral pose (overhead views have
no preferred heading); both views of a pair are rendered from the same object:

* domain A (EO-like): ``object + sigma_eo * gaussian``
* domain B (SAR-like): ``(R @ object) * speckle``, where ``R`` is a fixed
  invertible pixel permutation followed by a blur, and ``speckle`` is unit-mean
  gamma noise with ``speckle_looks`` looks.

Everything is reproducible from the data seed; per-pair noise comes from an
RNG stream keyed by ``(seed, pair_id)`` so generation order does not matter.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace

import numpy as np

# Table 1 training counts of the aerial-view challenge, in class order.
TABLE1_COUNTS = (234209, 28089, 15301, 10655, 1741, 852, 828, 624, 840, 633)
CLASS_NAMES = ("sedan", "suv", "pickup truck", "van", "box truck", "motorcycle",
               "flatbed truck", "bus", "pickup truck with trailer",
               "flatbed truck with trailer")
HEAD_CLASSES = (0, 1, 2, 3)
AUGMENT_OPS = ("rot90", "rot180", "rot270", "hflip", "vflip")


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class ClassProfile:
    proportions: tuple = tuple(c / sum(TABLE1_COUNTS) for c in TABLE1_COUNTS)
    total: int = 2938
    names: tuple = CLASS_NAMES

    def __post_init__(self):
        p = np.asarray(self.proportions, dtype=float)
        if abs(p.sum() - 1.0) > 1e-3:
            raise DataError(f"class proportions sum to {p.sum():.6f}, expected 1")
        if np.any(p <= 0):
            raise DataError("class proportions must be positive")
        if len(self.names) != len(p):
            raise DataError("one name per class required")

    @property
    def n_classes(self) -> int:
        return len(self.proportions)

    def counts(self) -> np.ndarray:
        """Round half up, then move the residual onto the largest class."""
        raw = np.asarray(self.proportions, dtype=float) * self.total
        counts = np.floor(raw + 0.5).astype(np.int64)
        for j, c in enumerate(counts):
            if c < 1:
                raise DataError(
                    f"total={self.total} leaves class {j} ({self.names[j]}, proportion "
                    f"{self.proportions[j]:.5f}) with no samples; increase the total")
        counts[int(np.argmax(raw))] += self.total - counts.sum()
        return counts


@dataclass(frozen=True)
class ShiftParams:
    grid: int = 8
    prototype_amplitude: float = 0.5
    sigma_object: float = 0.3
    sigma_eo: float = 0.3
    speckle_looks: float = 4.0
    blur: float = 0.3
    permutation: str = "roll"   # "roll": one-pixel misregistration; "random": arbitrary
    random_pose: bool = True    # render each object at a uniform dihedral orientation

    def __post_init__(self):
        if self.grid < 2:
            raise DataError("grid must be >= 2")
        if not 0 <= self.blur < 0.5:
            raise DataError("blur must lie in [0, 0.5) to keep the distortion invertible")
        if self.speckle_looks <= 0 or self.sigma_eo < 0 or self.sigma_object < 0:
            raise DataError("noise parameters must be non-negative (looks > 0)")
        if self.permutation not in ("roll", "random"):
            raise DataError(f"permutation must be 'roll' or 'random', got {self.permutation!r}")

    @property
    def dim(self) -> int:
        return self.grid * self.grid


@dataclass
class LabeledSplit:
    eo: np.ndarray          # [n x d]
    sar: np.ndarray         # [n x d]
    labels: np.ndarray      # [n]
    pair_ids: np.ndarray    # [n]
    ops: tuple | None = None  # augmentation op per member after curation

    def __len__(self):
        return len(self.labels)

    def subset(self, idx) -> "LabeledSplit":
        idx = np.asarray(idx)
        ops = tuple(self.ops[i] for i in idx) if self.ops is not None else None
        return LabeledSplit(self.eo[idx], self.sar[idx], self.labels[idx], self.pair_ids[idx], ops)

    def class_counts(self, k: int) -> np.ndarray:
        return np.bincount(self.labels, minlength=k)


@dataclass
class UnlabeledPool:
    """Paired inputs with no label field; the training path only ever sees this."""
    eo: np.ndarray
    sar: np.ndarray
    pair_ids: np.ndarray

    def __len__(self):
        return len(self.pair_ids)


@dataclass
class GeneratorLedger:
    """Everything needed to re-derive each sample from its object realization."""
    prototypes: np.ndarray     # [k x d]
    distortion: np.ndarray     # R, [d x d]
    labels: np.ndarray         # class of every pair id
    objects: np.ndarray        # [N x d]
    eo_noise: np.ndarray       # additive, [N x d]
    speckle: np.ndarray        # multiplicative, [N x d]
    poses: np.ndarray          # dihedral pose index per pair, see :func:`dihedral`


@dataclass
class DatasetBundle:
    train: LabeledSplit
    unlabeled: UnlabeledPool
    val: LabeledSplit
    test: LabeledSplit
    profile: ClassProfile
    shift: ShiftParams
    seed: int
    split_sizes: dict = field(default_factory=dict)
    withheld_labels: np.ndarray | None = None   # unlabeled-pool labels, never used in training
    ledger: GeneratorLedger | None = None

    @property
    def n_classes(self) -> int:
        return self.profile.n_classes

    @property
    def dim(self) -> int:
        return int(self.train.eo.shape[1])


def _smooth(x: np.ndarray) -> np.ndarray:
    """3x3 box average with wrap-around."""
    acc = np.zeros_like(x)
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            acc += np.roll(np.roll(x, dy, axis=-2), dx, axis=-1)
    return acc / 9.0


def distortion_matrix(grid: int, blur: float, rng, permutation: str = "roll") -> np.ndarray:
    """Fixed pixel permutation followed by ``(1-blur) I + blur * (4-neighbour mean)``.

    ``permutation="roll"`` shifts the grid cyclically by one pixel along both
    axes (sensor misregistration); ``"random"`` draws an arbitrary permutation.
    The blur operator has eigenvalues in ``[1 - 2*blur, 1]`` so it is invertible
    for ``blur < 0.5``.
    """
    d = grid * grid
    if permutation == "random":
        order = rng.permutation(d)
    else:
        order = np.roll(np.arange(d).reshape(grid, grid), (1, 1), axis=(0, 1)).reshape(-1)
    perm = np.eye(d)[order]
    neigh = np.zeros((d, d))
    for r in range(grid):
        for c in range(grid):
            i = r * grid + c
            for rr, cc in ((r - 1, c), (r + 1, c), (r, c - 1), (r, c + 1)):
                neigh[i, (rr % grid) * grid + cc % grid] += 0.25
    return ((1 - blur) * np.eye(d) + blur * neigh) @ perm


def make_prototypes(k: int, shift: ShiftParams, rng) -> np.ndarray:
    g = shift.grid
    patterns = _smooth(rng.standard_normal((k, g, g)))
    patterns /= patterns.std(axis=(1, 2), keepdims=True)
    protos = 1.0 + shift.prototype_amplitude * patterns
    return np.clip(protos, 0.05, None).reshape(k, g * g)


def dihedral(grid: np.ndarray, pose: int) -> np.ndarray:
    """Element ``pose`` (0..7) of the square's symmetry group: ``pose % 4``
    quarter turns, then a transpose when ``pose >= 4``."""
    out = np.rot90(grid, k=pose % 4)
    return (out.T if pose >= 4 else out).copy()


def _render(pair_id, label, seed, shift, prototypes, distortion):
    rng = np.random.default_rng([seed, 7, int(pair_id)])
    d, g = shift.dim, shift.grid
    obj = prototypes[label] + shift.sigma_object * rng.standard_normal(d)
    eo_noise = rng.standard_normal(d)
    speckle = rng.gamma(shift.speckle_looks, 1.0 / shift.speckle_looks, size=d)
    pose = int(rng.integers(8)) if shift.random_pose else 0
    obj = dihedral(obj.reshape(g, g), pose).reshape(d)
    eo = obj + shift.sigma_eo * eo_noise
    sar = (distortion @ obj) * speckle
    return obj, eo_noise, speckle, pose, eo, sar


def _uniform_labels(k, per_class):
    return np.repeat(np.arange(k), per_class)


def generate(profile: ClassProfile = ClassProfile(), shift: ShiftParams = ShiftParams(),
             seed: int = 0, val_per_class: int = 50, test_per_class: int = 50,
             unlabeled_per_class: int = 400) -> DatasetBundle:
    """Build a paired long-tailed training set plus uniform unlabeled/val/test splits.

    Pair ids run train, unlabeled, val, test in that order.
    """
    if min(val_per_class, test_per_class) < 1 or unlabeled_per_class < 0:
        raise DataError("split sizes must be positive")
    k = profile.n_classes
    counts = profile.counts()
    global_rng = np.random.default_rng([seed, 0])
    prototypes = make_prototypes(k, shift, global_rng)
    distortion = distortion_matrix(shift.grid, shift.blur, global_rng, shift.permutation)

    train_labels = np.repeat(np.arange(k), counts)
    split_labels = [train_labels, _uniform_labels(k, unlabeled_per_class),
                    _uniform_labels(k, val_per_class), _uniform_labels(k, test_per_class)]
    labels = np.concatenate(split_labels)
    rendered = [_render(pid, y, seed, shift, prototypes, distortion) for pid, y in enumerate(labels)]
    objects, eo_noise, speckle, poses, eo, sar = (np.stack(col) for col in zip(*rendered))
    eo, sar = eo.astype(np.float32), sar.astype(np.float32)

    bounds = np.cumsum([0] + [len(s) for s in split_labels])
    sl = [slice(bounds[i], bounds[i + 1]) for i in range(4)]
    ids = np.arange(len(labels), dtype=np.int64)
    mk = lambda s: LabeledSplit(eo[s], sar[s], labels[s].astype(np.int64), ids[s])
    ledger = GeneratorLedger(prototypes, distortion, labels, objects, eo_noise, speckle, poses)
    return DatasetBundle(
        train=mk(sl[0]),
        unlabeled=UnlabeledPool(eo[sl[1]], sar[sl[1]], ids[sl[1]]),
        val=mk(sl[2]), test=mk(sl[3]), profile=profile, shift=shift, seed=seed,
        split_sizes={"val_per_class": val_per_class, "test_per_class": test_per_class,
                     "unlabeled_per_class": unlabeled_per_class},
        withheld_labels=labels[sl[1]].astype(np.int64), ledger=ledger)


def evaluation_pool(bundle: DatasetBundle) -> UnlabeledPool:
    """Validation and test inputs pooled with their labels stripped."""
    parts = (bundle.val, bundle.test)
    return UnlabeledPool(np.concatenate([p.eo for p in parts]),
                         np.concatenate([p.sar for p in parts]),
                         np.concatenate([p.pair_ids for p in parts]))


def augment(grid: np.ndarray, op: str | None = None, seed: int | None = None) -> np.ndarray:
    """Exact dihedral transform of a square grid; ``op=None`` picks one at random."""
    grid = np.asarray(grid)
    if grid.ndim != 2 or grid.shape[0] != grid.shape[1]:
        raise DataError(f"augment needs a square 2-D grid, got shape {grid.shape}")
    if op is None:
        op = AUGMENT_OPS[np.random.default_rng(seed).integers(len(AUGMENT_OPS))]
    if op == "identity":
        return grid.copy()
    if op.startswith("rot"):
        return np.rot90(grid, k=int(op[3:]) // 90).copy()
    if op == "hflip":
        return grid[:, ::-1].copy()
    if op == "vflip":
        return grid[::-1, :].copy()
    raise DataError(f"unknown augmentation op {op!r}")


def augment_flat(x: np.ndarray, op: str) -> np.ndarray:
    g = math.isqrt(x.shape[-1])
    if g * g != x.shape[-1]:
        raise DataError(f"vector of length {x.shape[-1]} is not a square grid")
    return augment(x.reshape(g, g), op).reshape(-1)


def curate(bundle: DatasetBundle, head_target: int = 700, tail_target: int = 550,
           head_classes=HEAD_CLASSES, seed: int = 0) -> DatasetBundle:
    """Resize every class of the training split to a fixed count.

    Classes above their target are subsampled without replacement; classes
    below it keep all members and gain augmented copies of random members
    (both views of a pair get the same op, so pairing is kept).
    """
    if head_target < 1 or tail_target < 1:
        raise DataError("curation targets must be >= 1")
    train = bundle.train
    k = bundle.n_classes
    rng = np.random.default_rng([seed, 11])
    ops0 = train.ops or ("identity",) * len(train)
    parts = []
    for j in range(k):
        members = np.flatnonzero(train.labels == j)
        if members.size == 0:
            raise DataError(f"class {j} has no training members to curate")
        target = head_target if j in head_classes else tail_target
        if members.size >= target:
            keep = np.sort(rng.choice(members, size=target, replace=False))
            parts.append((train.eo[keep], train.sar[keep], train.labels[keep],
                          train.pair_ids[keep], [ops0[i] for i in keep]))
            continue
        extra = target - members.size
        src = rng.choice(members, size=extra, replace=True)
        ops = rng.integers(len(AUGMENT_OPS), size=extra)
        eo_new = np.stack([augment_flat(train.eo[i], AUGMENT_OPS[o]) for i, o in zip(src, ops)])
        sar_new = np.stack([augment_flat(train.sar[i], AUGMENT_OPS[o]) for i, o in zip(src, ops)])
        if any(ops0[i] != "identity" for i in src):
            raise DataError("curate expects an un-augmented training split")
        parts.append((np.concatenate([train.eo[members], eo_new]),
                      np.concatenate([train.sar[members], sar_new]),
                      np.full(target, j, dtype=np.int64),
                      np.concatenate([train.pair_ids[members], train.pair_ids[src]]),
                      [ops0[i] for i in members] + [AUGMENT_OPS[o] for o in ops]))
    eo, sar, labels, pids, ops = zip(*parts)
    curated = LabeledSplit(np.concatenate(eo).astype(np.float32),
                           np.concatenate(sar).astype(np.float32),
                           np.concatenate(labels), np.concatenate(pids),
                           tuple(itertools.chain.from_iterable(ops)))
    return replace(bundle, train=curated)


@dataclass(frozen=True)
class SamplerWeights:
    """Per-item pick weight ``1/n_i`` for a member of class ``i``, normalized so
    all items sum to one; ``class_mass`` is the resulting per-class probability."""
    item_weight: np.ndarray
    class_mass: np.ndarray


def sampler_weights(counts) -> SamplerWeights:
    counts = np.asarray(counts, dtype=np.int64)
    if np.any(counts < 1):
        raise DataError("every class needs at least one member for the weighted sampler")
    item = 1.0 / counts
    mass = item * counts
    z = mass.sum()
    return SamplerWeights(item / z, mass / z)


def weighted_sample_stream(counts, seed: int = 0, chunk: int = 1024):
    """Infinite stream of ``(class, index_within_class)`` draws, with replacement,
    where each item of class ``i`` is picked with weight ``1/n_i``."""
    counts = np.asarray(counts, dtype=np.int64)
    mass = sampler_weights(counts).class_mass
    rng = np.random.default_rng([seed, 13])
    while True:
        classes = rng.choice(len(counts), size=chunk, p=mass)
        members = np.floor(rng.random(chunk) * counts[classes]).astype(np.int64)
        yield from zip(classes.tolist(), members.tolist())


@dataclass
class Batch:
    labeled: LabeledSplit
    unlabeled_eo: np.ndarray | None
    unlabeled_sar: np.ndarray | None


def epoch_length(n_labeled: int, batch_size: int) -> int:
    return -(-n_labeled // batch_size)


def batches(bundle: DatasetBundle, batch_size: int = 64, weighted: bool = True,
            seed: int = 0, use_unlabeled: bool = True):
    """Infinite generator of :class:`Batch`.

    Labeled pairs come from the ``1/n_i`` sampler (or uniformly with
    replacement when ``weighted`` is false) with both views of each pair kept
    together; unlabeled EO and SAR batches are drawn independently and
    uniformly with replacement from the unlabeled pool.
    """
    if batch_size < 1:
        raise DataError("batch size must be >= 1")
    train = bundle.train
    if len(train) == 0:
        raise DataError("empty labeled pool")
    if use_unlabeled and len(bundle.unlabeled) == 0:
        raise DataError("empty unlabeled pool")
    rng = np.random.default_rng([seed, 17])
    by_class = [np.flatnonzero(train.labels == j) for j in range(bundle.n_classes)]
    present = [j for j, m in enumerate(by_class) if m.size]
    stream = weighted_sample_stream([by_class[j].size for j in present], seed) if weighted else None
    n_unl = len(bundle.unlabeled)
    while True:
        if weighted:
            draws = list(itertools.islice(stream, batch_size))
            idx = np.array([by_class[present[c]][m] for c, m in draws])
        else:
            idx = rng.integers(len(train), size=batch_size)
        if use_unlabeled:
            ue = bundle.unlabeled.eo[rng.integers(n_unl, size=batch_size)]
            us = bundle.unlabeled.sar[rng.integers(n_unl, size=batch_size)]
        else:
            ue = us = None
        yield Batch(train.subset(idx), ue, us)
