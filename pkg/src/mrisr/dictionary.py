"""Per-class coupled dictionary pairs trained on HR/LR feature patches.

An HR dictionary and an LR-feature dictionary are trained jointly on
stacked, dimension-balanced sample vectors so corresponding atoms share
one sparse code.  Training alternates greedy sparse coding with rank-1
atom updates (K-SVD style); a per-sample guard keeps the mean stacked
reconstruction error non-increasing across iterations.
"""

from __future__ import annotations

import math
import struct
import warnings
import zlib
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .classify import ClassifierConfig, PatchClass, block_origin_for_patch, classify_blocks
from .cs import MeasurementMatrix
from .errors import DegenerateDataError, DictionaryFormatError, InsufficientDataError
from .fileio import atomic_write_bytes
from .image import DegradationModel, bicubic_resample, degrade, modcrop, _freeze
from .patches import axis_origins, patch_matrix

# First-difference and second-difference stencils: the response at a pixel
# is (right - left) and (right2 - 2*center + left2) respectively.
GRAD_H = np.array([[-1.0, 0.0, 1.0]])
GRAD_V = GRAD_H.T
LAP_H = np.array([[1.0, 0.0, -2.0, 0.0, 1.0]])
LAP_V = LAP_H.T

FEATURE_STENCILS = (GRAD_H, GRAD_V, LAP_H, LAP_V)


def feature_dim(patch_size: int, mode: str = "gradient") -> int:
    if mode == "gradient":
        return 4 * patch_size * patch_size
    if mode == "identity":
        return patch_size * patch_size
    raise ValueError(f"unknown feature mode {mode!r}")


def lr_feature_operator(neighborhood: np.ndarray, out_size: int) -> np.ndarray:
    """Concatenated gradient/second-difference responses over a patch.

    ``neighborhood`` is the patch plus a symmetric margin of at least 2
    pixels supplying the stencil context; responses are evaluated on the
    central out_size x out_size window and concatenated row-major.
    """
    neigh = np.asarray(neighborhood, dtype=np.float64)
    if neigh.ndim != 2 or neigh.shape[0] != neigh.shape[1]:
        raise ValueError("neighborhood must be square 2-D")
    margin = (neigh.shape[0] - out_size) // 2
    if margin < 2 or neigh.shape[0] != out_size + 2 * margin:
        raise ValueError(
            f"neighborhood {neigh.shape} too small for a {out_size} patch "
            "(need a symmetric margin >= 2)"
        )
    parts = []
    for stencil in FEATURE_STENCILS:
        resp = ndimage.correlate(neigh, stencil, mode="nearest")
        parts.append(resp[margin : margin + out_size, margin : margin + out_size].ravel())
    return np.concatenate(parts)


class FeatureBank:
    """Filter responses of a whole image, gatherable per patch origin.

    In ``gradient`` mode the four stencil responses are precomputed with
    replicate borders; ``identity`` mode returns mean-removed raw patches.
    """

    def __init__(self, data: np.ndarray, mode: str = "gradient"):
        if mode not in ("gradient", "identity"):
            raise ValueError(f"unknown feature mode {mode!r}")
        self.mode = mode
        self.data = np.asarray(data, dtype=np.float64)
        if mode == "gradient":
            self.maps = [
                ndimage.correlate(self.data, st, mode="nearest")
                for st in FEATURE_STENCILS
            ]
        else:
            self.maps = None

    def patch_features(self, origins: np.ndarray, size: int) -> np.ndarray:
        """(N, feature_dim) features for patches at ``origins``."""
        origins = np.asarray(origins, dtype=np.int64).reshape(-1, 2)
        if self.mode == "identity":
            raw = patch_matrix(self.data, origins, size)
            return raw - raw.mean(axis=1, keepdims=True)
        return np.hstack([patch_matrix(m, origins, size) for m in self.maps])

    def patch_feature(self, origin: tuple, size: int) -> np.ndarray:
        return self.patch_features(np.array([origin]), size)[0]


def standalone_patch_feature(values: np.ndarray, mode: str = "gradient") -> np.ndarray:
    """Feature of an isolated patch, replicate-padding its own values."""
    values = np.asarray(values, dtype=np.float64)
    if mode == "identity":
        return (values - values.mean()).ravel()
    padded = np.pad(values, 2, mode="edge")
    return lr_feature_operator(padded, values.shape[0])


@dataclass(frozen=True, eq=False)
class TrainingPair:
    """Mean-removed HR patch vector coupled with its LR feature vector."""

    hr_vector: np.ndarray
    lr_feature: np.ndarray
    patch_class: PatchClass

    def __post_init__(self):
        object.__setattr__(self, "hr_vector", _freeze(np.asarray(self.hr_vector)))
        object.__setattr__(self, "lr_feature", _freeze(np.asarray(self.lr_feature)))


@dataclass(frozen=True)
class TrainingMeta:
    sample_count: int = 0
    iterations: int = 0
    seed: int = 0
    initial_error: float = 0.0
    final_error: float = 0.0


_CLASS_CODES = {PatchClass.SMOOTH: 0, PatchClass.TEXTURE: 1, PatchClass.EDGE: 2}
_CODE_CLASSES = {v: k for k, v in _CLASS_CODES.items()}

_MAGIC = b"CSSRDICT"
_VERSION = 1
_HEADER = struct.Struct("<IBBHIIIQ")  # version, class, scale, patch, K, hrDim, lrDim, seed


@dataclass(frozen=True, eq=False)
class DictionaryPair:
    """Coupled (HR, LR-feature) atom matrices for one patch class.

    Equality compares exactly the fields covered by the file format, so a
    save/load round-trip compares equal even though per-run training
    metadata is not persisted.
    """

    patch_class: PatchClass
    dh: np.ndarray
    dl: np.ndarray
    patch_size: int
    scale: int
    seed: int
    meta: TrainingMeta = field(default_factory=TrainingMeta)

    def __post_init__(self):
        dh = np.asarray(self.dh, dtype=np.float64)
        dl = np.asarray(self.dl, dtype=np.float64)
        if dh.ndim != 2 or dl.ndim != 2 or dh.shape[1] != dl.shape[1]:
            raise ValueError("dh and dl must be 2-D with matching atom counts")
        if dh.shape[1] < dh.shape[0]:
            warnings.warn(
                f"dictionary has {dh.shape[1]} atoms for dimension {dh.shape[0]}; "
                "not overcomplete",
                stacklevel=2,
            )
        object.__setattr__(self, "dh", _freeze(dh))
        object.__setattr__(self, "dl", _freeze(dl))

    @property
    def k(self) -> int:
        return self.dh.shape[1]

    @property
    def hr_dim(self) -> int:
        return self.dh.shape[0]

    @property
    def lr_dim(self) -> int:
        return self.dl.shape[0]

    def stacked(self) -> np.ndarray:
        """Dimension-balanced stacked dictionary with unit-norm columns."""
        return np.vstack(
            [self.dh / math.sqrt(self.hr_dim), self.dl / math.sqrt(self.lr_dim)]
        )

    def __eq__(self, other):
        if not isinstance(other, DictionaryPair):
            return NotImplemented
        return (
            self.patch_class == other.patch_class
            and self.patch_size == other.patch_size
            and self.scale == other.scale
            and self.seed == other.seed
            and self.dh.shape == other.dh.shape
            and self.dl.shape == other.dl.shape
            and np.array_equal(self.dh, other.dh)
            and np.array_equal(self.dl, other.dl)
        )


def save_dictionary(pair: DictionaryPair, path) -> None:
    header = _HEADER.pack(
        _VERSION,
        _CLASS_CODES[pair.patch_class],
        pair.scale,
        pair.patch_size,
        pair.k,
        pair.hr_dim,
        pair.lr_dim,
        pair.seed,
    )
    payload = header + pair.dh.astype("<f8").tobytes() + pair.dl.astype("<f8").tobytes()
    crc = struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF)
    atomic_write_bytes(path, _MAGIC + payload + crc)


def load_dictionary(path) -> DictionaryPair:
    from pathlib import Path

    blob = Path(path).read_bytes()
    if len(blob) < len(_MAGIC) + _HEADER.size + 4:
        raise DictionaryFormatError("file too short for a dictionary header")
    if blob[: len(_MAGIC)] != _MAGIC:
        raise DictionaryFormatError(f"bad magic {blob[:8]!r}")
    payload = blob[len(_MAGIC) : -4]
    (crc_stored,) = struct.unpack("<I", blob[-4:])
    if zlib.crc32(payload) & 0xFFFFFFFF != crc_stored:
        raise DictionaryFormatError("payload CRC mismatch")
    version, cls_code, scale, patch_size, k, hr_dim, lr_dim, seed = _HEADER.unpack(
        payload[: _HEADER.size]
    )
    if version != _VERSION:
        raise DictionaryFormatError(f"unsupported version {version}")
    if cls_code not in _CODE_CLASSES:
        raise DictionaryFormatError(f"unknown class code {cls_code}")
    body = payload[_HEADER.size :]
    expected = 8 * k * (hr_dim + lr_dim)
    if len(body) != expected:
        raise DictionaryFormatError(
            f"matrix payload is {len(body)} bytes, expected {expected}"
        )
    dh = np.frombuffer(body[: 8 * hr_dim * k], dtype="<f8").reshape(hr_dim, k)
    dl = np.frombuffer(body[8 * hr_dim * k :], dtype="<f8").reshape(lr_dim, k)
    return DictionaryPair(_CODE_CLASSES[cls_code], dh, dl, patch_size, scale, seed)


def build_training_set(
    hr_images,
    model: DegradationModel,
    cfg: ClassifierConfig,
    phi: MeasurementMatrix,
    patch_size: int = 5,
    per_class_cap: int = 20000,
    stride: int = 1,
    seed: int = 0,
    feature_mode: str = "gradient",
    min_per_class: int = 1,
) -> dict:
    """Degrade, upsample back, and bucket coupled patches by class.

    For each HR image the LR observation is produced by ``model`` and
    bicubic-upsampled back to the HR grid; co-located HR patches (mean
    removed) and LR feature patches are then classified on that upsampled
    grid and bucketed.  Buckets are capped to ``per_class_cap`` by seeded
    uniform subsampling.  A bucket smaller than ``min_per_class`` raises
    :class:`InsufficientDataError` naming the class.
    """
    if not hr_images:
        raise ValueError("need at least one training image")
    buckets = {pc: {"hr": [], "lr": []} for pc in PatchClass}
    for img in hr_images:
        if min(img.shape) <= patch_size * model.scale:
            raise ValueError(
                f"training image {img.shape} not larger than patch*scale "
                f"({patch_size * model.scale})"
            )
        hr = modcrop(img, model.scale)
        lr = degrade(hr, model)
        mid = bicubic_resample(lr, model.scale)
        rows = axis_origins(hr.height, patch_size, stride)
        cols = axis_origins(hr.width, patch_size, stride)
        origins = np.array([(r, c) for r in rows for c in cols], dtype=np.int64)

        hr_patches = patch_matrix(hr.data, origins, patch_size)
        hr_patches = hr_patches - hr_patches.mean(axis=1, keepdims=True)
        feats = FeatureBank(mid.data, feature_mode).patch_features(origins, patch_size)

        block_origins = np.array(
            [
                block_origin_for_patch((r, c), patch_size, cfg.block_size, mid.shape)
                for r, c in origins
            ],
            dtype=np.int64,
        )
        blocks = patch_matrix(mid.data, block_origins, cfg.block_size)
        classes = classify_blocks(blocks, cfg, phi)

        for pc in PatchClass:
            mask = classes == pc.value
            if mask.any():
                buckets[pc]["hr"].append(hr_patches[mask])
                buckets[pc]["lr"].append(feats[mask])

    rng = np.random.default_rng(seed)
    out = {}
    for pc in PatchClass:
        hr_rows = np.vstack(buckets[pc]["hr"]) if buckets[pc]["hr"] else np.empty((0, patch_size**2))
        lr_rows = np.vstack(buckets[pc]["lr"]) if buckets[pc]["lr"] else np.empty((0, 0))
        count = hr_rows.shape[0]
        if count < min_per_class:
            raise InsufficientDataError(pc, count, min_per_class)
        if count > per_class_cap:
            keep = np.sort(rng.choice(count, size=per_class_cap, replace=False))
            hr_rows = hr_rows[keep]
            lr_rows = lr_rows[keep]
        out[pc] = [
            TrainingPair(hr_rows[i], lr_rows[i], pc) for i in range(hr_rows.shape[0])
        ]
    return out


def _omp_code_matrix(D: np.ndarray, V: np.ndarray, sparsity: int, tol: float = 1e-12):
    """Greedy coding of every column of V against D; returns (K, N) codes.

    Same selection rule as :func:`mrisr.cs.omp_solve`, batched over samples
    with per-sample least-squares refits on the grown supports.
    """
    d, n_samples = V.shape
    k = D.shape[1]
    X = np.zeros((k, n_samples))
    supports = [[] for _ in range(n_samples)]
    active = np.linalg.norm(V, axis=0) > tol
    residual = V.copy()
    residual[:, ~active] = 0.0
    for _ in range(sparsity):
        if not active.any():
            break
        corr = D.T @ residual
        best = np.argmax(np.abs(corr), axis=0)
        for i in np.flatnonzero(active):
            j = int(best[i])
            if abs(corr[j, i]) <= 1e-14 or j in supports[i]:
                active[i] = False
                continue
            supports[i].append(j)
            sub = D[:, supports[i]]
            sol, _, rank, _ = np.linalg.lstsq(sub, V[:, i], rcond=None)
            X[:, i] = 0.0
            X[supports[i], i] = sol
            residual[:, i] = V[:, i] - sub @ sol
            if np.linalg.norm(residual[:, i]) <= tol:
                active[i] = False
    return X


def train_dictionary_pair(
    pairs,
    k: int,
    sparsity: int = 3,
    iterations: int = 20,
    seed: int = 0,
    scale: int = 2,
) -> DictionaryPair:
    """Jointly train (Dh, Dl) on stacked, dimension-balanced sample vectors.

    Atoms are initialized as K seeded distinct training vectors, then the
    training loop alternates (a) greedy sparse coding of all samples and
    (b) rank-1 SVD updates of each atom's residual matrix, replacing
    never-used atoms with the worst-represented sample.  Freshly coded
    samples whose fit would regress keep their previous codes, so the mean
    stacked reconstruction error never increases across iterations.
    """
    pairs = list(pairs)
    if not pairs:
        raise InsufficientDataError(PatchClass.SMOOTH, 0, k)
    patch_class = pairs[0].patch_class
    if any(p.patch_class != patch_class for p in pairs):
        raise ValueError("all training pairs must share one class")
    if len(pairs) < k:
        raise InsufficientDataError(patch_class, len(pairs), k)

    hr_dim = pairs[0].hr_vector.shape[0]
    lr_dim = pairs[0].lr_feature.shape[0]
    patch_size = int(round(math.sqrt(hr_dim)))
    V = np.vstack(
        [
            np.stack([p.hr_vector for p in pairs], axis=1) / math.sqrt(hr_dim),
            np.stack([p.lr_feature for p in pairs], axis=1) / math.sqrt(lr_dim),
        ]
    )
    n_samples = V.shape[1]
    sample_norms = np.linalg.norm(V, axis=0)
    usable = np.flatnonzero(sample_norms > 1e-12)
    if usable.size < k:
        raise DegenerateDataError(
            f"only {usable.size} nonzero training vectors for {k} atoms"
        )

    rng = np.random.default_rng(seed)
    init_idx = usable[rng.choice(usable.size, size=k, replace=False)]
    D = V[:, init_idx] / sample_norms[init_idx]

    def finish(D, meta_iters, init_err, final_err):
        dh = D[:hr_dim] * math.sqrt(hr_dim)
        dl = D[hr_dim:] * math.sqrt(lr_dim)
        meta = TrainingMeta(n_samples, meta_iters, seed, init_err, final_err)
        return DictionaryPair(patch_class, dh, dl, patch_size, scale, seed, meta)

    if iterations == 0:
        return finish(D, 0, 0.0, 0.0)

    X = _omp_code_matrix(D, V, sparsity)
    err = np.sum((V - D @ X) ** 2, axis=0)
    initial_obj = float(err.mean())
    prev_obj = initial_obj

    for _ in range(iterations):
        # (b) rank-1 atom updates on the residual of each atom's users.
        R = V - D @ X
        for j in range(k):
            users = np.flatnonzero(X[j])
            if users.size == 0:
                continue
            E = R[:, users] + np.outer(D[:, j], X[j, users])
            u, svals, vt = np.linalg.svd(E, full_matrices=False)
            atom = u[:, 0]
            sign = 1.0 if atom[np.argmax(np.abs(atom))] >= 0 else -1.0
            atom = sign * atom
            coeffs = sign * svals[0] * vt[0]
            D[:, j] = atom
            X[j, users] = coeffs
            R[:, users] = E - np.outer(atom, coeffs)
        # Replace never-used atoms with the worst-represented samples.
        unused = np.flatnonzero(np.all(X == 0.0, axis=1))
        if unused.size:
            res_norms = np.sum(R * R, axis=0)
            worst = np.argsort(-res_norms)
            taken = 0
            for j in unused:
                while taken < n_samples and sample_norms[worst[taken]] <= 1e-12:
                    taken += 1
                if taken >= n_samples:
                    break
                idx = worst[taken]
                D[:, j] = V[:, idx] / sample_norms[idx]
                taken += 1

        # (a) re-code, keeping old codes where the fresh fit is worse.
        X_new = _omp_code_matrix(D, V, sparsity)
        err_new = np.sum((V - D @ X_new) ** 2, axis=0)
        err_old = np.sum((V - D @ X) ** 2, axis=0)
        keep_old = err_old < err_new
        X_new[:, keep_old] = X[:, keep_old]
        X = X_new
        obj = float(np.minimum(err_new, err_old).mean())
        if obj > prev_obj + 1e-9:
            raise RuntimeError(
                f"training objective increased: {prev_obj} -> {obj}"
            )
        prev_obj = obj

    return finish(D, iterations, initial_obj, prev_obj)
