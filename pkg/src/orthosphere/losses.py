"""Loss terms and epoch schedules.

The training objective is a masked cross-entropy over the labeled part of
the batch plus, ramped by w(t), a consistency term between two perturbed
passes, an optional contrastive regularizer over mini-batch pairs
(Euclidean or angular-margin flavor), and the orthogonal-sphere penalty on
block-partitioned latent vectors. Every term is returned separately for
logging; ``total_loss`` assembles them with the documented averaging: the
cross-entropy and OS terms divide by the full batch size, the pair term by
the number of pairs.
"""

import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import ops
from .tensor import Tensor

AUX_KINDS = ("none", "sntg", "amc")

CE_PROB_FLOOR = 1e-12
UNIT_NORM_TOL = 1e-4


@dataclass
class LossWeights:
    lam: float = 1.0            # consistency weight
    lam1: float = 0.0           # auxiliary (pair) weight
    lam2: float = 0.0           # orthogonal-sphere weight
    aux_kind: str = "none"
    m_e: float = 1.0            # Euclidean margin
    m_g: float = 0.5            # angular margin
    s: float = 3.0              # sphere radius
    normalize_latent: bool = True
    k: int = 16                 # latent block count

    def __post_init__(self):
        if min(self.lam, self.lam1, self.lam2) < 0:
            raise ValueError("loss weights must be >= 0")
        if self.aux_kind not in AUX_KINDS:
            raise ValueError(f"aux_kind must be one of {AUX_KINDS}, got {self.aux_kind!r}")
        if not self.m_e > 0:
            raise ValueError("m_e must be > 0")
        if not 0 < self.m_g < math.pi:
            raise ValueError("m_g must be in (0, pi)")
        if not self.s > 0:
            raise ValueError("s must be > 0")
        if self.k < 1:
            raise ValueError("k must be >= 1")


@dataclass
class LatentBlockMatrix:
    """d x k column-block arrangement of a latent vector (block j = column j)."""
    d: int
    k: int
    entries: Tensor  # shape (d, k)


@dataclass
class PairSimilarity:
    i: np.ndarray  # (P,) first member of each pair
    j: np.ndarray  # (P,) second member
    s: np.ndarray  # (P,) 1 if teacher argmax classes agree, else 0

    def __post_init__(self):
        if np.any(self.i == self.j):
            raise ValueError("pairs must have i != j")
        if not np.isin(self.s, (0, 1)).all():
            raise ValueError("similarity values must be 0 or 1")


def cross_entropy_masked(probs, labels, labeled_mask, diag=None):
    """-(1/|B|) * sum over labeled members of log p[true class].

    The divisor is the full batch size, not the labeled count. Probabilities
    below 1e-12 at a labeled true class are clamped; each clamp increments
    diag['ce_clamped'] when a diagnostics dict is supplied.
    """
    labels = np.asarray(labels, dtype=np.int64)
    mask = np.asarray(labeled_mask, dtype=bool)
    n = probs.shape[0]
    safe_labels = np.where(mask, labels, 0)
    picked = probs.select_columns(safe_labels)
    if diag is not None:
        clamped = int(((picked.data < CE_PROB_FLOOR) & mask).sum())
        if clamped:
            diag["ce_clamped"] = diag.get("ce_clamped", 0) + clamped
    logp = picked.clamp_min(CE_PROB_FLOOR).log()
    mask_f = mask.astype(probs.dtype)
    return -(logp * Tensor(mask_f)).sum() * (1.0 / n)


def consistency(student_probs, teacher_probs):
    """Mean over the batch of the squared Euclidean distance between the
    predicted distributions (the divergence d of the consistency term)."""
    if teacher_probs.requires_grad:
        raise ValueError("teacher probabilities must be detached (stop-gradient)")
    if student_probs.shape != teacher_probs.shape:
        raise ValueError(
            f"shape mismatch {student_probs.shape} vs {teacher_probs.shape}"
        )
    diff = student_probs - teacher_probs
    return (diff * diff).sum() * (1.0 / student_probs.shape[0])


def make_pairs(batch_size, rng):
    """floor(|B|/2) disjoint pairs from a within-batch shuffle."""
    perm = rng.permutation(batch_size)
    half = batch_size // 2
    return perm[:half], perm[half : 2 * half]


def build_similarity(teacher_probs, pairs):
    """s_ij = 1 iff the teacher's argmax class agrees (ties -> lowest index)."""
    probs = teacher_probs.data if isinstance(teacher_probs, Tensor) else np.asarray(teacher_probs)
    i, j = (np.asarray(p, dtype=np.int64) for p in pairs)
    n = probs.shape[0]
    if i.size and (i.min() < 0 or j.min() < 0 or i.max() >= n or j.max() >= n):
        raise ValueError("pair indices out of range")
    pred = probs.argmax(axis=1)
    return PairSimilarity(i, j, (pred[i] == pred[j]).astype(np.int64))


def _hinge_sq(margin, dist):
    gap = ops.relu(Tensor(np.asarray(margin, dtype=dist.dtype)) - dist)
    return gap * gap


def sntg_pair(l_i, l_j, s_ij, m_e):
    """Euclidean contrastive pair term: ||d||^2 for neighbors, squared hinge
    at margin m_e otherwise."""
    if m_e <= 0:
        raise ValueError("m_e must be > 0")
    diff = l_i - l_j
    d2 = (diff * diff).sum()
    if s_ij:
        return d2
    return _hinge_sq(m_e, d2.clamp_min(1e-24).sqrt())


def _check_unit(rows):
    norms = np.sqrt((rows.data ** 2).sum(axis=-1))
    if np.abs(norms - 1.0).max() > UNIT_NORM_TOL:
        raise ValueError(
            f"angular pair loss needs unit vectors, got norm range "
            f"[{norms.min():.6f}, {norms.max():.6f}]"
        )


def amc_pair(z_i, z_j, s_ij, m_g):
    """Angular contrastive pair term over unit vectors: squared geodesic angle
    for neighbors, squared angular hinge at m_g otherwise."""
    if m_g <= 0:
        raise ValueError("m_g must be > 0")
    _check_unit(z_i)
    _check_unit(z_j)
    theta = (z_i * z_j).sum().arccos()  # arccos clamps its input to [-1, 1]
    if s_ij:
        return theta * theta
    return _hinge_sq(m_g, theta)


def sntg_loss(latents, sim, m_e):
    """Mean SNTG pair term over the pair list; latents (N, M)."""
    li = latents.take_rows(sim.i)
    lj = latents.take_rows(sim.j)
    diff = li - lj
    d2 = (diff * diff).sum(axis=1)
    dist = d2.clamp_min(1e-24).sqrt()
    s = sim.s.astype(latents.dtype)
    per_pair = Tensor(s) * d2 + Tensor(1.0 - s) * _hinge_sq(m_e, dist)
    return per_pair.sum() * (1.0 / len(sim.s))


def amc_loss(latents_unit, sim, m_g):
    """Mean AMC pair term over the pair list; rows must be unit vectors."""
    _check_unit(latents_unit)
    zi = latents_unit.take_rows(sim.i)
    zj = latents_unit.take_rows(sim.j)
    theta = (zi * zj).sum(axis=1).arccos()
    s = sim.s.astype(latents_unit.dtype)
    per_pair = Tensor(s) * (theta * theta) + Tensor(1.0 - s) * _hinge_sq(m_g, theta)
    return per_pair.sum() * (1.0 / len(sim.s))


def sphere_project(z, s):
    """Rescale vectors onto the radius-s sphere: s * z / ||z|| (last axis)."""
    if s <= 0:
        raise ValueError("sphere radius must be > 0")
    norm2 = (z * z).sum(axis=-1, keepdims=True)
    if np.any(norm2.data == 0.0):
        raise ValueError("cannot sphere-project a zero vector")
    return z * (norm2.sqrt() ** -1.0) * float(s)


def partition_latent(z, k):
    """Split an M-vector into k contiguous blocks, columns of a d x k matrix."""
    z = z if isinstance(z, Tensor) else Tensor(z)
    m = z.shape[-1]
    if z.ndim != 1:
        raise ValueError(f"partition_latent expects a vector, got {z.shape}")
    if m % k != 0:
        divisors = [d for d in range(1, m + 1) if m % d == 0]
        raise ValueError(f"k={k} does not divide M={m}; valid k: {divisors}")
    d = m // k
    return LatentBlockMatrix(d=d, k=k, entries=z.reshape(k, d).transpose())


def os_loss(zb):
    """Orthonormality residual ||Z^T Z - I||_F^2 of a block matrix."""
    z = zb.entries
    gram = z.transpose() @ z
    resid = gram - Tensor(np.eye(zb.k, dtype=z.dtype))
    return (resid * resid).sum()


def os_loss_batch(latents, k):
    """Mean OS penalty over a batch of latent vectors (N, M), M = d*k."""
    n, m = latents.shape
    if m % k != 0:
        divisors = [d for d in range(1, m + 1) if m % d == 0]
        raise ValueError(f"k={k} does not divide M={m}; valid k: {divisors}")
    d = m // k
    blocks = latents.reshape(n, k, d)
    gram = blocks @ blocks.transpose((0, 2, 1))
    resid = gram - Tensor(np.eye(k, dtype=latents.dtype))
    return (resid * resid).sum() * (1.0 / n)


def ramp_up(t, ramp_epochs=80):
    """w(t) = exp[-5 (1 - t/ramp)^2] for t < ramp, then exactly 1."""
    if t < 0:
        raise ValueError("epoch must be >= 0")
    if t >= ramp_epochs:
        return 1.0
    return math.exp(-5.0 * (1.0 - t / ramp_epochs) ** 2)


def ramp_down(t, total, window=50):
    """Learning-rate factor: 1 until the final `window` epochs, then
    exp[-12.5 (1 - (total - t)/window)^2]."""
    if not 0 <= t <= total:
        raise ValueError(f"epoch {t} outside [0, {total}]")
    if window > total:
        warnings.warn(f"ramp-down window {window} exceeds {total} epochs; clamping")
        window = total
    start = total - window
    if t <= start:
        return 1.0
    return math.exp(-12.5 * (1.0 - (total - t) / window) ** 2)


def total_loss(
    student_probs,
    teacher_probs,
    labels,
    labeled_mask,
    aux_latent,
    os_taps,
    sim,
    weights,
    w_t,
    diag=None,
):
    """Assemble the training objective; returns (scalar Tensor, term breakdown).

    total = CE + w(t) * [lam * consistency + lam1 * aux + lam2 * sum_taps OS]

    `aux_latent` is the (N, M) latent used by the pair regularizer (unit
    normalized internally for the angular flavor, which requires
    normalize_latent); `os_taps` maps tap name -> (N, M) latent. With
    normalize_latent on, each OS tap is sphere-projected to radius s before
    block partitioning.
    """
    zero = Tensor(np.zeros((), dtype=student_probs.dtype))
    ce = cross_entropy_masked(student_probs, labels, labeled_mask, diag)

    cons = consistency(student_probs, teacher_probs) if weights.lam > 0 else zero

    if weights.aux_kind == "none" or weights.lam1 == 0.0:
        aux = zero
    elif weights.aux_kind == "sntg":
        aux = sntg_loss(aux_latent, sim, weights.m_e)
    else:  # amc
        if not weights.normalize_latent:
            raise ValueError(
                "aux_kind='amc' requires normalize_latent (unit latent vectors)"
            )
        aux = amc_loss(sphere_project(aux_latent, 1.0), sim, weights.m_g)

    os_term = zero
    if weights.lam2 > 0.0:
        for tap in os_taps.values():
            z = sphere_project(tap, weights.s) if weights.normalize_latent else tap
            os_term = os_term + os_loss_batch(z, weights.k)

    total = ce + (weights.lam * cons + weights.lam1 * aux + weights.lam2 * os_term) * float(w_t)
    breakdown = {
        "ce": float(ce.data),
        "consistency": float(cons.data),
        "aux": float(aux.data),
        "os": float(os_term.data),
        "w_t": float(w_t),
        "total": float(total.data),
    }
    return total, breakdown
