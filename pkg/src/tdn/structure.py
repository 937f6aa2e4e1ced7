"""Structure learning: kernel affinities and temporally constrained Ncut."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numcore as nc
from .errors import ContractError, DimensionError
from .numcore import Param, Tensor

NCUT_EPS = 1e-12


@dataclass
class KernelParams:
    wf: Param  # m x m
    bf: Param  # 1 x m

    def params(self) -> list[Param]:
        return [self.wf, self.bf]


@dataclass(frozen=True)
class Partition:
    """Ordered half-open ``(start, end)`` intervals covering ``[0, n)``."""

    segments: tuple[tuple[int, int], ...]

    def __post_init__(self):
        segs = tuple((int(s), int(e)) for s, e in self.segments)
        object.__setattr__(self, "segments", segs)
        if not segs or segs[0][0] != 0:
            raise ContractError(f"partition must start at 0: {segs}")
        for (s, e), nxt in zip(segs, segs[1:] + ((segs[-1][1], None),)):
            if e <= s:
                raise ContractError(f"empty or reversed segment ({s}, {e})")
            if nxt[0] != e:
                raise ContractError(f"segments not contiguous at {e}: {segs}")

    @classmethod
    def whole(cls, n: int) -> "Partition":
        return cls(((0, n),))

    @classmethod
    def from_cuts(cls, n: int, cuts) -> "Partition":
        bounds = [0, *sorted(int(c) for c in cuts), n]
        return cls(tuple(zip(bounds[:-1], bounds[1:])))

    @property
    def n(self) -> int:
        return self.segments[-1][1]

    @property
    def cuts(self) -> list[int]:
        """Segment start offsets, excluding 0."""
        return [s for s, _ in self.segments[1:]]

    def __len__(self) -> int:
        return len(self.segments)

    def mask(self) -> np.ndarray:
        m = np.zeros((self.n, self.n))
        for s, e in self.segments:
            m[s:e, s:e] = 1.0
        return m

    def pooling_matrix(self) -> np.ndarray:
        """K x n matrix whose rows average each segment."""
        p = np.zeros((len(self.segments), self.n))
        for k, (s, e) in enumerate(self.segments):
            p[k, s:e] = 1.0 / (e - s)
        return p


def _values(a) -> np.ndarray:
    v = a.value if isinstance(a, Tensor) else np.asarray(a, dtype=np.float64)
    if v.ndim != 2 or v.shape[0] != v.shape[1]:
        raise DimensionError(f"adjacency must be square, got {v.shape}")
    return v


def kernel_adjacency(x, k: KernelParams) -> Tensor:
    """``ReLU(F Fᵀ)`` with ``F = x W_f + b_f``; symmetric and nonnegative."""
    x = nc.as_tensor(x)
    m = x.shape[1]
    if k.wf.shape != (m, m):
        raise DimensionError(f"kernel weight {k.wf.shape} does not match feature width {m}")
    return nc.relu(nc.gram(nc.affine(x, k.wf, k.bf)))


def ncut_value(a, seg: tuple[int, int], t: int) -> float:
    """Normalized cut of ``seg`` split at ``t``, with the segment as the whole graph."""
    v = _values(a)
    s, e = seg
    if not s < t < e:
        raise ContractError(f"cut index {t} must lie strictly inside ({s}, {e})")
    cut = v[s:t, t:e].sum()
    assoc1 = v[s:t, s:e].sum()
    assoc2 = v[t:e, s:e].sum()
    return float(cut / (assoc1 + NCUT_EPS) + cut / (assoc2 + NCUT_EPS))


def ncut_profile(a, seg: tuple[int, int]) -> np.ndarray:
    """Ncut value for every interior cut ``t = s+1 .. e-1`` in O(len²).

    Only sums of nonnegative terms are formed, so an exactly zero cut stays
    exactly zero.
    """
    v = _values(a)
    s, e = seg
    sub = v[s:e, s:e]
    # tail[i, j] = sum_{j' >= j} sub[i, j']
    tail = np.cumsum(sub[:, ::-1], axis=1)[:, ::-1]
    acc = np.cumsum(tail, axis=0)
    idx = np.arange(1, e - s)
    cut = acc[idx - 1, idx]
    rows = tail[:, 0]
    assoc1 = np.cumsum(rows)[:-1]
    assoc2 = np.cumsum(rows[::-1])[::-1][1:]
    return cut / (assoc1 + NCUT_EPS) + cut / (assoc2 + NCUT_EPS)


def best_cut(a, seg: tuple[int, int]) -> int:
    """Exact argmin of the Ncut along the time axis; ties go to the smallest index."""
    s, e = seg
    if e - s < 2:
        raise ContractError(f"segment ({s}, {e}) is too short to cut")
    return s + 1 + int(np.argmin(ncut_profile(a, seg)))


def target_subgraph_count(n: int) -> int:
    """``2 ** (floor(log2 sqrt(n)) - 1)``, clamped to at least 1."""
    if n < 1:
        raise ContractError(f"frame count must be positive, got {n}")
    # floor(log2 sqrt n) == floor(floor(log2 n) / 2)
    e = (n.bit_length() - 1) // 2
    return 1 << (e - 1) if e >= 1 else 1


def recursive_partition(a, k: int) -> Partition:
    """Split every segment at its best cut, level by level, ``log2 k`` times."""
    v = _values(a)
    if k < 1 or k & (k - 1):
        raise ContractError(f"target count must be a power of two, got {k}")
    segments = [(0, v.shape[0])]
    for _ in range(k.bit_length() - 1):
        nxt = []
        for s, e in segments:
            if e - s < 2:
                nxt.append((s, e))
                continue
            t = best_cut(v, (s, e))
            nxt += [(s, t), (t, e)]
        segments = nxt
    return Partition(tuple(segments))


def refine_adjacency(a, p: Partition) -> Tensor:
    """Zero every cross-segment entry; gradients pass through the kept block entries."""
    a = nc.as_tensor(a)
    if p.n != a.shape[0]:
        raise DimensionError(f"partition covers {p.n} nodes, adjacency has {a.shape[0]}")
    return nc.mask(a, p.mask())
