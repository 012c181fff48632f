"""Segment families for dwell-time constraints on a master sequence.

For each constrained discrete value, the occurrences of that value in the
master sequence form an ordered list of positions; every contiguous interval
of those occurrences is a segment that may become one joined dwell-time
constraint once the modes between its occurrences are dropped.  Activation
variables select, per inclusion pattern, the maximal joined segments, either
by direct logical evaluation or through an equivalent set of linear
inequalities whose relaxation pins each activation to a unique binary value.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .model import MdtSpec


@dataclass(frozen=True)
class Segment:
    """A set of same-value mode indices, contiguous in occurrence order."""

    indices: tuple[int, ...]
    value_index: int

    def __post_init__(self):
        if not self.indices:
            raise ValueError("segment must contain at least one mode index")
        if any(b <= a for a, b in zip(self.indices, self.indices[1:])):
            raise ValueError("segment indices must be strictly increasing")

    @property
    def min_index(self) -> int:
        return self.indices[0]

    @property
    def max_index(self) -> int:
        return self.indices[-1]

    def __len__(self) -> int:
        return len(self.indices)

    def label(self) -> str:
        return "{" + ",".join(str(i) for i in self.indices) + "}"


@dataclass(frozen=True)
class SegmentFamily:
    """All segments of a master sequence, with superset and gap structure.

    ``segments`` is ordered by (value index, first mode, length); that order
    defines the activation variable ids used in emitted rows.  ``gaps`` maps
    a segment to the mode indices strictly inside its span that it does not
    contain, and ``supersets`` to its strict same-value supersets.
    """

    master_length: int
    segments: tuple[Segment, ...]
    supersets: dict[Segment, tuple[Segment, ...]]
    gaps: dict[Segment, tuple[int, ...]]

    def __len__(self) -> int:
        return len(self.segments)

    def index_of(self, segment: Segment) -> int:
        return self._ids[segment]

    def __post_init__(self):
        object.__setattr__(self, "_ids", {seg: i for i, seg in enumerate(self.segments)})

    def by_decreasing_size(self) -> list[Segment]:
        return sorted(self.segments, key=lambda s: (s.value_index, -len(s), s.min_index))


@dataclass(frozen=True)
class ActivationAssignment:
    """Activation values keyed by segment; binary for binary inclusion vectors."""

    z: dict[Segment, float]

    def vector(self, family: SegmentFamily) -> np.ndarray:
        return np.array([self.z[s] for s in family.segments])


@dataclass(frozen=True)
class LinearRow:
    """An affine inequality ``constant + Σ c·var ≥ 0`` over (b, z, w) blocks.

    Coefficients are sparse (index, value) pairs; ``z`` indices refer to the
    family order, ``b`` and ``w`` indices to master mode positions.
    """

    constant: float
    b_coeffs: tuple[tuple[int, float], ...] = ()
    z_coeffs: tuple[tuple[int, float], ...] = ()
    w_coeffs: tuple[tuple[int, float], ...] = ()
    label: str = ""

    def evaluate(self, b=None, z=None, w=None) -> float:
        total = self.constant
        for i, c in self.b_coeffs:
            total += c * b[i]
        for i, c in self.z_coeffs:
            total += c * z[i]
        for i, c in self.w_coeffs:
            total += c * w[i]
        return total


def enumerate_segments(master: Sequence[int], mdt: MdtSpec) -> SegmentFamily:
    """All contiguous occurrence intervals of each constrained value.

    A value with m occurrences contributes m(m+1)/2 segments.  Values not
    constrained by ``mdt`` contribute none; the family is empty if nothing
    is constrained.
    """
    master = tuple(int(v) for v in master)
    if not master:
        raise ValueError("master sequence must be nonempty")
    segments: list[Segment] = []
    gaps: dict[Segment, tuple[int, ...]] = {}
    per_value: dict[int, list[Segment]] = {}
    for value in mdt.constrained_values:
        positions = [k for k, v in enumerate(master) if v == value]
        members: list[Segment] = []
        for a in range(len(positions)):
            for b in range(a, len(positions)):
                seg = Segment(indices=tuple(positions[a:b + 1]), value_index=value)
                span = set(range(seg.min_index, seg.max_index + 1))
                gaps[seg] = tuple(sorted(span - set(seg.indices)))
                members.append(seg)
        members.sort(key=lambda s: (s.min_index, len(s)))
        per_value[value] = members
        segments.extend(members)
    supersets = {
        seg: tuple(o for o in per_value[seg.value_index]
                   if len(o) > len(seg) and set(o.indices) >= set(seg.indices))
        for seg in segments
    }
    return SegmentFamily(master_length=len(master), segments=tuple(segments),
                         supersets=supersets, gaps=gaps)


def activation_from_inclusion(family: SegmentFamily, b: Sequence[int]) -> ActivationAssignment:
    """Evaluate the activation logic for a binary inclusion vector.

    A segment is active iff all its modes are included, every mode strictly
    inside its span is excluded, and no superset is active.  Supersets are
    evaluated first, so the assignment is unique.
    """
    b = np.asarray(b)
    if b.shape != (family.master_length,):
        raise ValueError(f"inclusion vector must have length {family.master_length}")
    z: dict[Segment, float] = {}
    for seg in family.by_decreasing_size():
        active = all(b[i] == 1 for i in seg.indices)
        active = active and all(b[j] == 0 for j in family.gaps[seg])
        active = active and all(z[sup] == 0.0 for sup in family.supersets[seg])
        z[seg] = 1.0 if active else 0.0
    return ActivationAssignment(z=z)


def build_activation_inequalities(family: SegmentFamily, master_length: int) -> list[LinearRow]:
    """Linear rows over (b, z) whose relaxation pins z to the activation logic."""
    if master_length != family.master_length:
        raise ValueError("family was built from a master of different length")
    rows: list[LinearRow] = []
    for seg in family.segments:
        sid = family.index_of(seg)
        name = seg.label()
        for i in seg.indices:
            rows.append(LinearRow(constant=0.0, b_coeffs=((i, 1.0),),
                                  z_coeffs=((sid, -1.0),), label=f"z{name}<=b{i}"))
        for j in family.gaps[seg]:
            rows.append(LinearRow(constant=1.0, b_coeffs=((j, -1.0),),
                                  z_coeffs=((sid, -1.0),), label=f"z{name}<=1-b{j}"))
        for sup in family.supersets[seg]:
            rows.append(LinearRow(constant=1.0,
                                  z_coeffs=((family.index_of(sup), -1.0), (sid, -1.0)),
                                  label=f"z{name}<=1-z{sup.label()}"))
        b_terms = tuple((i, -1.0) for i in seg.indices) + tuple(
            (j, 1.0) for j in family.gaps[seg])
        z_terms = ((sid, 1.0),) + tuple(
            (family.index_of(sup), 1.0) for sup in family.supersets[seg])
        rows.append(LinearRow(constant=float(len(seg)) - 1.0, b_coeffs=b_terms,
                              z_coeffs=z_terms, label=f"z{name}>=force"))
    return rows


def build_mdt_rows(family: SegmentFamily, delta_of: Callable[[Segment], float]
                   ) -> tuple[list[LinearRow], list[tuple[int, float, float]]]:
    """Dwell rows ``Σ_{k∈I} w_k − Δ·z_I ≥ 0`` plus [0, 1] bounds on each z."""
    rows = []
    bounds = []
    for seg in family.segments:
        sid = family.index_of(seg)
        delta = float(delta_of(seg))
        rows.append(LinearRow(constant=0.0,
                              w_coeffs=tuple((k, 1.0) for k in seg.indices),
                              z_coeffs=((sid, -delta),),
                              label=f"dwell{seg.label()}>= {delta}*z"))
        bounds.append((sid, 0.0, 1.0))
    return rows, bounds


def fixed_mdt_rows(family: SegmentFamily, b: Sequence[int],
                   delta_of: Callable[[Segment], float]) -> list[LinearRow]:
    """Dwell rows surviving a fixed binary inclusion: only active segments."""
    assignment = activation_from_inclusion(family, b)
    rows = []
    for seg in family.segments:
        if assignment.z[seg] == 1.0:
            rows.append(LinearRow(constant=-float(delta_of(seg)),
                                  w_coeffs=tuple((k, 1.0) for k in seg.indices),
                                  label=f"dwell{seg.label()}>= {delta_of(seg)}"))
    return rows


def format_family_table(family: SegmentFamily, master: Sequence[int],
                        delta_of: Callable[[Segment], float]) -> str:
    """Human-readable dump of the family and its constraint rows."""
    lines = [f"master sequence (value indices): {tuple(master)}",
             f"{len(family)} segments",
             f"{'id':>3}  {'value':>5}  {'modes':<16} {'gap':<12} supersets"]
    for seg in family.segments:
        sups = " ".join(s.label() for s in family.supersets[seg]) or "-"
        gap = ",".join(str(j) for j in family.gaps[seg]) or "-"
        lines.append(f"{family.index_of(seg):>3}  {seg.value_index:>5}  "
                     f"{seg.label():<16} {gap:<12} {sups}")
    lines.append("")
    lines.append("activation rows (expr >= 0):")
    for row in build_activation_inequalities(family, family.master_length):
        lines.append(f"  {row.label}")
    lines.append("dwell rows:")
    mdt_rows, _ = build_mdt_rows(family, delta_of)
    for row in mdt_rows:
        lines.append(f"  {row.label}")
    return "\n".join(lines)
