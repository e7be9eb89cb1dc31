"""Numeric packing of observations for the networks and dataset files.

A PackedObservation flattens one Observation into dense arrays: one matrix
of vehicle trajectory points, one of static map points, with per-row
element ids. Batch assembly pads many packs into gather indices and masks
so a whole minibatch runs as a single taped forward pass.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import StructuralError
from .nn.layers import TYPE_EGO, TYPE_OTHER, TYPE_STATIC
from .observation import Observation

VEH_WIDTH = 6  # x, y, heading, speed, element, point
STATIC_WIDTH = 6  # x, y, heading, lane width, element, point


@dataclass
class PackedObservation:
    veh_points: np.ndarray
    veh_segments: np.ndarray
    n_veh: int
    static_points: np.ndarray
    static_segments: np.ndarray
    n_static: int
    neighbor_ids: np.ndarray
    svos: np.ndarray | None = None

    @property
    def n_neighbors(self) -> int:
        return self.n_veh - 1

    def astype(self, dtype) -> "PackedObservation":
        return PackedObservation(
            veh_points=self.veh_points.astype(dtype),
            veh_segments=self.veh_segments,
            n_veh=self.n_veh,
            static_points=self.static_points.astype(dtype),
            static_segments=self.static_segments,
            n_static=self.n_static,
            neighbor_ids=self.neighbor_ids,
            svos=None if self.svos is None else self.svos.astype(dtype),
        )


def _element_rows(elem, aux_column: float | None) -> np.ndarray:
    n = len(elem)
    cols = [elem.base]
    if elem.speeds is not None:
        cols.append(elem.speeds[:, None])
    else:
        cols.append(np.full((n, 1), aux_column))
    cols.append(np.full((n, 1), float(elem.element_index)))
    cols.append(np.arange(n, dtype=np.float64)[:, None])
    return np.hstack(cols)


def pack_observation(obs: Observation) -> PackedObservation:
    veh_elems = [obs.ego] + obs.others
    veh_rows = [_element_rows(e, None) for e in veh_elems]
    veh_seg = np.repeat(np.arange(len(veh_elems)), [len(e) for e in veh_elems])
    static_rows = [_element_rows(e, e.aux) for e in obs.static]
    static_seg = np.repeat(np.arange(len(obs.static)), [len(e) for e in obs.static])
    svos = None
    if obs.with_svo:
        svos = np.array([e.aux for e in veh_elems], dtype=np.float64)
    return PackedObservation(
        veh_points=np.vstack(veh_rows) if veh_rows else np.zeros((0, VEH_WIDTH)),
        veh_segments=veh_seg.astype(np.int64),
        n_veh=len(veh_elems),
        static_points=np.vstack(static_rows) if static_rows else np.zeros((0, STATIC_WIDTH)),
        static_segments=static_seg.astype(np.int64),
        n_static=len(obs.static),
        neighbor_ids=np.array([e.agent_id for e in obs.others], dtype=np.int64),
        svos=svos,
    )


def pack_to_dict(pack: PackedObservation, precision: int = 5) -> dict:
    def rows(a):
        return [[round(float(x), precision) for x in row] for row in a]

    out = {
        "veh": rows(pack.veh_points),
        "veh_seg": pack.veh_segments.tolist(),
        "static": rows(pack.static_points),
        "static_seg": pack.static_segments.tolist(),
        "n_veh": pack.n_veh,
        "n_static": pack.n_static,
        "neighbors": pack.neighbor_ids.tolist(),
    }
    if pack.svos is not None:
        out["svos"] = [round(float(x), precision) for x in pack.svos]
    return out


def pack_from_dict(d: dict) -> PackedObservation:
    return PackedObservation(
        veh_points=np.asarray(d["veh"], dtype=np.float64).reshape(-1, VEH_WIDTH),
        veh_segments=np.asarray(d["veh_seg"], dtype=np.int64),
        n_veh=int(d["n_veh"]),
        static_points=np.asarray(d["static"], dtype=np.float64).reshape(-1, STATIC_WIDTH),
        static_segments=np.asarray(d["static_seg"], dtype=np.int64),
        n_static=int(d["n_static"]),
        neighbor_ids=np.asarray(d["neighbors"], dtype=np.int64),
        svos=np.asarray(d["svos"], dtype=np.float64) if "svos" in d else None,
    )


@dataclass
class Batch:
    """Padded gather indices over the concatenated element-feature matrix.

    Element features are laid out as [all vehicle elements; all static
    elements; one zero pad row]. Key/query indices point into that layout.
    """

    veh_points: np.ndarray
    veh_segments: np.ndarray
    n_veh_total: int
    static_points: np.ndarray
    static_segments: np.ndarray
    n_static_total: int
    key_index: np.ndarray
    key_types: np.ndarray
    key_mask: np.ndarray
    query_index: np.ndarray
    query_mask: np.ndarray
    svo_flat: np.ndarray | None
    sizes: list[tuple[int, int]]

    @property
    def pad_row(self) -> int:
        return self.n_veh_total + self.n_static_total

    @property
    def batch_size(self) -> int:
        return self.key_index.shape[0]


def build_batch(packs: list[PackedObservation], queries: str, use_map: bool = True) -> Batch:
    """Assemble padded indices for a minibatch.

    queries="others" emits one query per neighbor (recognition);
    queries="ego" emits the single ego query (decision).
    """
    if not packs:
        raise StructuralError("empty batch")
    if queries not in ("others", "ego"):
        raise StructuralError(f"unknown query mode {queries!r}")

    veh_pts, veh_seg, st_pts, st_seg = [], [], [], []
    voff, soff = 0, 0
    offsets = []
    for p in packs:
        veh_pts.append(p.veh_points)
        veh_seg.append(p.veh_segments + voff)
        offsets.append((voff, soff))
        voff += p.n_veh
        if use_map:
            st_pts.append(p.static_points)
            st_seg.append(p.static_segments + soff)
            soff += p.n_static
    n_veh_total, n_static_total = voff, soff
    pad = n_veh_total + n_static_total

    b = len(packs)
    sizes = [(p.n_veh, p.n_static if use_map else 0) for p in packs]
    k_max = max(p.n_veh + (p.n_static if use_map else 0) for p in packs)
    q_max = max((p.n_neighbors for p in packs), default=1) if queries == "others" else 1
    q_max = max(q_max, 1)

    key_index = np.full((b, k_max), pad, dtype=np.int64)
    key_types = np.zeros((b, k_max), dtype=np.int64)
    key_mask = np.zeros((b, k_max), dtype=np.float64)
    query_index = np.full((b, q_max), pad, dtype=np.int64)
    query_mask = np.zeros((b, q_max), dtype=np.float64)

    for i, p in enumerate(packs):
        vo, so = offsets[i]
        cols = 0
        key_index[i, cols] = vo
        key_types[i, cols] = TYPE_EGO
        key_mask[i, cols] = 1.0
        cols += 1
        for j in range(p.n_neighbors):
            key_index[i, cols] = vo + 1 + j
            key_types[i, cols] = TYPE_OTHER
            key_mask[i, cols] = 1.0
            cols += 1
        if use_map:
            for j in range(sizes[i][1]):
                key_index[i, cols] = n_veh_total + so + j
                key_types[i, cols] = TYPE_STATIC
                key_mask[i, cols] = 1.0
                cols += 1
        if queries == "others":
            for j in range(p.n_neighbors):
                query_index[i, j] = vo + 1 + j
                query_mask[i, j] = 1.0
        else:
            query_index[i, 0] = vo
            query_mask[i, 0] = 1.0

    svo_flat = None
    if all(p.svos is not None for p in packs):
        svo_flat = np.concatenate([p.svos for p in packs])

    return Batch(
        veh_points=np.vstack(veh_pts) if veh_pts else np.zeros((0, VEH_WIDTH)),
        veh_segments=np.concatenate(veh_seg) if veh_seg else np.zeros(0, dtype=np.int64),
        n_veh_total=n_veh_total,
        static_points=np.vstack(st_pts) if st_pts else np.zeros((0, STATIC_WIDTH)),
        static_segments=np.concatenate(st_seg) if st_seg else np.zeros(0, dtype=np.int64),
        n_static_total=n_static_total,
        key_index=key_index,
        key_types=key_types,
        key_mask=key_mask,
        query_index=query_index,
        query_mask=query_mask,
        svo_flat=svo_flat,
        sizes=sizes,
    )


# Fixed input conditioning: positions in tens of meters, heading in
# half-turns, speed against the cap, indices in tens.
VEH_SCALE = np.array([1 / 30.0, 1 / 30.0, 1 / np.pi, 1 / 6.0, 1 / 10.0, 1 / 10.0])
STATIC_SCALE = np.array([1 / 30.0, 1 / 30.0, 1 / np.pi, 1 / 4.0, 1 / 10.0, 1 / 30.0])
