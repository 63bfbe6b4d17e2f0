"""Compact 3D encoders with taps on their intermediate patch features.

Four architecture families are provided, one per supported backbone tag.
They are deliberately small (the engine consumes whatever checkpoint is
supplied; nothing here depends on a particular pretraining), but each one
reproduces the structural contract of its family:

* ``pointnet2``: hierarchical set abstraction; the second level emits
  128-channel patch vectors.
* ``epn``: the same hierarchy evaluated over a discretized rotation set,
  so every level yields a (P, R, C) stack; block 4 carries 64 channels.
  Grouping indices are computed once on the unrotated cloud (rotations
  preserve distances), which makes the stack exactly equivariant over the
  discrete set.
* ``transformer``: FPS patch tokens plus learned positions through
  self-attention blocks.
* ``sparse-conv``: occupied-voxel features convolved with per-offset
  weights over the 3x3x3 neighborhood.

``forward`` returns ``{"layers": {name: (features, anchors)}, "global": g}``
with float32 tensors; anchors are patch centers in the normalized frame.
"""

from __future__ import annotations

import itertools

import torch
from torch import nn

from .pointops import farthest_point_indices, knn_indices

LAYER_NAMES = {
    "pointnet2": ("sa1", "sa2", "sa3"),
    "epn": ("block1", "block2", "block3", "block4"),
    "transformer": ("block1", "block2", "block3"),
    "sparse-conv": ("conv1", "conv2", "conv3"),
}

MIN_POINTS = {"pointnet2": 128, "epn": 96, "transformer": 32, "sparse-conv": 8}


def octahedral_rotations() -> torch.Tensor:
    """The 24 signed-permutation rotation matrices (determinant +1)."""
    mats = []
    for perm in itertools.permutations(range(3)):
        for signs in itertools.product((1.0, -1.0), repeat=3):
            m = torch.zeros(3, 3)
            for row, col in enumerate(perm):
                m[row, col] = signs[row]
            if torch.det(m) > 0.5:
                mats.append(m)
    return torch.stack(mats)


def _mlp(in_dim: int, out_dim: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Linear(in_dim, out_dim), nn.ReLU(), nn.Linear(out_dim, out_dim), nn.ReLU()
    )


class _SetAbstraction(nn.Module):
    """Group k neighbors per FPS center, lift with an MLP, max-pool the group."""

    def __init__(self, in_channels: int, out_channels: int, centers: int, neighbors: int):
        super().__init__()
        self.centers = centers
        self.neighbors = neighbors
        self.mlp = _mlp(in_channels + 3, out_channels)

    def group(self, xyz: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        center_idx = farthest_point_indices(xyz, self.centers)
        group_idx = knn_indices(xyz, xyz[center_idx], self.neighbors)
        return center_idx, group_idx

    def lift(
        self,
        rel: torch.Tensor,
        feats: torch.Tensor | None,
        group_idx: torch.Tensor,
    ) -> torch.Tensor:
        # rel: (..., P, k, 3); feats: (..., N, C) gathered to (..., P, k, C)
        if feats is None:
            x = rel
        else:
            gathered = feats[..., group_idx, :]
            x = torch.cat([rel, gathered], dim=-1)
        return self.mlp(x).max(dim=-2).values


class PointHierarchyEncoder(nn.Module):
    """pointnet2-style stack of three set-abstraction levels."""

    PLAN = (
        ("sa1", 0, 64, 128, 16),
        ("sa2", 64, 128, 32, 8),
        ("sa3", 128, 256, 8, 4),
    )

    def __init__(self):
        super().__init__()
        self.levels = nn.ModuleDict(
            {
                name: _SetAbstraction(c_in, c_out, centers, k)
                for name, c_in, c_out, centers, k in self.PLAN
            }
        )

    def forward(self, points: torch.Tensor) -> dict:
        xyz, feats = points, None
        layers = {}
        for name, *_ in self.PLAN:
            level = self.levels[name]
            center_idx, group_idx = level.group(xyz)
            centers = xyz[center_idx]
            rel = xyz[group_idx] - centers[:, None, :]
            feats = level.lift(rel, feats, group_idx)
            xyz = centers
            layers[name] = (feats, centers)
        return {"layers": layers, "global": feats.max(dim=0).values}


class RotationDiscretizedEncoder(nn.Module):
    """epn-style hierarchy evaluated over 24 discrete rotations.

    Every layer output has shape (P, R, C); aggregation over R is left to
    the caller so the pre-pooling stack stays observable.
    """

    PLAN = (
        ("block1", 0, 16, 96, 12),
        ("block2", 16, 32, 48, 8),
        ("block3", 32, 48, 24, 6),
        ("block4", 48, 64, 12, 4),
    )

    def __init__(self):
        super().__init__()
        self.levels = nn.ModuleDict(
            {
                name: _SetAbstraction(c_in, c_out, centers, k)
                for name, c_in, c_out, centers, k in self.PLAN
            }
        )
        self.register_buffer("rotations", octahedral_rotations())

    def forward(self, points: torch.Tensor) -> dict:
        xyz, feats = points, None  # feats: (R, N, C) once populated
        layers = {}
        for name, *_ in self.PLAN:
            level = self.levels[name]
            center_idx, group_idx = level.group(xyz)
            centers = xyz[center_idx]
            rel = xyz[group_idx] - centers[:, None, :]
            # rotate relative frames only; grouping is rotation invariant
            rel_rot = torch.einsum("rij,pkj->rpki", self.rotations, rel)
            feats = level.lift(rel_rot, feats, group_idx)  # (R, P, C)
            xyz = centers
            layers[name] = (feats.permute(1, 0, 2), centers)
        pooled = feats.max(dim=0).values  # over rotations
        return {"layers": layers, "global": pooled.max(dim=0).values}


class PatchTransformer(nn.Module):
    """FPS patch tokens with learned positions through 3 attention blocks."""

    TOKENS = 32
    NEIGHBORS = 16
    WIDTH = 96

    def __init__(self):
        super().__init__()
        self.embed = _mlp(3, self.WIDTH)
        self.position = nn.Linear(3, self.WIDTH)
        self.blocks = nn.ModuleList(
            nn.TransformerEncoderLayer(
                d_model=self.WIDTH,
                nhead=4,
                dim_feedforward=2 * self.WIDTH,
                dropout=0.0,
                batch_first=True,
            )
            for _ in range(3)
        )

    def forward(self, points: torch.Tensor) -> dict:
        center_idx = farthest_point_indices(points, self.TOKENS)
        centers = points[center_idx]
        group_idx = knn_indices(points, centers, self.NEIGHBORS)
        rel = points[group_idx] - centers[:, None, :]
        tokens = self.embed(rel).max(dim=1).values + self.position(centers)
        layers = {}
        x = tokens.unsqueeze(0)
        for i, block in enumerate(self.blocks, start=1):
            x = block(x)
            layers[f"block{i}"] = (x.squeeze(0), centers)
        return {"layers": layers, "global": x.squeeze(0).mean(dim=0)}


class SparseVoxelConv(nn.Module):
    """Per-offset-weight convolution over occupied voxels of a coarse grid."""

    GRID = 6
    PLAN = (("conv1", 16, 24), ("conv2", 24, 40), ("conv3", 40, 56))

    def __init__(self):
        super().__init__()
        self.stem = nn.Sequential(nn.Linear(4, 16), nn.ReLU())
        self.weights = nn.ParameterDict()
        self.biases = nn.ParameterDict()
        for name, c_in, c_out in self.PLAN:
            self.weights[name] = nn.Parameter(torch.randn(27, c_in, c_out) / (27 * c_in) ** 0.5)
            self.biases[name] = nn.Parameter(torch.zeros(c_out))
        offsets = torch.tensor(list(itertools.product((-1, 0, 1), repeat=3)))
        self.register_buffer("offsets", offsets)

    def _voxelize(self, points: torch.Tensor):
        # normalized clouds live in [-1, 1]
        coords = ((points + 1.0) / 2.0 * self.GRID).floor().clamp(0, self.GRID - 1).long()
        keys, inverse = torch.unique(coords, dim=0, return_inverse=True)
        count = keys.shape[0]
        sums = torch.zeros(count, 3).index_add_(0, inverse, points)
        totals = torch.zeros(count).index_add_(0, inverse, torch.ones(points.shape[0]))
        voxel_centers = (keys.float() + 0.5) / self.GRID * 2.0 - 1.0
        mean_offset = sums / totals[:, None] - voxel_centers
        stem_in = torch.cat([mean_offset, torch.log1p(totals)[:, None]], dim=1)
        return keys, voxel_centers, self.stem(stem_in)

    def forward(self, points: torch.Tensor) -> dict:
        keys, centers, feats = self._voxelize(points)
        count = keys.shape[0]
        lookup = {tuple(k.tolist()): i for i, k in enumerate(keys)}
        neighbor_rows = torch.full((27, count), count, dtype=torch.long)
        for o, offset in enumerate(self.offsets):
            shifted = keys + offset
            for i in range(count):
                row = lookup.get(tuple(shifted[i].tolist()))
                if row is not None:
                    neighbor_rows[o, i] = row
        layers = {}
        for name, c_in, c_out in self.PLAN:
            padded = torch.cat([feats, feats.new_zeros(1, c_in)])
            gathered = padded[neighbor_rows]  # (27, P, c_in)
            feats = torch.relu(
                torch.einsum("opc,ocd->pd", gathered, self.weights[name]) + self.biases[name]
            )
            layers[name] = (feats, centers)
        return {"layers": layers, "global": feats.max(dim=0).values}


BACKBONES = {
    "pointnet2": PointHierarchyEncoder,
    "epn": RotationDiscretizedEncoder,
    "transformer": PatchTransformer,
    "sparse-conv": SparseVoxelConv,
}


def create_backbone(tag: str) -> nn.Module:
    if tag not in BACKBONES:
        raise ValueError(f"unknown backbone {tag!r}, expected one of {sorted(BACKBONES)}")
    model = BACKBONES[tag]()
    model.eval()
    return model
