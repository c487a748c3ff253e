"""Synthetic phantoms and simulated raters for validating the EM fusers.

The generators draw from counter-based Philox streams keyed by (seed,
stream id), with the voxel index fixed as the position inside the stream,
so every output is a pure function of its spec and reproducible under any
evaluation order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import ConfigError
from .volume import Dim3, ExpertStack, GridKind, VolumeGrid

# Stream id of the intensity noise; expert i uses stream i.
_NOISE_STREAM = 0xF1A1


def _stream(seed: int, stream: int) -> np.random.Generator:
    mask = (1 << 64) - 1
    key = np.array([int(seed) & mask, int(stream) & mask], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


@dataclass(frozen=True)
class PhantomSpec:
    """Ground-truth layout: spherical lesions over a flat background.

    ``lesions`` is a sequence of ``((cx, cy, cz), radius)`` pairs in voxel
    units; a voxel belongs to a lesion when its center lies within the
    Euclidean radius.
    """

    dims: Dim3
    lesions: tuple
    background_intensity: float = 50.0
    lesion_intensity: float = 150.0
    intensity_noise_sd: float = 0.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(
            self,
            "lesions",
            tuple((tuple(center), float(radius)) for center, radius in self.lesions),
        )

    def validate(self) -> None:
        if self.intensity_noise_sd < 0.0:
            raise ConfigError(
                f"intensity_noise_sd must be >= 0, got {self.intensity_noise_sd}"
            )
        if not self.lesion_intensity > self.background_intensity:
            raise ConfigError(
                "lesion_intensity must exceed background_intensity "
                f"({self.lesion_intensity} <= {self.background_intensity})"
            )
        bounds = self.dims.as_tuple()
        for center, radius in self.lesions:
            if len(center) != 3:
                raise ConfigError(f"lesion center must have 3 coordinates, got {center}")
            if radius < 0.0:
                raise ConfigError(f"lesion radius must be >= 0, got {radius}")
            for c, naxis in zip(center, bounds):
                if c - radius < 0 or c + radius > naxis - 1:
                    raise ConfigError(
                        f"lesion at {center} with radius {radius} leaves the grid "
                        f"{bounds}"
                    )


@dataclass(frozen=True)
class RaterSpec:
    """One simulated expert.

    Votes are drawn independently per voxel with the configured
    sensitivity/specificity. When ``boundary_softening`` is set, errors are
    instead confined to the one-voxel boundary shell of the truth, where
    each voxel flips with that probability; voxels away from the boundary
    copy the truth exactly.
    """

    rater_id: str
    sens: float
    spec: float
    seed: int = 0
    boundary_softening: float | None = None

    def validate(self) -> None:
        for name in ("sens", "spec"):
            v = getattr(self, name)
            if not 0.5 < v < 1.0:
                raise ConfigError(
                    f"rater {self.rater_id!r}: {name} must lie in (0.5, 1), got {v}"
                )
        if self.boundary_softening is not None and not 0.0 <= self.boundary_softening < 1.0:
            raise ConfigError(
                f"rater {self.rater_id!r}: boundary_softening must lie in [0, 1), "
                f"got {self.boundary_softening}"
            )


def generate_phantom(spec: PhantomSpec) -> tuple[VolumeGrid, VolumeGrid]:
    """Voxelize the lesion spheres and synthesize the intensity volume."""
    spec.validate()
    nx, ny, nz = spec.dims.as_tuple()
    zz, yy, xx = np.meshgrid(
        np.arange(nz), np.arange(ny), np.arange(nx), indexing="ij"
    )
    truth3 = np.zeros((nz, ny, nx), dtype=bool)
    for (cx, cy, cz), radius in spec.lesions:
        d2 = (xx - cx) ** 2 + (yy - cy) ** 2 + (zz - cz) ** 2
        truth3 |= d2 <= radius**2

    intensity = np.where(truth3, spec.lesion_intensity, spec.background_intensity)
    noise = _stream(spec.seed, _NOISE_STREAM).normal(
        0.0, spec.intensity_noise_sd, size=spec.dims.n
    )
    flair = intensity.reshape(-1) + noise
    truth = VolumeGrid(spec.dims, truth3.astype(np.float64).reshape(-1), GridKind.BINARY)
    return truth, VolumeGrid(spec.dims, flair, GridKind.INTENSITY)


def _boundary_shell(truth3: np.ndarray) -> np.ndarray:
    """One-voxel shell on both sides of the truth boundary (26-adjacency)."""
    structure = np.ones((3, 3, 3), dtype=bool)
    grown = ndimage.binary_dilation(truth3, structure=structure)
    core = ndimage.binary_erosion(truth3, structure=structure)
    return grown & ~core


def simulate_raters(truth: VolumeGrid, raters: list[RaterSpec]) -> ExpertStack:
    """Draw one binary annotation per rater from the truth."""
    if truth.kind is not GridKind.BINARY:
        raise ConfigError(f"truth must be binary, got {truth.kind.value}")
    for r in raters:
        r.validate()
    truth_flat = truth.data > 0.5
    shell = None
    experts = []
    for i, rater in enumerate(raters):
        u = _stream(rater.seed, i).random(truth.n)
        if rater.boundary_softening is None:
            votes = np.where(truth_flat, u < rater.sens, u < 1.0 - rater.spec)
        else:
            if shell is None:
                shell = _boundary_shell(truth.as_3d() > 0.5).reshape(-1)
            flip = shell & (u < rater.boundary_softening)
            votes = truth_flat ^ flip
        experts.append(
            VolumeGrid(truth.dims, votes.astype(np.float64), GridKind.BINARY)
        )
    return ExpertStack(tuple(experts), tuple(r.rater_id for r in raters))


def soften_votes(stack: ExpertStack, blur: float) -> ExpertStack:
    """Soft stack with each hard vote shrunk toward the opposite label:
    a vote y becomes (1 - blur) * y + blur * (1 - y)."""
    if not 0.0 <= blur < 0.5:
        raise ConfigError(f"blur must lie in [0, 0.5), got {blur}")
    if stack.kind is not GridKind.BINARY:
        raise ConfigError(f"soften_votes expects a binary stack, got {stack.kind.value}")
    soft = tuple(
        VolumeGrid(
            g.dims,
            (1.0 - blur) * g.data + blur * (1.0 - g.data),
            GridKind.SOFT,
        )
        for g in stack.experts
    )
    return ExpertStack(soft, stack.expert_ids)


def load_simulation_config(path) -> tuple[PhantomSpec, list[RaterSpec]]:
    """Parse the JSON simulation config (schema documented in the README).

    Raises ConfigError naming the offending key on any schema violation.
    """
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return parse_simulation_config(doc)


def parse_simulation_config(doc: dict) -> tuple[PhantomSpec, list[RaterSpec]]:
    if not isinstance(doc, dict):
        raise ConfigError("config root must be a JSON object")

    def need(key, kind, where=doc, ctx="config"):
        if key not in where:
            raise ConfigError(f"{ctx}: missing required key {key!r}")
        value = where[key]
        if kind is float:
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(f"{ctx}: key {key!r} must be a number")
            return float(value)
        if not isinstance(value, kind) or isinstance(value, bool) and kind is not bool:
            raise ConfigError(f"{ctx}: key {key!r} must be a {kind.__name__}")
        return value

    dims_raw = need("dims", list)
    if len(dims_raw) != 3 or not all(
        isinstance(d, int) and not isinstance(d, bool) and d > 0 for d in dims_raw
    ):
        raise ConfigError("config: key 'dims' must be 3 positive integers")
    lesions_raw = need("lesions", list)
    lesions = []
    for i, lesion in enumerate(lesions_raw):
        ctx = f"lesions[{i}]"
        if not isinstance(lesion, dict):
            raise ConfigError(f"{ctx}: must be an object")
        center = need("center", list, lesion, ctx)
        if len(center) != 3 or not all(
            isinstance(c, (int, float)) and not isinstance(c, bool) for c in center
        ):
            raise ConfigError(f"{ctx}: key 'center' must be 3 numbers")
        lesions.append((tuple(float(c) for c in center), need("radius", float, lesion, ctx)))

    phantom = PhantomSpec(
        dims=Dim3(*dims_raw),
        lesions=tuple(lesions),
        background_intensity=need("background_intensity", float),
        lesion_intensity=need("lesion_intensity", float),
        intensity_noise_sd=need("intensity_noise_sd", float),
        seed=need("seed", int),
    )
    phantom.validate()

    raters_raw = need("raters", list)
    if not raters_raw:
        raise ConfigError("config: key 'raters' must list at least one rater")
    raters = []
    for i, entry in enumerate(raters_raw):
        ctx = f"raters[{i}]"
        if not isinstance(entry, dict):
            raise ConfigError(f"{ctx}: must be an object")
        softening = entry.get("boundary_softening")
        if softening is not None:
            softening = need("boundary_softening", float, entry, ctx)
        seed_val = entry.get("seed", phantom.seed)
        if isinstance(seed_val, bool) or not isinstance(seed_val, int):
            raise ConfigError(f"{ctx}: key 'seed' must be an integer")
        rater = RaterSpec(
            rater_id=need("id", str, entry, ctx),
            sens=need("sens", float, entry, ctx),
            spec=need("spec", float, entry, ctx),
            seed=seed_val,
            boundary_softening=softening,
        )
        rater.validate()
        raters.append(rater)
    ids = [r.rater_id for r in raters]
    if len(set(ids)) != len(ids):
        raise ConfigError("config: rater 'id' values must be distinct")
    return phantom, raters
