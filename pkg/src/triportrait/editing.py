"""Session-based free-view rendering, regional texture restyling, style mixing
and mesh extraction."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from .backbone import StyleCodes
from .camera import CameraPose
from .errors import RejectedInputError
from .field import TriPlane, mesh_iso_level
from .inversion import Session, _session_render
from .palette import NUM_CLASSES


@dataclass
class RegionStyleSpec:
    """Class-set -> replacement texture-style assignments.

    Each assignment replaces the color of 3D points whose semantic class falls
    in the set with a query into a texture tri-plane generated from the given
    texture block (10 x 512). Class sets must be pairwise disjoint.
    """

    assignments: list[tuple[set[int], torch.Tensor]] = field(default_factory=list)
    blend_band: float = 0.0

    def validate(self) -> None:
        seen: set[int] = set()
        for classes, styles in self.assignments:
            for c in classes:
                if not 0 <= int(c) < NUM_CLASSES:
                    raise RejectedInputError(f"class index out of range: {c}")
                if int(c) in seen:
                    raise RejectedInputError(f"class {c} appears in two assignments")
                seen.add(int(c))
            if styles.shape[-2:] != (10, 512):
                raise RejectedInputError("replacement styles must be a 10x512 texture block")


def restyle_overrides(session: Session):
    """Materialize the session's active restyle spec into renderer overrides.

    The replacement tri-planes come from the tuned backbone with the session's
    own shape styles, so the replacement texture lives in the same geometry.
    """
    spec = session.active_restyle
    if spec is None or not spec.assignments:
        return None, 0.0
    overrides = []
    for classes, tex_styles in spec.assignments:
        layers = session.current_styles.layers.clone()
        if tex_styles.ndim == 2:
            tex_styles = tex_styles.unsqueeze(0)
        layers[:, session.current_styles.shallow_layers:] = tex_styles
        _, alt_planes = session.generator.generate_planes(StyleCodes(layers))
        class_vec = torch.zeros(NUM_CLASSES, dtype=torch.bool)
        class_vec[sorted(int(c) for c in classes)] = True
        overrides.append((class_vec, alt_planes))
    return overrides, spec.blend_band


def render_view(session: Session, camera: CameraPose, hr: bool = True):
    """Render the session at a camera; hr=False returns the LR bundle fast path."""
    if not isinstance(camera, CameraPose):
        raise RejectedInputError("render_view needs a CameraPose")
    with torch.no_grad():
        return _session_render(session, camera, hr=hr)


def region_restyle(session: Session, spec: RegionStyleSpec, camera: CameraPose):
    """Set the active regional texture assignment and render at `camera`.

    Density and semantics are untouched by construction: depth and the LR
    semantic map are bitwise-identical to the unrestyled render. The upsampler
    keeps the session's own modulation so non-member regions stay put.
    """
    spec.validate()
    session.active_restyle = spec if spec.assignments else None
    session.edit_stack.append({
        "kind": "restyle",
        "assignments": [{"classes": sorted(int(c) for c in classes),
                         "styles": styles.detach().reshape(10, 512).numpy()}
                        for classes, styles in spec.assignments],
        "blend_band": spec.blend_band,
    })
    session.refresh_canonical()
    return render_view(session, camera)


def global_style_adjust(session: Session, block: str, values: torch.Tensor,
                        layers: list[int]) -> Session:
    """Style mixing: replace the chosen W+ layers inside one block.

    `layers` are indices within the block (0..7 for shape, 0..9 for texture).
    An empty selection is a recorded no-op.
    """
    shallow = session.current_styles.shallow_layers
    deep = session.current_styles.layers.shape[1] - shallow
    if block not in ("shape", "texture"):
        raise RejectedInputError("block must be 'shape' or 'texture'")
    limit = shallow if block == "shape" else deep
    offset = 0 if block == "shape" else shallow
    for idx in layers:
        if not 0 <= idx < limit:
            raise RejectedInputError(f"layer {idx} outside the {block} block")
    if values.ndim == 2:
        values = values.unsqueeze(0)
    if values.shape[1] != len(layers):
        raise RejectedInputError("values must supply one style row per selected layer")
    if layers:
        new_layers = session.current_styles.layers.clone()
        new_layers[:, [offset + i for i in layers]] = values
        session.current_styles = StyleCodes(new_layers)
    session.edit_stack.append({
        "kind": "style_mix",
        "block": block,
        "layers": [int(i) for i in layers],
        "values": values.detach().reshape(len(layers), 512).numpy()
        if layers else np.zeros((0, 512), dtype=np.float32),
    })
    session.refresh_canonical()
    return session


# -- mesh extraction -------------------------------------------------------------


@dataclass
class Mesh:
    vertices: np.ndarray   # (V, 3) scene units
    faces: np.ndarray      # (F, 3) int indices
    classes: np.ndarray | None = None  # (V,) per-vertex semantic class

    @property
    def empty(self) -> bool:
        return len(self.vertices) == 0


def mesh_from_density(density_fn, grid_resolution: int, level: float,
                      chunk: int = 65536) -> Mesh:
    """Marching cubes over density_fn sampled on a regular grid in [-1, 1]^3."""
    if grid_resolution < 16:
        raise RejectedInputError("grid resolution must be >= 16")
    from skimage import measure

    axis = np.linspace(-1.0, 1.0, grid_resolution)
    xs, ys, zs = np.meshgrid(axis, axis, axis, indexing="ij")
    pts = np.stack([xs, ys, zs], axis=-1).reshape(-1, 3)
    values = np.empty(len(pts), dtype=np.float32)
    with torch.no_grad():
        for i in range(0, len(pts), chunk):
            values[i:i + chunk] = density_fn(
                torch.as_tensor(pts[i:i + chunk], dtype=torch.float32)).numpy()
    volume = values.reshape(grid_resolution, grid_resolution, grid_resolution)
    if volume.max() <= level or volume.min() >= level:
        return Mesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
    spacing = 2.0 / (grid_resolution - 1)
    verts, faces, _, _ = measure.marching_cubes(volume, level=level,
                                                spacing=(spacing, spacing, spacing))
    return Mesh(verts - 1.0, faces.astype(np.int64))


def extract_mesh(session: Session, grid_resolution: int = 128,
                 level: float | None = None, with_classes: bool = False) -> Mesh:
    """Iso-surface of the session's density field (vertices in scene units)."""
    gen = session.generator
    if level is None:
        level = mesh_iso_level(gen.render_cfg)
    with torch.no_grad():
        planes_s, _ = gen.generate_planes(session.current_styles)
    mesh = mesh_from_density(lambda pts: gen.field.density(planes_s, pts.unsqueeze(0))[0],
                             grid_resolution, level)
    if with_classes and not mesh.empty:
        with torch.no_grad():
            labels = gen.field.query_semantics(
                planes_s, torch.as_tensor(mesh.vertices, dtype=torch.float32).unsqueeze(0))
        mesh.classes = labels[0].numpy()
    return mesh


def save_obj(mesh: Mesh, path) -> None:
    """OBJ export: `v x y z` and 1-based `f i j k` lines."""
    with open(path, "w") as f:
        for v in mesh.vertices:
            f.write(f"v {v[0]:.6f} {v[1]:.6f} {v[2]:.6f}\n")
        for face in mesh.faces:
            f.write(f"f {face[0] + 1} {face[1] + 1} {face[2] + 1}\n")
