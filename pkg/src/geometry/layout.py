"""NV + ¹³C 层的空间排布。

所有坐标单位为 nm，NV 位于原点，z 轴默认沿磁场（也是 NV 对称轴）方向。
"""
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from src.errors import InvalidGeometryError
from src.geometry.constants import GAMMA_C13, GAMMA_ELECTRON, LAYER_TILT

logger = logging.getLogger(__name__)

LAYOUT_HEADER = "# layersim-layout v1"


def _frozen(array) -> np.ndarray:
    out = np.array(array, dtype=float)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class SpinLayout:
    nv_position: np.ndarray
    nuclear_positions: np.ndarray
    nuclear_gyromagnetic_ratio: float = GAMMA_C13
    electron_gyromagnetic_ratio: float = GAMMA_ELECTRON
    field_magnitude: float = 0.06
    field_axis: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))
    layer_tilt: float = LAYER_TILT
    # 网格间距 (nm)，非网格排布时为 None；哈密顿量的默认截断半径依赖它
    grid_spacing: Optional[float] = None

    def __post_init__(self):
        nuclei = np.asarray(self.nuclear_positions, dtype=float).reshape(-1, 3)
        axis = np.asarray(self.field_axis, dtype=float)
        if abs(np.linalg.norm(axis) - 1.0) > 1e-12:
            raise InvalidGeometryError(
                f"field_axis must have unit norm, got |n| = {np.linalg.norm(axis):.15f}"
            )
        if self.field_magnitude < 0:
            raise InvalidGeometryError("field_magnitude must be non-negative")
        if len(nuclei) > 1:
            diff = nuclei[:, None, :] - nuclei[None, :, :]
            dist = np.linalg.norm(diff, axis=-1)
            np.fill_diagonal(dist, np.inf)
            if dist.min() <= 1e-9:
                i, j = np.unravel_index(np.argmin(dist), dist.shape)
                raise InvalidGeometryError(f"nuclei {i} and {j} share the same position")
        object.__setattr__(self, "nv_position", _frozen(self.nv_position))
        object.__setattr__(self, "nuclear_positions", _frozen(nuclei))
        object.__setattr__(self, "field_axis", _frozen(axis))

    @property
    def n_nuclei(self) -> int:
        return len(self.nuclear_positions)

    @property
    def n_sites(self) -> int:
        return self.n_nuclei + 1

    @property
    def larmor(self) -> float:
        """γ_N·B_z (rad/s)"""
        return self.nuclear_gyromagnetic_ratio * self.field_magnitude

    def relative_positions(self) -> np.ndarray:
        """各核相对 NV 的位移矢量"""
        return self.nuclear_positions - self.nv_position

    def rotated(self, rotation: np.ndarray) -> "SpinLayout":
        """整体旋转排布与磁场方向（用于检验坐标系协变性）"""
        rotation = np.asarray(rotation, dtype=float)
        axis = rotation @ self.field_axis
        return replace(
            self,
            nv_position=rotation @ self.nv_position,
            nuclear_positions=self.nuclear_positions @ rotation.T,
            field_axis=axis / np.linalg.norm(axis),
        )


def rotation_about_axis(axis, angle: float) -> np.ndarray:
    """右手旋转矩阵 (Rodrigues)"""
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    k = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]])
    return np.eye(3) + math.sin(angle) * k + (1 - math.cos(angle)) * (k @ k)


def build_layer_grid(
        nx: int,
        ny: int,
        spacing: float,
        distance: float,
        tilt: float = LAYER_TILT,
        n_layers: int = 1,
        field_magnitude: float = 0.06,
        lateral_offset: tuple[float, float] = (0.0, 0.0),
) -> SpinLayout:
    """在 NV 下方放置一个（或多个堆叠的）矩形 ¹³C 网格，并整体倾斜。

    Args:
        nx: x 方向格点数
        ny: y 方向格点数
        spacing: 格点间距 (nm)
        distance: 倾斜前网格平面到 NV 的距离 (nm)
        tilt: 层法线相对 NV 轴的倾角 (rad)，绕面内 x 轴旋转
        n_layers: 堆叠层数，相邻层沿法线相距 spacing
        field_magnitude: 磁场大小 (T)
        lateral_offset: NV 相对网格中心的横向偏移 (nm)

    Returns:
        SpinLayout，核按 层→行(y)→列(x) 的顺序排列

    Raises:
        InvalidGeometryError: 参数不合法时
    """
    if nx < 1 or ny < 1 or n_layers < 1:
        raise InvalidGeometryError(f"grid needs at least one site, got {nx}x{ny}x{n_layers}")
    if n_layers not in (1, 2, 3):
        raise InvalidGeometryError(f"n_layers must be 1, 2 or 3, got {n_layers}")
    if spacing <= 0:
        raise InvalidGeometryError(f"spacing must be positive, got {spacing}")
    if distance <= 0:
        raise InvalidGeometryError(f"distance must be positive, got {distance}")

    xs = (np.arange(nx) - (nx - 1) / 2) * spacing - lateral_offset[0]
    ys = (np.arange(ny) - (ny - 1) / 2) * spacing - lateral_offset[1]
    positions = []
    for layer in range(n_layers):
        z = distance + layer * spacing
        for y in ys:
            for x in xs:
                positions.append((x, y, z))

    rotation = rotation_about_axis((1.0, 0.0, 0.0), tilt)
    positions = np.asarray(positions) @ rotation.T
    logger.debug(f"构建网格: {nx}x{ny}x{n_layers}, 间距 {spacing} nm, 距离 {distance} nm")
    return SpinLayout(
        nv_position=np.zeros(3),
        nuclear_positions=positions,
        field_magnitude=field_magnitude,
        layer_tilt=tilt,
        grid_spacing=spacing,
    )


def build_chain(
        n: int,
        spacing: float,
        distance: float,
        tilt: float = LAYER_TILT,
        field_magnitude: float = 0.06,
) -> SpinLayout:
    """一维核自旋链，链沿倾斜前的 x 方向，中心位于 NV 正下方"""
    return build_layer_grid(
        n, 1, spacing, distance, tilt=tilt, n_layers=1, field_magnitude=field_magnitude
    )


def add_nucleus(layout: SpinLayout, position) -> SpinLayout:
    """在排布末尾追加一个核（例如强耦合的近邻 ¹³C）"""
    positions = np.vstack([layout.nuclear_positions, np.asarray(position, dtype=float)])
    return replace(layout, nuclear_positions=positions)


def export_layout(layout: SpinLayout, path: str | Path | None = None) -> str:
    """导出为纯文本表：每行一个自旋 species x y z (nm)，NV 在第一行"""
    lines = [
        LAYOUT_HEADER,
        f"# field_T {float(layout.field_magnitude)!r}",
        "# field_axis " + " ".join(repr(float(v)) for v in layout.field_axis),
        f"# layer_tilt_rad {float(layout.layer_tilt)!r}",
        f"# grid_spacing_nm {layout.grid_spacing!r}",
        f"# gamma_n {float(layout.nuclear_gyromagnetic_ratio)!r}",
        f"# gamma_e {float(layout.electron_gyromagnetic_ratio)!r}",
        "species x_nm y_nm z_nm",
    ]
    rows = [("NV", layout.nv_position)] + [("13C", p) for p in layout.nuclear_positions]
    for species, pos in rows:
        lines.append(f"{species} {float(pos[0])!r} {float(pos[1])!r} {float(pos[2])!r}")
    text = "\n".join(lines) + "\n"
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text


def import_layout(text_or_path: str | Path) -> SpinLayout:
    """读取 export_layout 生成的文本表"""
    candidate = Path(text_or_path) if not str(text_or_path).startswith("#") else None
    if candidate is not None and candidate.exists():
        text = candidate.read_text(encoding="utf-8")
    else:
        text = str(text_or_path)
    meta = {}
    nv = None
    nuclei = []
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("species"):
            continue
        if line.startswith("#"):
            parts = line[1:].split()
            if len(parts) >= 2:
                meta[parts[0]] = parts[1:]
            continue
        species, *coords = line.split()
        pos = [float(c) for c in coords]
        if species == "NV":
            nv = pos
        else:
            nuclei.append(pos)
    if nv is None:
        raise InvalidGeometryError("layout table has no NV row")
    spacing = meta.get("grid_spacing_nm", ["None"])[0]
    return SpinLayout(
        nv_position=nv,
        nuclear_positions=np.asarray(nuclei).reshape(-1, 3),
        field_magnitude=float(meta.get("field_T", ["0.06"])[0]),
        field_axis=[float(v) for v in meta.get("field_axis", ["0", "0", "1"])],
        layer_tilt=float(meta.get("layer_tilt_rad", [repr(LAYER_TILT)])[0]),
        grid_spacing=None if spacing == "None" else float(spacing),
        nuclear_gyromagnetic_ratio=float(meta.get("gamma_n", [repr(GAMMA_C13)])[0]),
        electron_gyromagnetic_ratio=float(meta.get("gamma_e", [repr(GAMMA_ELECTRON)])[0]),
    )
