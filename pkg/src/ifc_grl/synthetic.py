"""
Synthetic data for desk-scale experiments.

``disambiguation_dataset`` builds four classes arranged as two geometric
pairs and two relational profiles::

                  profile A (fills)   profile B (voids/connects)
    panel shape   IfcDoor             IfcWindow
    rod shape     IfcColumn           IfcFlowSegment

Geometry alone separates only the pairs, relations alone only the profiles;
the class is identified by the combination.

``write_corpus`` emits small random IFC files with one OBJ mesh per element,
for exercising the full extract/assemble pipeline.
"""

from __future__ import annotations

from pathlib import Path
from typing import Dict, List, Tuple, Union

import numpy as np

from . import geometry
from .dataset import BimObject, ClassLabel, object_seed
from .relations import RelationCountVector

DATA_DIR = Path(__file__).resolve().parent / "data"


def toy_fixture() -> Tuple[Path, Path]:
    """Bundled toy IFC file and the OBJ root to pass as ``obj_dir``."""
    return DATA_DIR / "toy.ifc", DATA_DIR / "toy_obj"


PAIRS = {
    ClassLabel.IfcDoor: ("panel", "A"),
    ClassLabel.IfcWindow: ("panel", "B"),
    ClassLabel.IfcColumn: ("rod", "A"),
    ClassLabel.IfcFlowSegment: ("rod", "B"),
}


def _shape(kind: str, rng: np.random.Generator) -> geometry.TriangleMesh:
    if kind == "panel":
        return geometry.box_mesh((rng.uniform(0.8, 1.3), rng.uniform(0.04, 0.12), rng.uniform(1.8, 2.4)))
    return geometry.cylinder_mesh(rng.uniform(0.08, 0.2), rng.uniform(2.5, 3.5), segments=12)


def _profile(kind: str, rng: np.random.Generator) -> RelationCountVector:
    if kind == "A":
        return RelationCountVector(0, int(rng.poisson(0.3)), 0, int(rng.random() < 0.5), 0, 1)
    return RelationCountVector(1 + int(rng.poisson(1.0)), 0, 0, int(rng.random() < 0.5),
                               1 + int(rng.poisson(0.5)), 0)


def disambiguation_dataset(per_class: int = 300, n_points: int = 128, seed: int = 0) -> List[BimObject]:
    rng = np.random.default_rng(seed)
    objects = []
    for label, (shape_kind, profile_kind) in PAIRS.items():
        for i in range(per_class):
            uid = f"synthetic/{label.name}/{i:04d}"
            mesh = _shape(shape_kind, rng)
            cloud = geometry.sample_point_cloud(mesh, n_points, object_seed(seed, uid))
            objects.append(BimObject(uid, label, cloud.points, _profile(profile_kind, rng)))
    return objects


# ---------------------------------------------------------------------------
# Random IFC corpus
# ---------------------------------------------------------------------------

_HEADER = """ISO-10303-21;
HEADER;
FILE_DESCRIPTION(('ViewDefinition [CoordinationView]'),'2;1');
FILE_NAME('{name}.ifc','2024-01-01T00:00:00',(''),(''),'synthetic','synthetic','');
FILE_SCHEMA(('IFC2X3'));
ENDSEC;
DATA;
"""


class _Writer:
    def __init__(self):
        self.lines: List[str] = []
        self.next_id = 1

    def add(self, type_name: str, args: str) -> int:
        i = self.next_id
        self.next_id += 1
        self.lines.append(f"#{i}={type_name}('{i:022d}',$,$,$,{args});" if args else
                          f"#{i}={type_name}('{i:022d}',$,$,$);")
        return i


def _ref_list(ids) -> str:
    return "(" + ",".join(f"#{i}" for i in ids) + ")"


def write_corpus(ifc_dir: Union[str, Path], obj_dir: Union[str, Path],
                 n_files: int = 3, seed: int = 0) -> Dict[str, int]:
    """Write ``n_files`` random buildings; returns elements written per IFC file."""
    ifc_dir, obj_dir = Path(ifc_dir), Path(obj_dir)
    ifc_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    written = {}
    for f in range(n_files):
        name = f"building_{f:02d}"
        w = _Writer()
        meshes: Dict[int, geometry.TriangleMesh] = {}
        storey = w.add("IFCBUILDINGSTOREY", "$,$,$,$,.ELEMENT.,0.")
        elements: List[int] = []

        def element(type_name: str, mesh: geometry.TriangleMesh) -> int:
            i = w.add(type_name, "$,$,$,$")
            meshes[i] = mesh
            elements.append(i)
            return i

        walls = []
        for _ in range(int(rng.integers(3, 7))):
            length = float(rng.uniform(2.0, 6.0))
            wall = element("IFCWALLSTANDARDCASE", geometry.box_mesh((length, 0.2, 2.7)))
            walls.append((wall, length))
            for _ in range(int(rng.integers(0, 3))):
                opening = w.add("IFCOPENINGELEMENT", "$,$,$,$")
                w.add("IFCRELVOIDSELEMENT", f"#{wall},#{opening}")
                if rng.random() < 0.5:
                    filler = element("IFCDOOR", geometry.box_mesh((0.9, 0.05, 2.1)))
                else:
                    filler = element("IFCWINDOW", geometry.box_mesh(
                        (float(rng.uniform(0.6, 1.8)), 0.08, float(rng.uniform(0.8, 1.5)))))
                w.add("IFCRELFILLSELEMENT", f"#{opening},#{filler}")
        for a, b in zip(walls, walls[1:]):
            w.add("IFCRELCONNECTSPATHELEMENTS", f"$,#{a[0]},#{b[0]},(),(),.ATEND.,.ATSTART.")
        slab = element("IFCSLAB", geometry.box_mesh(
            (float(rng.uniform(5, 10)), float(rng.uniform(5, 10)), 0.25)))
        for _ in range(int(rng.integers(1, 4))):
            column = element("IFCCOLUMN", geometry.box_mesh((0.3, 0.3, float(rng.uniform(2.5, 3.2)))))
            w.add("IFCRELCONNECTSELEMENTS", f"$,#{column},#{slab}")
            beam = element("IFCBEAM", geometry.box_mesh((float(rng.uniform(3, 6)), 0.2, 0.4)))
            w.add("IFCRELCONNECTSELEMENTS", f"$,#{column},#{beam}")
        segs = [element("IFCFLOWSEGMENT", geometry.cylinder_mesh(0.05, float(rng.uniform(1, 3)), 8))
                for _ in range(int(rng.integers(0, 4)))]
        if segs:
            element("IFCFLOWFITTING", geometry.cylinder_mesh(0.07, 0.15, 8))
            system = w.add("IFCELEMENTASSEMBLY", "$,$,$,$,.NOTDEFINED.,.NOTDEFINED.")
            w.add("IFCRELAGGREGATES", f"#{system},{_ref_list(segs)}")
        space = w.add("IFCSPACE", "$,$,$,$,.ELEMENT.,.INTERNAL.,$")
        meshes[space] = geometry.box_mesh((4.0, 4.0, 2.7))
        w.add("IFCRELAGGREGATES", f"#{storey},{_ref_list(elements)}")

        text = _HEADER.format(name=name) + "\n".join(w.lines) + "\nENDSEC;\nEND-ISO-10303-21;\n"
        (ifc_dir / f"{name}.ifc").write_text(text, encoding="ascii")
        mesh_dir = obj_dir / name
        mesh_dir.mkdir(parents=True, exist_ok=True)
        for i, mesh in meshes.items():
            # random rigid placement; duplicates stay congruent
            angle = float(rng.uniform(0, 2 * np.pi))
            c, s = np.cos(angle), np.sin(angle)
            rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
            placed = mesh.transformed(rot, rng.uniform(-20, 20, 3))
            (mesh_dir / f"{i}.obj").write_text(geometry.format_obj(placed), encoding="ascii")
        written[name] = len(elements)
    return written
