"""
Labeled object datasets: assembly from IFC + OBJ sources, per-class capping,
stratified train/test splitting and a checksummed on-disk format.

On disk a dataset is a directory::

    manifest.txt          format tag, seed, point count, then one
                          tab-separated record per object
    clouds/000000.f32     N x 3 little-endian float32, row-major
"""

from __future__ import annotations

import enum
import hashlib
import logging
import math
import zlib
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from . import geometry, step
from .relations import RelationCountVector, build_vectors

logger = logging.getLogger(__name__)

FORMAT_VERSION = "ifc-grl-ds/1"
DEFAULT_CAP = 2000
DEFAULT_TRAIN_FRACTION = 0.7


class ClassLabel(enum.IntEnum):
    IfcBeam = 0
    IfcColumn = 1
    IfcDoor = 2
    IfcFlowFitting = 3
    IfcFlowSegment = 4
    IfcFlowTerminal = 5
    IfcPlate = 6
    IfcRailing = 7
    IfcSlab = 8
    IfcWall = 9
    IfcWindow = 10


# Entity names (upper case) mapped onto the eleven classes. The IFC4 flow
# subtypes and *StandardCase variants are folded into their parents.
TYPE_TO_LABEL: Dict[str, ClassLabel] = {label.name.upper(): label for label in ClassLabel}
TYPE_TO_LABEL.update({
    "IFCWALLSTANDARDCASE": ClassLabel.IfcWall,
    "IFCWALLELEMENTEDCASE": ClassLabel.IfcWall,
    "IFCSLABSTANDARDCASE": ClassLabel.IfcSlab,
    "IFCSLABELEMENTEDCASE": ClassLabel.IfcSlab,
    "IFCBEAMSTANDARDCASE": ClassLabel.IfcBeam,
    "IFCCOLUMNSTANDARDCASE": ClassLabel.IfcColumn,
    "IFCDOORSTANDARDCASE": ClassLabel.IfcDoor,
    "IFCWINDOWSTANDARDCASE": ClassLabel.IfcWindow,
    "IFCPLATESTANDARDCASE": ClassLabel.IfcPlate,
    "IFCPIPESEGMENT": ClassLabel.IfcFlowSegment,
    "IFCDUCTSEGMENT": ClassLabel.IfcFlowSegment,
    "IFCCABLECARRIERSEGMENT": ClassLabel.IfcFlowSegment,
    "IFCPIPEFITTING": ClassLabel.IfcFlowFitting,
    "IFCDUCTFITTING": ClassLabel.IfcFlowFitting,
    "IFCCABLECARRIERFITTING": ClassLabel.IfcFlowFitting,
    "IFCAIRTERMINAL": ClassLabel.IfcFlowTerminal,
    "IFCSANITARYTERMINAL": ClassLabel.IfcFlowTerminal,
    "IFCLIGHTFIXTURE": ClassLabel.IfcFlowTerminal,
    "IFCLAMP": ClassLabel.IfcFlowTerminal,
    "IFCOUTLET": ClassLabel.IfcFlowTerminal,
    "IFCFIRESUPPRESSIONTERMINAL": ClassLabel.IfcFlowTerminal,
    "IFCWASTETERMINAL": ClassLabel.IfcFlowTerminal,
    "IFCSTACKTERMINAL": ClassLabel.IfcFlowTerminal,
})


def label_for_type(type_name: str) -> Optional[ClassLabel]:
    return TYPE_TO_LABEL.get(type_name.upper())


class DatasetError(Exception):
    pass


class FormatVersionMismatch(DatasetError):
    pass


class ChecksumMismatch(DatasetError):
    pass


class MissingFile(DatasetError, FileNotFoundError):
    pass


@dataclass
class BimObject:
    uid: str
    label: ClassLabel
    cloud: np.ndarray  # (N, 3) float32
    relation: RelationCountVector

    def __post_init__(self):
        if any(c in self.uid for c in "\t\r\n"):
            raise ValueError(f"uid {self.uid!r} contains tab or newline")
        self.label = ClassLabel(self.label)
        self.relation = RelationCountVector(*self.relation)
        self.cloud = np.ascontiguousarray(self.cloud, dtype=np.float32).reshape(-1, 3)

    def __eq__(self, other) -> bool:
        if not isinstance(other, BimObject):
            return NotImplemented
        return (self.uid == other.uid and self.label == other.label
                and self.relation == other.relation
                and self.cloud.shape == other.cloud.shape
                and self.cloud.tobytes() == other.cloud.tobytes())


@dataclass
class DatasetSplit:
    train: List[BimObject]
    test: List[BimObject]
    seed: int = 0

    def __post_init__(self):
        seen = set()
        for obj in self.train + self.test:
            if obj.uid in seen:
                raise DatasetError(f"uid {obj.uid!r} appears twice in the split")
            seen.add(obj.uid)


@dataclass
class AssemblyStats:
    objects: int = 0
    skipped_type: int = 0
    missing_mesh: int = 0
    duplicates: int = 0
    failed_files: List[str] = field(default_factory=list)


# ---------------------------------------------------------------------------
# Assembly
# ---------------------------------------------------------------------------

def object_seed(seed: int, uid: str) -> np.random.SeedSequence:
    """Per-object sampling seed; independent of processing order."""
    return np.random.SeedSequence([seed, zlib.crc32(uid.encode("utf-8"))])


def make_uid(source: str, instance_id: int) -> str:
    return f"{source}#{instance_id}"


def assemble(models: Sequence[Tuple[str, step.StepModel]],
             meshes: Mapping[str, geometry.TriangleMesh],
             n_points: int = geometry.DEFAULT_POINTS,
             seed: int = 0,
             dedup_tolerance: float = geometry.SIGNATURE_TOLERANCE,
             connects_subtypes: Iterable[str] = ()) -> Tuple[List[BimObject], AssemblyStats]:
    """Build complete BimObjects from parsed models and per-object meshes.

    ``models`` are (source name, model) pairs; ``meshes`` is keyed by uid
    ``"<source>#<instance id>"``. Objects are instances of a mapped class that
    have a mesh. Meshes of instances whose type is not mapped are counted as
    skipped. Duplicates are removed within each class, scanning sources in
    the given order and ids ascending. A failure inside one source drops that
    source only.
    """
    stats = AssemblyStats()
    connects_subtypes = tuple(connects_subtypes)
    candidates: Dict[ClassLabel, List[Tuple[Tuple[int, int], str, geometry.TriangleMesh]]] = {}
    vectors: Dict[str, RelationCountVector] = {}
    for order, (source, model) in enumerate(models):
        try:
            picked = []
            for inst in model.instances.values():
                uid = make_uid(source, inst.id)
                label = label_for_type(inst.type_name)
                if label is None:
                    if uid in meshes:
                        stats.skipped_type += 1
                    continue
                mesh = meshes.get(uid)
                if mesh is None:
                    stats.missing_mesh += 1
                    continue
                picked.append((label, inst.id, uid, mesh))
            model_vectors = build_vectors(model, [p[1] for p in picked], connects_subtypes)
        except (step.StepError, geometry.GeometryError) as exc:
            logger.warning("skipping %s: %s", source, exc)
            stats.failed_files.append(source)
            continue
        for label, inst_id, uid, mesh in picked:
            candidates.setdefault(label, []).append(((order, inst_id), uid, mesh))
            vectors[uid] = model_vectors[inst_id]

    objects: List[BimObject] = []
    for label in ClassLabel:
        members = candidates.get(label, [])
        by_key = {key: (uid, mesh) for key, uid, mesh in members}
        try:
            survivors = geometry.deduplicate([(key, mesh) for key, _, mesh in members], dedup_tolerance)
        except geometry.GeometryError as exc:
            # one broken mesh: fall back to per-object screening
            logger.warning("%s: %s; screening meshes individually", label.name, exc)
            valid = []
            for key, uid, mesh in members:
                try:
                    geometry.shape_signature(mesh)
                    valid.append((key, mesh))
                except geometry.GeometryError:
                    stats.failed_files.append(uid)
            survivors = geometry.deduplicate(valid, dedup_tolerance)
        stats.duplicates += len(members) - len(survivors)
        for key in survivors:
            uid, mesh = by_key[key]
            cloud = geometry.sample_point_cloud(mesh, n_points, object_seed(seed, uid))
            objects.append(BimObject(uid, label, cloud.points, vectors[uid]))
    stats.objects = len(objects)
    return objects, stats


def assemble_from_dirs(ifc_dir: Union[str, Path], obj_dir: Union[str, Path],
                       n_points: int = geometry.DEFAULT_POINTS, seed: int = 0,
                       **kwargs) -> Tuple[List[BimObject], AssemblyStats]:
    """Read ``ifc_dir/*.ifc`` and their meshes ``obj_dir/<ifc stem>/<instance id>.obj``."""
    ifc_dir, obj_dir = Path(ifc_dir), Path(obj_dir)
    models = []
    meshes: Dict[str, geometry.TriangleMesh] = {}
    failed = []
    for path in sorted(ifc_dir.glob("*.ifc")):
        source = path.stem
        try:
            model = step.load(path)
        except step.StepError as exc:
            logger.warning("cannot parse %s: %s", path, exc)
            failed.append(source)
            continue
        models.append((source, model))
        mesh_dir = obj_dir / source
        for obj_path in sorted(mesh_dir.glob("*.obj")):
            try:
                instance_id = int(obj_path.stem)
            except ValueError:
                logger.warning("ignoring %s: file name is not an instance id", obj_path)
                continue
            try:
                meshes[make_uid(source, instance_id)] = geometry.load_obj_file(obj_path)
            except geometry.GeometryError as exc:
                logger.warning("cannot load %s: %s", obj_path, exc)
    objects, stats = assemble(models, meshes, n_points, seed, **kwargs)
    stats.failed_files[:0] = failed
    return objects, stats


# ---------------------------------------------------------------------------
# Capping and splitting
# ---------------------------------------------------------------------------

def _class_rng(seed: int, label: int) -> np.random.Generator:
    return np.random.default_rng([seed, int(label)])


def cap_per_class(objects: Sequence[BimObject], cap: int = DEFAULT_CAP, seed: int = 0) -> List[BimObject]:
    """Down-sample classes above ``cap`` without replacement; input order is kept."""
    if cap <= 0:
        raise ValueError("cap must be positive")
    by_class: Dict[ClassLabel, List[int]] = {}
    for i, obj in enumerate(objects):
        by_class.setdefault(obj.label, []).append(i)
    keep = set()
    for label, idx in by_class.items():
        if len(idx) > cap:
            chosen = _class_rng(seed, label).choice(len(idx), size=cap, replace=False)
            keep.update(idx[j] for j in chosen)
        else:
            keep.update(idx)
    return [obj for i, obj in enumerate(objects) if i in keep]


def train_count(n: int, train_fraction: float = DEFAULT_TRAIN_FRACTION) -> int:
    # exact rational arithmetic: 0.7 * 10 must give 7, not 7.000000000000001 floored
    return math.floor(Fraction(train_fraction).limit_denominator(10 ** 9) * n)


def split(objects: Sequence[BimObject], train_fraction: float = DEFAULT_TRAIN_FRACTION,
          seed: int = 0) -> DatasetSplit:
    """Stratified split: per class, shuffle with the seed and floor the train share."""
    if not 0 < train_fraction < 1:
        raise ValueError("train_fraction must lie in (0, 1)")
    by_class: Dict[ClassLabel, List[BimObject]] = {label: [] for label in ClassLabel}
    for obj in objects:
        by_class[obj.label].append(obj)
    empty = [label.name for label, members in by_class.items() if not members]
    if empty:
        logger.warning("empty classes: %s", ", ".join(empty))
    train, test = [], []
    for label, members in by_class.items():
        order = _class_rng(seed, label).permutation(len(members))
        k = train_count(len(members), train_fraction)
        train.extend(members[i] for i in order[:k])
        test.extend(members[i] for i in order[k:])
    return DatasetSplit(train, test, seed)


def validate_split_counts(split_: DatasetSplit, train_fraction: float = DEFAULT_TRAIN_FRACTION) -> List[str]:
    """Classes whose train count is neither floor nor ceil of the expected share.

    External manifests may round either way, so both are accepted here.
    """
    train = Counter(o.label for o in split_.train)
    test = Counter(o.label for o in split_.test)
    bad = []
    for label in ClassLabel:
        n = train[label] + test[label]
        exact = Fraction(train_fraction).limit_denominator(10 ** 9) * n
        if train[label] not in (math.floor(exact), math.ceil(exact)):
            bad.append(label.name)
    return bad


def label_counts(objects: Iterable[BimObject]) -> Dict[ClassLabel, int]:
    counts = Counter(o.label for o in objects)
    return {label: counts[label] for label in ClassLabel}


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

def _record_checksum(uid: str, label: int, relation: Sequence[int], rel_path: str, cloud_bytes: bytes) -> str:
    h = hashlib.sha256()
    h.update("\t".join([uid, str(label), *map(str, relation), rel_path]).encode("utf-8"))
    h.update(b"\0")
    h.update(cloud_bytes)
    return h.hexdigest()


def save(split_: DatasetSplit, directory: Union[str, Path]) -> Path:
    directory = Path(directory)
    (directory / "clouds").mkdir(parents=True, exist_ok=True)
    n_points = {o.cloud.shape[0] for o in split_.train + split_.test}
    if len(n_points) > 1:
        raise DatasetError(f"mixed point counts {sorted(n_points)}")
    lines = [FORMAT_VERSION, f"seed\t{split_.seed}",
             f"points\t{n_points.pop() if n_points else 0}"]
    index = 0
    for part, objects in (("train", split_.train), ("test", split_.test)):
        for obj in objects:
            rel_path = f"clouds/{index:06d}.f32"
            data = obj.cloud.astype("<f4").tobytes()
            (directory / rel_path).write_bytes(data)
            checksum = _record_checksum(obj.uid, int(obj.label), obj.relation, rel_path, data)
            lines.append("\t".join([part, obj.uid, str(int(obj.label)), *map(str, obj.relation),
                                    rel_path, checksum]))
            index += 1
    (directory / "manifest.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return directory


def load(directory: Union[str, Path]) -> DatasetSplit:
    directory = Path(directory)
    manifest = directory / "manifest.txt"
    if not manifest.is_file():
        raise MissingFile(f"{manifest} not found")
    lines = manifest.read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != FORMAT_VERSION:
        found = lines[0] if lines else ""
        raise FormatVersionMismatch(f"expected {FORMAT_VERSION!r}, found {found!r}")
    try:
        seed = int(lines[1].split("\t")[1])
        n_points = int(lines[2].split("\t")[1])
    except (IndexError, ValueError):
        raise DatasetError("malformed manifest header") from None
    parts: Dict[str, List[BimObject]] = {"train": [], "test": []}
    for lineno, line in enumerate(lines[3:], 4):
        if not line:
            continue
        fields = line.split("\t")
        if len(fields) != 11 or fields[0] not in parts:
            raise DatasetError(f"manifest line {lineno}: malformed record")
        part, uid, label = fields[0], fields[1], int(fields[2])
        relation = [int(x) for x in fields[3:9]]
        rel_path, checksum = fields[9], fields[10]
        cloud_path = directory / rel_path
        if not cloud_path.is_file():
            raise MissingFile(f"{cloud_path} not found")
        data = cloud_path.read_bytes()
        if _record_checksum(uid, label, relation, rel_path, data) != checksum:
            raise ChecksumMismatch(f"manifest line {lineno} ({uid})")
        cloud = np.frombuffer(data, dtype="<f4").reshape(-1, 3)
        if n_points and cloud.shape[0] != n_points:
            raise DatasetError(f"{rel_path}: expected {n_points} points, found {cloud.shape[0]}")
        parts[part].append(BimObject(uid, ClassLabel(label), cloud.astype(np.float32), relation))
    return DatasetSplit(parts["train"], parts["test"], seed)


def as_arrays(objects: Sequence[BimObject]) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(clouds float64 (n, N, 3), raw relation counts (n, 6), labels (n,))."""
    if not objects:
        return np.zeros((0, 0, 3)), np.zeros((0, 6)), np.zeros(0, dtype=np.int64)
    clouds = np.stack([o.cloud for o in objects]).astype(np.float64)
    relations = np.array([o.relation for o in objects], dtype=np.float64)
    labels = np.array([int(o.label) for o in objects], dtype=np.int64)
    return clouds, relations, labels
