"""
Two-branch geometric-relational classifier.

    clouds ──► backbone ──────────┐
                                  ├─► concat ─► fusion MLP ─► linear ─► logits
    relations ─► ln(1+x) ─► relational extractor (skip taps) ─┘

Ablation variants drop one of the three modules. When a branch is removed
its input is not consumed at all.
"""

from __future__ import annotations

from collections import OrderedDict
from pathlib import Path
from typing import Dict, List, Optional, Protocol, Sequence, Tuple, Union, runtime_checkable

import numpy as np

from .nn import (MaxPoolSet, Module, ShapeMismatch, Sequential, Linear, dense_stage,
                 load_checkpoint, save_checkpoint, softmax)

ARCH_FORMAT = "ifc-grl-arch/1"
N_CLASSES = 11
RELATION_DIM = 6
RELATIONAL_WIDTHS = (6, 16, 32, 64, 64, 96, 128)
RELATIONAL_TAPS = (2, 4, 6)
ENCODER_WIDTHS = (3, 64, 128, 256)
FUSION_HIDDEN = (512, 256, 128)

VARIANTS = ("full", "geometric_only", "relational_only", "no_fusion")
VARIANT_ALIASES = {"geo": "geometric_only", "rel": "relational_only", "nofusion": "no_fusion",
                   "full": "full", "geometric_only": "geometric_only",
                   "relational_only": "relational_only", "no_fusion": "no_fusion"}


class VariantMismatch(ValueError):
    pass


@runtime_checkable
class GeometricBackbone(Protocol):
    """Anything that maps a batch of object geometry to (batch, descriptor_size).

    It must also behave as a :class:`~ifc_grl.nn.Module` (parameters,
    train/eval, backward) so the model can train it.
    """

    descriptor_size: int

    def forward(self, geometry: np.ndarray) -> np.ndarray: ...

    def backward(self, grad_out: np.ndarray) -> np.ndarray: ...


class RelationalExtractor(Module):
    """Six dense stages; outputs of stages 2, 4 and 6 are concatenated."""

    def __init__(self, rng: np.random.Generator, widths: Sequence[int] = RELATIONAL_WIDTHS,
                 taps: Sequence[int] = RELATIONAL_TAPS):
        super().__init__()
        if len(widths) != 7:
            raise ValueError("relational extractor has exactly six stages")
        self.widths = tuple(widths)
        self.taps = tuple(taps)
        self.stages = [self.add_module(f"stage{i + 1}", dense_stage(widths[i], widths[i + 1], rng))
                       for i in range(6)]
        self.descriptor_size = sum(widths[t] for t in self.taps)

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.ndim != 2 or x.shape[1] != self.widths[0]:
            raise ShapeMismatch(f"relation input must be (batch, {self.widths[0]}), got {x.shape}")
        outs = []
        for stage in self.stages:
            x = stage.forward(x)
            outs.append(x)
        return np.concatenate([outs[t - 1] for t in self.taps], axis=1)

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        tap_grads = {}
        start = 0
        for t in self.taps:
            width = self.widths[t]
            tap_grads[t] = grad_out[:, start:start + width]
            start += width
        grad = None
        for i in range(6, 0, -1):
            if i in tap_grads:
                grad = tap_grads[i] if grad is None else grad + tap_grads[i]
            grad = self.stages[i - 1].backward(grad)
        return grad


class MiniPointEncoder(Module):
    """Shared per-point MLP followed by a max over points."""

    def __init__(self, rng: np.random.Generator, widths: Sequence[int] = ENCODER_WIDTHS):
        super().__init__()
        self.widths = tuple(widths)
        self.mlp = self.add_module("mlp", Sequential(
            *[dense_stage(widths[i], widths[i + 1], rng) for i in range(len(widths) - 1)]))
        self.pool = self.add_module("pool", MaxPoolSet())
        self.descriptor_size = widths[-1]

    def forward(self, clouds: np.ndarray) -> np.ndarray:
        if clouds.ndim != 3 or clouds.shape[2] != self.widths[0]:
            raise ShapeMismatch(f"point clouds must be (batch, points, {self.widths[0]}), got {clouds.shape}")
        return self.pool.forward(self.mlp.forward(clouds))

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        return self.mlp.backward(self.pool.backward(grad_out))


class FusionModule(Module):
    def __init__(self, in_features: int, rng: np.random.Generator, hidden: Sequence[int] = FUSION_HIDDEN):
        super().__init__()
        self.widths = (in_features, in_features) + tuple(hidden)
        self.mlp = self.add_module("mlp", Sequential(
            *[dense_stage(self.widths[i], self.widths[i + 1], rng) for i in range(len(self.widths) - 1)]))
        self.descriptor_size = self.widths[-1]

    def forward(self, x: np.ndarray) -> np.ndarray:
        return self.mlp.forward(x)

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        return self.mlp.backward(grad_out)


def transform_relations(counts: np.ndarray, mode: str = "log1p") -> np.ndarray:
    counts = np.asarray(counts, dtype=np.float64)
    if mode == "log1p":
        return np.log1p(counts)
    if mode == "raw":
        return counts
    raise ValueError(f"unknown relation transform {mode!r}")


class GRModel(Module):
    def __init__(self, variant: str = "full", seed: int = 0, *,
                 backbone: Optional[GeometricBackbone] = None,
                 encoder_widths: Sequence[int] = ENCODER_WIDTHS,
                 relational_widths: Sequence[int] = RELATIONAL_WIDTHS,
                 fusion_hidden: Sequence[int] = FUSION_HIDDEN,
                 n_classes: int = N_CLASSES,
                 relation_transform: str = "log1p"):
        super().__init__()
        if variant not in VARIANT_ALIASES:
            raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
        variant = VARIANT_ALIASES[variant]
        rng = np.random.default_rng(seed)
        self.variant = variant
        self.seed = seed
        self.n_classes = n_classes
        self.relation_transform = relation_transform
        self.encoder_widths = tuple(encoder_widths)
        self.relational_widths = tuple(relational_widths)
        self.fusion_hidden = tuple(fusion_hidden)
        self.uses_geometry = variant != "relational_only"
        self.uses_relations = variant != "geometric_only"

        self.backbone = None
        self.relational = None
        self.fusion = None
        width = 0
        if self.uses_geometry:
            if backbone is None:
                backbone = MiniPointEncoder(rng, encoder_widths)
            self.backbone = self.add_module("backbone", backbone)
            width += backbone.descriptor_size
        if self.uses_relations:
            self.relational = self.add_module("relational", RelationalExtractor(rng, relational_widths))
            width += self.relational.descriptor_size
        if variant != "no_fusion":
            self.fusion = self.add_module("fusion", FusionModule(width, rng, fusion_hidden))
            width = self.fusion.descriptor_size
        self.classifier = self.add_module("classifier", Linear(width, n_classes, rng))
        self._split = None

    @property
    def geometric_size(self) -> int:
        return self.backbone.descriptor_size if self.backbone is not None else 0

    def forward(self, clouds: Optional[np.ndarray] = None, relations: Optional[np.ndarray] = None) -> np.ndarray:
        """Logits for a batch; ``relations`` are raw counts (transformed here)."""
        parts = []
        if self.uses_geometry:
            if clouds is None:
                raise VariantMismatch(f"variant {self.variant} needs point clouds")
            parts.append(self.backbone.forward(np.asarray(clouds, dtype=np.float64)))
        if self.uses_relations:
            if relations is None:
                raise VariantMismatch(f"variant {self.variant} needs relation vectors")
            relations = np.asarray(relations, dtype=np.float64)
            parts.append(self.relational.forward(transform_relations(relations, self.relation_transform)))
        if len(parts) == 2 and parts[0].shape[0] != parts[1].shape[0]:
            raise ShapeMismatch("geometry and relation batches differ in size")
        self._split = [p.shape[1] for p in parts]
        x = parts[0] if len(parts) == 1 else np.concatenate(parts, axis=1)
        if self.fusion is not None:
            x = self.fusion.forward(x)
        return self.classifier.forward(x)

    def backward(self, grad_logits: np.ndarray) -> None:
        grad = self.classifier.backward(grad_logits)
        if self.fusion is not None:
            grad = self.fusion.backward(grad)
        start = 0
        branches = [m for m in (self.backbone, self.relational) if m is not None]
        for module, width in zip(branches, self._split):
            module.backward(grad[:, start:start + width])
            start += width

    def predict_proba(self, clouds=None, relations=None) -> np.ndarray:
        return softmax(self.forward(clouds, relations))

    def arch_config(self) -> "OrderedDict[str, str]":
        if self.backbone is not None and not isinstance(self.backbone, MiniPointEncoder):
            backbone = type(self.backbone).__name__
        else:
            backbone = "MiniPointEncoder"
        return OrderedDict([
            ("format", ARCH_FORMAT),
            ("variant", self.variant),
            ("backbone", backbone),
            ("geometric_size", str(self.geometric_size)),
            ("encoder_widths", ",".join(map(str, self.encoder_widths))),
            ("relational_widths", ",".join(map(str, self.relational_widths))),
            ("fusion_hidden", ",".join(map(str, self.fusion_hidden))),
            ("n_classes", str(self.n_classes)),
            ("relation_transform", self.relation_transform),
            ("seed", str(self.seed)),
        ])


def _ints(text: str) -> Tuple[int, ...]:
    return tuple(int(x) for x in text.split(",") if x)


def save_model(model: GRModel, directory: Union[str, Path]) -> Path:
    """Write ``weights.ckpt`` and ``arch.txt`` into ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    save_checkpoint(model.state_dict(), directory / "weights.ckpt")
    arch = "".join(f"{k}={v}\n" for k, v in model.arch_config().items())
    (directory / "arch.txt").write_text(arch, encoding="utf-8")
    return directory


def read_arch(directory: Union[str, Path]) -> Dict[str, str]:
    lines = (Path(directory) / "arch.txt").read_text(encoding="utf-8").splitlines()
    arch = dict(line.split("=", 1) for line in lines if line.strip())
    if arch.get("format") != ARCH_FORMAT:
        raise ValueError(f"unsupported architecture format {arch.get('format')!r}")
    return arch


def load_model(directory: Union[str, Path]) -> GRModel:
    arch = read_arch(directory)
    if arch["backbone"] != "MiniPointEncoder":
        raise ValueError(f"cannot rebuild custom backbone {arch['backbone']!r}")
    model = GRModel(arch["variant"], int(arch["seed"]),
                    encoder_widths=_ints(arch["encoder_widths"]),
                    relational_widths=_ints(arch["relational_widths"]),
                    fusion_hidden=_ints(arch["fusion_hidden"]),
                    n_classes=int(arch["n_classes"]),
                    relation_transform=arch["relation_transform"])
    model.load_state_dict(load_checkpoint(Path(directory) / "weights.ckpt"))
    return model


# ---------------------------------------------------------------------------
# Cost accounting
# ---------------------------------------------------------------------------

def count_parameters(model: GRModel) -> "OrderedDict[str, int]":
    """Trainable scalars per top-level module, plus ``total``."""
    counts: "OrderedDict[str, int]" = OrderedDict()
    for name, module in model._modules.items():
        counts[name] = module.num_parameters()
    counts["total"] = sum(counts.values())
    return counts


def count_linear_macs(model: GRModel, n_points: int) -> "OrderedDict[str, int]":
    """Multiply-accumulates of the linear layers for one object."""
    macs: "OrderedDict[str, int]" = OrderedDict()
    for name, module in model._modules.items():
        total = 0
        for m in module.modules():
            if isinstance(m, Linear):
                per = m.in_features * m.out_features
                total += per * (n_points if name == "backbone" and isinstance(module, MiniPointEncoder) else 1)
        macs[name] = total
    macs["total"] = sum(macs.values())
    return macs


def variant_like(model: GRModel, variant: str) -> GRModel:
    return GRModel(variant, model.seed, encoder_widths=model.encoder_widths,
                   relational_widths=model.relational_widths, fusion_hidden=model.fusion_hidden,
                   n_classes=model.n_classes, relation_transform=model.relation_transform)


def parameter_cost(model: GRModel, baseline: str = "geometric_only") -> Dict[str, int]:
    """Parameters and MACs ``model`` adds over the ``baseline`` variant of the same configuration."""
    base = variant_like(model, baseline)
    # the backbone is shared, so its per-point MACs cancel for any point count
    return {
        "params": count_parameters(model)["total"] - count_parameters(base)["total"],
        "macs": count_linear_macs(model, 1)["total"] - count_linear_macs(base, 1)["total"],
    }
