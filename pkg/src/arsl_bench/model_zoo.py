"""Backbones with frozen early blocks and a fresh classification head.

The five ImageNet backbones come from torchvision's architecture
definitions; their weights are read from local state-dict files so nothing
is downloaded implicitly. ``TINY_CNN`` is a ~10^5-parameter network that
trains in seconds on CPU and needs no weights at all.
"""

from __future__ import annotations

import enum
import json
import logging
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import torch
from torch import nn

from .errors import FreezePolicyError, InputShapeError, WeightLoadError

logger = logging.getLogger(__name__)

WEIGHTS_DIR_ENV = "ARSL_WEIGHTS_DIR"
IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


class BackboneId(str, enum.Enum):
    RESNET50 = "resnet50"
    MOBILENETV2 = "mobilenetv2"
    EFFICIENTNETB7 = "efficientnetb7"
    GOOGLE_VIT = "google_vit"
    MICROSOFT_SWIN = "microsoft_swin"
    TINY_CNN = "tiny_cnn"

    @classmethod
    def parse(cls, value) -> "BackboneId":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            return cls[str(value).upper()]

    @property
    def display_name(self) -> str:
        return DISPLAY_NAMES[self]


DISPLAY_NAMES = {
    BackboneId.RESNET50: "Resnet50",
    BackboneId.MOBILENETV2: "MobileNetV2",
    BackboneId.EFFICIENTNETB7: "EfficientNetB7",
    BackboneId.GOOGLE_VIT: "Google ViT",
    BackboneId.MICROSOFT_SWIN: "Microsoft Swin",
    BackboneId.TINY_CNN: "TinyCNN",
}


@dataclass(frozen=True)
class FreezePolicy:
    unfreeze_depth: int = 1
    head_trainable: bool = True

    def __post_init__(self):
        if self.unfreeze_depth < 0:
            raise FreezePolicyError(f"unfreeze_depth must be >= 0, got {self.unfreeze_depth}")
        if not self.head_trainable:
            raise FreezePolicyError("the classification head is always trainable")


class TinyCNN(nn.Module):
    """Three conv blocks pooled to a 4x4 grid; 128 * 16 output features.

    The coarse grid keeps the spatial layout that tells glyphs apart, and
    He initialisation keeps activations alive through frozen random blocks.
    """

    feature_dim = 128 * 4 * 4

    def __init__(self):
        super().__init__()
        self.block1 = nn.Sequential(nn.Conv2d(3, 32, 3, stride=4, padding=1), nn.ReLU(), nn.MaxPool2d(2))
        self.block2 = nn.Sequential(nn.Conv2d(32, 64, 3, padding=1), nn.ReLU(), nn.MaxPool2d(2))
        self.block3 = nn.Sequential(
            nn.Conv2d(64, 128, 3, padding=1), nn.ReLU(), nn.AdaptiveAvgPool2d(4), nn.Flatten()
        )
        for m in self.modules():
            if isinstance(m, nn.Conv2d):
                nn.init.kaiming_normal_(m.weight, nonlinearity="relu")
                nn.init.zeros_(m.bias)

    def forward(self, x):
        return self.block3(self.block2(self.block1(x)))


@dataclass(frozen=True)
class _BackboneSpec:
    build: Callable[[], nn.Module]
    head_attr: str | None  # attribute holding the ImageNet classifier
    feature_dim: int
    blocks: Callable[[nn.Module], list[list[str]]]  # parameter-name prefixes, input to output
    fixed_input: int | None = None


def _resnet_blocks(m):
    return [["conv1.", "bn1."]] + [[f"layer{i}."] for i in range(1, 5)]


def _indexed_blocks(m):
    return [[f"features.{i}."] for i in range(len(m.features))]


def _swin_blocks(m):
    blocks = _indexed_blocks(m)
    blocks[-1].append("norm.")
    return blocks


def _vit_blocks(m):
    blocks = [["conv_proj.", "class_token", "encoder.pos_embedding"]]
    blocks += [[f"encoder.layers.{name}."] for name, _ in m.encoder.layers.named_children()]
    blocks[-1].append("encoder.ln.")
    return blocks


def _tiny_blocks(m):
    return [["block1."], ["block2."], ["block3."]]


def _tv(name):
    def build():
        import torchvision.models as tvm

        return getattr(tvm, name)(weights=None)

    return build


BACKBONES: dict[BackboneId, _BackboneSpec] = {
    BackboneId.RESNET50: _BackboneSpec(_tv("resnet50"), "fc", 2048, _resnet_blocks),
    BackboneId.MOBILENETV2: _BackboneSpec(_tv("mobilenet_v2"), "classifier", 1280, _indexed_blocks),
    BackboneId.EFFICIENTNETB7: _BackboneSpec(_tv("efficientnet_b7"), "classifier", 2560, _indexed_blocks),
    BackboneId.GOOGLE_VIT: _BackboneSpec(_tv("vit_b_16"), "heads", 768, _vit_blocks, fixed_input=224),
    BackboneId.MICROSOFT_SWIN: _BackboneSpec(_tv("swin_t"), "head", 768, _swin_blocks),
    BackboneId.TINY_CNN: _BackboneSpec(TinyCNN, None, TinyCNN.feature_dim, _tiny_blocks),
}

# torchvision weight enums used when the source is "torchvision".
_TV_WEIGHTS = {
    BackboneId.RESNET50: ("ResNet50_Weights", "IMAGENET1K_V1"),
    BackboneId.MOBILENETV2: ("MobileNet_V2_Weights", "IMAGENET1K_V1"),
    BackboneId.EFFICIENTNETB7: ("EfficientNet_B7_Weights", "IMAGENET1K_V1"),
    BackboneId.GOOGLE_VIT: ("ViT_B_16_Weights", "IMAGENET1K_V1"),
    BackboneId.MICROSOFT_SWIN: ("Swin_T_Weights", "IMAGENET1K_V1"),
}


def _matches(name: str, prefix: str) -> bool:
    return name.startswith(prefix) if prefix.endswith(".") else name == prefix


def _resolve_weights(backbone_id: BackboneId, weights: str | os.PathLike | None) -> str | Path:
    if weights is not None and str(weights) in ("random", "torchvision"):
        return str(weights)
    if weights is not None:
        return Path(weights)
    cache = os.environ.get(WEIGHTS_DIR_ENV)
    if cache:
        return Path(cache) / f"{backbone_id.value}.pth"
    raise WeightLoadError(
        f"no pretrained weights configured for {backbone_id.value}; set model.weights in the "
        f"config to a state-dict file, or put {backbone_id.value}.pth under ${WEIGHTS_DIR_ENV}"
    )


def _load_state_dict(module: nn.Module, backbone_id: BackboneId, source) -> None:
    if source == "random":
        logger.info("%s: using random weights (structure-only mode)", backbone_id.value)
        return
    if source == "torchvision":
        import torchvision.models as tvm

        enum_name, member = _TV_WEIGHTS[backbone_id]
        try:
            state = getattr(tvm, enum_name)[member].get_state_dict(progress=False)
        except Exception as exc:  # network and cache failures alike
            raise WeightLoadError(f"could not fetch torchvision weights for {backbone_id.value}: {exc}") from exc
    else:
        path = Path(source)
        if not path.is_file():
            raise WeightLoadError(
                f"pretrained weights for {backbone_id.value} not found at {path}; download the "
                f"ImageNet state dict and point model.weights (or ${WEIGHTS_DIR_ENV}) at it"
            )
        try:
            state = torch.load(path, map_location="cpu", weights_only=True)
        except Exception as exc:
            raise WeightLoadError(f"corrupt weight file {path}: {exc}") from exc
        if isinstance(state, dict) and "state_dict" in state:
            state = state["state_dict"]
    try:
        module.load_state_dict(state, strict=True)
    except (RuntimeError, TypeError, AttributeError) as exc:
        raise WeightLoadError(f"weights do not fit {backbone_id.value}: {exc}") from exc


class ModelAdapter(nn.Module):
    """Backbone + new head, with parameters tagged frozen or trainable."""

    def __init__(
        self,
        backbone_id: BackboneId,
        backbone: nn.Module,
        num_classes: int,
        freeze_policy: FreezePolicy,
        seed: int,
        feature_dim: int,
        block_prefixes: list[list[str]],
        head_hidden: tuple[int, ...] = (),
        input_size: int = 224,
        standardize: bool = False,
    ):
        super().__init__()
        self.backbone_id = backbone_id
        self.num_classes = num_classes
        self.freeze_policy = freeze_policy
        self.seed = seed
        self.feature_dim = feature_dim
        self.input_size = input_size
        self.standardize = standardize
        self.head_hidden = tuple(head_hidden)
        self.backbone = backbone

        layers: list[nn.Module] = []
        width = feature_dim
        for h in self.head_hidden:
            layers += [nn.Linear(width, h), nn.ReLU()]
            width = h
        layers.append(nn.Linear(width, num_classes))
        self.head = layers[0] if len(layers) == 1 else nn.Sequential(*layers)

        self.register_buffer("_mean", torch.tensor(IMAGENET_MEAN).view(1, 3, 1, 1), persistent=False)
        self.register_buffer("_std", torch.tensor(IMAGENET_STD).view(1, 3, 1, 1), persistent=False)

        self._assign_blocks(block_prefixes)
        self._apply_freeze()

    # -- parameter bookkeeping ------------------------------------------------

    def _assign_blocks(self, block_prefixes):
        self.block_prefixes = block_prefixes
        owner: dict[str, int] = {}
        for name, _ in self.backbone.named_parameters():
            hits = [i for i, pfx in enumerate(block_prefixes) if any(_matches(name, p) for p in pfx)]
            if len(hits) != 1:
                raise RuntimeError(f"backbone parameter {name} maps to blocks {hits}")
            owner[name] = hits[0]
        self._param_block = owner

    @property
    def num_blocks(self) -> int:
        return len(self.block_prefixes)

    def _apply_freeze(self):
        depth = self.freeze_policy.unfreeze_depth
        if depth > self.num_blocks:
            raise FreezePolicyError(
                f"unfreeze_depth {depth} exceeds the {self.num_blocks} blocks of {self.backbone_id.value}"
            )
        first_trainable = self.num_blocks - depth
        for name, p in self.backbone.named_parameters():
            p.requires_grad_(self._param_block[name] >= first_trainable)
        for p in self.head.parameters():
            p.requires_grad_(True)

    def block_trainable(self, index: int) -> bool:
        return index >= self.num_blocks - self.freeze_policy.unfreeze_depth

    def parameter_groups(self) -> dict[str, dict]:
        """Group name -> {"params": {qualified name: tensor}, "trainable": bool}."""
        groups: dict[str, dict] = {
            f"block_{i}": {"params": {}, "trainable": self.block_trainable(i)} for i in range(self.num_blocks)
        }
        for name, p in self.backbone.named_parameters():
            groups[f"block_{self._param_block[name]}"]["params"][f"backbone.{name}"] = p
        groups["head"] = {
            "params": {f"head.{n}": p for n, p in self.head.named_parameters()},
            "trainable": True,
        }
        return groups

    def trainable_parameters(self) -> list[nn.Parameter]:
        return [p for p in self.parameters() if p.requires_grad]

    def frozen_parameters(self) -> list[nn.Parameter]:
        return [p for p in self.parameters() if not p.requires_grad]

    # -- modes and forward --------------------------------------------------

    def train(self, mode: bool = True):
        super().train(mode)
        if mode:
            # Frozen blocks stay in inference mode so normalisation statistics
            # and dropout match the pretrained behaviour.
            first_trainable = self.num_blocks - self.freeze_policy.unfreeze_depth
            frozen_prefixes = [p for pfx in self.block_prefixes[:first_trainable] for p in pfx if p.endswith(".")]
            for name, module in self.backbone.named_modules():
                if name and any((name + ".").startswith(p) for p in frozen_prefixes):
                    module.eval()
        return self

    def check_input(self, batch: torch.Tensor) -> None:
        expected = (3, self.input_size, self.input_size)
        if batch.ndim != 4 or tuple(batch.shape[1:]) != expected:
            raise InputShapeError(f"expected a batch of shape (B, {expected[0]}, {expected[1]}, {expected[2]}), got {tuple(batch.shape)}")

    def features(self, batch: torch.Tensor) -> torch.Tensor:
        self.check_input(batch)
        if self.standardize:
            batch = (batch - self._mean) / self._std
        return self.backbone(batch)

    def forward(self, batch: torch.Tensor) -> torch.Tensor:
        return self.head(self.features(batch))

    def describe(self) -> dict:
        return {
            "backbone_id": self.backbone_id.value,
            "num_classes": self.num_classes,
            "freeze_policy": asdict(self.freeze_policy),
            "seed": self.seed,
            "head_hidden": list(self.head_hidden),
            "input_size": self.input_size,
            "standardize": self.standardize,
            "feature_dim": self.feature_dim,
        }


def create_model(
    backbone_id,
    num_classes: int,
    freeze_policy: FreezePolicy | None = None,
    seed: int = 0,
    weights=None,
    head_hidden: tuple[int, ...] = (),
    input_size: int = 224,
    standardize: bool = False,
) -> ModelAdapter:
    """Build a classifier for ``num_classes`` classes.

    ``weights`` is a state-dict path, ``"torchvision"`` (fetch ImageNet
    weights through torchvision's cache) or ``"random"`` (architecture only,
    for smoke tests). When omitted, ``$ARSL_WEIGHTS_DIR/<backbone>.pth`` is
    used. TINY_CNN ignores ``weights``.
    """
    bid = BackboneId.parse(backbone_id)
    if num_classes < 2:
        raise ValueError(f"num_classes must be >= 2, got {num_classes}")
    policy = freeze_policy or FreezePolicy()
    spec = BACKBONES[bid]
    if spec.fixed_input is not None and input_size != spec.fixed_input:
        raise InputShapeError(f"{bid.value} requires {spec.fixed_input}x{spec.fixed_input} inputs")
    source = None if bid is BackboneId.TINY_CNN else _resolve_weights(bid, weights)

    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        backbone = spec.build()
        if source is not None:
            _load_state_dict(backbone, bid, source)
        if spec.head_attr is not None:
            setattr(backbone, spec.head_attr, nn.Identity())
        model = ModelAdapter(
            bid,
            backbone,
            num_classes,
            policy,
            seed,
            spec.feature_dim,
            spec.blocks(backbone),
            head_hidden=head_hidden,
            input_size=input_size,
            standardize=standardize,
        )
    model.eval()
    return model


def forward(model: ModelAdapter, batch) -> torch.Tensor:
    """Inference-mode logits for a batch of (B, 3, H, W) images in [0, 1]."""
    x = torch.as_tensor(np.asarray(batch) if not isinstance(batch, torch.Tensor) else batch, dtype=torch.float32)
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            return model(x)
    finally:
        model.train(was_training)


@dataclass(frozen=True)
class FreezeReport:
    total_params: int
    trainable_params: int
    frozen_params: int
    groups: dict[str, dict] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def trainable_parameter_report(model: ModelAdapter) -> FreezeReport:
    groups = {}
    for gname, g in model.parameter_groups().items():
        count = sum(p.numel() for p in g["params"].values())
        groups[gname] = {"params": count, "trainable": g["trainable"]}
    trainable = sum(p.numel() for p in model.parameters() if p.requires_grad)
    frozen = sum(p.numel() for p in model.parameters() if not p.requires_grad)
    return FreezeReport(trainable + frozen, trainable, frozen, groups)


# -- checkpoints ------------------------------------------------------------

def save_checkpoint(model: ModelAdapter, directory, epoch: int, val_accuracy: float) -> Path:
    """Write ``weights.pt`` plus a ``meta.json`` sidecar into ``directory``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    torch.save(model.state_dict(), d / "weights.pt")
    meta = model.describe()
    meta.update(epoch=epoch, val_accuracy=val_accuracy)
    (d / "meta.json").write_text(json.dumps(meta, indent=2), encoding="utf-8")
    return d


def load_checkpoint(directory) -> tuple[ModelAdapter, dict]:
    d = Path(directory)
    try:
        meta = json.loads((d / "meta.json").read_text(encoding="utf-8"))
        state = torch.load(d / "weights.pt", map_location="cpu", weights_only=True)
    except (OSError, ValueError, RuntimeError) as exc:
        raise WeightLoadError(f"cannot read checkpoint {d}: {exc}") from exc
    model = create_model(
        meta["backbone_id"],
        meta["num_classes"],
        FreezePolicy(**meta["freeze_policy"]),
        seed=meta["seed"],
        weights="random",
        head_hidden=tuple(meta.get("head_hidden", ())),
        input_size=meta.get("input_size", 224),
        standardize=meta.get("standardize", False),
    )
    try:
        model.load_state_dict(state, strict=True)
    except RuntimeError as exc:
        raise WeightLoadError(f"checkpoint {d} does not match its metadata: {exc}") from exc
    return model, meta
