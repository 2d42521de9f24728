# -*- coding: utf-8 -*-
"""
Parameter and FLOPs accounting per component.

Convolutions and linear layers count 2 * out * (in * k^2 + 1) where out is the number of output
elements; attention cores report their own matrix-product cost. Normalisation, activations,
softmax and elementwise gating are not counted.
"""
import csv
import logging
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import torch
import torch.nn as nn

from modules.config import RunConfig
from modules.networks import ModelBundle, build_models
from modules.networks.dgem import ModulatedWindowAttention
from modules.networks.drpm import TemporalSelfAttention

logger = logging.getLogger(__name__)

ROW_ORDER = ("DAM", "DGEM", "Compression", "Shallow", "Modulation", "Reconstruction", "DRPM")


@dataclass(frozen=True)
class BudgetRow:
    name: str
    params: int
    flops: int

    @property
    def mparams(self) -> float:
        return self.params / 1e6

    @property
    def gflops(self) -> float:
        return self.flops / 1e9


@dataclass(frozen=True)
class ComponentFlops:
    """FLOPs of one forward pass per frame for each component of the video path."""
    dam: float
    dgem: float
    drpm: float


def _module_flops(module: nn.Module, inputs: Tuple[torch.Tensor, ...], output) -> int:
    if isinstance(module, nn.Conv2d):
        k = module.kernel_size[0] * module.kernel_size[1]
        return 2 * output.numel() * (module.in_channels // module.groups * k + 1)
    if isinstance(module, nn.Linear):
        return 2 * output.numel() * (module.in_features + 1)
    if isinstance(module, (ModulatedWindowAttention, TemporalSelfAttention)):
        return module.attention_flops(inputs[0])
    return 0


class FlopCounter:
    """Context manager attributing FLOPs of every hooked leaf to the group it was registered under."""

    def __init__(self, groups: Dict[str, nn.Module]):
        self.groups = groups
        self.counts: Dict[str, int] = defaultdict(int)
        self._handles = []

    def __enter__(self) -> "FlopCounter":
        for name, group in self.groups.items():
            for module in group.modules():
                if isinstance(module, (nn.Conv2d, nn.Linear, ModulatedWindowAttention, TemporalSelfAttention)):
                    self._handles.append(module.register_forward_hook(self._hook(name)))
        return self

    def _hook(self, name: str):
        def hook(module, inputs, output):
            if isinstance(output, tuple):
                output = output[0]
            self.counts[name] += _module_flops(module, inputs, output)
        return hook

    def __exit__(self, *exc) -> None:
        for handle in self._handles:
            handle.remove()
        self._handles.clear()

    @property
    def total(self) -> int:
        return sum(self.counts.values())


def count_params(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


def count_params_flops(module: nn.Module, *inputs: torch.Tensor) -> Tuple[int, int]:
    """Parameters and FLOPs of module(*inputs)."""
    with torch.no_grad(), FlopCounter({"all": module}) as counter:
        module(*inputs)
    return count_params(module), counter.total


def _measure(bundle: ModelBundle, lr_size: Tuple[int, int]) -> Dict[str, int]:
    device = next(bundle.dgem.parameters()).device
    x_l = torch.zeros(1, 3, *lr_size, device=device)
    dgem = bundle.dgem
    groups = {
        "DAM": bundle.dam.encoder,
        "Compression": dgem.compression,
        "Shallow": dgem.shallow,
        "Modulation": dgem.blocks,
        "Reconstruction": dgem.reconstruction,
        "DRPM": bundle.drpm,
    }
    history = torch.zeros(1, bundle.drpm.context, bundle.drpm.embed_dim, device=device)
    with torch.no_grad(), FlopCounter(groups) as counter:
        d_map = bundle.dam.encoder.features(x_l)
        dgem(x_l, d_map=d_map)
        bundle.drpm(history)
    counts = dict(counter.counts)
    counts["DGEM"] = sum(counts.get(name, 0) for name in ("Compression", "Shallow", "Modulation", "Reconstruction"))
    return counts


def component_flops(bundle: ModelBundle, lr_size: Tuple[int, int]) -> ComponentFlops:
    counts = _measure(bundle, lr_size)
    return ComponentFlops(dam=float(counts["DAM"]), dgem=float(counts["DGEM"]), drpm=float(counts["DRPM"]))


def budget_report(config: RunConfig, lr_size: Optional[Tuple[int, int]] = None,
                  bundle: Optional[ModelBundle] = None) -> List[BudgetRow]:
    """Rows for DAM, DGEM, its four sub-stages and DRPM, in that order."""
    if lr_size is None:
        side = config.data.patch_size // config.data.scale
        lr_size = (side, side)
    bundle = bundle or build_models(config)
    bundle.eval()
    counts = _measure(bundle, lr_size)
    dgem = bundle.dgem
    params = {
        "DAM": count_params(bundle.dam.encoder),
        "DGEM": count_params(dgem),
        "Compression": count_params(dgem.compression),
        "Shallow": count_params(dgem.shallow),
        "Modulation": count_params(dgem.blocks) + count_params(dgem.norm),
        "Reconstruction": count_params(dgem.reconstruction),
        "DRPM": count_params(bundle.drpm),
    }
    rows = [BudgetRow(name, params[name], counts.get(name, 0)) for name in ROW_ORDER]
    logger.debug(f"Budget at {lr_size[0]}x{lr_size[1]}: " + ", ".join(f"{r.name}={r.params}" for r in rows))
    return rows


def format_budget_table(rows: Sequence[BudgetRow]) -> List[str]:
    lines = [f"{'Component':<16}{'Params (M)':>12}{'FLOPs (G)':>12}"]
    for row in rows:
        indent = "  " if row.name in ("Compression", "Shallow", "Modulation", "Reconstruction") else ""
        lines.append(f"{indent + row.name:<16}{row.mparams:>12.4f}{row.gflops:>12.4f}")
    return lines


def write_budget_csv(rows: Sequence[BudgetRow], path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["component", "params", "flops"])
        for row in rows:
            writer.writerow([row.name, row.params, row.flops])
    return path
