from __future__ import annotations

import dataclasses

from .tensor import Tensor


def named_parameters(obj, prefix: str = "") -> dict[str, Tensor]:
    """Walk dataclasses, lists and dicts collecting ``Tensor`` leaves in field order.

    Only tensors with ``requires_grad`` are returned; names are dotted paths.
    """
    out: dict[str, Tensor] = {}

    def visit(node, name):
        if isinstance(node, Tensor):
            if node.requires_grad:
                out[name] = node
        elif dataclasses.is_dataclass(node) and not isinstance(node, type):
            for f in dataclasses.fields(node):
                visit(getattr(node, f.name), f"{name}.{f.name}" if name else f.name)
        elif isinstance(node, (list, tuple)):
            for i, item in enumerate(node):
                visit(item, f"{name}.{i}" if name else str(i))
        elif isinstance(node, dict):
            for k, item in node.items():
                visit(item, f"{name}.{k}" if name else str(k))

    visit(obj, prefix)
    return out
