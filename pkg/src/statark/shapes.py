"""Static shape inference and validation.

The compile target accepts only graphs where every tensor dimension is a
known integer, so this module both computes the exact output shape of every
op and cross-checks it against what the XML declares. Declared dims are the
contract: any disagreement is a violation, never silently corrected.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from . import ir
from .errors import ShapeError


@dataclass
class Violation:
    node_id: int
    node_name: str
    reason: str

    def render(self) -> str:
        return f"node {self.node_id} ({self.node_name}): {self.reason}"


@dataclass
class ShapeReport:
    # node id -> list of output shapes (one per output port)
    shapes: dict = field(default_factory=dict)
    violations: list = field(default_factory=list)

    @property
    def is_static_valid(self) -> bool:
        return not self.violations

    def render(self) -> str:
        return "\n".join(v.render() for v in self.violations)


def _is_scalar(shape: list) -> bool:
    return math.prod(shape) == 1


def _parse_int_list(text: str, what: str) -> list:
    try:
        return [int(v) for v in text.split(",") if v.strip() != ""]
    except ValueError:
        raise ShapeError(f"malformed {what} attribute: {text!r}") from None


def _matmul_shape(attrs: dict, shapes: list) -> list:
    a, b = shapes
    if len(a) < 2 or len(b) < 2:
        raise ShapeError(f"MatMul needs rank >= 2 operands, got {a} x {b}")
    a = a[:-2] + [a[-1], a[-2]] if attrs.get("transpose_a") == "true" else list(a)
    b = b[:-2] + [b[-1], b[-2]] if attrs.get("transpose_b") == "true" else list(b)
    m, k = a[-2], a[-1]
    k2, n = b[-2], b[-1]
    if k != k2:
        raise ShapeError(f"MatMul contraction mismatch: {k} != {k2} for {a} x {b}")
    batch_a, batch_b = a[:-2], b[:-2]
    if batch_b and batch_b != batch_a:
        raise ShapeError(
            f"MatMul batch dims must be equal or absent on the right: {a} x {b}")
    return batch_a + [m, n]


def _elementwise_shape(op_name: str, shapes: list) -> list:
    a, b = shapes
    if a == b:
        return list(a)
    if _is_scalar(b):
        return list(a)
    raise ShapeError(
        f"{op_name} requires equal shapes or a scalar second operand, got {a} + {b}")


def _rmsnorm_shape(shapes: list) -> list:
    x, w = shapes
    if not x:
        raise ShapeError("RMSNorm input must have rank >= 1")
    if w != [x[-1]]:
        raise ShapeError(f"RMSNorm weight shape {w} does not match last dim of {x}")
    return list(x)


def _rotary_shape(shapes: list) -> list:
    x, f = shapes
    if len(x) < 2:
        raise ShapeError(f"RotaryApply input must have rank >= 2, got {x}")
    head_dim = x[-1]
    if head_dim % 2 != 0:
        raise ShapeError(f"RotaryApply head_dim must be even, got {head_dim}")
    if len(f) < 2 or f[-2:] != [head_dim // 2, 2]:
        raise ShapeError(
            f"RotaryApply freqs shape {f} does not end in [{head_dim // 2}, 2]")
    # Leading freq dims must broadcast against the pair view [..., heads, d/2, 2].
    pair_lead = x[:-1]
    f_lead = f[:-2]
    for xd, fd in zip(reversed(pair_lead), reversed(f_lead)):
        if fd != 1 and fd != xd:
            raise ShapeError(
                f"RotaryApply freqs leading dims {f_lead} do not broadcast over {x}")
    if len(f_lead) > len(pair_lead):
        raise ShapeError(
            f"RotaryApply freqs rank too high: {f} against input {x}")
    return list(x)


def _scatter_shape(shapes: list) -> list:
    cache, row, values = shapes
    if len(cache) < 2:
        raise ShapeError(f"ScatterRowUpdate cache must have rank >= 2, got {cache}")
    if not _is_scalar(row):
        raise ShapeError(f"ScatterRowUpdate row index must be a scalar, got {row}")
    expected = list(cache)
    expected[-2] = 1
    if values != expected:
        raise ShapeError(
            f"ScatterRowUpdate values shape {values} is not one row {expected} "
            f"of cache {cache}")
    return list(cache)


def _gather_shape(shapes: list) -> list:
    table, indices = shapes
    if not table:
        raise ShapeError("Gather table must have rank >= 1")
    return list(indices) + list(table[1:])


def _reshape_shape(attrs: dict, shapes: list) -> list:
    (x,) = shapes
    target = _parse_int_list(attrs.get("shape", ""), "shape")
    if any(d < 1 for d in target):
        raise ShapeError(f"Reshape target must be positive dims, got {target}")
    if math.prod(target) != math.prod(x):
        raise ShapeError(
            f"Reshape cannot map {x} ({math.prod(x)} elems) to {target} "
            f"({math.prod(target)} elems)")
    return target


def _transpose_shape(attrs: dict, shapes: list) -> list:
    (x,) = shapes
    order = _parse_int_list(attrs.get("order", ""), "order")
    if sorted(order) != list(range(len(x))):
        raise ShapeError(f"Transpose order {order} is not a permutation of rank {len(x)}")
    return [x[i] for i in order]


def _softmax_shape(attrs: dict, shapes: list) -> list:
    (x,) = shapes
    if not x:
        raise ShapeError("Softmax input must have rank >= 1")
    axis = attrs.get("axis")
    if axis is not None and int(axis) not in (-1, len(x) - 1):
        raise ShapeError(f"Softmax only supports the last axis, got axis={axis}")
    return list(x)


def _unary_shape(shapes: list) -> list:
    (x,) = shapes
    return list(x)


def _expect_arity(op: ir.Op, shapes: list, n: int) -> None:
    if len(shapes) != n:
        raise ShapeError(f"{op.value} expects {n} inputs, got {len(shapes)}")


def infer_output_shape(op: ir.Op, attrs: dict, input_shapes: list,
                       declared_outputs: list | None = None) -> list:
    """Exact output shapes for one node, as a list of dim-lists.

    Source ops (Parameter, Const, ReadValue) have no rule beyond their
    declaration, so their declared output shapes must be supplied. Sink ops
    (Result, Assign) yield no outputs. All input shapes must be fully static;
    violations raise ShapeError.
    """
    for s in input_shapes:
        if any(d is None for d in s):
            raise ShapeError(f"dynamic dimension in input shape {s}")

    if op in ir.SOURCE_OPS:
        if declared_outputs is None:
            raise ShapeError(f"{op.value} shape comes from its declaration")
        return [list(s) for s in declared_outputs]
    if op in ir.SINK_OPS:
        _expect_arity(op, input_shapes, 1)
        return []

    if op is ir.Op.MATMUL:
        _expect_arity(op, input_shapes, 2)
        return [_matmul_shape(attrs, input_shapes)]
    if op in (ir.Op.ADD, ir.Op.MULTIPLY):
        _expect_arity(op, input_shapes, 2)
        return [_elementwise_shape(op.value, input_shapes)]
    if op is ir.Op.SILU:
        _expect_arity(op, input_shapes, 1)
        return [_unary_shape(input_shapes)]
    if op is ir.Op.SOFTMAX:
        _expect_arity(op, input_shapes, 1)
        return [_softmax_shape(attrs, input_shapes)]
    if op is ir.Op.RMSNORM:
        _expect_arity(op, input_shapes, 2)
        return [_rmsnorm_shape(input_shapes)]
    if op is ir.Op.ROTARY_APPLY:
        _expect_arity(op, input_shapes, 2)
        return [_rotary_shape(input_shapes)]
    if op is ir.Op.SCATTER_ROW_UPDATE:
        _expect_arity(op, input_shapes, 3)
        return [_scatter_shape(input_shapes)]
    if op is ir.Op.GATHER:
        _expect_arity(op, input_shapes, 2)
        return [_gather_shape(input_shapes)]
    if op is ir.Op.RESHAPE:
        _expect_arity(op, input_shapes, 1)
        return [_reshape_shape(attrs, input_shapes)]
    if op is ir.Op.TRANSPOSE:
        _expect_arity(op, input_shapes, 1)
        return [_transpose_shape(attrs, input_shapes)]
    raise ShapeError(f"no shape rule for op {op.value}")  # unreachable: closed enum


def propagate_shapes(graph: ir.ModelGraph) -> ShapeReport:
    """Walk the graph in topological order, inferring and checking shapes.

    Collects every problem instead of stopping at the first: dynamic dims,
    declared-vs-inferred mismatches, and rule failures all land in the
    report. When a node's rule fails its declared shapes are used downstream
    so later nodes still get checked.
    """
    report = ShapeReport()
    incoming = graph.incoming()
    order = ir.topo_order(graph)

    def flag(node, reason):
        report.violations.append(Violation(node.id, node.name, reason))

    for nid in order:
        node = graph.nodes[nid]
        for port in list(node.inputs) + list(node.outputs):
            if any(d is None for d in port.dims):
                flag(node, f"dynamic dimension on port {port.id}: "
                           f"{[ir._dim_text(d) for d in port.dims]}")

        # Resolve each input port's upstream shape (inferred where possible).
        input_shapes = []
        resolvable = True
        for port in sorted(node.inputs, key=lambda p: p.id):
            edge = incoming.get((node.id, port.id))
            if edge is None:
                flag(node, f"input port {port.id} has no incoming edge")
                resolvable = False
                continue
            src = graph.nodes[edge.from_layer]
            src_ports = sorted(src.outputs, key=lambda p: p.id)
            src_index = next(i for i, p in enumerate(src_ports) if p.id == edge.from_port)
            upstream = report.shapes.get(src.id)
            shape = (upstream[src_index] if upstream is not None
                     else list(src.output_port(edge.from_port).dims))
            if any(d is None for d in shape):
                resolvable = False
            else:
                if shape != port.dims:
                    flag(node, f"input port {port.id} declares {port.dims} but "
                               f"receives {shape}")
            input_shapes.append(shape)

        declared = [list(p.dims) for p in sorted(node.outputs, key=lambda p: p.id)]
        if node.op in ir.SOURCE_OPS:
            if not any(any(d is None for d in s) for s in declared):
                report.shapes[node.id] = declared
            continue

        if not resolvable:
            report.shapes[node.id] = declared
            continue
        try:
            inferred = infer_output_shape(node.op, node.attrs, input_shapes)
        except ShapeError as exc:
            flag(node, str(exc))
            report.shapes[node.id] = declared
            continue
        if len(inferred) != len(declared):
            flag(node, f"declares {len(declared)} outputs, rule gives {len(inferred)}")
        else:
            for port, want, got in zip(sorted(node.outputs, key=lambda p: p.id),
                                       inferred, declared):
                if got != want:
                    flag(node, f"output port {port.id} declares {got} but "
                               f"inference gives {want}")
        report.shapes[node.id] = inferred
    return report
