"""Graph intermediate representation: types, XML parse/serialize, topological
order, and weight-blob decoding.

A model is a pair of files: an XML document describing nodes (layers), their
ports and attributes, plus the edges wiring them together; and a raw
little-endian fp32 blob holding constant data, addressed by per-node
``offset``/``size`` attributes.

Dimensions are either positive integers or the unknown marker ``?`` (held as
``None``). Parsing accepts unknown dims; the shapes module is what rejects
them for compilation.
"""

from __future__ import annotations

import enum
import heapq
import xml.etree.ElementTree as ET
import xml.parsers.expat
from dataclasses import dataclass, field

import numpy as np

from .errors import GraphError, ParseError, WeightsError

# A dimension extent: a positive integer, or None for the XML marker "?".
Dim = "int | None"

UNKNOWN_DIM_TEXT = "?"


class Op(enum.Enum):
    PARAMETER = "Parameter"
    RESULT = "Result"
    CONST = "Const"
    MATMUL = "MatMul"
    SOFTMAX = "Softmax"
    ADD = "Add"
    MULTIPLY = "Multiply"
    SILU = "SiLU"
    RMSNORM = "RMSNorm"
    ROTARY_APPLY = "RotaryApply"
    SCATTER_ROW_UPDATE = "ScatterRowUpdate"
    GATHER = "Gather"
    RESHAPE = "Reshape"
    TRANSPOSE = "Transpose"
    READ_VALUE = "ReadValue"
    ASSIGN = "Assign"


# Nodes that produce data without consuming any (graph sources).
SOURCE_OPS = frozenset({Op.PARAMETER, Op.CONST, Op.READ_VALUE})
# Nodes that consume data without producing any (graph sinks).
SINK_OPS = frozenset({Op.RESULT, Op.ASSIGN})


@dataclass
class Port:
    id: int
    precision: str = "FP32"
    dims: list = field(default_factory=list)  # list of int | None
    names: frozenset = frozenset()


@dataclass
class Node:
    id: int
    name: str
    op: Op
    attrs: dict = field(default_factory=dict)  # str -> str
    inputs: list = field(default_factory=list)  # list[Port]
    outputs: list = field(default_factory=list)  # list[Port]

    def input_port(self, port_id: int) -> Port:
        for p in self.inputs:
            if p.id == port_id:
                return p
        raise GraphError(f"node {self.id} ({self.name}): no input port {port_id}")

    def output_port(self, port_id: int) -> Port:
        for p in self.outputs:
            if p.id == port_id:
                return p
        raise GraphError(f"node {self.id} ({self.name}): no output port {port_id}")


@dataclass(frozen=True)
class Edge:
    from_layer: int
    from_port: int
    to_layer: int
    to_port: int


@dataclass
class ModelGraph:
    name: str
    nodes: dict = field(default_factory=dict)  # id -> Node
    edges: list = field(default_factory=list)  # list[Edge]

    def incoming(self) -> dict:
        """Map (to_layer, to_port) -> Edge for every edge in the graph."""
        return {(e.to_layer, e.to_port): e for e in self.edges}

    def parameters(self) -> list:
        return [n for n in self.nodes.values() if n.op is Op.PARAMETER]

    def results(self) -> list:
        return [n for n in self.nodes.values() if n.op is Op.RESULT]


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------

# Tiny expat-backed element tree that remembers the source line of every
# element. ElementTree's C parser drops that information, and parse errors
# here are required to point at the offending line.


class _Elem:
    __slots__ = ("tag", "attrs", "children", "text", "line")

    def __init__(self, tag, attrs, line):
        self.tag = tag
        self.attrs = attrs
        self.children = []
        self.text = ""
        self.line = line

    def find_all(self, tag):
        return [c for c in self.children if c.tag == tag]

    def find_one(self, tag):
        found = self.find_all(tag)
        return found[0] if found else None


def _parse_xml(text: str) -> _Elem:
    parser = xml.parsers.expat.ParserCreate()
    root: list = []
    stack: list = []

    def start(tag, attrs):
        elem = _Elem(tag, dict(attrs), parser.CurrentLineNumber)
        if stack:
            stack[-1].children.append(elem)
        else:
            root.append(elem)
        stack.append(elem)

    def end(tag):
        stack.pop()

    def chars(data):
        if stack:
            stack[-1].text += data

    parser.StartElementHandler = start
    parser.EndElementHandler = end
    parser.CharacterDataHandler = chars
    try:
        parser.Parse(text, True)
    except xml.parsers.expat.ExpatError as exc:
        raise ParseError(f"XML syntax error at line {exc.lineno}: "
                         f"{xml.parsers.expat.errors.messages[exc.code]}") from exc
    if not root:
        raise ParseError("XML syntax error: empty document")
    return root[0]


def _parse_int(value: str, what: str, line: int) -> int:
    try:
        return int(value)
    except (TypeError, ValueError):
        raise ParseError(f"line {line}: {what} is not an integer: {value!r}") from None


def _parse_port(elem: _Elem, node_desc: str) -> Port:
    if "id" not in elem.attrs:
        raise ParseError(f"line {elem.line}: port without id in {node_desc}")
    port_id = _parse_int(elem.attrs["id"], "port id", elem.line)
    precision = elem.attrs.get("precision", "FP32")
    if precision != "FP32":
        raise ParseError(
            f"line {elem.line}: unsupported precision {precision!r} in {node_desc} "
            f"(only FP32)")
    dims = []
    for dim_elem in elem.find_all("dim"):
        text = dim_elem.text.strip()
        if text == UNKNOWN_DIM_TEXT:
            dims.append(None)
        else:
            extent = _parse_int(text, "dim", dim_elem.line)
            if extent < 1:
                raise ParseError(f"line {dim_elem.line}: dim must be >= 1, got {extent}")
            dims.append(extent)
    names_text = elem.attrs.get("names", "")
    names = frozenset(n for n in (s.strip() for s in names_text.split(",")) if n)
    return Port(id=port_id, precision=precision, dims=dims, names=names)


def _parse_ports(section: _Elem, node_desc: str) -> list:
    ports = []
    seen = set()
    for port_elem in section.find_all("port"):
        port = _parse_port(port_elem, node_desc)
        if port.id in seen:
            raise ParseError(
                f"line {port_elem.line}: duplicate port id {port.id} in {node_desc}")
        seen.add(port.id)
        ports.append(port)
    return ports


_REQUIRED_ATTRS = {
    Op.CONST: ("offset", "size"),
    Op.READ_VALUE: ("variable_id",),
    Op.ASSIGN: ("variable_id",),
}

_FIXED_ARITY = {
    # op -> (n_inputs, n_outputs)
    Op.PARAMETER: (0, 1),
    Op.RESULT: (1, 0),
    Op.CONST: (0, 1),
    Op.READ_VALUE: (0, 1),
    Op.ASSIGN: (1, 0),
}


def _parse_layer(elem: _Elem) -> Node:
    if "id" not in elem.attrs:
        raise ParseError(f"line {elem.line}: layer without id")
    node_id = _parse_int(elem.attrs["id"], "layer id", elem.line)
    name = elem.attrs.get("name", "")
    type_text = elem.attrs.get("type", "")
    try:
        op = Op(type_text)
    except ValueError:
        raise ParseError(
            f"line {elem.line}: node {node_id}: unsupported op type {type_text!r}"
        ) from None

    attrs = {}
    data_elem = elem.find_one("data")
    if data_elem is not None:
        attrs = dict(data_elem.attrs)

    desc = f"node {node_id} ({name})"
    input_sec = elem.find_one("input")
    output_sec = elem.find_one("output")
    inputs = _parse_ports(input_sec, desc) if input_sec is not None else []
    outputs = _parse_ports(output_sec, desc) if output_sec is not None else []

    if op in _FIXED_ARITY:
        want_in, want_out = _FIXED_ARITY[op]
        if len(inputs) != want_in or len(outputs) != want_out:
            raise ParseError(
                f"line {elem.line}: {desc}: {op.value} must have {want_in} input and "
                f"{want_out} output ports, found {len(inputs)}/{len(outputs)}")
    for key in _REQUIRED_ATTRS.get(op, ()):
        if key not in attrs:
            raise ParseError(
                f"line {elem.line}: {desc}: {op.value} requires attribute {key!r}")
    return Node(id=node_id, name=name, op=op, attrs=attrs, inputs=inputs,
                outputs=outputs)


def parse_model(xml_text: str) -> ModelGraph:
    """Parse a model XML document into a validated ModelGraph.

    Raises ParseError with a node id and source line for structural problems:
    duplicate ids, dangling edge endpoints, unsupported op types, cycles,
    unreachable results.
    """
    root = _parse_xml(xml_text)
    if root.tag != "net":
        raise ParseError(f"line {root.line}: root element must be <net>, got <{root.tag}>")
    graph = ModelGraph(name=root.attrs.get("name", ""))

    layers_sec = root.find_one("layers")
    layer_lines = {}
    if layers_sec is not None:
        for layer_elem in layers_sec.find_all("layer"):
            node = _parse_layer(layer_elem)
            if node.id in graph.nodes:
                raise ParseError(
                    f"line {layer_elem.line}: duplicate node id {node.id}")
            graph.nodes[node.id] = node
            layer_lines[node.id] = layer_elem.line

    edges_sec = root.find_one("edges")
    seen_targets = set()
    if edges_sec is not None:
        for edge_elem in edges_sec.find_all("edge"):
            vals = {}
            for key in ("from-layer", "from-port", "to-layer", "to-port"):
                if key not in edge_elem.attrs:
                    raise ParseError(f"line {edge_elem.line}: edge missing {key!r}")
                vals[key] = _parse_int(edge_elem.attrs[key], key, edge_elem.line)
            edge = Edge(vals["from-layer"], vals["from-port"],
                        vals["to-layer"], vals["to-port"])
            for layer_id, port_id, ports_of in (
                    (edge.from_layer, edge.from_port, "outputs"),
                    (edge.to_layer, edge.to_port, "inputs")):
                node = graph.nodes.get(layer_id)
                if node is None:
                    raise ParseError(
                        f"line {edge_elem.line}: edge references missing node {layer_id}")
                ports = getattr(node, ports_of)
                if not any(p.id == port_id for p in ports):
                    raise ParseError(
                        f"line {edge_elem.line}: edge references missing port "
                        f"{port_id} on node {layer_id} ({node.name})")
            target = (edge.to_layer, edge.to_port)
            if target in seen_targets:
                raise ParseError(
                    f"line {edge_elem.line}: multiple edges target node "
                    f"{edge.to_layer} port {edge.to_port}")
            seen_targets.add(target)
            graph.edges.append(edge)

    _check_graph_invariants(graph, layer_lines)
    return graph


def _check_graph_invariants(graph: ModelGraph, layer_lines: dict) -> None:
    # Every input port of every node is fed by exactly one edge.
    fed = {(e.to_layer, e.to_port) for e in graph.edges}
    for node in graph.nodes.values():
        for port in node.inputs:
            if (node.id, port.id) not in fed:
                line = layer_lines.get(node.id, "?")
                raise ParseError(
                    f"line {line}: node {node.id} ({node.name}): input port "
                    f"{port.id} has no incoming edge")

    # Acyclic (topo_order raises GraphError naming a node on the cycle).
    try:
        topo_order(graph)
    except GraphError as exc:
        raise ParseError(str(exc)) from exc

    # Every Result is reachable from a Parameter, Const, or ReadValue.
    reached = {n.id for n in graph.nodes.values() if n.op in SOURCE_OPS}
    frontier = list(reached)
    consumers = {}
    for e in graph.edges:
        consumers.setdefault(e.from_layer, []).append(e.to_layer)
    while frontier:
        nid = frontier.pop()
        for nxt in consumers.get(nid, ()):
            if nxt not in reached:
                reached.add(nxt)
                frontier.append(nxt)
    for node in graph.nodes.values():
        if node.op is Op.RESULT and node.id not in reached:
            line = layer_lines.get(node.id, "?")
            raise ParseError(
                f"line {line}: node {node.id} ({node.name}): Result not reachable "
                f"from any Parameter, Const, or ReadValue")


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def _dim_text(dim) -> str:
    return UNKNOWN_DIM_TEXT if dim is None else str(dim)


def _ports_to_xml(parent: ET.Element, tag: str, ports: list) -> None:
    if not ports:
        return
    section = ET.SubElement(parent, tag)
    for port in ports:
        attrs = {"id": str(port.id), "precision": port.precision}
        if port.names:
            attrs["names"] = ",".join(sorted(port.names))
        port_elem = ET.SubElement(section, "port", attrs)
        for dim in port.dims:
            ET.SubElement(port_elem, "dim").text = _dim_text(dim)


def serialize_model(graph: ModelGraph) -> str:
    """Render a ModelGraph as XML such that parse_model round-trips it."""
    net = ET.Element("net", {"name": graph.name})
    layers = ET.SubElement(net, "layers")
    for node in graph.nodes.values():
        layer = ET.SubElement(layers, "layer", {
            "id": str(node.id), "name": node.name, "type": node.op.value})
        if node.attrs:
            ET.SubElement(layer, "data", dict(node.attrs))
        _ports_to_xml(layer, "input", node.inputs)
        _ports_to_xml(layer, "output", node.outputs)
    edges = ET.SubElement(net, "edges")
    for e in graph.edges:
        ET.SubElement(edges, "edge", {
            "from-layer": str(e.from_layer), "from-port": str(e.from_port),
            "to-layer": str(e.to_layer), "to-port": str(e.to_port)})
    ET.indent(net)
    return ET.tostring(net, encoding="unicode") + "\n"


# ---------------------------------------------------------------------------
# Topological order
# ---------------------------------------------------------------------------


def topo_order(graph: ModelGraph) -> list:
    """Deterministic topological order of node ids.

    Producers precede consumers; among simultaneously-ready nodes the lowest
    id goes first, which makes the result the lexicographically smallest of
    all valid orders. Raises GraphError naming a node on a cycle.
    """
    indegree = {nid: 0 for nid in graph.nodes}
    consumers = {nid: [] for nid in graph.nodes}
    for e in graph.edges:
        # Parallel edges between the same pair both count; each input port
        # contributes one dependency.
        indegree[e.to_layer] += 1
        consumers[e.from_layer].append(e.to_layer)

    ready = [nid for nid, deg in indegree.items() if deg == 0]
    heapq.heapify(ready)
    order = []
    while ready:
        nid = heapq.heappop(ready)
        order.append(nid)
        for nxt in consumers[nid]:
            indegree[nxt] -= 1
            if indegree[nxt] == 0:
                heapq.heappush(ready, nxt)
    if len(order) != len(graph.nodes):
        remaining = {nid for nid in graph.nodes if nid not in set(order)}
        cycle_node = _find_cycle_node(remaining, graph)
        node = graph.nodes[cycle_node]
        raise GraphError(f"cycle detected involving node {node.id} ({node.name})")
    return order


def _find_cycle_node(remaining: set, graph: ModelGraph) -> int:
    # Within the leftover subgraph every node has an unresolved predecessor,
    # so walking predecessors must revisit a node: that node is on a cycle.
    preds = {}
    for e in graph.edges:
        if e.from_layer in remaining and e.to_layer in remaining:
            preds.setdefault(e.to_layer, e.from_layer)
    current = min(remaining)
    seen = []
    while current not in seen:
        seen.append(current)
        current = preds[current]
    return current


# ---------------------------------------------------------------------------
# Weights
# ---------------------------------------------------------------------------


def load_weights(graph: ModelGraph, blob: bytes) -> dict:
    """Decode every Const node's window of the blob into an fp32 tensor.

    Returns a dict mapping Const node id -> np.ndarray shaped as the node's
    output port. The blob is raw little-endian fp32 with no header.
    """
    consts = {}
    for node in graph.nodes.values():
        if node.op is not Op.CONST:
            continue
        offset = _attr_int(node, "offset")
        size = _attr_int(node, "size")
        dims = node.outputs[0].dims
        if any(d is None for d in dims):
            raise WeightsError(
                f"node {node.id} ({node.name}): Const has dynamic dims {dims}")
        count = int(np.prod(dims)) if dims else 1
        if size != 4 * count:
            raise WeightsError(
                f"node {node.id} ({node.name}): size {size} does not match "
                f"shape {dims} ({4 * count} bytes expected)")
        if offset < 0 or offset + size > len(blob):
            raise WeightsError(
                f"node {node.id} ({node.name}): window [{offset}, {offset + size}) "
                f"outside blob of {len(blob)} bytes")
        data = np.frombuffer(blob, dtype="<f4", count=count, offset=offset)
        consts[node.id] = data.reshape(dims).astype(np.float32, copy=True)
    return consts


def _attr_int(node: Node, key: str) -> int:
    try:
        return int(node.attrs[key])
    except KeyError:
        raise WeightsError(f"node {node.id} ({node.name}): missing attribute {key!r}") from None
    except ValueError:
        raise WeightsError(
            f"node {node.id} ({node.name}): attribute {key!r} is not an integer: "
            f"{node.attrs[key]!r}") from None
