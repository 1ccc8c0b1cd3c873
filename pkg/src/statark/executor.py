"""Compile static-valid graphs into executable plans and run them.

A CompiledModel owns one preallocated fp32 buffer per output port, a
topologically ordered step list, and one named state per ReadValue/Assign
pair. Parameters are bound by name only. State writes land when the call
finishes: a ReadValue always sees the value the state had when infer()
started, which makes a stateful graph behave exactly like its
Parameter/Result twin with the caller threading tensors between calls.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import ir, kernels, shapes
from .errors import CompileError, InferError

log = logging.getLogger("statark.executor")


@dataclass
class _State:
    variable_id: str
    current: np.ndarray
    initial: np.ndarray


@dataclass
class _Step:
    node: ir.Node
    input_keys: list  # [(node_id, port_id)] in input-port order
    output_keys: list


@dataclass
class CompiledModel:
    graph: ir.ModelGraph
    buffers: dict = field(default_factory=dict)  # (node_id, port_id) -> ndarray
    plan: list = field(default_factory=list)
    parameters: dict = field(default_factory=dict)  # name -> buffer key
    results: dict = field(default_factory=dict)  # name -> source buffer key
    states: dict = field(default_factory=dict)  # variable_id -> _State

    def parameter_shape(self, name: str) -> tuple:
        return self.buffers[self.parameters[name]].shape


def compile_model(graph: ir.ModelGraph, consts: dict,
                  initial_states: dict | None = None) -> CompiledModel:
    """Build an executable plan for a graph with zero shape violations.

    `consts` maps Const node id -> fp32 tensor (see ir.load_weights). States
    start as zeros unless `initial_states` overrides a variable_id.
    """
    report = shapes.propagate_shapes(graph)
    if not report.is_static_valid:
        raise CompileError(
            "graph has shape violations:\n" + report.render())

    model = CompiledModel(graph=graph)
    incoming = graph.incoming()
    order = ir.topo_order(graph)

    for nid in order:
        node = graph.nodes[nid]
        for port in node.outputs:
            model.buffers[(nid, port.id)] = np.zeros(port.dims, dtype=np.float32)

    read_values: dict = {}
    assigns: dict = {}
    param_names = set()
    result_names = set()
    for nid in order:
        node = graph.nodes[nid]
        input_keys = []
        for port in sorted(node.inputs, key=lambda p: p.id):
            edge = incoming[(nid, port.id)]
            input_keys.append((edge.from_layer, edge.from_port))
        output_keys = [(nid, p.id) for p in sorted(node.outputs, key=lambda p: p.id)]

        if node.op is ir.Op.PARAMETER:
            if node.name in param_names:
                raise CompileError(f"duplicate Parameter name {node.name!r}")
            param_names.add(node.name)
            model.parameters[node.name] = output_keys[0]
        elif node.op is ir.Op.RESULT:
            if node.name in result_names:
                raise CompileError(f"duplicate Result name {node.name!r}")
            result_names.add(node.name)
            model.results[node.name] = input_keys[0]
        elif node.op is ir.Op.CONST:
            if nid not in consts:
                raise CompileError(
                    f"node {nid} ({node.name}): Const has no tensor in the weight store")
            tensor = kernels.as_tensor(consts[nid])
            want = tuple(node.outputs[0].dims)
            if tensor.shape != want:
                raise CompileError(
                    f"node {nid} ({node.name}): Const tensor shape {tensor.shape} "
                    f"does not match declared {want}")
            model.buffers[output_keys[0]][...] = tensor
        elif node.op is ir.Op.READ_VALUE:
            var = node.attrs["variable_id"]
            if var in read_values:
                raise CompileError(f"duplicate ReadValue for variable {var!r}")
            read_values[var] = node
        elif node.op is ir.Op.ASSIGN:
            var = node.attrs["variable_id"]
            if var in assigns:
                raise CompileError(f"duplicate Assign for variable {var!r}")
            assigns[var] = node

        if node.op not in (ir.Op.PARAMETER, ir.Op.CONST):
            model.plan.append(_Step(node=node, input_keys=input_keys,
                                    output_keys=output_keys))

    for var, node in read_values.items():
        if var not in assigns:
            raise CompileError(
                f"node {node.id} ({node.name}): ReadValue variable {var!r} has "
                f"no matching Assign")
    for var, node in assigns.items():
        if var not in read_values:
            raise CompileError(
                f"node {node.id} ({node.name}): Assign variable {var!r} has "
                f"no matching ReadValue")

    for var, rv in read_values.items():
        shape = tuple(rv.outputs[0].dims)
        assign_in = assigns[var]
        edge = incoming[(assign_in.id, assign_in.inputs[0].id)]
        src_shape = tuple(graph.nodes[edge.from_layer]
                          .output_port(edge.from_port).dims)
        if src_shape != shape:
            raise CompileError(
                f"variable {var!r}: ReadValue shape {shape} != Assign input "
                f"shape {src_shape}")
        init = np.zeros(shape, dtype=np.float32)
        if initial_states and var in initial_states:
            override = kernels.as_tensor(initial_states[var])
            if override.shape != shape:
                raise CompileError(
                    f"variable {var!r}: initial state shape {override.shape} "
                    f"!= declared {shape}")
            init = override.copy()
        model.states[var] = _State(variable_id=var, current=init.copy(),
                                   initial=init)

    log.debug("compiled %s: %d steps, %d buffers, %d states",
              graph.name, len(model.plan), len(model.buffers), len(model.states))
    return model


def _attr_flag(node: ir.Node, key: str) -> bool:
    return node.attrs.get(key) == "true"


def _run_step(model: CompiledModel, step: _Step, pending: dict) -> None:
    node = step.node
    ins = [model.buffers[k] for k in step.input_keys]
    op = node.op

    if op is ir.Op.RESULT:
        return
    if op is ir.Op.READ_VALUE:
        model.buffers[step.output_keys[0]][...] = model.states[
            node.attrs["variable_id"]].current
        return
    if op is ir.Op.ASSIGN:
        pending[node.attrs["variable_id"]] = ins[0].copy()
        return

    if op is ir.Op.MATMUL:
        out = kernels.matmul(ins[0], ins[1], _attr_flag(node, "transpose_a"),
                             _attr_flag(node, "transpose_b"))
    elif op is ir.Op.SOFTMAX:
        out = kernels.softmax_lastdim(ins[0])
    elif op is ir.Op.ADD:
        out = kernels.add(ins[0], ins[1])
    elif op is ir.Op.MULTIPLY:
        out = kernels.multiply(ins[0], ins[1])
    elif op is ir.Op.SILU:
        out = kernels.silu(ins[0])
    elif op is ir.Op.RMSNORM:
        out = kernels.rmsnorm(ins[0], ins[1], float(node.attrs.get("eps", "1e-5")))
    elif op is ir.Op.ROTARY_APPLY:
        out = kernels.apply_rotary(ins[0], ins[1])
    elif op is ir.Op.SCATTER_ROW_UPDATE:
        out = kernels.scatter_row_update(ins[0], int(round(float(ins[1].reshape(-1)[0]))),
                                         ins[2])
    elif op is ir.Op.GATHER:
        out = kernels.gather_rows(ins[0], ins[1])
    elif op is ir.Op.RESHAPE:
        target = [int(v) for v in node.attrs["shape"].split(",")]
        out = ins[0].reshape(target)
    elif op is ir.Op.TRANSPOSE:
        order = [int(v) for v in node.attrs["order"].split(",")]
        out = np.ascontiguousarray(np.transpose(ins[0], order))
    else:
        raise InferError(f"node {node.id} ({node.name}): cannot execute {op.value}")
    model.buffers[step.output_keys[0]][...] = out


def infer(model: CompiledModel, inputs: dict) -> dict:
    """Run the plan on name-keyed inputs, returning name-keyed result copies.

    Inputs must cover exactly the Parameter names, each with the declared
    shape (no implicit reshape). State writes become visible on the next call.
    """
    missing = set(model.parameters) - set(inputs)
    if missing:
        raise InferError(f"missing inputs: {sorted(missing)}")
    extra = set(inputs) - set(model.parameters)
    if extra:
        raise InferError(f"unknown inputs: {sorted(extra)}")
    for name, value in inputs.items():
        buf = model.buffers[model.parameters[name]]
        arr = kernels.as_tensor(value)
        if arr.shape != buf.shape:
            raise InferError(
                f"input {name!r}: shape {arr.shape} does not match declared "
                f"{buf.shape}")
        buf[...] = arr

    pending: dict = {}
    for step in model.plan:
        _run_step(model, step, pending)
    for var, value in pending.items():
        model.states[var].current[...] = value

    return {name: model.buffers[key].copy() for name, key in model.results.items()}


def reset_states(model: CompiledModel) -> None:
    """Restore every state to its initial tensor. Idempotent."""
    for state in model.states.values():
        state.current[...] = state.initial


def get_state(model: CompiledModel, variable_id: str) -> np.ndarray:
    """Copy of the current tensor held by one state."""
    if variable_id not in model.states:
        raise InferError(f"unknown state variable {variable_id!r}; "
                         f"have {sorted(model.states)}")
    return model.states[variable_id].current.copy()
