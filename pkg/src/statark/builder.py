"""Construct statically shaped decoder graphs, chunk them, convert cache I/O
to states, and read/write the on-disk model directory.

Every tensor in a built graph has fixed dims derived from the ModelConfig:
single-token activations ([1, 1, dim]), a fixed-size per-layer KV cache
([1, n_kv_heads, max_seq_len, head_dim]) updated in place at an explicit
`position` input, and an additive mask input ([1, 1, 1, max_seq_len]) whose
-inf tail hides the unused cache rows.

Chunk naming convention (checked by `statark validate`):
  embedding:     Parameter `token` -> Result `x`
  decoder chunk: Parameters `x`, `mask`, `freqs_cis`, `position`
                 plus `cache_k_<i>` / `cache_v_<i>` pairs (states once
                 make_stateful has run) -> Result `x` and the updated caches
  lm_head:       Parameter `x` -> Result `logits`
"""

from __future__ import annotations

import copy
import json
import logging
import math
import os
import re
import struct
from dataclasses import dataclass, field

import numpy as np

from . import ir, kernels, shapes
from .config import ModelConfig
from .errors import BuildError, WeightsError

log = logging.getLogger("statark.builder")

CACHE_NAME_RE = re.compile(r"^cache_[kv]_(\d+)$")

WEIGHTS_MAGIC = b"STWT"
WEIGHTS_VERSION = 1


# ---------------------------------------------------------------------------
# Chunk plans
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ChunkSpec:
    kind: str  # "embedding" | "decoder" | "lm_head"
    start: int | None = None
    end: int | None = None

    def chunk_name(self) -> str:
        if self.kind == "decoder":
            return f"decoder_{self.start}_{self.end}"
        return self.kind


def plan_from_splits(cfg: ModelConfig, splits: list) -> list:
    """Embedding + one decoder chunk per split size + lm_head."""
    if not splits or any(s < 1 for s in splits):
        raise BuildError(f"invalid chunk splits {splits}: need positive layer counts")
    if sum(splits) != cfg.n_layers:
        raise BuildError(
            f"chunk splits {splits} sum to {sum(splits)}, model has {cfg.n_layers} layers")
    plan = [ChunkSpec("embedding")]
    start = 0
    for size in splits:
        plan.append(ChunkSpec("decoder", start, start + size))
        start += size
    plan.append(ChunkSpec("lm_head"))
    return plan


def validate_plan(cfg: ModelConfig, plan: list) -> None:
    if len(plan) < 3 or plan[0].kind != "embedding" or plan[-1].kind != "lm_head":
        raise BuildError("plan must be embedding, decoder chunks, lm_head")
    cursor = 0
    for spec in plan[1:-1]:
        if spec.kind != "decoder":
            raise BuildError(f"unexpected chunk kind {spec.kind!r} in plan body")
        if spec.start != cursor or spec.end is None or spec.end <= spec.start:
            raise BuildError(
                f"decoder ranges must be contiguous and nonempty; got "
                f"[{spec.start}, {spec.end}) at cursor {cursor}")
        cursor = spec.end
    if cursor != cfg.n_layers:
        raise BuildError(
            f"decoder ranges cover [0, {cursor}), model has {cfg.n_layers} layers")


# ---------------------------------------------------------------------------
# Graph construction
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ValueRef:
    node_id: int
    port_id: int
    dims: tuple


@dataclass
class ConstEntry:
    node_id: int
    dims: tuple
    offset: int
    size: int
    weight_name: str | None = None  # named model weight, resolved at export
    data: np.ndarray | None = None  # literal helper constant


@dataclass
class BuiltChunk:
    name: str
    graph: ir.ModelGraph
    manifest: list = field(default_factory=list)  # list[ConstEntry]

    def blob_size(self) -> int:
        return sum(e.size for e in self.manifest)


class _GraphBuilder:
    def __init__(self, name: str):
        self.graph = ir.ModelGraph(name=name)
        self.manifest = []
        self._next_id = 0
        self._offset = 0

    def _add_node(self, op, name, attrs, input_refs, out_dims, out_names=()):
        nid = self._next_id
        self._next_id += 1
        inputs = [ir.Port(id=i, dims=list(r.dims)) for i, r in enumerate(input_refs)]
        out_port_id = len(inputs)
        outputs = []
        if out_dims is not None:
            outputs = [ir.Port(id=out_port_id, dims=list(out_dims),
                               names=frozenset(out_names))]
        node = ir.Node(id=nid, name=name, op=op, attrs=dict(attrs or {}),
                       inputs=inputs, outputs=outputs)
        self.graph.nodes[nid] = node
        for i, r in enumerate(input_refs):
            self.graph.edges.append(ir.Edge(r.node_id, r.port_id, nid, i))
        if out_dims is None:
            return None
        return ValueRef(nid, out_port_id, tuple(out_dims))

    def parameter(self, name, dims) -> ValueRef:
        return self._add_node(ir.Op.PARAMETER, name, {}, [], dims, out_names=(name,))

    def result(self, name, src: ValueRef) -> None:
        self._add_node(ir.Op.RESULT, name, {}, [src], None)

    def _const(self, name, dims, weight_name=None, data=None) -> ValueRef:
        size = 4 * math.prod(dims)
        attrs = {"offset": str(self._offset), "size": str(size)}
        ref = self._add_node(ir.Op.CONST, name, attrs, [], dims)
        self.manifest.append(ConstEntry(node_id=ref.node_id, dims=tuple(dims),
                                        offset=self._offset, size=size,
                                        weight_name=weight_name, data=data))
        self._offset += size
        return ref

    def weight(self, weight_name, dims) -> ValueRef:
        return self._const(weight_name, dims, weight_name=weight_name)

    def literal(self, name, values) -> ValueRef:
        data = kernels.as_tensor(values)
        return self._const(name, list(data.shape), data=data)

    def op(self, op, name, input_refs, attrs=None) -> ValueRef:
        attrs = attrs or {}
        out_dims = shapes.infer_output_shape(
            op, attrs, [list(r.dims) for r in input_refs])[0]
        return self._add_node(op, name, attrs, input_refs, out_dims)

    def matmul(self, name, a, b, transpose_b=False) -> ValueRef:
        return self.op(ir.Op.MATMUL, name, [a, b], {
            "transpose_a": "false",
            "transpose_b": "true" if transpose_b else "false"})

    def reshape(self, name, x, target) -> ValueRef:
        return self.op(ir.Op.RESHAPE, name, [x],
                       {"shape": ",".join(str(d) for d in target)})

    def transpose(self, name, x, order) -> ValueRef:
        return self.op(ir.Op.TRANSPOSE, name, [x],
                       {"order": ",".join(str(d) for d in order)})

    def finish(self, name) -> BuiltChunk:
        return BuiltChunk(name=name, graph=self.graph, manifest=self.manifest)


def _build_embedding(cfg: ModelConfig) -> BuiltChunk:
    g = _GraphBuilder("embedding")
    token = g.parameter("token", [1, 1])
    table = g.weight("embedding.weight", [cfg.vocab_size, cfg.dim])
    x = g.op(ir.Op.GATHER, "token_embed", [table, token])
    g.result("x", x)
    return g.finish("embedding")


def _build_lm_head(cfg: ModelConfig) -> BuiltChunk:
    g = _GraphBuilder("lm_head")
    x = g.parameter("x", [1, 1, cfg.dim])
    norm_w = g.weight("final_norm.weight", [cfg.dim])
    normed = g.op(ir.Op.RMSNORM, "final_norm", [x, norm_w],
                  {"eps": repr(cfg.norm_eps)})
    out_w = g.weight("lm_head.weight", [cfg.vocab_size, cfg.dim])
    logits = g.matmul("output_proj", normed, out_w, transpose_b=True)
    g.result("logits", logits)
    return g.finish("lm_head")


def _repeat_kv_heads(g: _GraphBuilder, cfg: ModelConfig, cache: ValueRef,
                     rep_idx: ValueRef, tag: str) -> ValueRef:
    """[1, n_kv, m, hd] -> [1, n_heads, m, hd] by gathering kv rows per head."""
    if cfg.n_rep == 1:
        return cache
    m = cfg.max_seq_len
    flat = g.reshape(f"{tag}_kvflat", cache, [cfg.n_kv_heads, m, cfg.head_dim])
    rep = g.op(ir.Op.GATHER, f"{tag}_kvrep", [flat, rep_idx])
    return g.reshape(f"{tag}_kvfull", rep, [1, cfg.n_heads, m, cfg.head_dim])


def _build_decoder(cfg: ModelConfig, start: int, end: int) -> BuiltChunk:
    m = cfg.max_seq_len
    hd = cfg.head_dim
    kv_width = cfg.n_kv_heads * hd
    eps = {"eps": repr(cfg.norm_eps)}
    g = _GraphBuilder(f"decoder_{start}_{end}")

    x = g.parameter("x", [1, 1, cfg.dim])
    mask = g.parameter("mask", [1, 1, 1, m])
    freqs = g.parameter("freqs_cis", [1, 1, hd // 2, 2])
    position = g.parameter("position", [1])
    caches = {}
    for i in range(start, end):
        caches[i] = (g.parameter(f"cache_k_{i}", [1, cfg.n_kv_heads, m, hd]),
                     g.parameter(f"cache_v_{i}", [1, cfg.n_kv_heads, m, hd]))

    # Heads all see the same mask row; expand it once per chunk so the
    # additive mask lands on equal shapes (no general broadcasting in Add).
    mask_flat = g.reshape("mask_flat", mask, [1, m])
    head_zero = g.literal("mask_head_index", np.zeros(cfg.n_heads, dtype=np.float32))
    mask_rows = g.op(ir.Op.GATHER, "mask_rows", [mask_flat, head_zero])
    mask_b = g.reshape("mask_per_head", mask_rows, [1, cfg.n_heads, 1, m])

    scale = g.literal("attn_scale", np.array([1.0 / math.sqrt(hd)], dtype=np.float32))
    rep_idx = None
    if cfg.n_rep > 1:
        rep_idx = g.literal("kv_rep_index", np.array(
            [h // cfg.n_rep for h in range(cfg.n_heads)], dtype=np.float32))

    for i in range(start, end):
        L = f"layers.{i}"
        h = g.op(ir.Op.RMSNORM, f"{L}.attn_norm",
                 [x, g.weight(f"{L}.attn_norm.weight", [cfg.dim])], eps)
        q = g.matmul(f"{L}.wq", h, g.weight(f"{L}.wq.weight", [cfg.dim, cfg.dim]),
                     transpose_b=True)
        k = g.matmul(f"{L}.wk", h, g.weight(f"{L}.wk.weight", [kv_width, cfg.dim]),
                     transpose_b=True)
        v = g.matmul(f"{L}.wv", h, g.weight(f"{L}.wv.weight", [kv_width, cfg.dim]),
                     transpose_b=True)
        qh = g.reshape(f"{L}.q_heads", q, [1, 1, cfg.n_heads, hd])
        kh = g.reshape(f"{L}.k_heads", k, [1, 1, cfg.n_kv_heads, hd])
        vh = g.reshape(f"{L}.v_heads", v, [1, 1, cfg.n_kv_heads, hd])
        qr = g.op(ir.Op.ROTARY_APPLY, f"{L}.q_rot", [qh, freqs])
        kr = g.op(ir.Op.ROTARY_APPLY, f"{L}.k_rot", [kh, freqs])
        qt = g.transpose(f"{L}.q_t", qr, [0, 2, 1, 3])
        kt = g.transpose(f"{L}.k_t", kr, [0, 2, 1, 3])
        vt = g.transpose(f"{L}.v_t", vh, [0, 2, 1, 3])

        cache_k, cache_v = caches[i]
        ck = g.op(ir.Op.SCATTER_ROW_UPDATE, f"{L}.k_cache_write",
                  [cache_k, position, kt])
        cv = g.op(ir.Op.SCATTER_ROW_UPDATE, f"{L}.v_cache_write",
                  [cache_v, position, vt])
        g.result(f"cache_k_{i}", ck)
        g.result(f"cache_v_{i}", cv)

        k_full = _repeat_kv_heads(g, cfg, ck, rep_idx, f"{L}.k")
        v_full = _repeat_kv_heads(g, cfg, cv, rep_idx, f"{L}.v")
        scores = g.matmul(f"{L}.qk", qt, k_full, transpose_b=True)
        scaled = g.op(ir.Op.MULTIPLY, f"{L}.scale", [scores, scale])
        masked = g.op(ir.Op.ADD, f"{L}.mask_add", [scaled, mask_b])
        probs = g.op(ir.Op.SOFTMAX, f"{L}.attn_softmax", [masked], {"axis": "-1"})
        ctx = g.matmul(f"{L}.pv", probs, v_full)
        ctx_t = g.transpose(f"{L}.ctx_t", ctx, [0, 2, 1, 3])
        ctx_flat = g.reshape(f"{L}.ctx_flat", ctx_t, [1, 1, cfg.dim])
        attn_out = g.matmul(f"{L}.wo", ctx_flat,
                            g.weight(f"{L}.wo.weight", [cfg.dim, cfg.dim]),
                            transpose_b=True)
        x = g.op(ir.Op.ADD, f"{L}.attn_residual", [x, attn_out])

        h2 = g.op(ir.Op.RMSNORM, f"{L}.ffn_norm",
                  [x, g.weight(f"{L}.ffn_norm.weight", [cfg.dim])], eps)
        gate = g.matmul(f"{L}.w1", h2,
                        g.weight(f"{L}.w1.weight", [cfg.ffn_hidden, cfg.dim]),
                        transpose_b=True)
        up = g.matmul(f"{L}.w3", h2,
                      g.weight(f"{L}.w3.weight", [cfg.ffn_hidden, cfg.dim]),
                      transpose_b=True)
        act = g.op(ir.Op.SILU, f"{L}.silu", [gate])
        prod = g.op(ir.Op.MULTIPLY, f"{L}.gate_up", [act, up])
        down = g.matmul(f"{L}.w2", prod,
                        g.weight(f"{L}.w2.weight", [cfg.dim, cfg.ffn_hidden]),
                        transpose_b=True)
        x = g.op(ir.Op.ADD, f"{L}.ffn_residual", [x, down])

    g.result("x", x)
    return g.finish(f"decoder_{start}_{end}")


def build_chunks(cfg: ModelConfig, plan: list) -> list:
    """Build one stateless ModelGraph per chunk of the plan.

    Caches appear as Parameter/Result pairs; run make_stateful on each
    decoder graph to convert them into states.
    """
    validate_plan(cfg, plan)
    chunks = []
    for spec in plan:
        if spec.kind == "embedding":
            chunks.append(_build_embedding(cfg))
        elif spec.kind == "decoder":
            chunks.append(_build_decoder(cfg, spec.start, spec.end))
        else:
            chunks.append(_build_lm_head(cfg))
    log.info("built %d chunks: %s", len(chunks), ", ".join(c.name for c in chunks))
    return chunks


# ---------------------------------------------------------------------------
# Stateful conversion
# ---------------------------------------------------------------------------


def make_stateful(graph: ir.ModelGraph) -> ir.ModelGraph:
    """Replace each cache Parameter/Result pair by ReadValue/Assign.

    The pair must share a `cache_{k,v}_<i>` name and shape; the shared name
    becomes the variable_id. Non-cache Parameters/Results are untouched and a
    graph without cache names comes back unchanged (as a copy).
    """
    out = copy.deepcopy(graph)
    params = {n.name: n for n in out.nodes.values() if n.op is ir.Op.PARAMETER}
    results = {n.name: n for n in out.nodes.values() if n.op is ir.Op.RESULT}
    cache_names = sorted(
        set(n for n in params if CACHE_NAME_RE.match(n)) |
        set(n for n in results if CACHE_NAME_RE.match(n)))
    for name in cache_names:
        if name not in params:
            raise BuildError(f"cache Result {name!r} has no matching Parameter")
        if name not in results:
            raise BuildError(f"cache Parameter {name!r} has no matching Result")
        p, r = params[name], results[name]
        if p.outputs[0].dims != r.inputs[0].dims:
            raise BuildError(
                f"cache {name!r}: Parameter shape {p.outputs[0].dims} != "
                f"Result shape {r.inputs[0].dims}")
        p.op = ir.Op.READ_VALUE
        p.attrs["variable_id"] = name
        r.op = ir.Op.ASSIGN
        r.attrs["variable_id"] = name
    return out


# ---------------------------------------------------------------------------
# Weights
# ---------------------------------------------------------------------------


def expected_weight_shapes(cfg: ModelConfig) -> dict:
    """Name -> shape for every named model weight, in a stable order."""
    kv_width = cfg.n_kv_heads * cfg.head_dim
    out = {"embedding.weight": (cfg.vocab_size, cfg.dim)}
    for i in range(cfg.n_layers):
        L = f"layers.{i}"
        out[f"{L}.attn_norm.weight"] = (cfg.dim,)
        out[f"{L}.wq.weight"] = (cfg.dim, cfg.dim)
        out[f"{L}.wk.weight"] = (kv_width, cfg.dim)
        out[f"{L}.wv.weight"] = (kv_width, cfg.dim)
        out[f"{L}.wo.weight"] = (cfg.dim, cfg.dim)
        out[f"{L}.ffn_norm.weight"] = (cfg.dim,)
        out[f"{L}.w1.weight"] = (cfg.ffn_hidden, cfg.dim)
        out[f"{L}.w2.weight"] = (cfg.dim, cfg.ffn_hidden)
        out[f"{L}.w3.weight"] = (cfg.ffn_hidden, cfg.dim)
    out["final_norm.weight"] = (cfg.dim,)
    out["lm_head.weight"] = (cfg.vocab_size, cfg.dim)
    return out


def seeded_weights(cfg: ModelConfig, seed: int) -> dict:
    """Deterministic random weights: N(0, 0.02) projections, N(1, 0.1) norms."""
    rng = np.random.default_rng(seed)
    weights = {}
    for name, shape in expected_weight_shapes(cfg).items():
        if name.endswith("norm.weight"):
            data = 1.0 + 0.1 * rng.standard_normal(shape)
        else:
            data = 0.02 * rng.standard_normal(shape)
        weights[name] = data.astype(np.float32)
    return weights


def dump_weights_container(weights: dict) -> bytes:
    """Serialize named tensors: magic, version, count, then per entry
    name-length/name/rank/dims/fp32 data, all little-endian."""
    out = bytearray(WEIGHTS_MAGIC)
    out += struct.pack("<I", WEIGHTS_VERSION)
    out += struct.pack("<I", len(weights))
    for name, tensor in weights.items():
        data = kernels.as_tensor(tensor)
        encoded = name.encode("utf-8")
        out += struct.pack("<I", len(encoded))
        out += encoded
        out += struct.pack("<I", data.ndim)
        if data.ndim:
            out += struct.pack(f"<{data.ndim}Q", *data.shape)
        out += data.astype("<f4").tobytes()
    return bytes(out)


def parse_weights_container(blob: bytes) -> dict:
    if blob[:4] != WEIGHTS_MAGIC:
        raise WeightsError(f"bad weights container magic {blob[:4]!r}")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != WEIGHTS_VERSION:
        raise WeightsError(f"unsupported weights container version {version}")
    (count,) = struct.unpack_from("<I", blob, 8)
    pos = 12
    weights = {}
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            name = blob[pos:pos + name_len].decode("utf-8")
            pos += name_len
            (rank,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            dims = struct.unpack_from(f"<{rank}Q", blob, pos) if rank else ()
            pos += 8 * rank
            n = int(np.prod(dims)) if dims else 1
            data = np.frombuffer(blob, dtype="<f4", count=n, offset=pos)
            pos += 4 * n
            weights[name] = data.reshape(dims).astype(np.float32, copy=True)
    except (struct.error, ValueError) as exc:
        raise WeightsError(f"truncated or corrupt weights container: {exc}") from exc
    return weights


def import_weights(cfg: ModelConfig, blob: bytes) -> dict:
    """Parse a container and validate it holds exactly the expected tensors."""
    weights = parse_weights_container(blob)
    expected = expected_weight_shapes(cfg)
    missing = set(expected) - set(weights)
    if missing:
        raise WeightsError(f"weights container missing tensors: {sorted(missing)[:5]}")
    unexpected = set(weights) - set(expected)
    if unexpected:
        raise WeightsError(f"weights container has unknown tensors: "
                           f"{sorted(unexpected)[:5]}")
    for name, shape in expected.items():
        if weights[name].shape != shape:
            raise WeightsError(
                f"tensor {name!r}: shape {weights[name].shape} does not match "
                f"expected {shape}")
    return weights


def init_weights(cfg: ModelConfig, seed: int | None = None,
                 import_blob: bytes | None = None) -> dict:
    """Named weight store from a seed or an imported container (exactly one)."""
    if (seed is None) == (import_blob is None):
        raise BuildError("init_weights needs exactly one of seed / import_blob")
    if import_blob is not None:
        return import_weights(cfg, import_blob)
    return seeded_weights(cfg, seed)


def resolve_consts(chunk: BuiltChunk, weights: dict) -> dict:
    """Const node id -> tensor for compiling this chunk in memory."""
    consts = {}
    for entry in chunk.manifest:
        if entry.data is not None:
            consts[entry.node_id] = entry.data
            continue
        if entry.weight_name not in weights:
            raise WeightsError(f"chunk {chunk.name}: missing weight "
                               f"{entry.weight_name!r}")
        tensor = kernels.as_tensor(weights[entry.weight_name])
        if tensor.shape != entry.dims:
            raise WeightsError(
                f"chunk {chunk.name}: weight {entry.weight_name!r} shape "
                f"{tensor.shape} does not match graph {entry.dims}")
        consts[entry.node_id] = tensor
    return consts


def chunk_blob(chunk: BuiltChunk, weights: dict) -> bytes:
    """Raw fp32 blob for one chunk, laid out at the manifest offsets."""
    consts = resolve_consts(chunk, weights)
    out = bytearray(chunk.blob_size())
    for entry in chunk.manifest:
        data = consts[entry.node_id].astype("<f4").tobytes()
        out[entry.offset:entry.offset + entry.size] = data
    return bytes(out)


# ---------------------------------------------------------------------------
# Model directory
# ---------------------------------------------------------------------------


def _write_atomic(path: str, data: bytes) -> None:
    tmp = f"{path}.tmp.{os.getpid()}"
    try:
        with open(tmp, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except OSError as exc:
        raise BuildError(f"cannot write {path}: {exc}") from exc


def plan_to_json(plan: list) -> list:
    return [{"kind": s.kind, "start": s.start, "end": s.end} for s in plan]


def plan_from_json(items: list) -> list:
    return [ChunkSpec(kind=d["kind"], start=d.get("start"), end=d.get("end"))
            for d in items]


def export_model_dir(chunks: list, weights: dict, cfg: ModelConfig,
                     plan: list, out_dir: str) -> None:
    """Write the standardized layout:

        out_dir/config.json            model config + chunk plan
        out_dir/model_weights.bin      named weights container
        out_dir/llm_dir/<chunk>.xml    graph per chunk
        out_dir/llm_dir/<chunk>.bin    const blob per chunk
        out_dir/llm_dir/cache/         empty, reserved for compile caches

    Files are replaced atomically (write-temp-rename), so re-export over an
    existing directory is safe.
    """
    llm_dir = os.path.join(out_dir, "llm_dir")
    try:
        os.makedirs(os.path.join(llm_dir, "cache"), exist_ok=True)
    except OSError as exc:
        raise BuildError(f"cannot create {llm_dir}: {exc}") from exc
    for chunk in chunks:
        xml_path = os.path.join(llm_dir, f"{chunk.name}.xml")
        _write_atomic(xml_path, ir.serialize_model(chunk.graph).encode("utf-8"))
        _write_atomic(os.path.join(llm_dir, f"{chunk.name}.bin"),
                      chunk_blob(chunk, weights))
    _write_atomic(os.path.join(out_dir, "model_weights.bin"),
                  dump_weights_container(weights))
    config = cfg.to_json_dict()
    config["chunks"] = plan_to_json(plan)
    _write_atomic(os.path.join(out_dir, "config.json"),
                  (json.dumps(config, indent=2) + "\n").encode("utf-8"))
    log.info("exported %d chunks to %s", len(chunks), out_dir)


@dataclass
class LoadedChunk:
    name: str
    graph: ir.ModelGraph
    consts: dict  # Const node id -> tensor


@dataclass
class LoadedModel:
    cfg: ModelConfig
    plan: list
    chunks: list  # list[LoadedChunk], plan order
    weights: dict  # named container contents


def load_model_dir(path: str) -> LoadedModel:
    """Read a directory produced by export_model_dir."""
    config_path = os.path.join(path, "config.json")
    try:
        with open(config_path, "r", encoding="utf-8") as f:
            config = json.load(f)
    except OSError as exc:
        raise BuildError(f"cannot read {config_path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise BuildError(f"malformed {config_path}: {exc}") from exc
    cfg = ModelConfig.from_json_dict(config)
    plan = plan_from_json(config.get("chunks", []))
    validate_plan(cfg, plan)

    try:
        with open(os.path.join(path, "model_weights.bin"), "rb") as f:
            weights = parse_weights_container(f.read())
    except OSError as exc:
        raise BuildError(f"cannot read model weights in {path}: {exc}") from exc

    chunks = []
    llm_dir = os.path.join(path, "llm_dir")
    for spec in plan:
        name = spec.chunk_name()
        try:
            with open(os.path.join(llm_dir, f"{name}.xml"), "r", encoding="utf-8") as f:
                graph = ir.parse_model(f.read())
            with open(os.path.join(llm_dir, f"{name}.bin"), "rb") as f:
                blob = f.read()
        except OSError as exc:
            raise BuildError(f"cannot read chunk {name!r}: {exc}") from exc
        chunks.append(LoadedChunk(name=name, graph=graph,
                                  consts=ir.load_weights(graph, blob)))
    return LoadedModel(cfg=cfg, plan=plan, chunks=chunks, weights=weights)
