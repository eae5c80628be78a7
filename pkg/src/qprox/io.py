"""On-disk formats: the QPRX binary container and delimited outputs.

Instance container layout (all little-endian):

    magic "QPRX" | version u16 | N u32 | d u32 | m u32 | rows u32
    regularizer u8 | lam1 f64 | lam2 f64
    per node: neighbor count u32, then that many u32 neighbor ids
    x_gen: P f64
    per node: H_i row-major f64, then h_i f64

Quantization logs reuse the same framing with magic "QPRL"; they are
loaded against the instance they were produced from.
"""

from __future__ import annotations

import struct

import numpy as np

from .central import Trace
from .distributed import BitLedger, QuantLog
from .errors import ProtocolError
from .problem import Graph, ProblemInstance, RegularizerSpec, _VARIANTS

_VERSION = 1
_INSTANCE_MAGIC = b"QPRX"
_LOG_MAGIC = b"QPRL"


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, fmt: str):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.data):
            raise ProtocolError("container truncated")
        out = struct.unpack_from(fmt, self.data, self.pos)
        self.pos += size
        return out

    def array(self, count: int, dtype="<f8") -> np.ndarray:
        size = count * np.dtype(dtype).itemsize
        if self.pos + size > len(self.data):
            raise ProtocolError("container truncated")
        out = np.frombuffer(self.data, dtype=dtype, count=count,
                            offset=self.pos).copy()
        self.pos += size
        return out


def _uniform(values, what):
    vals = set(values)
    if len(vals) != 1:
        raise ProtocolError(f"container requires uniform {what}")
    return vals.pop()


def save_instance(path, inst: ProblemInstance) -> None:
    """Write an instance to the self-describing binary container."""
    m = _uniform(inst.m, "block dimension")
    rows = _uniform((Hi.shape[0] for Hi in inst.H), "row count")
    d = inst.graph.max_degree - 1
    reg = inst.regularizer
    parts = [
        _INSTANCE_MAGIC,
        struct.pack("<HIIII", _VERSION, inst.N, d, m, rows),
        struct.pack("<Bdd", _VARIANTS.index(reg.variant), reg.lam1, reg.lam2),
    ]
    for i in range(inst.N):
        open_nbrs = [j for j in inst.graph.neighborhood(i) if j != i]
        parts.append(struct.pack("<I", len(open_nbrs)))
        parts.append(np.asarray(open_nbrs, dtype="<u4").tobytes())
    parts.append(np.ascontiguousarray(inst.x_gen, dtype="<f8").tobytes())
    for i in range(inst.N):
        parts.append(np.ascontiguousarray(inst.H[i], dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(inst.h[i], dtype="<f8").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def load_instance(path) -> ProblemInstance:
    with open(path, "rb") as fh:
        r = _Reader(fh.read())
    magic, = r.take("<4s")
    if magic != _INSTANCE_MAGIC:
        raise ProtocolError(f"not an instance container (magic {magic!r})")
    version, N, _d, m, rows = r.take("<HIIII")
    if version != _VERSION:
        raise ProtocolError(f"unsupported container version {version}")
    variant_idx, lam1, lam2 = r.take("<Bdd")
    reg = RegularizerSpec(_VARIANTS[variant_idx], lam1, lam2)
    neighbors = []
    for _ in range(N):
        count, = r.take("<I")
        neighbors.append(r.array(count, "<u4").astype(int).tolist())
    graph = Graph(N, neighbors)
    x_gen = r.array(N * m)
    H, h = [], []
    for i in range(N):
        dim = m * len(graph.neighborhood(i))
        H.append(r.array(rows * dim).reshape(rows, dim))
        h.append(r.array(rows))
    return ProblemInstance(graph, [m] * N, H, h, reg, x_gen)


def save_quantlog(path, log: QuantLog) -> None:
    """Persist a quantization log for offline replay."""
    inst = log.instance
    m = _uniform(inst.m, "block dimension")
    rows = _uniform((Hi.shape[0] for Hi in inst.H), "row count")
    parts = [
        _LOG_MAGIC,
        struct.pack("<HIIII", _VERSION, inst.N, inst.graph.max_degree - 1,
                    m, rows),
        struct.pack("<IIBQQ", log.S, log.T, int(log.envelope_valid),
                    log.overflow_count, log.edge_clamp_count),
        np.ascontiguousarray(log.ell, dtype="<i8").tobytes(),
    ]
    for s in range(log.S):
        parts.append(np.ascontiguousarray(log.a[s], dtype="<f8").tobytes())
        for i in range(inst.N):
            parts.append(np.ascontiguousarray(log.b[s][i], dtype="<f8").tobytes())
        for t in range(log.T):
            parts.append(np.ascontiguousarray(log.c[s][t], dtype="<f8").tobytes())
            parts.append(np.ascontiguousarray(log.d[s][t], dtype="<f8").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def load_quantlog(path, inst: ProblemInstance) -> QuantLog:
    with open(path, "rb") as fh:
        r = _Reader(fh.read())
    magic, = r.take("<4s")
    if magic != _LOG_MAGIC:
        raise ProtocolError(f"not a quantization log (magic {magic!r})")
    version, N, _d, _m, _rows = r.take("<HIIII")
    if version != _VERSION:
        raise ProtocolError(f"unsupported container version {version}")
    if N != inst.N:
        raise ProtocolError("log does not match the instance")
    S, T, valid, overflow, clamp = r.take("<IIBQQ")
    ell = r.array(S * T, "<i8").reshape(S, T)
    log = QuantLog(S=S, T=T, ell=ell, overflow_count=overflow,
                   edge_clamp_count=clamp, envelope_valid=bool(valid),
                   instance=inst)
    for s in range(S):
        log.a.append(r.array(inst.P))
        log.b.append([r.array(inst.nbhd_dim(i)) for i in range(N)])
        cs, ds = [], []
        for t in range(T):
            dim = inst.nbhd_dim(int(ell[s, t]))
            cs.append(r.array(dim))
            ds.append(r.array(dim))
        log.c.append(cs)
        log.d.append(ds)
    return log


# ---------------------------------------------------------------------------
# delimited outputs

def _fmt(x) -> str:
    return repr(float(x))


def meta_comment(meta: dict) -> str:
    pairs = " ".join(f"{k}={meta[k]}" for k in sorted(meta))
    return f"# {pairs}"


def write_trace(path, trace: Trace) -> None:
    """Trace CSV: a comment row with hash and seeds, then one row per
    outer round."""
    lines = [meta_comment(trace.meta),
             "s,gap,dist,gamma,bits_cum,overflows,edge_clamps"]
    for s in range(len(trace)):
        lines.append(",".join([str(s), _fmt(trace.gap[s]), _fmt(trace.dist[s]),
                               _fmt(trace.gamma[s]), _fmt(trace.bits_cum[s]),
                               _fmt(trace.overflows[s]),
                               _fmt(trace.edge_clamps[s])]))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_trace(path) -> Trace:
    meta = {}
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                for pair in line[1:].split():
                    k, _, v = pair.partition("=")
                    meta[k] = v
                continue
            if line.startswith("s,"):
                continue
            rows.append([float(v) for v in line.split(",")[1:]])
    arr = np.asarray(rows, dtype=float)
    return Trace(gap=arr[:, 0], dist=arr[:, 1], gamma=arr[:, 2],
                 bits_cum=arr[:, 3], overflows=arr[:, 4],
                 edge_clamps=arr[:, 5], meta=meta)


def write_ledger(path, ledger: BitLedger, meta: dict) -> None:
    cum = ledger.cumulative_payload()
    lines = [meta_comment(meta),
             "s,outer_payload_bits,inner_payload_bits,round_payload_bits,"
             "header_bits,cum_payload_bits"]
    for s in range(len(ledger.outer_payload)):
        inner = int(ledger.inner_payload[s].sum())
        header = int(ledger.outer_header[s] + ledger.inner_header[s].sum())
        lines.append(",".join(map(str, [
            s, int(ledger.outer_payload[s]), inner,
            int(ledger.outer_payload[s]) + inner, header, int(cum[s])])))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def write_xgen_csv(path, inst: ProblemInstance) -> None:
    """Generating vector, one indexed row per component."""
    lines = ["index,value"]
    for k, v in enumerate(inst.x_gen):
        lines.append(f"{k},{_fmt(v)}")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
