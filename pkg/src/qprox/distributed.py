"""Synchronous message-passing simulation of the quantized solver.

Each node runs the same state machine: once per outer round it
broadcasts its quantized anchor state and quantized local gradient to
its closed neighborhood and rebuilds its direction caches; then for T
inner steps a commonly agreed node is sampled, its neighborhood sends
it freshly quantized states, it replies with its quantized gradient,
and every node takes one proximal step.  The network is synchronous and
lossless; all payloads cross a bit-exact wire codec and are accounted
in a :class:`BitLedger`.  Every realized quantization error is kept in
a :class:`QuantLog` so the run can be replayed through the centralized
solver as an error-injected twin.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from . import quantizer, rng
from .central import Trace, _as_trace
from .errors import ParameterError, ProtocolError
from .problem import ProblemInstance
from .quantizer import (CodewordBlock, DitherStream, QuantizerState,
                        _decode_with, _encode_with, dithered_decode,
                        pack_codes, refine, unpack_codes)

RAW_BITS = 64  # ledger convention for unquantized (float64) payloads


class MessageKind(IntEnum):
    STATE_OUTER = 0
    GRAD_OUTER = 1
    STATE_INNER = 2
    GRAD_INNER = 3


_KIND_FAMILY = {MessageKind.STATE_OUTER: "a", MessageKind.GRAD_OUTER: "b",
                MessageKind.STATE_INNER: "c", MessageKind.GRAD_INNER: "d"}

_MAGIC = 0x51
_HEADER = struct.Struct("<BBHIIIB")  # magic, kind, sender, s, t, count, bits
HEADER_BYTES = _HEADER.size


@dataclass
class Message:
    """One wire payload: n-bit codewords plus routing metadata."""

    kind: MessageKind
    sender: int
    s: int
    t: int
    bits: int
    payload: CodewordBlock

    def __eq__(self, other):
        # clamp/overflow counters are sender-local diagnostics, not wire state
        return (isinstance(other, Message)
                and self.kind == other.kind and self.sender == other.sender
                and self.s == other.s and self.t == other.t
                and self.bits == other.bits
                and np.array_equal(self.payload.codes, other.payload.codes))


def encode_message(msg: Message) -> bytes:
    """Serialize to the frame layout: 17-byte header, packed codes."""
    header = _HEADER.pack(_MAGIC, int(msg.kind), msg.sender, msg.s, msg.t,
                          len(msg.payload.codes), msg.bits)
    return header + pack_codes(msg.payload.codes, msg.bits)


def decode_message(data: bytes) -> Message:
    """Parse a frame; raises :class:`ProtocolError` on any malformation."""
    if len(data) < HEADER_BYTES:
        raise ProtocolError("frame shorter than header")
    magic, kind, sender, s, t, count, bits = _HEADER.unpack_from(data)
    if magic != _MAGIC:
        raise ProtocolError(f"bad magic byte 0x{magic:02x}")
    try:
        kind = MessageKind(kind)
    except ValueError:
        raise ProtocolError(f"unknown message kind {kind}") from None
    payload = data[HEADER_BYTES:]
    if len(payload) < -(-count * bits // 8):
        raise ProtocolError("truncated payload")
    codes = unpack_codes(payload, bits, count)
    return Message(kind, sender, s, t, bits, CodewordBlock(codes))


# ---------------------------------------------------------------------------
# bit accounting

class BitLedger:
    """Exact per-phase bit counts.

    Payload bits are ``n * scalar_count`` per delivery (self-delivery
    within the closed neighborhood included, byte padding excluded);
    frame header bits are tracked separately.
    """

    def __init__(self, S: int, T: int):
        self.outer_payload = np.zeros(S, dtype=np.int64)
        self.outer_header = np.zeros(S, dtype=np.int64)
        self.inner_payload = np.zeros((S, T), dtype=np.int64)
        self.inner_header = np.zeros((S, T), dtype=np.int64)

    def record_outer(self, s, payload_bits, header_bits):
        self.outer_payload[s] += payload_bits
        self.outer_header[s] += header_bits

    def record_inner(self, s, t, payload_bits, header_bits):
        self.inner_payload[s, t] += payload_bits
        self.inner_header[s, t] += header_bits

    def inner_payload_bits(self, s: int, t: int) -> int:
        return int(self.inner_payload[s, t])

    def round_payload_bits(self, s: int) -> int:
        return int(self.outer_payload[s] + self.inner_payload[s].sum())

    def cumulative_payload(self) -> np.ndarray:
        per_round = self.outer_payload + self.inner_payload.sum(axis=1)
        return np.cumsum(per_round)

    @property
    def payload_total(self) -> int:
        return int(self.outer_payload.sum() + self.inner_payload.sum())

    @property
    def header_total(self) -> int:
        return int(self.outer_header.sum() + self.inner_header.sum())


def bit_upper_bound(N: int, T: int, D: int, m_bar: int, n: int) -> int:
    """Closed-form cap on payload bits per outer round."""
    if min(N, T, D, m_bar, n) <= 0:
        raise ParameterError("all bit-bound arguments must be positive")
    return n * m_bar * (N + T) * (D + D * D)


# ---------------------------------------------------------------------------
# quantization log

@dataclass
class QuantLog:
    """Every realized quantization error of a run, for offline replay.

    Indexing: ``a[s]`` is the global stack of outer state errors,
    ``b[s][i]`` the outer gradient error of node ``i``, ``c[s][t]`` the
    inner state errors stacked over the sampled node's neighborhood,
    and ``d[s][t]`` its inner gradient error.
    """

    S: int
    T: int
    ell: np.ndarray
    a: list = field(default_factory=list)
    b: list = field(default_factory=list)
    c: list = field(default_factory=list)
    d: list = field(default_factory=list)
    overflow_count: int = 0
    edge_clamp_count: int = 0
    envelope_valid: bool = True
    instance: ProblemInstance | None = None
    x_tilde: list | None = None
    inner: list | None = None
    h_tilde: list | None = None


def _round_error_term(log: QuantLog, inst: ProblemInstance, s: int) -> np.ndarray:
    """Common per-round part of the equivalent direction error."""
    acc = np.zeros(inst.P)
    a = log.a[s]
    for i in range(inst.N):
        idx = inst.nbhd_index(i)
        acc[idx] += 2.0 * (inst.H[i].T @ (inst.H[i] @ a[idx]))
        acc[idx] += log.b[s][i]
    return acc / inst.N


def reconstruct_error(log: QuantLog, inst: ProblemInstance | None = None,
                      s: int = 0, t: int = 0, ell: int | None = None,
                      _round_term: np.ndarray | None = None) -> np.ndarray:
    """Direction error of inner step ``(s, t)`` in global coordinates.

    Assembled purely from logged quantization errors using the affine
    form of the node gradients; feeding the sequence back through the
    centralized solver as a replay reproduces the distributed iterates.
    """
    inst = inst or log.instance
    if inst is None:
        raise ParameterError("reconstruct_error needs the problem instance")
    if s >= log.S or t >= log.T:
        raise ParameterError("log has no entry for this (s, t)")
    logged_ell = int(log.ell[s, t])
    if ell is not None and ell != logged_ell:
        raise ParameterError("node index disagrees with the log")
    ell = logged_ell

    e = _round_term if _round_term is not None else _round_error_term(log, inst, s)
    e = e.copy()
    idx = inst.nbhd_index(ell)
    Hl = inst.H[ell]
    c = log.c[s][t]
    a_nbhd = log.a[s][idx]
    e[idx] += 2.0 * (Hl.T @ (Hl @ c))
    e[idx] += log.d[s][t]
    e[idx] -= 2.0 * (Hl.T @ (Hl @ a_nbhd))
    e[idx] -= log.b[s][ell]
    return e


def reconstruct_round(log: QuantLog, inst: ProblemInstance | None = None,
                      s: int = 0) -> list[np.ndarray]:
    """All T direction errors of round ``s`` (shares the round term)."""
    inst = inst or log.instance
    term = _round_error_term(log, inst, s)
    return [reconstruct_error(log, inst, s, t, _round_term=term)
            for t in range(log.T)]


# ---------------------------------------------------------------------------
# the simulator

class _Channel:
    """Dither bookkeeping plus the wire codec for one run."""

    def __init__(self, master_seed: int, bits: int, check: bool):
        self.master = master_seed
        self.bits = bits
        self.check = check

    def send(self, kind: MessageKind, sender: int, s: int, t: int,
             values: np.ndarray, q: QuantizerState, ledger: BitLedger,
             deliveries: int) -> tuple[np.ndarray, CodewordBlock]:
        """Quantize, frame, transmit, decode; returns the received vector.

        All recipients derive the identical dither, so the single wire
        decode below stands for every delivery; the ledger still counts
        payload bits once per recipient.  Reconstruction-error bounds
        are asserted on every send; ``check`` additionally re-derives
        the dither independently, recipient style, and compares.
        """
        family = _KIND_FAMILY[kind]
        nu = DitherStream(self.master, family, sender, s, t).draw(
            q.dim, q.delta / 2.0)
        block = _encode_with(np.asarray(values, dtype=float), q, nu)
        frame = encode_message(Message(kind, sender, s, t, self.bits, block))
        msg = decode_message(frame)
        if len(msg.payload.codes) != q.dim:
            raise ProtocolError("decoded dimension disagrees with quantizer")
        if not np.array_equal(msg.payload.codes, block.codes):
            raise ProtocolError("codeword corruption across the wire")
        received = _decode_with(msg.payload, q, nu)
        if self.check:
            independent = dithered_decode(
                msg.payload, q, DitherStream(self.master, family, sender, s, t))
            if not np.array_equal(independent, received):
                raise ProtocolError("dither desync between sender and recipient")
        self._check_bounds(values, received, q, block)
        payload_bits = self.bits * q.dim
        header_bits = 8 * HEADER_BYTES
        if t == 0 and kind in (MessageKind.STATE_OUTER, MessageKind.GRAD_OUTER):
            ledger.record_outer(s, deliveries * payload_bits,
                                deliveries * header_bits)
        else:
            ledger.record_inner(s, t, deliveries * payload_bits,
                                deliveries * header_bits)
        return received, block

    def send_state_batch(self, senders, qs, s, t, values_stacked,
                         ledger: BitLedger):
        """The inner state phase: every neighborhood node sends at once.

        All senders share the interval schedule, so one vectorized pass
        quantizes every block; each sender still emits its own frame
        with its own dither stream.  Returns the stacked received
        vector and (overflow, clamp) totals.
        """
        fam = quantizer.FAMILIES.index("c")
        bits = self.bits
        dims = [qs[j].dim for j in senders]
        delta = qs[senders[0]].delta
        U = qs[senders[0]].U
        midpoints = np.concatenate([qs[j].midpoint for j in senders])
        keys = np.repeat(
            np.fromiter((rng.derive_key(self.master, "dither", fam, j, s, t)
                         for j in senders), dtype=np.uint64,
                        count=len(senders)),
            dims)
        ctrs = np.concatenate([np.arange(d, dtype=np.uint64) for d in dims])
        nu = (delta / 2.0) * (2.0 * rng.counter_uniform_keys(keys, ctrs) - 1.0)

        offset = values_stacked + nu - midpoints
        k = np.sign(offset) * np.floor(np.abs(offset) / delta + 0.5)
        half = 1 << (bits - 1)
        raw = k.astype(np.int64) + half
        levels = (1 << bits) - 1
        codes = np.clip(raw, 0, levels).astype(np.uint32)
        true_offset = np.abs(values_stacked - midpoints)
        outside = true_offset > U / 2.0
        clamped = (raw < 0) | (raw > levels)
        received = midpoints + (codes.astype(np.int64) - half) * delta - nu

        lo = 0
        header_bits = 8 * HEADER_BYTES
        for idx, j in enumerate(senders):
            hi = lo + dims[idx]
            frame = encode_message(Message(
                MessageKind.STATE_INNER, j, s, t, bits,
                CodewordBlock(codes[lo:hi])))
            msg = decode_message(frame)
            if not np.array_equal(msg.payload.codes, codes[lo:hi]):
                raise ProtocolError("codeword corruption across the wire")
            if self.check:
                independent = dithered_decode(
                    msg.payload, qs[j], DitherStream(self.master, "c", j, s, t))
                if not np.array_equal(independent, received[lo:hi]):
                    raise ProtocolError(
                        "dither desync between sender and recipient")
            ledger.record_inner(s, t, bits * dims[idx], header_bits)
            lo = hi

        err = np.abs(values_stacked - received)
        tol = delta * 1e-9
        if np.any((true_offset <= U / 2.0) & (err > 1.5 * delta + tol)):
            raise ProtocolError("reconstruction error above 3*delta/2 in interval")
        if np.any((true_offset <= (U - delta) / 2.0) & (err > delta + tol)):
            raise ProtocolError("reconstruction error above delta in interior")
        return received, int(np.count_nonzero(outside)), \
            int(np.count_nonzero(clamped & ~outside))

    @staticmethod
    def _check_bounds(values, received, q, block):
        offset = np.abs(values - q.midpoint)
        err = np.abs(values - received)
        tol = q.delta * 1e-9
        if np.any((offset <= q.U / 2.0) & (err > 1.5 * q.delta + tol)):
            raise ProtocolError("reconstruction error above 3*delta/2 in interval")
        if np.any((offset <= (q.U - q.delta) / 2.0) & (err > q.delta + tol)):
            raise ProtocolError("reconstruction error above delta in interior")


def run_distributed(inst: ProblemInstance, *, eta: float, T: int, S: int,
                    bits: int = 11, kappa: float = 0.97,
                    C_a: float = 50.0, C_b: float = 300.0,
                    C_c: float = 50.0, C_d: float = 400.0,
                    seed_ell: int = 0, seed_dither: int = 0,
                    unquantized: bool = False,
                    x_star: np.ndarray | None = None,
                    record_iterates: bool = False,
                    force: bool = False, check: bool = True,
                    meta: dict | None = None):
    """Simulate S outer rounds of the distributed quantized solver.

    Returns ``(trace, ledger, log)``.  With ``unquantized=True`` the
    quantizers pass values through exactly (zero dither) and the ledger
    books raw 64-bit scalars, which makes the run the bit-exact twin of
    :func:`qprox.central.inexact_prox_svrg` under a shared node stream.

    Overflowing a quantization interval does not stop the run; it is
    counted, flagged on ``log.envelope_valid``, and left to the
    analysis layer to judge.
    """
    if T < 1 or S < 0:
        raise ParameterError("need T >= 1 and S >= 0")
    if not unquantized:
        if bits < 2:
            raise ParameterError("codeword width must be >= 2 bits")
        if not 0.0 < kappa < 1.0:
            raise ParameterError("kappa must lie in (0, 1)")
        if min(C_a, C_b, C_c, C_d) <= 0:
            raise ParameterError("interval constants must be positive")
    L_bar = inst.smoothness().L_bar
    if not force and not 0.0 < eta < 1.0 / (4.0 * L_bar):
        raise ParameterError(
            f"eta*4*L_bar = {eta * 4.0 * L_bar:.6g} >= 1; "
            "pass force=True to run anyway")

    N, P = inst.N, inst.P
    nbhd = [inst.graph.neighborhood(i) for i in range(N)]
    deg = [len(nb) for nb in nbhd]
    sl = [inst.block(i) for i in range(N)]
    g_star = inst.objective(x_star) if x_star is not None else None

    chan = _Channel(seed_dither, bits, check)
    ell_gen = rng.stream(seed_ell, "ell")
    ledger = BitLedger(S, max(T, 1))
    log = QuantLog(S=S, T=T, ell=np.zeros((S, T), dtype=np.int64),
                   instance=inst,
                   x_tilde=[] if record_iterates else None,
                   inner=[] if record_iterates else None,
                   h_tilde=[] if record_iterates else None)

    # per-node quantizer states; midpoints start at zero like the iterates
    qa = [QuantizerState(bits, C_a, np.zeros(inst.m[i]), "a", kappa)
          for i in range(N)] if not unquantized else None
    qb = [QuantizerState(bits, C_b, np.zeros(inst.nbhd_dim(i)), "b", kappa)
          for i in range(N)] if not unquantized else None

    x_tilde = np.zeros(P)
    xhat_prev = np.zeros(P)
    ghat_prev = [np.zeros(inst.nbhd_dim(i)) for i in range(N)]

    rows = []
    overflow_seen = 0
    clamp_seen = 0
    for s in range(S):
        gap = inst.objective(x_tilde) - g_star if g_star is not None else np.nan
        dist = (float(np.linalg.norm(x_tilde - x_star))
                if x_star is not None else np.nan)

        # phase 1+2: refine the outer quantizers, broadcast anchor states
        xhat = np.empty(P)
        a_err = np.zeros(P)
        for i in range(N):
            if unquantized:
                xhat[sl[i]] = x_tilde[sl[i]]
                ledger.record_outer(s, deg[i] * RAW_BITS * inst.m[i], 0)
            else:
                qa[i] = refine(qa[i], xhat_prev[sl[i]])
                rec, block = chan.send(MessageKind.STATE_OUTER, i, s, 0,
                                       x_tilde[sl[i]], qa[i], ledger, deg[i])
                xhat[sl[i]] = rec
                a_err[sl[i]] = rec - x_tilde[sl[i]]
                overflow_seen += block.overflow_count
                clamp_seen += block.edge_clamp_count

        # phase 3: local gradients on the quantized anchors, broadcast
        ghat = []
        b_err = []
        for i in range(N):
            grad = inst.local_gradient(i, xhat[inst.nbhd_index(i)])
            if unquantized:
                ghat.append(grad)
                b_err.append(np.zeros(inst.nbhd_dim(i)))
                ledger.record_outer(s, deg[i] * RAW_BITS * inst.nbhd_dim(i), 0)
            else:
                qb[i] = refine(qb[i], ghat_prev[i])
                rec, block = chan.send(MessageKind.GRAD_OUTER, i, s, 0,
                                       grad, qb[i], ledger, deg[i])
                ghat.append(rec)
                b_err.append(rec - grad)
                overflow_seen += block.overflow_count
                clamp_seen += block.edge_clamp_count
        log.a.append(a_err)
        log.b.append(b_err)

        # phase 4: direction caches from the received snapshots
        h_tilde = np.zeros(P)
        for j in range(N):
            for i in nbhd[j]:
                lo, hi = inst.block_range(j, i)
                h_tilde[sl[i]] += ghat[j][lo:hi]
        h_tilde /= N
        v_cache = {}
        for i in range(N):
            for j in nbhd[i]:
                lo, hi = inst.block_range(j, i)
                v_cache[i, j] = h_tilde[sl[i]] - ghat[j][lo:hi]

        # phase 5: inner quantizers recenter on this round's snapshots
        if not unquantized:
            U_c = C_c * kappa ** ((s + 1) / 2.0)
            U_d = C_d * kappa ** ((s + 1) / 2.0)
            qc = [QuantizerState(bits, U_c, xhat[sl[i]], "c", kappa)
                  for i in range(N)]
            qd = [QuantizerState(bits, U_d, ghat[i], "d", kappa)
                  for i in range(N)]

        # inner loop
        x = x_tilde.copy()
        acc = np.zeros(P)
        c_round, d_round = [], []
        inner_round = [] if record_iterates else None
        for t in range(T):
            ell = int(ell_gen.integers(N))
            log.ell[s, t] = ell
            idx = inst.nbhd_index(ell)

            # neighborhood sends its states to ell
            if unquantized:
                xhat_t = x[idx].copy()
                c_err = np.zeros(len(idx))
                for j in nbhd[ell]:
                    ledger.record_inner(s, t, RAW_BITS * inst.m[j], 0)
            else:
                xhat_t, over, clamp = chan.send_state_batch(
                    nbhd[ell], qc, s, t, x[idx], ledger)
                overflow_seen += over
                clamp_seen += clamp
                c_err = xhat_t - x[idx]

            # ell computes and broadcasts its gradient
            grad_t = inst.local_gradient(ell, xhat_t)
            if unquantized:
                ghat_t = grad_t
                d_err = np.zeros(len(idx))
                ledger.record_inner(s, t, deg[ell] * RAW_BITS * len(idx), 0)
            else:
                ghat_t, block = chan.send(MessageKind.GRAD_INNER, ell, s, t,
                                          grad_t, qd[ell], ledger, deg[ell])
                d_err = ghat_t - grad_t
                overflow_seen += block.overflow_count
                clamp_seen += block.edge_clamp_count
            c_round.append(c_err)
            d_round.append(d_err)

            # one proximal step everywhere
            direction = h_tilde.copy()
            for i in nbhd[ell]:
                lo, hi = inst.block_range(ell, i)
                direction[sl[i]] = ghat_t[lo:hi] + v_cache[i, ell]
            x = inst.prox(x - eta * direction, eta)
            acc += x
            if record_iterates:
                inner_round.append(x.copy())

        log.c.append(c_round)
        log.d.append(d_round)
        if record_iterates:
            log.x_tilde.append(x_tilde.copy())
            log.inner.append(inner_round)
            log.h_tilde.append(h_tilde.copy())

        gamma = 0.0
        if not unquantized:
            term = _round_error_term(log, inst, s)
            for t in range(T):
                e = reconstruct_error(log, inst, s, t, _round_term=term)
                gamma += float(e @ e)

        xhat_prev = xhat
        ghat_prev = ghat
        x_tilde = acc / T
        rows.append((gap, dist, gamma,
                     float(ledger.cumulative_payload()[s]),
                     float(overflow_seen), float(clamp_seen)))

    log.overflow_count = overflow_seen
    log.edge_clamp_count = clamp_seen
    log.envelope_valid = overflow_seen == 0

    trace = _as_trace(rows, dict(meta or {}, kind="distributed", eta=eta,
                                 T=T, S=S, bits=(None if unquantized else bits),
                                 seed_ell=seed_ell, seed_dither=seed_dither,
                                 envelope_valid=log.envelope_valid))
    trace.final_x = x_tilde
    return trace, ledger, log
