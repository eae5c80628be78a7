import numpy as np
import pytest

from qprox import (Graph, ParameterError, ProtocolError, RegularizerSpec,
                   build_instance, generate_instance)
from qprox.central import Replay, exact_reference, inexact_prox_svrg
from qprox.distributed import (HEADER_BYTES, BitLedger, CodewordBlock,
                               Message, MessageKind, bit_upper_bound,
                               decode_message, encode_message,
                               reconstruct_error, reconstruct_round,
                               run_distributed)
from qprox.quantizer import DitherStream, QuantizerState, quantize


@pytest.fixture(scope="module")
def reference(small_instance):
    return exact_reference(small_instance, tol=1e-12)


def path3_instance(m=1, rows=4):
    graph = Graph(3, [[1], [0, 2], [1]])
    return build_instance(graph, m, rows,
                          RegularizerSpec("elastic_net", 0.05, 0.4), seed=6)


class TestWireCodec:
    def random_message(self, gen):
        bits = int(gen.integers(2, 17))
        count = int(gen.integers(0, 120))
        return Message(MessageKind(int(gen.integers(4))),
                       int(gen.integers(2 ** 16)),
                       int(gen.integers(2 ** 32)), int(gen.integers(2 ** 32)),
                       bits,
                       CodewordBlock(gen.integers(0, 2 ** bits, count)
                                     .astype(np.uint32)))

    def test_roundtrip_identity_many(self):
        gen = np.random.default_rng(0)
        for _ in range(10_000):
            msg = self.random_message(gen)
            assert decode_message(encode_message(msg)) == msg

    def test_empty_payload_is_header_only(self):
        msg = Message(MessageKind.STATE_OUTER, 3, 1, 0, 11,
                      CodewordBlock(np.zeros(0, dtype=np.uint32)))
        frame = encode_message(msg)
        assert len(frame) == 17 == HEADER_BYTES
        assert decode_message(frame) == msg

    def test_bad_magic_rejected(self):
        frame = bytearray(encode_message(Message(
            MessageKind.GRAD_INNER, 0, 0, 0, 4,
            CodewordBlock(np.array([1, 2], dtype=np.uint32)))))
        frame[0] ^= 0xFF
        with pytest.raises(ProtocolError):
            decode_message(bytes(frame))

    def test_unknown_kind_rejected(self):
        frame = bytearray(encode_message(Message(
            MessageKind.GRAD_INNER, 0, 0, 0, 4,
            CodewordBlock(np.array([1], dtype=np.uint32)))))
        frame[1] = 9
        with pytest.raises(ProtocolError):
            decode_message(bytes(frame))

    def test_truncated_payload_rejected(self):
        frame = encode_message(Message(
            MessageKind.STATE_INNER, 1, 0, 0, 8,
            CodewordBlock(np.arange(10, dtype=np.uint32))))
        with pytest.raises(ProtocolError):
            decode_message(frame[:-2])

    def test_truncated_header_rejected(self):
        with pytest.raises(ProtocolError):
            decode_message(b"Q")


class TestBitAccounting:
    def test_flagship_upper_bound_value(self):
        assert bit_upper_bound(40, 80, 9, 10, 11) == 1_188_000

    def test_degenerate_degree_one(self):
        assert bit_upper_bound(7, 5, 1, 3, 8) == 8 * 3 * 12 * 2

    def test_positive_arguments_required(self):
        with pytest.raises(ParameterError):
            bit_upper_bound(0, 80, 9, 10, 11)

    def test_three_node_path_hand_counts(self):
        inst = path3_instance(m=1)
        bits = 6
        T, S = 5, 2
        trace, ledger, log = run_distributed(
            inst, eta=0.1 / inst.smoothness().L_bar, T=T, S=S, bits=bits,
            kappa=0.9, C_a=5, C_b=50, C_c=5, C_d=60, seed_ell=1,
            seed_dither=2)
        # closed neighborhoods: {0,1}, {0,1,2}, {1,2} -> sizes 2, 3, 2
        outer_expect = bits * ((2 + 4) + (3 + 9) + (2 + 4))
        inner_expect = {0: bits * (4 + 2), 1: bits * (9 + 3),
                        2: bits * (4 + 2)}
        for s in range(S):
            assert ledger.outer_payload[s] == outer_expect
            for t in range(T):
                ell = int(log.ell[s, t])
                assert ledger.inner_payload_bits(s, t) == inner_expect[ell]
            cap = bit_upper_bound(3, T, 3, 1, bits)
            assert ledger.round_payload_bits(s) <= cap

    def test_trace_bits_match_ledger(self, small_instance):
        inst = small_instance
        trace, ledger, _ = run_distributed(
            inst, eta=0.1 / inst.smoothness().L_bar, T=6, S=4, bits=8,
            kappa=0.9, C_a=5, C_b=60, C_c=5, C_d=60, seed_ell=3,
            seed_dither=4)
        assert np.array_equal(trace.bits_cum, ledger.cumulative_payload())

    def test_headers_tracked_separately(self):
        inst = path3_instance()
        _, ledger, _ = run_distributed(
            inst, eta=0.1 / inst.smoothness().L_bar, T=2, S=1, bits=6,
            kappa=0.9, C_a=5, C_b=50, C_c=5, C_d=60, seed_ell=1,
            seed_dither=2)
        # every delivery carries one 17-byte frame header
        deliveries_outer = 2 * (2 + 3 + 2)
        assert ledger.outer_header[0] == deliveries_outer * 8 * HEADER_BYTES
        assert ledger.header_total > 0
        assert ledger.payload_total == ledger.round_payload_bits(0)


class TestLimitModeEquivalence:
    def test_unquantized_equals_central_bit_for_bit(self, small_instance,
                                                    reference):
        inst = small_instance
        eta = 0.1 / inst.smoothness().L_bar
        central = inexact_prox_svrg(inst, eta, T=12, S=10, seed=42,
                                    x_star=reference)
        dist, ledger, log = run_distributed(
            inst, eta=eta, T=12, S=10, seed_ell=42, seed_dither=7,
            unquantized=True, x_star=reference)
        assert np.array_equal(central.gap, dist.gap)
        assert np.array_equal(central.dist, dist.dist)
        assert np.array_equal(central.final_x, dist.final_x)
        assert log.overflow_count == 0
        assert np.all(dist.gamma == 0.0)
        assert ledger.payload_total > 0  # 64-bit convention still booked


class TestQuantizedRun:
    def run(self, inst, **kw):
        args = dict(eta=0.1 / inst.smoothness().L_bar, T=8, S=6, bits=10,
                    kappa=0.95, C_a=8.0, C_b=80.0, C_c=8.0, C_d=90.0,
                    seed_ell=5, seed_dither=6)
        args.update(kw)
        return run_distributed(inst, **args)

    def test_deterministic(self, small_instance):
        a = self.run(small_instance)[0]
        b = self.run(small_instance)[0]
        assert np.array_equal(a.gamma, b.gamma)
        assert np.array_equal(a.final_x, b.final_x)

    def test_dither_seed_changes_errors(self, small_instance):
        a = self.run(small_instance)[2]
        b = self.run(small_instance, seed_dither=99)[2]
        assert not np.array_equal(a.a[0], b.a[0])

    def test_inner_state_batch_matches_per_message_path(self, small_instance):
        inst = small_instance
        _, _, log = self.run(inst, record_iterates=True)
        s, t = 2, 3
        ell = int(log.ell[s, t])
        x = log.inner[s][t - 1] if t > 0 else log.x_tilde[s]
        U_c = 8.0 * 0.95 ** ((s + 1) / 2.0)
        xhat_anchor = log.x_tilde[s] + log.a[s]
        parts = []
        for j in inst.graph.neighborhood(ell):
            q = QuantizerState(10, U_c, xhat_anchor[inst.block(j)], "c", 0.95)
            _, val = quantize(x[inst.block(j)], q,
                              DitherStream(6, "c", j, s, t))
            parts.append(val - x[inst.block(j)])
        assert np.array_equal(np.concatenate(parts), log.c[s][t])

    def test_cache_coherence(self, small_instance):
        inst = small_instance
        _, _, log = self.run(inst, record_iterates=True)
        for s in range(log.S):
            xhat = log.x_tilde[s] + log.a[s]
            ghat = [inst.local_gradient(j, xhat[inst.nbhd_index(j)])
                    + log.b[s][j] for j in range(inst.N)]
            h_expect = np.zeros(inst.P)
            for j in range(inst.N):
                for i in inst.graph.neighborhood(j):
                    lo, hi = inst.block_range(j, i)
                    h_expect[inst.block(i)] += ghat[j][lo:hi]
            h_expect /= inst.N
            assert np.allclose(h_expect, log.h_tilde[s], rtol=1e-12,
                               atol=1e-14)

    def test_zero_error_log_reconstructs_zero(self, small_instance):
        inst = small_instance
        _, _, log = run_distributed(
            inst, eta=0.1 / inst.smoothness().L_bar, T=4, S=2,
            seed_ell=1, seed_dither=1, unquantized=True)
        e = reconstruct_error(log, inst, 1, 2)
        assert np.array_equal(e, np.zeros(inst.P))

    def test_reconstruct_demands_logged_indices(self, small_instance):
        _, _, log = self.run(small_instance)
        with pytest.raises(ParameterError):
            reconstruct_error(log, small_instance, 99, 0)
        with pytest.raises(ParameterError):
            reconstruct_error(log, small_instance, 0, 0,
                              ell=(int(log.ell[0, 0]) + 1) % 6)

    def test_replay_equivalence(self, small_instance, reference):
        inst = small_instance
        eta = 0.1 / inst.smoothness().L_bar
        S, T = 6, 8
        _, _, log = run_distributed(
            inst, eta=eta, T=T, S=S, bits=9, kappa=0.95, C_a=8.0, C_b=80.0,
            C_c=8.0, C_d=90.0, seed_ell=21, seed_dither=22,
            record_iterates=True)
        errors = [reconstruct_round(log, inst, s) for s in range(S)]
        replay = inexact_prox_svrg(inst, eta, T=T, S=S,
                                   injector=Replay(errors), seed=21,
                                   record_inner=True)
        for s in range(S):
            for t in range(T):
                ref = log.inner[s][t]
                dev = np.linalg.norm(replay.inner[s][t] - ref)
                assert dev <= 1e-9 * max(1.0, np.linalg.norm(ref))

    def test_overflow_flags_run(self, small_instance):
        inst = small_instance
        # tiny intervals force overflows; run must survive and flag
        trace, _, log = self.run(inst, C_a=1e-3, C_b=1e-3, C_c=1e-3,
                                 C_d=1e-3, S=2)
        assert log.overflow_count > 0
        assert not log.envelope_valid
        assert trace.overflows[-1] == log.overflow_count

    def test_precondition_errors(self, small_instance):
        inst = small_instance
        L = inst.smoothness().L_bar
        with pytest.raises(ParameterError):
            self.run(inst, eta=1.0 / L)
        with pytest.raises(ParameterError):
            self.run(inst, kappa=1.2)
        with pytest.raises(ParameterError):
            self.run(inst, bits=1)
        with pytest.raises(ParameterError):
            self.run(inst, C_b=0.0)
