import numpy as np
import pytest

from qprox import ProtocolError, RegularizerSpec, generate_instance
from qprox.central import inexact_prox_svrg
from qprox.distributed import run_distributed, reconstruct_error
from qprox.io import (load_instance, load_quantlog, read_trace,
                      save_instance, save_quantlog, write_ledger,
                      write_trace, write_xgen_csv)


@pytest.fixture(scope="module")
def inst():
    return generate_instance(6, 2, 2, 8,
                             RegularizerSpec("elastic_net", 0.1, 0.5), seed=3)


class TestInstanceContainer:
    def test_roundtrip_bit_exact(self, inst, tmp_path):
        path = tmp_path / "instance.qprx"
        save_instance(path, inst)
        back = load_instance(path)
        assert back.graph == inst.graph
        assert back.m == inst.m
        assert back.regularizer == inst.regularizer
        assert np.array_equal(back.x_gen, inst.x_gen)
        for a, b in zip(back.H, inst.H):
            assert np.array_equal(a, b)
        for a, b in zip(back.h, inst.h):
            assert np.array_equal(a, b)

    def test_magic_bytes(self, inst, tmp_path):
        path = tmp_path / "instance.qprx"
        save_instance(path, inst)
        assert path.read_bytes()[:4] == b"QPRX"

    def test_wrong_magic_rejected(self, inst, tmp_path):
        path = tmp_path / "bad.qprx"
        save_instance(path, inst)
        data = bytearray(path.read_bytes())
        data[0] = 0
        path.write_bytes(bytes(data))
        with pytest.raises(ProtocolError):
            load_instance(path)

    def test_truncated_rejected(self, inst, tmp_path):
        path = tmp_path / "short.qprx"
        save_instance(path, inst)
        path.write_bytes(path.read_bytes()[:40])
        with pytest.raises(ProtocolError):
            load_instance(path)

    def test_xgen_csv(self, inst, tmp_path):
        path = tmp_path / "x_gen.csv"
        write_xgen_csv(path, inst)
        lines = path.read_text().splitlines()
        assert lines[0] == "index,value"
        assert len(lines) == inst.P + 1
        assert float(lines[1].split(",")[1]) == inst.x_gen[0]


class TestQuantLogContainer:
    def test_roundtrip_and_replay(self, inst, tmp_path):
        eta = 0.1 / inst.smoothness().L_bar
        _, _, log = run_distributed(inst, eta=eta, T=6, S=4, bits=9,
                                    kappa=0.95, C_a=8, C_b=80, C_c=8, C_d=90,
                                    seed_ell=2, seed_dither=3)
        path = tmp_path / "quantlog.qprl"
        save_quantlog(path, log)
        back = load_quantlog(path, inst)
        assert back.S == log.S and back.T == log.T
        assert np.array_equal(back.ell, log.ell)
        assert back.envelope_valid == log.envelope_valid
        for s in range(log.S):
            assert np.array_equal(back.a[s], log.a[s])
            for i in range(inst.N):
                assert np.array_equal(back.b[s][i], log.b[s][i])
            for t in range(log.T):
                assert np.array_equal(back.c[s][t], log.c[s][t])
                assert np.array_equal(back.d[s][t], log.d[s][t])
        e_orig = reconstruct_error(log, inst, 2, 3)
        e_back = reconstruct_error(back, inst, 2, 3)
        assert np.array_equal(e_orig, e_back)

    def test_instance_mismatch_rejected(self, inst, tmp_path):
        eta = 0.1 / inst.smoothness().L_bar
        _, _, log = run_distributed(inst, eta=eta, T=3, S=2, bits=9,
                                    kappa=0.95, C_a=8, C_b=80, C_c=8, C_d=90,
                                    seed_ell=2, seed_dither=3)
        path = tmp_path / "quantlog.qprl"
        save_quantlog(path, log)
        other = generate_instance(4, 2, 2, 8, inst.regularizer, seed=1)
        with pytest.raises(ProtocolError):
            load_quantlog(path, other)


class TestTraceCsv:
    def test_roundtrip(self, inst, tmp_path):
        eta = 0.1 / inst.smoothness().L_bar
        trace = inexact_prox_svrg(inst, eta, T=5, S=6, seed=8,
                                  x_star=np.zeros(inst.P),
                                  meta={"config_hash": "abc123",
                                        "seed_master": 1})
        path = tmp_path / "trace.csv"
        write_trace(path, trace)
        text = path.read_text()
        assert text.startswith("#")
        assert "config_hash=abc123" in text.splitlines()[0]
        assert text.splitlines()[1] == \
            "s,gap,dist,gamma,bits_cum,overflows,edge_clamps"
        back = read_trace(path)
        assert np.array_equal(back.gap, trace.gap)
        assert np.array_equal(back.dist, trace.dist)
        assert back.meta["config_hash"] == "abc123"

    def test_identical_runs_identical_bytes(self, inst, tmp_path):
        eta = 0.1 / inst.smoothness().L_bar
        paths = []
        for name in ("a.csv", "b.csv"):
            trace = inexact_prox_svrg(inst, eta, T=5, S=6, seed=8,
                                      x_star=np.zeros(inst.P),
                                      meta={"seed_master": 4})
            p = tmp_path / name
            write_trace(p, trace)
            paths.append(p.read_bytes())
        assert paths[0] == paths[1]

    def test_ledger_csv(self, inst, tmp_path):
        eta = 0.1 / inst.smoothness().L_bar
        _, ledger, _ = run_distributed(inst, eta=eta, T=4, S=3, bits=9,
                                       kappa=0.95, C_a=8, C_b=80, C_c=8,
                                       C_d=90, seed_ell=2, seed_dither=3)
        path = tmp_path / "ledger.csv"
        write_ledger(path, ledger, {"seed_master": 9})
        lines = path.read_text().splitlines()
        assert len(lines) == 2 + 3
        total = int(lines[-1].split(",")[-1])
        assert total == ledger.payload_total
