from fractions import Fraction

import numpy as np
import pytest

from lfmdt.autograd import MacCounter, Tensor
from lfmdt import ops
from lfmdt.complexity import (
    format_ratio,
    macs_by_scope,
    mdt_analytic,
    network_analytic,
    parameter_count,
    st_baseline_analytic,
    verify_against_instrumented,
)
from lfmdt.errors import ConfigError
from lfmdt.network import NetworkConfig, init_params, toy_config


class TestMdtAnalytic:
    def test_paper_branch_projection_params(self):
        c = mdt_analytic(5, 5, 32, 32, 48, 2, [4, 4], 96, 48)
        assert c.params == 2 * (4 * 24 * 96 + 2 * 96 * 48)
        assert 4 * 24 * 96 + 2 * 96 * 48 == 18432

    def test_spatial_scaling(self):
        a = mdt_analytic(5, 5, 8, 8, 48, 2, [4, 4], 96, 48)
        b = mdt_analytic(5, 5, 16, 16, 48, 2, [4, 4], 96, 48)
        assert b.macs["projection"] == 4 * a.macs["projection"]
        assert b.macs["qk"] == 16 * a.macs["qk"]
        assert a.macs["ffn"] == 0

    def test_invalid(self):
        with pytest.raises(ConfigError):
            mdt_analytic(5, 5, 8, 8, 47, 2, [4, 4], 96, 48)
        with pytest.raises(ConfigError):
            mdt_analytic(5, 5, 8, 8, 48, 2, [4, 0], 96, 48)


class TestBaseline:
    def test_minimal(self):
        assert st_baseline_analytic(1, 1, 2, 2, 1).macs["projection"] == 12

    def test_params_independent_of_extent(self):
        assert st_baseline_analytic(1, 1, 2, 2, 8).params == st_baseline_analytic(5, 5, 32, 32, 8).params == 7 * 64

    @pytest.mark.parametrize("U, H, C, N_b, C_QK", [(5, 32, 48, 2, 48), (3, 4, 8, 2, 8), (5, 8, 12, 3, 6)])
    def test_qk_ratio_formula(self, U, H, C, N_b, C_QK):
        m = mdt_analytic(U, U, H, H, C, N_b, [1] * N_b, 2 * C, C_QK)
        b = st_baseline_analytic(U, U, H, H, C)
        assert Fraction(m.macs["qk"], b.macs["qk"]) == Fraction(N_b * C_QK, U * U * C)


class TestReport:
    def test_params_match_store(self):
        for cfg in (toy_config(), toy_config(N_a=3, r=4), NetworkConfig()):
            assert network_analytic(cfg).total_params == parameter_count(cfg) == init_params(cfg).count()

    def test_adding_a_block(self):
        a, b = network_analytic(toy_config(N_a=1)), network_analytic(toy_config(N_a=2))
        block = sum(r.params for r in b.rows if r.component.startswith("blocks.1."))
        assert b.total_params - a.total_params == block

    def test_conv_row(self):
        rows = {r.component: r for r in network_analytic(toy_config(), 8, 8).rows}
        assert rows["blocks.0.conv1"].params == 9 * 64 + 8

    def test_text_and_csv(self):
        rep = network_analytic(NetworkConfig())
        text = rep.render_text()
        assert "33%" in text and "32%" in text and "reference only" in text
        lines = rep.to_csv().splitlines()
        assert lines[0] == "component,params,macs,formula"
        assert lines[-1].startswith(f"TOTAL,{rep.total_params},{rep.total_macs}")

    @pytest.mark.parametrize(
        "ratio, text",
        [(Fraction(8, 100), "8.00%"), (Fraction(1, 3), "33.3%"), (Fraction(1), "100%"), (Fraction(0), "0.00%"),
         (Fraction(9999, 10000), "100%"), (Fraction(2, 3000), "0.0667%")],
    )
    def test_ratio_rendering(self, ratio, text):
        assert format_ratio(ratio) == text


class TestInstrumented:
    def test_single_matmul(self):
        with MacCounter() as mc:
            ops.matmul(Tensor(np.ones((3, 4))), Tensor(np.ones((4, 2))))
        assert mc.total == 24

    def test_toy_network(self):
        v = verify_against_instrumented(toy_config())
        assert v.passed, v.diffs
        assert sum(v.instrumented.values()) == sum(macs_by_scope(toy_config(), 8, 8).values())

    def test_mismatched_config_fails(self):
        cfg = toy_config()
        other = toy_config(C_V=8)
        v = verify_against_instrumented(cfg, params=init_params(other))
        assert not v.passed
        assert v.first_divergence == "blocks.0.angular.qkv"
