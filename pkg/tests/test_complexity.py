import math

import numpy as np
import pytest

from hetcache.complexity import constraint_count, ipm_complexity


class TestConstraintCount:
    def test_paper_scale_value(self):
        assert constraint_count("cp-pf-t1", 15, 85, 1000) == 1_361_562

    def test_hand_summed_unit_case(self):
        # B = U = C = N = 1: 2 + 2 + 4 + 2
        assert constraint_count("cp-pf-t1", 1, 1, 1, 1, 1) == 10

    def test_dp_pf_offset(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            B, U, C = rng.integers(1, 40, size=3)
            assert constraint_count("dp-pf-t1", B, U, C) == \
                constraint_count("cp-pf-t1", B, U, C) - (B + 1)

    def test_all_table_row_identities(self):
        rng = np.random.default_rng(1)
        for _ in range(1000):
            B, U, C, na, nb = (int(v) for v in rng.integers(1, 60, size=5))
            t1 = constraint_count("cp-pf-t1", B, U, C, na, nb)
            t2 = constraint_count("cp-pf-t2", B, U, C, na, nb)
            t3 = constraint_count("cp-pf-t3", B, U, C, na, nb)
            assert constraint_count("cp-mmf-t1", B, U, C, na, nb) == t1 + 1
            assert constraint_count("cp-mmf-t2", B, U, C, na, nb) == t2 + 1
            assert constraint_count("cp-mmf-t3", B, U, C, na, nb) == t3 + 1
            assert constraint_count("dp-pf-t2", B, U, C, na, nb) == t2
            assert constraint_count("dp-pf-t3", B, U, C, na, nb) == t3
            assert constraint_count("dp-mmf-t2", B, U, C, na, nb) == t2 + 1
            assert constraint_count("dp-mmf-t3", B, U, C, na, nb) == t3 + 1
            # prose derivation equals the table entry
            assert constraint_count("dp-mmf-t1", B, U, C, na, nb) == t1 - B

    def test_monotone_in_sizes(self):
        base = constraint_count("cp-pf-t1", 5, 10, 20)
        assert constraint_count("cp-pf-t1", 6, 10, 20) > base
        assert constraint_count("cp-pf-t1", 5, 11, 20) > base
        assert constraint_count("cp-pf-t1", 5, 10, 21) > base

    def test_unknown_tag(self):
        with pytest.raises(ValueError):
            constraint_count("cp-pf-t9", 1, 1, 1)
        with pytest.raises(ValueError):
            constraint_count("nonsense", 1, 1, 1)


class TestIpmComplexity:
    def test_unit_case(self):
        assert ipm_complexity(math.e, 1.0, 1.0, math.e) == pytest.approx(1.0)

    def test_scaling_by_xi_adds_one(self):
        v0 = ipm_complexity(100.0, 1.0, 0.5, 3.0)
        v1 = ipm_complexity(300.0, 1.0, 0.5, 3.0)
        assert v1 - v0 == pytest.approx(1.0)

    def test_table_spot_value(self):
        T = constraint_count("cp-pf-t1", 15, 85, 1000)
        got = ipm_complexity(T, 1.0, 1e-3, 10.0)
        assert got == pytest.approx(math.log10(T / 1e-3))

    def test_domain_errors(self):
        with pytest.raises(ValueError):
            ipm_complexity(10.0, 1.0, 1.0, 1.0)
        with pytest.raises(ValueError):
            ipm_complexity(10.0, 0.0, 1.0, 2.0)
        with pytest.raises(ValueError):
            ipm_complexity(-5.0, 1.0, 1.0, 2.0)
