"""Cardinality tables and partition functions against brute force."""

import math

import numpy as np
import pytest

from mallows_smc2.cardinality import (
    CardinalityTable,
    PartitionFunction,
    build_cardinality_table,
    exact_cardinality_table,
    find_table,
    load_cardinality_table,
    write_cardinality_table,
)
from mallows_smc2.rankings import Distance, distances_to, permutation_matrix

ALPHAS = (0.0, 0.1, 0.5, 1.0, 2.0, 5.0)


class TestTableConstruction:
    def test_m3_kendall(self):
        t = build_cardinality_table(3, Distance.KENDALL)
        assert t.distances.tolist() == [0, 1, 2, 3]
        assert list(t.counts) == [1, 2, 2, 1]

    def test_m2_footrule(self):
        t = build_cardinality_table(2, Distance.FOOTRULE)
        assert t.distances.tolist() == [0, 2]
        assert list(t.counts) == [1, 1]

    def test_m1(self):
        for kind in Distance:
            t = build_cardinality_table(1, kind)
            assert t.distances.tolist() == [0] and list(t.counts) == [1]

    @pytest.mark.parametrize("m", range(1, 8))
    @pytest.mark.parametrize("kind", list(Distance))
    def test_exact_recurrences_match_brute_force(self, m, kind):
        brute = build_cardinality_table(m, kind)
        exact = exact_cardinality_table(m, kind)
        assert brute.distances.tolist() == exact.distances.tolist()
        assert list(brute.counts) == list(exact.counts)

    @pytest.mark.parametrize("m", [6, 9, 12])
    @pytest.mark.parametrize("kind", [Distance.FOOTRULE, Distance.SPEARMAN, Distance.ULAM])
    def test_counts_sum_to_factorial(self, m, kind):
        t = exact_cardinality_table(m, kind)
        assert sum(t.counts) == math.factorial(m)

    def test_invariant_violations(self):
        with pytest.raises(ValueError):
            CardinalityTable(2, Distance.FOOTRULE, np.array([0, 2]), (1, 2))  # sum != 2!
        with pytest.raises(ValueError):
            CardinalityTable(2, Distance.FOOTRULE, np.array([2, 0]), (1, 1))  # not increasing
        with pytest.raises(ValueError):
            CardinalityTable(2, Distance.FOOTRULE, np.array([1, 2]), (1, 1))  # no zero row


class TestTableFiles:
    def test_roundtrip(self, tmp_path):
        t = build_cardinality_table(4, Distance.SPEARMAN)
        path = tmp_path / "spearman_4.txt"
        write_cardinality_table(t, path)
        back = load_cardinality_table(path)
        assert back.m == 4 and back.kind == Distance.SPEARMAN
        assert back.distances.tolist() == t.distances.tolist()
        assert list(back.counts) == list(t.counts)

    def test_header_and_comments(self, tmp_path):
        path = tmp_path / "t.txt"
        path.write_text("# comment\nm=3 kind=kendall\n0 1\n1 2\n2 2\n3 1  # tail\n")
        t = load_cardinality_table(path)
        assert list(t.counts) == [1, 2, 2, 1]

    def test_bad_sum(self, tmp_path):
        path = tmp_path / "t.txt"
        path.write_text("m=3 kind=kendall\n0 1\n1 2\n2 2\n")
        with pytest.raises(ValueError):
            load_cardinality_table(path)

    def test_empty_file(self, tmp_path):
        path = tmp_path / "t.txt"
        path.write_text("")
        with pytest.raises(ValueError):
            load_cardinality_table(path)

    def test_shipped_tables_available(self):
        for kind in (Distance.FOOTRULE, Distance.SPEARMAN, Distance.ULAM):
            for m in (2, 5, 10, 12):
                t = find_table(m, kind)
                assert sum(t.counts) == math.factorial(m)

    def test_user_table_dir(self, tmp_path, monkeypatch):
        t = build_cardinality_table(3, Distance.FOOTRULE)
        write_cardinality_table(t, tmp_path / "footrule_3.txt")
        monkeypatch.setenv("MALLOWS_SMC2_TABLE_DIR", str(tmp_path))
        assert find_table(3, Distance.FOOTRULE).m == 3

    def test_missing_table(self):
        with pytest.raises(FileNotFoundError):
            find_table(45, Distance.SPEARMAN)


class TestPartitionFunction:
    def brute_log_z(self, m, kind, alpha):
        perms = permutation_matrix(m)
        d = distances_to(perms, np.arange(1, m + 1, dtype=np.int64), kind)
        w = np.exp(-alpha * d)
        return math.log(w.sum())

    @pytest.mark.parametrize("kind", [Distance.KENDALL, Distance.CAYLEY, Distance.HAMMING])
    @pytest.mark.parametrize("m", range(2, 7))
    def test_closed_forms_small(self, m, kind):
        pf = PartitionFunction(m, kind, backend="closed_form")
        for alpha in ALPHAS:
            ref = self.brute_log_z(m, kind, alpha)
            assert pf.log_z(alpha) == pytest.approx(ref, rel=1e-12, abs=1e-12)

    @pytest.mark.parametrize("kind", [Distance.FOOTRULE, Distance.SPEARMAN, Distance.ULAM])
    @pytest.mark.parametrize("m", range(2, 7))
    def test_tables_small(self, m, kind):
        pf = PartitionFunction(m, kind)
        for alpha in ALPHAS:
            ref = self.brute_log_z(m, kind, alpha)
            assert pf.log_z(alpha) == pytest.approx(ref, rel=1e-12, abs=1e-12)

    def test_alpha_zero_is_log_factorial(self):
        for kind in Distance:
            pf = PartitionFunction(4, kind)
            assert pf.log_z(0.0) == pytest.approx(math.log(24), rel=1e-12)

    def test_m2_kendall_value(self):
        pf = PartitionFunction(2, Distance.KENDALL, backend="closed_form")
        assert pf.log_z(1.0) == pytest.approx(math.log(1 + math.exp(-1)), rel=1e-12)

    def test_m5_footrule_against_enumeration(self):
        pf = PartitionFunction(5, Distance.FOOTRULE)
        ref = self.brute_log_z(5, Distance.FOOTRULE, 0.5)
        assert pf.log_z(0.5) == pytest.approx(ref, rel=1e-12)

    def test_vectorized_matches_scalar(self):
        pf = PartitionFunction(6, Distance.SPEARMAN)
        alphas = np.array(ALPHAS)
        many = pf.log_z_many(alphas)
        for a, v in zip(ALPHAS, many):
            assert v == pytest.approx(pf.log_z(a), rel=1e-14)

    def test_errors(self):
        pf = PartitionFunction(4, Distance.KENDALL, backend="closed_form")
        with pytest.raises(ValueError):
            pf.log_z(-0.1)
        with pytest.raises(ValueError):
            PartitionFunction(4, Distance.FOOTRULE, backend="closed_form")
