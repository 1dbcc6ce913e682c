import gzip

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from phasesync_se.harness import random_network
from phasesync_se.netmodel import (BranchRecord, BusRecord, Network, ParseError, ValidationError, branch_blocks,
                                   incidence, load_case, parse_case)

from conftest import TWO_BUS


def test_two_bus_parse():
    net = parse_case(TWO_BUS)
    assert (net.n, net.l, net.base_MVA) == (2, 1, 100.0)


def test_two_bus_ybus_hand_value():
    net = parse_case(TWO_BUS)
    expected = np.array([[-10j, 10j], [10j, -10j]])
    np.testing.assert_allclose(net.Ybus.toarray(), expected, rtol=1e-14)


def test_pegase_dimensions(pegase):
    # 1991 in-service branches out of the table
    assert pegase.n == 1354
    assert pegase.l == 1991


def test_pegase13659_gz_loads():
    net = load_case("case13659pegase")
    assert (net.n, net.l) == (13659, 20467)


def test_three_bus_ybus(three_bus):
    net, _, _ = three_bus
    Y = net.Ybus.toarray()
    assert Y[0, 0] == pytest.approx(-1j * (1 / 0.03 + 1 / 0.03), rel=1e-14)
    assert Y[0, 1] == pytest.approx(-1 / 0.03j, rel=1e-14)
    assert Y[1, 2] == pytest.approx(1j / 0.08, rel=1e-14)


def test_dangling_endpoint_rejected():
    bad = TWO_BUS.replace("\t1\t2\t0\t0.1", "\t1\t99\t0\t0.1")
    with pytest.raises(ValidationError, match="99"):
        parse_case(bad)


def test_malformed_row_reports_line():
    text = TWO_BUS.replace("2\t1\t0\t0\t0\t0\t1\t1\t0\t230", "2\t1\t0\tabc\t0\t0\t1\t1\t0\t230")
    with pytest.raises(ParseError) as err:
        parse_case(text)
    assert err.value.line == 7


def test_short_row_rejected():
    text = TWO_BUS.replace("\t1\t2\t0\t0.1\t0\t250\t250\t250\t0\t0\t1\t-360\t360;", "\t1\t2\t0\t0.1;")
    with pytest.raises(ParseError):
        parse_case(text)


def test_missing_base_mva():
    with pytest.raises(ParseError, match="baseMVA"):
        parse_case(TWO_BUS.replace("mpc.baseMVA = 100;", ""))


def test_out_of_service_branch_dropped_and_disconnects():
    text = TWO_BUS.replace("0\t0\t1\t-360\t360;", "0\t0\t0\t-360\t360;")
    with pytest.raises(ValidationError, match="disconnected"):
        parse_case(text)


def test_out_of_service_branch_not_counted():
    text = TWO_BUS.replace("mpc.branch = [\n", "mpc.branch = [\n\t1\t2\t0\t0.2\t0\t0\t0\t0\t0\t0\t0\t-360\t360;\n")
    net = parse_case(text)
    assert net.l == 1
    assert net.branches[0].row == 2  # external id is the table row


def test_zero_impedance_rejected():
    with pytest.raises(ValidationError, match="impedance"):
        parse_case(TWO_BUS.replace("\t1\t2\t0\t0.1", "\t1\t2\t0\t0"))


def test_noncontiguous_ids():
    text = TWO_BUS.replace("\t2\t1\t0\t0\t0\t0", "\t7\t1\t0\t0\t0\t0").replace("\t1\t2\t0\t0.1", "\t1\t7\t0\t0.1")
    net = parse_case(text)
    assert net.id_map == {1: 0, 7: 1}


def test_tap_zero_means_one(case14):
    assert all(br.tau > 0 for br in case14.branches)


def test_load_case_by_path(tmp_path):
    p = tmp_path / "two.m"
    p.write_text(TWO_BUS)
    assert load_case(p).n == 2
    g = tmp_path / "two.m.gz"
    with gzip.open(g, "wt") as fh:
        fh.write(TWO_BUS)
    assert load_case(g).n == 2


def test_unknown_case():
    with pytest.raises(FileNotFoundError):
        load_case("no_such_case_anywhere")


def test_shunt_per_unit():
    text = TWO_BUS.replace("1\t3\t0\t0\t0\t0", "1\t3\t0\t0\t10\t20")
    net = parse_case(text)
    assert net.Ybus[0, 0] == pytest.approx(-10j + (10 + 20j) / 100)


def test_ybus_symmetric_without_shifts(case14):
    assert all(br.shift == 0 for br in case14.branches)
    Y = case14.Ybus
    assert abs(Y - Y.T).max() <= 1e-13 * abs(Y).max()


def test_ybus_unsymmetric_with_shifts(pegase):
    # this case carries phase shifters, which break value symmetry but not the pattern
    assert any(br.shift != 0 for br in pegase.branches)
    Y = pegase.Ybus
    assert abs(Y - Y.T).max() > 0
    assert (abs(Y) > 0).astype(int).nnz == (abs(Y.T) > 0).astype(int).nnz


@settings(max_examples=30, deadline=None)
@given(n=st.integers(2, 25), seed=st.integers(0, 10_000))
def test_assembly_identity(n, seed):
    net = random_network(n, seed)
    Df, Dt = incidence(net)
    ysh = np.array([complex(b.Gs, b.Bs) for b in net.buses]) / net.base_MVA
    Y = Df.T @ net.Yf + Dt.T @ net.Yt + sp.diags(ysh)
    assert abs(Y - net.Ybus).max() <= 1e-13 * abs(net.Ybus).max()


@settings(max_examples=30, deadline=None)
@given(n=st.integers(2, 25), seed=st.integers(0, 10_000))
def test_branch_rows(n, seed):
    net = random_network(n, seed)
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    yff, yft, ytf, ytt = branch_blocks(net)
    f, t = net.from_idx, net.to_idx
    np.testing.assert_allclose(net.Yf @ v, yff * v[f] + yft * v[t], rtol=1e-13, atol=1e-13 * np.abs(v).max())
    np.testing.assert_allclose(net.Yt @ v, ytf * v[f] + ytt * v[t], rtol=1e-13, atol=1e-13 * np.abs(v).max())
    # pattern: only the two endpoint columns
    nnz_cols = np.diff(net.Yf.tocsr().indptr)
    assert np.all(nnz_cols <= 2)


def test_parallel_branches_allowed():
    buses = (BusRecord(1, 3, 0, 0, 1, 0, 1), BusRecord(2, 1, 0, 0, 1, 0, 1))
    branches = (BranchRecord(1, 2, 0, 0.1, row=1), BranchRecord(1, 2, 0, 0.1, row=2))
    net = Network(buses, branches, 100.0)
    assert net.Ybus[0, 1] == pytest.approx(20j)


def test_matrices_canonical(pegase):
    for M in pegase.admittances:
        assert M.has_sorted_indices and M.has_canonical_format
        assert np.all(M.data != 0)
