import numpy as np
import pytest

from metablock import (
    ABSENT,
    DataError,
    PRESENT,
    UNOBSERVED,
    load_edges,
    load_metadata,
    make_mask,
    synth_single,
    write_edges,
)
from metablock.dataio import write_metadata


def write(path, text):
    path.write_text(text)
    return path


class TestLoadEdges:
    def test_basic_parse_default_absent(self, tmp_path):
        p = write(tmp_path / "e.csv", "#default: absent\na,b,r1,1\nb,a,r1,0\na,c,r1,1\n")
        data, nodes, rels = load_edges(p)
        assert nodes == ["a", "b", "c"] and rels == ["r1"]
        assert data.N == 3 and data.M == 1
        assert data.obs[0, 1, 0] == PRESENT
        assert data.obs[1, 0, 0] == ABSENT
        assert data.obs[0, 2, 0] == PRESENT
        assert data.obs[2, 0, 0] == ABSENT  # unlisted -> default
        assert data.obs[0, 0, 0] == UNOBSERVED  # diagonal convention
        assert data.n_observed == 6

    def test_default_unobserved(self, tmp_path):
        p = write(tmp_path / "e.csv", "#default: unobserved\na,b,r,1\nb,c,r,0\n")
        data, _, _ = load_edges(p)
        assert data.obs[0, 1, 0] == PRESENT
        assert data.obs[1, 2, 0] == ABSENT
        assert data.obs[2, 0, 0] == UNOBSERVED

    def test_missing_default_directive(self, tmp_path):
        p = write(tmp_path / "e.csv", "a,b,r,1\n")
        with pytest.raises(DataError, match="default"):
            load_edges(p)

    def test_unknown_default_value(self, tmp_path):
        p = write(tmp_path / "e.csv", "#default: maybe\na,b,r,1\n")
        with pytest.raises(DataError, match="unknown default"):
            load_edges(p)

    def test_malformed_line_reports_number(self, tmp_path):
        p = write(tmp_path / "e.csv", "#default: absent\na,b,r,1\na,b\n")
        with pytest.raises(DataError, match=":3"):
            load_edges(p)

    def test_bad_value(self, tmp_path):
        p = write(tmp_path / "e.csv", "#default: absent\na,b,r,2\n")
        with pytest.raises(DataError, match="value"):
            load_edges(p)

    def test_duplicate_conflicting_triple(self, tmp_path):
        p = write(tmp_path / "e.csv",
                  "#default: absent\na,b,r,1\na,b,r,0\n")
        with pytest.raises(DataError, match=r"\(a,b,r\)"):
            load_edges(p)

    def test_duplicate_consistent_triple_ok(self, tmp_path):
        p = write(tmp_path / "e.csv", "#default: absent\na,b,r,1\na,b,r,1\n")
        data, _, _ = load_edges(p)
        assert data.obs[0, 1, 0] == PRESENT

    def test_node_roster_preserves_isolated_nodes(self, tmp_path):
        p = write(tmp_path / "e.csv",
                  "#default: absent\n#nodes: a,b,loner\n#relations: r\na,b,r,1\n")
        data, nodes, _ = load_edges(p)
        assert nodes == ["a", "b", "loner"] and data.N == 3

    def test_header_row_ignored(self, tmp_path):
        p = write(tmp_path / "e.csv",
                  "#default: absent\nsrc,dst,relation,value\na,b,r,1\n")
        _, nodes, _ = load_edges(p)
        assert nodes == ["a", "b"]

    def test_roundtrip_identity_on_observed_set(self, tmp_path):
        data, _ = synth_single(5)
        path = tmp_path / "rt.csv"
        write_edges(path, data, default="absent")
        back, nodes, rels = load_edges(path)
        assert np.array_equal(back.obs, data.obs)
        assert len(nodes) == data.N and len(rels) == data.M

    def test_roundtrip_masked_data(self, tmp_path):
        data, _ = synth_single(5)
        train, _ = make_mask(data, 0.5, 1)
        path = tmp_path / "rt.csv"
        write_edges(path, train, default="unobserved")
        back, _, _ = load_edges(path)
        assert np.array_equal(back.obs, train.obs)

    def test_write_absent_default_rejects_masked(self, tmp_path):
        data, _ = synth_single(5)
        train, _ = make_mask(data, 0.5, 1)
        with pytest.raises(DataError, match="unobserved"):
            write_edges(tmp_path / "x.csv", train, default="absent")


class TestLoadMetadata:
    def test_absent_file_means_intercept_only(self):
        from metablock import Metadata
        phi = Metadata.intercept_only(4)
        assert phi.F == 1
        np.testing.assert_array_equal(phi.phi, np.ones((1, 4)))

    def test_numeric_standardized(self, tmp_path):
        p = write(tmp_path / "m.csv", "node,age\na,10\nb,20\nc,30\n")
        phi = load_metadata(p, ["a", "b", "c"])
        assert phi.F == 2
        np.testing.assert_allclose(phi.phi[0], 1.0)
        assert phi.phi[1].mean() == pytest.approx(0.0, abs=1e-12)
        assert phi.phi[1].std() == pytest.approx(1.0, abs=1e-12)

    def test_numeric_raw_when_disabled(self, tmp_path):
        p = write(tmp_path / "m.csv", "node,age\na,10\nb,20\n")
        phi = load_metadata(p, ["a", "b"], standardize=False)
        np.testing.assert_allclose(phi.phi[1], [10.0, 20.0])

    def test_categorical_one_hot(self, tmp_path):
        p = write(tmp_path / "m.csv", "node,rank\na,low\nb,high\nc,mid\nd,low\n")
        phi = load_metadata(p, ["a", "b", "c", "d"])
        assert phi.F == 1 + 3
        assert phi.feature_names == ["intercept", "rank=high", "rank=low", "rank=mid"]
        np.testing.assert_allclose(phi.phi[2], [1.0, 0.0, 0.0, 1.0])  # rank=low

    def test_row_order_follows_node_ids(self, tmp_path):
        p = write(tmp_path / "m.csv", "node,x\nb,2\na,1\n")
        phi = load_metadata(p, ["a", "b"], standardize=False)
        np.testing.assert_allclose(phi.phi[1], [1.0, 2.0])

    def test_missing_node_errors(self, tmp_path):
        p = write(tmp_path / "m.csv", "node,x\na,1\n")
        with pytest.raises(DataError, match="missing"):
            load_metadata(p, ["a", "b"])

    def test_empty_cell_errors(self, tmp_path):
        p = write(tmp_path / "m.csv", "node,x\na,1\nb,\n")
        with pytest.raises(DataError, match="empty cell"):
            load_metadata(p, ["a", "b"])

    def test_mixed_column_is_categorical(self, tmp_path):
        p = write(tmp_path / "m.csv", "node,x\na,1\nb,unknown\n")
        phi = load_metadata(p, ["a", "b"])
        assert phi.F == 3  # intercept + two levels

    def test_writer_roundtrip(self, tmp_path):
        p = tmp_path / "m.csv"
        write_metadata(p, ["a", "b"], {"age": [1.5, 2.5], "rank": ["x", "y"]})
        phi = load_metadata(p, ["a", "b"], standardize=False)
        assert phi.F == 1 + 1 + 2
        np.testing.assert_allclose(phi.phi[1], [1.5, 2.5])
