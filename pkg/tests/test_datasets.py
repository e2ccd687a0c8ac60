import gzip

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from virgo.datasets import (
    CORA_SHAPE,
    DatasetError,
    check_masks,
    load_cora,
    load_files,
    random_split,
    read_edge_list,
    read_index_file,
    read_matrix,
    row_normalize,
    write_edge_list,
)
from virgo.graph import build_graph, generate_synthetic


@pytest.fixture(scope="module")
def cora():
    return load_cora()


class TestCora:
    def test_shape(self, cora):
        g, x, y, classes = cora
        assert (g.node_count, x.shape[1], len(classes)) == CORA_SHAPE
        assert x.shape[0] == y.shape[0] == 2708
        assert set(np.unique(y)) == set(range(7))

    def test_binary_features(self, cora):
        x = cora[1]
        assert set(np.unique(x)) <= {0.0, 1.0}

    def test_edges(self, cora):
        g = cora[0]
        assert g.edge_count == 5278
        assert g.degrees.min() >= 1


class TestEdgeLists:
    def test_roundtrip(self, tmp_path):
        g = generate_synthetic("erdos_renyi", 30, 0.2, seed=4)
        path = tmp_path / "e.tsv"
        write_edge_list(path, g)
        again = build_graph(read_edge_list(path), 30)
        np.testing.assert_array_equal(again.edges, g.edges)

    def test_comments_and_blank_lines(self, tmp_path):
        path = tmp_path / "e.tsv"
        path.write_text("# header\n0\t1\n\n1 2  # trailing\n")
        np.testing.assert_array_equal(read_edge_list(path), [[0, 1], [1, 2]])

    def test_gzip_fallback(self, tmp_path):
        with gzip.open(tmp_path / "e.tsv.gz", "wt") as fh:
            fh.write("0\t1\n")
        np.testing.assert_array_equal(read_edge_list(tmp_path / "e.tsv"), [[0, 1]])

    def test_malformed_line(self, tmp_path):
        path = tmp_path / "e.tsv"
        path.write_text("0\t1\t2\n")
        with pytest.raises(DatasetError, match=":1:"):
            read_edge_list(path)

    def test_empty_file(self, tmp_path):
        path = tmp_path / "e.tsv"
        path.write_text("")
        assert read_edge_list(path).shape == (0, 2)


class TestFiles:
    def write(self, tmp_path, rows, labels=None):
        (tmp_path / "e.tsv").write_text("0\t1\n1\t2\n")
        (tmp_path / "x.csv").write_text("\n".join(",".join(map(str, r)) for r in rows))
        if labels is not None:
            (tmp_path / "y.csv").write_text("\n".join(map(str, labels)))
        return tmp_path / "e.tsv", tmp_path / "x.csv", (tmp_path / "y.csv" if labels is not None else None)

    def test_load(self, tmp_path):
        g, x, y = load_files(*self.write(tmp_path, [[1, 0], [0, 1], [1, 1]], [0, 1, 0]))
        assert g.node_count == 3 and x.shape == (3, 2)
        np.testing.assert_array_equal(y, [0, 1, 0])

    def test_feature_count_mismatch_names_both(self, tmp_path):
        with pytest.raises(DatasetError, match="2 rows.*3 nodes"):
            load_files(*self.write(tmp_path, [[1, 0], [0, 1]]), node_count=3)

    def test_label_count_mismatch(self, tmp_path):
        with pytest.raises(DatasetError, match="label file has 2"):
            load_files(*self.write(tmp_path, [[1, 0], [0, 1], [1, 1]], [0, 1]))

    def test_edge_out_of_range(self, tmp_path):
        e, x, _ = self.write(tmp_path, [[1, 0], [0, 1]])
        with pytest.raises(DatasetError):
            load_files(e, x, None)

    def test_ragged_matrix(self, tmp_path):
        path = tmp_path / "x.csv"
        path.write_text("1,2\n3\n")
        with pytest.raises(DatasetError, match="ragged"):
            read_matrix(path)

    def test_index_file(self, tmp_path):
        path = tmp_path / "i.txt"
        path.write_text("3 1\n4\n")
        np.testing.assert_array_equal(read_index_file(path), [3, 1, 4])


class TestSplits:
    @given(st.integers(1, 500), st.integers(0, 2**31 - 1))
    def test_partition(self, n, seed):
        masks = random_split(n, seed)
        check_masks(masks, n)
        total = masks["train"].astype(int) + masks["valid"] + masks["test"]
        np.testing.assert_array_equal(total, 1)

    def test_deterministic(self):
        a, b = random_split(100, 7), random_split(100, 7)
        for k in a:
            np.testing.assert_array_equal(a[k], b[k])

    def test_cora_sizes(self):
        masks = random_split(2708, 0)
        assert [int(masks[k].sum()) for k in ("train", "valid", "test")] == [1625, 542, 541]

    def test_overlap_rejected(self):
        m = np.array([True, False])
        with pytest.raises(DatasetError, match="overlap"):
            check_masks({"train": m, "valid": m, "test": ~m}, 2)

    def test_missing_mask(self):
        with pytest.raises(DatasetError, match="valid"):
            check_masks({"train": np.ones(2, bool), "test": np.zeros(2, bool)}, 2)


class TestRowNormalize:
    def test_rows_sum_to_one(self):
        out = row_normalize(np.array([[1.0, 3.0], [0.0, 0.0], [2.0, 2.0]]))
        np.testing.assert_allclose(out, [[0.25, 0.75], [0.0, 0.0], [0.5, 0.5]])
