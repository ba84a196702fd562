import os
import unittest
import numpy as np
from wtawp.root import ParseError
from wtawp.parsers import planetoid
from tests import core


def data_path(file_name):
    return os.path.join(core.datafolder, file_name)


class TestCitationParser(unittest.TestCase):

    def setUp(self):
        self.parser = planetoid.CitationParser(name="tiny")
        self.graph = self.parser.load_data(
            content_path=data_path("tiny.content"), cites_path=data_path("tiny.cites")
        )

    def test_largest_component(self):
        self.assertEqual(self.graph.n_nodes, 4)
        self.assertEqual(self.graph.n_edges, 4)
        self.assertEqual(self.parser.n_dropped_edges, 1)
        core.assert_symmetric_no_loops(self.graph.adjacency)

    def test_labels_remapped(self):
        self.assertEqual(self.graph.labels.tolist(), [1, 0, 1, 0])
        self.assertEqual(self.graph.n_classes, 2)

    def test_features_row_normalized(self):
        np.testing.assert_allclose(self.graph.features[0], [0.5, 0.0, 0.5, 0.0])
        np.testing.assert_allclose(self.graph.features.sum(axis=1), np.ones(4))

    def test_metadata(self):
        meta = self.parser.get_metadata()
        self.assertEqual(meta["Nodes"], 5)
        self.assertEqual(meta["Dropped_Edges"], 1)
        self.assertEqual(meta["Classes"], 3)


class TestLoadCitationDataset(unittest.TestCase):

    def test_two_nodes(self):
        graph = planetoid.load_citation_dataset(data_path("two.content"), data_path("two.cites"))
        self.assertEqual(graph.name, "two")
        self.assertEqual(graph.n_nodes, 2)
        self.assertEqual(graph.n_edges, 1)
        self.assertEqual(graph.labels.tolist(), [0, 1])

    def test_wrong_width(self):
        with self.assertRaises(ParseError) as ctx:
            planetoid.load_citation_dataset(data_path("bad_width.content"), data_path("two.cites"))
        self.assertEqual(ctx.exception.line_number, 2)

    def test_non_numeric(self):
        with self.assertRaises(ParseError) as ctx:
            planetoid.load_citation_dataset(data_path("bad_value.content"), data_path("two.cites"))
        self.assertEqual(ctx.exception.line_number, 2)
        self.assertIn("bad_value.content", str(ctx.exception))

    def test_bad_cites(self):
        with self.assertRaises(ParseError) as ctx:
            planetoid.load_citation_dataset(data_path("tiny.content"), data_path("bad.cites"))
        self.assertEqual(ctx.exception.line_number, 2)


class TestRowNormalize(unittest.TestCase):

    def test_zero_row_stays_zero(self):
        out = planetoid.row_normalize(np.array([[0.0, 0.0], [1.0, 3.0]]))
        np.testing.assert_array_equal(out, [[0.0, 0.0], [0.25, 0.75]])


if __name__ == "__main__":
    unittest.main()
