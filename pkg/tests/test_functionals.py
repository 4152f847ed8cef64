"""Functional parsing and evaluation."""
import numpy as np
import pytest

from rotinv.functionals import Functional, evaluate, evaluate_block, parse_functional
from rotinv.paths import Path, TimeGrid
from rotinv.simulators import brownian


@pytest.fixture
def hand_path():
    g = TimeGrid(1.5, 3)  # dt = 0.5
    vals = np.array([[0.0, 0.0], [1.0, 2.0], [3.0, 1.0], [2.0, 5.0]])
    return Path(g, vals)


class TestParse:
    def test_forms(self):
        assert parse_functional("coord:1") == Functional("coordinate", 1, None)
        assert parse_functional("coord:2@0.5") == Functional("coordinate", 2, 0.5)
        assert parse_functional("qv-trace") == Functional("qv-trace", 1, None)
        assert parse_functional("running-max:1") == Functional("running-max", 1, None)
        assert parse_functional("clock@1.0") == Functional("clock", 1, 1.0)

    def test_labels_roundtrip(self):
        for text in ("coord:1", "coord:2@0.5", "qv-trace", "running-max:1", "clock@1"):
            fn = parse_functional(text)
            assert parse_functional(fn.label()) == fn

    def test_rejects_unknown(self):
        with pytest.raises(ValueError):
            parse_functional("median")
        with pytest.raises(ValueError):
            Functional("coordinate", 0)


class TestEvaluate:
    def test_hand_values(self, hand_path):
        # increments: (1,2),(2,-1),(-1,4); squared norms 5, 5, 17
        assert evaluate(parse_functional("coord:1"), hand_path) == 2.0
        assert evaluate(parse_functional("coord:2@0.5"), hand_path) == 2.0
        assert evaluate(parse_functional("running-max:1"), hand_path) == 3.0
        assert evaluate(parse_functional("running-max:2@1.0"), hand_path) == 2.0
        assert evaluate(parse_functional("qv-trace"), hand_path) == 27.0
        assert evaluate(parse_functional("qv-trace@1.0"), hand_path) == 10.0
        assert evaluate(parse_functional("clock"), hand_path) == 13.5

    def test_time_outside_horizon(self, hand_path):
        with pytest.raises(ValueError):
            evaluate(parse_functional("coord:1@9.0"), hand_path)

    def test_block_matches_scalar(self):
        g = TimeGrid(1.0, 500)
        vals = np.stack([brownian(2, g, i).values for i in range(8)])
        fns = [parse_functional(t) for t in
               ("coord:1", "coord:2@0.5", "qv-trace", "running-max:1", "clock@0.5")]
        block = evaluate_block(fns, vals, g.dt)
        for j in range(8):
            p = Path(g, vals[j])
            for i, fn in enumerate(fns):
                assert block[i, j] == evaluate(fn, p)
