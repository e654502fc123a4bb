import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mace_engine.errors import ParseError
from mace_engine.extxyz import parse_extxyz, read_extxyz, write_extxyz
from mace_engine.graph import Configuration

TWO_ATOMS = """2
energy=-1.5 Properties=species:S:1:pos:R:3:forces:R:3
H 0.0 0.0 0.0 0.1 0.0 0.0
O 0.0 0.0 1.0 -0.1 0.0 0.0
"""


def test_labelled_frame():
    (c,) = parse_extxyz(TWO_ATOMS)
    assert c.energy == -1.5
    np.testing.assert_array_equal(c.species, [1, 8])
    np.testing.assert_array_equal(c.forces, [[0.1, 0, 0], [-0.1, 0, 0]])
    np.testing.assert_array_equal(c.positions[1], [0, 0, 1])


def test_frame_without_forces():
    (c,) = parse_extxyz("1\nProperties=species:S:1:pos:R:3\nH 0 0 0\n")
    assert c.forces is None
    assert c.energy is None


def test_default_properties_and_crlf():
    (c,) = parse_extxyz("2\r\nenergy=3\r\nH 0 0 0\r\nH 0 0 1\r\n")
    assert c.energy == 3.0
    assert len(c) == 2


def test_missing_atom_line_names_frame():
    text = TWO_ATOMS + "3\nenergy=0\nH 0 0 0\nH 0 0 1\n"
    with pytest.raises(ParseError, match="frame 1") as exc:
        parse_extxyz(text)
    assert exc.value.line == 5


def test_malformed_properties():
    with pytest.raises(ParseError) as exc:
        parse_extxyz("1\nProperties=species:S:1:pos:R\nH 0 0 0\n")
    assert exc.value.line == 2


def test_non_numeric_coordinate_reports_line():
    with pytest.raises(ParseError) as exc:
        parse_extxyz("2\nenergy=1\nH 0 0 0\nH 0 x 1\n")
    assert exc.value.line == 4


def test_empty_text_is_error():
    with pytest.raises(ParseError):
        parse_extxyz("")


def test_unknown_keys_and_columns_preserved():
    text = '1\nenergy=1 source="md run" step=4 Properties=species:S:1:pos:R:3:tag:I:1\nO 0 0 0 7\n'
    (c,) = parse_extxyz(text)
    assert c.info == {"source": "md run", "step": "4"}
    np.testing.assert_array_equal(c.arrays["tag"], [7])
    (again,) = parse_extxyz(write_extxyz([c]))
    assert again.info == c.info
    np.testing.assert_array_equal(again.arrays["tag"], [7])


def test_lattice_and_pbc():
    text = '1\nLattice="3 0 0 0 3 0 0 0 3" pbc="T T F" Properties=species:S:1:pos:R:3\nH 0 0 0\n'
    (c,) = parse_extxyz(text)
    np.testing.assert_array_equal(c.cell, 3 * np.eye(3))
    assert c.pbc == (True, True, False)
    (again,) = parse_extxyz(write_extxyz([c]))
    assert again.pbc == c.pbc


def test_empty_list_writes_empty_text():
    assert write_extxyz([]) == ""


def test_unlabelled_config_has_no_energy_key():
    text = write_extxyz([Configuration([[0, 0, 0]], [1])])
    assert "energy" not in text
    assert "forces" not in text


def test_predictions_only_when_requested():
    c = Configuration([[0, 0, 0]], [1], energy=1.0)
    c.info["energy_pred"] = 2.0
    c.arrays["forces_pred"] = np.zeros((1, 3))
    assert "pred" not in write_extxyz([c])
    (again,) = parse_extxyz(write_extxyz([c], include_predictions=True))
    assert float(again.info["energy_pred"]) == 2.0
    assert again.energy == 1.0
    assert again.arrays["forces_pred"].shape == (1, 3)


def _random_configs(rng, n):
    out = []
    for _ in range(n):
        k = int(rng.integers(1, 7))
        pos = rng.normal(scale=3, size=(k, 3))
        labelled = rng.random() < 0.7
        out.append(
            Configuration(
                pos,
                rng.choice([1, 6, 8, 29], size=k),
                energy=float(rng.normal()) if labelled else None,
                forces=rng.normal(size=(k, 3)) if labelled else None,
            )
        )
    return out


@given(st.integers(0, 2**31 - 1))
def test_round_trip(seed):
    configs = _random_configs(np.random.default_rng(seed), 10)
    again = parse_extxyz(write_extxyz(configs))
    assert len(again) == len(configs)
    for a, b in zip(configs, again):
        np.testing.assert_array_equal(a.species, b.species)
        np.testing.assert_allclose(a.positions, b.positions, atol=1e-10, rtol=0)
        assert (a.energy is None) == (b.energy is None)
        if a.energy is not None:
            assert abs(a.energy - b.energy) <= 1e-10
            np.testing.assert_allclose(a.forces, b.forces, atol=1e-10, rtol=0)


def test_read_empty_file(tmp_path):
    p = tmp_path / "empty.extxyz"
    p.write_text("")
    assert read_extxyz(p) == []


def test_committed_dataset_parses(synthetic_path):
    configs = read_extxyz(synthetic_path)
    assert len(configs) == 200
    assert all(3 <= len(c) <= 6 and c.forces is not None for c in configs)
    assert {int(z) for c in configs for z in c.species} == {1, 8}
