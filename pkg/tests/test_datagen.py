import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from posescene import datagen, textenc
from posescene import kinematics as kin
from posescene.errors import ConfigError, DataError


def test_generate_deterministic():
    a = datagen.generate(300, 7)
    b = datagen.generate(300, 7)
    for ra, rb in zip(a, b):
        assert ra.caption == rb.caption and ra.archetype == rb.archetype
        assert np.array_equal(ra.pose, rb.pose)
        assert np.array_equal(ra.root, rb.root)


def test_generate_uniform_archetypes():
    records = datagen.generate(8000, 3)
    names = [a.name for a in datagen.default_archetypes()]
    counts = {n: 0 for n in names}
    for r in records:
        counts[r.archetype] += 1
    # 3 sigma of Binomial(8000, 1/8)
    sigma = np.sqrt(8000 * (1 / 8) * (7 / 8))
    for n in names:
        assert abs(counts[n] - 1000) < 3 * sigma


def test_generated_poses_valid_rotations():
    for r in datagen.generate(100, 5):
        for aa in r.pose:
            R = kin.axis_angle_to_matrix(aa)
            assert np.abs(R.T @ R - np.eye(3)).max() < 1e-9
        assert np.linalg.norm(r.root) <= np.pi + 1e-9


def test_root_yaw_range():
    for r in datagen.generate(500, 6):
        assert r.root[0] == 0.0 and r.root[2] == 0.0
        assert abs(r.root[1]) <= np.pi / 4


def test_caption_keyword_consistency():
    """Each caption carries a keyword token unique to its archetype."""
    archetypes = datagen.default_archetypes()
    token_sets = {
        a.name: set().union(*(textenc.words(c) for c in datagen.template_surface_forms(a)))
        for a in archetypes
    }
    for a in archetypes:
        assert a.keywords, a.name
        for other in archetypes:
            if other.name != a.name:
                assert not (a.keywords & token_sets[other.name]), (
                    a.name, other.name, a.keywords & token_sets[other.name])
        for caption in datagen.template_surface_forms(a):
            assert a.keywords & set(textenc.words(caption)), caption


def test_archetypes_have_enough_surface_forms():
    for a in datagen.default_archetypes():
        forms = set(datagen.template_surface_forms(a))
        assert len(forms) >= 4
        assert a.jitter_std <= 0.3


def test_fk_bounding_box():
    skel = kin.default_skeleton()
    for r in datagen.generate(200, 9):
        states = kin.forward_kinematics(skel, r.to_pose())
        assert np.abs(states.positions).max() < 2.0


def test_round_trip_write_ingest(tmp_path):
    records = datagen.generate(100, 3)
    path = tmp_path / "corpus.tsv"
    datagen.write_records(path, records)
    loaded, report = datagen.ingest(path)
    assert report.kept == 100 and not report.dropped
    for a, b in zip(records, loaded):
        assert a.id == b.id and a.archetype == b.archetype and a.caption == b.caption
        # 9 significant digits keep values within 1e-8 for angles below pi
        assert np.abs(a.pose - b.pose).max() < 1e-8
        assert np.abs(a.root - b.root).max() < 1e-8
        assert b.source == "INGESTED"


def test_ingest_empty_file(tmp_path):
    path = tmp_path / "empty.tsv"
    path.write_text("")
    records, report = datagen.ingest(path)
    assert records == [] and report.kept == 0 and not report.dropped


def test_ingest_drops_non_finite(tmp_path):
    records = datagen.generate(3, 1)
    path = tmp_path / "c.tsv"
    datagen.write_records(path, records)
    lines = path.read_text().splitlines()
    cols = lines[1].split("\t")
    cols[5] = "nan"
    lines[1] = "\t".join(cols)
    path.write_text("\n".join(lines) + "\n")
    loaded, report = datagen.ingest(path)
    assert report.kept == 2
    assert report.dropped == {"non-finite": 1}
    assert any("non-finite" in d for d in report.diagnostics)


def test_ingest_drops_duplicates_and_bad_angles(tmp_path):
    records = datagen.generate(3, 2)
    path = tmp_path / "c.tsv"
    datagen.write_records(path, records)
    lines = path.read_text().splitlines()
    dup = lines[1]
    cols = lines[2].split("\t")
    cols[3] = "9.42"  # angle beyond pi
    lines.append(dup)
    lines[2] = "\t".join(cols)
    path.write_text("\n".join(lines) + "\n")
    loaded, report = datagen.ingest(path)
    assert report.dropped["duplicate-id"] == 1
    assert report.dropped["angle-out-of-range"] == 1


def test_ingest_malformed_line_diagnostic(tmp_path):
    path = tmp_path / "c.tsv"
    path.write_text(datagen.FORMAT_HEADER + "\nnot a record\n")
    loaded, report = datagen.ingest(path)
    assert loaded == []
    assert report.dropped == {"malformed": 1}
    assert "line 2" in report.diagnostics[0]


def test_ingest_missing_header(tmp_path):
    path = tmp_path / "c.tsv"
    path.write_text("1\tfoo\tbar\n")
    with pytest.raises(DataError):
        datagen.ingest(path)


def test_split_sizes_and_partition():
    records = datagen.generate(100, 4)
    train, val, test = datagen.split(records, (0.8, 0.1, 0.1), 5)
    assert (len(train), len(val), len(test)) == (80, 10, 10)
    ids = sorted(r.id for part in (train, val, test) for r in part)
    assert ids == list(range(100))


def test_split_deterministic_and_seed_sensitive():
    records = datagen.generate(100, 4)
    a1 = datagen.split(records, (0.5, 0.5), 1)
    a2 = datagen.split(records, (0.5, 0.5), 1)
    b = datagen.split(records, (0.5, 0.5), 2)
    assert [r.id for r in a1[0]] == [r.id for r in a2[0]]
    assert [r.id for r in a1[0]] != [r.id for r in b[0]]


@given(st.floats(0.01, 0.99))
@settings(max_examples=20, deadline=None)
def test_split_two_way_exhaustive(frac):
    records = datagen.generate(40, 0)
    a, b = datagen.split(records, (frac, 1.0 - frac), 3)
    assert len(a) + len(b) == 40


def test_split_bad_fractions():
    records = datagen.generate(10, 0)
    with pytest.raises(ConfigError):
        datagen.split(records, (0.5, 0.6), 0)
    with pytest.raises(ConfigError):
        datagen.split(records, (1.2, -0.2), 0)


def test_generate_rejects_bad_n():
    with pytest.raises(DataError):
        datagen.generate(0, 1)
