import os

import pytest
from hypothesis import given, strategies as st

from tanglepick import dataio
from tanglepick.config import Config
from tanglepick.pick import DATASET_HEADER, PickDataset, PickRecord, Protocol

HEADER = ",".join(DATASET_HEADER) + "\n"

records_st = st.builds(
    PickRecord, st.sampled_from(list(Protocol)), st.integers(0, 500), st.floats(1e-3, 10), st.floats(0, 500),
    st.integers(0, 4), st.integers(0, 50), st.integers(0, 2**63), st.floats(0, 100), st.floats(1e-4, 10),
    st.integers(0, 100))


@given(st.lists(records_st, max_size=30))
def test_emit_ingest_round_trip_is_lossless(recs):
    ds = PickDataset(recs)
    text = dataio.emit(ds)
    back = dataio.loads_dataset(text)
    assert back.records == ds.records
    assert dataio.emit(back) == text


def test_file_round_trip(tmp_path):
    ds = PickDataset([PickRecord("Magnet", 100, 0.4, 60, 1, 0, 7, 0.123456789, 0.0403, 3)])
    p = tmp_path / "d.csv"
    dataio.emit(ds, p)
    assert dataio.ingest_csv(p).records == ds.records


def test_header_only_is_empty_dataset():
    assert len(dataio.loads_dataset(HEADER)) == 0


def test_bad_header_and_column_count_are_schema_errors():
    with pytest.raises(dataio.SchemaError) as e:
        dataio.loads_dataset("protocol,grain_count\n")
    assert e.value.line == 1
    with pytest.raises(dataio.SchemaError) as e:
        dataio.loads_dataset(HEADER + "Magnet,100,0.4,60,1,0,0,0.1,0.01,2\nMagnet,100\n")
    assert e.value.line == 3
    with pytest.raises(dataio.SchemaError):
        dataio.loads_dataset("")
    with pytest.raises(dataio.SchemaError):
        dataio.loads_dataset(HEADER + "Robot,100,0.4,60,1,0,0,0.1,0.01,2\n")
    with pytest.raises(dataio.SchemaError):
        dataio.loads_dataset(HEADER + "Magnet,abc,0.4,60,1,0,0,0.1,0.01,2\n")


@pytest.mark.parametrize("row,msg", [("Magnet,100,0.4,60,1,0,0,-1,0.01,2", "picked_mass_g"),
                                     ("Magnet,100,0,60,1,0,0,0.1,0.01,2", "tau_mm"),
                                     ("Magnet,100,-0.4,60,1,0,0,0.1,0.01,2", "tau_mm"),
                                     ("Magnet,100,0.4,60,1,0,0,0.1,0,2", "unit_mass_g"),
                                     ("Magnet,100,0.4,60,1,0,0,nan,0.01,2", "picked_mass_g")])
def test_value_errors_cite_the_line(row, msg):
    text = HEADER + "Magnet,100,0.4,60,1,0,0,0.1,0.01,2\n" + row + "\n"
    with pytest.raises(ValueError, match=f"line 3: {msg}"):
        dataio.loads_dataset(text)


def test_summarize_hand_values():
    recs = [PickRecord("Magnet", 100, 0.4, 60, 1, i, 0, 0.01 * u, 0.01, u) for i, u in enumerate((8, 12))]
    recs.append(PickRecord("Gripper", 0, 0.2, 12, 0, 0, 0, 0.05, 0.01, 5))
    s = dataio.summarize(PickDataset(recs))
    g = s[("Magnet", 100, 0.4, 60.0, 1)]
    assert (g.n, g.mean) == (2, 10.0)
    assert g.std == pytest.approx(2.8284271247461903)
    single = s[("Gripper", 0, 0.2, 12.0, 0)]
    assert single.single and single.std == 0.0 and single.n == 1


def test_summarize_full_grid_has_27_groups():
    recs = [PickRecord("Magnet", 100, t, l, s, i, 0, 0.1, 0.01, 10)
            for t in (0.2, 0.4, 1.0) for l in (12, 60, 120) for s in (0, 1, 2) for i in range(2)]
    assert len(dataio.summarize(recs)) == 27


@given(st.lists(records_st, min_size=1, max_size=25), st.randoms())
def test_summarize_is_permutation_invariant(recs, rnd):
    shuffled = list(recs)
    rnd.shuffle(shuffled)
    assert dataio.summarize(recs) == dataio.summarize(shuffled)


def test_summary_csv_header():
    text = dataio.summary_csv(dataio.summarize([PickRecord("Magnet", 1, 0.4, 60, 1, 0, 0, 0.1, 0.01, 10)]))
    assert text.splitlines()[0].split(",") == list(dataio.SUMMARY_HEADER)


SMALL_CFG = Config(grid="single", iterations=2, tau_mm=0.4, lambda_mm=12.0, spikes=0, grain_count=10)


def stored_run(tmp_path):
    from tanglepick.study import run_study
    ds = run_study(SMALL_CFG)
    run = dataio.ExperimentRun("r1", SMALL_CFG, ds, dataio.Provenance.SIMULATED, "2026-01-01T00:00:00Z")
    return dataio.save_run(run, tmp_path), run


def test_run_store_layout_and_load(tmp_path):
    path, run = stored_run(tmp_path)
    assert sorted(os.listdir(path)) == ["checksum.txt", "config.txt", "dataset.csv"]
    back = dataio.load_run(path)
    assert back.config == run.config and back.dataset.records == run.dataset.records
    assert back.run_id == "r1" and back.provenance is dataio.Provenance.SIMULATED
    assert back.created_at == "2026-01-01T00:00:00Z"


def test_replay_is_byte_identical(tmp_path):
    path, run = stored_run(tmp_path)
    assert dataio.emit(dataio.replay(path)) == dataio.emit(run.dataset)


def test_replay_detects_config_tampering_before_running(tmp_path):
    path, _ = stored_run(tmp_path)
    cfg = os.path.join(path, "config.txt")
    text = open(cfg).read().replace("iterations = 2", "iterations = 3")
    open(cfg, "w").write(text)
    with pytest.raises(dataio.ChecksumError, match="config.txt"):
        dataio.replay(path)


def test_replay_detects_dataset_tampering(tmp_path):
    path, _ = stored_run(tmp_path)
    with open(os.path.join(path, "dataset.csv"), "a") as fh:
        fh.write("Magnet,10,0.4,12,0,9,0,0.1,0.01,1\n")
    with pytest.raises(dataio.ChecksumError, match="dataset.csv"):
        dataio.load_run(path)


def test_replay_flags_a_differing_stored_dataset():
    ds = PickDataset([PickRecord("Magnet", 10, 0.4, 12, 0, 0, 0, 9.9, 0.01, 99)])
    run = dataio.ExperimentRun("fake", SMALL_CFG.with_overrides(iterations=1), ds)
    with pytest.raises(dataio.ChecksumError, match="differs"):
        dataio.replay(run)


def test_external_runs_cannot_be_replayed(tmp_path):
    p = tmp_path / "m.csv"
    p.write_text(HEADER + "Gripper,0,0.4,60,1,0,0,0.1,0.01,10\n")
    run = dataio.external_run(p, "measured")
    path = dataio.save_run(run, tmp_path / "store")
    assert dataio.load_run(path).provenance is dataio.Provenance.EXTERNAL
    with pytest.raises(dataio.ProvenanceError):
        dataio.replay(path)
