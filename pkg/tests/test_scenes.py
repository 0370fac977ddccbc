import random

import pytest

from bevpredict.models import SceneSequence, SynthConfig
from bevpredict.services.scenes import (
    dataset_stats,
    downsample,
    ingest_tracks,
    load_recordings,
    recording_id,
    split,
    synth_highway,
)
from bevpredict.utils.errors import (
    InvalidArgumentError,
    SceneFormatError,
    TrackFormatError,
    TrackParseError,
)
from bevpredict.utils.formats import read_scene, write_scene

HEADER = "frame,id,x,y,width,height"


def test_ingest_converts_corner_to_center():
    seq = ingest_tracks(f"{HEADER}\n1,3,5.0,2.0,5.0,2.0\n", rate_hz=25.0)
    assert len(seq) == 1
    v = seq.frames[0].vehicles[0]
    assert (v.id, v.cx, v.cy, v.w, v.h) == (3, 7.5, 3.0, 5.0, 2.0)
    assert v.vx is None


def test_ingest_header_only_gives_empty_sequence():
    assert len(ingest_tracks(f"{HEADER}\n", rate_hz=25.0)) == 0


def test_ingest_groups_rows_by_frame():
    seq = ingest_tracks(f"{HEADER}\n4,2,0,0,4,2\n4,1,10,0,4,2\n", rate_hz=25.0)
    assert len(seq) == 1
    assert [v.id for v in seq.frames[0].vehicles] == [1, 2]


def test_ingest_missing_column():
    with pytest.raises(TrackFormatError) as excinfo:
        ingest_tracks("frame,id,x,y,width\n1,1,0,0,4\n", rate_hz=25.0)
    assert excinfo.value.column == "height"


@pytest.mark.parametrize("text", ["", "\n\n", f"{HEADER}\n1,1,0,0,4,2\n2,1,0,0,4,2,9,9\n"])
def test_ingest_unreadable_table(text):
    with pytest.raises(TrackFormatError) as excinfo:
        ingest_tracks(text, rate_hz=25.0)
    assert excinfo.value.column is None


def test_ingest_non_numeric_cell():
    with pytest.raises(TrackParseError) as excinfo:
        ingest_tracks(f"{HEADER}\n1,1,0,0,4,2\n2,1,abc,0,4,2\n", rate_hz=25.0)
    assert excinfo.value.row == 2
    assert excinfo.value.column == "x"


def test_ingest_row_order_does_not_matter():
    rows = [f"{f},{i},{f * 1.5 + i},{i * 3.5},4.5,1.8" for f in range(1, 6) for i in range(1, 4)]
    shuffled = rows[:]
    random.Random(5).shuffle(shuffled)
    a = ingest_tracks("\n".join([HEADER] + rows) + "\n", rate_hz=25.0)
    b = ingest_tracks("\n".join([HEADER] + shuffled) + "\n", rate_hz=25.0)
    assert a == b


def test_ingest_keeps_velocity_columns():
    text = "frame,id,x,y,width,height,xVelocity,yVelocity\n1,1,0,0,4,2,31.5,-0.2\n"
    v = ingest_tracks(text, rate_hz=25.0).frames[0].vehicles[0]
    assert v.vx == 31.5
    assert v.vy == -0.2


def _native_sequence(n_frames=25):
    rows = [f"{f},1,{f * 1.2},4.0,4.5,1.8" for f in range(n_frames)]
    return ingest_tracks("\n".join([HEADER] + rows) + "\n", rate_hz=25.0)


class TestDownsample:
    def test_one_second_at_25hz_becomes_five_frames(self):
        reduced = downsample(_native_sequence(25), 5)
        assert len(reduced) == 5
        assert reduced.rate_hz == 5.0
        assert [f.t_index for f in reduced.frames] == [0, 1, 2, 3, 4]

    def test_partial_tail(self):
        seq = _native_sequence(7)
        reduced = downsample(seq, 5)
        assert len(reduced) == 2
        assert reduced.frames[1].vehicles == seq.frames[5].vehicles

    def test_keep_every_one_is_identity(self):
        seq = synth_highway(SynthConfig(n_vehicles=3, n_lanes=1, duration_s=2.0, seed=1))
        assert downsample(seq, 1) == seq

    def test_composition(self):
        seq = _native_sequence(40)
        twice = downsample(downsample(seq, 2), 3)
        once = downsample(seq, 6)
        assert [f.vehicles for f in twice.frames] == [f.vehicles for f in once.frames]
        assert twice.rate_hz == pytest.approx(once.rate_hz)

    def test_zero_factor_rejected(self):
        with pytest.raises(InvalidArgumentError):
            downsample(_native_sequence(5), 0)


class TestSplit:
    def test_partition(self):
        part = split([1, 2, 3, 4], train_ids=[1, 2], test_ids=[4])
        assert part.train == [1, 2]
        assert part.test == [4]
        assert part.unused == [3]

    def test_overlap_rejected(self):
        with pytest.raises(InvalidArgumentError):
            split([1, 2], train_ids=[1, 2], test_ids=[2])

    def test_recording_id(self):
        assert recording_id("data/01_tracks.csv") == 1
        with pytest.raises(InvalidArgumentError):
            recording_id("tracks.csv")


def test_load_recordings_keys_by_id(tmp_path):
    for rec in (2, 1):
        rows = [f"{f},1,{f * 1.2},4.0,4.5,1.8" for f in range(10)]
        (tmp_path / f"{rec:02d}_tracks.csv").write_text("\n".join([HEADER] + rows) + "\n")
    recordings = load_recordings(sorted(tmp_path.iterdir()), rate_hz=25.0, keep_every=5)
    assert sorted(recordings) == [1, 2]
    assert len(recordings[1]) == 2
    assert recordings[1].rate_hz == 5.0


def test_dataset_stats():
    seq = _native_sequence(100)
    stats = dataset_stats({1: seq}, d=3, keep_every=5)
    assert stats.frames_native == 100
    assert stats.frames_downsampled == 20
    assert stats.trajectories == 1
    assert stats.samples == 20 - 2 * 3 + 1


class TestSynthHighway:
    def test_deterministic(self):
        cfg = SynthConfig(n_vehicles=6, n_lanes=2, lane_change_prob=0.3, duration_s=5.0, seed=9)
        assert synth_highway(cfg) == synth_highway(cfg)

    def test_seed_changes_scene(self):
        a = synth_highway(SynthConfig(n_vehicles=6, duration_s=2.0, seed=1))
        b = synth_highway(SynthConfig(n_vehicles=6, duration_s=2.0, seed=2))
        assert a != b

    def test_constant_velocity_displacement(self):
        cfg = SynthConfig(n_vehicles=4, n_lanes=1, speed_range=(30.0, 30.0),
                          duration_s=2.0, rate_hz=5.0, seed=4)
        seq = synth_highway(cfg)
        assert len(seq) == 10

        steps = []
        for prev, cur in zip(seq.frames, seq.frames[1:]):
            before = prev.by_id()
            for v in cur.vehicles:
                if v.id in before:
                    steps.append((v, v.cx - before[v.id].cx, v.cy - before[v.id].cy))
        assert steps
        for v, dx, dy in steps:
            assert abs(dx) == pytest.approx(6.0)
            assert dy == 0.0
            # Upper lane flows towards -x
            assert (dx < 0) == (v.cy < cfg.extent_y / 2)

    def test_vehicles_leave_and_spawn(self):
        cfg = SynthConfig(n_vehicles=4, n_lanes=1, duration_s=30.0, spawn=True, seed=2)
        seq = synth_highway(cfg)
        ids = {v.id for f in seq.frames for v in f.vehicles}
        assert max(ids) > cfg.n_vehicles
        for frame in seq.frames:
            assert all(0.0 <= v.cx <= cfg.extent_x for v in frame.vehicles)

    def test_without_spawn_traffic_only_drains(self):
        cfg = SynthConfig(n_vehicles=4, n_lanes=1, duration_s=30.0, seed=2)
        seq = synth_highway(cfg)
        counts = [len(f.vehicles) for f in seq.frames]
        assert counts[0] == 4
        assert all(b <= a for a, b in zip(counts, counts[1:]))

    def test_lane_change_is_a_bounded_ramp(self):
        cfg = SynthConfig(n_vehicles=6, n_lanes=2, lane_width=3.75, lane_change_prob=1.0,
                          lane_change_s=3.0, duration_s=10.0, seed=3)
        seq = synth_highway(cfg)
        max_step = cfg.lane_width / cfg.lane_change_s / cfg.rate_hz + 1e-9

        lateral = []
        for prev, cur in zip(seq.frames, seq.frames[1:]):
            before = prev.by_id()
            lateral.extend(abs(v.cy - before[v.id].cy) for v in cur.vehicles if v.id in before)
        assert max(lateral) > 0.0
        assert max(lateral) <= max_step


def test_scene_record_round_trip():
    seq = synth_highway(SynthConfig(n_vehicles=5, n_lanes=2, lane_change_prob=0.5,
                                    duration_s=3.0, seed=8))
    assert read_scene(write_scene(seq)) == seq


def test_scene_record_with_missing_velocity():
    seq = ingest_tracks(f"{HEADER}\n1,3,5.0,2.0,5.0,2.0\n2,3,6.0,2.0,5.0,2.0\n", rate_hz=25.0)
    restored = read_scene(write_scene(seq))
    assert isinstance(restored, SceneSequence)
    assert restored == seq


def test_scene_record_truncated():
    text = write_scene(synth_highway(SynthConfig(n_vehicles=3, n_lanes=1, duration_s=1.0)))
    with pytest.raises(SceneFormatError):
        read_scene("\n".join(text.splitlines()[:-1]) + "\n")
