import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_schedule, run_impl, state_mismatch, telemetry_line
from oracle import parse_records, run_oracle
from rtvdc.container import HEADER_SIZE, RECORD_OVERHEAD, read_container
from rtvdc.recorder import (
    ALL_ACTIONS,
    NO_ACTIONS,
    DualSegmentRecorder,
    EventKind,
    RecorderConfig,
    RecorderError,
    RecorderEvent,
    SegmentState,
    Variant,
    full_time_record,
)
from rtvdc.sensor_sim import FrameChunk, SimConfig, VehicleSimulator

MIN = 60_000


def frame(t, n=4):
    return FrameChunk(0, t, bytes(n))


def rec_with(T=1000, variant=Variant.STOP_ON_ACCIDENT, now=0, **kw):
    return DualSegmentRecorder(RecorderConfig(segment_duration=T, variant=variant, **kw), now)


def drive(rec, until, fps=30, start=0):
    """Frames at fps with ticks fired as time passes."""
    i = 0
    while True:
        t = start + i * 1000 // fps
        if t >= until:
            return
        rec.advance_to(t)
        if rec.state.stopped:
            return
        rec.append_frame(frame(t))
        i += 1


# -- init ----------------------------------------------------------------------

def test_init_default_timer():
    rec = rec_with(T=300_000)
    st_ = rec.state
    assert st_.next_tick_at == 300_000 and st_.file_alternat == 1
    assert not st_.accident_flag and st_.timer_enabled and not st_.stopped
    assert [s.state for s in st_.segments] == [SegmentState.ACTIVE, SegmentState.EMPTY]


def test_init_offset_start():
    assert rec_with(T=1000, now=500).state.next_tick_at == 1500


def test_init_empty_segment_is_header_only():
    rec = rec_with()
    assert rec.segment(2).byte_count == HEADER_SIZE
    assert rec.storage_used() == 2 * HEADER_SIZE


def test_init_fails_on_uncreatable_paths(tmp_path):
    bad = tmp_path / "missing" / "x" / "a.ivsg"
    blocker = tmp_path / "missing"
    blocker.write_text("not a directory")
    with pytest.raises(RecorderError, match="init-failed"):
        DualSegmentRecorder(RecorderConfig(segment_paths=(bad, tmp_path / "b.ivsg")))


@pytest.mark.parametrize("kw", [dict(segment_duration=0), dict(fps=0), dict(frame_bytes=0),
                                dict(segment_paths=("a",))])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        RecorderConfig(**kw)


# -- append ---------------------------------------------------------------------

def test_append_frame_accounting():
    rec = rec_with()
    rec.append_frame(FrameChunk(0, 0, bytes(12722)))
    seg = rec.segment(1)
    assert seg.frame_count == 1
    assert seg.byte_count == HEADER_SIZE + 12722 + RECORD_OVERHEAD


def test_default_minute_payload():
    rec = rec_with(T=300_000)
    for i in range(1800):
        rec.append_frame(FrameChunk(i, i * 1000 // 30, bytes(12722)))
    assert rec.segment(1).payload_bytes == 22_899_600
    assert rec.segment(1).byte_count == HEADER_SIZE + 1800 * (12722 + RECORD_OVERHEAD)


def test_append_after_stop_rejected():
    rec = rec_with()
    rec.stop(10)
    with pytest.raises(RecorderError, match="recorder-stopped"):
        rec.append_frame(frame(11))
    with pytest.raises(RecorderError, match="recorder-stopped"):
        rec.append_telemetry_line(11, telemetry_line(11).decode())


@pytest.mark.parametrize("variant", list(Variant))
def test_telemetry_rejected_after_accident(variant):
    rec = rec_with(variant=variant, T=10_000)
    rec.on_accident(100)
    with pytest.raises(RecorderError) as ei:
        rec.append_telemetry_line(101, telemetry_line(101).decode())
    assert ei.value.code in ("sensors-stopped", "recorder-stopped")
    if variant is Variant.RECORD_THROUGH_ACCIDENT:
        assert ei.value.code == "sensors-stopped"
        rec.append_frame(frame(101))


def test_interleaved_records_keep_order():
    rec = rec_with(T=10_000)
    sim = VehicleSimulator(SimConfig(seed=1))
    for _ in range(5):
        s = sim.next_sample()
        rec.append_frame(frame(s.t))
        rec.append_telemetry(s)
    seg = rec.segment(1)
    assert seg.frame_count == 5 and seg.telemetry_count == 5
    types = [r[0] for r in parse_records(rec.segment_bytes(1))]
    assert types == [1, 2] * 5


# -- ticks -------------------------------------------------------------------

def test_tick_from_alternat_two():
    rec = rec_with(T=100)
    rec.on_tick(100)
    rec.append_frame(frame(150))
    rec.on_tick(200)
    assert rec.state.file_alternat == 1
    assert rec.segment(1).state is SegmentState.ACTIVE and rec.segment(1).record_count == 0
    assert rec.segment(2).state is SegmentState.SEALED and rec.segment(2).frame_count == 1


def test_alternation_sequence():
    rec = rec_with(T=100)
    seen = []
    for k in range(1, 4):
        rec.on_tick(k * 100)
        seen.append(rec.state.file_alternat)
    assert seen == [2, 1, 2]


def test_variant2_tick_after_accident():
    rec = rec_with(T=100, variant=Variant.RECORD_THROUGH_ACCIDENT)
    rec.append_frame(frame(10))
    rec.on_tick(100)
    rec.append_frame(frame(110))
    rec.on_accident(150)
    rec.append_frame(frame(160))
    before = rec.segment_bytes(1)
    rec.on_tick(200)
    st_ = rec.state
    assert not st_.timer_enabled and st_.stopped and st_.file_alternat == 2
    assert rec.segment(2).state is SegmentState.SEALED and rec.segment(2).end_t == 200
    assert rec.segment(2).frame_count == 2
    assert rec.segment_bytes(1) == before


def test_tick_with_timer_disabled_is_noop():
    rec = rec_with(T=100)
    rec.on_accident(50)
    snapshot = (rec.state.file_alternat, rec.segment_bytes(1), rec.segment_bytes(2))
    rec.on_tick(100)
    assert snapshot == (rec.state.file_alternat, rec.segment_bytes(1), rec.segment_bytes(2))


def test_early_tick_rejected():
    with pytest.raises(ValueError):
        rec_with(T=100).on_tick(99)


def test_advance_to_fires_all_due_ticks():
    rec = rec_with(T=100)
    assert rec.advance_to(450) == 4
    assert rec.state.next_tick_at == 500


# -- accidents -----------------------------------------------------------------

def test_variant1_accident_at_7_2_minutes():
    rec = rec_with(T=5 * MIN)
    drive(rec, 432_000)
    assert rec.on_accident(432_000) == ALL_ACTIONS
    s1, s2 = rec.segment(1), rec.segment(2)
    assert (s1.state, s1.start_t, s1.end_t) == (SegmentState.SEALED, 0, 300_000)
    assert (s2.state, s2.start_t, s2.end_t) == (SegmentState.SEALED, 300_000, 432_000)
    assert rec.recoverable_history(432_000) == 432_000
    assert rec.state.stopped and not rec.state.timer_enabled


def test_variant2_accident_at_7_2_minutes():
    rec = rec_with(T=5 * MIN, variant=Variant.RECORD_THROUGH_ACCIDENT)
    drive(rec, 432_000)
    rec.on_accident(432_000)
    drive(rec, 700_000, start=432_000)
    s1, s2 = rec.segment(1), rec.segment(2)
    assert (s1.start_t, s1.end_t) == (0, 300_000)
    assert (s2.start_t, s2.end_t) == (300_000, 600_000)
    last = parse_records(rec.segment_bytes(2))[-1]
    assert last[1] < 600_000
    assert rec.state.stopped


def test_accident_before_first_tick():
    rec = rec_with(T=5 * MIN)
    drive(rec, 2 * MIN)
    rec.on_accident(2 * MIN)
    assert rec.segment(2).state is SegmentState.EMPTY
    assert (rec.segment(1).start_t, rec.segment(1).end_t) == (0, 2 * MIN)
    assert rec.recoverable_history(2 * MIN) == 2 * MIN


def test_second_accident_is_idempotent():
    rec = rec_with(variant=Variant.RECORD_THROUGH_ACCIDENT)
    assert rec.on_accident(5) == ALL_ACTIONS
    assert rec.on_accident(6) == NO_ACTIONS
    assert not rec.on_accident(6)
    assert rec.state.accident_at == 5


def test_accident_after_stop_rejected():
    rec = rec_with()
    rec.stop(5)
    with pytest.raises(RecorderError, match="recorder-stopped"):
        rec.on_accident(6)


# -- history -------------------------------------------------------------------

def test_history_just_after_tick():
    rec = rec_with(T=1000)
    rec.advance_to(1000)
    assert rec.recoverable_history(1000) == 1000
    assert rec.recoverable_history(1001) == 1001


def test_history_just_before_tick():
    rec = rec_with(T=1000)
    rec.advance_to(1999)
    assert rec.recoverable_history(1999) == 1999
    rec.advance_to(2999)
    assert rec.recoverable_history(2999) == 2 * 1000 - 1


def test_history_before_first_tick():
    rec = rec_with(T=1000)
    assert rec.recoverable_history(400) == 400


# -- storage and baseline -------------------------------------------------------

def test_chronological_order():
    rec = rec_with(T=100)
    rec.advance_to(250)
    assert [s.index for s in rec.chronological()] == [2, 1]


def test_file_backed_segments(tmp_path):
    paths = (tmp_path / "segment_1.ivsg", tmp_path / "segment_2.ivsg")
    rec = DualSegmentRecorder(RecorderConfig(segment_duration=100, segment_paths=paths, vehicle_id=4))
    drive(rec, 250)
    rec.stop(250)
    rec.close()
    c1, c2 = read_container(paths[0]), read_container(paths[1])
    assert (c1.start_t, c2.start_t) == (200, 100)
    assert c1.vehicle_id == 4
    assert paths[0].read_bytes() == rec.segment_bytes(1)


def test_full_time_one_minute_reference_rate():
    evs = (RecorderEvent(i * 1000 // 30, EventKind.FRAME, bytes(12722)) for i in range(1800))
    tr = full_time_record(evs)
    assert tr.payload_bytes == 22_899_600
    assert tr.total_bytes == HEADER_SIZE + 1800 * (12722 + RECORD_OVERHEAD)


def test_full_time_linear_growth():
    evs = [RecorderEvent(i * 1000 // 30, EventKind.FRAME, bytes(13)) for i in range(1800 * 60)]
    tr = full_time_record(evs, trace_every=MIN)
    assert tr.payload_bytes == 60 * 1800 * 13
    per_minute = [b for _, b in tr.points]
    steps = {b - a for a, b in zip(per_minute[1:], per_minute[2:])}
    assert steps == {1800 * (13 + RECORD_OVERHEAD)}


def test_full_time_stops_on_accident_and_limit():
    evs = [RecorderEvent(t, EventKind.FRAME, bytes(10)) for t in range(0, 100, 10)]
    tr = full_time_record(evs[:5] + [RecorderEvent(45, EventKind.ACCIDENT)] + evs[5:])
    assert tr.frame_count == 5 and tr.stop_reason == "accident" and tr.stopped_at == 45
    tr = full_time_record(evs, storage_limit=HEADER_SIZE + 3 * 23)
    assert tr.truncated and tr.frame_count == 3 and tr.total_bytes <= HEADER_SIZE + 3 * 23


def test_baseline_dominates_beyond_two_segments():
    T = 1000
    for D in (2001, 3500, 10_000):
        rec = rec_with(T=T)
        drive(rec, D)
        evs = (RecorderEvent(i * 1000 // 30, EventKind.FRAME, bytes(4)) for i in range(10**6))
        tr = full_time_record(e for e in evs if e.t < D)
        assert tr.total_bytes > rec.storage_used()


# -- properties ----------------------------------------------------------------

@settings(max_examples=300, deadline=None)
@given(seed=st.integers(0, 2**32), T=st.integers(1, 40), variant=st.sampled_from([1, 2]),
       n=st.integers(0, 120))
def test_oracle_equivalence(seed, T, variant, n):
    ev = random_schedule(random.Random(seed), n, T)
    until = ev[-1][0] + T if ev else T
    assert state_mismatch(run_impl(T, variant, ev, until=until), run_oracle(T, variant, ev, until=until)) is None


@settings(max_examples=200, deadline=None)
@given(T=st.integers(50, 2000), fps=st.integers(1, 60), fb=st.integers(1, 50),
       D=st.integers(1, 20_000), acc=st.one_of(st.none(), st.integers(0, 20_000)),
       variant=st.sampled_from(list(Variant)))
def test_bounded_storage(T, fps, fb, D, acc, variant):
    rec = DualSegmentRecorder(RecorderConfig(segment_duration=T, variant=variant, fps=fps, frame_bytes=fb))
    cap = rec.cfg.segment_payload_cap()
    frames_per_seg = -(-T * fps // 1000)
    bound = 2 * HEADER_SIZE + 2 * frames_per_seg * (fb + RECORD_OVERHEAD)
    i = 0
    while (t := i * 1000 // fps) < D:
        if acc is not None and acc <= t and not rec.state.accident_flag:
            rec.advance_to(acc - 1)
            rec.on_accident(acc)
        rec.advance_to(t)
        if rec.state.stopped:
            break
        rec.append_frame(FrameChunk(i, t, bytes(fb)))
        assert rec.storage_used() <= bound
        assert all(s.payload_bytes <= cap + fb for s in rec.state.segments)
        i += 1


@settings(max_examples=100, deadline=None)
@given(T=st.integers(1, 100), k=st.integers(1, 30))
def test_alternation_parity_and_clearing(T, k):
    rec = rec_with(T=T)
    prev = rec.state.file_alternat
    for j in range(1, k + 1):
        rec.append_frame(frame(j * T - 1 if T > 1 else (j - 1) * T))
        rec.on_tick(j * T)
        assert rec.state.file_alternat != prev
        assert rec.state.file_alternat == 1 + (j % 2)
        assert rec.active.record_count == 0
        prev = rec.state.file_alternat


def test_state_invariants_under_random_schedules():
    rng = random.Random(77)
    for _ in range(300):
        T = rng.randint(1, 30)
        ev = random_schedule(rng, rng.randint(0, 60), T)
        rec = run_impl(T, rng.choice((1, 2)), ev)
        st_ = rec.state
        actives = [s for s in st_.segments if s.state is SegmentState.ACTIVE]
        assert st_.file_alternat in (1, 2)
        assert len(actives) <= 1
        if st_.stopped:
            assert not actives
        for s in st_.segments:
            assert s.byte_count == len(rec.segment_bytes(s.index))
            if s.state is SegmentState.SEALED:
                assert s.start_t <= s.end_t
            if s.state is SegmentState.EMPTY:
                assert s.byte_count == HEADER_SIZE
