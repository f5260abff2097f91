import json

import pytest

from rtvdc.container import read_container
from rtvdc.party import ServerAddress
from rtvdc.protocol import (
    TERMINATE_ACCIDENT,
    TERMINATE_STOPPED,
    Channel,
    ControlMessage,
    DataChunk,
    MsgType,
    VideoChunk,
    ack,
    decode,
    encode,
    reject,
)
from rtvdc.recorder import RecorderConfig, Variant
from rtvdc.sensor_sim import AccidentKind, AccidentScript, SimConfig
from rtvdc.vehicle import EXIT_ACCIDENT, EXIT_CLEAN, AgentConfig, Phase, VehicleAgent

SERVER = ServerAddress("srv")
SRC = ("srv", 7000)


def agent(T=10_000, variant=Variant.STOP_ON_ACCIDENT, accident=None, **kw):
    sim = SimConfig(seed=1, accident_script=AccidentScript.parse(accident) if accident else None)
    cfg = AgentConfig(vehicle_id=5, credentials="k", server=SERVER,
                      recorder=RecorderConfig(segment_duration=T, variant=variant, frame_bytes=8),
                      sim=sim, **kw)
    return VehicleAgent(cfg)


def sent(a):
    return [decode(o.data) for o in a.drain()]


def controls(msgs):
    return [m.kind for m in msgs if isinstance(m, ControlMessage)]


def feed(a, msg, now):
    a.handle_datagram(encode(msg), SRC, now)


def streaming_agent(**kw):
    a = agent(**kw)
    a.start(0)
    a.poll(1)
    feed(a, ack(MsgType.LOGIN, vehicle_id=5), 1)
    a.poll(2)
    feed(a, ControlMessage(MsgType.STREAM_REQUEST, vehicle_id=5), 2)
    a.drain()
    return a


def test_handshake():
    a = agent()
    a.start(0)
    [login] = sent(a)
    assert login.kind is MsgType.LOGIN and login.credentials == "k"
    assert a.phase is Phase.AWAITING_REQUEST
    feed(a, ack(MsgType.LOGIN, vehicle_id=5), 3)
    [running] = sent(a)
    assert running.kind is MsgType.RUNNING and running.t == 0
    feed(a, ControlMessage(MsgType.STREAM_REQUEST, vehicle_id=5), 4)
    assert a.phase is Phase.STREAMING and a.stream_started_at == 4


def test_login_retried_with_backoff():
    a = agent()
    a.start(0)
    a.drain()
    times = []
    for t in range(1, 8000):
        a.poll(t)
        if any(m.kind is MsgType.LOGIN for m in sent(a) if isinstance(m, ControlMessage)):
            times.append(t)
    assert times == [1000, 3000, 7000]


def test_reject_stops_handshake_but_keeps_recording():
    a = agent()
    a.start(0)
    feed(a, reject(MsgType.LOGIN, "not-registered", 5), 1)
    a.poll(5000)
    assert controls(sent(a)) == [MsgType.LOGIN]
    assert a.recorder.state.segments[0].frame_count > 100


def test_streams_only_after_request():
    a = agent()
    a.start(0)
    a.poll(2000)
    assert not [m for m in sent(a) if isinstance(m, (VideoChunk, DataChunk))]
    a = streaming_agent()
    a.poll(1002)
    msgs = sent(a)
    video = [m for m in msgs if isinstance(m, VideoChunk)]
    data = [m for m in msgs if isinstance(m, DataChunk)]
    assert video and all(v.t >= 2 for v in video)
    assert [v.seq for v in video] == list(range(video[0].seq, video[0].seq + len(video)))
    assert [d.seq for d in data] == list(range(len(data)))
    assert all(d.text.split(",")[1] == "5" for d in data)


def test_stop_sends_clean_terminate():
    a = streaming_agent(stop_at=5000)
    a.poll(6000)
    msgs = sent(a)
    assert controls(msgs)[-1] is MsgType.TERMINATE_REPORT
    assert msgs[-1].code == TERMINATE_STOPPED
    assert a.done and a.exit_code == EXIT_CLEAN
    assert a.next_wakeup() is None


def test_variant1_accident_terminates_immediately():
    a = streaming_agent(accident="crash@4000")
    a.poll(4000)
    msgs = sent(a)
    assert controls(msgs) == [MsgType.ACCIDENT_NOTIFY, MsgType.TERMINATE_REPORT]
    notify = next(m for m in msgs if isinstance(m, ControlMessage))
    assert notify.detection is AccidentKind.CRASH and (notify.lat, notify.lon) == a.last_gps
    assert msgs[-1].code == TERMINATE_ACCIDENT and a.exit_code == EXIT_ACCIDENT
    assert len(a.sms_log) == 1 and a.sms_log[0].t == 4000


def test_variant2_records_until_next_tick():
    a = streaming_agent(T=10_000, variant=Variant.RECORD_THROUGH_ACCIDENT, accident="turnover@3000")
    a.poll(3600)
    assert controls(sent(a)) == [MsgType.ACCIDENT_NOTIFY]
    a.poll(9999)
    assert not a.done
    a.poll(10_000)
    assert controls(sent(a))[-1] is MsgType.TERMINATE_REPORT
    seg = a.recorder.segment(1)
    assert seg.end_t == 10_000 and seg.telemetry_count == 36


def test_sms_log_file(tmp_path):
    a = streaming_agent(accident="crash@1000", out_dir=tmp_path)
    a.poll(1000)
    [line] = (tmp_path / "sms.log").read_text().splitlines()
    assert json.loads(line)["kind"] == "crash"
    assert read_container(tmp_path / "segment_1.ivsg").frames


def test_repeat_stream_request_is_acked():
    a = streaming_agent()
    feed(a, ControlMessage(MsgType.STREAM_REQUEST, vehicle_id=5), 10)
    [m] = sent(a)
    assert m.kind is MsgType.ACK and m.ref is MsgType.STREAM_REQUEST


def test_garbage_is_counted_and_ignored():
    a = agent()
    a.start(0)
    a.handle_datagram(b"nonsense", SRC, 1)
    assert a.decode_errors == 1


def test_double_start_rejected():
    a = agent()
    a.start(0)
    with pytest.raises(RuntimeError):
        a.start(1)


@pytest.mark.parametrize("kw", [dict(vehicle_id=0), dict(video_send_period=0), dict(time_scale=0)])
def test_config_validation(kw):
    base = dict(vehicle_id=1, credentials="", server=SERVER)
    base.update(kw)
    with pytest.raises(ValueError):
        AgentConfig(**base)


def test_control_goes_to_control_port():
    a = agent()
    a.start(0)
    [o] = a.drain()
    assert o.dst == SERVER.addr(Channel.CONTROL) and o.channel is Channel.CONTROL
