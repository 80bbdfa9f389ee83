import json
import os
import struct
import threading
import time

import pytest

from skewprint.featurizer import featurize_session
from skewprint.identifier import decide_identity
from skewprint.ingestd.codec import (
    ERROR_CODES,
    CodecError,
    WireMessage,
    canonical,
    decode_session,
    encode_session,
    session_from_jsonl,
    session_to_jsonl,
    session_to_obj,
)
from skewprint.ingestd.collector import CollectorError, collect_session
from skewprint.ingestd.registry import HOME_ENV, Registry, RegistryError, default_root
from skewprint.ingestd.service import Client, ModelCache, handle_frame, handle_request, serve
from skewprint.learners import AlgorithmSpec, train_model
from skewprint.pipeline import attack_session
from skewprint.simulator import SessionConfig, make_device_fleet, simulate_session


def short_session(device="dc:a6:32:00:00:0a", n=120, seed=1):
    prof = make_device_fleet({"count_per_model_class": {"A": 1}, "seed": 3})[0]
    from dataclasses import replace
    return simulate_session(replace(prof, device_id=device), SessionConfig(n_measurements=n, seed=seed))


# -- codec ------------------------------------------------------------------

def test_round_trip(one_session):
    data = encode_session(one_session)
    assert decode_session(data) == one_session
    assert encode_session(decode_session(data)) == data


def test_frame_layout(one_session):
    data = encode_session(one_session)
    (length,) = struct.unpack(">I", data[:4])
    assert length == len(data) - 4
    lines = data[4:].decode("utf-8").splitlines()
    assert len(lines) == 401
    head = json.loads(lines[0])
    assert head["device_id"] == one_session.device_id and head["n_records"] == 400
    assert json.loads(lines[1]) == one_session.measurements[0]
    assert lines[0] == canonical(head).decode()


def test_truncated_frame(one_session):
    data = encode_session(one_session)
    with pytest.raises(CodecError) as err:
        decode_session(data[:-10])
    assert err.value.code == "truncated"
    with pytest.raises(CodecError) as err:
        decode_session(data[:3])
    assert err.value.code == "truncated"


def test_malformed_json():
    payload = b'{"device_id": oops'
    with pytest.raises(CodecError) as err:
        decode_session(struct.pack(">I", len(payload)) + payload)
    assert err.value.code == "malformed"


def test_extra_fields_preserved(one_session):
    text = session_to_jsonl(one_session).decode().splitlines()
    head = json.loads(text[0])
    head["firmware"] = "v2"
    rec = json.loads(text[1])
    rec["voltage_mv"] = 5100
    text[0], text[1] = canonical(head).decode(), canonical(rec).decode()
    back = session_from_jsonl(("\n".join(text) + "\n").encode())
    assert back.extra == {"firmware": "v2"}
    assert back.measurements[0]["voltage_mv"] == 5100
    assert session_to_jsonl(back).decode().splitlines() == text


def test_wire_message_round_trip():
    msg = WireMessage("identify", {"b": 1, "a": [1, 2]}, token="t")
    raw = msg.encode()
    assert raw[4:] == b'{"payload":{"a":[1,2],"b":1},"protocol_version":1,"token":"t","type":"identify"}'
    assert WireMessage.decode(raw) == msg


# -- registry ---------------------------------------------------------------

def test_registry_store_and_index(tmp_path, one_session):
    reg = Registry(tmp_path)
    path = reg.put_session(one_session)
    assert path.read_bytes() == session_to_jsonl(one_session)
    assert reg.get_session(one_session.session_id) == one_session
    idx = json.loads((tmp_path / "index.json").read_bytes())
    assert idx["sessions"][one_session.session_id]["device_id"] == one_session.device_id
    # resubmitting identical bytes is a no-op
    reg.put_session(one_session)
    assert path.read_bytes() == session_to_jsonl(one_session)


def test_registry_never_overwrites(tmp_path, one_session):
    reg = Registry(tmp_path)
    reg.put_session(one_session)
    before = reg.session_path(one_session.device_id, one_session.session_id).read_bytes()
    from dataclasses import replace
    altered = replace(one_session, measurements=one_session.measurements[:-1])
    with pytest.raises(RegistryError) as err:
        reg.put_session(altered)
    assert err.value.code == "conflict"
    assert reg.session_path(one_session.device_id, one_session.session_id).read_bytes() == before


def test_registry_rebuild_exact(tmp_path, small_dataset):
    reg = Registry(tmp_path)
    for i in range(4):
        reg.put_session(short_session(f"dc:a6:32:00:00:{i:02x}", seed=i))
    reg.put_model(train_model(AlgorithmSpec("gnb"), small_dataset))
    original = (tmp_path / "index.json").read_bytes()
    os.remove(tmp_path / "index.json")
    reg.rebuild_index()
    assert (tmp_path / "index.json").read_bytes() == original
    assert Registry(tmp_path).index() == json.loads(original)


def test_registry_ignores_temp_files(tmp_path, one_session):
    reg = Registry(tmp_path)
    reg.put_session(one_session)
    # simulated crash: a stray temp file from an unfinished write
    (reg.sessions_dir / "dc-a6-32-00-00-99").mkdir()
    (reg.sessions_dir / "dc-a6-32-00-00-99" / ".tmp-abc").write_bytes(b"partial")
    assert list(reg.rebuild_index()["sessions"]) == [one_session.session_id]


def test_registry_models(tmp_path, small_dataset):
    reg = Registry(tmp_path)
    model = train_model(AlgorithmSpec("knn", {"k": 3}), small_dataset)
    mid = reg.put_model(model)
    assert mid == model.model_id
    assert reg.get_model(mid).to_json() == model.to_json()
    assert reg.model_ids() == [mid]
    for bad in ("nope", "../etc", ""):
        with pytest.raises(RegistryError) as err:
            reg.get_model(bad)
        assert err.value.code == "unknown_model"


def test_registry_bad_ids(tmp_path, one_session):
    from dataclasses import replace
    with pytest.raises(RegistryError):
        Registry(tmp_path).put_session(replace(one_session, device_id="../../x"))


def test_home_env(monkeypatch, tmp_path):
    monkeypatch.setenv(HOME_ENV, str(tmp_path / "h"))
    assert default_root() == tmp_path / "h"
    assert Registry().root == tmp_path / "h"


def test_concurrent_submits_do_not_interleave(tmp_path):
    reg = Registry(tmp_path)
    sessions = [short_session("dc:a6:32:00:00:0%d" % (i % 3), seed=i) for i in range(12)]
    threads = [threading.Thread(target=reg.put_session, args=(s,)) for s in sessions]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    for s in sessions:
        assert reg.session_path(s.device_id, s.session_id).read_bytes() == session_to_jsonl(s)
    assert set(reg.index()["sessions"]) == {s.session_id for s in sessions}


# -- request handling -------------------------------------------------------

@pytest.fixture
def service_env(tmp_path, small_dataset):
    reg = Registry(tmp_path)
    model = train_model(AlgorithmSpec("rforest", {"n_estimators": 20}), small_dataset, seed=0)
    mid = reg.put_model(model)
    return reg, ModelCache(reg), mid, model


def test_submit_ack(service_env, quiet_session):
    reg, models, _, _ = service_env
    reply = handle_request(WireMessage("submit_session", {"session": session_to_obj(quiet_session)}), reg, models)
    assert reply.type == "ack"
    assert reply.payload == {"session_id": quiet_session.session_id, "vectors_stored": 31}
    assert reg.get_session(quiet_session.session_id) == quiet_session


def test_submit_too_short(service_env):
    reg, models, _, _ = service_env
    s = short_session(n=50)
    reply = handle_request(WireMessage("submit_session", {"session": session_to_obj(s)}), reg, models)
    assert reply.type == "error" and reply.payload["code"] == "session_too_short"


def test_identify_unknown_model(service_env, one_session):
    reg, models, _, _ = service_env
    msg = WireMessage("identify", {"session": session_to_obj(one_session), "claimed_device_id": "x",
                                   "model_id": "0000000000000000"})
    reply = handle_request(msg, reg, models)
    assert reply.type == "error" and reply.payload["code"] == "unknown_model"


def test_identify_unknown_device(service_env, small_build):
    reg, models, mid, _ = service_env
    s = small_build[1][small_build[0][0].device_id][-1]
    msg = WireMessage("identify", {"session": session_to_obj(s), "claimed_device_id": "aa:bb:cc:dd:ee:ff",
                                   "model_id": mid})
    assert handle_request(msg, reg, models).payload["code"] == "unknown_device"


def test_identify_true_claim_and_stored_session(service_env, small_build):
    reg, models, mid, model = service_env
    fleet, sessions, _ = small_build
    dev = fleet[0].device_id
    s = sessions[dev][-1]
    reg.put_session(s)
    reply = handle_request(WireMessage("identify", {"session_id": s.session_id, "claimed_device_id": dev,
                                                    "model_id": mid}), reg, models)
    assert reply.type == "decision" and reply.payload["verdict"] == "accept"
    local = decide_identity(model, featurize_session(s), dev)
    assert reply.payload["match_fraction"] == local.match_fraction
    unknown = handle_request(WireMessage("identify", {"session_id": "ffff", "claimed_device_id": dev,
                                                      "model_id": mid}), reg, models)
    assert unknown.payload["code"] == "unknown_session"


def test_identify_spoof_rejected(service_env, small_build):
    # attack 0 against the first device: rejected in-process, and the service must agree
    reg, models, mid, model = service_env
    victim = small_build[0][0]
    spoof = attack_session(victim, 0)
    local = decide_identity(model, featurize_session(spoof), victim.device_id)
    assert local.verdict == "reject"
    reply = handle_request(WireMessage("identify", {"session": session_to_obj(spoof),
                                                    "claimed_device_id": victim.device_id,
                                                    "model_id": mid}), reg, models)
    assert reply.payload["verdict"] == "reject"
    assert reply.payload["votes"] == local.votes


@pytest.mark.parametrize("msg,code", [
    (WireMessage("bogus", {}), "unknown_type"),
    (WireMessage("identify", {}, protocol_version=2), "unsupported_version"),
    (WireMessage("identify", {"claimed_device_id": 3, "model_id": "x"}), "malformed"),
    (WireMessage("identify", {"claimed_device_id": "a", "model_id": "x", "threshold": "hi"}), "malformed"),
    (WireMessage("submit_session", {}), "malformed"),
    (WireMessage("submit_session", {"session": {"header": {}, "measurements": []}}), "malformed"),
    (WireMessage("submit_session", {"session_jsonl": "{}\n"}), "malformed"),
])
def test_error_codes(service_env, msg, code):
    reg, models, _, _ = service_env
    reply = handle_request(msg, reg, models)
    assert reply.type == "error" and reply.payload["code"] == code
    assert reply.payload["code"] in ERROR_CODES


def test_token(service_env, quiet_session):
    reg, models, _, _ = service_env
    msg = WireMessage("submit_session", {"session": session_to_obj(quiet_session)})
    assert handle_request(msg, reg, models, token="s3cret").payload["code"] == "unauthorized"
    msg.token = "s3cret"
    assert handle_request(msg, reg, models, token="s3cret").type == "ack"


def test_handle_frame_bad_json(service_env):
    reg, models, _, _ = service_env
    assert handle_frame(b"\xff\xfe", reg, models).payload["code"] == "malformed"
    assert handle_frame(b"[1,2]", reg, models).payload["code"] == "malformed"


# -- TCP server -------------------------------------------------------------

def test_server_round_trip(service_env, small_build, quiet_session):
    reg, _, mid, _ = service_env
    server = serve(("127.0.0.1", 0), reg)
    try:
        addr = server.server_address
        with Client(addr) as c:
            ack = c.submit(quiet_session)
            assert ack.type == "ack" and ack.payload["vectors_stored"] == 31
            # unknown type: error, connection stays usable
            err = c.request("bogus", {})
            assert err.payload["code"] == "unknown_type"
            # garbage frame body: error, connection still usable
            c.send_raw(struct.pack(">I", 3) + b"abc")
            assert c.receive().payload["code"] == "malformed"
            fleet, sessions, _ = small_build
            dev = fleet[1].device_id
            dec = c.identify(dev, mid, session=sessions[dev][-1])
            assert dec.type == "decision" and dec.payload["verdict"] == "accept"
    finally:
        server.shutdown()
        server.server_close()


def test_server_parallel_clients(service_env):
    reg, _, _, _ = service_env
    server = serve(("127.0.0.1", 0), reg)
    results = []

    def worker(i):
        with Client(server.server_address) as c:
            results.append(c.submit(short_session(f"dc:a6:32:00:01:{i:02x}", seed=i, n=150)).type)

    try:
        threads = [threading.Thread(target=worker, args=(i,)) for i in range(6)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
    finally:
        server.shutdown()
        server.server_close()
    assert results == ["ack"] * 6
    assert len(reg.index()["sessions"]) == 6


# -- host collector ---------------------------------------------------------

def test_collect_contract():
    s = collect_session({"n_measurements": 5, "sleep_seconds": 0.01}, device_id="02:00:00:00:00:01")
    assert [m["index"] for m in s.measurements] == [0, 1, 2, 3, 4]
    assert s.collector_kind == "host"
    assert all(m["sleep"] > 0 for m in s.measurements)
    assert all(m["sleep"] >= 0.01 * 1e9 * 0.5 for m in s.measurements)
    s.validate()


def test_collect_two_runs_share_config():
    cfg = {"n_measurements": 3, "sleep_seconds": 0.001, "functions": ["sleep", "hash"]}
    a, b = collect_session(cfg), collect_session(cfg)
    assert a.config_echo == b.config_echo
    assert a.measurements != b.measurements
    assert a.session_id != b.session_id


def test_collect_without_secondary_clock(monkeypatch):
    import skewprint.ingestd.collector as col

    def broken(name):
        raise ValueError(name)

    monkeypatch.setattr(col.time, "get_clock_info", broken)
    with pytest.raises(CollectorError, match="no secondary clock"):
        col.collect_session({"n_measurements": 1, "sleep_seconds": 0.001})


def test_collected_session_survives_codec():
    s = collect_session({"n_measurements": 2, "sleep_seconds": 0.001})
    assert decode_session(encode_session(s)) == s
