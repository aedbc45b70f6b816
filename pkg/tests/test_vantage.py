import http.server
import io
import json
import socket
import threading
from collections import Counter

import pytest

from epdgscan import logs
from epdgscan.ike.codec import build_notify_reply, encode_message, parse_message
from epdgscan.resolver import RecordType
from epdgscan.simnet import Scenario, spawn
from epdgscan.vantage import (
    Campaign,
    CampaignError,
    CampaignPlan,
    DriverKind,
    ExternalExecDriver,
    Phase,
    PhaseKind,
    PlanError,
    SimulatedDriver,
    TokenBucket,
    VantagePoint,
    VantageUnusable,
    _check_public,
    load_plan,
    plan_from_dict,
    run_campaign,
    schedule_round,
    simulated_plan,
    worker_main,
)

from conftest import operator, vantage


def _scenario(vantages=None, ops=None, **kw):
    return Scenario.from_dict({
        "seed": 4,
        "operators": ops or [
            operator("262", "002", "DE", ["2.0.0.1", "2.0.0.2"], ["2a00:1::1"]),
            operator("208", "01", "FR", ["2.0.1.1"], ike={"access": "allow_countries", "countries": ["FR"]}),
            operator("440", "10", "JP", ["2.0.2.1"], dns={"kind": "random_subset", "k": 1}),
        ],
        "vantages": vantages or [vantage("de1", "DE", 1), vantage("fr1", "FR", 2), vantage("us1", "US", 3, v6=False),
                                 vantage("jp1", "JP", 4), vantage("in1", "IN", 5, v6=False)],
        **kw,
    })


def _read(out, name):
    return logs.read_jsonl(out / name)


def test_every_vantage_measures_every_target(tmp_path):
    sc = _scenario()
    with spawn(sc) as net:
        result = run_campaign(simulated_plan(sc, tmp_path), net=net)
    assert not result.partial
    dns = _read(tmp_path, logs.DNS_LOG)
    discovery = Counter((r["vantage_id"], r["record_type"]) for r in dns if r["domain"])
    # 3 domains x 5 vantages for A; AAAA only from the 3 IPv6 vantages; pool queries come on top
    first = {(r["vantage_id"], r["record_type"], r["domain"]) for r in dns}
    assert len({k for k in first if k[1] == "A"}) == 15
    assert len({k for k in first if k[1] == "AAAA"}) == 9
    assert all(discovery[(v, "A")] >= 3 for v in ("de1", "fr1", "us1", "jp1", "in1"))
    probes = _read(tmp_path, logs.PROBE_LOG)
    v4 = [p for p in probes if ":" not in p["target_ip"]]
    v6 = [p for p in probes if ":" in p["target_ip"]]
    assert len(v4) == 4 * 5 and len(v6) == 1 * 3
    fr = {p["vantage_id"]: p["responsive"] for p in probes if p["target_ip"] == "2.0.1.1"}
    assert fr == {"de1": False, "fr1": True, "us1": False, "jp1": False, "in1": False}
    assert any("no IPv6 support" in n for n in result.notes)
    assert any("cannot reach IPv6" in n for n in result.notes)


def test_rerun_on_complete_logs_touches_no_network(tmp_path):
    sc = _scenario()
    with spawn(sc) as net:
        plan = simulated_plan(sc, tmp_path)
        first = run_campaign(plan, net=net)
        sent = len(net.traces)
        before = {n: (tmp_path / n).read_bytes() for n in (logs.DNS_LOG, logs.PROBE_LOG, logs.PROGRESS_LOG)}
        second = run_campaign(plan, net=net)
        assert len(net.traces) == sent
    assert second.units_run == 0 and second.units_skipped == first.units_run + first.units_skipped
    assert {n: (tmp_path / n).read_bytes() for n in before} == before


def test_interrupted_campaign_resumes_without_duplicates(tmp_path):
    sc = _scenario()
    dns_only = (Phase(PhaseKind.DNS_DISCOVERY, RecordType.A), Phase(PhaseKind.DNS_DISCOVERY, RecordType.AAAA))
    with spawn(sc) as net:
        run_campaign(simulated_plan(sc, tmp_path, phases=dns_only), net=net)
        done = len(_read(tmp_path, logs.PROGRESS_LOG))
        resumed = run_campaign(simulated_plan(sc, tmp_path), net=net)
    assert resumed.units_skipped >= done
    progress = [(r["round"], r["phase"], r["vantage"], r["target"]) for r in _read(tmp_path, logs.PROGRESS_LOG)]
    assert len(progress) == len(set(progress))


def test_declared_and_geolocated_country_both_kept(tmp_path):
    sc = _scenario([vantage("x1", "DE", 1, declared_country="FR"), vantage("fr1", "FR", 2)])
    with spawn(sc) as net:
        result = run_campaign(simulated_plan(sc, tmp_path), net=net)
    (loc,) = [r for r in _read(tmp_path, logs.VANTAGE_LOG) if r["vantage"] == "x1"]
    assert loc["geolocated_country"] == "DE" and loc["declared_country"] == "FR" and "differ" in loc["note"]
    rec = next(r for r in _read(tmp_path, logs.DNS_LOG) if r["vantage_id"] == "x1")
    assert rec["vantage_country"] == "DE" and rec["vantage_declared_country"] == "FR"
    assert not result.partial


class _LoopbackEcho(SimulatedDriver):
    def public_ip(self):
        return _check_public("127.0.0.1")


def test_vantage_without_public_route_is_unusable(tmp_path):
    sc = _scenario()
    plan = simulated_plan(sc, tmp_path)
    with spawn(sc) as net:
        factory = lambda v: (_LoopbackEcho if v.id == "jp1" else SimulatedDriver)(v, net)
        result = Campaign(plan, net=net, driver_factory=factory).run()
    assert result.partial and result.usable[(0, "jp1")] is False
    err = [r for r in _read(tmp_path, logs.VANTAGE_LOG) if r["vantage"] == "jp1"]
    assert err and "loopback" in err[0]["error"]
    assert not any(r["vantage_id"] == "jp1" for r in _read(tmp_path, logs.DNS_LOG))
    assert any(r["vantage_id"] == "de1" for r in _read(tmp_path, logs.PROBE_LOG))


def test_no_usable_vantage_aborts(tmp_path):
    sc = _scenario()
    with spawn(sc) as net:
        with pytest.raises(CampaignError):
            Campaign(simulated_plan(sc, tmp_path), net=net, driver_factory=lambda v: _LoopbackEcho(v, net)).run()


@pytest.mark.parametrize("ip, fragment", [("10.1.2.3", "private"), ("not an ip", "not an IP"), ("198.51.100.7", "reserved")])
def test_echo_address_checks(ip, fragment):
    with pytest.raises(VantageUnusable, match=fragment):
        _check_public(ip)


# -- external exec -------------------------------------------------------------


class _NotifyResponder:
    """UDP peer on loopback that answers any IKE request with an error Notify."""

    def __init__(self):
        self.sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self.sock.bind(("127.0.0.1", 0))
        self.sock.settimeout(0.2)
        self.port = self.sock.getsockname()[1]
        self.seen = 0
        self._stop = threading.Event()
        self._t = threading.Thread(target=self._serve, daemon=True)
        self._t.start()

    def _serve(self):
        while not self._stop.is_set():
            try:
                data, addr = self.sock.recvfrom(4096)
            except socket.timeout:
                continue
            self.seen += 1
            self.sock.sendto(encode_message(build_notify_reply(parse_message(data))), addr)

    def close(self):
        self._stop.set()
        self._t.join()
        self.sock.close()


@pytest.fixture
def responder():
    r = _NotifyResponder()
    yield r
    r.close()


def _probe_job(port):
    return {"kind": "probe", "stamp": {"vantage_id": "ext", "vantage_country": "DE", "vantage_public_ip": "9.9.9.9",
                                       "vantage_declared_country": None},
            "targets": [["127.0.0.1", ["epdg.epc.mnc001.mcc262.pub.3gppnetwork.org"]]],
            "retry": {"max_attempts": 2, "backoff": [0.2]}, "port": port, "rate": None}


def test_external_exec_runs_jobs_in_a_wrapped_child(responder):
    v = VantagePoint("ext", driver="external_exec", command="env EPDGSCAN_VANTAGE=ext {cmd}")
    (target, records), = list(ExternalExecDriver(v).run_job(_probe_job(responder.port)))
    assert target == "127.0.0.1"
    (rec,) = records
    assert rec["responsive"] and rec["response_kind"] == "notify" and rec["vantage_id"] == "ext"
    assert responder.seen == 1


def test_external_exec_failing_wrapper_is_unusable():
    v = VantagePoint("ext", driver="external_exec", command="false {cmd}")
    with pytest.raises(VantageUnusable, match="exited"):
        list(ExternalExecDriver(v).run_job(_probe_job(9)))


class _Echo(http.server.BaseHTTPRequestHandler):
    def do_GET(self):
        body = b"9.9.9.9\n"
        self.send_response(200)
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def log_message(self, *a):
        pass


def test_external_exec_locate_through_worker():
    srv = http.server.HTTPServer(("127.0.0.1", 0), _Echo)
    t = threading.Thread(target=srv.serve_forever, daemon=True)
    t.start()
    try:
        v = VantagePoint("ext", driver="external_exec", command="{cmd}", echo_url=f"http://127.0.0.1:{srv.server_port}/")
        assert ExternalExecDriver(v).public_ip() == "9.9.9.9"
    finally:
        srv.shutdown()


def test_worker_main_in_process(responder):
    out = io.StringIO()
    assert worker_main(io.StringIO(json.dumps(_probe_job(responder.port))), out) == 0
    msg = json.loads(out.getvalue().splitlines()[0])
    assert msg["target"] == "127.0.0.1" and msg["records"][0]["notify_type"] == 14


# -- plans ---------------------------------------------------------------------


def _vp(*ids):
    return tuple(VantagePoint(i) for i in ids)


@pytest.mark.parametrize("kw, msg", [
    ({"vantages": ()}, "at least one vantage"),
    ({"vantages": _vp("a", "a")}, "unique"),
    ({"phases": ()}, "phase"),
    ({"rounds": 0}, "rounds"),
    ({"in_vantage_parallelism": 99}, "in-vantage"),
    ({"vantage_parallelism": 0}, "parallelism"),
    ({"per_country_per_round": 0}, "per_country"),
])
def test_plan_validation(kw, msg, tmp_path):
    base = {"vantages": _vp("a"), "targets": ("x",), "out_dir": tmp_path}
    base.update(kw)
    with pytest.raises(PlanError, match=msg):
        CampaignPlan(**base)


def test_vantage_point_validation():
    with pytest.raises(PlanError):
        VantagePoint("a", v4=False, v6=False)
    with pytest.raises(PlanError):
        VantagePoint("a", driver="external_exec", command="ssh host")
    assert VantagePoint("a", declared_country="de").declared_country == "DE"


def test_plan_from_dict(tmp_path):
    (tmp_path / "targets.txt").write_text("# list\nepdg.epc.mnc001.mcc001.pub.3gppnetwork.org\n\n")
    d = {
        "vantages": [{"id": "local", "v6": True}, {"id": "fr", "driver": "external_exec", "command": "ip netns exec fr {cmd}"}],
        "targets": ["EPDG.EPC.MNC002.MCC262.PUB.3GPPNETWORK.ORG."],
        "targets_file": "targets.txt",
        "caps": {"vantages": 2, "per_vantage": 4},
        "rate": 5,
        "pool": {"max_queries": 30, "stop_after_no_new": 5},
        "ike": {"port": 4500, "dh_group_for_ke": 14, "retry": {"max_attempts": 3, "backoff": [0.5, 1]}},
        "phases": ["dns_discovery:A", {"ike_probing": None}],
    }
    plan = plan_from_dict(d, tmp_path, seed=9, rate=None)
    assert plan.targets == ("epdg.epc.mnc002.mcc262.pub.3gppnetwork.org", "epdg.epc.mnc001.mcc001.pub.3gppnetwork.org")
    assert plan.vantages[1].driver is DriverKind.EXTERNAL_EXEC
    assert plan.ike.dh_group_for_ke == 14 and plan.ike_port == 4500 and plan.retry.waits() == [0.5, 1.0, 1.0]
    assert [p.key for p in plan.phases] == ["dns_discovery:A", "ike_probing"]
    assert plan.seed == 9 and plan.rate == 5  # None overrides are ignored
    with pytest.raises(PlanError):
        plan_from_dict({"vantages": [{"id": "a", "colour": "red"}]})
    with pytest.raises(PlanError):
        plan_from_dict({"vantages": [{"id": "a"}], "phases": ["teleport"]})


def test_example_config_parses(tmp_path):
    import shutil

    cfg = shutil.copy("configs/campaign.example.yaml", tmp_path)
    (tmp_path / "targets.txt").write_text("epdg.epc.mnc002.mcc262.pub.3gppnetwork.org\n")
    plan = load_plan(cfg, out_dir=tmp_path)
    assert plan.targets == ("epdg.epc.mnc002.mcc262.pub.3gppnetwork.org",)
    assert {v.driver for v in plan.vantages} == {DriverKind.LOCAL, DriverKind.EXTERNAL_EXEC}


def test_simulated_plan_rejects_unknown_settings(tmp_path):
    with pytest.raises(PlanError, match="unknown scenario settings"):
        simulated_plan(_scenario(settings={"warp": 9}), tmp_path)


# -- scheduling and pacing ----------------------------------------------------------


def test_round_rotation_spreads_vantages(tmp_path):
    vs = tuple(VantagePoint(f"de{i}", declared_country="DE") for i in range(3)) + (VantagePoint("fr0", declared_country="FR"),)
    plan = CampaignPlan(vantages=vs, targets=(), out_dir=tmp_path, per_country_per_round=1, rounds=3, seed=2)
    rounds = [schedule_round(plan, r) for r in range(3)]
    assert all(len(r) == 2 and vs[3] in r for r in rounds)
    assert sorted(v.id for r in rounds for v in r if v.declared_country == "DE") == ["de0", "de1", "de2"]
    assert rounds == [schedule_round(plan, r) for r in range(3)]
    everyone = CampaignPlan(vantages=vs, targets=(), out_dir=tmp_path)
    assert schedule_round(everyone, 5) == list(vs)


def test_token_bucket_paces_requests():
    now = [0.0]
    waits = []

    def sleep(s):
        waits.append(s)
        now[0] += s

    bucket = TokenBucket(4.0, clock=lambda: now[0], sleep=sleep)
    for _ in range(5):
        bucket.acquire()
    assert now[0] == pytest.approx(1.0)
    assert waits == pytest.approx([0.25] * 4)
    free = TokenBucket(None, clock=lambda: 0.0, sleep=lambda s: pytest.fail("slept"))
    for _ in range(100):
        free.acquire()
