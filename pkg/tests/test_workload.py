"""KV state machine and closed-loop client behavior."""

from bftlab.core import CommandBatch, FaultModel, NoOp, SystemConfig
from bftlab.engine_common import Timing
from bftlab.msgs import AssignRequest, ClientRequest, Reply
from bftlab.runner import run_scenario
from bftlab.scenario import Scenario
from bftlab.workload import CLIENT_BASE, ClientActor, KvState, make_batch

CFG = SystemConfig(n_replicas=4, max_faults=1, fault_model=FaultModel.BFT,
                   batch_size=2, payload_bytes=8)


class FakeCtx:
    def __init__(self):
        self.now = 0.0
        self.sent = []
        self.timers = {}
        self.next_handle = 0
        self.trace = _TraceStub()

    def send(self, dst, msg):
        self.sent.append((dst, msg))

    def set_timer(self, delay, tag, data=None):
        self.next_handle += 1
        self.timers[self.next_handle] = (delay, tag)
        return self.next_handle

    def cancel_timer(self, handle):
        self.timers.pop(handle, None)

    def rng(self, purpose):
        import random
        return random.Random(0)


class _TraceStub:
    def __init__(self):
        self.records = []

    def add(self, rtype, **kw):
        self.records.append({"type": rtype, **kw})


class TestKvState:
    def test_put_is_visible(self):
        kv = KvState()
        kv.apply(CommandBatch(1, 0, ((b"k", b"v"),)))
        assert kv.store[b"k"] == b"v"

    def test_noop_leaves_state_digest_unchanged(self):
        kv = KvState()
        kv.apply(CommandBatch(1, 0, ((b"k", b"v"),)))
        before = kv.state_digest()
        kv.apply(NoOp())
        assert kv.state_digest() == before

    def test_same_sequence_same_digest(self):
        a, b = KvState(), KvState()
        batches = [CommandBatch(1, i, ((b"k%d" % i, b"v"),)) for i in range(4)]
        results_a = [a.apply(x) for x in batches]
        results_b = [b.apply(x) for x in batches]
        assert results_a == results_b
        assert a.state_digest() == b.state_digest()

    def test_order_changes_digest(self):
        a, b = KvState(), KvState()
        x = CommandBatch(1, 0, ((b"k", b"1"),))
        y = CommandBatch(2, 0, ((b"k", b"2"),))
        a.apply(x), a.apply(y)
        b.apply(y), b.apply(x)
        assert a.state_digest() != b.state_digest()


def make_client(hybrid=False, n_requests=3):
    client = ClientActor(CLIENT_BASE, CFG, coordinator=0, hybrid=hybrid,
                         timing=Timing(10.0), n_requests=n_requests)
    ctx = FakeCtx()
    client.bind(ctx)
    return client, ctx


class TestClientActor:
    def test_closed_loop_one_outstanding(self):
        client, ctx = make_client()
        client.start()
        assert client.outstanding is not None
        assert len([m for _d, m in ctx.sent if isinstance(m, ClientRequest)]) == 1

    def test_reply_quorum_advances_timestamp(self):
        client, ctx = make_client()
        client.start()
        first = client.outstanding
        for src in range(CFG.max_faults + 1):
            client.on_message(src, Reply(client.actor_id, first.timestamp, b"r"), 1.0)
        assert client.outstanding.timestamp == first.timestamp + 1

    def test_f_matching_replies_keep_waiting(self):
        client, ctx = make_client()
        client.start()
        first = client.outstanding
        client.on_message(0, Reply(client.actor_id, first.timestamp, b"r"), 1.0)
        assert client.outstanding is first  # one reply could be a lie

    def test_mismatched_replies_do_not_count_together(self):
        client, ctx = make_client()
        client.start()
        ts = client.outstanding.timestamp
        client.on_message(0, Reply(client.actor_id, ts, b"r1"), 1.0)
        client.on_message(1, Reply(client.actor_id, ts, b"r2"), 1.0)
        assert client.outstanding is not None

    def test_timeout_broadcasts_then_adapts(self):
        client, ctx = make_client()
        client.start()
        ctx.sent.clear()
        client.on_timer(("client",), None, 500.0)
        requests = [d for d, m in ctx.sent if isinstance(m, ClientRequest)]
        assert sorted(requests) == [0, 1, 2, 3]  # forwarded to everyone
        client.on_timer(("client",), None, 1500.0)
        assert any(isinstance(m, AssignRequest) for _d, m in ctx.sent)
        # after adapting, fresh requests go to f+1 replicas
        for src in range(CFG.max_faults + 1):
            client.on_message(src, Reply(client.actor_id, 0, b"r"), 2.0)
        sends = [d for d, m in ctx.sent if isinstance(m, ClientRequest)
                 and m.batch.timestamp == 1]
        assert len(sends) == CFG.max_faults + 1

    def test_stops_after_n_requests(self):
        client, ctx = make_client(n_requests=1)
        client.start()
        for src in range(2):
            client.on_message(src, Reply(client.actor_id, 0, b"r"), 1.0)
        assert client.outstanding is None
        assert client.accepted == 1

    def test_batch_respects_config_sizes(self):
        import random
        batch = make_batch(7, 3, random.Random(1), CFG)
        assert len(batch.operations) == CFG.batch_size
        for key, value in batch.operations:
            assert len(key) == 20 and len(value) == CFG.payload_bytes


class TestEndToEndConsistency:
    def test_results_match_sequential_reference_execution(self):
        # replay the observer's committed order through a fresh state
        # machine; recorded result digests must match
        sc = Scenario(protocol="destiny", n_replicas=3, requests_per_client=3,
                      clients_per_replica=2, duration_ms=30_000.0)
        res = run_scenario(sc, seed=31)
        assert res.violations == []
        observer = res.replicas[0]
        execs = [r for r in res.trace.records
                 if r["type"] == "exec" and r["replica"] == 0]
        reference = KvState()
        batches = {}
        for client in res.clients:
            pass  # payloads live in the replica's dissemination cache
        for rec in sorted(execs, key=lambda r: r["oseq"]):
            payload = observer.dissem_payload[(rec["owner"], rec["dseq"])]
            result = reference.apply(payload)
            assert result[:8].hex() == rec["result"]
        assert reference.state_digest() == observer.kv.state_digest()

    def test_exactly_once_effect_per_timestamp(self):
        sc = Scenario(protocol="dqpbft", n_replicas=4, requests_per_client=3,
                      duration_ms=30_000.0)
        res = run_scenario(sc, seed=32)
        for rid in range(4):
            seen = set()
            for rec in res.trace.records:
                if rec["type"] == "exec" and rec["replica"] == rid:
                    key = (rec["client"], rec["ts"])
                    assert key not in seen
                    seen.add(key)
