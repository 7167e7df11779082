"""Discrete-event model of a compute node paging to replicated remote memory.

Workload: ``connections`` closed-loop clients send queries to a server with
``server_threads`` worker threads; connection ``c`` is pinned to thread
``c % server_threads``. A query costs ``cpu_time`` of thread time, then is
served locally with probability ``local_hit_ratio`` or takes a synchronous
remote page fault that holds the thread until the page is back.

Data path: each memory node has one link (or all share one link with
``shared_link``). Transfers reserve their link FIFO for ``bytes / bandwidth``
and complete ``base_op_latency`` after leaving it. Replication reads the
primary first; RS(k, n) reads ``k`` fragments of ``page / k`` bytes in
parallel from distinct nodes.

Faults: a physical read is a DUE with the configured probability. The error
reaches the thread only after the memory node handles the machine check
(two-point cost mixture), after which the next replica, or the next untried
fragment, is read. A block that DUEs is blacklisted for the rest of the run.
Writes go to all ``n`` placements and wait out any MCE they trigger.

Random draws are keyed by ``(connection, query index, slot)`` so runs that
differ only in ``due_rate`` share their random numbers.
"""

from __future__ import annotations

import heapq
import json
import math
import types
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import _accel
from ._accel import njit
from ._rng import uniform_nb, uniform_py
from .model import ErasureCode, RedundancyScheme, Replication

# event kinds, ordered as in the trace schema
REQUEST_ARRIVAL = 0
FETCH_ISSUE = 1
TRANSFER_COMPLETE = 2
MCE_HANDLED = 3
REPLICA_RETRY = 4
REQUEST_COMPLETE = 5
REQUEST_FAILED = 6
EVENT_KINDS = (
    "request-arrival",
    "fetch-issue",
    "transfer-complete",
    "mce-handled",
    "replica-retry",
    "request-complete",
    "request-failed",
)
# heap-only kinds, never traced under their own name
_DONE = 7
_WRITE_MCE = 8

# rng slots within one query
_SLOT_LOCAL = 0
_SLOT_PAGE = 1
_SLOT_WRITE = 2
_SLOT_DUE = 16
_SLOT_MCE = 48
_SLOT_WDUE = 80
_SLOT_WMCE = 112


@dataclass(frozen=True)
class SimConfig:
    scheme: RedundancyScheme = field(default_factory=lambda: Replication(3))
    # DUE probability per physical read of a page's worth of data; with the
    # "page" basis a fragment of f bytes fails with 1 - (1 - due_rate)^(f/page)
    due_rate: float = 0.0
    due_rate_basis: str = "page"
    memory_nodes: int = 6
    link_bandwidth: float = 7e9  # bytes/s, 56 Gbps
    shared_link: bool = False
    base_op_latency: float = 3e-6
    cpu_time: float = 1e-6
    local_hit_ratio: float = 0.25
    local_latency: float = 1e-7
    page_bytes: int = 4096
    footprint_pages: int = 262144  # 1 GiB of 4 KiB pages
    connections: int = 1024
    server_threads: int = 4
    think_time: float = 0.0
    write_ratio: float = 0.0
    ec_decode_time: float = 0.0
    mce_typical: float = 200e-6
    mce_spike: float = 1.0
    mce_spike_prob: float = 1e-3
    duration: float = 0.2
    seed: int = 1

    def __post_init__(self):
        for name in ("due_rate", "local_hit_ratio", "write_ratio", "mce_spike_prob"):
            v = getattr(self, name)
            if not 0 <= v <= 1:
                raise ValueError(f"{name} must lie in [0, 1], got {v!r}")
        if self.due_rate_basis not in ("page", "read"):
            raise ValueError("due_rate_basis must be 'page' or 'read'")
        if self.link_bandwidth <= 0:
            raise ValueError("link_bandwidth must be > 0")
        if self.duration <= 0:
            raise ValueError("duration must be > 0")
        for name in ("base_op_latency", "cpu_time", "local_latency", "think_time",
                     "ec_decode_time", "mce_typical", "mce_spike"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        for name in ("memory_nodes", "page_bytes", "footprint_pages", "connections", "server_threads"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not isinstance(self.scheme, (Replication, ErasureCode)):
            raise TypeError(f"unknown redundancy scheme {self.scheme!r}")
        if self.scheme.n > self.memory_nodes:
            raise ValueError("every replica/fragment needs a distinct memory node")
        if self.scheme.n > 16:
            raise ValueError("at most 16 replicas/fragments")
        if self.page_bytes % self.scheme.k:
            raise ValueError("page size must split evenly into k fragments")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    @property
    def fragment_bytes(self) -> int:
        return self.page_bytes // self.scheme.k

    @property
    def read_due_probability(self) -> float:
        if self.due_rate_basis == "read" or self.scheme.k == 1:
            return self.due_rate
        if self.due_rate == 1:
            return 1.0
        return -math.expm1(math.log1p(-self.due_rate) * self.fragment_bytes / self.page_bytes)

    def mean_mce_cost(self) -> float:
        return (1 - self.mce_spike_prob) * self.mce_typical + self.mce_spike_prob * self.mce_spike


@dataclass
class SimReport:
    qps: float
    latency_avg: float
    latency_p99: float
    mce_count: int
    extra_replica_reads: int
    node_utilization: tuple
    issued: int
    completed: int
    failed: int
    in_flight: int
    block_reads: int
    block_dues: int
    duration: float
    trace: list | None = None

    def row(self) -> dict:
        d = asdict(self)
        d.pop("trace")
        d["node_utilization"] = " ".join(f"{u:.6f}" for u in self.node_utilization)
        return d


# ---------------------------------------------------------------------------
# kernel

# names the kernel resolves as globals; the interpreted copy swaps them
_uniform = uniform_nb
heappush, heappop = heapq.heappush, heapq.heappop


@njit
def _transfer(link_free, link_busy, link, t, nbytes, bandwidth, latency, horizon):
    start = max(t, link_free[link])
    end = start + nbytes / bandwidth
    link_free[link] = end
    link_busy[link] += min(end, horizon) - min(start, horizon)
    return end + latency


@njit
def _record(tr_t, tr_kind, tr_conn, tr_seq, tr_node, n, t, kind, c, s, node):
    if n < tr_t.shape[0]:
        tr_t[n] = t
        tr_kind[n] = kind
        tr_conn[n] = c
        tr_seq[n] = s
        tr_node[n] = node
    return n + 1


@njit
def _kernel_nb(seed, k, n, frag_bytes, read_p, write_p, m_nodes, shared, bandwidth,
               base_lat, cpu, hit, local_lat, n_pages, n_conn, n_threads, think,
               write_ratio, decode, mce_typ, mce_spike, spike_p, horizon, trace_cap):
    n_links = 1 if shared else m_nodes
    link_free = np.zeros(n_links)
    link_busy = np.zeros(n_links)
    blacklist = np.zeros(n_pages, dtype=np.int64)
    queue = np.zeros((n_threads, n_conn), dtype=np.int64)
    q_head = np.zeros(n_threads, dtype=np.int64)
    q_len = np.zeros(n_threads, dtype=np.int64)
    busy = np.zeros(n_threads, dtype=np.bool_)
    seq = np.full(n_conn, -1, dtype=np.int64)
    arrived = np.zeros(n_conn)
    page = np.zeros(n_conn, dtype=np.int64)
    tried = np.zeros(n_conn, dtype=np.int64)
    good = np.zeros(n_conn, dtype=np.int64)
    done_at = np.zeros(n_conn)
    lat = np.empty(1024)
    n_lat = 0
    tr_t = np.zeros(trace_cap)
    tr_kind = np.zeros(trace_cap, dtype=np.int64)
    tr_conn = np.zeros(trace_cap, dtype=np.int64)
    tr_seq = np.zeros(trace_cap, dtype=np.int64)
    tr_node = np.zeros(trace_cap, dtype=np.int64)
    n_tr = 0
    tracing = trace_cap > 0
    issued = 0
    completed = 0
    failed = 0
    mce_count = 0
    extra = 0
    block_reads = 0
    block_dues = 0

    order = 0
    heap = [(0.0, 0, 0, 0, 0)]
    heappop(heap)
    for c in range(n_conn):
        heappush(heap, (0.0, order, REQUEST_ARRIVAL, c, 0))
        order += 1

    while len(heap) > 0:
        t, _, kind, c, aux = heappop(heap)
        if t > horizon:
            break
        s = seq[c]
        w = c % n_threads
        start_thread = False

        if kind == REQUEST_ARRIVAL:
            issued += 1
            seq[c] += 1
            s = seq[c]
            arrived[c] = t
            queue[w, (q_head[w] + q_len[w]) % n_conn] = c
            q_len[w] += 1
            if tracing:
                n_tr = _record(tr_t, tr_kind, tr_conn, tr_seq, tr_node, n_tr, t, kind, c, s, -1)
            start_thread = not busy[w]

        elif kind == FETCH_ISSUE:
            if tracing:
                n_tr = _record(tr_t, tr_kind, tr_conn, tr_seq, tr_node, n_tr, t, kind, c, s, -1)
            p = page[c]
            base = p % m_nodes
            tried[c] = 0
            good[c] = 0
            done_at[c] = t
            if _uniform(seed, c, s, _SLOT_WRITE) < write_ratio:
                # write all n placements, wait out any machine checks
                for j in range(n):
                    if (blacklist[p] >> j) & 1:
                        continue
                    node = (base + j) % m_nodes
                    link = 0 if shared else node
                    fin = _transfer(link_free, link_busy, link, t, frag_bytes, bandwidth,
                                   base_lat, horizon)
                    if tracing:
                        heappush(heap, (fin, order, TRANSFER_COMPLETE, c, node))
                        order += 1
                    if _uniform(seed, c, s, _SLOT_WDUE + j) < write_p:
                        blacklist[p] |= 1 << j
                        block_dues += 1
                        if _uniform(seed, c, s, _SLOT_WMCE + j) < spike_p:
                            fin += mce_spike
                        else:
                            fin += mce_typ
                        heappush(heap, (fin, order, _WRITE_MCE, c, node))
                        order += 1
                    done_at[c] = max(done_at[c], fin)
                heappush(heap, (done_at[c], order, _DONE, c, 0))
                order += 1
                continue
            # first k usable placements, lowest index first
            need = k
            aux = 0
            for j in range(n):
                if need == 0:
                    break
                if not (blacklist[p] >> j) & 1:
                    aux |= 1 << j
                    need -= 1
            if need > 0:
                heappush(heap, (t, order, _DONE, c, 1))
                order += 1
                continue
            kind = REPLICA_RETRY  # fall through to the shared read path

        elif kind == MCE_HANDLED:
            # aux: number of machine checks handled at this instant
            mce_count += aux
            if tracing:
                for _i in range(aux):
                    n_tr = _record(tr_t, tr_kind, tr_conn, tr_seq, tr_node, n_tr, t, kind,
                                  c, s, -1)
            p = page[c]
            need = k - good[c]
            aux = 0
            for j in range(n):
                if need == 0:
                    break
                if not (blacklist[p] >> j) & 1 and not (tried[c] >> j) & 1:
                    aux |= 1 << j
                    need -= 1
            if need > 0:
                heappush(heap, (t, order, _DONE, c, 1))
                order += 1
                continue
            for j in range(n):
                if (aux >> j) & 1:
                    extra += 1
                    if tracing:
                        n_tr = _record(tr_t, tr_kind, tr_conn, tr_seq, tr_node, n_tr, t,
                                      REPLICA_RETRY, c, s, (page[c] % m_nodes + j) % m_nodes)
            kind = REPLICA_RETRY

        elif kind == TRANSFER_COMPLETE:
            n_tr = _record(tr_t, tr_kind, tr_conn, tr_seq, tr_node, n_tr, t, kind, c, s, aux)
            continue

        elif kind == _WRITE_MCE:
            mce_count += 1
            if tracing:
                n_tr = _record(tr_t, tr_kind, tr_conn, tr_seq, tr_node, n_tr, t, MCE_HANDLED,
                              c, s, aux)
            continue

        elif kind == _DONE:
            if aux == 1:
                failed += 1
                if tracing:
                    n_tr = _record(tr_t, tr_kind, tr_conn, tr_seq, tr_node, n_tr, t,
                                  REQUEST_FAILED, c, s, -1)
            else:
                completed += 1
                if n_lat == lat.shape[0]:
                    grown = np.empty(2 * lat.shape[0])
                    grown[:n_lat] = lat[:n_lat]
                    lat = grown
                lat[n_lat] = t - arrived[c]
                n_lat += 1
                if tracing:
                    n_tr = _record(tr_t, tr_kind, tr_conn, tr_seq, tr_node, n_tr, t,
                                  REQUEST_COMPLETE, c, s, -1)
            busy[w] = False
            start_thread = True
            heappush(heap, (t + think, order, REQUEST_ARRIVAL, c, 0))
            order += 1

        if kind == REPLICA_RETRY:
            # issue the reads in bitmask aux for connection c at time t
            p = page[c]
            base = p % m_nodes
            n_fail = 0
            retry_at = t
            for j in range(n):
                if not (aux >> j) & 1:
                    continue
                node = (base + j) % m_nodes
                link = 0 if shared else node
                tried[c] |= 1 << j
                block_reads += 1
                fin = _transfer(link_free, link_busy, link, t, frag_bytes, bandwidth,
                               base_lat, horizon)
                if tracing:
                    heappush(heap, (fin, order, TRANSFER_COMPLETE, c, node))
                    order += 1
                if _uniform(seed, c, s, _SLOT_DUE + j) < read_p:
                    blacklist[p] |= 1 << j
                    block_dues += 1
                    n_fail += 1
                    if _uniform(seed, c, s, _SLOT_MCE + j) < spike_p:
                        fin += mce_spike
                    else:
                        fin += mce_typ
                    retry_at = max(retry_at, fin)
                else:
                    good[c] += 1
                    done_at[c] = max(done_at[c], fin)
            if n_fail > 0:
                heappush(heap, (retry_at, order, MCE_HANDLED, c, n_fail))
            else:
                finish = done_at[c] + (decode if k > 1 else 0.0)
                heappush(heap, (finish, order, _DONE, c, 0))
            order += 1

        if start_thread:
            if q_len[w] == 0:
                busy[w] = False
            else:
                nxt = queue[w, q_head[w]]
                q_head[w] = (q_head[w] + 1) % n_conn
                q_len[w] -= 1
                busy[w] = True
                sn = seq[nxt]
                if _uniform(seed, nxt, sn, _SLOT_LOCAL) < hit:
                    heappush(heap, (t + cpu + local_lat, order, _DONE, nxt, 0))
                else:
                    page[nxt] = min(int(_uniform(seed, nxt, sn, _SLOT_PAGE) * n_pages), n_pages - 1)
                    heappush(heap, (t + cpu, order, FETCH_ISSUE, nxt, 0))
                order += 1

    counts = np.array([issued, completed, failed, mce_count, extra, block_reads, block_dues,
                       n_tr], dtype=np.int64)
    return (counts, lat[:n_lat].copy(), link_busy,
            tr_t, tr_kind, tr_conn, tr_seq, tr_node)



def _interpreted(func, **globals_):
    """The undecorated function re-bound to pure-Python globals."""
    py = getattr(func, "py_func", func)
    g = dict(py.__globals__)
    g.update(globals_)
    return types.FunctionType(py.__code__, g, py.__name__)


_py_transfer = _interpreted(_transfer)
_py_record = _interpreted(_record)
_kernel_py = _interpreted(_kernel_nb, _uniform=uniform_py, _transfer=_py_transfer,
                          _record=_py_record)


def _kernel(backend):
    return _kernel_nb if backend == "numba" else _kernel_py


def run(cfg: SimConfig, trace: bool = False, trace_capacity: int = 1_000_000,
        backend: str | None = None) -> SimReport:
    backend = _accel.resolve_backend(backend)
    scheme = cfg.scheme
    seed = np.uint64(cfg.seed) if backend == "numba" else int(cfg.seed)
    write_p = cfg.read_due_probability
    out = _kernel(backend)(
        seed, scheme.k, scheme.n, float(cfg.fragment_bytes), cfg.read_due_probability, write_p,
        cfg.memory_nodes, cfg.shared_link, cfg.link_bandwidth, cfg.base_op_latency, cfg.cpu_time,
        cfg.local_hit_ratio, cfg.local_latency, cfg.footprint_pages, cfg.connections,
        cfg.server_threads, cfg.think_time, cfg.write_ratio, cfg.ec_decode_time,
        cfg.mce_typical, cfg.mce_spike, cfg.mce_spike_prob, cfg.duration,
        trace_capacity if trace else 0,
    )
    counts, lat, link_busy, tr_t, tr_kind, tr_conn, tr_seq, tr_node = out
    issued, completed, failed, mce, extra, reads, dues, n_tr = (int(x) for x in counts)
    events = None
    if trace:
        kept = min(n_tr, trace_capacity)
        events = [
            {"t": float(tr_t[i]), "kind": EVENT_KINDS[int(tr_kind[i])], "conn": int(tr_conn[i]),
             "seq": int(tr_seq[i]), "node": int(tr_node[i])}
            for i in range(kept)
        ]
        if n_tr > trace_capacity:
            events.append({"t": float(cfg.duration), "kind": "trace-truncated", "conn": -1,
                           "seq": n_tr - trace_capacity, "node": -1})
    return SimReport(
        qps=completed / cfg.duration,
        latency_avg=float(lat.mean()) if lat.size else 0.0,
        latency_p99=float(np.quantile(lat, 0.99)) if lat.size else 0.0,
        mce_count=mce,
        extra_replica_reads=extra,
        node_utilization=tuple(float(b) / cfg.duration for b in link_busy),
        issued=issued,
        completed=completed,
        failed=failed,
        in_flight=issued - completed - failed,
        block_reads=reads,
        block_dues=dues,
        duration=cfg.duration,
        trace=events,
    )


def compare_schemes(base: SimConfig, backend: str | None = None) -> tuple[SimReport, SimReport]:
    """Replication(3) and RS(4, 6) on the same workload and seed."""
    rep = run(replace(base, scheme=Replication(3)), backend=backend)
    ec = run(replace(base, scheme=ErasureCode(4, 6)), backend=backend)
    return rep, ec


def mce_cost_model(seed: int, count: int, typical: float = 200e-6, spike: float = 1.0,
                   spike_prob: float = 1e-3) -> np.ndarray:
    """``count`` machine-check handling times from the two-point mixture."""
    from ._rng import uniform_np

    if not 0 <= spike_prob <= 1:
        raise ValueError("spike_prob must lie in [0, 1]")
    u = uniform_np(seed, np.arange(count, dtype=np.uint64), 0, 0)
    return np.where(u < spike_prob, spike, typical)


def write_trace(events, path) -> None:
    """Line-delimited JSON, one object per event: t, kind, conn, seq, node."""
    with open(path, "w") as fh:
        for ev in events:
            fh.write(json.dumps(ev, sort_keys=True) + "\n")
