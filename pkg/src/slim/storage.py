"""Event-driven SSD model: geometry/timing, page-aligned fused-vector weight
mapping, sparsity-driven read transactions, and channel-level vs die-level
processing-engine scheduling.

A "fused vector" is one hidden neuron's weights (gate column + up column +
down row, 3*dim_e elements) stored contiguously so a neuron is one storage
unit. Vectors map round-robin across dies; small vectors pack several per
page, large ones span consecutive pages in one die.

Times are seconds internally; NAND timing fields are microseconds as usually
quoted on datasheets.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import MappingError, ShapeError
from .model import ModelConfig
from .trace import TraceEvent


@dataclass(frozen=True)
class SsdGeometry:
    n_ch: int = 16
    chips_per_ch: int = 4
    dies_per_chip: int = 1
    planes_per_die: int = 2
    blocks_per_plane: int = 1024
    pages_per_block: int = 512
    page_bytes: int = 4096

    def __post_init__(self):
        for name in ("n_ch", "chips_per_ch", "dies_per_chip", "planes_per_die",
                     "blocks_per_plane", "pages_per_block", "page_bytes"):
            if getattr(self, name) < 1:
                raise MappingError(f"{name} must be >= 1")

    @property
    def n_dies(self) -> int:
        return self.n_ch * self.chips_per_ch * self.dies_per_chip

    @property
    def pages_per_die(self) -> int:
        # planes contribute capacity only; multi-plane read is not modeled
        return self.planes_per_die * self.blocks_per_plane * self.pages_per_block

    @property
    def capacity_bytes(self) -> int:
        return self.n_dies * self.pages_per_die * self.page_bytes

    def die_coords(self, die_index: int) -> tuple[int, int, int]:
        """Inverse of the ch-major die enumeration: (ch, chip, die)."""
        ch = die_index % self.n_ch
        rest = die_index // self.n_ch
        chip = rest % self.chips_per_ch
        return ch, chip, rest // self.chips_per_ch


@dataclass(frozen=True)
class NandTiming:
    t_r_us: float = 3.0  # page array read
    t_prog_us: float = 100.0
    ch_bus_mbps: float = 1200.0  # ONFI NV-DDR3 1200 MT/s x 8b
    pe_macs: int = 16  # MACs per processing engine
    pe_clock_ghz: float = 1.0
    pe_level: str = "die"  # "die" | "channel"

    def __post_init__(self):
        if self.pe_level not in ("die", "channel"):
            raise ShapeError(f"pe_level must be 'die' or 'channel', got {self.pe_level!r}")
        if min(self.t_r_us, self.t_prog_us, self.ch_bus_mbps, self.pe_clock_ghz) <= 0:
            raise ShapeError("timing parameters must be positive")


@dataclass(frozen=True)
class NspParams:
    """Scheduling constants the datasheets do not pin down."""

    ftl_txn_us: float = 0.5  # address translation per transaction
    onchip_bus_gbps: float = 8.0  # FMC <-> controller path for channel-level PEs
    psum_bytes_per_elem: int = 2  # partial-sum width on the collection bus
    act_bytes_per_elem: int = 1  # activations move quantized


SLC_GEOMETRY = SsdGeometry(page_bytes=4096)
TLC_GEOMETRY = SsdGeometry(page_bytes=16384)


def nand_preset(nand: str, pe_level: str) -> tuple[SsdGeometry, NandTiming]:
    """Low-latency SLC or high-density TLC device, with the PE variant's MAC
    budget (64 MACs at the channel controller, 16 in each die)."""
    pe_macs = 64 if pe_level == "channel" else 16
    if nand == "slc":
        return SLC_GEOMETRY, NandTiming(t_r_us=3.0, t_prog_us=100.0,
                                        pe_macs=pe_macs, pe_level=pe_level)
    if nand == "tlc":
        return TLC_GEOMETRY, NandTiming(t_r_us=40.0, t_prog_us=650.0,
                                        pe_macs=pe_macs, pe_level=pe_level)
    raise ShapeError(f"unknown nand preset {nand!r}")


@dataclass(frozen=True)
class FusedVectorId:
    layer: int
    expert: int
    neuron: int


@dataclass
class WeightLayout:
    """Associative map from fused vectors to physical pages.

    Entry i (flat order: layer-major, then expert, then neuron) lives on die
    ``die_of[i]`` starting at per-die page ``page_of[i]`` with byte offset
    ``offset_of[i]``; every vector's pages are consecutive within one die.
    """

    geo: SsdGeometry
    n_dec: int
    n_expert: int
    dim_h: int
    dim_e: int
    bytes_per_elem: int
    vector_bytes: int
    packing_factor: int  # vectors per page (1 when a vector spans pages)
    span_pages: int  # pages per vector (1 when packing)
    die_of: np.ndarray = field(repr=False)
    page_of: np.ndarray = field(repr=False)
    offset_of: np.ndarray = field(repr=False)
    pages_used_per_die: np.ndarray = field(repr=False)

    @property
    def n_entries(self) -> int:
        return self.n_dec * self.n_expert * self.dim_h

    def flat_index(self, layer: int, expert: int, neuron: int) -> int:
        if not (0 <= neuron < self.dim_h):
            raise ShapeError(f"neuron {neuron} out of range dim_h={self.dim_h}")
        return (layer * self.n_expert + expert) * self.dim_h + neuron

    def lookup(self, vid: FusedVectorId):
        """(ch, chip, die, plane, block, page, byte_offset, span_pages)."""
        i = self.flat_index(vid.layer, vid.expert, vid.neuron)
        ch, chip, die = self.geo.die_coords(int(self.die_of[i]))
        p = int(self.page_of[i])
        per_plane = self.geo.blocks_per_plane * self.geo.pages_per_block
        plane, rest = divmod(p, per_plane)
        block, page = divmod(rest, self.geo.pages_per_block)
        return ch, chip, die, plane, block, page, int(self.offset_of[i]), self.span_pages


def map_weights(cfg: ModelConfig, geo: SsdGeometry, bytes_per_elem: int = 1) -> WeightLayout:
    """Place every fused vector page-aligned, round-robin across dies.

    Vectors no larger than a page are packed floor(page/vector) per page;
    larger vectors span ceil(vector/page) consecutive pages on one die.
    Packing groups never cross an (layer, expert) boundary so one page only
    holds neurons of a single expert matrix.
    """
    vector_bytes = 3 * cfg.dim_e * bytes_per_elem
    if vector_bytes <= geo.page_bytes:
        packing = geo.page_bytes // vector_bytes
        span = 1
    else:
        packing = 1
        span = math.ceil(vector_bytes / geo.page_bytes)

    n_entries = cfg.n_dec * cfg.n_expert * cfg.dim_h
    die_of = np.empty(n_entries, dtype=np.int32)
    page_of = np.empty(n_entries, dtype=np.int64)
    offset_of = np.empty(n_entries, dtype=np.int64)
    pages_used = np.zeros(geo.n_dies, dtype=np.int64)

    group = 0
    for layer in range(cfg.n_dec):
        for expert in range(cfg.n_expert):
            base = (layer * cfg.n_expert + expert) * cfg.dim_h
            for j0 in range(0, cfg.dim_h, packing):
                die = group % geo.n_dies
                start_page = pages_used[die]
                if start_page + span > geo.pages_per_die:
                    raise MappingError(
                        f"die {die} overflows at {start_page + span} pages "
                        f"(capacity {geo.pages_per_die})")
                for slot, j in enumerate(range(j0, min(j0 + packing, cfg.dim_h))):
                    die_of[base + j] = die
                    page_of[base + j] = start_page
                    offset_of[base + j] = slot * vector_bytes
                pages_used[die] += span
                group += 1

    return WeightLayout(geo=geo, n_dec=cfg.n_dec, n_expert=cfg.n_expert,
                        dim_h=cfg.dim_h, dim_e=cfg.dim_e,
                        bytes_per_elem=bytes_per_elem, vector_bytes=vector_bytes,
                        packing_factor=packing, span_pages=span,
                        die_of=die_of, page_of=page_of, offset_of=offset_of,
                        pages_used_per_die=pages_used)


@dataclass(frozen=True)
class ReadTransaction:
    """All pages one die must read for one FFN pass, in neuron order.

    useful_bytes prorates each page by the fraction of its resident vectors
    that are active (a page serving a lone active vector counts fully, so
    dense passes read at 100% efficiency and waste appears exactly when
    packed neighbors are skipped). active_elems counts the weights actually
    multiplied by the PE.
    """

    die_index: int
    ch: int
    chip: int
    die: int
    pages: tuple[int, ...]
    useful_bytes: float
    total_bytes: int
    active_elems: int


def generate_read_transactions(layout: WeightLayout, layer: int,
                               masks: dict[int, np.ndarray]) -> list[ReadTransaction]:
    """Transactions for one layer given per-expert neuron masks; a page is
    read iff it holds at least one active neuron's data."""
    geo = layout.geo
    pages_by_die: dict[int, dict[int, tuple[int, int]]] = {}  # die -> page -> (active, resident)
    order_by_die: dict[int, list[int]] = {}
    elems_by_die: dict[int, int] = {}

    for expert in sorted(masks):
        mask = np.asarray(masks[expert], dtype=bool)
        if mask.shape != (layout.dim_h,):
            raise ShapeError(f"mask shape {mask.shape} vs dim_h {layout.dim_h}")
        base = (layer * layout.n_expert + expert) * layout.dim_h
        for j0 in range(0, layout.dim_h, layout.packing_factor):
            j1 = min(j0 + layout.packing_factor, layout.dim_h)
            active = int(np.count_nonzero(mask[j0:j1]))
            if active == 0:
                continue
            i = base + j0
            die = int(layout.die_of[i])
            first = int(layout.page_of[i])
            d_pages = pages_by_die.setdefault(die, {})
            d_order = order_by_die.setdefault(die, [])
            for p in range(first, first + layout.span_pages):
                if p not in d_pages:
                    d_order.append(p)
                d_pages[p] = (active, j1 - j0)
            elems_by_die[die] = elems_by_die.get(die, 0) + active * 3 * layout.dim_e

    txns = []
    for die in sorted(pages_by_die):
        pages = tuple(order_by_die[die])
        useful = sum(geo.page_bytes * a / r for a, r in
                     (pages_by_die[die][p] for p in pages))
        ch, chip, d = geo.die_coords(die)
        txns.append(ReadTransaction(die_index=die, ch=ch, chip=chip, die=d,
                                    pages=pages, useful_bytes=useful,
                                    total_bytes=len(pages) * geo.page_bytes,
                                    active_elems=elems_by_die[die]))
    return txns


@dataclass(frozen=True)
class FfnPassResult:
    latency_s: float
    raw_bytes: int
    useful_bytes: float
    active_elems: int
    macs: int


def simulate_ffn_pass(transactions: list[ReadTransaction], timing: NandTiming,
                      geo: SsdGeometry, batch_tokens: int = 1, *, dim_e: int,
                      params: NspParams = NspParams(), trace: list | None = None,
                      t_start: float = 0.0) -> FfnPassResult:
    """Schedule one FFN pass over the NSP engines and return its latency.

    Steps: broadcast the input activations to every PE buffer, translate
    transactions in the FTL (one fixed-latency issue each, pipelined with the
    reads), stream page reads through the PEs (double-buffered, so each page
    costs max(read, compute)), and finally collect partial sums over the
    channel bus (die-level PEs) or the on-chip bus (channel-level PEs).

    Channel-level PEs additionally serialize every page on the shared ONFI
    bus; die-level PEs consume pages in-die and only their partial sums touch
    the bus. Within a transaction the per-page compute time uses the
    transaction's mean active elements per page. Transactions must target
    distinct dies (generate_read_transactions emits at most one per die).
    """
    t_r = timing.t_r_us * 1e-6
    ftl = params.ftl_txn_us * 1e-6
    ch_rate = timing.ch_bus_mbps * 1e6
    onchip_rate = params.onchip_bus_gbps * 1e9
    pe_rate = timing.pe_macs * timing.pe_clock_ghz * 1e9
    xfer = geo.page_bytes / ch_rate
    in_bytes = dim_e * params.act_bytes_per_elem * batch_tokens
    psum_bytes = dim_e * params.psum_bytes_per_elem * batch_tokens

    def emit(t, unit, event, qty):
        if trace is not None:
            trace.append(TraceEvent(time_ns=int(round((t_start + t) * 1e9)),
                                    unit=unit, event=event, bytes=qty))

    # step 1: broadcast inputs to PE input SRAMs
    bcast_end = {}
    if timing.pe_level == "die":
        pes_per_ch = geo.chips_per_ch * geo.dies_per_chip
        for ch in range(geo.n_ch):
            bcast_end[ch] = pes_per_ch * in_bytes / ch_rate
            emit(bcast_end[ch], f"ch{ch}", "ch_bus", pes_per_ch * in_bytes)
    else:
        t = geo.n_ch * in_bytes / onchip_rate
        for ch in range(geo.n_ch):
            bcast_end[ch] = t
        emit(t, "onchip", "onchip_bus", geo.n_ch * in_bytes)

    ftl_t = 0.0
    die_free: dict[int, float] = {}
    bus_free = [0.0] * geo.n_ch  # ONFI channel bus
    onchip_free = 0.0
    pe_done: dict[int, float] = {}
    raw = 0
    useful = 0.0
    elems = 0

    issue_at = {}
    for txn in transactions:
        ftl_t += ftl  # step 2: LPA translation, serialized in firmware
        issue_at[txn.die_index] = ftl_t
        raw += txn.total_bytes
        useful += txn.useful_bytes
        elems += txn.active_elems

    if timing.pe_level == "die":
        for txn in transactions:
            n_pages = len(txn.pages)
            macs = txn.active_elems * batch_tokens
            compute_page = (macs / n_pages) / pe_rate if n_pages else 0.0
            ready = max(die_free.get(txn.die_index, 0.0), issue_at[txn.die_index])
            done = ready + n_pages * max(t_r, compute_page)
            done = max(done, bcast_end[txn.ch])  # PE needs the input to finish
            die_free[txn.die_index] = done
            pe_done[txn.die_index] = done
            emit(done, f"die{txn.die_index}", "nand_read", txn.total_bytes)
            emit(done, f"die{txn.die_index}", "pe_mac", macs)
    else:
        # The shared channel bus arbitrates over its dies' ready pages in
        # chronological order; a die holds one buffered page and starts its
        # next array read when that buffer drains onto the bus.
        for ch in range(geo.n_ch):
            ch_txns = [t for t in transactions if t.ch == ch]
            if not ch_txns:
                continue
            pages_left = {}
            per_page_compute = {}
            heap = []
            for t in ch_txns:
                n_pages = len(t.pages)
                macs = t.active_elems * batch_tokens
                pages_left[t.die_index] = n_pages
                per_page_compute[t.die_index] = (macs / n_pages) / pe_rate if n_pages else 0.0
                heapq.heappush(heap, (issue_at[t.die_index] + t_r, t.die_index))
            bus_t = bus_free[ch]
            while heap:
                ready, die_index = heapq.heappop(heap)
                start = max(bus_t, ready, bcast_end[ch])
                bus_t = start + max(xfer, per_page_compute[die_index])
                die_free[die_index] = start
                pages_left[die_index] -= 1
                if pages_left[die_index] > 0:
                    heapq.heappush(heap, (start + t_r, die_index))
            bus_free[ch] = bus_t
            pe_done[ch] = bus_t
            for t in ch_txns:
                emit(bus_t, f"die{t.die_index}", "nand_read", t.total_bytes)
                emit(bus_t, f"ch{ch}", "ch_bus", t.total_bytes)
                emit(bus_t, f"fmc{ch}", "pe_mac", t.active_elems * batch_tokens)

    # step 4: reduce and collect partial sums from every PE that did work
    end = max(bcast_end.values())
    if timing.pe_level == "die":
        for die_index in sorted(pe_done):
            ch, _, _ = geo.die_coords(die_index)
            start = max(bus_free[ch], pe_done[die_index])
            bus_free[ch] = start + psum_bytes / ch_rate
            emit(bus_free[ch], f"ch{ch}", "ch_bus", psum_bytes)
            end = max(end, bus_free[ch])
    else:
        for ch in sorted(pe_done):
            onchip_free = max(onchip_free, pe_done[ch]) + psum_bytes / onchip_rate
            emit(onchip_free, "onchip", "onchip_bus", psum_bytes)
            end = max(end, onchip_free)

    return FfnPassResult(latency_s=end, raw_bytes=raw, useful_bytes=useful,
                         active_elems=elems, macs=elems * batch_tokens)


def write_model(layout: WeightLayout, geo: SsdGeometry, timing: NandTiming) -> float:
    """One-time programming cost in seconds: dies program their pages in
    parallel, pages within a die serialize. Never part of inference latency."""
    busiest = int(np.max(layout.pages_used_per_die)) if layout.pages_used_per_die.size else 0
    return busiest * timing.t_prog_us * 1e-6
