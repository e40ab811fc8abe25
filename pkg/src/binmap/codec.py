"""Lossless coding of binary map codes: RLE + canonical Huffman.

Pipeline: the grouped binary code is symbolized (each group pixel becomes one
symbol in {0..K}, 0 = all-zero group, s>0 = one-hot at channel s-1), scanned
group-major then row-major, run-length encoded, and the run symbols are
Huffman coded with Elias-gamma run lengths. Because Huffman coding is a
per-symbol bijection, running RLE at the symbol level is structurally
identical to running it over the flattened codeword stream.

Wire formats (all little-endian):

`.bmc` compressed map:
    magic "BMC1", u16 version, u32 code width, u32 code height, u16 G,
    u16 K, u8 downsample factor, map grid (u32 w, u32 h, f32 resolution,
    f64 origin x, f64 origin y), u16 table alphabet size, one u8 canonical
    code length per symbol (0 = absent), u64 payload bit count, payload
    bytes packed MSB-first.

`.imap` intensity raster:
    magic "IMAP", u32 width, u32 height, f32 resolution, f64 origin x,
    f64 origin y, float32 intensities row-major.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .geometry import GridSpec, MapRaster

BMC_MAGIC = b"BMC1"
BMC_VERSION = 1
IMAP_MAGIC = b"IMAP"


class CodecError(Exception):
    """Base class for coding/decoding failures."""


class CorruptHeader(CodecError):
    pass


class TruncatedPayload(CodecError):
    pass


class InvalidTable(CodecError):
    pass


class InvalidCode(CodecError):
    """The grouped code violates the at-most-one-bit-per-group invariant."""


class StreamDecodeError(CodecError):
    pass


# ---------------------------------------------------------------------------
# grouped code <-> symbols


@dataclass
class GroupedCode:
    """Binarized map embedding: per pixel, G groups of K channels with at
    most one bit set per group."""

    bits: np.ndarray  # (G*K, H, W) uint8 in {0, 1}
    groups: int
    group_size: int

    def __post_init__(self):
        self.bits = np.asarray(self.bits, dtype=np.uint8)
        gk, _, _ = self.bits.shape
        if gk != self.groups * self.group_size:
            raise ValueError("bit planes do not match groups * group_size")

    @property
    def height(self) -> int:
        return self.bits.shape[1]

    @property
    def width(self) -> int:
        return self.bits.shape[2]

    def validate(self) -> None:
        v = self.bits.reshape(self.groups, self.group_size, self.height, self.width)
        counts = v.sum(axis=1)
        if counts.size and counts.max(initial=0) > 1:
            bad = int((counts > 1).sum())
            raise InvalidCode(f"{bad} group pixels have more than one bit set")


@dataclass
class SymbolMap:
    """Per-group-pixel symbols over the alphabet {0..K}."""

    symbols: np.ndarray  # (G, H, W) uint8
    groups: int
    group_size: int

    @property
    def height(self) -> int:
        return self.symbols.shape[1]

    @property
    def width(self) -> int:
        return self.symbols.shape[2]


def symbolize(code: GroupedCode) -> SymbolMap:
    code.validate()
    v = code.bits.reshape(code.groups, code.group_size, code.height, code.width)
    has = v.any(axis=1)
    sym = np.where(has, v.argmax(axis=1) + 1, 0).astype(np.uint8)
    return SymbolMap(sym, code.groups, code.group_size)


def desymbolize(sm: SymbolMap) -> GroupedCode:
    G, H, W = sm.symbols.shape
    K = sm.group_size
    bits = np.zeros((G, K, H, W), dtype=np.uint8)
    s = sm.symbols.astype(np.int64)
    hot = s > 0
    g_idx, y_idx, x_idx = np.nonzero(hot)
    bits[g_idx, s[hot] - 1, y_idx, x_idx] = 1
    return GroupedCode(bits.reshape(G * K, H, W), G, K)


# ---------------------------------------------------------------------------
# run-length encoding


def rle_encode(symbols) -> list[tuple[int, int]]:
    """Maximal runs in scan order as (symbol, run_length) pairs."""
    arr = np.asarray(symbols).reshape(-1)
    if arr.size == 0:
        return []
    change = np.nonzero(np.diff(arr))[0] + 1
    starts = np.concatenate([[0], change])
    ends = np.concatenate([change, [arr.size]])
    return [(int(arr[s]), int(e - s)) for s, e in zip(starts, ends)]


def rle_decode(runs) -> np.ndarray:
    if not runs:
        return np.zeros(0, dtype=np.uint8)
    syms = np.asarray([s for s, _ in runs], dtype=np.uint8)
    lens = np.asarray([n for _, n in runs], dtype=np.int64)
    if lens.min(initial=1) < 1:
        raise StreamDecodeError("non-positive run length")
    return np.repeat(syms, lens)


# ---------------------------------------------------------------------------
# canonical Huffman


@dataclass
class HuffmanTable:
    """Canonical prefix code described entirely by per-symbol code lengths."""

    alphabet_size: int
    lengths: np.ndarray  # (alphabet_size,) uint8; 0 = symbol absent
    codes: dict[int, tuple[int, int]] = field(default_factory=dict)  # sym -> (bits, len)

    def __post_init__(self):
        self.lengths = np.asarray(self.lengths, dtype=np.uint8)
        if self.lengths.shape != (self.alphabet_size,):
            raise InvalidTable("length array does not match alphabet size")
        if not self.codes:
            self.codes = _canonical_codes(self.lengths)

    def kraft_sum(self) -> float:
        ls = self.lengths[self.lengths > 0].astype(np.int64)
        return float((2.0 ** (-ls)).sum())


def _canonical_codes(lengths: np.ndarray) -> dict[int, tuple[int, int]]:
    """Assign canonical codewords: shorter codes first, ties by symbol value."""
    entries = sorted((int(l), s) for s, l in enumerate(lengths) if l > 0)
    if not entries:
        raise InvalidTable("empty code table")
    ls = np.asarray([l for l, _ in entries], dtype=np.int64)
    if (2.0 ** (-ls)).sum() > 1.0 + 1e-12:
        raise InvalidTable("code lengths violate the Kraft inequality")
    codes: dict[int, tuple[int, int]] = {}
    code = 0
    prev_len = entries[0][0]
    for i, (length, sym) in enumerate(entries):
        code <<= (length - prev_len)
        codes[sym] = (code, length)
        prev_len = length
        code += 1
    return codes


def huffman_build(frequencies, alphabet_size: int | None = None) -> HuffmanTable:
    """Optimal prefix code lengths from symbol counts, canonicalized.

    `frequencies` is a mapping {symbol: count} or an array of counts. Symbols
    with zero count get length 0 (absent). A single-symbol alphabet gets a
    1-bit code so no codeword is empty.
    """
    if isinstance(frequencies, dict):
        if alphabet_size is None:
            alphabet_size = max(frequencies) + 1 if frequencies else 0
        freq = np.zeros(alphabet_size, dtype=np.int64)
        for s, c in frequencies.items():
            freq[s] = c
    else:
        freq = np.asarray(frequencies, dtype=np.int64)
        if alphabet_size is None:
            alphabet_size = freq.size
    present = [s for s in range(alphabet_size) if freq[s] > 0]
    if not present:
        raise CodecError("all-zero frequency vector")
    lengths = np.zeros(alphabet_size, dtype=np.uint8)
    if len(present) == 1:
        lengths[present[0]] = 1
        return HuffmanTable(alphabet_size, lengths)

    # Huffman merging with deterministic tie-breaking via an insertion counter.
    import heapq

    heap = [(int(freq[s]), i, (s,)) for i, s in enumerate(present)]
    heapq.heapify(heap)
    tick = len(heap)
    depth = {s: 0 for s in present}
    while len(heap) > 1:
        fa, _, syms_a = heapq.heappop(heap)
        fb, _, syms_b = heapq.heappop(heap)
        for s in syms_a + syms_b:
            depth[s] += 1
        heapq.heappush(heap, (fa + fb, tick, syms_a + syms_b))
        tick += 1
    for s, d in depth.items():
        if d > 255:
            raise CodecError("code length overflow")
        lengths[s] = d
    return HuffmanTable(alphabet_size, lengths)


# ---------------------------------------------------------------------------
# bit IO


class BitWriter:
    def __init__(self):
        self._chunks = bytearray()
        self._acc = 0
        self._nbits = 0
        self.bit_count = 0

    def write(self, value: int, nbits: int) -> None:
        if nbits == 0:
            return
        self._acc = (self._acc << nbits) | (value & ((1 << nbits) - 1))
        self._nbits += nbits
        self.bit_count += nbits
        while self._nbits >= 8:
            self._nbits -= 8
            self._chunks.append((self._acc >> self._nbits) & 0xFF)
        self._acc &= (1 << self._nbits) - 1

    def write_gamma(self, n: int) -> None:
        """Elias-gamma: floor(log2 n) zeros, then n in binary (MSB first)."""
        if n < 1:
            raise ValueError("gamma codes require n >= 1")
        nbits = n.bit_length()
        self.write(0, nbits - 1)
        self.write(n, nbits)

    def getvalue(self) -> bytes:
        out = bytearray(self._chunks)
        if self._nbits:
            out.append((self._acc << (8 - self._nbits)) & 0xFF)
        return bytes(out)


class BitReader:
    def __init__(self, data: bytes, bit_count: int):
        self._data = data
        self._limit = bit_count
        self.pos = 0
        if bit_count > 8 * len(data):
            raise TruncatedPayload("payload shorter than its declared bit count")

    def read_bit(self) -> int:
        if self.pos >= self._limit:
            raise TruncatedPayload("read past end of payload")
        byte = self._data[self.pos >> 3]
        bit = (byte >> (7 - (self.pos & 7))) & 1
        self.pos += 1
        return bit

    def read_gamma(self) -> int:
        zeros = 0
        while self.read_bit() == 0:
            zeros += 1
        n = 1
        for _ in range(zeros):
            n = (n << 1) | self.read_bit()
        return n

    @property
    def exhausted(self) -> bool:
        return self.pos >= self._limit


# ---------------------------------------------------------------------------
# whole-map encode/decode


@dataclass
class CompressedMap:
    """Self-contained compressed map: header fields + Huffman table + payload."""

    code_width: int
    code_height: int
    groups: int
    group_size: int
    downsample: int
    map_spec: GridSpec
    table: HuffmanTable
    payload: bytes
    payload_bits: int
    version: int = BMC_VERSION


def _scan_symbols(sm: SymbolMap) -> np.ndarray:
    # group-major, then row-major within each group plane
    return sm.symbols.reshape(-1)


def encode_map(code: GroupedCode, map_spec: GridSpec, downsample: int) -> CompressedMap:
    """Compress a grouped code losslessly (symbolize, RLE, canonical Huffman)."""
    sm = symbolize(code)
    stream = _scan_symbols(sm)
    runs = rle_encode(stream)
    alphabet = code.group_size + 1
    if stream.size == 0:
        lengths = np.zeros(alphabet, dtype=np.uint8)
        lengths[0] = 1
        return CompressedMap(code.width, code.height, code.groups, code.group_size,
                             downsample, map_spec, HuffmanTable(alphabet, lengths),
                             b"", 0)
    freq = np.zeros(alphabet, dtype=np.int64)
    for s, _ in runs:
        freq[s] += 1
    table = huffman_build(freq, alphabet)
    wr = BitWriter()
    for s, n in runs:
        bits, ln = table.codes[s]
        wr.write(bits, ln)
        wr.write_gamma(n)
    return CompressedMap(code.width, code.height, code.groups, code.group_size,
                         downsample, map_spec, table, wr.getvalue(), wr.bit_count)


def decode_map(cm: CompressedMap) -> GroupedCode:
    """Exact inverse of encode_map."""
    total = cm.groups * cm.code_height * cm.code_width
    if total == 0:
        return GroupedCode(np.zeros((cm.groups * cm.group_size, cm.code_height,
                                     cm.code_width), dtype=np.uint8),
                           cm.groups, cm.group_size)
    # canonical decode map: (length, code) -> symbol
    decode_lut = {(ln, bits): sym for sym, (bits, ln) in cm.table.codes.items()}
    max_len = int(cm.table.lengths.max())
    rd = BitReader(cm.payload, cm.payload_bits)
    runs: list[tuple[int, int]] = []
    count = 0
    while count < total:
        code_bits = 0
        ln = 0
        sym = None
        while ln <= max_len:
            code_bits = (code_bits << 1) | rd.read_bit()
            ln += 1
            sym = decode_lut.get((ln, code_bits))
            if sym is not None:
                break
        if sym is None:
            raise StreamDecodeError("no codeword matched within the table depth")
        n = rd.read_gamma()
        count += n
        runs.append((sym, n))
    if count != total:
        raise StreamDecodeError(f"decoded {count} symbols, expected {total}")
    if not rd.exhausted:
        raise StreamDecodeError(f"{cm.payload_bits - rd.pos} unconsumed payload bits")
    flat = rle_decode(runs)
    sym = flat.reshape(cm.groups, cm.code_height, cm.code_width)
    if sym.max(initial=0) > cm.group_size:
        raise StreamDecodeError("symbol outside group alphabet")
    return desymbolize(SymbolMap(sym, cm.groups, cm.group_size))


# ---------------------------------------------------------------------------
# serialization


def serialize(cm: CompressedMap) -> bytes:
    spec = cm.map_spec
    head = [
        BMC_MAGIC,
        struct.pack("<HIIHHB", cm.version, cm.code_width, cm.code_height,
                    cm.groups, cm.group_size, cm.downsample),
        struct.pack("<IIfdd", spec.width, spec.height, spec.resolution,
                    spec.origin[0], spec.origin[1]),
        struct.pack("<H", cm.table.alphabet_size),
        cm.table.lengths.astype("<u1").tobytes(),
        struct.pack("<Q", cm.payload_bits),
        cm.payload,
    ]
    return b"".join(head)


def parse(blob: bytes) -> CompressedMap:
    if len(blob) < 4 or blob[:4] != BMC_MAGIC:
        raise CorruptHeader("bad magic; not a compressed map stream")
    off = 4
    try:
        version, cw, ch, g, k, ds = struct.unpack_from("<HIIHHB", blob, off)
        off += struct.calcsize("<HIIHHB")
        mw, mh, res, ox, oy = struct.unpack_from("<IIfdd", blob, off)
        off += struct.calcsize("<IIfdd")
        (alpha,) = struct.unpack_from("<H", blob, off)
        off += 2
    except struct.error as e:
        raise CorruptHeader(f"truncated header: {e}") from None
    if version != BMC_VERSION:
        raise CorruptHeader(f"unsupported version {version}")
    if alpha != k + 1:
        raise CorruptHeader("table alphabet does not match group size")
    if off + alpha > len(blob):
        raise CorruptHeader("truncated code-length table")
    lengths = np.frombuffer(blob, dtype="<u1", count=alpha, offset=off).copy()
    off += alpha
    try:
        (payload_bits,) = struct.unpack_from("<Q", blob, off)
    except struct.error:
        raise CorruptHeader("missing payload bit count") from None
    off += 8
    payload = blob[off:]
    need = (payload_bits + 7) // 8
    if len(payload) < need:
        raise TruncatedPayload(f"payload has {len(payload)} bytes, needs {need}")
    if len(payload) > need:
        raise CorruptHeader("trailing bytes after payload")
    try:
        table = HuffmanTable(alpha, lengths)
    except InvalidTable:
        raise
    spec = GridSpec(mw, mh, res, (ox, oy))
    return CompressedMap(cw, ch, g, k, ds, spec, table, payload, payload_bits)


def write_bmc(path, cm: CompressedMap) -> None:
    with open(path, "wb") as fh:
        fh.write(serialize(cm))


def read_bmc(path) -> CompressedMap:
    with open(path, "rb") as fh:
        return parse(fh.read())


def write_imap(path, raster: MapRaster) -> None:
    spec = raster.spec
    with open(path, "wb") as fh:
        fh.write(IMAP_MAGIC)
        fh.write(struct.pack("<IIfdd", spec.width, spec.height, spec.resolution,
                             spec.origin[0], spec.origin[1]))
        fh.write(raster.values.astype("<f4").tobytes())


def read_imap(path) -> MapRaster:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != IMAP_MAGIC:
        raise CorruptHeader("bad magic; not an intensity raster file")
    w, h, res, ox, oy = struct.unpack_from("<IIfdd", blob, 4)
    off = 4 + struct.calcsize("<IIfdd")
    n = w * h
    if len(blob) != off + 4 * n:
        raise TruncatedPayload("raster payload size mismatch")
    values = np.frombuffer(blob, dtype="<f4", count=n, offset=off).reshape(h, w).copy()
    return MapRaster(values, GridSpec(w, h, res, (ox, oy)))


# ---------------------------------------------------------------------------
# rate accounting


def entropy_bound(mean_probs, groups_per_pixel: float = 1.0) -> float:
    """Shannon bound in bits per pixel: H2(mean_probs) * groups_per_pixel.

    The caller picks the pixel basis through `groups_per_pixel` (e.g. G for
    bits per code pixel, or G * code_area / map_area for bits per map pixel).
    """
    p = np.asarray(mean_probs, dtype=np.float64)
    if np.any(p < 0):
        raise ValueError("negative probabilities")
    if abs(p.sum() - 1.0) > 1e-6:
        raise ValueError("probabilities must sum to 1")
    pos = p > 0
    h = -(p[pos] * np.log2(p[pos])).sum()
    return float(h * groups_per_pixel)


def bpp(cm: CompressedMap, map_pixels: int) -> float:
    """Payload bits (header excluded) per original map pixel."""
    return cm.payload_bits / float(map_pixels)


def symbol_histogram(code: GroupedCode) -> np.ndarray:
    """Counts of each symbol {0..K} over all group pixels."""
    sm = symbolize(code)
    return np.bincount(sm.symbols.reshape(-1), minlength=code.group_size + 1)


def code_rate_stats(cm: CompressedMap) -> dict:
    """Achieved vs entropy-bound rates for a compressed map, in both bases."""
    code = decode_map(cm)
    hist = symbol_histogram(code).astype(np.float64)
    p = hist / hist.sum()
    map_px = cm.map_spec.width * cm.map_spec.height
    code_px = cm.code_width * cm.code_height
    bound_code_px = entropy_bound(p, groups_per_pixel=cm.groups)
    bound_map_px = entropy_bound(p, groups_per_pixel=cm.groups * code_px / map_px)
    achieved = bpp(cm, map_px)
    return {
        "symbol_hist": hist.astype(np.int64),
        "entropy_bound_per_code_px": bound_code_px,
        "entropy_bound_per_map_px": bound_map_px,
        "achieved_bpp": achieved,
        "efficiency": (bound_map_px / achieved) if achieved > 0 else float("inf"),
    }


def encode_raster_bits(raster: MapRaster, levels: int = 256) -> int:
    """Lossless bit count for the raw intensity raster via the same
    RLE + Huffman accounting, treating intensities as `levels`-step values."""
    q = np.round(raster.values.astype(np.float64) * (levels - 1)).astype(np.int64)
    runs = rle_encode(q.reshape(-1))
    freq = np.zeros(levels, dtype=np.int64)
    for s, _ in runs:
        freq[s] += 1
    table = huffman_build(freq, levels)
    bits = 0
    for s, n in runs:
        bits += table.codes[s][1]
        bits += 2 * n.bit_length() - 1
    return bits
