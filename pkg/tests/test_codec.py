import numpy as np
import pytest

from binmap import codec
from binmap.geometry import GridSpec, MapRaster
from binmap.rng import Rng


def random_code(rng, G=None, K=None, H=None, W=None):
    G = G or int(rng.integers(1, 5))
    K = K or int(rng.integers(2, 9))
    H = H if H is not None else int(rng.integers(1, 20))
    W = W if W is not None else int(rng.integers(1, 20))
    sym = rng.integers(0, K + 1, (G, H, W)).astype(np.uint8)
    keep = rng.uniform((G, H, W)) < rng.uniform()
    sym = np.where(keep, sym, 0).astype(np.uint8)
    return codec.desymbolize(codec.SymbolMap(sym, G, K))


# ---------------------------------------------------------------------------
# RLE


def test_rle_run_of_fives():
    assert codec.rle_encode([5, 5, 5, 5, 5, 5, 8]) == [(5, 6), (8, 1)]


def test_rle_empty():
    assert codec.rle_encode([]) == []


def test_rle_mixed():
    assert codec.rle_encode([1, 1, 2, 2, 2, 1]) == [(1, 2), (2, 3), (1, 1)]


def test_rle_roundtrip_property():
    rng = Rng(7)
    for _ in range(50):
        n = int(rng.integers(0, 200))
        seq = rng.integers(0, 4, (n,)).astype(np.uint8)
        runs = codec.rle_encode(seq)
        assert np.array_equal(codec.rle_decode(runs), seq)
        assert all(r >= 1 for _, r in runs)


# ---------------------------------------------------------------------------
# Huffman


def test_huffman_two_symbols():
    t = codec.huffman_build({5: 6, 8: 1}, 9)
    assert t.lengths[5] == 1 and t.lengths[8] == 1


def test_huffman_classic_tree():
    t = codec.huffman_build({0: 8, 1: 4, 2: 2, 3: 2}, 4)
    assert list(t.lengths) == [1, 2, 3, 3]


def test_huffman_single_symbol_one_bit():
    t = codec.huffman_build({3: 10}, 5)
    assert t.lengths[3] == 1
    assert t.lengths.sum() == 1


def test_huffman_rejects_empty():
    with pytest.raises(codec.CodecError):
        codec.huffman_build({}, 4)


def test_huffman_prefix_free_and_kraft():
    rng = Rng(8)
    for _ in range(30):
        k = int(rng.integers(2, 12))
        freqs = {s: int(rng.integers(1, 1000)) for s in range(k)}
        t = codec.huffman_build(freqs, k)
        assert t.kraft_sum() <= 1.0 + 1e-12
        words = sorted(f"{bits:0{ln}b}" for bits, ln in t.codes.values())
        for i in range(len(words) - 1):
            assert not words[i + 1].startswith(words[i])


def test_huffman_deterministic_tables():
    freqs = {0: 10, 1: 10, 2: 5, 3: 5, 4: 1}
    t1 = codec.huffman_build(freqs, 5)
    t2 = codec.huffman_build(freqs, 5)
    assert np.array_equal(t1.lengths, t2.lengths)
    assert t1.codes == t2.codes


# ---------------------------------------------------------------------------
# whole-map round trips


def test_encode_decode_roundtrip_randomized():
    rng = Rng(42)
    for _ in range(200):
        code = random_code(rng)
        spec = GridSpec(code.width * 8, code.height * 8, 0.05)
        cm = codec.encode_map(code, spec, 8)
        out = codec.decode_map(codec.parse(codec.serialize(cm)))
        assert np.array_equal(out.bits, code.bits)
        assert out.groups == code.groups and out.group_size == code.group_size


def test_all_zero_code_tiny_payload():
    z = codec.GroupedCode(np.zeros((8, 64, 64), np.uint8), 2, 4)
    cm = codec.encode_map(z, GridSpec(512, 512, 0.05), 8)
    assert cm.payload_bits <= 64  # one run symbol + gamma'd run length
    assert codec.bpp(cm, 512 * 512) < 0.001
    assert np.array_equal(codec.decode_map(cm).bits, z.bits)


def test_empty_code_roundtrip():
    z = codec.GroupedCode(np.zeros((4, 0, 0), np.uint8), 2, 2)
    cm = codec.encode_map(z, GridSpec(1, 1, 0.05), 8)
    assert cm.payload_bits == 0
    out = codec.decode_map(cm)
    assert out.bits.shape == (4, 0, 0)


def test_encode_rejects_double_bits():
    bits = np.zeros((4, 2, 2), np.uint8)
    bits[0, 0, 0] = 1
    bits[1, 0, 0] = 1  # two bits in group 0
    bad = codec.GroupedCode(bits, 1, 4)
    with pytest.raises(codec.InvalidCode):
        codec.encode_map(bad, GridSpec(16, 16, 0.05), 8)


def test_serialize_parse_byte_exact():
    rng = Rng(11)
    code = random_code(rng, G=2, K=4, H=6, W=7)
    cm = codec.encode_map(code, GridSpec(56, 48, 0.05, (1.5, -2.0)), 8)
    blob = codec.serialize(cm)
    cm2 = codec.parse(blob)
    assert codec.serialize(cm2) == blob
    # origin is stored as f64, resolution as f32
    assert cm2.map_spec.origin == cm.map_spec.origin
    assert np.float32(cm2.map_spec.resolution) == np.float32(cm.map_spec.resolution)


def test_payload_bit_flips_never_silent():
    rng = Rng(13)
    code = random_code(rng, G=2, K=4, H=8, W=8)
    cm = codec.encode_map(code, GridSpec(64, 64, 0.05), 8)
    blob = bytearray(codec.serialize(cm))
    base = len(blob) - len(cm.payload)
    for bit in range(cm.payload_bits):
        mutated = bytearray(blob)
        mutated[base + (bit >> 3)] ^= 0x80 >> (bit & 7)
        try:
            out = codec.decode_map(codec.parse(bytes(mutated)))
        except codec.CodecError:
            continue
        assert not np.array_equal(out.bits, code.bits), f"silent flip at bit {bit}"


def test_truncated_payload_detected():
    rng = Rng(14)
    code = random_code(rng, G=1, K=4, H=10, W=10)
    cm = codec.encode_map(code, GridSpec(80, 80, 0.05), 8)
    blob = codec.serialize(cm)
    with pytest.raises(codec.TruncatedPayload):
        codec.parse(blob[:-3])


def test_bad_magic_detected():
    with pytest.raises(codec.CorruptHeader):
        codec.parse(b"XXXX" + bytes(64))


def test_bad_table_detected():
    rng = Rng(15)
    code = random_code(rng, G=1, K=4, H=4, W=4)
    cm = codec.encode_map(code, GridSpec(32, 32, 0.05), 8)
    blob = bytearray(codec.serialize(cm))
    # overwrite every table length with 1: Kraft sum > 1 for 5 symbols
    table_off = len(blob) - len(cm.payload) - 8 - cm.table.alphabet_size
    for i in range(cm.table.alphabet_size):
        blob[table_off + i] = 1
    with pytest.raises(codec.InvalidTable):
        codec.parse(bytes(blob))


# ---------------------------------------------------------------------------
# rate accounting


def test_entropy_bound_examples():
    assert abs(codec.entropy_bound([0.25] * 4, 1.0) - 2.0) < 1e-12
    assert codec.entropy_bound([1.0, 0.0, 0.0], 1.0) == 0.0
    assert abs(codec.entropy_bound([0.5, 0.5], 1.0) - 1.0) < 1e-12


def test_entropy_bound_validation():
    with pytest.raises(ValueError):
        codec.entropy_bound([0.7, 0.4], 1.0)
    with pytest.raises(ValueError):
        codec.entropy_bound([-0.1, 1.1], 1.0)


def test_bpp_arithmetic():
    z = codec.GroupedCode(np.zeros((4, 1, 1), np.uint8), 1, 4)
    cm = codec.encode_map(z, GridSpec(100, 100, 0.05), 8)
    cm.payload_bits = 100  # direct arithmetic check
    assert abs(codec.bpp(cm, 100 * 100) - 0.01) < 1e-12


def test_iid_symbols_meet_shannon_within_slack():
    # RLE cannot beat the i.i.d. entropy rate by more than small-sample noise
    rng = Rng(16)
    sym = rng.integers(0, 9, (1, 64, 64)).astype(np.uint8)
    code = codec.desymbolize(codec.SymbolMap(sym, 1, 8))
    cm = codec.encode_map(code, GridSpec(512, 512, 0.05), 8)
    hist = codec.symbol_histogram(code).astype(np.float64)
    p = hist / hist.sum()
    h = -(p[p > 0] * np.log2(p[p > 0])).sum()
    n = 64 * 64
    assert cm.payload_bits >= 0.85 * n * h


def test_raster_rate_oracle():
    # constant raster: one run -> a few dozen bits total
    m = MapRaster(np.full((64, 64), 0.5, np.float32), GridSpec(64, 64, 0.05))
    bits = codec.encode_raster_bits(m)
    assert bits < 64
    # two-level checkerboard: no runs, 1 bit/px + gamma overhead
    cb = np.indices((64, 64)).sum(axis=0) % 2
    m2 = MapRaster((cb * 255 / 255.0).astype(np.float32), GridSpec(64, 64, 0.05))
    bits2 = codec.encode_raster_bits(m2)
    assert bits2 >= 64 * 64  # at least one bit per pixel


def test_imap_roundtrip(tmp_path):
    rng = Rng(17)
    vals = np.round(rng.uniform((32, 40)) * 255) / 255
    m = MapRaster(vals.astype(np.float32), GridSpec(40, 32, 0.05, (2.0, 3.0)))
    path = tmp_path / "m.imap"
    codec.write_imap(path, m)
    m2 = codec.read_imap(path)
    assert np.array_equal(m2.values, m.values)
    assert m2.spec.origin == m.spec.origin
    assert (m2.spec.width, m2.spec.height) == (m.spec.width, m.spec.height)
    assert np.float32(m2.spec.resolution) == np.float32(m.spec.resolution)
    with pytest.raises(codec.CorruptHeader):
        codec.read_imap(__file__)


def test_bmc_file_roundtrip(tmp_path):
    rng = Rng(18)
    code = random_code(rng, G=2, K=8, H=6, W=6)
    cm = codec.encode_map(code, GridSpec(48, 48, 0.05), 8)
    path = tmp_path / "m.bmc"
    codec.write_bmc(path, cm)
    cm2 = codec.read_bmc(path)
    assert np.array_equal(codec.decode_map(cm2).bits, code.bits)


def test_symbolize_bijection():
    rng = Rng(19)
    for _ in range(20):
        code = random_code(rng)
        sm = codec.symbolize(code)
        back = codec.desymbolize(sm)
        assert np.array_equal(back.bits, code.bits)
