import io
import struct

import hypothesis.strategies as st
import numpy as np
import pytest
from hypothesis import given
from hypothesis.extra.numpy import array_shapes, arrays

from safe_mrf import dictionary as dct
from safe_mrf.estimator import NetworkConfig, init_network
from safe_mrf.phantom import PhantomSpec, generate_phantom
from safe_mrf.qmap import (QmapError, encode, read_meta, read_qmap, read_qmap_records,
                           roundtrip, sidecar_path, write_qmap)
from safe_mrf.spiral import design_spiral
from safe_mrf.store import (load_basis, load_dictionary, load_maps, load_net, save_basis,
                            save_dictionary, save_maps, save_net, save_trajectory, traj_from_meta)


def test_f32_3d_roundtrip_bitwise(tmp_path):
    a = np.random.default_rng(0).standard_normal((3, 4, 5)).astype(np.float32)
    write_qmap(tmp_path / "a.qmap", a)
    b = read_qmap(tmp_path / "a.qmap", expect="f32")
    assert b.dtype == np.float32 and b.shape == a.shape
    assert a.tobytes() == b.tobytes()


def test_header_layout_little_endian():
    a = np.array([[1.0, 2.0, 3.0]], dtype=np.float32)
    raw = encode(a)
    assert raw[:5] == b"QMAP1"
    version, code, ndim = struct.unpack_from("<HBB", raw, 5)
    assert (version, code, ndim) == (1, 0, 2)
    assert struct.unpack_from("<II", raw, 9) == (1, 3)
    assert raw[17:] == np.array([1, 2, 3], dtype="<f4").tobytes()
    big = a.astype(">f4")
    assert encode(big) == raw


def test_truncated_payload(tmp_path):
    raw = encode(np.zeros((4, 4), np.float32))
    (tmp_path / "t.qmap").write_bytes(raw[:-3])
    with pytest.raises(QmapError, match="truncated payload"):
        read_qmap(tmp_path / "t.qmap")
    with pytest.raises(QmapError, match="truncated header"):
        read_qmap(io.BytesIO(raw[:8]))


def test_wrong_magic(tmp_path):
    (tmp_path / "w.qmap").write_bytes(b"NOPE1" + bytes(20))
    with pytest.raises(QmapError, match="not a QMAP file"):
        read_qmap(tmp_path / "w.qmap")
    with pytest.raises(QmapError, match="not a QMAP file"):
        read_qmap(io.BytesIO(b""))


def test_unknown_dtype_and_version():
    raw = bytearray(encode(np.zeros(2, np.float32)))
    raw[7] = 9
    with pytest.raises(QmapError, match="unknown dtype code"):
        read_qmap(io.BytesIO(bytes(raw)))
    raw = bytearray(encode(np.zeros(2, np.float32)))
    raw[5] = 7
    with pytest.raises(QmapError, match="unsupported QMAP version"):
        read_qmap(io.BytesIO(bytes(raw)))


def test_dtype_mismatch(tmp_path):
    write_qmap(tmp_path / "c.qmap", np.ones(3, np.complex64))
    with pytest.raises(QmapError, match="f32"):
        read_qmap(tmp_path / "c.qmap", expect="f32")
    with pytest.raises(QmapError, match="cannot store"):
        encode(np.array(["x"]))


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError, match="missing.qmap"):
        read_qmap(tmp_path / "missing.qmap")


def test_multi_record_and_sidecar(tmp_path):
    recs = [np.arange(6, dtype=np.float32).reshape(2, 3), np.ones(4, np.complex64),
            np.array([[True, False]])]
    p = tmp_path / "m.qmap"
    write_qmap(p, recs, {"kind": "test", "n": 3})
    out = read_qmap_records(p)
    assert [r.dtype for r in out] == [np.float32, np.complex64, np.uint8]
    for a, b in zip(recs, out):
        np.testing.assert_array_equal(a.astype(b.dtype), b)
    assert read_meta(p) == {"kind": "test", "n": 3}
    assert sidecar_path(p).name == "m.json"
    assert not list(tmp_path.glob("*.tmp"))
    with pytest.raises(QmapError):
        write_qmap(io.BytesIO(), recs[0], {"kind": "x"})


def test_wider_types_are_narrowed():
    np.testing.assert_array_equal(roundtrip(np.array([1.5, 2.25])), np.float32([1.5, 2.25]))
    assert roundtrip(np.array([1 + 2j])).dtype == np.complex64


@given(st.sampled_from([np.float32, np.complex64, np.uint8]).flatmap(
    lambda t: arrays(t, array_shapes(min_dims=1, max_dims=4, max_side=5))))
def test_roundtrip_property(a):
    b = roundtrip(a)
    assert b.dtype == a.dtype and b.shape == a.shape
    assert a.tobytes() == b.tobytes()


def test_store_maps(tmp_path):
    pm, fm = generate_phantom(PhantomSpec(grid_n=16, voxel_mm=8.0), 1)
    save_maps(tmp_path, pm, fm)
    pm2, fm2 = load_maps(tmp_path)
    np.testing.assert_array_equal(pm2.mask, pm.mask)
    np.testing.assert_array_equal(pm2.t1_ms, pm.t1_ms.astype(np.float32))
    np.testing.assert_array_equal(fm2.b0_hz, fm.b0_hz.astype(np.float32))
    assert read_meta(tmp_path / "b0.qmap")["units"] == "Hz"
    assert (pm2.grid_n, pm2.voxel_mm) == (16, 8.0)


def test_store_dictionary_basis(tmp_path, small_dict):
    d, basis, cd = small_dict
    save_dictionary(tmp_path / "d.qmap", d)
    d2 = load_dictionary(tmp_path / "d.qmap")
    np.testing.assert_array_equal(d2.params, d.params)
    np.testing.assert_array_equal(d2.atoms, d.atoms.astype(np.complex64))
    save_basis(tmp_path / "b.qmap", basis, cd, "seq1")
    b2, cd2, meta = load_basis(tmp_path / "b.qmap")
    assert b2.basis_id == basis.basis_id == cd2.basis_id
    assert meta["K"] == 5 and meta["seq_name"] == "seq1"
    r = dct.match(cd.coeffs[17], cd2, "joint")
    assert r.index == 17
    with pytest.raises(QmapError, match="kind"):
        load_dictionary(tmp_path / "b.qmap")


def test_store_net_and_trajectory(tmp_path):
    net = init_network(NetworkConfig(levels=1, base_filters=2, in_channels=4), 3)
    save_net(tmp_path / "n.qmap", net)
    n2 = load_net(tmp_path / "n.qmap")
    assert n2.config == net.config and n2.seed == 3
    for k in net.params:
        np.testing.assert_array_equal(n2.params[k], net.params[k])
    t = design_spiral(5.38, 256.0, 32, 4.0)
    save_trajectory(tmp_path / "t.qmap", t)
    t2 = traj_from_meta(read_meta(tmp_path / "t.qmap"))
    np.testing.assert_array_equal(t2.kx, t.kx)
    np.testing.assert_array_equal(t2.t_ms, t.t_ms)
    np.testing.assert_array_equal(read_qmap(tmp_path / "t.qmap")[0], t.kx.astype(np.float32))
