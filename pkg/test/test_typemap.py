"""typemap 推导与 pack/unpack 测试"""
import ctypes
import enum
from dataclasses import dataclass

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from commkit.errors import ErrorClass, LengthMismatch, NonCompliantType
from commkit.services.typemap import (
    Array,
    FixedArray,
    Primitive,
    PrimitiveKind,
    Product,
    compliant,
    derive_typemap,
    descriptor_from_dtype,
    descriptor_of,
    enum_descriptor,
    is_compliant,
    pack,
    typemap_of,
    unpack,
)


@compliant
@dataclass
class Particle:
    id: np.uint64
    position: Array[np.float32, 3]


class Color(enum.Enum):
    RED = 1
    GREEN = 2


class Small(enum.Enum):
    __underlying__ = PrimitiveKind.UINT8
    A = 1


# ---- ctypes 布局参照 ----

_CTYPES = {
    PrimitiveKind.INT8: ctypes.c_int8,
    PrimitiveKind.INT16: ctypes.c_int16,
    PrimitiveKind.INT32: ctypes.c_int32,
    PrimitiveKind.INT64: ctypes.c_int64,
    PrimitiveKind.UINT8: ctypes.c_uint8,
    PrimitiveKind.UINT16: ctypes.c_uint16,
    PrimitiveKind.UINT32: ctypes.c_uint32,
    PrimitiveKind.UINT64: ctypes.c_uint64,
    PrimitiveKind.FLOAT32: ctypes.c_float,
    PrimitiveKind.FLOAT64: ctypes.c_double,
    PrimitiveKind.BOOL: ctypes.c_bool,
    PrimitiveKind.BYTE: ctypes.c_ubyte,
}


class _ComplexFloat(ctypes.Structure):
    _fields_ = [("re", ctypes.c_float), ("im", ctypes.c_float)]


class _ComplexDouble(ctypes.Structure):
    _fields_ = [("re", ctypes.c_double), ("im", ctypes.c_double)]


_CTYPES[PrimitiveKind.COMPLEX_FLOAT32] = _ComplexFloat
_CTYPES[PrimitiveKind.COMPLEX_FLOAT64] = _ComplexDouble


def _ctype(descriptor):
    if isinstance(descriptor, Primitive):
        return _CTYPES[descriptor.kind]
    if isinstance(descriptor, FixedArray):
        return _ctype(descriptor.element) * descriptor.length
    fields = [(f"f{i}", _ctype(f)) for i, f in enumerate(descriptor.fields)]
    return type("Oracle", (ctypes.Structure,), {"_fields_": fields})


def _leaf_offsets(descriptor, ctype, base=0):
    if isinstance(descriptor, Primitive):
        return [base]
    if isinstance(descriptor, FixedArray):
        step = ctypes.sizeof(ctype._type_)
        return [
            off
            for i in range(descriptor.length)
            for off in _leaf_offsets(descriptor.element, ctype._type_, base + i * step)
        ]
    out = []
    for sub, (name, sub_ctype) in zip(descriptor.fields, ctype._fields_):
        out.extend(_leaf_offsets(sub, sub_ctype, base + getattr(ctype, name).offset))
    return out


primitives = st.sampled_from(list(PrimitiveKind)).map(Primitive)
descriptors = st.recursive(
    primitives,
    lambda children: st.one_of(
        st.builds(FixedArray, st.integers(min_value=1, max_value=4), children),
        st.lists(children, min_size=1, max_size=4).map(lambda fs: Product(tuple(fs))),
    ),
    max_leaves=12,
)


# ---- 固定样例 ----

def test_listing_type_layout():
    tm = Particle.__typemap__
    assert tm.entries == (
        (0, PrimitiveKind.UINT64),
        (8, PrimitiveKind.FLOAT32),
        (12, PrimitiveKind.FLOAT32),
        (16, PrimitiveKind.FLOAT32),
    )
    assert (tm.size, tm.extent, tm.alignment) == (20, 24, 8)


def test_listing_type_matches_ctypes():
    class Oracle(ctypes.Structure):
        _fields_ = [("id", ctypes.c_uint64), ("position", ctypes.c_float * 3)]

    tm = typemap_of(Particle)
    assert [off for off, _ in tm.entries] == [0, 8, 12, 16]
    assert Oracle.position.offset == 8
    assert tm.extent == ctypes.sizeof(Oracle)
    assert tm.alignment == ctypes.alignment(Oracle)


def test_listing_type_pack_is_id_then_position():
    raw = np.zeros(1, dtype=Particle.__typemap__.dtype)
    raw[0] = (42, [1.0, 2.0, 3.0])
    wire = pack(raw.tobytes(), Particle.__typemap__, 1)
    expected = np.uint64(42).tobytes() + np.array([1.0, 2.0, 3.0], dtype=np.float32).tobytes()
    assert wire == expected
    assert len(wire) == 20


def test_scalar_and_padded_pair():
    assert derive_typemap(Primitive(PrimitiveKind.INT32)).entries == ((0, PrimitiveKind.INT32),)
    tm = derive_typemap(Product((Primitive(PrimitiveKind.INT8), Primitive(PrimitiveKind.INT32))))
    assert tm.entries == ((0, PrimitiveKind.INT8), (4, PrimitiveKind.INT32))
    assert (tm.size, tm.extent, tm.alignment) == (5, 8, 4)


def test_complex_kinds_align_to_component():
    assert (PrimitiveKind.COMPLEX_FLOAT32.size, PrimitiveKind.COMPLEX_FLOAT32.alignment) == (8, 4)
    assert (PrimitiveKind.COMPLEX_FLOAT64.size, PrimitiveKind.COMPLEX_FLOAT64.alignment) == (16, 8)


def test_unpack_zeroes_padding():
    tm = derive_typemap(Product((Primitive(PrimitiveKind.INT8), Primitive(PrimitiveKind.INT32))))
    wire = bytes([7]) + np.int32(-1).tobytes()
    raw = unpack(wire, tm, 1)
    assert raw == bytes([7, 0, 0, 0]) + np.int32(-1).tobytes()


def test_dump_format():
    assert derive_typemap(Primitive(PrimitiveKind.INT32)).dump() == "0\tint32\nsize=4 extent=4 align=4\n"


def test_non_compliant_descriptors():
    assert not is_compliant(Product(()))
    assert not is_compliant(FixedArray(0, Primitive(PrimitiveKind.INT8)))
    assert not is_compliant("int32")
    with pytest.raises(NonCompliantType):
        derive_typemap(Product(()))


def test_pack_length_mismatch():
    tm = derive_typemap(Primitive(PrimitiveKind.INT32))
    with pytest.raises(LengthMismatch) as e:
        pack(b"\x00" * 7, tm, 2)
    assert e.value.code.cls is ErrorClass.LENGTH_MISMATCH
    with pytest.raises(LengthMismatch):
        unpack(b"\x00" * 3, tm, 1)


def test_enum_lowering():
    assert enum_descriptor(Color).kind is PrimitiveKind.INT32
    assert descriptor_of(Small).kind is PrimitiveKind.UINT8
    assert enum_descriptor(Color, PrimitiveKind.INT16).kind is PrimitiveKind.INT16
    with pytest.raises(NonCompliantType):
        enum_descriptor(Color, PrimitiveKind.FLOAT32)


def test_tuple_annotation_and_dtype_source():
    assert descriptor_of(tuple[np.int8, np.float64]) == Product(
        (Primitive(PrimitiveKind.INT8), Primitive(PrimitiveKind.FLOAT64))
    )
    dt = np.dtype([("a", "i1"), ("b", "f8")], align=True)
    tm = derive_typemap(descriptor_from_dtype(dt))
    assert tm.extent == dt.itemsize
    assert [off for off, _ in tm.entries] == [0, 8]


def test_class_without_fields_is_rejected():
    with pytest.raises(NonCompliantType):
        @compliant
        @dataclass
        class Empty:
            pass


# ---- 性质测试 ----

@settings(max_examples=1000, deadline=None)
@given(descriptors)
def test_derivation_invariants(descriptor):
    tm = derive_typemap(descriptor)
    offsets = [off for off, _ in tm.entries]
    assert offsets == sorted(set(offsets))
    for (off, kind), (nxt, _) in zip(tm.entries, tm.entries[1:]):
        assert off + kind.size <= nxt
    assert tm.size == sum(kind.size for _, kind in tm.entries)
    assert tm.size <= tm.extent
    assert tm.extent % tm.alignment == 0
    assert tm.alignment == max(kind.alignment for _, kind in tm.entries)
    last_off, last_kind = tm.entries[-1]
    assert last_off + last_kind.size <= tm.extent
    assert tm.dtype.itemsize == tm.extent


@settings(max_examples=300, deadline=None)
@given(descriptors)
def test_layout_matches_ctypes(descriptor):
    tm = derive_typemap(descriptor)
    oracle = _ctype(descriptor)
    assert [off for off, _ in tm.entries] == _leaf_offsets(descriptor, oracle)
    assert tm.extent == ctypes.sizeof(oracle)


@settings(max_examples=200, deadline=None)
@given(descriptors, st.integers(min_value=0, max_value=64), st.integers(min_value=0, max_value=2**32 - 1))
def test_wire_bytes_survive_unpack_then_pack(descriptor, count, seed):
    tm = derive_typemap(descriptor)
    wire = np.random.default_rng(seed).integers(0, 256, size=count * tm.size, dtype=np.uint8).tobytes()
    raw = unpack(wire, tm, count)
    assert len(raw) == count * tm.extent
    assert pack(raw, tm, count) == wire
