"""类型映射 (typemap) 推导服务

把结构化的类型描述 (TypeDescriptor) 展平为 (offset, kind) 表，
并在内存布局与连续的线上格式之间做 pack / unpack。

布局规则：C 风格自然对齐。每个字段放在下一个满足其对齐要求的偏移上，
复合类型对齐 = 字段对齐的最大值，extent = 尾部补齐到复合对齐后的大小。
"""
import enum
import logging
import typing
from dataclasses import dataclass, field, fields, is_dataclass
from functools import cached_property
from typing import Annotated, Any, Optional, Union

import numpy as np

from commkit import config
from commkit.errors import ErrorClass, fail

logger = logging.getLogger(__name__)


class PrimitiveKind(enum.Enum):
    # label, size, alignment, numpy dtype
    INT8 = ("int8", 1, 1, "i1")
    INT16 = ("int16", 2, 2, "i2")
    INT32 = ("int32", 4, 4, "i4")
    INT64 = ("int64", 8, 8, "i8")
    UINT8 = ("uint8", 1, 1, "u1")
    UINT16 = ("uint16", 2, 2, "u2")
    UINT32 = ("uint32", 4, 4, "u4")
    UINT64 = ("uint64", 8, 8, "u8")
    FLOAT32 = ("float32", 4, 4, "f4")
    FLOAT64 = ("float64", 8, 8, "f8")
    BOOL = ("bool", 1, 1, "?")
    BYTE = ("byte", 1, 1, "V1")
    COMPLEX_FLOAT32 = ("complex_float32", 8, 4, "c8")
    COMPLEX_FLOAT64 = ("complex_float64", 16, 8, "c16")

    def __init__(self, label: str, size: int, alignment: int, dtype_code: str):
        self.label = label
        self.size = size
        self.alignment = alignment
        self.dtype_code = dtype_code

    @property
    def dtype(self) -> np.dtype:
        # byte 在数组层面按 uint8 处理
        return np.dtype("u1") if self is PrimitiveKind.BYTE else np.dtype(self.dtype_code)

    @classmethod
    def from_label(cls, label: str) -> "PrimitiveKind":
        for kind in cls:
            if kind.label == label:
                return kind
        raise fail(ErrorClass.NON_COMPLIANT_TYPE, 3, f"unknown primitive kind '{label}'")

    def __str__(self) -> str:
        return self.label


# ---- 类型描述 ----

@dataclass(frozen=True)
class Primitive:
    kind: PrimitiveKind
    # 枚举等需要在解码时还原的 Python 类型，不参与比较
    python_type: Optional[type] = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class FixedArray:
    length: int
    element: "TypeDescriptor"


@dataclass(frozen=True)
class Product:
    fields: tuple["TypeDescriptor", ...]
    names: Optional[tuple[str, ...]] = field(default=None, compare=False)
    python_type: Optional[type] = field(default=None, compare=False, repr=False)

    def field_names(self) -> tuple[str, ...]:
        if self.names is not None:
            return self.names
        return tuple(f"f{i}" for i in range(len(self.fields)))


TypeDescriptor = Union[Primitive, FixedArray, Product]


def is_compliant(descriptor: Any) -> bool:
    """描述是否合规：叶子全部是 Primitive，复合类型满足各自约束"""
    if isinstance(descriptor, Primitive):
        return isinstance(descriptor.kind, PrimitiveKind)
    if isinstance(descriptor, FixedArray):
        return (
            isinstance(descriptor.length, int)
            and not isinstance(descriptor.length, bool)
            and descriptor.length >= 1
            and is_compliant(descriptor.element)
        )
    if isinstance(descriptor, Product):
        if not isinstance(descriptor.fields, tuple) or len(descriptor.fields) == 0:
            return False
        if descriptor.names is not None and len(descriptor.names) != len(descriptor.fields):
            return False
        return all(is_compliant(f) for f in descriptor.fields)
    return False


# ---- Typemap ----

def _align_up(offset: int, alignment: int) -> int:
    return (offset + alignment - 1) // alignment * alignment


@dataclass(frozen=True)
class Typemap:
    entries: tuple[tuple[int, PrimitiveKind], ...]
    size: int
    extent: int
    alignment: int
    descriptor: Optional[TypeDescriptor] = field(default=None, compare=False, repr=False)

    @cached_property
    def dtype(self) -> np.dtype:
        """与推导布局一致的 numpy dtype (itemsize == extent)"""
        if self.descriptor is None:
            raise fail(ErrorClass.INTERNAL, 2, "typemap has no descriptor")
        return _dtype_of(self.descriptor)

    @cached_property
    def byte_index(self) -> np.ndarray:
        """一个元素内所有 entry 字节的下标（按 entry 顺序）"""
        return np.concatenate([np.arange(off, off + kind.size) for off, kind in self.entries])

    @property
    def contiguous(self) -> bool:
        return self.size == self.extent

    def dump(self) -> str:
        lines = [f"{off}\t{kind.label}" for off, kind in self.entries]
        lines.append(f"size={self.size} extent={self.extent} align={self.alignment}")
        return "\n".join(lines) + "\n"


def _layout(descriptor: TypeDescriptor) -> tuple[list[tuple[int, PrimitiveKind]], int, int, int]:
    """返回 (entries, size, extent, alignment)"""
    if isinstance(descriptor, Primitive):
        kind = descriptor.kind
        return [(0, kind)], kind.size, kind.size, kind.alignment

    if isinstance(descriptor, FixedArray):
        sub_entries, sub_size, sub_extent, sub_align = _layout(descriptor.element)
        entries = [
            (i * sub_extent + off, kind)
            for i in range(descriptor.length)
            for off, kind in sub_entries
        ]
        return entries, descriptor.length * sub_size, descriptor.length * sub_extent, sub_align

    entries: list[tuple[int, PrimitiveKind]] = []
    offset = size = 0
    alignment = 1
    for sub in descriptor.fields:
        sub_entries, sub_size, sub_extent, sub_align = _layout(sub)
        offset = _align_up(offset, sub_align)
        entries.extend((offset + off, kind) for off, kind in sub_entries)
        offset += sub_extent
        size += sub_size
        alignment = max(alignment, sub_align)
    return entries, size, _align_up(offset, alignment), alignment


def _field_offsets(descriptor: Product) -> list[int]:
    offsets = []
    offset = 0
    for sub in descriptor.fields:
        _, _, sub_extent, sub_align = _layout(sub)
        offset = _align_up(offset, sub_align)
        offsets.append(offset)
        offset += sub_extent
    return offsets


def _dtype_of(descriptor: TypeDescriptor) -> np.dtype:
    if isinstance(descriptor, Primitive):
        return descriptor.kind.dtype
    if isinstance(descriptor, FixedArray):
        return np.dtype((_dtype_of(descriptor.element), (descriptor.length,)))
    _, _, extent, _ = _layout(descriptor)
    return np.dtype({
        "names": list(descriptor.field_names()),
        "formats": [_dtype_of(f) for f in descriptor.fields],
        "offsets": _field_offsets(descriptor),
        "itemsize": extent,
    })


def derive_typemap(descriptor: TypeDescriptor) -> Typemap:
    if not is_compliant(descriptor):
        raise fail(ErrorClass.NON_COMPLIANT_TYPE, 2, f"descriptor is not compliant: {descriptor!r}")
    entries, size, extent, alignment = _layout(descriptor)
    return Typemap(tuple(entries), size, extent, alignment, descriptor)


def pack(values: bytes | bytearray | memoryview, typemap: Typemap, count: int) -> bytes:
    """内存布局 -> 线上格式（去掉 padding）"""
    expected = count * typemap.extent
    if len(values) != expected:
        raise fail(ErrorClass.LENGTH_MISMATCH, 2, f"pack expects {expected} bytes, got {len(values)}")
    if count == 0:
        return b""
    if typemap.contiguous:
        return bytes(values)
    raw = np.frombuffer(values, dtype=np.uint8).reshape(count, typemap.extent)
    return raw[:, typemap.byte_index].tobytes()


def unpack(buffer: bytes | bytearray | memoryview, typemap: Typemap, count: int) -> bytes:
    """线上格式 -> 内存布局（padding 清零）"""
    expected = count * typemap.size
    if len(buffer) != expected:
        raise fail(ErrorClass.LENGTH_MISMATCH, 3, f"unpack expects {expected} bytes, got {len(buffer)}")
    if count == 0:
        return b""
    if typemap.contiguous:
        return bytes(buffer)
    out = np.zeros((count, typemap.extent), dtype=np.uint8)
    out[:, typemap.byte_index] = np.frombuffer(buffer, dtype=np.uint8).reshape(count, typemap.size)
    return out.tobytes()


# ---- 静态推导：注解 / dtype -> 描述 ----

@dataclass(frozen=True)
class _FixedShape:
    element: Any
    length: int


class Array:
    """定长数组注解: position: Array[np.float32, 3]"""

    def __class_getitem__(cls, params):
        element, length = params
        return Annotated[list, _FixedShape(element, length)]


_SCALAR_KINDS: dict[Any, PrimitiveKind] = {
    bool: PrimitiveKind.BOOL,
    int: PrimitiveKind.INT64,
    float: PrimitiveKind.FLOAT64,
    complex: PrimitiveKind.COMPLEX_FLOAT64,
    np.bool_: PrimitiveKind.BOOL,
    np.int8: PrimitiveKind.INT8,
    np.int16: PrimitiveKind.INT16,
    np.int32: PrimitiveKind.INT32,
    np.int64: PrimitiveKind.INT64,
    np.uint8: PrimitiveKind.UINT8,
    np.uint16: PrimitiveKind.UINT16,
    np.uint32: PrimitiveKind.UINT32,
    np.uint64: PrimitiveKind.UINT64,
    np.float32: PrimitiveKind.FLOAT32,
    np.float64: PrimitiveKind.FLOAT64,
    np.complex64: PrimitiveKind.COMPLEX_FLOAT32,
    np.complex128: PrimitiveKind.COMPLEX_FLOAT64,
}

_DTYPE_KINDS: dict[tuple[str, int], PrimitiveKind] = {
    (np.dtype(t).kind, np.dtype(t).itemsize): k
    for t, k in _SCALAR_KINDS.items()
    if t not in (bool, int, float, complex)
}


def enum_descriptor(enum_cls: type[enum.Enum], underlying: PrimitiveKind | None = None) -> Primitive:
    """枚举降为显式的底层整数类型（默认 int32）"""
    if underlying is None:
        underlying = getattr(enum_cls, "__underlying__", None) or PrimitiveKind.from_label(config.DEFAULT_ENUM_KIND)
    if underlying.dtype.kind not in "iu":
        raise fail(ErrorClass.NON_COMPLIANT_TYPE, 4, f"enum {enum_cls.__name__} must lower to an integer kind")
    return Primitive(underlying, python_type=enum_cls)


def descriptor_from_dtype(dtype: np.dtype) -> TypeDescriptor:
    dtype = np.dtype(dtype)
    if dtype.subdtype is not None:
        base, shape = dtype.subdtype
        descriptor = descriptor_from_dtype(base)
        for length in reversed(shape):
            descriptor = FixedArray(int(length), descriptor)
        return descriptor
    if dtype.names:
        ordered = sorted(dtype.names, key=lambda n: dtype.fields[n][1])
        return Product(
            tuple(descriptor_from_dtype(dtype.fields[n][0]) for n in ordered),
            names=tuple(ordered),
        )
    if not dtype.isnative:
        raise fail(ErrorClass.NON_COMPLIANT_TYPE, 5, f"non-native byte order: {dtype}")
    kind = _DTYPE_KINDS.get((dtype.kind, dtype.itemsize))
    if kind is None:
        raise fail(ErrorClass.NON_COMPLIANT_TYPE, 1, f"dtype {dtype} is not compliant")
    return Primitive(kind)


def _descriptor_from_annotation(annotation: Any) -> TypeDescriptor:
    if typing.get_origin(annotation) is Annotated:
        shape = next((m for m in annotation.__metadata__ if isinstance(m, _FixedShape)), None)
        if shape is None:
            return _descriptor_from_annotation(typing.get_args(annotation)[0])
        if not isinstance(shape.length, int) or shape.length < 1:
            raise fail(ErrorClass.NON_COMPLIANT_TYPE, 2, f"array length must be >= 1, got {shape.length}")
        return FixedArray(shape.length, _descriptor_from_annotation(shape.element))
    if typing.get_origin(annotation) is tuple:
        args = typing.get_args(annotation)
        if not args or Ellipsis in args:
            raise fail(ErrorClass.NON_COMPLIANT_TYPE, 1, f"tuple annotation must list its fields: {annotation}")
        return Product(tuple(_descriptor_from_annotation(a) for a in args))
    return descriptor_of(annotation)


def compliant(cls: type) -> type:
    """类装饰器：根据字段注解自动推导 typemap

        @compliant
        @dataclass
        class Particle:
            id: np.uint64
            position: Array[np.float32, 3]
    """
    hints = typing.get_type_hints(cls, include_extras=True)
    if is_dataclass(cls):
        names = [f.name for f in fields(cls)]
    else:
        names = [n for n in cls.__dict__.get("__annotations__", {}) if not n.startswith("_")]
    if not names:
        raise fail(ErrorClass.NON_COMPLIANT_TYPE, 2, f"{cls.__name__} has no fields")
    descriptor = Product(
        tuple(_descriptor_from_annotation(hints[n]) for n in names),
        names=tuple(names),
        python_type=cls,
    )
    cls.__descriptor__ = descriptor
    cls.__typemap__ = derive_typemap(descriptor)
    logger.debug(f"[TYPEMAP] Derived {cls.__name__}: size={cls.__typemap__.size} extent={cls.__typemap__.extent}")
    return cls


def is_compliant_class(obj: Any) -> bool:
    target = obj if isinstance(obj, type) else type(obj)
    return isinstance(target.__dict__.get("__descriptor__"), Product)


def descriptor_of(obj: Any) -> TypeDescriptor:
    """从合规类 / 实例、Python 或 numpy 标量类型、dtype、描述本身解析描述"""
    if isinstance(obj, (Primitive, FixedArray, Product)):
        return obj
    if isinstance(obj, PrimitiveKind):
        return Primitive(obj)
    if typing.get_origin(obj) in (Annotated, tuple):
        return _descriptor_from_annotation(obj)
    if is_compliant_class(obj):
        target = obj if isinstance(obj, type) else type(obj)
        return target.__descriptor__
    if isinstance(obj, type):
        if issubclass(obj, enum.Enum):
            return enum_descriptor(obj)
        if obj in _SCALAR_KINDS:
            return Primitive(_SCALAR_KINDS[obj])
        if issubclass(obj, np.generic):
            return descriptor_from_dtype(np.dtype(obj))
    if isinstance(obj, np.dtype):
        return descriptor_from_dtype(obj)
    raise fail(ErrorClass.NON_COMPLIANT_TYPE, 1, f"cannot derive a typemap for {obj!r}")


def typemap_of(obj: Any) -> Typemap:
    if is_compliant_class(obj):
        target = obj if isinstance(obj, type) else type(obj)
        return target.__typemap__
    return derive_typemap(descriptor_of(obj))
