"""缓冲区适配层

把 Python 对象（numpy 数组、标量、合规类实例、list、bytes/bytearray、str）
转换为按 typemap 排布的元素数组，以及把收到的元素写回目标对象。
字符串与连续容器在这一层处理：元素个数 = 容器长度。
"""
import enum
import functools
import logging
from dataclasses import dataclass
from typing import Any, Optional, Sequence

import numpy as np

from commkit.errors import ErrorClass, fail
from commkit.services.typemap import (
    FixedArray,
    Primitive,
    PrimitiveKind,
    Product,
    TypeDescriptor,
    Typemap,
    derive_typemap,
    descriptor_of,
    is_compliant_class,
    pack,
    unpack,
)

logger = logging.getLogger(__name__)


class Codec:
    """单个合规类型的元素编解码器"""

    def __init__(self, descriptor: TypeDescriptor, typemap: Optional[Typemap] = None):
        self.descriptor = descriptor
        self.typemap = typemap or derive_typemap(descriptor)
        # 顶层定长数组包一层单字段结构，保证数组始终是一维的
        self.wrapped = isinstance(descriptor, FixedArray)
        if self.wrapped:
            self.dtype = np.dtype({
                "names": ["f0"],
                "formats": [self.typemap.dtype],
                "offsets": [0],
                "itemsize": self.typemap.extent,
            })
        else:
            self.dtype = self.typemap.dtype

    @property
    def plain(self) -> bool:
        return isinstance(self.descriptor, Primitive) and self.descriptor.python_type is None

    def encode(self, values: Sequence[Any]) -> np.ndarray:
        arr = np.zeros(len(values), dtype=self.dtype)
        try:
            if self.plain:
                arr[:] = list(values)
            elif self.wrapped:
                for i, v in enumerate(values):
                    arr[i] = (_to_record(v, self.descriptor),)
            else:
                for i, v in enumerate(values):
                    arr[i] = _to_record(v, self.descriptor)
        except (OverflowError, ValueError, TypeError) as e:
            raise fail(ErrorClass.NON_COMPLIANT_TYPE, 6, f"value does not fit {self.dtype}: {e}")
        return arr

    def decode(self, arr: np.ndarray) -> list:
        if self.plain:
            return arr.tolist()
        if self.wrapped:
            return [_from_record(rec["f0"], self.descriptor) for rec in arr]
        return [_from_record(rec, self.descriptor) for rec in arr]

    def from_bytes(self, payload: bytes, count: int) -> np.ndarray:
        """线上格式 -> 元素数组（可写副本）"""
        raw = unpack(payload, self.typemap, count)
        return np.frombuffer(raw, dtype=self.dtype, count=count).copy()

    def to_bytes(self, arr: np.ndarray) -> bytes:
        return pack(np.ascontiguousarray(arr).tobytes(), self.typemap, len(arr))

    def count_of(self, nbytes: int) -> int:
        if nbytes % self.typemap.size:
            raise fail(ErrorClass.LENGTH_MISMATCH, 4,
                       f"{nbytes} bytes is not a multiple of element size {self.typemap.size}")
        return nbytes // self.typemap.size


def _to_record(value: Any, descriptor: TypeDescriptor) -> Any:
    if isinstance(descriptor, Primitive):
        return value.value if isinstance(value, enum.Enum) else value
    if isinstance(descriptor, FixedArray):
        if len(value) != descriptor.length:
            raise ValueError(f"expected {descriptor.length} elements, got {len(value)}")
        return [_to_record(v, descriptor.element) for v in value]
    names = descriptor.field_names()
    if isinstance(value, (tuple, list)):
        items = value
    else:
        items = [getattr(value, n) for n in names]
    if len(items) != len(descriptor.fields):
        raise ValueError(f"expected {len(descriptor.fields)} fields, got {len(items)}")
    return tuple(_to_record(v, d) for v, d in zip(items, descriptor.fields))


def _from_record(rec: Any, descriptor: TypeDescriptor) -> Any:
    if isinstance(descriptor, Primitive):
        value = rec.item() if isinstance(rec, (np.generic, np.ndarray)) else rec
        if descriptor.python_type is not None:
            return descriptor.python_type(value)
        return value
    if isinstance(descriptor, FixedArray):
        return [_from_record(rec[i], descriptor.element) for i in range(descriptor.length)]
    values = [_from_record(rec[n], d) for n, d in zip(descriptor.field_names(), descriptor.fields)]
    if descriptor.python_type is None:
        return tuple(values)
    obj = descriptor.python_type.__new__(descriptor.python_type)
    for n, v in zip(descriptor.field_names(), values):
        object.__setattr__(obj, n, v)
    return obj


def _assign(target: Any, rec: Any, descriptor: Product) -> None:
    """原地更新合规类实例的字段"""
    for n, d in zip(descriptor.field_names(), descriptor.fields):
        object.__setattr__(target, n, _from_record(rec[n], d))


@functools.lru_cache(maxsize=256)
def _cached_codec(datatype: Any) -> Codec:
    if is_compliant_class(datatype):
        return Codec(datatype.__descriptor__, datatype.__typemap__)
    return Codec(descriptor_of(datatype))


def codec_for(datatype: Any) -> Codec:
    """datatype 可以是描述、合规类、Python/numpy 标量类型或 dtype"""
    if isinstance(datatype, Codec):
        return datatype
    if isinstance(datatype, (type, np.dtype, PrimitiveKind)):
        return _cached_codec(datatype)
    return Codec(descriptor_of(datatype))


BYTE_CODEC = Codec(Primitive(PrimitiveKind.BYTE))


def _descriptor_of_value(value: Any) -> TypeDescriptor:
    if isinstance(value, tuple):
        if not value:
            raise fail(ErrorClass.NON_COMPLIANT_TYPE, 2, "empty tuples are not compliant")
        return Product(tuple(_descriptor_of_value(v) for v in value))
    if isinstance(value, np.generic):
        return descriptor_of(value.dtype)
    return descriptor_of(type(value))


def codec_for_value(value: Any) -> Codec:
    if isinstance(value, tuple):
        return Codec(_descriptor_of_value(value))
    if isinstance(value, np.generic):
        return codec_for(value.dtype)
    return codec_for(type(value))


@dataclass
class SendBuffer:
    """发送数据的快照：一维元素数组 + 还原形状所需的信息"""
    codec: Codec
    array: np.ndarray
    kind: str  # scalar | array | instance | list | bytes | str
    shape: tuple = ()
    source_dtype: Optional[np.dtype] = None

    @property
    def count(self) -> int:
        return len(self.array)

    @property
    def typemap(self) -> Typemap:
        return self.codec.typemap

    @property
    def payload(self) -> bytes:
        return self.codec.to_bytes(self.array)

    def rebuild(self, arr: np.ndarray) -> Any:
        """把结果元素数组还原成与源对象同类的值；arr 归调用方所有，不再复制"""
        if self.kind == "array":
            out = arr.astype(self.source_dtype) if self.source_dtype != arr.dtype else arr
            return out.reshape(self.shape) if out.size == int(np.prod(self.shape)) else out
        if self.kind == "bytes":
            return arr.tobytes()
        if self.kind == "str":
            return arr.tobytes().decode("utf-8")
        values = self.codec.decode(arr)
        if self.kind == "list":
            return values
        return values[0] if values else None


def as_send_buffer(obj: Any, datatype: Any = None) -> SendBuffer:
    codec = codec_for(datatype) if datatype is not None else None

    if isinstance(obj, np.ndarray):
        codec = codec or codec_for(obj.dtype)
        flat = _coerce(np.ascontiguousarray(obj).reshape(-1), codec)
        # 立即操作完成前用户可能改写源数组，发送的是调用时的快照
        if np.may_share_memory(flat, obj):
            flat = flat.copy()
        return SendBuffer(codec, flat, "array", obj.shape, obj.dtype)

    if isinstance(obj, np.generic):
        codec = codec or codec_for(obj.dtype)
        return SendBuffer(codec, _coerce(np.asarray(obj).reshape(-1), codec), "scalar")

    if isinstance(obj, (bytes, bytearray, memoryview)):
        data = np.frombuffer(bytes(obj), dtype=np.uint8).copy()
        return SendBuffer(codec or BYTE_CODEC, data, "bytes")

    if isinstance(obj, str):
        data = np.frombuffer(obj.encode("utf-8"), dtype=np.uint8).copy()
        return SendBuffer(codec or BYTE_CODEC, data, "str")

    if isinstance(obj, list):
        if codec is None:
            codec = codec_for_value(obj[0]) if obj else BYTE_CODEC
        return SendBuffer(codec, codec.encode(obj), "list")

    if is_compliant_class(obj) and not isinstance(obj, type):
        codec = codec or codec_for(type(obj))
        return SendBuffer(codec, codec.encode([obj]), "instance")

    if isinstance(obj, (bool, int, float, complex, enum.Enum, tuple)):
        codec = codec or codec_for_value(obj)
        return SendBuffer(codec, codec.encode([obj]), "scalar")

    raise fail(ErrorClass.NON_COMPLIANT_TYPE, 1, f"cannot send object of type {type(obj).__name__}")


def _coerce(flat: np.ndarray, codec: Codec) -> np.ndarray:
    if flat.dtype == codec.dtype:
        return flat
    try:
        return flat.astype(codec.dtype)
    except (TypeError, ValueError) as e:
        raise fail(ErrorClass.NON_COMPLIANT_TYPE, 6, f"cannot view {flat.dtype} as {codec.dtype}: {e}")


class RecvBuffer:
    """接收目标：固定容量（numpy 数组、合规实例）或可变长（list、bytearray）"""

    def __init__(self, target: Any, codec: Codec, capacity: Optional[int], kind: str):
        self.target = target
        self.codec = codec
        self.capacity = capacity
        self.kind = kind
        self._locked = False

    @property
    def typemap(self) -> Typemap:
        return self.codec.typemap

    @property
    def capacity_bytes(self) -> Optional[int]:
        return None if self.capacity is None else self.capacity * self.typemap.size

    def deliver(self, payload: bytes) -> int:
        count = self.codec.count_of(len(payload))
        self.deliver_array(self.codec.from_bytes(payload, count))
        return count

    def deliver_array(self, arr: np.ndarray) -> None:
        count = len(arr)
        if self.capacity is not None and count > self.capacity:
            raise fail(ErrorClass.TRUNCATION, 2, f"{count} elements exceed capacity {self.capacity}")
        self.release()
        if self.kind == "array":
            flat = self.target.reshape(-1)
            flat[:count] = arr if arr.dtype == flat.dtype else arr.astype(flat.dtype)
        elif self.kind == "instance":
            if count == 1:
                _assign(self.target, arr[0], self.codec.descriptor)
        elif self.kind == "bytearray":
            self.target[:] = arr.tobytes()
        else:
            self.target[:] = self.codec.decode(arr)

    def guard(self) -> None:
        """挂起期间把 numpy 目标设为只读，防止用户在完成前改写"""
        if self.kind == "array" and self.target.flags.writeable:
            self.target.flags.writeable = False
            self._locked = True

    def release(self) -> None:
        if self._locked:
            self.target.flags.writeable = True
            self._locked = False


def as_recv_buffer(obj: Any, datatype: Any = None) -> RecvBuffer:
    codec = codec_for(datatype) if datatype is not None else None

    if isinstance(obj, np.ndarray):
        if not obj.flags.c_contiguous or not obj.flags.writeable:
            raise fail(ErrorClass.INVALID_ARGUMENT, 3, "receive array must be writeable and C-contiguous")
        return RecvBuffer(obj, codec or codec_for(obj.dtype), obj.size, "array")

    if isinstance(obj, bytearray):
        return RecvBuffer(obj, codec or BYTE_CODEC, None, "bytearray")

    if isinstance(obj, list):
        if codec is None:
            if not obj:
                raise fail(ErrorClass.INVALID_ARGUMENT, 2, "datatype is required to receive into an empty list")
            codec = codec_for_value(obj[0])
        return RecvBuffer(obj, codec, None, "list")

    if is_compliant_class(obj) and not isinstance(obj, type):
        return RecvBuffer(obj, codec or codec_for(type(obj)), 1, "instance")

    if isinstance(obj, (bool, int, float, complex, str, bytes, tuple, enum.Enum, np.generic)):
        raise fail(ErrorClass.INVALID_ARGUMENT, 3,
                   f"cannot receive into immutable {type(obj).__name__}; use a numpy array or a container")

    raise fail(ErrorClass.NON_COMPLIANT_TYPE, 1, f"cannot receive into object of type {type(obj).__name__}")
