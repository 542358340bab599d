"""Read and write checkpoint files.

A checkpoint is the 4-byte magic b'DLGD', a varint format version, and a
sequence of varint-delimited records.  The first record is a UTF-8 JSON
header (run config, config hash, diffusion model, training step); every
later record is one named float64 array:

    varint name length, name (UTF-8), varint ndim, one varint per dimension,
    then the array data as little-endian doubles.

Parameter arrays use their parameter names; optimizer moments are stored
as 'adam.m/<name>' and 'adam.v/<name>'.

"""

from collections import OrderedDict
import io
import json
import logging
import os
from pathlib import Path

import numpy as np

MAGIC = b'DLGD'
VERSION = 1
MAX_VARINT_BYTES = 9

logger = logging.getLogger('checkpoint')


class CheckpointError(ValueError):
    "A checkpoint is malformed, truncated, or belongs to a different config."


class RecordReader:
    def __init__(self, stream):
        self.stream = stream

    def delimited_records(self):
        """Iterate over the remaining delimited records (bytes)."""
        return self.DelimitedStreamIterator(self)

    class DelimitedStreamIterator:
        def __init__(self, reader):
            self.reader = reader
            self.exhausted = False

        def __iter__(self):
            return self

        def __next__(self):
            if self.exhausted:
                raise StopIteration
            record = self.reader.read_delimited_record()
            if record is None:
                self.exhausted = True
                raise StopIteration
            return record

    def read_varint(self):
        """Read a base-128 varint, least significant group first.

        If the stream is initially at EOF, returns None.  Raises
        CheckpointError if EOF arrives mid-varint or the varint runs past
        MAX_VARINT_BYTES bytes.

        """
        groups = []
        while True:
            buffer = self.stream.read(1)
            if not buffer:
                if not groups:
                    return None
                raise CheckpointError('unterminated varint')
            b = buffer[0]
            groups.append(b & 0x7f)
            if (b & 0x80) == 0:
                break
            if len(groups) >= MAX_VARINT_BYTES:
                raise CheckpointError('too many bytes for varint: %r' % groups)
        value = 0
        for group in reversed(groups):
            value = (value << 7) + group
        return value

    def read_record(self, size):
        """Read the next 'size' bytes.  Returns None at EOF; raises
        CheckpointError if the stream ends part way.

        """
        data = self.stream.read(size)
        if not data and size:
            return None
        if len(data) < size:
            raise CheckpointError('EOF while reading record data')
        return data

    def read_delimited_record(self):
        """Read a record preceded by its size as a varint; None at EOF."""
        size = self.read_varint()
        if size is None:
            return None
        record = self.read_record(size)
        if record is None:
            raise CheckpointError('EOF while reading record data')
        return record


class RecordWriter:
    def __init__(self, stream):
        self.stream = stream

    def write_varint(self, i):
        if i < 0:
            raise CheckpointError('varint cannot be negative')
        buffer = bytearray()
        while True:
            heptet = i & 0x7f
            i >>= 7
            buffer.append(heptet | 0x80 if i else heptet)
            if i == 0:
                break
        self.stream.write(buffer)

    def write_delimited_record(self, data):
        self.write_varint(len(data))
        self.stream.write(data)


def _varint_bytes(i):
    buffer = io.BytesIO()
    RecordWriter(buffer).write_varint(i)
    return buffer.getvalue()


def encode_array(name, array):
    array = np.asarray(array, dtype='<f8')
    encoded_name = name.encode('utf-8')
    parts = [_varint_bytes(len(encoded_name)), encoded_name, _varint_bytes(array.ndim)]
    parts.extend(_varint_bytes(dim) for dim in array.shape)
    parts.append(np.ascontiguousarray(array).tobytes())
    return b''.join(parts)


def decode_array(record):
    """Inverse of encode_array; returns (name, array)."""
    reader = RecordReader(io.BytesIO(record))
    name_length = reader.read_varint()
    name = reader.read_record(name_length)
    ndim = reader.read_varint()
    if name is None or ndim is None:
        raise CheckpointError('truncated array record')
    shape = []
    for _ in range(ndim):
        dim = reader.read_varint()
        if dim is None:
            raise CheckpointError('truncated array shape')
        shape.append(dim)
    count = int(np.prod(shape, dtype=np.int64))
    data = reader.stream.read()
    if len(data) != 8 * count:
        raise CheckpointError('array %s: expected %d bytes of data, got %d'
                              % (name, 8 * count, len(data)))
    array = np.frombuffer(data, dtype='<f8').reshape(shape).astype(np.float64)
    return name.decode('utf-8'), array


def write_checkpoint(stream, header, arrays):
    """Write the magic, version, JSON header and the named arrays."""
    stream.write(MAGIC)
    writer = RecordWriter(stream)
    writer.write_varint(VERSION)
    writer.write_delimited_record(json.dumps(header, sort_keys=True).encode('utf-8'))
    for name, array in arrays.items():
        writer.write_delimited_record(encode_array(name, array))


def read_checkpoint(stream):
    """Returns (header, arrays) with arrays an OrderedDict in file order."""
    if stream.read(len(MAGIC)) != MAGIC:
        raise CheckpointError('not a checkpoint (bad magic)')
    reader = RecordReader(stream)
    version = reader.read_varint()
    if version != VERSION:
        raise CheckpointError('unsupported checkpoint version %s' % version)
    header_record = reader.read_delimited_record()
    if header_record is None:
        raise CheckpointError('checkpoint has no header')
    try:
        header = json.loads(header_record.decode('utf-8'))
    except ValueError as ex:
        raise CheckpointError('unreadable checkpoint header: %s' % ex) from ex
    arrays = OrderedDict()
    for record in reader.delimited_records():
        name, array = decode_array(record)
        if name in arrays:
            raise CheckpointError('duplicate array %s' % name)
        arrays[name] = array
    return header, arrays


def save_checkpoint(path, header, arrays):
    """Write a checkpoint file; a partial write never replaces an existing one."""
    path = Path(path)
    scratch = path.with_name(path.name + '.partial')
    with open(scratch, 'wb') as stream:
        write_checkpoint(stream, header, arrays)
    os.replace(scratch, path)
    logger.info('wrote checkpoint %s (%d arrays, step %s)', path, len(arrays), header.get('step'))


def load_checkpoint(path, expected_hash=None):
    """Read a checkpoint file.  If expected_hash is given, the header's
    config_hash must match it.

    """
    with open(path, 'rb') as stream:
        header, arrays = read_checkpoint(stream)
    if expected_hash is not None and header.get('config_hash') != expected_hash:
        raise CheckpointError('checkpoint %s was written for config %s, not %s'
                              % (path, header.get('config_hash'), expected_hash))
    return header, arrays


def split_arrays(arrays):
    """Separate parameter arrays from optimizer moment arrays."""
    params = OrderedDict((k, v) for k, v in arrays.items() if not k.startswith('adam.'))
    moments = OrderedDict((k, v) for k, v in arrays.items() if k.startswith('adam.'))
    return params, moments
