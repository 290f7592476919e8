import base64

import numpy as np


def encode_array(array) -> dict:
    """Converts a numpy array to a JSON-safe dict with a base64 payload"""

    array = np.ascontiguousarray(array)
    little_endian = array.astype(array.dtype.newbyteorder('<'), copy=False)
    return {
        'dtype': array.dtype.str.lstrip('<>|='),
        'shape': list(array.shape),
        'data': base64.b64encode(little_endian.tobytes()).decode(),
    }


def decode_array(document: dict) -> np.ndarray:
    """Converts the dict written by encode_array back to a numpy array"""

    dtype = np.dtype(document['dtype']).newbyteorder('<')
    shape = tuple(int(dim) for dim in document['shape'])
    raw = base64.b64decode(document['data'].encode(), validate=True)
    array = np.frombuffer(raw, dtype=dtype)
    if array.size != int(np.prod(shape, dtype=np.int64)):
        raise ValueError(f"payload holds {array.size} values, shape {shape} needs {int(np.prod(shape))}")
    return array.reshape(shape).astype(dtype.newbyteorder('='))
