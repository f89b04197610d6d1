import json
import math
import os
from pathlib import Path

import numpy as np


def load_json(path):
    with open(path, 'r', encoding='utf-8') as f:
        return json.load(f)


def jsonable(value):
    """Convert numpy scalars/arrays and non-finite floats into plain JSON values.

    +inf is written as the string "inf", NaN as null.
    """
    if isinstance(value, dict):
        return {str(k): jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [jsonable(v) for v in value]
    if isinstance(value, (set, frozenset)):
        return [jsonable(v) for v in sorted(value)]
    if isinstance(value, np.ndarray):
        return jsonable(value.tolist())
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if math.isnan(value):
            return None
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return value
    if isinstance(value, Path):
        return str(value)
    return value


def save_json(path, data):
    d = os.path.dirname(path)
    if d and not os.path.exists(d):
        os.makedirs(d, exist_ok=True)
    with open(path, 'w', encoding='utf-8', newline='\n') as f:
        json.dump(jsonable(data), f, indent=2, allow_nan=False)
        f.write('\n')


def save_text(path, text):
    d = os.path.dirname(path)
    if d and not os.path.exists(d):
        os.makedirs(d, exist_ok=True)
    with open(path, 'w', encoding='utf-8', newline='\n') as f:
        f.write(text)


def readonly(array, dtype=float):
    """Return a read-only float copy of ``array``"""
    out = np.array(array, dtype=dtype, copy=True)
    out.flags.writeable = False
    return out
