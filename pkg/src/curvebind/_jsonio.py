"""JSON output with every float written to 17 significant digits."""

from __future__ import annotations

import json
from json.encoder import INFINITY, _make_iterencode, encode_basestring, encode_basestring_ascii

import numpy as np


def _float17(x: float) -> str:
    if x != x:
        return "NaN"
    if x == INFINITY:
        return "Infinity"
    if x == -INFINITY:
        return "-Infinity"
    text = format(x, ".17g")
    # keep the value recognisably a float when it happens to be integral
    if "e" not in text and "." not in text and "n" not in text:
        text += ".0"
    return text


class Float17Encoder(json.JSONEncoder):
    def default(self, o):
        if isinstance(o, np.ndarray):
            return o.tolist()
        if isinstance(o, np.integer):
            return int(o)
        if isinstance(o, np.floating):
            return float(o)
        if isinstance(o, np.bool_):
            return bool(o)
        return super().default(o)

    def iterencode(self, o, _one_shot=False):
        markers = {} if self.check_circular else None
        encoder = encode_basestring_ascii if self.ensure_ascii else encode_basestring
        return _make_iterencode(markers, self.default, encoder, self.indent, _float17,
                                self.key_separator, self.item_separator, self.sort_keys,
                                self.skipkeys, _one_shot)(o, 0)


def dumps(obj, **kwargs) -> str:
    return json.dumps(obj, cls=Float17Encoder, **kwargs)
