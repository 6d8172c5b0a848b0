# Copyright (c) 2026 The opsforge Authors.
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

"""Standalone SLC1 reader, written from the format description only."""

import json
import struct
import sys
import zlib


def _bits(raw, pos, n):
    return [(raw[pos + i // 8] >> (i % 8)) & 1 for i in range(n)]


def decode_column(ctype, raw, n):
    nbytes = (n + 7) // 8
    valid = _bits(raw, 0, n)
    pos = nbytes
    if ctype == "i64":
        vals = list(struct.unpack_from("<%dq" % n, raw, pos))
    elif ctype == "f64":
        vals = list(struct.unpack_from("<%dd" % n, raw, pos))
    elif ctype == "bool":
        vals = [bool(b) for b in _bits(raw, pos, n)]
    elif ctype == "str":
        ends = struct.unpack_from("<%dI" % n, raw, pos)
        data = raw[pos + 4 * n:]
        vals, start = [], 0
        for e in ends:
            vals.append(data[start:e].decode("utf-8"))
            start = e
    else:
        raise ValueError("unknown column type " + ctype)
    return [v if ok else None for v, ok in zip(vals, valid)]


def read(path):
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != b"SLC1":
        raise ValueError("bad magic")
    (hlen,) = struct.unpack_from("<I", blob, 4)
    header = json.loads(blob[8:8 + hlen])
    data = blob[8 + hlen:]
    types = {c["name"]: c["type"] for c in header["schema"]}
    out = {}
    for c in header["columns"]:
        comp = data[c["offset"]:c["offset"] + c["comp_len"]]
        raw = zlib.decompress(comp, -15)
        if len(raw) != c["raw_len"]:
            raise ValueError("raw length mismatch in " + c["name"])
        out[c["name"]] = decode_column(types[c["name"]], raw, header["rows"])
    return [c["name"] for c in header["schema"]], out


if __name__ == "__main__":
    names, cols = read(sys.argv[1])
    rows = len(cols[names[0]]) if names else 0
    print(json.dumps({"columns": names, "rows": rows, "data": cols}))
