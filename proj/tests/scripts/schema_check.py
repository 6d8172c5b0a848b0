#!/usr/bin/env python3
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

"""Validate payload JSON files against the notification schema.

usage: schema_check.py SCHEMA PAYLOAD...
Each payload file holds one JSON object or an array of them.
"""

import json
import sys

import jsonschema


def main(argv):
    with open(argv[1]) as f:
        schema = json.load(f)
    cls = jsonschema.validators.validator_for(schema)
    cls.check_schema(schema)
    validator = cls(schema, format_checker=jsonschema.FormatChecker())
    bad = 0
    total = 0
    for path in argv[2:]:
        with open(path) as f:
            doc = json.load(f)
        for i, payload in enumerate(doc if isinstance(doc, list) else [doc]):
            total += 1
            for err in validator.iter_errors(payload):
                bad += 1
                where = "/".join(str(p) for p in err.absolute_path)
                print(f"{path}[{i}] {where}: {err.message}")
    print(f"checked {total} invalid {bad}")
    return 1 if bad else 0


if __name__ == "__main__":
    sys.exit(main(sys.argv))
