#!/usr/bin/env python3
# SPDX-License-Identifier: Apache-2.0
"""Small stand-alone reference normalizer used to produce golden files.

Written independently of the C++ code path: character map, whitespace
collapse, heading-based front-matter cut, short-line filter, Persian-letter
ratio gate.
"""
import json
import re
import sys
import unicodedata

CHAR_MAP = {0x064A: "ی", 0x0649: "ی", 0x0643: "ک", 0x0629: "ه"}
CHAR_MAP.update({0x0660 + d: chr(0x06F0 + d) for d in range(10)})
STRIP = {0x0640} | set(range(0x064B, 0x0653))
MARKERS = ["مقدمه", "پیشگفتار"]
ARABIC_BLOCKS = [(0x0600, 0x06FF), (0x0750, 0x077F), (0x08A0, 0x08FF), (0xFB50, 0xFDFF), (0xFE70, 0xFEFF)]


def chars(text):
    return "".join(CHAR_MAP.get(ord(c), c) for c in text if ord(c) not in STRIP)


def lines(text):
    out = []
    for line in text.split("\n"):
        line = re.sub("[ \t\r\f\v\u00a0\u2000-\u200a\u202f\u205f\u3000]+", " ", line).strip(" ")
        if line:
            out.append(line)
    return "\n".join(out)


def heading(line):
    line = re.sub(r"^[0-9٠-٩۰-۹.\-():، ۔]+", "", line)
    return re.sub(r"[:. ۔]+$", "", line)


def front(body):
    rows = body.split("\n")
    for i, row in enumerate(rows):
        if heading(row) in MARKERS:
            return "\n".join(rows[i:])
    return body


def short(body, k=10):
    return "\n".join(r for r in body.split("\n") if len(r.split()) >= k)


def ratio(text):
    letters = [c for c in text if unicodedata.category(c).startswith("L")]
    if not letters:
        return 0.0
    return sum(any(lo <= ord(c) <= hi for lo, hi in ARABIC_BLOCKS) for c in letters) / len(letters)


def main():
    doc = json.load(open(sys.argv[1], encoding="utf-8"))
    body = short(front(lines(chars(doc["body"]))))
    assert body and ratio(body) >= 0.6
    out = {"id": doc["id"], "title": lines(chars(doc["title"])), "body": body,
           "summary": lines(chars(doc["summary"])), "category": doc.get("category")}
    sys.stdout.write(json.dumps(out, ensure_ascii=False, indent=2) + "\n")


if __name__ == "__main__":
    main()
