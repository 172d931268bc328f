#!/usr/bin/env python3
# SPDX-License-Identifier: Apache-2.0
"""Writes the synthetic raw-document fixture used by the pipeline tests.

Documents mix Persian sentences with Arabic letter forms, harakat, tatweel,
Arabic-Indic digits, short noise lines and an introduction heading. A few
documents are English and should be rejected by the language gate.
"""
import argparse
import json
import random

WORDS = (
    "پژوهش داده متن زبان فارسی مدل خلاصه سازی مقاله نتایج روش ارزیابی دانشگاه "
    "تحلیل آموزش شبکه عصبی یادگیری ماشین پردازش طبیعی ساختار جمله واژه معنا "
    "بررسی مطالعه اطلاعات سامانه کاربرد توسعه کیفیت دقت بازیابی نمونه آزمون "
    "ایران تهران علوم انسانی اجتماعی اقتصاد فرهنگ تاریخ ادبیات شعر نویسنده"
).split()

ENGLISH = "the model reads long documents and writes short abstract summaries for each paper".split()

ARABIC_FORMS = {"ی": "ي", "ک": "ك"}


def persian_sentence(rng, n):
    words = [rng.choice(WORDS) for _ in range(n)]
    out = []
    for w in words:
        if rng.random() < 0.15:
            w = "".join(ARABIC_FORMS.get(c, c) for c in w)
        if rng.random() < 0.05:
            w = w[0] + "َ" + w[1:]
        if rng.random() < 0.03:
            w = w[0] + "ـ" + w[1:]
        out.append(w)
    if rng.random() < 0.2:
        out.append("".join(chr(0x0660 + int(d)) for d in str(rng.randint(10, 1999))))
    return "  ".join(out) if rng.random() < 0.1 else " ".join(out)


def document(rng, i):
    if i % 25 == 24:
        body = "\n".join(" ".join(rng.choice(ENGLISH) for _ in range(14)) for _ in range(6))
        return {"id": f"doc-{i:03d}", "title": "English paper", "body": body,
                "summary": " ".join(rng.choice(ENGLISH) for _ in range(12)), "category": "other"}
    lines = []
    if i % 3 == 0:
        lines.append(persian_sentence(rng, 12))
        lines.append("مقدمه")
    for _ in range(rng.randint(4, 9)):
        lines.append(persian_sentence(rng, rng.randint(11, 22)))
        if rng.random() < 0.3:
            lines.append(persian_sentence(rng, rng.randint(1, 5)))
        if rng.random() < 0.1:
            lines.append("")
    summary = persian_sentence(rng, rng.randint(8, 16))
    return {"id": f"doc-{i:03d}", "title": persian_sentence(rng, 4), "body": "\n".join(lines),
            "summary": summary, "category": rng.choice(["علوم", "ادبیات", None])}


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--output", required=True)
    ap.add_argument("--count", type=int, default=100)
    ap.add_argument("--seed", type=int, default=20240101)
    args = ap.parse_args()
    rng = random.Random(args.seed)
    with open(args.output, "w", encoding="utf-8") as f:
        for i in range(args.count):
            f.write(json.dumps(document(rng, i), ensure_ascii=False) + "\n")


if __name__ == "__main__":
    main()
