"""Static HTML gallery of generated images with overlaid annotations and scores."""

from __future__ import annotations

import html
import json
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from .geometry import CLASS_NAMES
from .labels import read_label_file
from .manifest import read_jsonl

THUMB = 192


def _thumbnail(image_path, label_path, out_path):
    with Image.open(image_path) as im:
        im = im.convert("RGB")
        w, h = im.size
        draw = ImageDraw.Draw(im)
        for ann in read_label_file(label_path) if Path(label_path).exists() else []:
            box = ann.to_box(w, h)
            draw.rectangle(box.as_tuple(), outline=(255, 0, 0), width=max(1, w // 128))
            draw.text((box.x_min + 2, box.y_min + 2), CLASS_NAMES[ann.class_id], fill=(255, 0, 0))
        im.thumbnail((THUMB, THUMB))
        im.save(out_path, format="PNG")


def _fmt(v):
    return "-" if v is None else f"{v:.3f}"


def _card(row, thumb_rel):
    scores = row.get("scores") or {}
    cls = row.get("class_id")
    label = "background" if cls is None else CLASS_NAMES[cls]
    return (
        '<figure class="card">'
        f'<img src="{html.escape(thumb_rel)}" alt="{html.escape(row["stem"])}">'
        f'<figcaption><b>{html.escape(row["stem"])}</b> {html.escape(label)}<br>'
        f'BRISQUE {_fmt(scores.get("brisque"))} &middot; CLIP-IQA {_fmt(scores.get("clip_iqa"))} '
        f'&middot; TV {_fmt(scores.get("tv"))} &middot; attempts {row.get("attempts")}</figcaption></figure>'
    )


def _distribution_html(dist):
    cols = dist["columns"]
    head = "".join(f"<th>{html.escape(c)}</th>" for c in ["Split", "Size", *cols])
    body = []
    for split in ("train", "val", "test"):
        cells = [split.capitalize(), str(dist["sizes"][split])]
        cells += [f"{dist['percent'][split][c]:.0f}%" for c in cols]
        body.append("<tr>" + "".join(f"<td>{html.escape(x)}</td>" for x in cells) + "</tr>")
    return f"<table><thead><tr>{head}</tr></thead><tbody>{''.join(body)}</tbody></table>"


def build_gallery(workdir, out_dir, distribution=None, limit=None) -> Path:
    """Write ``out_dir/index.html`` plus thumbnails; returns the page path."""
    workdir, out_dir = Path(workdir), Path(out_dir)
    thumbs = out_dir / "thumbs"
    thumbs.mkdir(parents=True, exist_ok=True)
    rows = []
    for name in ("outpaint.jsonl", "backgrounds.jsonl"):
        if (workdir / name).exists():
            rows.extend(read_jsonl(workdir / name))
    accepted = [r for r in rows if r["status"] == "accepted"][:limit]
    rejected = [r for r in rows if r["status"] != "accepted"]
    cards = []
    for r in accepted:
        img = workdir / "generated" / "images" / f"{r['stem']}.png"
        lbl = workdir / "generated" / "labels" / f"{r['stem']}.txt"
        _thumbnail(img, lbl, thumbs / f"{r['stem']}.png")
        cards.append(_card(r, f"thumbs/{r['stem']}.png"))

    def stats(key):
        vals = [r["scores"][key] for r in accepted if r.get("scores") and r["scores"].get(key) is not None]
        return "-" if not vals else f"mean {np.mean(vals):.3f}, min {np.min(vals):.3f}, max {np.max(vals):.3f}"

    parts = [
        "<!doctype html><html><head><meta charset='utf-8'><title>Generated dataset gallery</title>",
        "<style>body{font-family:sans-serif;margin:1em}.grid{display:flex;flex-wrap:wrap;gap:8px}"
        ".card{margin:0;width:200px;font-size:11px}table{border-collapse:collapse}"
        "td,th{border:1px solid #999;padding:2px 6px;text-align:right}</style></head><body>",
        "<h1>Generated dataset gallery</h1>",
        f"<p>{len(accepted)} accepted, {len(rejected)} rejected.</p>",
        "<h2>Quality scores (accepted)</h2><ul>",
        f"<li>BRISQUE: {stats('brisque')}</li><li>CLIP-IQA: {stats('clip_iqa')}</li><li>TV: {stats('tv')}</li></ul>",
    ]
    if distribution is None and (workdir / "distribution.json").exists():
        distribution = json.loads((workdir / "distribution.json").read_text(encoding="utf-8"))
    if distribution is not None:
        parts += ["<h2>Class distribution by split</h2>", _distribution_html(distribution)]
    if rejected:
        items = "".join(f"<li>{html.escape(r['stem'])}: {html.escape(str(r['reason']))}</li>" for r in rejected)
        parts += ["<h2>Rejected</h2><ul>", items, "</ul>"]
    parts += ["<h2>Images</h2><div class='grid'>", *cards, "</div></body></html>"]
    page = out_dir / "index.html"
    page.write_text("\n".join(parts) + "\n", encoding="utf-8")
    return page
