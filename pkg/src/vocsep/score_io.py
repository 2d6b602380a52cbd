"""Reading and writing scores with voice annotations.

Two formats are supported: a partwise MusicXML subset (voices given by note
colors, convergence/divergence given by lyric id lists) and an internal JSON
document that stores links explicitly.
"""

from __future__ import annotations

import io
import json
import warnings
import zipfile
from fractions import Fraction
from pathlib import Path
from typing import Any
from xml.etree import ElementTree as ET

from .graph import VoiceGraph
from .score import AnnotationSet, Note, Score, ScoreError

STEP_PC = {"C": 0, "D": 2, "E": 4, "F": 5, "G": 7, "A": 9, "B": 11}


class MusicXMLParseError(ScoreError):
    pass


class UnsupportedElementWarning(UserWarning):
    pass


# ---------------------------------------------------------------- JSON schema

def _frac(value: Any, path: str) -> Fraction:
    if (not isinstance(value, list) or len(value) != 2
            or not all(isinstance(v, int) and not isinstance(v, bool) for v in value)):
        raise ScoreError(f"{path}: expected [numerator, denominator]")
    if value[1] <= 0:
        raise ScoreError(f"{path}: denominator must be positive")
    return Fraction(value[0], value[1])


def _int(value: Any, path: str) -> int:
    if not isinstance(value, int) or isinstance(value, bool):
        raise ScoreError(f"{path}: expected an integer")
    return value


def quarter_length(beats: Fraction, den: int) -> Fraction:
    """Convert a beat count under a time signature denominator to quarter notes."""
    return beats * Fraction(4, den)


def parse_score_json(data: bytes | str) -> tuple[Score, AnnotationSet]:
    """Parse the internal JSON document. Errors name the offending JSON path."""
    try:
        doc = json.loads(data)
    except json.JSONDecodeError as exc:
        raise ScoreError(f"$: invalid JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise ScoreError("$: expected an object")
    for key in ("divisions", "key", "time", "notes", "links", "salience"):
        if key not in doc:
            raise ScoreError(f"$.{key}: missing")
    time = doc["time"]
    if not isinstance(time, list) or not time:
        raise ScoreError("$.time: expected a non-empty list")
    sigs = []
    for i, entry in enumerate(time):
        if not isinstance(entry, list) or len(entry) != 3:
            raise ScoreError(f"$.time[{i}]: expected [measure, numerator, denominator]")
        m, num, den = (_int(x, f"$.time[{i}]") for x in entry)
        if num <= 0 or den <= 0:
            raise ScoreError(f"$.time[{i}]: time signature must be positive")
        sigs.append((m, num, den))
    key = _int(doc["key"], "$.key")
    divisions = _int(doc["divisions"], "$.divisions")
    if not isinstance(doc["notes"], list):
        raise ScoreError("$.notes: expected a list")
    shell = Score((), tuple(sigs), key, divisions)
    notes = []
    for i, raw in enumerate(doc["notes"]):
        path = f"$.notes[{i}]"
        if not isinstance(raw, dict):
            raise ScoreError(f"{path}: expected an object")
        for field in ("id", "pitch", "onset", "duration", "measure"):
            if field not in raw:
                raise ScoreError(f"{path}.{field}: missing")
        nid = _int(raw["id"], f"{path}.id")
        ps = _int(raw["pitch"], f"{path}.pitch")
        on = _frac(raw["onset"], f"{path}.onset")
        dur = _frac(raw["duration"], f"{path}.duration")
        measure = _int(raw["measure"], f"{path}.measure")
        if on < 0:
            raise ScoreError(f"{path}.onset: must be non-negative")
        if dur <= 0:
            raise ScoreError(f"{path}.duration: must be positive")
        if not 0 <= ps <= 127:
            raise ScoreError(f"{path}.pitch: out of range")
        _, den = shell.time_signature_at(measure)
        notes.append(Note(nid, ps, on, on + dur, quarter_length(dur, den), measure))
    try:
        score = Score(tuple(notes), tuple(sigs), key, divisions, str(doc.get("title", "")))
    except ScoreError as exc:
        raise ScoreError(f"$.notes: {exc}") from exc

    if not isinstance(doc["links"], list):
        raise ScoreError("$.links: expected a list")
    links = set()
    for i, pair in enumerate(doc["links"]):
        if not isinstance(pair, list) or len(pair) != 2:
            raise ScoreError(f"$.links[{i}]: expected [from, to]")
        links.add((_int(pair[0], f"$.links[{i}]"), _int(pair[1], f"$.links[{i}]")))
    if not isinstance(doc["salience"], dict):
        raise ScoreError("$.salience: expected an object")
    salience = {}
    for k, ids in doc["salience"].items():
        try:
            key_id = int(k)
        except ValueError:
            raise ScoreError(f"$.salience.{k}: key must be a note id") from None
        if not isinstance(ids, list):
            raise ScoreError(f"$.salience.{k}: expected a list")
        salience[key_id] = tuple(_int(x, f"$.salience.{k}") for x in ids)
    ann = AnnotationSet(frozenset(links), salience)
    try:
        ann.validate(score)
    except ScoreError as exc:
        raise ScoreError(f"$.links: {exc}") from exc
    return score, ann


def _note_json(n: Note) -> dict:
    d = n.bd
    return {"id": n.id, "pitch": n.ps, "onset": [n.on.numerator, n.on.denominator],
            "duration": [d.numerator, d.denominator], "measure": n.measure}


def _document(score: Score, ann: AnnotationSet, extra: dict[int, dict] | None = None) -> dict:
    notes = []
    for n in sorted(score.notes, key=lambda n: n.id):
        entry = _note_json(n)
        if extra and n.id in extra:
            entry.update(extra[n.id])
        notes.append(entry)
    return {
        "title": score.title,
        "divisions": score.divisions,
        "key": score.key,
        "time": [list(t) for t in score.time_signatures],
        "notes": notes,
        "links": [list(p) for p in sorted(ann.links)],
        "salience": {str(k): list(v) for k, v in sorted(ann.salience.items()) if v},
    }


def _dump(doc: dict) -> bytes:
    return (json.dumps(doc, indent=1) + "\n").encode()


def serialize_score_json(score: Score, ann: AnnotationSet) -> bytes:
    return _dump(_document(score, ann))


# ------------------------------------------------------ color / id-list codec

def encode_voices(graph: VoiceGraph, notes: dict[int, Note]) -> dict[int, dict]:
    """Derive per-note color ids and convergence/divergence id lists from links.

    A note inherits the color of its most salient predecessor when it is that
    predecessor's most salient successor; otherwise it opens a new color. Every
    other link is carried by an id list: the convergence list sits on the note
    converged upon, the divergence list on the note that diverges.
    """
    order = sorted(notes.values(), key=lambda n: (n.on, -n.ps, n.id))
    color: dict[int, int] = {}
    next_color = 0
    for n in order:
        preds = graph.lt(n.id)
        if preds and graph.rt(preds[0])[0] == n.id and preds[0] in color:
            color[n.id] = color[preds[0]]
        else:
            color[n.id] = next_color
            next_color += 1
    tags: dict[int, int] = {}

    def tag(nid: int) -> int:
        if nid not in tags:
            tags[nid] = len(tags) + 1
        return tags[nid]

    out: dict[int, dict] = {n.id: {"color": color[n.id]} for n in order}
    for n in order:
        preds, succs = graph.lt(n.id), graph.rt(n.id)
        if len(preds) > 1:
            out[n.id]["converge"] = [tag(p) for p in preds]
        if len(succs) > 1:
            out[n.id]["diverge"] = [tag(s) for s in succs]
    for nid, t in tags.items():
        out[nid]["tag"] = t
    return out


def decode_voices(encoding: dict[int, dict], notes: dict[int, Note]) -> VoiceGraph:
    """Inverse of :func:`encode_voices`."""
    by_tag = {e["tag"]: nid for nid, e in encoding.items() if "tag" in e}
    graph = VoiceGraph()
    for nid in sorted(encoding, key=lambda i: (notes[i].on, -notes[i].ps, i)):
        e = encoding[nid]
        for t in e.get("converge", ()):
            graph.add_link(by_tag[t], nid)
    for nid in sorted(encoding, key=lambda i: (notes[i].on, -notes[i].ps, i)):
        for t in encoding[nid].get("diverge", ()):
            graph.add_link(nid, by_tag[t])
    chains: dict[int, list[int]] = {}
    for nid in sorted(encoding, key=lambda i: (notes[i].on, -notes[i].ps, i)):
        chains.setdefault(encoding[nid]["color"], []).append(nid)
    for ids in chains.values():
        for a, b in zip(ids, ids[1:]):
            graph.add_link(a, b)
    # restore salience order: list order first, color continuation in front
    ordered = VoiceGraph()
    for nid in sorted(encoding, key=lambda i: (notes[i].on, -notes[i].ps, i)):
        e = encoding[nid]
        preds = list(graph.lt(nid))
        if "converge" in e:
            preds = [by_tag[t] for t in e["converge"]]
        for p in preds:
            ordered.add_link(p, nid)
    for nid, e in encoding.items():
        if "diverge" in e:
            ordered._out[nid] = [by_tag[t] for t in e["diverge"]]
    return ordered


def serialize_separation(score: Score, graph: VoiceGraph,
                         link_scores: dict[tuple[int, int], float] | None = None) -> bytes:
    """Write a separation as internal JSON plus color and id-list encoding."""
    notes = score.by_id
    for a, b in graph.links():
        if a not in notes or b not in notes:
            raise ScoreError(f"link ({a}, {b}) references a note outside the score")
    doc = _document(score, graph.to_annotation(), encode_voices(graph, notes))
    if link_scores is not None:
        doc["link_scores"] = [[a, b, round(float(s), 6)] for (a, b), s in sorted(link_scores.items())]
    return _dump(doc)


# ------------------------------------------------------------------- MusicXML

def _pitch(el: ET.Element) -> int:
    step = el.findtext("step")
    octave = el.findtext("octave")
    if step not in STEP_PC or octave is None:
        raise MusicXMLParseError("malformed <pitch>")
    alter = el.findtext("alter")
    alter_val = int(round(float(alter))) if alter else 0
    return 12 * (int(octave) + 1) + STEP_PC[step] + alter_val


def _note_color(el: ET.Element) -> str | None:
    color = el.get("color")
    if color is None:
        head = el.find("notehead")
        if head is not None:
            color = head.get("color")
    if color is None:
        return None
    color = color.upper()
    if color in ("#000000", "#FF000000"):
        return None
    return color


def _first_lyric(el: ET.Element) -> str | None:
    lyrics = el.findall("lyric")
    if not lyrics:
        return None
    numbered = [ly for ly in lyrics if ly.get("number") in (None, "1")]
    chosen = numbered[0] if numbered else lyrics[0]
    text = chosen.findtext("text")
    return text.strip() if text else None


def _read_bytes(data: bytes) -> bytes:
    if data[:2] == b"PK":
        with zipfile.ZipFile(io.BytesIO(data)) as zf:
            try:
                container = ET.fromstring(zf.read("META-INF/container.xml"))
                rootfile = container.find(".//rootfile").get("full-path")
            except KeyError:
                rootfile = next(n for n in zf.namelist()
                                if n.endswith(".xml") and not n.startswith("META-INF"))
            return zf.read(rootfile)
    return data


def parse_musicxml(data: bytes, link_by: str = "color") -> tuple[Score, AnnotationSet]:
    """Parse a partwise MusicXML document (plain or compressed).

    ``link_by="color"`` reads voices from note colors and lyric id lists;
    ``link_by="part"`` links consecutive notes of each part and MusicXML voice,
    which suits fixed-voice sources such as chorales.
    """
    if link_by not in ("color", "part"):
        raise ValueError("link_by must be 'color' or 'part'")
    try:
        root = ET.fromstring(_read_bytes(data))
    except ET.ParseError as exc:
        raise MusicXMLParseError(f"not well-formed XML: {exc}") from exc
    if root.tag != "score-partwise":
        raise MusicXMLParseError(f"unsupported root element <{root.tag}>")
    title = root.findtext("work/work-title") or root.findtext("movement-title") or ""

    time_sigs: dict[int, tuple[int, int]] = {}
    key = None
    raw: list[dict] = []  # notes before id assignment
    measure_beats: dict[int, Fraction] = {}
    divisions_seen = 1

    for part_index, part in enumerate(root.findall("part")):
        divisions = 1
        num, den = 4, 4
        pending_ties: dict[tuple[int, str], dict] = {}
        for m_index, measure in enumerate(part.findall("measure")):
            if m_index in time_sigs:
                num, den = time_sigs[m_index]
            pos = Fraction(0)
            longest = Fraction(0)
            last_onset = Fraction(0)
            for el in measure:
                if el.tag == "attributes":
                    d = el.findtext("divisions")
                    if d:
                        divisions = int(d)
                        divisions_seen = max(divisions_seen, divisions)
                    t = el.find("time")
                    if t is not None and t.findtext("beats"):
                        try:
                            num, den = int(t.findtext("beats")), int(t.findtext("beat-type"))
                        except ValueError:
                            warnings.warn(f"measure {m_index + 1}: compound time signature "
                                          "not supported, keeping previous",
                                          UnsupportedElementWarning, stacklevel=2)
                        if part_index == 0:
                            time_sigs[m_index] = (num, den)
                    k = el.find("key")
                    if k is not None and key is None and k.findtext("fifths"):
                        key = int(k.findtext("fifths"))
                elif el.tag == "backup":
                    pos -= Fraction(int(el.findtext("duration")), divisions)
                elif el.tag == "forward":
                    pos += Fraction(int(el.findtext("duration")), divisions)
                    longest = max(longest, pos)
                elif el.tag == "note":
                    is_chord = el.find("chord") is not None
                    dur_text = el.findtext("duration")
                    if el.find("grace") is not None:
                        warnings.warn(f"measure {m_index + 1}: grace note skipped",
                                      UnsupportedElementWarning, stacklevel=2)
                        continue
                    dur = Fraction(int(dur_text), divisions) if dur_text else Fraction(0)
                    onset = last_onset if is_chord else pos
                    if not is_chord:
                        pos += dur
                        longest = max(longest, pos)
                        last_onset = onset
                    if el.find("rest") is not None:
                        continue
                    if el.find("unpitched") is not None or el.find("pitch") is None:
                        warnings.warn(f"measure {m_index + 1}: unpitched note skipped",
                                      UnsupportedElementWarning, stacklevel=2)
                        continue
                    try:
                        ps = _pitch(el.find("pitch"))
                    except MusicXMLParseError as exc:
                        raise MusicXMLParseError(f"measure {m_index + 1}: {exc}") from None
                    voice = el.findtext("voice") or "1"
                    ties = {t.get("type") for t in el.findall("tie")}
                    tie_key = (ps, f"{part_index}:{voice}")
                    held = pending_ties.get(tie_key)
                    if "stop" in ties and held is not None and held["end"] == (m_index, onset):
                        held["dur_q"] += dur
                        if "start" in ties:
                            held["end"] = (m_index, onset + dur)
                        else:
                            del pending_ties[tie_key]
                        continue
                    entry = {
                        "ps": ps, "measure": m_index, "pos_q": onset, "dur_q": dur,
                        "part": part_index, "voice": voice, "order": len(raw),
                        "color": _note_color(el), "lyric": _first_lyric(el),
                    }
                    if dur <= 0:
                        warnings.warn(f"measure {m_index + 1}: zero-length note skipped",
                                      UnsupportedElementWarning, stacklevel=2)
                        continue
                    raw.append(entry)
                    if "start" in ties:
                        entry["end"] = (m_index, onset + dur)
                        pending_ties[tie_key] = entry
                elif el.tag in ("print", "barline", "direction", "harmony", "sound",
                                "figured-bass", "bookmark", "link", "grouping"):
                    continue
                else:
                    warnings.warn(f"measure {m_index + 1}: <{el.tag}> ignored",
                                  UnsupportedElementWarning, stacklevel=2)
            if part_index == 0:
                nominal = Fraction(num * 4, den)
                measure_beats[m_index] = (longest if measure.get("implicit") == "yes"
                                          else nominal)
            # a tie carried across the barline continues at position 0 of the next measure
            for held in pending_ties.values():
                if held["end"][0] == m_index:
                    held["end"] = (m_index + 1, held["end"][1] - (longest if longest else 0))

    if not time_sigs:
        time_sigs[0] = (4, 4)
    if 0 not in time_sigs:
        time_sigs[0] = time_sigs[min(time_sigs)]
    sig_list = tuple((m, n, d) for m, (n, d) in sorted(time_sigs.items()))
    shell = Score((), sig_list, key or 0, divisions_seen, title)

    # measure starts in beats; a short pickup is right-aligned in a full bar
    starts: dict[int, Fraction] = {}
    acc = Fraction(0)
    for m in sorted(measure_beats):
        num, den = shell.time_signature_at(m)
        nominal_q = Fraction(num * 4, den)
        length_q = measure_beats[m]
        if m == 0 and length_q < nominal_q:
            starts[m] = (length_q - nominal_q) * Fraction(den, 4)
            acc = starts[m] + num
            continue
        starts[m] = acc
        acc += length_q * Fraction(den, 4)
    shift = -min(starts.values(), default=Fraction(0)) if starts and min(starts.values()) < 0 else 0

    prepared = []
    for e in raw:
        num, den = shell.time_signature_at(e["measure"])
        on = starts.get(e["measure"], Fraction(0)) + shift + e["pos_q"] * Fraction(den, 4)
        bd = e["dur_q"] * Fraction(den, 4)
        prepared.append((on, bd, e))
    prepared.sort(key=lambda t: (t[0], -t[2]["ps"], t[2]["part"], t[2]["order"]))
    notes = []
    for nid, (on, bd, e) in enumerate(prepared):
        e["id"] = nid
        notes.append(Note(nid, e["ps"], on, on + bd, e["dur_q"], e["measure"]))
    score = Score(tuple(notes), sig_list, key or 0, divisions_seen, title)
    entries = [e for _, _, e in prepared]
    if link_by == "part":
        ann = _links_by_part(entries, score)
    else:
        ann = _links_by_color(entries, score)
    return score, ann


def _links_by_part(entries: list[dict], score: Score) -> AnnotationSet:
    notes = score.by_id
    lines: dict[tuple[int, str], list[int]] = {}
    for e in entries:
        lines.setdefault((e["part"], e["voice"]), []).append(e["id"])
    links = set()
    for ids in lines.values():
        ids.sort(key=lambda i: (notes[i].on, -notes[i].ps, i))
        for a, b in zip(ids, ids[1:]):
            if notes[a].on < notes[b].on:
                links.add((a, b))
    return AnnotationSet(frozenset(links), {})


def _links_by_color(entries: list[dict], score: Score) -> AnnotationSet:
    notes = score.by_id
    color_ids: dict[str, int] = {}
    for e in sorted(entries, key=lambda e: e["order"]):
        if e["color"] is not None and e["color"] not in color_ids:
            color_ids[e["color"]] = len(color_ids)

    tagged: dict[int, list[int]] = {}
    lists: dict[int, list[int]] = {}
    for e in entries:
        text = e["lyric"]
        if not text:
            continue
        parts = [p.strip() for p in text.split(",")]
        try:
            values = [int(p) for p in parts]
        except ValueError:
            raise MusicXMLParseError(
                f"measure {e['measure'] + 1}, note {e['id']}: malformed lyric id list {text!r}"
            ) from None
        if len(values) == 1:
            tagged.setdefault(values[0], []).append(e["id"])
        else:
            lists[e["id"]] = values

    links: set[tuple[int, int]] = set()
    salience: dict[int, tuple[int, ...]] = {}
    converged_from: set[int] = set()
    diverged_to: set[int] = set()
    for nid, values in lists.items():
        me = notes[nid]
        before, after = [], []
        for v in values:
            cands = tagged.get(v, [])
            prev = [c for c in cands if notes[c].on < me.on]
            nxt = [c for c in cands if notes[c].on > me.on]
            before.append(max(prev, key=lambda c: notes[c].on) if prev else None)
            after.append(min(nxt, key=lambda c: notes[c].on) if nxt else None)
        if all(b is not None for b in before):
            for b in before:
                links.add((b, nid))
                converged_from.add(b)
            salience[nid] = tuple(before)
        elif all(a is not None for a in after):
            for a in after:
                links.add((nid, a))
                diverged_to.add(a)
            salience[nid] = tuple(after)
        else:
            raise MusicXMLParseError(
                f"measure {me.measure + 1}, note {nid}: lyric ids {values} do not resolve "
                "to earlier or later tagged notes"
            )

    chains: dict[int, list[int]] = {}
    for e in entries:
        if e["color"] is not None:
            chains.setdefault(color_ids[e["color"]], []).append(e["id"])
    for ids in chains.values():
        ids.sort(key=lambda i: (notes[i].on, -notes[i].ps, i))
        for a, b in zip(ids, ids[1:]):
            if notes[a].on == notes[b].on:
                continue
            if a in converged_from and (a, b) not in links:
                continue  # this voice merged elsewhere
            if b in diverged_to and (a, b) not in links:
                continue  # this note was reached by a divergence
            links.add((a, b))
    ann = AnnotationSet(frozenset(links), salience)
    ann.validate(score)
    return ann


def load_score(path: str | Path, link_by: str = "color") -> tuple[Score, AnnotationSet]:
    path = Path(path)
    data = path.read_bytes()
    if path.suffix.lower() == ".json":
        return parse_score_json(data)
    score, ann = parse_musicxml(data, link_by=link_by)
    if not score.title:
        score = score.replace(title=path.stem)
    return score, ann


# ------------------------------------------------------------- unison rewrite

def rewrite_unisons(score: Score, ann: AnnotationSet) -> tuple[Score, AnnotationSet]:
    """Merge notes sounding the same pitch over the same span into one note.

    The merged note keeps the lowest id and inherits every in- and out-link, so
    voices converge onto it and diverge after it. In- and out-lists keep the
    order of the merged notes' ids.
    """
    groups: dict[tuple[int, Fraction, Fraction], list[int]] = {}
    for n in score.notes:
        groups.setdefault((n.ps, n.on, n.off), []).append(n.id)
    rep = {}
    for ids in groups.values():
        keep = min(ids)
        for i in ids:
            rep[i] = keep
    if all(rep[i] == i for i in rep):
        return score, ann
    notes = score.by_id
    base = VoiceGraph.from_annotation(ann, notes)
    merged = VoiceGraph()
    for n in sorted(score.notes, key=lambda n: (n.on, -n.ps, n.id)):
        for p in base.lt(n.id):
            if rep[p] != rep[n.id]:
                merged.add_link(rep[p], rep[n.id])
    out_order: dict[int, list[int]] = {}
    for n in sorted(score.notes, key=lambda n: n.id):
        for s in base.rt(n.id):
            tgt = rep[s]
            lst = out_order.setdefault(rep[n.id], [])
            if tgt != rep[n.id] and tgt not in lst:
                lst.append(tgt)
    for k, lst in out_order.items():
        merged._out[k] = lst
    new_score = score.replace(notes=tuple(n for n in score.notes if rep[n.id] == n.id))
    return new_score, merged.to_annotation()
