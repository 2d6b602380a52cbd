import json
import warnings
from fractions import Fraction as F

import pytest
from hypothesis import given, settings, strategies as st

from vocsep.graph import VoiceGraph
from vocsep.score import AnnotationSet, ScoreError, make_note, make_score
from vocsep.score_io import (MusicXMLParseError, UnsupportedElementWarning, decode_voices,
                             encode_voices, parse_musicxml, parse_score_json, rewrite_unisons,
                             serialize_score_json, serialize_separation)

STEPS = {0: ("C", 0), 1: ("C", 1), 2: ("D", 0), 3: ("E", -1), 4: ("E", 0), 5: ("F", 0),
         6: ("F", 1), 7: ("G", 0), 8: ("A", -1), 9: ("A", 0), 10: ("B", -1), 11: ("B", 0)}


def xml_note(ps, dur, color=None, lyric=None, chord=False, rest=False, extra=""):
    attr = f' color="{color}"' if color else ""
    body = "<chord/>" if chord else ""
    if rest:
        body += "<rest/>"
    else:
        step, alter = STEPS[ps % 12]
        alt = f"<alter>{alter}</alter>" if alter else ""
        body += f"<pitch><step>{step}</step>{alt}<octave>{ps // 12 - 1}</octave></pitch>"
    body += f"<duration>{dur}</duration>{extra}"
    if lyric:
        body += f"<lyric number=\"1\"><text>{lyric}</text></lyric>"
    return f"<note{attr}>{body}</note>"


def xml_doc(measures, beats=4, beat_type=4, fifths=0):
    out = []
    for i, content in enumerate(measures):
        attrs = ""
        if i == 0:
            attrs = (f"<attributes><divisions>1</divisions><key><fifths>{fifths}</fifths></key>"
                     f"<time><beats>{beats}</beats><beat-type>{beat_type}</beat-type></time></attributes>")
        out.append(f'<measure number="{i + 1}">{attrs}{content}</measure>')
    return ("<?xml version=\"1.0\"?><score-partwise><part-list><score-part id=\"P1\">"
            "<part-name>x</part-name></score-part></part-list><part id=\"P1\">"
            + "".join(out) + "</part></score-partwise>").encode()


def pitch_links(score, ann):
    notes = score.by_id
    return {(notes[a].ps, notes[a].on, notes[b].ps, notes[b].on) for a, b in ann.links}


# ------------------------------------------------------------------ MusicXML

def test_monophonic_one_color_gives_one_voice():
    score, ann = parse_musicxml(xml_doc(["".join(xml_note(p, 1, "#FF0000") for p in (60, 62, 64))
                                         + xml_note(0, 1, rest=True)]))
    assert [n.ps for n in score.notes] == [60, 62, 64]
    assert [n.on for n in score.notes] == [0, 1, 2]
    assert len(ann.links) == 2
    assert len(VoiceGraph.from_annotation(ann, score.by_id).nodes()) == 3


def test_lyric_list_marks_a_convergence():
    # two colored voices, then a note whose lyric "1,2" merges both
    m1 = (xml_note(67, 2, "#FF0000", lyric="1") + "<backup><duration>2</duration></backup>"
          + xml_note(60, 2, "#0000FF", lyric="2", extra="<voice>2</voice>")
          + xml_note(64, 2, "#FF0000", lyric="1,2"))
    score, ann = parse_musicxml(xml_doc([m1]))
    assert pitch_links(score, ann) == {(67, 0, 64, 2), (60, 0, 64, 2)}
    top = next(n for n in score.notes if n.ps == 64)
    assert len(ann.salience[top.id]) == 2


def test_empty_part_gives_empty_score():
    score, ann = parse_musicxml(xml_doc([""]))
    assert score.notes == () and ann.links == frozenset()


def test_malformed_lyric_names_measure_and_note():
    with pytest.raises(MusicXMLParseError, match="measure 1"):
        parse_musicxml(xml_doc([xml_note(60, 1, "#FF0000", lyric="1,x")]))


def test_grace_note_warns_and_is_skipped():
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        score, _ = parse_musicxml(xml_doc([xml_note(60, 1, extra="") + xml_note(62, 0, extra="")
                                           .replace("<pitch>", "<grace/><pitch>")]))
    assert [n.ps for n in score.notes] == [60]
    assert any(issubclass(w.category, UnsupportedElementWarning) for w in caught)


def test_tied_notes_become_one():
    tie_start = '<tie type="start"/>'
    tie_stop = '<tie type="stop"/>'
    score, _ = parse_musicxml(xml_doc([xml_note(60, 2) + xml_note(62, 2, extra=tie_start),
                                       xml_note(62, 2, extra=tie_stop) + xml_note(64, 2)]))
    assert [(n.ps, n.on, n.off) for n in score.notes] == [(60, 0, 2), (62, 2, 6), (64, 6, 8)]


def test_link_by_part_links_consecutive_notes():
    score, ann = parse_musicxml(xml_doc([xml_note(60, 1) + xml_note(62, 1) + xml_note(64, 2)]),
                                link_by="part")
    assert len(ann.links) == 2


def test_not_xml_is_a_parse_error():
    with pytest.raises(MusicXMLParseError):
        parse_musicxml(b"<score-partwise>")


# ------------------------------------------------------------------ JSON

def doc(notes, links=(), salience=None):
    return json.dumps({"divisions": 1, "key": 0, "time": [[0, 4, 4]], "notes": notes,
                       "links": [list(p) for p in links], "salience": salience or {}})


def jnote(i, pitch, on, dur=1):
    return {"id": i, "pitch": pitch, "onset": [on, 1], "duration": [dur, 1], "measure": 0}


def test_json_negative_onset_names_path():
    with pytest.raises(ScoreError, match=r"\$\.notes\[0\]\.onset"):
        parse_score_json(doc([jnote(0, 60, -1)]))


def test_json_unknown_link_target():
    with pytest.raises(ScoreError, match="unknown note"):
        parse_score_json(doc([jnote(0, 60, 0)], links=[(0, 5)]))


def test_json_round_trip_of_musicxml_fixture():
    m1 = (xml_note(67, 2, "#FF0000", lyric="1") + "<backup><duration>2</duration></backup>"
          + xml_note(60, 2, "#0000FF", lyric="2", extra="<voice>2</voice>")
          + xml_note(64, 2, "#FF0000", lyric="1,2"))
    score, ann = parse_musicxml(xml_doc([m1]))
    again, ann2 = parse_score_json(serialize_score_json(score, ann))
    assert again == score.replace(title=again.title)
    assert ann2.links == ann.links
    assert dict(ann2.salience) == dict(ann.salience)


def test_toy_corpus_round_trips(toy):
    for s in toy:
        ann = s.gold.to_annotation()
        score, back = parse_score_json(serialize_score_json(s.score, ann))
        assert score == s.score and back.links == ann.links


# ------------------------------------------------------------- voice codec

def test_two_disjoint_voices_two_colors_no_lists():
    notes = [make_note(i, 72 if i % 2 else 60, i // 2, 1) for i in range(6)]
    score = make_score(notes)
    graph = VoiceGraph([(0, 2), (2, 4), (1, 3), (3, 5)])
    enc = encode_voices(graph, score.by_id)
    assert len({e["color"] for e in enc.values()}) == 2
    assert not any("converge" in e or "diverge" in e for e in enc.values())


def test_divergence_source_carries_two_ids():
    notes = [make_note(0, 64, 0, 1), make_note(1, 67, 1, 1), make_note(2, 60, 1, 1)]
    score = make_score(notes)
    graph = VoiceGraph([(0, 1), (0, 2)])
    enc = encode_voices(graph, score.by_id)
    assert len(enc[0]["diverge"]) == 2
    doc_ = json.loads(serialize_separation(score, graph))
    back, ann = parse_score_json(json.dumps(doc_))
    assert ann.links == graph.links()


def test_separation_rejects_foreign_links():
    score = make_score([make_note(0, 60, 0, 1)])
    with pytest.raises(ScoreError):
        serialize_separation(score, VoiceGraph([(0, 9)]))


@st.composite
def graphs(draw):
    n = draw(st.integers(1, 14))
    notes = [make_note(i, draw(st.integers(50, 80)), draw(st.integers(0, 8)), 1) for i in range(n)]
    pairs = [(a.id, b.id) for a in notes for b in notes if a.on < b.on]
    links = draw(st.lists(st.sampled_from(pairs), unique=True, max_size=12)) if pairs else []
    return {m.id: m for m in notes}, VoiceGraph(links)


@settings(max_examples=200, deadline=None)
@given(graphs())
def test_encode_decode_is_identity(data):
    notes, graph = data
    back = decode_voices(encode_voices(graph, notes), notes)
    assert back.links() == graph.links()
    for m in notes:
        assert back.lt(m) == graph.lt(m)
        assert back.rt(m) == graph.rt(m)


# ------------------------------------------------------------ unison rewrite

def test_two_voice_unison_becomes_convergence_then_divergence():
    notes = [make_note(0, 64, 0, 1), make_note(1, 57, 0, 1),   # approach
             make_note(2, 60, 1, 1), make_note(3, 60, 1, 1),   # unison
             make_note(4, 65, 2, 1), make_note(5, 55, 2, 1)]   # split
    score = make_score(notes)
    ann = AnnotationSet(frozenset({(0, 2), (2, 4), (1, 3), (3, 5)}))
    new_score, new_ann = rewrite_unisons(score, ann)
    g = VoiceGraph.from_annotation(new_ann, new_score.by_id)
    assert len(new_score.notes) == 5
    assert set(g.lt(2)) == {0, 1} and set(g.rt(2)) == {4, 5}


def test_three_voice_unison():
    notes = [make_note(i, 60 + 4 * i, 0, 1) for i in range(3)]
    notes += [make_note(3 + i, 62, 1, 1) for i in range(3)]
    notes += [make_note(6 + i, 59 + 5 * i, 2, 1) for i in range(3)]
    links = {(i, 3 + i) for i in range(3)} | {(3 + i, 6 + i) for i in range(3)}
    new_score, new_ann = rewrite_unisons(make_score(notes), AnnotationSet(frozenset(links)))
    g = VoiceGraph.from_annotation(new_ann, new_score.by_id)
    assert len(g.lt(3)) == 3 and len(g.rt(3)) == 3


def test_no_unison_is_a_no_op():
    score = make_score([make_note(0, 60, 0, 1), make_note(1, 62, 1, 1)])
    ann = AnnotationSet(frozenset({(0, 1)}))
    assert rewrite_unisons(score, ann) == (score, ann)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(58, 62), st.integers(0, 3)), min_size=1, max_size=12))
def test_unison_rewrite_keeps_sounding_events(events):
    notes = [make_note(i, p, on, 1) for i, (p, on) in enumerate(events)]
    score = make_score(notes)
    links = {(a.id, b.id) for a in notes for b in notes if b.on == a.on + 1 and (a.id + b.id) % 3 == 0}
    new_score, new_ann = rewrite_unisons(score, AnnotationSet(frozenset(links)))
    assert {(n.ps, n.on, n.off) for n in new_score.notes} == {(n.ps, n.on, n.off) for n in notes}
    new_ann.validate(new_score)
