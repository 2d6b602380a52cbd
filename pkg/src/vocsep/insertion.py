"""Active-voice insertion for many-to-many assignments."""

from __future__ import annotations

from typing import Mapping, Sequence

from .core import ActiveVoiceSet, pair_crosses
from .envelope import insert_voice

Assignment = Mapping[int, Sequence[int | None]]


def insert_voices(assignment: Assignment, voices: ActiveVoiceSet) -> ActiveVoiceSet:
    """Link each note to its assigned voices and place the new voices in order.

    ``assignment`` maps note ids (in chord order) to the voices they continue;
    ``[None]`` marks the empty voice. New voices that start fresh, or whose
    links cross an unrelated voice, are placed last by the blocked-skip rule.
    """
    order = voices.order
    notes = voices.notes
    for nid, parents in assignment.items():
        for p in parents:
            if p is not None:
                voices.graph.add_link(p, nid)

    deferred = []
    for nid, parents in assignment.items():
        parents = [p for p in parents if p is not None]
        n = notes[nid]
        if not parents or pair_crosses(voices, parents, n):
            deferred.append((nid, parents))
            continue
        parents.sort(key=order.index)
        for v in parents:
            if n.ps < notes[v].ps:
                at = order.index(v)
                children = [j for j in range(at + 1, len(order))
                            if v in voices.graph.lt(order[j])]
                order.insert(max(children, default=at) + 1, nid)
                break
        else:
            order.insert(order.index(parents[0]), nid)

    for nid, parents in deferred:
        insert_voice(nid, voices, parents)
    return voices
