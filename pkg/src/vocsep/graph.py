"""Directed note-link graph carrying voices, convergence and divergence."""

from __future__ import annotations

from collections import deque
from typing import Iterable, Mapping

from .score import AnnotationSet, Note, ScoreError


class VoiceGraph:
    """Links between notes, with salience-ordered in/out lists.

    ``lt(m)`` lists the notes linking into ``m`` and ``rt(m)`` the notes that
    ``m`` links to. The first entry of either list is the most salient one.
    """

    def __init__(self, links: Iterable[tuple[int, int]] = ()):
        self._in: dict[int, list[int]] = {}
        self._out: dict[int, list[int]] = {}
        self.version = 0
        for a, b in links:
            self.add_link(a, b)

    def add_link(self, a: int, b: int) -> None:
        if a == b:
            raise ScoreError(f"self link on note {a}")
        outs = self._out.setdefault(a, [])
        if b in outs:
            return
        outs.append(b)
        self._in.setdefault(b, []).append(a)
        self.version += 1

    def lt(self, m: int) -> tuple[int, ...]:
        return tuple(self._in.get(m, ()))

    def rt(self, m: int) -> tuple[int, ...]:
        return tuple(self._out.get(m, ()))

    def links(self) -> set[tuple[int, int]]:
        return {(a, b) for a, outs in self._out.items() for b in outs}

    def nodes(self) -> set[int]:
        return set(self._in) | set(self._out)

    def copy(self) -> "VoiceGraph":
        g = VoiceGraph()
        g._in = {k: list(v) for k, v in self._in.items()}
        g._out = {k: list(v) for k, v in self._out.items()}
        g.version = self.version
        return g

    def __len__(self):
        return sum(len(v) for v in self._out.values())

    def depth(self, m: int, _memo: dict | None = None) -> int:
        """Longest forward path length from ``m`` (0 when ``m`` has no out-links)."""
        memo = {} if _memo is None else _memo
        stack = [(m, False)]
        while stack:
            node, expanded = stack.pop()
            if node in memo:
                continue
            outs = self._out.get(node, ())
            if expanded or not outs:
                memo[node] = 1 + max((memo[s] for s in outs), default=-1)
                continue
            stack.append((node, True))
            stack.extend((s, False) for s in outs if s not in memo)
        return memo[m]

    def depth_bfs(self, m: int) -> int:
        """Longest path by topological relaxation over the forward closure."""
        reach = {m}
        queue = deque([m])
        while queue:
            for s in self._out.get(queue.popleft(), ()):
                if s not in reach:
                    reach.add(s)
                    queue.append(s)
        indeg = {n: 0 for n in reach}
        for n in reach:
            for s in self._out.get(n, ()):
                indeg[s] += 1
        dist = {n: 0 for n in reach}
        queue = deque(n for n in reach if indeg[n] == 0)
        while queue:
            n = queue.popleft()
            for s in self._out.get(n, ()):
                dist[s] = max(dist[s], dist[n] + 1)
                indeg[s] -= 1
                if indeg[s] == 0:
                    queue.append(s)
        return max(dist.values())

    @classmethod
    def from_annotation(cls, ann: AnnotationSet, notes: Mapping[int, Note]) -> "VoiceGraph":
        """Build a graph whose in/out lists follow the annotation's salience order.

        Links without an explicit salience entry fall back to descending pitch,
        then ascending id.
        """
        preds: dict[int, list[int]] = {}
        succs: dict[int, list[int]] = {}
        for a, b in ann.links:
            preds.setdefault(b, []).append(a)
            succs.setdefault(a, []).append(b)

        def ordered(key: int, ids: list[int]) -> list[int]:
            rank = {x: i for i, x in enumerate(ann.salience.get(key, ()))}
            return sorted(ids, key=lambda x: (rank.get(x, len(rank)), -notes[x].ps, x))

        g = cls()
        for b in sorted(preds, key=lambda i: (notes[i].on, -notes[i].ps, i)):
            g._in[b] = ordered(b, preds[b])
        for a in succs:
            g._out[a] = ordered(a, succs[a])
        g.version = 1
        return g

    def to_annotation(self) -> AnnotationSet:
        salience = {}
        for m in self.nodes():
            ins, outs = self.lt(m), self.rt(m)
            if len(ins) > 1 or len(outs) > 1:
                salience[m] = ins + outs
        return AnnotationSet(frozenset(self.links()), salience)
