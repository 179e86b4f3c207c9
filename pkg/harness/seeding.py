import hashlib
from typing import Dict, Tuple

import numpy as np

STREAM_NAMES = ('env', 'init', 'replay', 'epsilon', 'probe', 'aux')


def _name_key(path: Tuple[str, ...]) -> int:
    digest = hashlib.sha256('/'.join(path).encode('utf-8')).digest()
    return int.from_bytes(digest[:8], 'little')


class RandomStreams:
    """Named, independent Philox streams split off one 64-bit master seed

    ``get(name)`` always returns the same generator object for a name, so drawing from
    one stream never shifts another. ``child(name)`` scopes a new family of streams, e.g.
    per seed index or per sub-run.
    """

    def __init__(self, master_seed: int, path: Tuple[str, ...] = ()):
        self.master_seed = int(master_seed) & 0xFFFFFFFFFFFFFFFF
        self.path = tuple(path)
        self._streams: Dict[str, np.random.Generator] = {}

    def __repr__(self):
        return f'<RandomStreams seed={self.master_seed} path={"/".join(self.path) or "-"}>'

    def get(self, name: str) -> np.random.Generator:
        if name not in self._streams:
            key = [self.master_seed, _name_key(self.path + (name,))]
            self._streams[name] = np.random.Generator(np.random.Philox(key=key))
        return self._streams[name]

    def child(self, *names) -> 'RandomStreams':
        return RandomStreams(self.master_seed, self.path + tuple(str(n) for n in names))
