"""Counter-addressed random streams.

Every (seed, replica, tag, attempt) quadruple owns a Philox key; inside the
stream each site owns a fixed block of counters.  Drawing a window therefore
returns the same numbers for a site whatever the window bounds are, so
windows can be grown without re-drawing earlier sites.
"""

from __future__ import annotations

import numpy as np

# Philox4x64 emits four 64-bit words per counter increment.
_WORDS_PER_COUNTER = 4
_SITE_OFFSET = 2**40
_TAGS = {"V": 1, "L": 2, "frame": 3, "moment": 4}


def _key(seed, replica_id, tag, attempt):
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(replica_id), _TAGS[tag], int(attempt)))
    return ss.generate_state(2, dtype=np.uint64)


def site_uniforms(seed, replica_id, tag, lo, hi, per_site, attempt=0):
    """Uniforms in the open interval (0, 1), shape ``(hi - lo + 1, per_site)``.

    Row ``k`` depends only on ``(seed, replica_id, tag, attempt, lo + k)``.
    """
    n_sites = hi - lo + 1
    if per_site == 0:
        return np.empty((n_sites, 0))
    if abs(lo) >= _SITE_OFFSET or abs(hi) >= _SITE_OFFSET:
        raise ValueError("site index out of addressable range")
    stride = -(-per_site // _WORDS_PER_COUNTER)
    start = (lo + _SITE_OFFSET) * stride
    counter = np.array([start, 0, 0, 0], dtype=np.uint64)
    bitgen = np.random.Philox(key=_key(seed, replica_id, tag, attempt), counter=counter)
    raw = bitgen.random_raw(n_sites * stride * _WORDS_PER_COUNTER)
    raw = raw.reshape(n_sites, stride * _WORDS_PER_COUNTER)[:, :per_site]
    return ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53


def generator(seed, replica_id, tag="frame", attempt=0):
    """A plain numpy Generator on the stream of ``(seed, replica_id, tag)``."""
    return np.random.Generator(np.random.Philox(key=_key(seed, replica_id, tag, attempt)))
