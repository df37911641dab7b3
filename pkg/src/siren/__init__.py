"""siren: software identification and recognition toolkit for HPC process telemetry.

The package is organized as a pipeline:

- :mod:`siren.fuzzyhash`   -- SSDeep-compatible CTPH fuzzy hashing (digest + 0-100 score)
- :mod:`siren.binprofile`  -- executable/process feature extraction (ELF, strings, maps)
- :mod:`siren.collector`   -- the injectable telemetry agent and its collection policy
- :mod:`siren.wireproto`   -- chunked UDP datagram encoding/decoding
- :mod:`siren.receiver`    -- intake service appending datagrams to an embedded store
- :mod:`siren.consolidate` -- reassembly of chunks and per-process record building
- :mod:`siren.analyze`     -- labeling, usage statistics, and similarity search
"""

__version__ = "0.1.0"

from siren.fuzzyhash import FuzzyDigest, ctph_compare, ctph_digest

__all__ = ["FuzzyDigest", "ctph_digest", "ctph_compare", "__version__"]
