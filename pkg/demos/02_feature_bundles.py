"""Synthetic feature bundles: the three planted patterns and the .vft container.

Run:  python3 demos/02_feature_bundles.py
"""

# %%
import tempfile
from pathlib import Path

import numpy as np

from videocap import features

# %% one video per pattern
for pattern in features.PATTERNS:
    bundle, record, info = features.synth_generate(7, T=8, pattern=pattern, return_info=True)
    steps = np.linalg.norm(np.diff(bundle.action_feats, axis=0), axis=1)
    print(f"{pattern:16s} caption={record.captions[0]!r}")
    print(f"{'':16s} |m_t+1 - m_t| = {np.round(steps, 2)}")
    if pattern == "burst":
        print(f"{'':16s} burst frames {info['burst_frames']}")

# %% the container round-trips field for field and byte for byte
with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / f"{bundle.video_id}.vft"
    features.save_bundle(bundle, path)
    again = features.load_bundle(path)
    print("equal after reload:", again == bundle, "| video id from stem:", again.video_id)
    print("tensors:", {k: v.shape for k, v in features.read_tensors(path).items()})

    # %% a corrupted magic is refused with a typed error
    raw = bytearray(path.read_bytes())
    raw[:4] = b"XXXX"
    try:
        features.decode_tensors(bytes(raw))
    except features.BadMagic as exc:
        print("refused:", exc)
