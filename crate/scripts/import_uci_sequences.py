#!/usr/bin/env python3
"""Import stub: UCI sequence benchmarks -> dtkc dataset container.

Downloads are intentionally out of scope for this repository; this stub
documents the expected conversion so the container can be produced offline.

Targets
-------
Character Trajectories (CT): first 10 characters, dim=3 (x, y, pen tip
force), n=1491, lengths in [109, 198], k=10.
Spoken Arabic Digits (AD): all digits, dim=13 (MFCCs), n=8800, lengths in
[4, 93], k=10.

Expected output directory
-------------------------
meta.json     {"name": ..., "kind": "sequence", "n": ..., "k": 10,
               "dim": ..., "min_len": ..., "max_len": ..., "has_labels": true}
data.f32      n * max_len * dim little-endian float32, row-major, sequences
              zero-padded to max_len
lengths.i32   n little-endian int32 valid lengths
labels.i32    n little-endian int32 class labels in [0, k)

Conversion sketch
-----------------
1. Parse the raw UCI files into per-sequence float arrays of shape
   (length_i, dim) plus integer labels.
2. Compute max_len over the corpus; allocate a zero array of shape
   (n, max_len, dim), copy each sequence into its leading rows. Padding must
   stay exactly zero -- the loader rejects anything else.
3. Cast to float32 and write the three binary files with little-endian byte
   order; write meta.json with the attribute values above.
4. Validate with: `dtkc eval --checkpoint <any> --data <dir>` failing on
   geometry mismatch only, or simply load the directory in a test.

Example skeleton (fill in the UCI parsing for the chosen corpus):

    import json
    import numpy as np

    def write_container(out_dir, sequences, labels, name, k):
        n = len(sequences)
        dim = sequences[0].shape[1]
        lengths = np.array([len(s) for s in sequences], dtype=np.int32)
        max_len = int(lengths.max())
        data = np.zeros((n, max_len, dim), dtype=np.float32)
        for i, s in enumerate(sequences):
            data[i, : len(s)] = s.astype(np.float32)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "meta.json").write_text(json.dumps({
            "name": name, "kind": "sequence", "n": n, "k": k,
            "dim": dim, "min_len": int(lengths.min()),
            "max_len": max_len, "has_labels": True,
        }, indent=2))
        data.tofile(out_dir / "data.f32")
        lengths.tofile(out_dir / "lengths.i32")
        np.asarray(labels, dtype=np.int32).tofile(out_dir / "labels.i32")
"""

if __name__ == "__main__":
    raise SystemExit(__doc__)
