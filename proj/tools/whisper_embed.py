#!/usr/bin/env python3
"""Speech-encoder helper for the reference extractor.

usage: whisper_embed.py <weights> <input.f32> <n_chunks> <samples_per_chunk> <output.f32>

Reads n_chunks little-endian float32 chunks of 16 kHz mono audio and writes one
row per chunk: the final encoder layer of the pre-trained Whisper model,
mean-pooled over the frames that carry audio.
"""
import sys

import numpy as np


def main() -> int:
    if len(sys.argv) != 6:
        print(__doc__, file=sys.stderr)
        return 2
    weights, input_path, n_chunks, samples, output_path = sys.argv[1:]
    n_chunks, samples = int(n_chunks), int(samples)

    import torch
    from transformers import WhisperFeatureExtractor, WhisperModel

    audio = np.fromfile(input_path, dtype="<f4").reshape(n_chunks, samples)
    features = WhisperFeatureExtractor.from_pretrained(weights)
    encoder = WhisperModel.from_pretrained(weights).get_encoder().eval()

    rows = []
    with torch.no_grad():
        for chunk in audio:
            inputs = features(chunk, sampling_rate=16000, return_tensors="pt")
            hidden = encoder(inputs.input_features).last_hidden_state[0]
            # 30 s of audio fills all 1500 frames.
            frames = min(hidden.shape[0], int(np.ceil(len(chunk) / 16000 * 50)))
            rows.append(hidden[:frames].mean(dim=0).numpy())
    out = np.stack(rows).astype("<f4")
    if out.shape[1] != 1280:
        print(f"expected 1280-d states, got {out.shape[1]}", file=sys.stderr)
        return 1
    out.tofile(output_path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
