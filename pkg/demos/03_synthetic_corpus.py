#!/usr/bin/env python3
# Pseudo-speech with entities, homophones and rule-based contexts.

import numpy as np

from cotasr.synthdata import (CorpusConfig, Lexicon, corrupt_context, render_speech,
                              synth_corpus)

corpus = synth_corpus(seed=1, n_utterances=5)
for u in corpus:
    print(f"{u.id}  [{u.domain}]  {u.transcript!r}")
    print(f"        context {u.context!r}, entities {u.entities}, frames {u.n_frames}")

# homophone pairs sound the same, so only the context can pick the spelling
a, _, b, _ = Lexicon.default().homophones[0]
fa, fb = render_speech(a, 7, 0.0), render_speech(b, 7, 0.0)
print(f"{a} vs {b}: identical features -> {np.array_equal(fa, fb)}")

homo = synth_corpus(3, 4, CorpusConfig(homophone_fraction=1.0))
for u in homo:
    print("homophone utterance:", u.transcript, "| context:", u.context)

# noisy user context at increasing word error rates
for rate in (0.0, 0.1, 0.25, 0.5):
    print(f"rate {rate:4}: {corrupt_context(homo[0].context, rate, seed=11)}")
