#!/usr/bin/env python3
# The CTC-guided adapter and the tagged target layout.

import numpy as np

from cotasr.adapter import CtcGuidedAdapter
from cotasr.cot import build_target, parse_output
from cotasr.numerics import Rng
from cotasr.vocab import DEFAULT_VOCAB as vocab

V, D = len(vocab), 8
rng = Rng(3)
W_emb = rng.normal((V, D))
ad = CtcGuidedAdapter(d_enc=6, vocab_size=V, d_model=D, rng=rng.child(0))

# force the CTC head to be certain about "k" on every frame, switch the residual off
for _, p in ad.named_parameters():
    p[...] = 0.0
k = vocab.encode("k")[0]
ad.out_proj.l2.params["b"][0, k] = 50.0
E = rng.normal((3, 6))
A, post = ad.forward(E, W_emb)
print("adapted frames equal the embedding of 'k':", np.allclose(A, W_emb[k], atol=1e-12))

# with a flat CTC head most posteriors fall under tau and are zeroed, not renormalized
ad.out_proj.l2.params["b"][...] = 0.0
A, post = ad.forward(E, W_emb)
print("uniform p_nb per label:", post.nonblank[0, 0], " tau:", ad.tau, " |A| =", np.abs(A).max())

# targets: context block, then transcript block
ids = build_target("pharmacy talk on zantac", "i need zantac")
print([vocab.tokens[i] for i in ids[:3]], "...", [vocab.tokens[i] for i in ids[-3:]])
out = parse_output(ids)
print("parsed:", out.context, "|", out.transcript, "| well formed:", out.well_formed)

# a truncated generation is salvaged but flagged
out = parse_output(ids[:-4])
print("truncated:", out.transcript, out.well_formed, out.diagnostics)
