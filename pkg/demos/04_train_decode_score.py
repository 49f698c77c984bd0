#!/usr/bin/env python3
# A short training run, then decoding in the three modes and scoring.
# The full-size run (2,000 utterances, 3,000 stage-2 steps) is `cotasr train`;
# this one is cut down to finish in a couple of minutes.

import sys

from cotasr.experiments import evaluate, oracle_contexts
from cotasr.metrics import BiasList, biased_wer
from cotasr.synthdata import CorpusConfig, Lexicon, synth_corpus
from cotasr.training import TrainConfig, moving_average, train_two_stage

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 400
train = synth_corpus(1, 400)
held = synth_corpus(2, 30)
homo = synth_corpus(3, 30, CorpusConfig(homophone_fraction=1.0))

cfg = TrainConfig(stage1_steps=50, stage2_steps=steps, warmup_steps=50)
res = train_two_stage(train, cfg, mode="cot", adapter_kind="ctc",
                      on_step=lambda r: r.step % 100 == 0 and print(f"step {r.step:4d}  loss {r.loss:8.3f}"))
smooth = moving_average(res.losses(stage=2), 50)
print(f"trained in {res.seconds:.0f}s, smoothed loss {smooth[0]:.2f} -> {smooth[-1]:.2f}")

r = evaluate(res.model, held, "self")
print(f"held-out self mode: WER {r.wer:.3f}  EER {r.eer:.3f}  valid {r.format_validity:.2f}  RTF {r.rtf:.3f}")
for rec, u in list(zip(r.records, held))[:3]:
    print("  ref:", u.transcript)
    print("  hyp:", rec.transcript, "   (reasoned context:", rec.context, ")")

for mode, ctx in (("self", None), ("user", oracle_contexts(homo))):
    r = evaluate(res.model, homo, mode, ctx)
    print(f"homophone set, {mode} mode: EER {r.eer:.3f}")

bias = BiasList.of(w for e in Lexicon.default().entity_strings() for w in e.split())
r = evaluate(res.model, held, "self")
b = biased_wer([u.transcript for u in held], [x.transcript for x in r.records], bias)
print(f"WER {b.wer:.3f}  B-WER {b.b_wer}  U-WER {b.u_wer}")
