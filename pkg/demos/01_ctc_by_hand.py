#!/usr/bin/env python3
# CTC with a separate blank head: forward-backward, brute force, and gradients.

import numpy as np

from cotasr.ctc import (CtcPosteriorSequence, ctc_brute_force, ctc_log_likelihood,
                        ctc_loss_and_grad, min_frames)
from cotasr.numerics import grad_check

rng = np.random.default_rng(0)

# 4 frames, 2 labels.  The blank is a sigmoid, the labels a softmax over what's left.
zb = rng.normal(size=4)
znb = rng.normal(size=(4, 2))
post = CtcPosteriorSequence.from_logits(zb, znb)
print("blank probs      ", np.round(post.blank, 3))
print("scaled non-blank \n", np.round(post.scaled_nonblank, 3))
print("rows sum to      ", post.blank + post.scaled_nonblank.sum(axis=1))

# the DP and the path enumeration agree
target = [0, 1]
print("log p(y|x) DP    ", ctc_log_likelihood(post, target))
print("log p(y|x) brute ", ctc_brute_force(post, target))

# repeated labels need a blank in between, so [0, 0] needs 3 frames
print("frames needed for [0, 0]:", min_frames([0, 0]))

# the loss gradient w.r.t. both logit heads, checked by central differences
T, V = znb.shape


def f(x):
    loss, g_b, g_nb = ctc_loss_and_grad(x[:T], x[T:].reshape(T, V), target)
    return loss, np.concatenate([g_b, g_nb.ravel()])


x0 = np.concatenate([zb, znb.ravel()])
print("grad check rel err", grad_check(f, x0))
