"""Pure-numpy versions of the tabular-LM inner loops.

Same signatures and accumulation order as the compiled ``_kernels`` module;
results agree to rounding (the two use different ``exp`` implementations).
"""

import numpy as np

BACKEND = "python"


def logsumexp_rows(theta):
    m = theta.max(axis=1)
    return m + np.log(np.exp(theta - m[:, None]).sum(axis=1))


def gather_logprobs(theta, lse, ctx, tok):
    return theta[ctx, tok] - lse[ctx]


def accumulate_grad(theta, lse, ctx, tok, weights, grad):
    """grad[ctx[i]] += weights[i] * (onehot(tok[i]) - softmax(theta[ctx[i]])), in index order."""
    probs = np.exp(theta[ctx] - lse[ctx][:, None])
    np.add.at(grad, ctx, -weights[:, None] * probs)
    np.add.at(grad, (ctx, tok), weights)
