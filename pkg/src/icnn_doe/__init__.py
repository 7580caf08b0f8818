"""Dynamic operating envelopes for DERs with input-convex neural network surrogates."""

__version__ = "0.1.0"
