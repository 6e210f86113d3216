"""rowforge: privacy-preserving synthetic tabular data.

A grammar-based fuzzer generates candidate rows, an evolutionary search
bends them toward satisfying static constraints plus a discriminator
(trained to tell original from synthetic rows), and the collected
"good samples" form a synthetic dataset that is evaluated for
resemblance, utility, and privacy.
"""

__version__ = "0.1.0"
