"""
Auditing cross-validation splits
================================

Split files that draw test folds independently can test some videos twice
and never test others.  The audit counts each key's test multiplicity.
"""

import numpy as np

from mcsf.evalsplit import Fold, SplitSet, audit_splits, generate_splits

keys = [f"video_{i}" for i in range(1, 26)]

# five folds, each sampling 5 test videos independently
rng = np.random.default_rng(1)
folds = []
for _ in range(5):
    test = sorted(rng.choice(keys, size=5, replace=False).tolist())
    folds.append(Fold([k for k in keys if k not in test], test))
print(audit_splits(SplitSet(folds), keys).table())
print()

# the fix: shuffle once and cut into k disjoint test folds
print(audit_splits(generate_splits(keys, k=5, seed=0), keys).table())
