"""
Off-target zero-shot translation
================================

Train aa=>en and en=>bb only, then ask for aa=>bb directly. Without denoising
the model ignores the <2bb> tag and answers in English. Adding English
denoising makes the tag matter. The budget here is tiny (a few minutes on one
core). ``python -m zsdae reproduce`` runs the longer versions.
"""
import logging

from zsdae.evaluation import language_distribution
from zsdae.experiments import DeskSettings, ExperimentSuite

logging.basicConfig(level=logging.INFO, format="%(message)s")
settings = DeskSettings(max_updates=1500, validate_every=500, corpus={"n_train": 5000})
suite = ExperimentSuite(seed=0, settings=settings)

###############################################################################
# Direct versus pivot
# -------------------

t1 = suite.table1()
print(f"direct aa=>bb BLEU {t1['direct_bleu']:.2f} (on-target {t1['direct_lang_acc']:.2f})")
print(f"pivot  aa=>bb BLEU {t1['pivot_bleu']:.2f} (on-target {t1['pivot_lang_acc']:.2f})")

###############################################################################
# Which language comes out
# ------------------------

for variant in ("two", "two+dn"):
    d = suite.run(variant).test["directions"]["aa-bb"]
    print(variant, language_distribution(d["hypotheses"], suite.bundle.vocab), f"BLEU {d['bleu']:.2f}")
