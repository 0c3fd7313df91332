"""Compare the periodic mixer against its sparse variant and full attention."""

from _ablate_common import run

from periodnet.ablation import Arm

if __name__ == "__main__":
    run([Arm(m) for m in ("PAM", "SPAM", "FAM")], __doc__, "ablate_mixers.csv")
