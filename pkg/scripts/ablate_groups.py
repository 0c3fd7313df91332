"""Sweep the number of synthetic variable groups (0 = joint embedding)."""

from _ablate_common import run

from periodnet.ablation import GROUP_SWEEP, Arm

if __name__ == "__main__":
    run([Arm("PAM", "PD", g) for g in GROUP_SWEEP], __doc__, "ablate_groups.csv", T=48)
