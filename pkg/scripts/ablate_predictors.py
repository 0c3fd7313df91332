"""Period diffuser versus a plain fully connected horizon map."""

from _ablate_common import run

from periodnet.ablation import Arm

if __name__ == "__main__":
    run([Arm("PAM", p) for p in ("PD", "FCN")], __doc__, "ablate_predictors.csv")
