"""Motor-state label codes shared across the package.

Class order is fixed: OFF=0, ON=1, DYS=2. Argmax ties break toward the
lower index everywhere, so this ordering is part of the contract.
"""

OFF = 0
ON = 1
DYS = 2
UNLABELED = -1

STATE_NAMES = ("OFF", "ON", "DYS")
N_STATES = 3

_NAME_TO_CODE = {"OFF": OFF, "ON": ON, "DYS": DYS, "UNLABELED": UNLABELED}


def state_code(name: str) -> int:
    try:
        return _NAME_TO_CODE[name.strip().upper()]
    except KeyError:
        raise ValueError(f"unknown motor state {name!r}") from None


def state_name(code: int) -> str:
    if code == UNLABELED:
        return "UNLABELED"
    return STATE_NAMES[code]
