"""单位点 Pauli 代数与 Pauli 串乘法。

Pauli 串用 ((site, axis), ...) 的有序元组表示，未列出的位点为恒等。
"""
from src.errors import ConfigurationError

AXIS_CODE = {"X": 1, "Y": 2, "Z": 3}
CODE_AXIS = {1: "X", 2: "Y", 3: "Z"}

# σ_a σ_b = δ_ab 𝟙 + i ε_abc σ_c，记录 (c, i 的幂次)
_SINGLE_PRODUCT = {
    ("X", "Y"): ("Z", 1),
    ("Y", "Z"): ("X", 1),
    ("Z", "X"): ("Y", 1),
    ("Y", "X"): ("Z", 3),
    ("Z", "Y"): ("X", 3),
    ("X", "Z"): ("Y", 3),
}

PauliString = tuple[tuple[int, str], ...]

IDENTITY: PauliString = ()


def pauli_string(*factors) -> PauliString:
    """pauli_string((0, "Z"), (3, "X")) 或 pauli_string("Z0", "X3")"""
    parsed = []
    for factor in factors:
        if isinstance(factor, str):
            parsed.append((int(factor[1:]), factor[0].upper()))
        else:
            parsed.append((int(factor[0]), str(factor[1]).upper()))
    parsed.sort()
    sites = [s for s, _ in parsed]
    if len(sites) != len(set(sites)):
        raise ConfigurationError(f"site listed twice in {parsed}")
    if any(axis not in AXIS_CODE for _, axis in parsed):
        raise ConfigurationError(f"unknown axis in {parsed}")
    return tuple(parsed)


def weight(string: PauliString) -> int:
    return len(string)


def label(string: PauliString) -> str:
    return "I" if not string else "".join(f"{axis}{site}" for site, axis in string)


def multiply(left: PauliString, right: PauliString) -> tuple[int, PauliString]:
    """left·right = i^k · result，返回 (k mod 4, result)"""
    power = 0
    result = []
    i = j = 0
    while i < len(left) and j < len(right):
        site_l, axis_l = left[i]
        site_r, axis_r = right[j]
        if site_l < site_r:
            result.append(left[i])
            i += 1
        elif site_r < site_l:
            result.append(right[j])
            j += 1
        else:
            if axis_l != axis_r:
                axis, k = _SINGLE_PRODUCT[(axis_l, axis_r)]
                result.append((site_l, axis))
                power += k
            i += 1
            j += 1
    result.extend(left[i:])
    result.extend(right[j:])
    return power % 4, tuple(result)


def anticommutes(left: PauliString, right: PauliString) -> bool:
    right_axes = dict(right)
    clashes = sum(1 for site, axis in left if site in right_axes and right_axes[site] != axis)
    return clashes % 2 == 1


def commutator_sign(left: PauliString, right: PauliString) -> tuple[int, PauliString]:
    """若 [left, right] = 2i·s·R ≠ 0，返回 (s, R)；对易时返回 (0, ())"""
    if not anticommutes(left, right):
        return 0, IDENTITY
    power, result = multiply(left, right)
    return (1 if power == 1 else -1), result
